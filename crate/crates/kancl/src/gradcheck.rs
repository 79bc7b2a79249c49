//! Central-difference gradient verification for ops, layers, and the full
//! transformer.
//!
//! Losses are f32 while the comparison runs in f64, so the checker divides
//! by the *actual* f64 difference between the two perturbed f32 values
//! rather than by `2·step`, and treats absolute differences below a small
//! floor as exact (tiny true gradients drown in f32 rounding otherwise).

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::FlatNet;
use crate::optim::Trainable;
use crate::rng;
use crate::spline::{RbfGrid, SplineGrid};
use crate::tensor::Tensor;
use crate::vit::{FfnKind, KanGridCfg, Vit, VitConfig};

/// Differences below this are indistinguishable from f32 forward noise
/// for a single-op loss (observed noise is a few 1e-5 across seeds; a real
/// op bug moves gradients of order 0.1 by orders of magnitude more).
const ABS_FLOOR: f64 = 1e-4;
/// Floor for whole-model checks: a longer f32 forward accumulates more
/// rounding, and steep bases (narrow RBFs) add O(step^2) truncation, so a
/// few 1e-5 of absolute disagreement on a near-zero gradient means nothing
/// there. Gradients that matter sit orders of magnitude above this.
const MODEL_ABS_FLOOR: f64 = 2e-4;

#[derive(Clone, Debug)]
pub struct CheckReport {
    pub name: String,
    /// Worst relative error across all checked elements.
    pub worst: f64,
    pub tol: f64,
    pub elements: usize,
    /// How many elements individually exceed the tolerance.
    pub over_tol: usize,
    /// The (analytic, numeric) pair behind `worst`; zeros when all clear.
    pub worst_pair: (f64, f64),
    /// Largest absolute disagreement, ignoring the noise floor.
    pub worst_abs: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.worst <= self.tol
    }
}

fn grad_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff <= floor {
        0.0
    } else {
        diff / analytic.abs().max(numeric.abs())
    }
}

/// Element-wise comparison of analytic vs numeric gradients, reporting the
/// worst relative error. Public so tests can feed it deliberately broken
/// gradients and watch it object.
pub fn compare_grads(
    name: &str,
    tol: f64,
    floor: f64,
    analytic: &[Vec<f64>],
    numeric: &[Vec<f64>],
) -> CheckReport {
    let mut worst = 0.0f64;
    let mut elements = 0;
    let mut over_tol = 0;
    let mut worst_pair = (0.0, 0.0);
    let mut worst_abs = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric) {
        assert_eq!(a.len(), n.len(), "{name}: gradient length mismatch");
        for (&av, &nv) in a.iter().zip(n) {
            let e = grad_error(av, nv, floor);
            if e > worst {
                worst = e;
                worst_pair = (av, nv);
            }
            if e > tol {
                over_tol += 1;
            }
            worst_abs = worst_abs.max((av - nv).abs());
            elements += 1;
        }
    }
    CheckReport { name: name.to_string(), worst, tol, elements, over_tol, worst_pair, worst_abs }
}

/// Checks d(loss)/d(input) for every element of every input against central
/// differences. `build` must be a pure function of its vars.
pub fn check_fn<F>(name: &str, inputs: &[Tensor], tol: f64, step: f64, build: F) -> Result<CheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;
    let mut analytic = Vec::with_capacity(inputs.len());
    for (i, &v) in vars.iter().enumerate() {
        let t = g
            .grad(v)
            .ok_or_else(|| Error::Param(format!("{name}: input {i} received no gradient")))?;
        analytic.push(t.data().iter().map(|&x| x as f64).collect::<Vec<f64>>());
    }

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.input(t.clone())).collect();
        let loss = build(&mut g, &vars)?;
        Ok(g.value(loss).item()? as f64)
    };

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut numeric = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut grads = Vec::with_capacity(inputs[i].numel());
        for e in 0..inputs[i].numel() {
            let orig = inputs[i].data()[e];
            let up = (orig as f64 + step) as f32;
            let dn = (orig as f64 - step) as f32;
            work[i].data_mut()[e] = up;
            let lp = eval(&work)?;
            work[i].data_mut()[e] = dn;
            let lm = eval(&work)?;
            work[i].data_mut()[e] = orig;
            let h = up as f64 - dn as f64;
            grads.push(if h == 0.0 { 0.0 } else { (lp - lm) / h });
        }
        numeric.push(grads);
    }
    Ok(compare_grads(name, tol, ABS_FLOOR, &analytic, &numeric))
}

fn get_elem<M: Trainable>(m: &M, p: usize, e: usize) -> f32 {
    let mut idx = 0;
    let mut out = 0.0;
    m.visit_params(&mut |t| {
        if idx == p {
            out = t.data()[e];
        }
        idx += 1;
    });
    out
}

fn set_elem<M: Trainable>(m: &mut M, p: usize, e: usize, v: f32) {
    let mut idx = 0;
    m.visit_params_mut(&mut |t| {
        if idx == p {
            t.data_mut()[e] = v;
        }
        idx += 1;
    });
}

/// Like [`check_fn`] but perturbs a model's own parameters, pairing
/// analytic gradients with tensors positionally. A mismatch between the
/// order `loss_fn` binds parameters and the order `visit_params` walks them
/// shows up here as a failed check.
pub fn check_model<M, F>(
    name: &str,
    model: &mut M,
    tol: f64,
    step: f64,
    floor: f64,
    loss_fn: F,
) -> Result<CheckReport>
where
    M: Trainable,
    F: Fn(&mut Graph, &M) -> Result<(Var, Vec<Var>)>,
{
    let mut g = Graph::new();
    let (loss, bound) = loss_fn(&mut g, model)?;
    g.backward(loss)?;
    let mut analytic = Vec::with_capacity(bound.len());
    for (i, &v) in bound.iter().enumerate() {
        let t = g
            .grad(v)
            .ok_or_else(|| Error::Param(format!("{name}: parameter {i} received no gradient")))?;
        analytic.push(t.data().iter().map(|&x| x as f64).collect::<Vec<f64>>());
    }
    let mut sizes = Vec::new();
    model.visit_params(&mut |t| sizes.push(t.numel()));
    if sizes.len() != bound.len() {
        return Err(Error::Param(format!(
            "{name}: forward bound {} tensors but visit_params walks {}",
            bound.len(),
            sizes.len()
        )));
    }

    let eval = |m: &M| -> Result<f64> {
        let mut g = Graph::new();
        let (loss, _) = loss_fn(&mut g, m)?;
        Ok(g.value(loss).item()? as f64)
    };

    let mut numeric: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    for p in 0..sizes.len() {
        for e in 0..sizes[p] {
            let orig = get_elem(model, p, e);
            let up = (orig as f64 + step) as f32;
            let dn = (orig as f64 - step) as f32;
            set_elem(model, p, e, up);
            let lp = eval(model)?;
            set_elem(model, p, e, dn);
            let lm = eval(model)?;
            set_elem(model, p, e, orig);
            let h = up as f64 - dn as f64;
            numeric[p][e] = if h == 0.0 { 0.0 } else { (lp - lm) / h };
        }
    }
    Ok(compare_grads(name, tol, floor, &analytic, &numeric))
}

fn rand_tensor(shape: Vec<usize>, bound: f32, r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng::uniform_sym(r, bound)).collect()).unwrap()
}

/// Fixed random weights turn a matrix output into a scalar that exercises
/// every element's gradient.
fn weights_like(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng::uniform_sym(r, 1.0)).collect()).unwrap()
}

fn wsum(g: &mut Graph, y: Var, w: &Tensor) -> Result<Var> {
    let wv = g.input(w.clone());
    let p = g.mul(y, wv)?;
    g.sum(p)
}

const OP_TOL: f64 = 1e-3;
const OP_STEP: f64 = 3e-3;
// Whole networks run the finite difference through an f32 forward whose
// rounding (~1e-7 on a loss of order 1) is a few e-3 relative on small
// gradient elements, so composed checks get a looser bar than single ops.
// Real chain-rule or parameter-order bugs miss by orders of magnitude.
const NET_TOL: f64 = 1e-2;
// The transformer needs a smaller step than the flat nets: cls/pos start
// at scale 0.02, and layer-norm of a token row with std ~0.03 turns a 1e-2
// one-coordinate perturbation into pure O(step^2) truncation error. A
// 3e-4 step keeps the difference quotient in the linear regime; the price
// is more rounding noise, absorbed by a wider absolute floor. A dropped
// gradient path still misses by the gradient's own magnitude, far above
// the floor.
const VIT_TOL: f64 = 1e-2;
const VIT_STEP: f64 = 3e-4;
const VIT_ABS_FLOOR: f64 = 5e-3;

/// Finite-difference checks over every differentiable op, each layer
/// family, and the tiny ViT in all three FFN configurations.
pub fn full_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let mut r = rng::stream(seed, 7);
    let mut out = Vec::new();

    {
        let a = rand_tensor(vec![4, 3], 1.0, &mut r);
        let b = rand_tensor(vec![3, 5], 1.0, &mut r);
        let w = weights_like(&[4, 5], &mut r);
        out.push(check_fn("matmul", &[a, b], OP_TOL, OP_STEP, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            wsum(g, y, &w)
        })?);
    }
    {
        let a = rand_tensor(vec![3, 4], 1.0, &mut r);
        let b = rand_tensor(vec![3, 4], 1.0, &mut r);
        let c = rand_tensor(vec![3, 4], 1.0, &mut r);
        let w = weights_like(&[3, 4], &mut r);
        out.push(check_fn("elementwise", &[a, b, c], OP_TOL, OP_STEP, |g, v| {
            let s = g.add(v[0], v[1])?;
            let d = g.sub(v[0], v[2])?;
            let m = g.mul(s, d)?;
            let y = g.scale(m, 1.3)?;
            wsum(g, y, &w)
        })?);
    }
    {
        let x = rand_tensor(vec![3, 4], 1.0, &mut r);
        let b = rand_tensor(vec![4], 1.0, &mut r);
        let w = weights_like(&[3, 4], &mut r);
        out.push(check_fn("add_row", &[x, b], OP_TOL, OP_STEP, |g, v| {
            let y = g.add_row(v[0], v[1])?;
            wsum(g, y, &w)
        })?);
    }
    {
        let x = rand_tensor(vec![2, 3], 1.0, &mut r);
        let w = weights_like(&[2, 3], &mut r);
        out.push(check_fn("exp", &[x], OP_TOL, OP_STEP, |g, v| {
            let y = g.exp(v[0])?;
            wsum(g, y, &w)
        })?);
    }
    {
        let base = rand_tensor(vec![2, 3], 1.0, &mut r);
        let x = Tensor::new(vec![2, 3], base.data().iter().map(|v| 1.5 + v).collect()).unwrap();
        let w = weights_like(&[2, 3], &mut r);
        out.push(check_fn("ln", &[x], OP_TOL, OP_STEP, |g, v| {
            let y = g.ln(v[0])?;
            wsum(g, y, &w)
        })?);
    }
    {
        let x = rand_tensor(vec![3, 3], 2.0, &mut r);
        let w = weights_like(&[3, 3], &mut r);
        out.push(check_fn("silu", &[x], OP_TOL, OP_STEP, |g, v| {
            let y = g.silu(v[0])?;
            wsum(g, y, &w)
        })?);
    }
    {
        let x = rand_tensor(vec![3, 4], 2.0, &mut r);
        let w = weights_like(&[3, 4], &mut r);
        out.push(check_fn("softmax", &[x], OP_TOL, OP_STEP, |g, v| {
            let y = g.softmax(v[0])?;
            wsum(g, y, &w)
        })?);
    }
    {
        let x = rand_tensor(vec![3, 5], 1.0, &mut r);
        let gamma = Tensor::new(vec![5], (0..5).map(|_| 1.0 + rng::uniform_sym(&mut r, 0.3)).collect()).unwrap();
        let beta = rand_tensor(vec![5], 0.3, &mut r);
        let w = weights_like(&[3, 5], &mut r);
        out.push(check_fn("layer_norm", &[x, gamma, beta], OP_TOL, OP_STEP, |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
            wsum(g, y, &w)
        })?);
    }
    {
        let x = rand_tensor(vec![2, 4], 1.0, &mut r);
        out.push(check_fn("sum_mean", &[x], OP_TOL, OP_STEP, |g, v| {
            let s = g.sum(v[0])?;
            let m = g.mean(v[0])?;
            g.add(s, m)
        })?);
    }
    {
        let x = rand_tensor(vec![3, 4], 1.0, &mut r);
        let w1 = weights_like(&[2, 6], &mut r);
        let w2 = weights_like(&[4, 2], &mut r);
        let w3 = weights_like(&[3, 4], &mut r);
        out.push(check_fn("reshape_transpose_slice_concat", &[x], OP_TOL, OP_STEP, |g, v| {
            let t = g.transpose(v[0])?; // [4,3]
            let rsh = g.reshape(t, vec![2, 6])?;
            let a = wsum(g, rsh, &w1)?;
            let s1 = g.slice_rows(v[0], 1, 2)?; // [2,4]
            let s2 = g.slice_cols(s1, 1, 1)?; // [2,1]
            let cc = g.concat_cols(&[s2, s2])?; // [2,2]
            let cr = g.concat_rows(&[cc, cc])?; // [4,2]
            let b = wsum(g, cr, &w2)?;
            let c = wsum(g, v[0], &w3)?;
            let ab = g.add(a, b)?;
            g.add(ab, c)
        })?);
    }
    {
        let x = rand_tensor(vec![2, 3], 1.0, &mut r);
        let w = weights_like(&[2, 12], &mut r);
        out.push(check_fn("expand_inner", &[x], OP_TOL, OP_STEP, |g, v| {
            let y = g.expand_inner(v[0], 4)?;
            wsum(g, y, &w)
        })?);
    }
    {
        let logits = rand_tensor(vec![4, 5], 2.0, &mut r);
        let labels = vec![1usize, 4, 0, 2];
        out.push(check_fn("cross_entropy", &[logits], 5e-4, 1e-2, move |g, v| {
            g.cross_entropy(v[0], &labels)
        })?);
    }
    {
        let grid = SplineGrid::make(-1.0, 1.0, 5, 3)?;
        let x = rand_tensor(vec![2, 3], 0.9, &mut r);
        let w = weights_like(&[6, grid.num_basis()], &mut r);
        out.push(check_fn("bspline_basis", &[x], OP_TOL, 1e-3, move |g, v| {
            let y = g.bspline_basis(v[0], &grid)?;
            wsum(g, y, &w)
        })?);
    }
    {
        let grid = RbfGrid::make(-1.0, 1.0, 8, None)?;
        let x = rand_tensor(vec![2, 3], 0.9, &mut r);
        let w = weights_like(&[6, grid.num_basis()], &mut r);
        out.push(check_fn("rbf_basis", &[x], OP_TOL, 1e-3, move |g, v| {
            let y = g.rbf_basis(v[0], &grid)?;
            wsum(g, y, &w)
        })?);
    }

    // layer families end to end: cross-entropy over a small batch
    let x = rand_tensor(vec![3, 4], 1.0, &mut r);
    let labels = vec![0usize, 2, 1];
    {
        let mut net = FlatNet::mlp(&[4, 5, 3], seed)?;
        let (x, labels) = (x.clone(), labels.clone());
        out.push(check_model("mlp_net", &mut net, NET_TOL, OP_STEP, MODEL_ABS_FLOOR, move |g, m: &FlatNet| {
            let xv = g.input(x.clone());
            let mut bound = Vec::new();
            let y = m.forward(g, xv, &mut bound)?;
            let l = g.cross_entropy(y, &labels)?;
            Ok((l, bound))
        })?);
    }
    {
        let grid = SplineGrid::make(-1.0, 1.0, 5, 3)?;
        let mut net = FlatNet::kan(&[4, 3], &grid, seed)?;
        let (x, labels) = (x.clone(), labels.clone());
        out.push(check_model("kan_net", &mut net, NET_TOL, OP_STEP, MODEL_ABS_FLOOR, move |g, m: &FlatNet| {
            let xv = g.input(x.clone());
            let mut bound = Vec::new();
            let y = m.forward(g, xv, &mut bound)?;
            let l = g.cross_entropy(y, &labels)?;
            Ok((l, bound))
        })?);
    }
    {
        let grid = RbfGrid::make(-1.0, 1.0, 8, None)?;
        let mut net = FlatNet::fastkan(&[4, 3], &grid, seed)?;
        let (x, labels) = (x.clone(), labels.clone());
        out.push(check_model("fastkan_net", &mut net, NET_TOL, OP_STEP, MODEL_ABS_FLOOR, move |g, m: &FlatNet| {
            let xv = g.input(x.clone());
            let mut bound = Vec::new();
            let y = m.forward(g, xv, &mut bound)?;
            let l = g.cross_entropy(y, &labels)?;
            Ok((l, bound))
        })?);
    }

    // the whole transformer, one config per ffn kind
    for kind in [FfnKind::Mlp, FfnKind::Kan, FfnKind::FastKan] {
        let cfg = VitConfig {
            channels: 1,
            height: 8,
            width: 8,
            patch_size: 4,
            embed_dim: 8,
            depth: 1,
            heads: 2,
            ffn_hidden: 12,
            num_classes: 3,
            ffn_kind: kind,
            dropout: 0.0,
            kan_grid: KanGridCfg::default(),
        };
        let mut vit = Vit::init(cfg, seed)?;
        let imgs = rand_tensor(vec![2, 64], 1.0, &mut r);
        let labels = vec![0usize, 2];
        let name = format!("vit_{}", kind.name());
        out.push(check_model(&name, &mut vit, VIT_TOL, VIT_STEP, VIT_ABS_FLOOR, move |g, m: &Vit| {
            let mut bound = Vec::new();
            let y = m.forward(g, &imgs, &mut bound, false, None)?;
            let l = g.cross_entropy(y, &labels)?;
            Ok((l, bound))
        })?);
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_everywhere() {
        let reports = full_suite(0).unwrap();
        assert!(reports.len() >= 18);
        for rep in &reports {
            assert!(
                rep.passed(),
                "{}: worst rel err {:.3e} (analytic {:.4e} vs numeric {:.4e}), {} of {} elements over tol {:.0e}",
                rep.name,
                rep.worst,
                rep.worst_pair.0,
                rep.worst_pair.1,
                rep.over_tol,
                rep.elements,
                rep.tol
            );
        }
    }

    #[test]
    fn checker_flags_sign_flipped_gradients() {
        // analytic silu gradients with the sign flipped must trip the
        // comparator: this guards the checker itself.
        let x = rand_tensor(vec![3, 3], 2.0, &mut rng::stream(1, 2));
        let w = weights_like(&[3, 3], &mut rng::stream(1, 3));
        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let y = g.silu(xv).unwrap();
        let loss = wsum(&mut g, y, &w).unwrap();
        g.backward(loss).unwrap();
        let grad = g.grad(xv).unwrap();
        let flipped: Vec<f64> = grad.data().iter().map(|&v| -v as f64).collect();
        let honest: Vec<f64> = grad.data().iter().map(|&v| v as f64).collect();

        let rep = compare_grads("silu_flipped", 1e-3, ABS_FLOOR, &[flipped], &[honest.clone()]);
        assert!(!rep.passed(), "flipped sign must fail, got worst {}", rep.worst);
        assert_eq!(rep.name, "silu_flipped");

        let rep = compare_grads("silu_honest", 1e-3, ABS_FLOOR, &[honest.clone()], &[honest]);
        assert!(rep.passed());
    }

    #[test]
    fn checker_flags_magnitude_errors_but_forgives_sub_floor_noise() {
        let a = vec![vec![0.5f64, -0.8, 0.0]];
        let off = vec![vec![0.55f64, -0.8, 0.0]];
        assert!(!compare_grads("mag", 1e-3, ABS_FLOOR, &a, &off).passed());

        let noisy = vec![vec![0.5 + 4e-6, -0.8 - 4e-6, 4e-6]];
        assert!(compare_grads("noise", 1e-3, ABS_FLOOR, &a, &noisy).passed());
    }

    #[test]
    fn missing_gradient_is_reported_not_zeroed() {
        // loss ignores the second input entirely
        let a = rand_tensor(vec![2, 2], 1.0, &mut rng::stream(2, 2));
        let b = rand_tensor(vec![2, 2], 1.0, &mut rng::stream(2, 3));
        let err = check_fn("dead_input", &[a, b], 1e-3, 1e-3, |g, v| g.sum(v[0])).unwrap_err();
        assert!(err.to_string().contains("no gradient"), "{err}");
    }
}
