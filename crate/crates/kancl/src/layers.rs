//! The three feed-forward families under comparison: plain MLP linear
//! layers, spline-based KAN linear layers (EfficientKAN-style single
//! basis-matrix product), and RBF-based layers (FastKAN-style).
//!
//! A KAN linear layer computes, per output unit q and input feature p:
//!
//! ```text
//! y_q = Σ_p  w_b[q,p] · silu(x_p)  +  w_s[q,p] · Σ_i c[q,p,i] · B_i(x_p)
//! ```
//!
//! with the basis matrix evaluated once per input feature and the spline
//! branch realized as one matmul against `(C ⊙ expand(S))ᵀ`.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::spline::{RbfGrid, SplineGrid};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum BasisKind {
    Bspline(SplineGrid),
    Rbf(RbfGrid),
}

impl BasisKind {
    pub fn num_basis(&self) -> usize {
        match self {
            BasisKind::Bspline(g) => g.num_basis(),
            BasisKind::Rbf(g) => g.num_basis(),
        }
    }
}

/// KAN linear layer: per-edge univariate functions as base + spline branch.
#[derive(Clone, Debug)]
pub struct KanLinear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// w_b, `[out, in]`
    pub base_weight: Tensor,
    /// c_i per edge, `[out, in, nb]`
    pub spline_weight: Tensor,
    /// w_s, `[out, in]`
    pub spline_scaler: Tensor,
    pub basis: BasisKind,
}

impl KanLinear {
    /// Spline-basis variant (EfficientKAN-style).
    pub fn init(in_dim: usize, out_dim: usize, grid: SplineGrid, rng: &mut ChaCha8Rng) -> Result<KanLinear> {
        Self::init_with(in_dim, out_dim, BasisKind::Bspline(grid), rng)
    }

    /// RBF variant (FastKAN-style); same parameter layout, Gaussian basis.
    pub fn init_rbf(in_dim: usize, out_dim: usize, grid: RbfGrid, rng: &mut ChaCha8Rng) -> Result<KanLinear> {
        Self::init_with(in_dim, out_dim, BasisKind::Rbf(grid), rng)
    }

    pub fn init_with(
        in_dim: usize,
        out_dim: usize,
        basis: BasisKind,
        rng: &mut ChaCha8Rng,
    ) -> Result<KanLinear> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Param("layer dims must be positive".into()));
        }
        let nb = basis.num_basis();
        let bound = 1.0 / (in_dim as f32).sqrt();
        let base: Vec<f32> = (0..out_dim * in_dim)
            .map(|_| rng::uniform_sym(rng, bound))
            .collect();
        // small noise keeps the spline branch near zero at init
        let coef: Vec<f32> = (0..out_dim * in_dim * nb)
            .map(|_| 0.1 * bound * rng::normal(rng))
            .collect();
        Ok(KanLinear {
            in_dim,
            out_dim,
            base_weight: Tensor::new(vec![out_dim, in_dim], base)?,
            spline_weight: Tensor::new(vec![out_dim, in_dim, nb], coef)?,
            spline_scaler: Tensor::full(vec![out_dim, in_dim], 1.0),
            basis,
        })
    }

    pub fn num_basis(&self) -> usize {
        self.basis.num_basis()
    }

    /// Registers this layer's parameters on the graph (appending their vars
    /// to `bound` in `visit_params` order) and precomputes the input-free
    /// part of the layer: W_bᵀ and the combined spline weight
    /// `(C ⊙ expand(S))ᵀ`. The result can drive many `forward_bound` calls
    /// on the same graph.
    pub fn bind(&self, g: &mut Graph, bound: &mut Vec<Var>) -> Result<KanVars> {
        let wb = g.param(self.base_weight.clone());
        let c = g.param(self.spline_weight.clone());
        let s = g.param(self.spline_scaler.clone());
        bound.extend([wb, c, s]);
        let nb = self.num_basis();
        let wbt = g.transpose(wb)?;
        let c2 = g.reshape(c, vec![self.out_dim, self.in_dim * nb])?;
        let sexp = g.expand_inner(s, nb)?;
        let w = g.mul(c2, sexp)?;
        let wt = g.transpose(w)?;
        Ok(KanVars { wbt, wt })
    }

    /// y = silu(x)·W_bᵀ + basis(x)·(C ⊙ expand(S))ᵀ against already-bound
    /// parameters.
    pub fn forward_bound(&self, g: &mut Graph, x: Var, vars: &KanVars) -> Result<Var> {
        let (batch, in_dim) = g.value(x).dims2();
        if in_dim != self.in_dim {
            return Err(Error::Shape {
                op: "kan_linear",
                lhs: g.value(x).shape().to_vec(),
                rhs: vec![self.out_dim, self.in_dim],
            });
        }
        let nb = self.num_basis();
        let sx = g.silu(x)?;
        let base = g.matmul(sx, vars.wbt)?;
        let basis = match &self.basis {
            BasisKind::Bspline(grid) => g.bspline_basis(x, grid)?,
            BasisKind::Rbf(grid) => g.rbf_basis(x, grid)?,
        };
        let basis2 = g.reshape(basis, vec![batch, self.in_dim * nb])?;
        let spline = g.matmul(basis2, vars.wt)?;
        g.add(base, spline)
    }

    /// One-shot bind + forward.
    pub fn forward(&self, g: &mut Graph, x: Var, bound: &mut Vec<Var>) -> Result<Var> {
        let vars = self.bind(g, bound)?;
        self.forward_bound(g, x, &vars)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.base_weight);
        f(&self.spline_weight);
        f(&self.spline_scaler);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.base_weight);
        f(&mut self.spline_weight);
        f(&mut self.spline_scaler);
    }
}

/// Graph nodes produced by [`KanLinear::bind`].
#[derive(Clone, Copy, Debug)]
pub struct KanVars {
    wbt: Var,
    wt: Var,
}

/// Graph nodes produced by [`MlpLinear::bind`].
#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    wt: Var,
    b: Var,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Silu,
}

/// Fully connected layer y = act(x·Wᵀ + b).
#[derive(Clone, Debug)]
pub struct MlpLinear {
    pub weight: Tensor,
    pub bias: Tensor,
    pub act: Activation,
}

impl MlpLinear {
    pub fn init(in_dim: usize, out_dim: usize, act: Activation, rng: &mut ChaCha8Rng) -> Result<MlpLinear> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::Param("layer dims must be positive".into()));
        }
        let bound = 1.0 / (in_dim as f32).sqrt();
        let w: Vec<f32> = (0..out_dim * in_dim)
            .map(|_| rng::uniform_sym(rng, bound))
            .collect();
        let b: Vec<f32> = (0..out_dim).map(|_| rng::uniform_sym(rng, bound)).collect();
        Ok(MlpLinear {
            weight: Tensor::new(vec![out_dim, in_dim], w)?,
            bias: Tensor::new(vec![out_dim], b)?,
            act,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn bind(&self, g: &mut Graph, bound: &mut Vec<Var>) -> Result<MlpVars> {
        let w = g.param(self.weight.clone());
        let b = g.param(self.bias.clone());
        bound.extend([w, b]);
        let wt = g.transpose(w)?;
        Ok(MlpVars { wt, b })
    }

    pub fn forward_bound(&self, g: &mut Graph, x: Var, vars: &MlpVars) -> Result<Var> {
        let (_, in_dim) = g.value(x).dims2();
        if in_dim != self.in_dim() {
            return Err(Error::Shape {
                op: "mlp_linear",
                lhs: g.value(x).shape().to_vec(),
                rhs: self.weight.shape().to_vec(),
            });
        }
        let y = g.matmul(x, vars.wt)?;
        let y = g.add_row(y, vars.b)?;
        match self.act {
            Activation::Identity => Ok(y),
            Activation::Silu => g.silu(y),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, bound: &mut Vec<Var>) -> Result<Var> {
        let vars = self.bind(g, bound)?;
        self.forward_bound(g, x, &vars)
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.weight);
        f(&self.bias);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// A stack of same-family layers: the flat classifiers compared at base
/// level and in the split-task runs.
#[derive(Clone, Debug)]
pub enum FlatNet {
    Mlp(Vec<MlpLinear>),
    Kan(Vec<KanLinear>),
}

impl FlatNet {
    /// silu between hidden layers, identity on the output layer.
    pub fn mlp(dims: &[usize], seed: u64) -> Result<FlatNet> {
        if dims.len() < 2 {
            return Err(Error::Param("mlp needs at least in/out dims".into()));
        }
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let act = if i + 2 == dims.len() { Activation::Identity } else { Activation::Silu };
            let mut r = rng::stream(seed, rng::INIT_BASE + i as u64);
            layers.push(MlpLinear::init(dims[i], dims[i + 1], act, &mut r)?);
        }
        Ok(FlatNet::Mlp(layers))
    }

    pub fn kan(dims: &[usize], grid: &SplineGrid, seed: u64) -> Result<FlatNet> {
        if dims.len() < 2 {
            return Err(Error::Param("kan needs at least in/out dims".into()));
        }
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let mut r = rng::stream(seed, rng::INIT_BASE + i as u64);
            layers.push(KanLinear::init(dims[i], dims[i + 1], grid.clone(), &mut r)?);
        }
        Ok(FlatNet::Kan(layers))
    }

    pub fn fastkan(dims: &[usize], grid: &RbfGrid, seed: u64) -> Result<FlatNet> {
        if dims.len() < 2 {
            return Err(Error::Param("fastkan needs at least in/out dims".into()));
        }
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let mut r = rng::stream(seed, rng::INIT_BASE + i as u64);
            layers.push(KanLinear::init_rbf(dims[i], dims[i + 1], grid.clone(), &mut r)?);
        }
        Ok(FlatNet::Kan(layers))
    }

    pub fn forward(&self, g: &mut Graph, x: Var, bound: &mut Vec<Var>) -> Result<Var> {
        match self {
            FlatNet::Mlp(layers) => {
                let mut h = x;
                for l in layers {
                    h = l.forward(g, h, bound)?;
                }
                Ok(h)
            }
            FlatNet::Kan(layers) => {
                let mut h = x;
                for l in layers {
                    h = l.forward(g, h, bound)?;
                }
                Ok(h)
            }
        }
    }

    pub fn visit_params(&self, f: &mut dyn FnMut(&Tensor)) {
        match self {
            FlatNet::Mlp(ls) => ls.iter().for_each(|l| l.visit_params(f)),
            FlatNet::Kan(ls) => ls.iter().for_each(|l| l.visit_params(f)),
        }
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        match self {
            FlatNet::Mlp(ls) => ls.iter_mut().for_each(|l| l.visit_params_mut(f)),
            FlatNet::Kan(ls) => ls.iter_mut().for_each(|l| l.visit_params_mut(f)),
        }
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |t| n += t.numel());
        n
    }

    /// Named tensors in `visit_params` order, for serialization.
    pub fn state_dict(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        match self {
            FlatNet::Mlp(ls) => {
                for (i, l) in ls.iter().enumerate() {
                    out.push((format!("layer{i}.weight"), l.weight.clone()));
                    out.push((format!("layer{i}.bias"), l.bias.clone()));
                }
            }
            FlatNet::Kan(ls) => {
                for (i, l) in ls.iter().enumerate() {
                    out.push((format!("layer{i}.base_weight"), l.base_weight.clone()));
                    out.push((format!("layer{i}.spline_weight"), l.spline_weight.clone()));
                    out.push((format!("layer{i}.spline_scaler"), l.spline_scaler.clone()));
                }
            }
        }
        out
    }

    pub fn load_state_dict(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        let want = self.state_dict();
        if want.len() != entries.len() {
            return Err(Error::Param(format!(
                "state dict has {} tensors, model wants {}",
                entries.len(),
                want.len()
            )));
        }
        for ((wname, wt), (name, t)) in want.iter().zip(entries) {
            if wname != name || wt.shape() != t.shape() {
                return Err(Error::Param(format!(
                    "state dict entry {name} {:?} does not match model entry {wname} {:?}",
                    t.shape(),
                    wt.shape()
                )));
            }
        }
        let mut it = entries.iter();
        self.visit_params_mut(&mut |p| {
            *p = it.next().unwrap().1.clone();
        });
        Ok(())
    }
}
