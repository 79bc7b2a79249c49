//! Adam with bias correction, optional global-norm gradient clipping, and
//! small glue for walking a model's parameters in a stable order.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Anything with a stable, ordered parameter list. The order must match the
/// order in which `forward` binds parameters onto the graph; the optimizer
/// pairs gradients with parameters positionally.
pub trait Trainable {
    fn visit_params(&self, f: &mut dyn FnMut(&Tensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |t| n += t.numel());
        n
    }
}

impl Trainable for crate::layers::FlatNet {
    fn visit_params(&self, f: &mut dyn FnMut(&Tensor)) {
        crate::layers::FlatNet::visit_params(self, f)
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        crate::layers::FlatNet::visit_params_mut(self, f)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamCfg {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    /// Maximum global gradient norm; rescales the whole gradient when exceeded.
    pub grad_clip: Option<f32>,
}

impl Default for AdamCfg {
    fn default() -> Self {
        AdamCfg { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, grad_clip: None }
    }
}

/// Decoupled first/second moment state per parameter tensor, keyed by
/// position in the visit order.
pub struct Adam {
    pub cfg: AdamCfg,
    t: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(cfg: AdamCfg) -> Result<Adam> {
        if !(cfg.lr > 0.0) || !(cfg.eps > 0.0) {
            return Err(Error::Param("adam lr and eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(Error::Param("adam betas must lie in [0,1)".into()));
        }
        Ok(Adam { cfg, t: 0, m: Vec::new(), v: Vec::new() })
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update over all parameters. `grads` must align with the model's
    /// visit order; a `None` gradient is an error (every parameter is
    /// expected to participate in the loss).
    pub fn step<M: Trainable>(&mut self, model: &mut M, grads: &[Option<Tensor>]) -> Result<()> {
        let mut n_params = 0;
        model.visit_params(&mut |_| n_params += 1);
        if grads.len() != n_params {
            return Err(Error::Param(format!(
                "got {} gradients for {} parameters",
                grads.len(),
                n_params
            )));
        }
        for (i, gopt) in grads.iter().enumerate() {
            if gopt.is_none() {
                return Err(Error::Param(format!("missing gradient for parameter {i}")));
            }
        }

        let mut scale = 1.0f64;
        if let Some(clip) = self.cfg.grad_clip {
            let mut sq = 0.0f64;
            for g in grads.iter().flatten() {
                for &v in g.data() {
                    sq += (v as f64) * (v as f64);
                }
            }
            let norm = sq.sqrt();
            if norm > clip as f64 {
                scale = clip as f64 / norm;
            }
        }

        while self.m.len() < n_params {
            self.m.push(Vec::new());
            self.v.push(Vec::new());
        }
        self.t += 1;
        let b1 = self.cfg.beta1 as f64;
        let b2 = self.cfg.beta2 as f64;
        let mc = 1.0 - b1.powi(self.t as i32);
        let vc = 1.0 - b2.powi(self.t as i32);
        let lr = self.cfg.lr as f64;
        let eps = self.cfg.eps as f64;

        let mut idx = 0;
        let mut status = Ok(());
        let m = &mut self.m;
        let v = &mut self.v;
        model.visit_params_mut(&mut |p: &mut Tensor| {
            if status.is_err() {
                return;
            }
            let g = grads[idx].as_ref().unwrap();
            if g.shape() != p.shape() {
                status = Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
                return;
            }
            if m[idx].is_empty() {
                m[idx] = vec![0.0; p.numel()];
                v[idx] = vec![0.0; p.numel()];
            }
            let data = p.data_mut();
            for (e, (&ge, pe)) in g.data().iter().zip(data.iter_mut()).enumerate() {
                let ge = ge as f64 * scale;
                let me = b1 * m[idx][e] as f64 + (1.0 - b1) * ge;
                let ve = b2 * v[idx][e] as f64 + (1.0 - b2) * ge * ge;
                m[idx][e] = me as f32;
                v[idx][e] = ve as f32;
                let mhat = me / mc;
                let vhat = ve / vc;
                *pe = (*pe as f64 - lr * mhat / (vhat.sqrt() + eps)) as f32;
            }
            idx += 1;
        });
        status
    }
}

/// Collects the gradient of every bound parameter var after `backward`.
pub fn collect_grads(g: &Graph, bound: &[Var]) -> Vec<Option<Tensor>> {
    bound.iter().map(|&v| g.grad(v)).collect()
}

/// Mean cross-entropy between rows of `logits` and integer `labels`.
/// Thin alias for the fused graph op.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    g.cross_entropy(logits, labels)
}
