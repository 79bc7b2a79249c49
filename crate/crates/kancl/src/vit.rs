//! A small vision transformer with a swappable token-mixing FFN: the usual
//! two-layer MLP, or a single KAN linear layer (spline or RBF basis) acting
//! width-preserving on each token.
//!
//! Images are processed one at a time as `[tokens, dim]` matrices (the
//! autodiff ops are 2-D); class-token representations are concatenated
//! across the batch before the shared classification head. Pre-norm blocks:
//!
//! ```text
//! x = x + Attn(LN(x));  x = x + Ffn(LN(x))
//! ```

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::{Activation, KanLinear, KanVars, MlpLinear, MlpVars};
use crate::optim::Trainable;
use crate::rng;
use crate::spline::{RbfGrid, SplineGrid};
use crate::tensor::Tensor;

const LN_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FfnKind {
    Mlp,
    Kan,
    FastKan,
}

impl FfnKind {
    pub fn name(self) -> &'static str {
        match self {
            FfnKind::Mlp => "mlp",
            FfnKind::Kan => "kan",
            FfnKind::FastKan => "fastkan",
        }
    }
}

/// Basis setup shared by the KAN FFN variants. For the RBF variant the
/// center count is `grid_size + spline_order` so both variants spend the
/// same parameter budget.
#[derive(Clone, Debug)]
pub struct KanGridCfg {
    pub grid_size: usize,
    pub spline_order: usize,
    pub range_lo: f64,
    pub range_hi: f64,
    pub bandwidth: Option<f64>,
}

impl Default for KanGridCfg {
    fn default() -> Self {
        KanGridCfg { grid_size: 5, spline_order: 3, range_lo: -1.0, range_hi: 1.0, bandwidth: None }
    }
}

#[derive(Clone, Debug)]
pub struct VitConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// Hidden width of the MLP FFN; the KAN FFN is width-preserving and
    /// ignores this.
    pub ffn_hidden: usize,
    pub num_classes: usize,
    pub ffn_kind: FfnKind,
    pub dropout: f32,
    pub kan_grid: KanGridCfg,
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Param("vit: empty image shape".into()));
        }
        if self.patch_size == 0 || self.height % self.patch_size != 0 || self.width % self.patch_size != 0 {
            return Err(Error::Param(format!(
                "vit: patch size {} does not tile {}x{}",
                self.patch_size, self.height, self.width
            )));
        }
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Param(format!(
                "vit: embed dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.depth == 0 || self.ffn_hidden == 0 || self.num_classes == 0 {
            return Err(Error::Param("vit: depth, ffn_hidden, num_classes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Param(format!("vit: dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.height / self.patch_size) * (self.width / self.patch_size)
    }

    pub fn tokens(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }
}

/// Splits one channel-major image into non-overlapping patches: output is
/// `[num_patches, channels*p*p]` with patches in raster order and each patch
/// flattened channel-major.
pub fn patchify(pixels: &[f32], channels: usize, height: usize, width: usize, p: usize) -> Vec<f32> {
    let ph = height / p;
    let pw = width / p;
    let mut out = Vec::with_capacity(ph * pw * channels * p * p);
    for pi in 0..ph {
        for pj in 0..pw {
            for c in 0..channels {
                let plane = &pixels[c * height * width..(c + 1) * height * width];
                for dy in 0..p {
                    let row = (pi * p + dy) * width + pj * p;
                    out.extend_from_slice(&plane[row..row + p]);
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub enum Ffn {
    Mlp(MlpLinear, MlpLinear),
    Kan(KanLinear),
}

#[derive(Clone, Debug)]
pub struct Block {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    /// `[dim, 3*dim]`, columns packed as `[q | k | v]`.
    pub w_qkv: Tensor,
    pub b_qkv: Tensor,
    pub w_proj: Tensor,
    pub b_proj: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub ffn: Ffn,
}

#[derive(Clone, Debug)]
pub struct Vit {
    pub cfg: VitConfig,
    /// `[patch_dim, dim]` — stored input-major so the per-image embedding is
    /// a plain matmul.
    pub patch_w: Tensor,
    pub patch_b: Tensor,
    pub cls: Tensor,
    pub pos: Tensor,
    pub blocks: Vec<Block>,
    pub final_gamma: Tensor,
    pub final_beta: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

enum FfnVars {
    Mlp(MlpVars, MlpVars),
    Kan(KanVars),
}

struct BlockVars {
    ln1_gamma: Var,
    ln1_beta: Var,
    w_qkv: Var,
    b_qkv: Var,
    w_proj: Var,
    b_proj: Var,
    ln2_gamma: Var,
    ln2_beta: Var,
    ffn: FfnVars,
}

struct VitVars {
    patch_w: Var,
    patch_b: Var,
    cls: Var,
    pos: Var,
    blocks: Vec<BlockVars>,
    final_gamma: Var,
    final_beta: Var,
    head_w: Var,
    head_b: Var,
}

impl Vit {
    /// Per-component init streams: swapping `ffn_kind` reruns only the FFN
    /// stream, so every non-FFN tensor is bit-identical across kinds.
    pub fn init(cfg: VitConfig, seed: u64) -> Result<Vit> {
        cfg.validate()?;
        let d = cfg.embed_dim;
        let pd = cfg.patch_dim();
        let tokens = cfg.tokens();

        let mut r = rng::stream(seed, rng::INIT_BASE);
        let pb = 1.0 / (pd as f32).sqrt();
        let patch_w = Tensor::new(vec![pd, d], (0..pd * d).map(|_| rng::uniform_sym(&mut r, pb)).collect())?;
        let patch_b = Tensor::zeros(vec![d]);

        let mut r = rng::stream(seed, rng::INIT_BASE + 1);
        let cls = Tensor::new(vec![1, d], (0..d).map(|_| 0.02 * rng::normal(&mut r)).collect())?;
        let pos = Tensor::new(vec![tokens, d], (0..tokens * d).map(|_| 0.02 * rng::normal(&mut r)).collect())?;

        let mut r = rng::stream(seed, rng::INIT_BASE + 2);
        let hb = 1.0 / (d as f32).sqrt();
        let head_w = Tensor::new(
            vec![d, cfg.num_classes],
            (0..d * cfg.num_classes).map(|_| rng::uniform_sym(&mut r, hb)).collect(),
        )?;
        let head_b = Tensor::zeros(vec![cfg.num_classes]);

        let mut blocks = Vec::with_capacity(cfg.depth);
        for b in 0..cfg.depth {
            let mut ra = rng::stream(seed, rng::INIT_BASE + 10 + 2 * b as u64);
            let w_qkv = Tensor::new(vec![d, 3 * d], (0..3 * d * d).map(|_| rng::uniform_sym(&mut ra, hb)).collect())?;
            let w_proj = Tensor::new(vec![d, d], (0..d * d).map(|_| rng::uniform_sym(&mut ra, hb)).collect())?;

            let mut rf = rng::stream(seed, rng::INIT_BASE + 11 + 2 * b as u64);
            let ffn = match cfg.ffn_kind {
                FfnKind::Mlp => Ffn::Mlp(
                    MlpLinear::init(d, cfg.ffn_hidden, Activation::Silu, &mut rf)?,
                    MlpLinear::init(cfg.ffn_hidden, d, Activation::Identity, &mut rf)?,
                ),
                FfnKind::Kan => {
                    let grid = SplineGrid::make(
                        cfg.kan_grid.range_lo,
                        cfg.kan_grid.range_hi,
                        cfg.kan_grid.grid_size,
                        cfg.kan_grid.spline_order,
                    )?;
                    Ffn::Kan(KanLinear::init(d, d, grid, &mut rf)?)
                }
                FfnKind::FastKan => {
                    let grid = RbfGrid::make(
                        cfg.kan_grid.range_lo,
                        cfg.kan_grid.range_hi,
                        cfg.kan_grid.grid_size + cfg.kan_grid.spline_order,
                        cfg.kan_grid.bandwidth,
                    )?;
                    Ffn::Kan(KanLinear::init_rbf(d, d, grid, &mut rf)?)
                }
            };

            blocks.push(Block {
                ln1_gamma: Tensor::full(vec![d], 1.0),
                ln1_beta: Tensor::zeros(vec![d]),
                w_qkv,
                b_qkv: Tensor::zeros(vec![3 * d]),
                w_proj,
                b_proj: Tensor::zeros(vec![d]),
                ln2_gamma: Tensor::full(vec![d], 1.0),
                ln2_beta: Tensor::zeros(vec![d]),
                ffn,
            });
        }

        Ok(Vit {
            cfg,
            patch_w,
            patch_b,
            cls,
            pos,
            blocks,
            final_gamma: Tensor::full(vec![d], 1.0),
            final_beta: Tensor::zeros(vec![d]),
            head_w,
            head_b,
        })
    }

    fn bind(&self, g: &mut Graph, bound: &mut Vec<Var>) -> Result<VitVars> {
        let patch_w = g.param(self.patch_w.clone());
        let patch_b = g.param(self.patch_b.clone());
        let cls = g.param(self.cls.clone());
        let pos = g.param(self.pos.clone());
        bound.extend([patch_w, patch_b, cls, pos]);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let ln1_gamma = g.param(blk.ln1_gamma.clone());
            let ln1_beta = g.param(blk.ln1_beta.clone());
            let w_qkv = g.param(blk.w_qkv.clone());
            let b_qkv = g.param(blk.b_qkv.clone());
            let w_proj = g.param(blk.w_proj.clone());
            let b_proj = g.param(blk.b_proj.clone());
            let ln2_gamma = g.param(blk.ln2_gamma.clone());
            let ln2_beta = g.param(blk.ln2_beta.clone());
            bound.extend([ln1_gamma, ln1_beta, w_qkv, b_qkv, w_proj, b_proj, ln2_gamma, ln2_beta]);
            let ffn = match &blk.ffn {
                Ffn::Mlp(fc1, fc2) => FfnVars::Mlp(fc1.bind(g, bound)?, fc2.bind(g, bound)?),
                Ffn::Kan(kan) => FfnVars::Kan(kan.bind(g, bound)?),
            };
            blocks.push(BlockVars {
                ln1_gamma,
                ln1_beta,
                w_qkv,
                b_qkv,
                w_proj,
                b_proj,
                ln2_gamma,
                ln2_beta,
                ffn,
            });
        }
        let final_gamma = g.param(self.final_gamma.clone());
        let final_beta = g.param(self.final_beta.clone());
        let head_w = g.param(self.head_w.clone());
        let head_b = g.param(self.head_b.clone());
        bound.extend([final_gamma, final_beta, head_w, head_b]);
        Ok(VitVars { patch_w, patch_b, cls, pos, blocks, final_gamma, final_beta, head_w, head_b })
    }

    fn dropout(
        &self,
        g: &mut Graph,
        x: Var,
        train: bool,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let p = self.cfg.dropout;
        if !train || p == 0.0 {
            return Ok(x);
        }
        let r = rng
            .as_deref_mut()
            .ok_or_else(|| Error::Param("vit: training with dropout needs a dropout rng".into()))?;
        let shape = g.value(x).shape().to_vec();
        let n = g.value(x).numel();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f32> = (0..n)
            .map(|_| if rng::uniform01(r) < p { 0.0 } else { keep })
            .collect();
        let m = g.input(Tensor::new(shape, mask)?);
        g.mul(x, m)
    }

    fn attention(&self, g: &mut Graph, x: Var, bv: &BlockVars) -> Result<Var> {
        let d = self.cfg.embed_dim;
        let dh = d / self.cfg.heads;
        let qkv = g.matmul(x, bv.w_qkv)?;
        let qkv = g.add_row(qkv, bv.b_qkv)?;
        let mut heads = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let q = g.slice_cols(qkv, h * dh, dh)?;
            let k = g.slice_cols(qkv, d + h * dh, dh)?;
            let v = g.slice_cols(qkv, 2 * d + h * dh, dh)?;
            let kt = g.transpose(k)?;
            let s = g.matmul(q, kt)?;
            let s = g.scale(s, 1.0 / (dh as f32).sqrt())?;
            let p = g.softmax(s)?;
            heads.push(g.matmul(p, v)?);
        }
        let cat = g.concat_cols(&heads)?;
        let proj = g.matmul(cat, bv.w_proj)?;
        g.add_row(proj, bv.b_proj)
    }

    fn ffn(&self, g: &mut Graph, x: Var, blk: &Block, fv: &FfnVars) -> Result<Var> {
        match (&blk.ffn, fv) {
            (Ffn::Mlp(fc1, fc2), FfnVars::Mlp(v1, v2)) => {
                let h = fc1.forward_bound(g, x, v1)?;
                fc2.forward_bound(g, h, v2)
            }
            (Ffn::Kan(kan), FfnVars::Kan(kv)) => kan.forward_bound(g, x, kv),
            _ => unreachable!("ffn vars bound from this block"),
        }
    }

    /// Class logits `[batch, num_classes]`. With `train` set and a nonzero
    /// dropout rate, fresh masks are drawn from `dropout_rng`.
    pub fn forward(
        &self,
        g: &mut Graph,
        images: &Tensor,
        bound: &mut Vec<Var>,
        train: bool,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let (batch, dim) = images.dims2();
        let want = self.cfg.channels * self.cfg.height * self.cfg.width;
        if dim != want || batch == 0 {
            return Err(Error::Shape {
                op: "vit_forward",
                lhs: images.shape().to_vec(),
                rhs: vec![batch.max(1), want],
            });
        }
        let vars = self.bind(g, bound)?;
        let p = self.cfg.patch_size;
        let pd = self.cfg.patch_dim();
        let mut reps = Vec::with_capacity(batch);
        for i in 0..batch {
            let px = &images.data()[i * dim..(i + 1) * dim];
            let patches = Tensor::new(
                vec![self.cfg.num_patches(), pd],
                patchify(px, self.cfg.channels, self.cfg.height, self.cfg.width, p),
            )?;
            let pv = g.input(patches);
            let emb = g.matmul(pv, vars.patch_w)?;
            let emb = g.add_row(emb, vars.patch_b)?;
            let mut x = g.concat_rows(&[vars.cls, emb])?;
            x = g.add(x, vars.pos)?;
            x = self.dropout(g, x, train, &mut dropout_rng)?;
            for (blk, bv) in self.blocks.iter().zip(&vars.blocks) {
                let h = g.layer_norm(x, bv.ln1_gamma, bv.ln1_beta, LN_EPS)?;
                let a = self.attention(g, h, bv)?;
                let a = self.dropout(g, a, train, &mut dropout_rng)?;
                x = g.add(x, a)?;
                let h = g.layer_norm(x, bv.ln2_gamma, bv.ln2_beta, LN_EPS)?;
                let f = self.ffn(g, h, blk, &bv.ffn)?;
                let f = self.dropout(g, f, train, &mut dropout_rng)?;
                x = g.add(x, f)?;
            }
            let x = g.layer_norm(x, vars.final_gamma, vars.final_beta, LN_EPS)?;
            reps.push(g.slice_rows(x, 0, 1)?);
        }
        let cat = g.concat_rows(&reps)?;
        let logits = g.matmul(cat, vars.head_w)?;
        g.add_row(logits, vars.head_b)
    }

    pub fn state_dict(&self) -> Vec<(String, Tensor)> {
        let mut out = vec![
            ("patch.weight".to_string(), self.patch_w.clone()),
            ("patch.bias".to_string(), self.patch_b.clone()),
            ("cls".to_string(), self.cls.clone()),
            ("pos".to_string(), self.pos.clone()),
        ];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.ln1.gamma"), b.ln1_gamma.clone()));
            out.push((format!("block{i}.ln1.beta"), b.ln1_beta.clone()));
            out.push((format!("block{i}.attn.w_qkv"), b.w_qkv.clone()));
            out.push((format!("block{i}.attn.b_qkv"), b.b_qkv.clone()));
            out.push((format!("block{i}.attn.w_proj"), b.w_proj.clone()));
            out.push((format!("block{i}.attn.b_proj"), b.b_proj.clone()));
            out.push((format!("block{i}.ln2.gamma"), b.ln2_gamma.clone()));
            out.push((format!("block{i}.ln2.beta"), b.ln2_beta.clone()));
            match &b.ffn {
                Ffn::Mlp(fc1, fc2) => {
                    out.push((format!("block{i}.ffn.fc1.weight"), fc1.weight.clone()));
                    out.push((format!("block{i}.ffn.fc1.bias"), fc1.bias.clone()));
                    out.push((format!("block{i}.ffn.fc2.weight"), fc2.weight.clone()));
                    out.push((format!("block{i}.ffn.fc2.bias"), fc2.bias.clone()));
                }
                Ffn::Kan(k) => {
                    out.push((format!("block{i}.ffn.base_weight"), k.base_weight.clone()));
                    out.push((format!("block{i}.ffn.spline_weight"), k.spline_weight.clone()));
                    out.push((format!("block{i}.ffn.spline_scaler"), k.spline_scaler.clone()));
                }
            }
        }
        out.push(("final_norm.gamma".to_string(), self.final_gamma.clone()));
        out.push(("final_norm.beta".to_string(), self.final_beta.clone()));
        out.push(("head.weight".to_string(), self.head_w.clone()));
        out.push(("head.bias".to_string(), self.head_b.clone()));
        out
    }
}

impl Trainable for Vit {
    fn visit_params(&self, f: &mut dyn FnMut(&Tensor)) {
        f(&self.patch_w);
        f(&self.patch_b);
        f(&self.cls);
        f(&self.pos);
        for b in &self.blocks {
            f(&b.ln1_gamma);
            f(&b.ln1_beta);
            f(&b.w_qkv);
            f(&b.b_qkv);
            f(&b.w_proj);
            f(&b.b_proj);
            f(&b.ln2_gamma);
            f(&b.ln2_beta);
            match &b.ffn {
                Ffn::Mlp(fc1, fc2) => {
                    fc1.visit_params(f);
                    fc2.visit_params(f);
                }
                Ffn::Kan(k) => k.visit_params(f),
            }
        }
        f(&self.final_gamma);
        f(&self.final_beta);
        f(&self.head_w);
        f(&self.head_b);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        f(&mut self.patch_w);
        f(&mut self.patch_b);
        f(&mut self.cls);
        f(&mut self.pos);
        for b in &mut self.blocks {
            f(&mut b.ln1_gamma);
            f(&mut b.ln1_beta);
            f(&mut b.w_qkv);
            f(&mut b.b_qkv);
            f(&mut b.w_proj);
            f(&mut b.b_proj);
            f(&mut b.ln2_gamma);
            f(&mut b.ln2_beta);
            match &mut b.ffn {
                Ffn::Mlp(fc1, fc2) => {
                    fc1.visit_params_mut(f);
                    fc2.visit_params_mut(f);
                }
                Ffn::Kan(k) => k.visit_params_mut(f),
            }
        }
        f(&mut self.final_gamma);
        f(&mut self.final_beta);
        f(&mut self.head_w);
        f(&mut self.head_b);
    }
}
