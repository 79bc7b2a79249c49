//! The class-incremental training harness: one shared-head model trained
//! over a sequence of class-split tasks, with optional experience replay,
//! and an accuracy matrix collected along the way.
//!
//! Logits of classes from not-yet-seen tasks are masked to -1e9 during both
//! training and evaluation, so the model only ever competes among classes
//! it has been shown. Replay mixes a buffer batch into every step as
//! `loss = CE(current) + loss_scale * CE(replay)`, computed on one combined
//! forward pass; at `loss_scale = 0` the flat families reproduce the
//! replay-off run bit for bit (the replay rows contribute exactly zero
//! gradient), which is tested.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::config::{DatasetId, FfnKindCfg, ModelCfg, ReplayCfg, ScenarioConfig};
use crate::data::{self, LabeledDataset, TaskSplit};
use crate::error::{Error, Result};
use crate::layers::FlatNet;
use crate::metrics::{AccuracyMatrix, MetricsReport};
use crate::optim::{collect_grads, Adam, AdamCfg, Trainable};
use crate::rng;
use crate::spline::{RbfGrid, SplineGrid};
use crate::tensor::Tensor;
use crate::vit::{FfnKind, KanGridCfg, Vit, VitConfig};

const MASK_OFF: f32 = -1e9;

/// What a dataset access was for; used by tests to audit protocol hygiene.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AccessKind {
    CurrentTask,
    Replay,
    Eval,
}

pub type Audit<'a> = Option<&'a mut dyn FnMut(AccessKind, &[u32])>;

fn note(audit: &mut Audit, kind: AccessKind, idx: &[u32]) {
    if let Some(f) = audit {
        f(kind, idx);
    }
}

/// Class-balanced episodic memory holding dataset indices, capped per class.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity_per_class: usize,
    slots: BTreeMap<usize, Vec<u32>>,
}

impl ReplayBuffer {
    pub fn new(capacity_per_class: usize) -> Result<ReplayBuffer> {
        if capacity_per_class == 0 {
            return Err(Error::Param("replay capacity must be positive".into()));
        }
        Ok(ReplayBuffer { capacity_per_class, slots: BTreeMap::new() })
    }

    pub fn capacity_per_class(&self) -> usize {
        self.capacity_per_class
    }

    pub fn len(&self) -> usize {
        self.slots.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn stored_classes(&self) -> Vec<usize> {
        self.slots.keys().copied().collect()
    }

    pub fn stored_for(&self, class: usize) -> usize {
        self.slots.get(&class).map_or(0, Vec::len)
    }

    /// Stores up to `capacity_per_class` uniformly chosen samples of each
    /// class present in `pool`. A class can only be absorbed once — tasks
    /// own disjoint classes, so a repeat means the caller broke protocol.
    pub fn absorb_task(&mut self, r: &mut ChaCha8Rng, labels: &[usize], pool: &[u32]) -> Result<()> {
        let mut by_class: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        for &i in pool {
            let l = labels.get(i as usize).copied().ok_or_else(|| {
                Error::Param(format!("pool index {i} out of range {}", labels.len()))
            })?;
            by_class.entry(l).or_default().push(i);
        }
        for (class, mut idx) in by_class {
            if self.slots.contains_key(&class) {
                return Err(Error::Protocol(format!(
                    "class {class} absorbed into the replay buffer twice"
                )));
            }
            if idx.len() > self.capacity_per_class {
                rng::shuffle(r, &mut idx);
                idx.truncate(self.capacity_per_class);
                idx.sort_unstable();
            }
            self.slots.insert(class, idx);
        }
        Ok(())
    }

    /// Draws `n` indices, each by picking a stored class uniformly and then
    /// a sample uniformly within it.
    pub fn draw(&self, r: &mut ChaCha8Rng, n: usize) -> Result<Vec<u32>> {
        if self.is_empty() {
            return Err(Error::Protocol("drawing from an empty replay buffer".into()));
        }
        let classes: Vec<&Vec<u32>> = self.slots.values().collect();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let c = (rng::uniform01(r) as f64 * classes.len() as f64) as usize;
            let slot = classes[c.min(classes.len() - 1)];
            let j = (rng::uniform01(r) as f64 * slot.len() as f64) as usize;
            out.push(slot[j.min(slot.len() - 1)]);
        }
        Ok(out)
    }
}

/// The model families the harness can drive, behind one forward/step API.
pub enum ModelKind {
    Flat(FlatNet),
    Vit(Vit),
}

impl ModelKind {
    pub fn forward(
        &self,
        g: &mut Graph,
        batch: &Tensor,
        bound: &mut Vec<Var>,
        train: bool,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        match self {
            ModelKind::Flat(net) => {
                let x = g.input(batch.clone());
                net.forward(g, x, bound)
            }
            ModelKind::Vit(v) => v.forward(g, batch, bound, train, dropout_rng),
        }
    }

    pub fn state_dict(&self) -> Vec<(String, Tensor)> {
        match self {
            ModelKind::Flat(net) => net.state_dict(),
            ModelKind::Vit(v) => v.state_dict(),
        }
    }
}

impl Trainable for ModelKind {
    fn visit_params(&self, f: &mut dyn FnMut(&Tensor)) {
        match self {
            ModelKind::Flat(n) => n.visit_params(f),
            ModelKind::Vit(v) => v.visit_params(f),
        }
    }
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        match self {
            ModelKind::Flat(n) => n.visit_params_mut(f),
            ModelKind::Vit(v) => v.visit_params_mut(f),
        }
    }
}

fn ffn_kind(k: FfnKindCfg) -> FfnKind {
    match k {
        FfnKindCfg::Mlp => FfnKind::Mlp,
        FfnKindCfg::Kan => FfnKind::Kan,
        FfnKindCfg::Fastkan => FfnKind::FastKan,
    }
}

/// Instantiates the configured model for the given input geometry.
pub fn build_model(
    cfg: &ScenarioConfig,
    channels: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    seed: u64,
) -> Result<ModelKind> {
    let in_dim = channels * height * width;
    let dims = |hidden: &[usize]| -> Vec<usize> {
        let mut d = vec![in_dim];
        d.extend_from_slice(hidden);
        d.push(num_classes);
        d
    };
    Ok(match &cfg.model {
        ModelCfg::Mlp { hidden } => ModelKind::Flat(FlatNet::mlp(&dims(hidden), seed)?),
        ModelCfg::Kan { hidden, grid_size, spline_order, range_lo, range_hi } => {
            let grid = SplineGrid::make(*range_lo, *range_hi, *grid_size, *spline_order)?;
            ModelKind::Flat(FlatNet::kan(&dims(hidden), &grid, seed)?)
        }
        ModelCfg::Fastkan { hidden, num_centers, range_lo, range_hi, bandwidth } => {
            let grid = RbfGrid::make(*range_lo, *range_hi, *num_centers, *bandwidth)?;
            ModelKind::Flat(FlatNet::fastkan(&dims(hidden), &grid, seed)?)
        }
        ModelCfg::Vit {
            patch_size,
            embed_dim,
            depth,
            heads,
            ffn_hidden,
            ffn_kind: kind,
            dropout,
            grid_size,
            spline_order,
            range_lo,
            range_hi,
            bandwidth,
        } => {
            let missing = || Error::Config("vit model config not resolved".into());
            let vc = VitConfig {
                channels,
                height,
                width,
                patch_size: patch_size.ok_or_else(missing)?,
                embed_dim: embed_dim.ok_or_else(missing)?,
                depth: depth.ok_or_else(missing)?,
                heads: heads.ok_or_else(missing)?,
                ffn_hidden: ffn_hidden.ok_or_else(missing)?,
                num_classes,
                ffn_kind: ffn_kind(*kind),
                dropout: *dropout,
                kan_grid: KanGridCfg {
                    grid_size: *grid_size,
                    spline_order: *spline_order,
                    range_lo: *range_lo,
                    range_hi: *range_hi,
                    bandwidth: *bandwidth,
                },
            };
            ModelKind::Vit(Vit::init(vc, seed)?)
        }
    })
}

/// Accuracy and mean loss of `model` on the given rows of `ds`, with
/// `mask` added to every logit row (0 for visible classes, -1e9 otherwise).
pub fn evaluate_split(
    model: &ModelKind,
    ds: &LabeledDataset,
    idx: &[u32],
    mask: &[f32],
    batch_size: usize,
    audit: &mut Audit,
) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Err(Error::Protocol("evaluating an empty test split".into()));
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0f64;
    for chunk in idx.chunks(batch_size) {
        note(audit, AccessKind::Eval, chunk);
        let (bx, by) = ds.gather(chunk)?;
        let mut g = Graph::new();
        let mut bound = Vec::new();
        let logits = model.forward(&mut g, &bx, &mut bound, false, None)?;
        let mv = g.input(Tensor::new(vec![mask.len()], mask.to_vec())?);
        let masked = g.add_row(logits, mv)?;
        let loss = g.cross_entropy(masked, &by)?;
        loss_sum += g.value(loss).item()? as f64 * chunk.len() as f64;
        let vals = g.value(masked);
        let classes = mask.len();
        for (row, &label) in by.iter().enumerate() {
            let row = &vals.data()[row * classes..(row + 1) * classes];
            let pred = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if pred == label {
                correct += 1;
            }
        }
    }
    Ok((correct as f64 / idx.len() as f64, loss_sum / idx.len() as f64))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskCurve {
    pub task_id: usize,
    pub epochs: Vec<EpochStats>,
}

/// Drives one model through the task sequence, enforcing the protocol:
/// tasks train strictly in order, evaluation only reaches trained tasks,
/// and the replay buffer absorbs a task only after that task finishes.
pub struct Harness<'d> {
    cfg: ScenarioConfig,
    train_ds: &'d LabeledDataset,
    test_ds: &'d LabeledDataset,
    tasks: Vec<TaskSplit>,
    model: ModelKind,
    adam: Adam,
    buffer: Option<ReplayBuffer>,
    loss_scale: f32,
    shuffle_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    buffer_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    completed: usize,
    global_epoch: usize,
    base_lr: f32,
    mask: Vec<f32>,
}

impl<'d> Harness<'d> {
    /// `cfg` must already be resolved (see [`ScenarioConfig::resolve`]).
    pub fn new(
        cfg: &ScenarioConfig,
        train_ds: &'d LabeledDataset,
        test_ds: &'d LabeledDataset,
        seed: u64,
    ) -> Result<Harness<'d>> {
        let cfg = cfg.resolve()?;
        let mut tasks = data::split_tasks(train_ds, test_ds, cfg.num_tasks)?;

        let mut cap_rng = rng::stream(seed, rng::STREAM_CAP);
        for t in &mut tasks {
            if let Some(cap) = cfg.train_cap_per_task {
                if t.train_idx.len() > cap {
                    rng::shuffle(&mut cap_rng, &mut t.train_idx);
                    t.train_idx.truncate(cap);
                    t.train_idx.sort_unstable();
                }
            }
            if let Some(cap) = cfg.eval_cap_per_task {
                if t.test_idx.len() > cap {
                    rng::shuffle(&mut cap_rng, &mut t.test_idx);
                    t.test_idx.truncate(cap);
                    t.test_idx.sort_unstable();
                }
            }
            if t.train_idx.is_empty() || t.test_idx.is_empty() {
                return Err(Error::Protocol(format!(
                    "task {} has an empty train or test split",
                    t.task_id
                )));
            }
        }

        let num_classes = train_ds.class_count.max(test_ds.class_count);
        let model = build_model(
            &cfg,
            train_ds.channels,
            train_ds.height,
            train_ds.width,
            num_classes,
            seed,
        )?;
        let adam = Adam::new(AdamCfg {
            lr: cfg.optim.lr.expect("resolved config"),
            beta1: cfg.optim.beta1,
            beta2: cfg.optim.beta2,
            eps: cfg.optim.eps,
            grad_clip: cfg.optim.grad_clip,
        })?;
        let (buffer, loss_scale) = match cfg.replay {
            ReplayCfg::Off => (None, 0.0),
            ReplayCfg::On { capacity_per_class, loss_scale } => {
                (Some(ReplayBuffer::new(capacity_per_class)?), loss_scale)
            }
        };
        let base_lr = adam.cfg.lr;
        Ok(Harness {
            cfg,
            train_ds,
            test_ds,
            tasks,
            model,
            adam,
            buffer,
            loss_scale,
            shuffle_rng: rng::stream(seed, rng::STREAM_SHUFFLE),
            replay_rng: rng::stream(seed, rng::STREAM_REPLAY_DRAW),
            buffer_rng: rng::stream(seed, rng::STREAM_BUFFER_FILL),
            dropout_rng: rng::stream(seed, rng::STREAM_DROPOUT),
            completed: 0,
            global_epoch: 0,
            base_lr,
            mask: vec![MASK_OFF; num_classes],
        })
    }

    pub fn cfg(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn tasks(&self) -> &[TaskSplit] {
        &self.tasks
    }

    pub fn completed_tasks(&self) -> usize {
        self.completed
    }

    pub fn model(&self) -> &ModelKind {
        &self.model
    }

    pub fn replay_buffer(&self) -> Option<&ReplayBuffer> {
        self.buffer.as_ref()
    }

    /// Trains the next task (which must be `completed_tasks() + 1`),
    /// returning per-epoch curves. The task's classes unmask at the start;
    /// its samples enter the replay buffer only after its last epoch.
    pub fn train_task(&mut self, task_id: usize, audit: &mut Audit) -> Result<TaskCurve> {
        if task_id != self.completed + 1 || task_id > self.tasks.len() {
            return Err(Error::Protocol(format!(
                "task {task_id} trained out of order ({} of {} completed)",
                self.completed,
                self.tasks.len()
            )));
        }
        let split = self.tasks[task_id - 1].clone();
        for &c in &split.class_ids {
            self.mask[c] = 0.0;
        }
        let epochs = if task_id == 1 {
            self.cfg.epochs_first_task.expect("resolved config")
        } else {
            self.cfg.epochs_other_tasks.expect("resolved config")
        };
        let batch = self.cfg.batch_size;
        let replay_live = self.buffer.as_ref().is_some_and(|b| !b.is_empty());

        let mut idx = split.train_idx.clone();
        let mut curve = TaskCurve { task_id, epochs: Vec::with_capacity(epochs) };
        for epoch in 1..=epochs {
            let t0 = Instant::now();
            self.global_epoch += 1;
            if let Some(gamma) = self.cfg.optim.lr_decay {
                // the schedule runs over GLOBAL epochs, straight through task
                // boundaries, like a scheduler stepped once per epoch
                self.adam.cfg.lr = self.base_lr * gamma.powi(self.global_epoch as i32 - 1);
            }
            rng::shuffle(&mut self.shuffle_rng, &mut idx);
            let mut loss_sum = 0.0f64;
            let mut correct = 0usize;
            for chunk in idx.chunks(batch) {
                note(audit, AccessKind::CurrentTask, chunk);
                let (bx, by) = self.train_ds.gather(chunk)?;
                let (combined, replay_labels) = if replay_live {
                    let ridx = self.buffer.as_ref().unwrap().draw(&mut self.replay_rng, chunk.len())?;
                    note(audit, AccessKind::Replay, &ridx);
                    let (rx, ry) = self.train_ds.gather(&ridx)?;
                    let mut all = bx.data().to_vec();
                    all.extend_from_slice(rx.data());
                    (Tensor::new(vec![chunk.len() + ridx.len(), self.train_ds.dim()], all)?, ry)
                } else {
                    (bx, Vec::new())
                };

                let mut g = Graph::new();
                let mut bound = Vec::new();
                let logits =
                    self.model.forward(&mut g, &combined, &mut bound, true, Some(&mut self.dropout_rng))?;
                let mv = g.input(Tensor::new(vec![self.mask.len()], self.mask.clone())?);
                let masked = g.add_row(logits, mv)?;
                let (cur, loss) = if replay_labels.is_empty() {
                    let loss = g.cross_entropy(masked, &by)?;
                    (masked, loss)
                } else {
                    let cur = g.slice_rows(masked, 0, chunk.len())?;
                    let rep = g.slice_rows(masked, chunk.len(), replay_labels.len())?;
                    let loss_cur = g.cross_entropy(cur, &by)?;
                    let loss_rep = g.cross_entropy(rep, &replay_labels)?;
                    let scaled = g.scale(loss_rep, self.loss_scale)?;
                    let loss = g.add(loss_cur, scaled)?;
                    loss_sum += g.value(loss_cur).item()? as f64 * chunk.len() as f64;
                    (cur, loss)
                };
                if replay_labels.is_empty() {
                    loss_sum += g.value(loss).item()? as f64 * chunk.len() as f64;
                }
                g.backward(loss)?;
                let grads = collect_grads(&g, &bound);
                self.adam.step(&mut self.model, &grads)?;

                let vals = g.value(cur);
                let classes = self.mask.len();
                for (row, &label) in by.iter().enumerate() {
                    let row = &vals.data()[row * classes..(row + 1) * classes];
                    let pred = row
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .map(|(i, _)| i)
                        .unwrap();
                    if pred == label {
                        correct += 1;
                    }
                }
            }
            let (test_acc, test_loss) =
                evaluate_split(&self.model, self.test_ds, &split.test_idx, &self.mask, batch, audit)?;
            curve.epochs.push(EpochStats {
                epoch,
                train_loss: loss_sum / idx.len() as f64,
                train_acc: correct as f64 / idx.len() as f64,
                test_loss,
                test_acc,
                seconds: t0.elapsed().as_secs_f64(),
            });
        }

        if let Some(buf) = self.buffer.as_mut() {
            buf.absorb_task(&mut self.buffer_rng, &self.train_ds.labels, &split.train_idx)?;
        }
        self.completed = task_id;
        Ok(curve)
    }

    /// Test accuracy on one trained task under the current mask.
    pub fn evaluate_task(&mut self, task_id: usize, audit: &mut Audit) -> Result<(f64, f64)> {
        if task_id == 0 || task_id > self.completed {
            return Err(Error::Protocol(format!(
                "evaluating task {task_id} before it was trained ({} completed)",
                self.completed
            )));
        }
        let split = &self.tasks[task_id - 1];
        evaluate_split(&self.model, self.test_ds, &split.test_idx, &self.mask, self.cfg.batch_size, audit)
    }

    /// Accuracy column `a(1..=upto, completed)` for the accuracy matrix.
    pub fn evaluate_tasks(&mut self, upto: usize, audit: &mut Audit) -> Result<Vec<f64>> {
        if upto > self.completed {
            return Err(Error::Protocol(format!(
                "evaluating {upto} tasks with only {} trained",
                self.completed
            )));
        }
        let mut col = Vec::with_capacity(upto);
        for t in 1..=upto {
            let split = &self.tasks[t - 1];
            let (acc, _) = evaluate_split(
                &self.model,
                self.test_ds,
                &split.test_idx,
                &self.mask,
                self.cfg.batch_size,
                audit,
            )?;
            col.push(acc);
        }
        Ok(col)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

pub const RECORD_VERSION: u32 = 1;

/// Everything one `(scenario, seed)` run produced, as written to disk.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub name: String,
    pub seed: u64,
    pub family: String,
    /// The resolved configuration this run actually used.
    pub scenario: ScenarioConfig,
    pub param_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<NormStats>,
    pub task_classes: Vec<Vec<usize>>,
    pub curves: Vec<TaskCurve>,
    pub matrix: AccuracyMatrix,
    pub metrics: MetricsReport,
    pub total_seconds: f64,
}

/// Loads data, trains through all tasks, evaluates after each, and bundles
/// the result. Identical `(cfg, seed)` pairs produce identical matrices.
pub fn run_scenario(cfg: &ScenarioConfig, data_root: &Path, seed: u64) -> Result<RunRecord> {
    run_scenario_with_audit(cfg, data_root, seed, None)
}

pub fn run_scenario_with_audit(
    cfg: &ScenarioConfig,
    data_root: &Path,
    seed: u64,
    mut audit: Audit,
) -> Result<RunRecord> {
    let started = Instant::now();
    let cfg = cfg.resolve()?;
    let (mut train, mut test) = match cfg.dataset {
        DatasetId::Mnist => data::load_mnist(data_root)?,
        DatasetId::Cifar100 => data::load_cifar100(data_root)?,
        DatasetId::Synthetic => data::synthetic_blobs(cfg.synthetic.as_ref().expect("resolved config"))?,
    };
    let normalization = if cfg.normalize {
        let (mean, std) = data::channel_stats(&train);
        data::normalize(&mut train, &mean, &std)?;
        data::normalize(&mut test, &mean, &std)?;
        Some(NormStats { mean, std })
    } else {
        None
    };

    let mut harness = Harness::new(&cfg, &train, &test, seed)?;
    let mut curves = Vec::with_capacity(cfg.num_tasks);
    let mut cols = Vec::with_capacity(cfg.num_tasks);
    for t in 1..=cfg.num_tasks {
        curves.push(harness.train_task(t, &mut audit)?);
        cols.push(harness.evaluate_tasks(t, &mut audit)?);
    }
    let matrix = AccuracyMatrix::from_columns(&cols)?;
    let metrics = MetricsReport::from_matrix(&matrix)?;
    Ok(RunRecord {
        format_version: RECORD_VERSION,
        name: cfg.name.clone(),
        seed,
        family: cfg.model.family_name().to_string(),
        param_count: harness.model().param_count(),
        scenario: harness.cfg().clone(),
        normalization,
        task_classes: harness.tasks().iter().map(|t| t.class_ids.clone()).collect(),
        curves,
        matrix,
        metrics,
        total_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_cfg(name: &str) -> ScenarioConfig {
        serde_json::from_value(serde_json::json!({
            "name": name,
            "dataset": "synthetic",
            "synthetic": {"classes": 4, "train_per_class": 60, "test_per_class": 25},
            "num_tasks": 2,
            "batch_size": 32,
            "epochs_first_task": 3,
            "epochs_other_tasks": 3,
            "model": {"family": "mlp", "hidden": [24]},
            "optim": {"lr": 0.01}
        }))
        .unwrap()
    }

    fn synth_data(cfg: &ScenarioConfig) -> (LabeledDataset, LabeledDataset) {
        let (mut train, mut test) = data::synthetic_blobs(cfg.synthetic.as_ref().unwrap()).unwrap();
        let (mean, std) = data::channel_stats(&train);
        data::normalize(&mut train, &mean, &std).unwrap();
        data::normalize(&mut test, &mean, &std).unwrap();
        (train, test)
    }

    #[test]
    fn buffer_caps_draws_and_rejects_double_absorb() {
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let pool: Vec<u32> = (0..100).collect();
        let mut buf = ReplayBuffer::new(10).unwrap();
        let mut r = rng::stream(1, rng::STREAM_BUFFER_FILL);
        buf.absorb_task(&mut r, &labels, &pool).unwrap();
        assert_eq!(buf.len(), 20);
        assert_eq!(buf.stored_for(0), 10);
        assert_eq!(buf.stored_for(1), 10);
        assert_eq!(buf.stored_classes(), vec![0, 1]);

        let err = buf.absorb_task(&mut r, &labels, &pool).unwrap_err();
        assert!(err.to_string().contains("twice"), "{err}");

        // draws stay inside stored indices and are deterministic per stream
        let mut r1 = rng::stream(2, rng::STREAM_REPLAY_DRAW);
        let mut r2 = rng::stream(2, rng::STREAM_REPLAY_DRAW);
        let d1 = buf.draw(&mut r1, 500).unwrap();
        let d2 = buf.draw(&mut r2, 500).unwrap();
        assert_eq!(d1, d2);
        for &i in &d1 {
            assert!(i < 100);
        }
        // class balance within sampling noise: 500 draws, p = 1/2
        let zeros = d1.iter().filter(|&&i| labels[i as usize] == 0).count();
        assert!((150..=350).contains(&zeros), "unbalanced draw: {zeros}/500 of class 0");

        assert!(ReplayBuffer::new(0).is_err());
        assert!(ReplayBuffer::new(5).unwrap().draw(&mut r1, 1).is_err());
    }

    #[test]
    fn protocol_violations_are_rejected() {
        let cfg = synth_cfg("proto");
        let (train, test) = synth_data(&cfg);
        let mut h = Harness::new(&cfg, &train, &test, 0).unwrap();
        assert!(matches!(h.train_task(2, &mut None), Err(Error::Protocol(_))));
        assert!(matches!(h.evaluate_tasks(1, &mut None), Err(Error::Protocol(_))));
        assert!(matches!(h.evaluate_task(1, &mut None), Err(Error::Protocol(_))));
        h.train_task(1, &mut None).unwrap();
        assert!(matches!(h.train_task(1, &mut None), Err(Error::Protocol(_))));
        assert!(matches!(h.evaluate_tasks(2, &mut None), Err(Error::Protocol(_))));
        h.evaluate_tasks(1, &mut None).unwrap();
    }

    #[test]
    fn untrained_model_sits_at_chance_on_a_two_class_task() {
        let cfg = synth_cfg("chance");
        let (train, test) = synth_data(&cfg);
        let mut accs = Vec::new();
        for seed in 0..5 {
            let h = Harness::new(&cfg, &train, &test, seed).unwrap();
            let split = &h.tasks()[0];
            let mut mask = vec![MASK_OFF; 4];
            for &c in &split.class_ids {
                mask[c] = 0.0;
            }
            let (acc, _) =
                evaluate_split(h.model(), &test, &split.test_idx, &mask, 32, &mut None).unwrap();
            accs.push(acc);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((mean - 0.5).abs() <= 0.05, "mean accuracy {mean} over {accs:?}");
    }

    #[test]
    fn learns_first_task_and_masks_unseen_classes() {
        let cfg = synth_cfg("learn");
        let (train, test) = synth_data(&cfg);
        let mut h = Harness::new(&cfg, &train, &test, 3).unwrap();
        let curve = h.train_task(1, &mut None).unwrap();
        assert_eq!(curve.epochs.len(), 3);
        let last = curve.epochs.last().unwrap();
        assert!(last.train_acc > 0.9, "train acc {}", last.train_acc);
        assert!(last.test_acc > 0.9, "test acc {}", last.test_acc);
        assert!(last.train_loss < curve.epochs[0].train_loss);

        // with task 2 still masked, its samples can never be predicted
        // correctly: every prediction lands in task 1's classes
        let split2 = h.tasks()[1].clone();
        let mut mask = vec![MASK_OFF; 4];
        for &c in &h.tasks()[0].class_ids.clone() {
            mask[c] = 0.0;
        }
        let (acc2, _) =
            evaluate_split(h.model(), &test, &split2.test_idx, &mask, 32, &mut None).unwrap();
        assert_eq!(acc2, 0.0);
    }

    #[test]
    fn audit_shows_clean_task_and_replay_hygiene() {
        let mut cfg = synth_cfg("hygiene");
        cfg.replay = ReplayCfg::On { capacity_per_class: 15, loss_scale: 0.5 };
        let (train, test) = synth_data(&cfg);

        let class_of = |i: &u32| train.labels[*i as usize];
        let mut h = Harness::new(&cfg, &train, &test, 1).unwrap();
        let task_classes: Vec<Vec<usize>> = h.tasks().iter().map(|t| t.class_ids.clone()).collect();

        let mut replay_seen: Vec<usize> = Vec::new();
        let mut current_seen: Vec<usize> = Vec::new();
        {
            let mut audit = |kind: AccessKind, idx: &[u32]| match kind {
                AccessKind::Replay => replay_seen.extend(idx.iter().map(class_of)),
                AccessKind::CurrentTask => current_seen.extend(idx.iter().map(class_of)),
                AccessKind::Eval => {}
            };
            h.train_task(1, &mut Some(&mut audit)).unwrap();
        }
        assert!(replay_seen.is_empty(), "task 1 must train without replay");
        assert!(current_seen.iter().all(|c| task_classes[0].contains(c)));

        let buf = h.replay_buffer().unwrap();
        assert_eq!(buf.stored_classes(), task_classes[0]);
        assert!(buf.stored_classes().iter().all(|c| buf.stored_for(*c) <= 15));

        replay_seen.clear();
        current_seen.clear();
        {
            let mut audit = |kind: AccessKind, idx: &[u32]| match kind {
                AccessKind::Replay => replay_seen.extend(idx.iter().map(class_of)),
                AccessKind::CurrentTask => current_seen.extend(idx.iter().map(class_of)),
                AccessKind::Eval => {}
            };
            h.train_task(2, &mut Some(&mut audit)).unwrap();
        }
        assert!(!replay_seen.is_empty());
        assert!(
            replay_seen.iter().all(|c| task_classes[0].contains(c)),
            "replay during task 2 must come from task 1 only"
        );
        assert!(current_seen.iter().all(|c| task_classes[1].contains(c)));
    }

    #[test]
    fn zero_loss_scale_reproduces_replay_off_bit_for_bit() {
        let cfg_off = synth_cfg("off");
        let mut cfg_zero = synth_cfg("zero");
        cfg_zero.replay = ReplayCfg::On { capacity_per_class: 15, loss_scale: 0.0 };
        let (train, test) = synth_data(&cfg_off);

        let run = |cfg: &ScenarioConfig| {
            let mut h = Harness::new(cfg, &train, &test, 7).unwrap();
            h.train_task(1, &mut None).unwrap();
            h.train_task(2, &mut None).unwrap();
            let col = h.evaluate_tasks(2, &mut None).unwrap();
            (h.model().state_dict(), col)
        };
        let (sd_off, col_off) = run(&cfg_off);
        let (sd_zero, col_zero) = run(&cfg_zero);
        assert_eq!(col_off, col_zero);
        for ((an, at), (bn, bt)) in sd_off.iter().zip(&sd_zero) {
            assert_eq!(an, bn);
            assert_eq!(at.data(), bt.data(), "{an} diverged");
        }
    }

    #[test]
    fn run_scenario_is_deterministic_and_complete() {
        let cfg = synth_cfg("endtoend");
        let root = Path::new("unused");
        let a = run_scenario(&cfg, root, 5).unwrap();
        let b = run_scenario(&cfg, root, 5).unwrap();
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.matrix.to_csv(), b.matrix.to_csv());
        assert_eq!(a.metrics.last_accuracy, b.metrics.last_accuracy);

        assert_eq!(a.format_version, RECORD_VERSION);
        assert_eq!(a.curves.len(), 2);
        assert_eq!(a.curves[0].epochs.len(), 3);
        assert_eq!(a.task_classes, vec![vec![0, 1], vec![2, 3]]);
        assert!(a.param_count > 0);
        assert_eq!(a.family, "mlp");
        assert!(a.metrics.last_accuracy > 0.3);
        assert!(a.scenario.optim.lr.is_some(), "record must echo the resolved config");

        // different seed, different trajectory (weights differ, so the
        // matrix almost surely differs)
        let c = run_scenario(&cfg, root, 6).unwrap();
        assert_ne!(a.matrix, c.matrix);

        // round-trips as json
        let text = serde_json::to_string(&a).unwrap();
        let back: RunRecord = serde_json::from_str(&text).unwrap();
        assert_eq!(back.matrix, a.matrix);
        assert_eq!(back.name, "endtoend");
    }

    #[test]
    fn lr_decay_runs_over_global_epochs() {
        let cfg_plain = synth_cfg("plain");
        let mut cfg_one = synth_cfg("gamma_one");
        cfg_one.optim.lr_decay = Some(1.0);
        let mut cfg_decay = synth_cfg("gamma_half");
        cfg_decay.optim.lr_decay = Some(0.5);
        let (train, test) = synth_data(&cfg_plain);

        let run = |cfg: &ScenarioConfig| {
            let mut h = Harness::new(cfg, &train, &test, 11).unwrap();
            h.train_task(1, &mut None).unwrap();
            h.train_task(2, &mut None).unwrap();
            // 3 + 3 epochs trained, so the last epoch index is 6
            let lr = h.adam.cfg.lr;
            (h.model().state_dict(), lr)
        };
        let (sd_plain, _) = run(&cfg_plain);
        let (sd_one, lr_one) = run(&cfg_one);
        let (sd_decay, lr_decay) = run(&cfg_decay);

        // gamma = 1 is exactly the constant-lr run
        assert_eq!(lr_one, 0.01);
        for ((an, at), (_, bt)) in sd_plain.iter().zip(&sd_one) {
            assert_eq!(at.data(), bt.data(), "{an} diverged under gamma=1");
        }

        // gamma = 0.5 after 6 global epochs: lr = 0.01 * 0.5^5, crossing the
        // task 1 -> task 2 boundary without resetting
        assert!((lr_decay - 0.01 * 0.5f32.powi(5)).abs() < 1e-9, "{lr_decay}");
        let diverged = sd_plain
            .iter()
            .zip(&sd_decay)
            .any(|((_, at), (_, bt))| at.data() != bt.data());
        assert!(diverged, "gamma=0.5 must change the trajectory");
    }

    #[test]
    fn replay_reduces_forgetting_on_the_synthetic_split() {
        // not a paper claim, just a sanity check that the machinery pulls in
        // the right direction on an easy dataset where task 2 overwrites
        // task 1 badly without rehearsal
        let cfg_off = synth_cfg("noreplay");
        let mut cfg_on = synth_cfg("replay");
        cfg_on.replay = ReplayCfg::On { capacity_per_class: 30, loss_scale: 0.5 };
        let root = Path::new("unused");
        let mut gap_off = 0.0;
        let mut gap_on = 0.0;
        for seed in 0..3 {
            gap_off += run_scenario(&cfg_off, root, seed).unwrap().metrics.last_accuracy;
            gap_on += run_scenario(&cfg_on, root, seed).unwrap().metrics.last_accuracy;
        }
        assert!(
            gap_on > gap_off,
            "replay should lift final accuracy: {gap_on:.3} vs {gap_off:.3} (sum over 3 seeds)"
        );
    }
}
