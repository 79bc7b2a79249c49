//! Experiment configuration: one JSON file describes a list of scenarios to
//! run across a list of seeds. Missing fields take dataset- or
//! family-appropriate defaults at `resolve` time, so records always echo the
//! concrete values a run actually used.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    /// Dataset directory; overridable by `--data-root` and `DATA_ROOT`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_root: Option<PathBuf>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub scenarios: Vec<ScenarioConfig>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentFile {
    pub fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios in experiment file".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("empty seed list".into()));
        }
        let mut names: Vec<&str> = self.scenarios.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.scenarios.len() {
            return Err(Error::Config("scenario names must be unique".into()));
        }
        for s in &self.scenarios {
            if s.name.is_empty() || !s.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Config(format!(
                    "scenario name {:?} must be non-empty [A-Za-z0-9_-] (it names output files)",
                    s.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetId {
    Mnist,
    Cifar100,
    Synthetic,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub dataset: DatasetId,
    /// Only meaningful (and only allowed) with `dataset = "synthetic"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    pub num_tasks: usize,
    #[serde(default)]
    pub epochs_first_task: Option<usize>,
    #[serde(default)]
    pub epochs_other_tasks: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub replay: ReplayCfg,
    pub model: ModelCfg,
    #[serde(default)]
    pub optim: OptimCfg,
    /// Optional per-task subsample caps; drawn once per task, echoed in the
    /// run record so reduced-budget runs are visibly reduced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_cap_per_task: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_cap_per_task: Option<usize>,
    /// Standardize channels using train statistics.
    #[serde(default = "default_true")]
    pub normalize: bool,
}

fn default_batch() -> usize {
    64
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReplayCfg {
    Off,
    On {
        #[serde(default = "default_replay_capacity")]
        capacity_per_class: usize,
        #[serde(default = "default_replay_scale")]
        loss_scale: f32,
    },
}

fn default_replay_capacity() -> usize {
    200
}

fn default_replay_scale() -> f32 {
    0.5
}

impl Default for ReplayCfg {
    fn default() -> Self {
        ReplayCfg::Off
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FfnKindCfg {
    Mlp,
    Kan,
    Fastkan,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelCfg {
    Mlp {
        #[serde(default = "default_mlp_hidden")]
        hidden: Vec<usize>,
    },
    Kan {
        #[serde(default = "default_kan_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "default_grid_size")]
        grid_size: usize,
        #[serde(default = "default_spline_order")]
        spline_order: usize,
        #[serde(default = "default_range_lo")]
        range_lo: f64,
        #[serde(default = "default_range_hi")]
        range_hi: f64,
    },
    Fastkan {
        #[serde(default = "default_kan_hidden")]
        hidden: Vec<usize>,
        /// RBF center count; default matches the spline variant's basis
        /// count so the families spend the same parameter budget.
        #[serde(default = "default_num_centers")]
        num_centers: usize,
        #[serde(default = "default_range_lo")]
        range_lo: f64,
        #[serde(default = "default_range_hi")]
        range_hi: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bandwidth: Option<f64>,
    },
    Vit {
        #[serde(default)]
        patch_size: Option<usize>,
        #[serde(default)]
        embed_dim: Option<usize>,
        #[serde(default)]
        depth: Option<usize>,
        #[serde(default)]
        heads: Option<usize>,
        #[serde(default)]
        ffn_hidden: Option<usize>,
        #[serde(default = "default_ffn_kind")]
        ffn_kind: FfnKindCfg,
        #[serde(default = "default_dropout")]
        dropout: f32,
        #[serde(default = "default_grid_size")]
        grid_size: usize,
        #[serde(default = "default_spline_order")]
        spline_order: usize,
        #[serde(default = "default_range_lo")]
        range_lo: f64,
        #[serde(default = "default_range_hi")]
        range_hi: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bandwidth: Option<f64>,
    },
}

fn default_mlp_hidden() -> Vec<usize> {
    vec![128]
}

fn default_kan_hidden() -> Vec<usize> {
    vec![64]
}

fn default_grid_size() -> usize {
    5
}

fn default_spline_order() -> usize {
    3
}

fn default_num_centers() -> usize {
    8
}

fn default_range_lo() -> f64 {
    -1.0
}

fn default_range_hi() -> f64 {
    1.0
}

fn default_ffn_kind() -> FfnKindCfg {
    FfnKindCfg::Mlp
}

fn default_dropout() -> f32 {
    0.1
}

impl ModelCfg {
    pub fn family_name(&self) -> &'static str {
        match self {
            ModelCfg::Mlp { .. } => "mlp",
            ModelCfg::Kan { .. } => "kan",
            ModelCfg::Fastkan { .. } => "fastkan",
            ModelCfg::Vit { .. } => "vit",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimCfg {
    /// Defaults to 1e-4 for the ViT, 1e-3 for the flat families.
    #[serde(default)]
    pub lr: Option<f32>,
    #[serde(default = "default_beta1")]
    pub beta1: f32,
    #[serde(default = "default_beta2")]
    pub beta2: f32,
    #[serde(default = "default_eps")]
    pub eps: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_clip: Option<f32>,
    /// Per-epoch exponential learning-rate factor, applied across the whole
    /// task sequence: epoch e trains at lr * lr_decay^(e-1) with e counting
    /// globally. None means constant lr.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay: Option<f32>,
}

fn default_beta1() -> f32 {
    0.9
}

fn default_beta2() -> f32 {
    0.999
}

fn default_eps() -> f32 {
    1e-8
}

impl Default for OptimCfg {
    fn default() -> Self {
        OptimCfg {
            lr: None,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            grad_clip: None,
            lr_decay: None,
        }
    }
}

/// Per-dataset fallbacks: (epochs first task, epochs other tasks) and the
/// ViT shape tuple (patch, embed, depth, heads, ffn_hidden).
fn dataset_defaults(d: DatasetId) -> ((usize, usize), (usize, usize, usize, usize, usize)) {
    match d {
        DatasetId::Mnist => ((7, 5), (7, 64, 4, 4, 128)),
        DatasetId::Cifar100 => ((25, 10), (4, 128, 6, 4, 256)),
        DatasetId::Synthetic => ((3, 2), (4, 32, 2, 2, 64)),
    }
}

impl ScenarioConfig {
    /// Fills every optional field with its concrete default and validates
    /// the result. Run records embed the resolved form.
    pub fn resolve(&self) -> Result<ScenarioConfig> {
        let mut s = self.clone();
        let ((e1, e2), (vp, vd, vdepth, vheads, vffn)) = dataset_defaults(s.dataset);
        s.epochs_first_task.get_or_insert(e1);
        s.epochs_other_tasks.get_or_insert(e2);
        if s.synthetic.is_some() && s.dataset != DatasetId::Synthetic {
            return Err(Error::Config(format!(
                "scenario {}: synthetic block given for a non-synthetic dataset",
                s.name
            )));
        }
        if s.dataset == DatasetId::Synthetic {
            s.synthetic.get_or_insert_with(SyntheticSpec::default);
        }

        if s.batch_size == 0 || s.num_tasks == 0 {
            return Err(Error::Config(format!(
                "scenario {}: batch_size and num_tasks must be positive",
                s.name
            )));
        }
        if s.epochs_first_task == Some(0) || s.epochs_other_tasks == Some(0) {
            return Err(Error::Config(format!("scenario {}: epochs must be positive", s.name)));
        }
        if s.train_cap_per_task == Some(0) || s.eval_cap_per_task == Some(0) {
            return Err(Error::Config(format!("scenario {}: sample caps must be positive", s.name)));
        }

        match &s.replay {
            ReplayCfg::Off => {}
            ReplayCfg::On { capacity_per_class, loss_scale } => {
                if *capacity_per_class == 0 {
                    return Err(Error::Config(format!(
                        "scenario {}: replay capacity_per_class must be positive",
                        s.name
                    )));
                }
                if !loss_scale.is_finite() || *loss_scale < 0.0 {
                    return Err(Error::Config(format!(
                        "scenario {}: replay loss_scale must be finite and >= 0",
                        s.name
                    )));
                }
            }
        }

        match &mut s.model {
            ModelCfg::Mlp { hidden } | ModelCfg::Kan { hidden, .. } | ModelCfg::Fastkan { hidden, .. } => {
                if hidden.is_empty() || hidden.contains(&0) {
                    return Err(Error::Config(format!(
                        "scenario {}: hidden widths must be non-empty and positive",
                        s.name
                    )));
                }
            }
            ModelCfg::Vit { patch_size, embed_dim, depth, heads, ffn_hidden, dropout, .. } => {
                patch_size.get_or_insert(vp);
                embed_dim.get_or_insert(vd);
                depth.get_or_insert(vdepth);
                heads.get_or_insert(vheads);
                ffn_hidden.get_or_insert(vffn);
                if !(0.0..1.0).contains(dropout) {
                    return Err(Error::Config(format!(
                        "scenario {}: dropout {dropout} outside [0,1)",
                        s.name
                    )));
                }
            }
        }
        match &s.model {
            ModelCfg::Kan { grid_size, spline_order, range_lo, range_hi, .. }
            | ModelCfg::Vit { grid_size, spline_order, range_lo, range_hi, .. } => {
                if *grid_size == 0 {
                    return Err(Error::Config(format!("scenario {}: grid_size must be positive", s.name)));
                }
                let _ = spline_order;
                if range_lo >= range_hi {
                    return Err(Error::Config(format!(
                        "scenario {}: basis range [{range_lo}, {range_hi}] is empty",
                        s.name
                    )));
                }
            }
            ModelCfg::Fastkan { num_centers, range_lo, range_hi, .. } => {
                if *num_centers == 0 {
                    return Err(Error::Config(format!(
                        "scenario {}: num_centers must be positive",
                        s.name
                    )));
                }
                if range_lo >= range_hi {
                    return Err(Error::Config(format!(
                        "scenario {}: basis range [{range_lo}, {range_hi}] is empty",
                        s.name
                    )));
                }
            }
            ModelCfg::Mlp { .. } => {}
        }

        let lr = s.optim.lr.get_or_insert(match s.model {
            ModelCfg::Vit { .. } => 1e-4,
            _ => 1e-3,
        });
        if !(*lr > 0.0) {
            return Err(Error::Config(format!("scenario {}: lr must be positive", s.name)));
        }
        if let Some(g) = s.optim.lr_decay {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::Config(format!(
                    "scenario {}: lr_decay {g} outside (0, 1]",
                    s.name
                )));
            }
        }
        Ok(s)
    }
}

/// Reads, overrides, and type-checks an experiment file. Parse and
/// validation failures map to exit code 2 at the CLI.
pub fn load_experiment(path: &Path, overrides: &[(String, String)]) -> Result<ExperimentFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut doc: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for (key, raw) in overrides {
        apply_override(&mut doc, key, raw)?;
    }
    let exp: ExperimentFile = serde_json::from_value(doc)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    exp.validate()?;
    Ok(exp)
}

const TOP_LEVEL_KEYS: [&str; 3] = ["data_root", "out_dir", "seeds"];

/// Applies one `--a.b.c value` style override to the experiment document.
/// Top-level experiment keys hit the file root; everything else applies to
/// every scenario (missing intermediate objects are created, so e.g.
/// `replay.mode on` works when the file omits the replay block). The value
/// parses as JSON when it can, and falls back to a plain string.
pub fn apply_override(doc: &mut serde_json::Value, dotted: &str, raw: &str) -> Result<()> {
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let segments: Vec<&str> = dotted.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::Config(format!("bad override key {dotted:?}")));
    }
    let root = doc
        .as_object_mut()
        .ok_or_else(|| Error::Config("experiment file is not a JSON object".into()))?;
    if segments.len() == 1 && TOP_LEVEL_KEYS.contains(&segments[0]) {
        root.insert(segments[0].to_string(), value);
        return Ok(());
    }
    let scenarios = root
        .get_mut("scenarios")
        .and_then(|s| s.as_array_mut())
        .ok_or_else(|| Error::Config("experiment file has no scenarios array".into()))?;
    for (i, sc) in scenarios.iter_mut().enumerate() {
        let mut cur = &mut *sc;
        for seg in &segments[..segments.len() - 1] {
            let obj = cur.as_object_mut().ok_or_else(|| {
                Error::Config(format!("override {dotted:?}: {seg:?} is not an object in scenario {i}"))
            })?;
            cur = obj
                .entry(seg.to_string())
                .or_insert_with(|| serde_json::Value::Object(Default::default()));
        }
        let obj = cur.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override {dotted:?}: parent is not an object in scenario {i}"
            ))
        })?;
        obj.insert(segments[segments.len() - 1].to_string(), value.clone());
    }
    Ok(())
}
