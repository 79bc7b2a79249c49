//! Dataset loading and the class-split task protocol.
//!
//! MNIST arrives as IDX files (gzipped or raw — sniffed by magic bytes),
//! CIFAR-100 as the "binary version" record format. Both become a
//! [`LabeledDataset`] with pixels scaled to [0,1]; standardization is a
//! separate explicit step so train statistics can be reused for test data.

use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    /// `[n, channels*height*width]`, channel-major per sample.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Copies the rows at `idx` into a batch tensor plus its labels.
    pub fn gather(&self, idx: &[u32]) -> Result<(Tensor, Vec<usize>)> {
        let d = self.dim();
        let src = self.images.data();
        let mut out = Vec::with_capacity(idx.len() * d);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let i = i as usize;
            if i >= self.len() {
                return Err(Error::Param(format!("sample index {i} out of range {}", self.len())));
            }
            out.extend_from_slice(&src[i * d..(i + 1) * d]);
            labels.push(self.labels[i]);
        }
        Ok((Tensor::new(vec![idx.len(), d], out)?, labels))
    }

    /// Per-class sample counts, length `class_count`.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.class_count];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::DatasetMissing(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..]).read_to_end(&mut out).map_err(|e| Error::DataFormat {
            path: path.to_path_buf(),
            reason: format!("gzip decode failed: {e}"),
        })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::DataFormat {
            path: path.to_path_buf(),
            reason: format!("truncated header at byte {at}"),
        })
}

/// IDX image file (magic 2051): returns (pixels scaled to [0,1], rows, cols).
fn parse_idx_images(path: &Path) -> Result<(Vec<f32>, usize, usize, usize)> {
    let bytes = read_maybe_gz(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != 2051 {
        return Err(Error::DataFormat {
            path: path.to_path_buf(),
            reason: format!("bad magic {magic:#010x}, want 2051 (idx3 images)"),
        });
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    let rows = be_u32(&bytes, 8, path)? as usize;
    let cols = be_u32(&bytes, 12, path)? as usize;
    let want = 16 + n * rows * cols;
    if bytes.len() != want {
        return Err(Error::DataFormat {
            path: path.to_path_buf(),
            reason: format!("payload is {} bytes, header implies {want}", bytes.len()),
        });
    }
    let px = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Ok((px, n, rows, cols))
}

/// IDX label file (magic 2049).
fn parse_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_maybe_gz(path)?;
    let magic = be_u32(&bytes, 0, path)?;
    if magic != 2049 {
        return Err(Error::DataFormat {
            path: path.to_path_buf(),
            reason: format!("bad magic {magic:#010x}, want 2049 (idx1 labels)"),
        });
    }
    let n = be_u32(&bytes, 4, path)? as usize;
    if bytes.len() != 8 + n {
        return Err(Error::DataFormat {
            path: path.to_path_buf(),
            reason: format!("payload is {} bytes, header implies {}", bytes.len(), 8 + n),
        });
    }
    Ok(bytes[8..].to_vec())
}

/// One MNIST-style split from an image/label file pair.
pub fn load_idx_pair(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (px, n, rows, cols) = parse_idx_images(images_path)?;
    let labels = parse_idx_labels(labels_path)?;
    if labels.len() != n {
        return Err(Error::DataFormat {
            path: labels_path.to_path_buf(),
            reason: format!("{} labels for {n} images", labels.len()),
        });
    }
    let labels: Vec<usize> = labels.into_iter().map(|b| b as usize).collect();
    let class_count = labels.iter().copied().max().map_or(0, |m| m + 1);
    Ok(LabeledDataset {
        images: Tensor::new(vec![n, rows * cols], px)?,
        labels,
        class_count,
        channels: 1,
        height: rows,
        width: cols,
    })
}

/// Resolves `name` under `dir`, preferring the gzipped variant.
fn pick_variant(dir: &Path, name: &str) -> PathBuf {
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        gz
    } else {
        dir.join(name)
    }
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Paths the MNIST loader will read under `root/mnist`, with the gzipped
/// variant preferred per file. Used both by the loader and by preflight
/// existence checks.
pub fn mnist_paths(root: &Path) -> [PathBuf; 4] {
    let dir = root.join("mnist");
    [
        pick_variant(&dir, MNIST_FILES[0]),
        pick_variant(&dir, MNIST_FILES[1]),
        pick_variant(&dir, MNIST_FILES[2]),
        pick_variant(&dir, MNIST_FILES[3]),
    ]
}

/// (train, test) MNIST from `root/mnist/`.
pub fn load_mnist(root: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let p = mnist_paths(root);
    Ok((load_idx_pair(&p[0], &p[1])?, load_idx_pair(&p[2], &p[3])?))
}

const CIFAR_RECORD: usize = 2 + 3072;

/// One CIFAR-100 binary file: each record is coarse label byte, fine label
/// byte, then 3072 channel-major pixel bytes. Fine labels become the class.
pub fn load_cifar100_bin(path: &Path) -> Result<LabeledDataset> {
    let bytes = read_maybe_gz(path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::DataFormat {
            path: path.to_path_buf(),
            reason: format!("size {} is not a positive multiple of {CIFAR_RECORD}", bytes.len()),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut px = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        labels.push(rec[1] as usize);
        px.extend(rec[2..].iter().map(|&b| b as f32 / 255.0));
    }
    let class_count = labels.iter().copied().max().map_or(0, |m| m + 1);
    Ok(LabeledDataset {
        images: Tensor::new(vec![n, 3072], px)?,
        labels,
        class_count,
        channels: 3,
        height: 32,
        width: 32,
    })
}

pub fn cifar100_paths(root: &Path) -> [PathBuf; 2] {
    let dir = root.join("cifar-100-binary");
    [pick_variant(&dir, "train.bin"), pick_variant(&dir, "test.bin")]
}

pub fn load_cifar100(root: &Path) -> Result<(LabeledDataset, LabeledDataset)> {
    let p = cifar100_paths(root);
    Ok((load_cifar100_bin(&p[0])?, load_cifar100_bin(&p[1])?))
}

/// Per-channel mean and standard deviation over all samples.
pub fn channel_stats(ds: &LabeledDataset) -> (Vec<f32>, Vec<f32>) {
    let plane = ds.height * ds.width;
    let mut sum = vec![0.0f64; ds.channels];
    let mut sumsq = vec![0.0f64; ds.channels];
    for sample in ds.images.data().chunks_exact(ds.dim()) {
        for (c, chunk) in sample.chunks_exact(plane).enumerate() {
            for &v in chunk {
                sum[c] += v as f64;
                sumsq[c] += (v as f64) * (v as f64);
            }
        }
    }
    let count = (ds.len() * plane) as f64;
    let mut mean = Vec::with_capacity(ds.channels);
    let mut std = Vec::with_capacity(ds.channels);
    for c in 0..ds.channels {
        let m = sum[c] / count;
        mean.push(m as f32);
        std.push(((sumsq[c] / count - m * m).max(0.0)).sqrt() as f32);
    }
    (mean, std)
}

/// In-place (x - mean[c]) / std[c] per channel.
pub fn normalize(ds: &mut LabeledDataset, mean: &[f32], std: &[f32]) -> Result<()> {
    if mean.len() != ds.channels || std.len() != ds.channels {
        return Err(Error::Param(format!(
            "stats for {} channels, dataset has {}",
            mean.len(),
            ds.channels
        )));
    }
    if std.iter().any(|&s| s <= 0.0) {
        return Err(Error::Param("channel std must be positive".into()));
    }
    let plane = ds.height * ds.width;
    let channels = ds.channels;
    let dim = ds.dim();
    for sample in ds.images.data_mut().chunks_exact_mut(dim) {
        for c in 0..channels {
            for v in &mut sample[c * plane..(c + 1) * plane] {
                *v = (*v - mean[c]) / std[c];
            }
        }
    }
    Ok(())
}

/// One task of a class-incremental split: `task_id` is 1-based, `class_ids`
/// ascend, and the index lists point into the source datasets.
#[derive(Clone, Debug)]
pub struct TaskSplit {
    pub task_id: usize,
    pub class_ids: Vec<usize>,
    pub train_idx: Vec<u32>,
    pub test_idx: Vec<u32>,
}

/// Partitions classes into `num_tasks` contiguous ascending groups. Task t
/// (1-based) owns classes [(t-1)·s, t·s) with s = class_count / num_tasks.
pub fn split_tasks(
    train: &LabeledDataset,
    test: &LabeledDataset,
    num_tasks: usize,
) -> Result<Vec<TaskSplit>> {
    let classes = train.class_count.max(test.class_count);
    if num_tasks == 0 || classes % num_tasks != 0 {
        return Err(Error::Protocol(format!(
            "{classes} classes cannot split into {num_tasks} equal tasks"
        )));
    }
    let per = classes / num_tasks;
    let mut tasks: Vec<TaskSplit> = (0..num_tasks)
        .map(|t| TaskSplit {
            task_id: t + 1,
            class_ids: ((t * per)..((t + 1) * per)).collect(),
            train_idx: Vec::new(),
            test_idx: Vec::new(),
        })
        .collect();
    for (i, &l) in train.labels.iter().enumerate() {
        tasks[l / per].train_idx.push(i as u32);
    }
    for (i, &l) in test.labels.iter().enumerate() {
        tasks[l / per].test_idx.push(i as u32);
    }
    Ok(tasks)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_classes")]
    pub classes: usize,
    #[serde(default = "default_train_per_class")]
    pub train_per_class: usize,
    #[serde(default = "default_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "default_noise")]
    pub noise: f32,
    #[serde(default = "default_gen_seed")]
    pub gen_seed: u64,
}

fn default_classes() -> usize {
    10
}
fn default_train_per_class() -> usize {
    256
}
fn default_test_per_class() -> usize {
    64
}
fn default_noise() -> f32 {
    0.25
}
fn default_gen_seed() -> u64 {
    7
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: default_classes(),
            train_per_class: default_train_per_class(),
            test_per_class: default_test_per_class(),
            noise: default_noise(),
            gen_seed: default_gen_seed(),
        }
    }
}

/// Gaussian blobs around one fixed 8x8 pattern per class. Cheap enough for
/// tests and demos, hard enough that an untrained model sits at chance.
pub fn synthetic_blobs(spec: &SyntheticSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    if spec.classes == 0 || spec.train_per_class == 0 || spec.test_per_class == 0 {
        return Err(Error::Param("synthetic spec needs positive counts".into()));
    }
    const H: usize = 8;
    const W: usize = 8;
    let dim = H * W;
    let mut r = rng::stream(spec.gen_seed, rng::STREAM_SYNTH_DATA);
    let patterns: Vec<Vec<f32>> = (0..spec.classes)
        .map(|_| (0..dim).map(|_| 0.5 + rng::uniform_sym(&mut r, 0.5)).collect())
        .collect();
    let make = |per_class: usize, r: &mut ChaCha8Rng| -> Result<LabeledDataset> {
        let n = per_class * spec.classes;
        let mut px = Vec::with_capacity(n * dim);
        let mut labels = Vec::with_capacity(n);
        for (c, pat) in patterns.iter().enumerate() {
            for _ in 0..per_class {
                px.extend(pat.iter().map(|&p| p + spec.noise * rng::normal(r)));
                labels.push(c);
            }
        }
        Ok(LabeledDataset {
            images: Tensor::new(vec![n, dim], px)?,
            labels,
            class_count: spec.classes,
            channels: 1,
            height: H,
            width: W,
        })
    };
    let train = make(spec.train_per_class, &mut r)?;
    let test = make(spec.test_per_class, &mut r)?;
    Ok((train, test))
}
