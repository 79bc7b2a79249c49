//! Acceptance gate: ten criteria, one PASS/FAIL line per criterion, all in
//! a single test so the report reads top to bottom in order.
//!
//! The heavy criteria train real models on full MNIST, so the gate takes
//! around half an hour on one desktop core. Criteria share runs where the
//! protocol is identical (C3 and C5 reuse C2's MLP runs instead of
//! retraining); where a criterion uses per-task sample caps, the caps are
//! explicit config fields echoed in the run records and named in the line.
//!
//! Every criterion reports its measured numbers either way — a FAIL line
//! states what was measured, not just that it missed.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use kancl::autodiff::Graph;
use kancl::config::{load_experiment, ScenarioConfig};
use kancl::continual::{build_model, run_scenario, RunRecord};
use kancl::data;
use kancl::error::Error;
use kancl::gradcheck::{full_suite, CheckReport};
use kancl::layers::{FlatNet, KanLinear};
use kancl::metrics::AccuracyMatrix;
use kancl::rng;
use kancl::spline::SplineGrid;
use kancl::tensor::Tensor;

type R<T> = Result<T, Error>;

fn data_root() -> PathBuf {
    std::env::var_os("DATA_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn preset(file: &str, name: &str) -> R<ScenarioConfig> {
    load_experiment(&config_path(file), &[])?
        .scenarios
        .into_iter()
        .find(|s| s.name == name)
        .ok_or_else(|| Error::Config(format!("{file} has no scenario named {name}")))
}

fn pct(x: f64) -> f64 {
    100.0 * x
}

fn mean<T>(xs: &[T], f: impl Fn(&T) -> f64) -> f64 {
    xs.iter().map(f).sum::<f64>() / xs.len() as f64
}

struct Gate {
    lines: Vec<String>,
    failed: Vec<&'static str>,
}

impl Gate {
    fn new() -> Gate {
        Gate { lines: Vec::new(), failed: Vec::new() }
    }

    fn run(&mut self, id: &'static str, f: impl FnOnce() -> R<(bool, String)>) {
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(Ok(pair)) => pair,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(payload) => {
                let msg = payload
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "opaque panic".into());
                (false, format!("panicked: {msg}"))
            }
        };
        let line = format!("{id:<3} {}  {detail}", if pass { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push(line);
        if !pass {
            self.failed.push(id);
        }
    }
}

#[test]
fn acceptance_criteria() {
    let root = data_root();
    let mut gate = Gate::new();

    // shared across criteria (filled by the criterion that computes them)
    let mlp_runs: RefCell<Option<Vec<RunRecord>>> = RefCell::new(None);
    let suite: RefCell<Option<Vec<CheckReport>>> = RefCell::new(None);

    // C1: one-task MNIST trains all three flat families to >= 97.0% test
    // accuracy within 10 epochs, <= 15 min per model.
    gate.run("C1", || {
        let exp = load_experiment(&config_path("mnist_base.json"), &[])?;
        let mut ok = true;
        let mut detail = String::from("base MNIST (>=97.0% within 10 epochs): ");
        for sc in &exp.scenarios {
            let rec = run_scenario(sc, &root, 0)?;
            let acc = rec.matrix.a(1, 1)?;
            let epochs = rec.scenario.epochs_first_task.unwrap_or(usize::MAX);
            ok &= acc >= 0.97 && epochs <= 10 && rec.total_seconds <= 900.0;
            let _ = write!(
                detail,
                "{} {:.2}% ({} epochs, {:.0}s) ",
                rec.family,
                pct(acc),
                epochs,
                rec.total_seconds
            );
        }
        Ok((ok, detail))
    });

    // C2: split-MNIST over the preset's 3 seeds — EfficientKAN mean AIA
    // must exceed the MLP's by >= 3 points and its mean LA must be higher.
    gate.run("C2", || {
        let exp = load_experiment(&config_path("split_mnist.json"), &[])?;
        let seeds = exp.seeds.clone();
        let run_all = |name: &str| -> R<Vec<RunRecord>> {
            let sc = preset("split_mnist.json", name)?;
            seeds.iter().map(|&s| run_scenario(&sc, &root, s)).collect()
        };
        let mlp = run_all("mlp")?;
        let kan = run_all("kan")?;
        let m_aia = pct(mean(&mlp, |r| r.metrics.avg_incremental_accuracy));
        let k_aia = pct(mean(&kan, |r| r.metrics.avg_incremental_accuracy));
        let m_la = pct(mean(&mlp, |r| r.metrics.last_accuracy));
        let k_la = pct(mean(&kan, |r| r.metrics.last_accuracy));
        let pass = k_aia - m_aia >= 3.0 && k_la > m_la;
        let detail = format!(
            "split-MNIST over seeds {:?}: kan AIA {:.2}% vs mlp {:.2}% (delta {:+.2}, need >= +3.00); \
             kan LA {:.2}% vs mlp {:.2}% (need higher)",
            seeds, k_aia, m_aia, k_aia - m_aia, k_la, m_la
        );
        *mlp_runs.borrow_mut() = Some(mlp);
        Ok((pass, detail))
    });

    // C3: catastrophic forgetting exists — the MLP's task-1 accuracy after
    // task 5 is at most half its just-trained value, every seed.
    gate.run("C3", || {
        let runs = mlp_runs.borrow();
        let Some(runs) = runs.as_ref() else {
            return Ok((false, "no MLP runs available (C2 did not complete)".into()));
        };
        let mut ok = true;
        let mut detail = String::from("mlp a[1][5] <= 0.5*a[1][1]: ");
        for r in runs {
            let a11 = r.matrix.a(1, 1)?;
            let a15 = r.matrix.a(1, 5)?;
            ok &= a15 <= 0.5 * a11;
            let _ = write!(detail, "seed {}: {:.2}% -> {:.2}%  ", r.seed, pct(a11), pct(a15));
        }
        Ok((ok, detail))
    });

    // C4: the ViT swap experiment completes the 5-task MNIST protocol with
    // full 5x5 matrices. Asserted: protocol validity, determinism, the
    // FFN-swap invariant, and the full-model gradient check. The paper's
    // ViT accuracy deltas are NOT asserted (not reproducible at this
    // scale); sample caps keep the runs tractable and are echoed in the
    // records.
    gate.run("C4", || {
        // swap invariant: same seed, different ffn_kind, every non-FFN
        // tensor bit-identical
        let vm = preset("split_mnist_vit.json", "vit_mlp")?.resolve()?;
        let vk = preset("split_mnist_vit.json", "vit_kan")?.resolve()?;
        let dict_m = build_model(&vm, 1, 28, 28, 10, 0)?.state_dict();
        let dict_k = build_model(&vk, 1, 28, 28, 10, 0)?.state_dict();
        let mut shared = 0usize;
        let mut shared_equal = true;
        let mut ffn_m = 0usize;
        let names_k: std::collections::HashMap<&str, &Tensor> =
            dict_k.iter().map(|(n, t)| (n.as_str(), t)).collect();
        for (name, t) in &dict_m {
            if name.contains(".ffn.") {
                ffn_m += 1;
                continue;
            }
            shared += 1;
            match names_k.get(name.as_str()) {
                Some(u) => {
                    let same = t.shape() == u.shape()
                        && t.data().iter().zip(u.data()).all(|(a, b)| a.to_bits() == b.to_bits());
                    shared_equal &= same;
                }
                None => shared_equal = false,
            }
        }
        let swap_ok = shared_equal && shared > 0 && ffn_m > 0;

        // full-model gradient check (shared with C7)
        let reports = full_suite(0)?;
        let vit_grad_ok = ["vit_mlp", "vit_kan", "vit_fastkan"].iter().all(|n| {
            reports.iter().any(|r| r.name == *n && r.passed())
        });
        *suite.borrow_mut() = Some(reports);

        // capped 5-task runs: full matrices, sequential class pairs, and a
        // byte-identical same-seed rerun
        let cap = |sc: &ScenarioConfig| {
            let mut sc = sc.clone();
            sc.train_cap_per_task = Some(800);
            sc.eval_cap_per_task = Some(400);
            sc
        };
        let cm = cap(&preset("split_mnist_vit.json", "vit_mlp")?);
        let ck = cap(&preset("split_mnist_vit.json", "vit_kan")?);
        let a = run_scenario(&cm, &root, 0)?;
        let b = run_scenario(&cm, &root, 0)?;
        let k = run_scenario(&ck, &root, 0)?;
        let pairs: Vec<Vec<usize>> = (0..5).map(|t| vec![2 * t, 2 * t + 1]).collect();
        let protocol_ok = a.matrix.num_tasks() == 5
            && k.matrix.num_tasks() == 5
            && a.task_classes == pairs
            && k.task_classes == pairs
            && a.scenario.train_cap_per_task == Some(800)
            && k.scenario.eval_cap_per_task == Some(400);
        let det_ok = a.matrix.to_csv() == b.matrix.to_csv();

        let pass = swap_ok && vit_grad_ok && protocol_ok && det_ok;
        let detail = format!(
            "vit swap: {shared} non-FFN tensors bit-identical across ffn kinds ({ffn_m} FFN tensors differ); \
             vit grad checks {}; 5x5 matrices complete at caps 800/400 (echoed in records); \
             same-seed rerun byte-identical: {}; paper ViT deltas not asserted",
            if vit_grad_ok { "pass" } else { "FAIL" },
            det_ok
        );
        Ok((pass, detail))
    });

    // C5: replay with loss_scale 0.5 lifts AIA by >= 5 points for the same
    // model and seed set. The no-replay arm reuses C2's MLP runs after
    // verifying the two presets resolve to the same protocol.
    gate.run("C5", || {
        let exp = load_experiment(&config_path("split_mnist_replay.json"), &[])?;
        let seeds = exp.seeds.clone();
        let noreplay_sc = preset("split_mnist_replay.json", "mlp_noreplay")?.resolve()?;
        let replay_sc = preset("split_mnist_replay.json", "mlp_replay")?;

        // reuse C2's runs only if they really are the same scenario
        let reused_base = {
            let runs = mlp_runs.borrow();
            match runs.as_ref() {
                Some(rs) if rs.iter().map(|r| r.seed).collect::<Vec<_>>() == seeds => {
                    let mut c2 = preset("split_mnist.json", "mlp")?.resolve()?;
                    c2.name = noreplay_sc.name.clone();
                    if serde_json::to_value(&c2).map_err(|e| Error::Config(e.to_string()))?
                        == serde_json::to_value(&noreplay_sc)
                            .map_err(|e| Error::Config(e.to_string()))?
                    {
                        Some(mean(rs, |r| r.metrics.avg_incremental_accuracy))
                    } else {
                        None
                    }
                }
                _ => None,
            }
        };
        let (base_frac, provenance) = match reused_base {
            Some(aia) => (aia, "no-replay arm reused from C2"),
            None => {
                let rs = seeds
                    .iter()
                    .map(|&s| run_scenario(&noreplay_sc, &root, s))
                    .collect::<R<Vec<_>>>()?;
                (mean(&rs, |r| r.metrics.avg_incremental_accuracy), "no-replay arm retrained")
            }
        };
        let replay = seeds
            .iter()
            .map(|&s| run_scenario(&replay_sc, &root, s))
            .collect::<R<Vec<_>>>()?;
        let base = pct(base_frac);
        let lift = pct(mean(&replay, |r| r.metrics.avg_incremental_accuracy));
        let pass = lift - base >= 5.0;
        let detail = format!(
            "mlp replay (200/class, loss_scale 0.5) AIA {:.2}% vs no-replay {:.2}% over seeds {:?} \
             (delta {:+.2}, need >= +5.00); {}",
            lift, base, seeds, lift - base, provenance
        );
        Ok((pass, detail))
    });

    // C6: metric implementations match naive-loop oracles exactly on 1,000
    // random lower-triangular matrices, and Eq. 9 telescopes to 1e-12.
    gate.run("C6", || {
        let mut r = rng::stream(2024, 40);
        let mut worst_tel = 0.0f64;
        for trial in 0..1000usize {
            let k = 1 + trial % 8;
            let cols: Vec<Vec<f64>> = (1..=k)
                .map(|b| (0..b).map(|_| rng::uniform01(&mut r) as f64).collect())
                .collect();
            let m = AccuracyMatrix::from_columns(&cols)?;

            // naive loops straight from the definitions
            let avg = |b: usize| -> f64 {
                let mut s = 0.0;
                for c in 1..=b {
                    s += cols[b - 1][c - 1];
                }
                s / b as f64
            };
            let la = avg(k);
            let aia = {
                let mut s = 0.0;
                for b in 1..=k {
                    s += avg(b);
                }
                s / k as f64
            };
            let mut fg = vec![avg(1) - avg(1)];
            for t in 2..=k {
                fg.push(avg(t - 1) - avg(t));
            }
            let favg = fg.iter().sum::<f64>() / k as f64;
            let classical = if k == 1 {
                0.0
            } else {
                let mut s = 0.0;
                for c in 1..k {
                    let mut best = f64::NEG_INFINITY;
                    for b in c..=k {
                        best = best.max(m.a(c, b)?);
                    }
                    s += best - m.a(c, k)?;
                }
                s / (k - 1) as f64
            };

            assert_eq!(m.last_accuracy()?, la, "LA mismatch at trial {trial}");
            assert_eq!(m.avg_incremental_accuracy()?, aia, "AIA mismatch at trial {trial}");
            assert_eq!(m.global_forgetting()?, fg, "F_G mismatch at trial {trial}");
            assert_eq!(m.avg_global_forgetting()?, favg, "F_AvgG mismatch at trial {trial}");
            assert_eq!(
                m.classical_avg_forgetting()?,
                classical,
                "classical forgetting mismatch at trial {trial}"
            );

            let tel = (m.avg_global_forgetting()? - (avg(1) - la) / k as f64).abs();
            worst_tel = worst_tel.max(tel);
        }
        let pass = worst_tel <= 1e-12;
        Ok((
            pass,
            format!(
                "1000 random matrices (K<=8): LA/AIA/F_G/F_AvgG/classical all exactly equal \
                 naive-loop oracles; worst telescoping residual {worst_tel:.2e} (tol 1e-12)"
            ),
        ))
    });

    // C7: the finite-difference suite passes everywhere, and B-spline
    // partition of unity holds to 1e-9 across a matrix of test grids.
    gate.run("C7", || {
        let mut cache = suite.borrow_mut();
        if cache.is_none() {
            *cache = Some(full_suite(0)?);
        }
        let reports = cache.as_ref().expect("just filled");
        let all_pass = reports.iter().all(|r| r.passed());
        let n_checks = reports.len();
        let worst = reports
            .iter()
            .map(|r| r.worst)
            .fold(0.0f64, f64::max);

        let mut worst_pou = 0.0f64;
        let mut grids = 0usize;
        for &(g, k) in &[(3usize, 1usize), (5, 2), (5, 3), (8, 3), (12, 2)] {
            for &(lo, hi) in &[(-1.0f64, 1.0f64), (-2.0, 2.0), (0.0, 1.0)] {
                let grid = SplineGrid::make(lo, hi, g, k)?;
                let mut row = vec![0.0f64; grid.num_basis()];
                for i in 0..=500 {
                    let x = lo + (hi - lo) * i as f64 / 500.0;
                    grid.basis_row(x, &mut row);
                    worst_pou = worst_pou.max((row.iter().sum::<f64>() - 1.0).abs());
                }
                grids += 1;
            }
        }
        let pass = all_pass && worst_pou <= 1e-9;
        Ok((
            pass,
            format!(
                "{n_checks} gradient checks pass (ops tol 1e-3, nets/vit 1e-2; worst floored rel \
                 {worst:.1e}); partition of unity max dev {worst_pou:.1e} over {grids} grids x 501 pts (tol 1e-9)"
            ),
        ))
    });

    // C8: spline-gradient locality — a single sample's backward pass through
    // a base-branch-disabled KAN layer leaves all but (order+1) coefficient
    // slices per edge exactly zero, while an MLP control gets nonzero
    // gradient in every first-layer weight.
    gate.run("C8", || {
        let grid = SplineGrid::make(-1.0, 1.0, 5, 3)?;
        let nb = grid.num_basis(); // 8
        let mut r = rng::stream(0, 77);
        let mut layer = KanLinear::init(6, 4, grid, &mut r)?;
        layer.base_weight = Tensor::full(vec![4, 6], 0.0); // base branch off
        let x = Tensor::new(vec![1, 6], vec![-0.83, -0.41, -0.05, 0.33, 0.61, 0.87])?;
        let mut g = Graph::new();
        let xv = g.input(x);
        let mut bound = Vec::new();
        let y = layer.forward(&mut g, xv, &mut bound)?;
        let loss = g.sum(y)?;
        g.backward(loss)?;
        let cg = g
            .grad(bound[1])
            .ok_or_else(|| Error::Param("spline coefficients received no gradient".into()))?;
        let mut kan_ok = true;
        let mut min_nz = usize::MAX;
        let mut max_nz = 0usize;
        for o in 0..4 {
            for i in 0..6 {
                let slice = &cg.data()[(o * 6 + i) * nb..][..nb];
                let nz = slice.iter().filter(|v| **v != 0.0).count();
                min_nz = min_nz.min(nz);
                max_nz = max_nz.max(nz);
                kan_ok &= nz >= 1 && nz <= 4;
            }
        }

        let net = FlatNet::mlp(&[6, 8, 4], 0)?;
        let x = Tensor::new(vec![1, 6], vec![0.7, -0.45, 0.3, -0.8, 0.55, -0.2])?;
        let mut g = Graph::new();
        let xv = g.input(x);
        let mut bound = Vec::new();
        let y = net.forward(&mut g, xv, &mut bound)?;
        let loss = g.sum(y)?;
        g.backward(loss)?;
        let wg = g
            .grad(bound[0])
            .ok_or_else(|| Error::Param("mlp first layer received no gradient".into()))?;
        let mlp_nz = wg.data().iter().filter(|v| **v != 0.0).count();
        let mlp_ok = mlp_nz == wg.numel();

        let pass = kan_ok && mlp_ok;
        Ok((
            pass,
            format!(
                "kan edges touch {min_nz}..{max_nz} of {nb} coefficient slices (allowed <= k+1 = 4, \
                 rest exactly zero); mlp control: {mlp_nz}/{} first-layer weight grads nonzero",
                wg.numel()
            ),
        ))
    });

    // C9: loaders are bit-exact on counts, shapes, and label histograms;
    // corrupted fixtures raise the documented errors.
    gate.run("C9", || {
        const MNIST_TRAIN_HIST: [usize; 10] =
            [5923, 6742, 5958, 6131, 5842, 5421, 5918, 6265, 5851, 5949];
        const MNIST_TEST_HIST: [usize; 10] =
            [980, 1135, 1032, 1010, 982, 892, 958, 1028, 974, 1009];

        let (tr, te) = data::load_mnist(&root)?;
        let mnist_ok = tr.len() == 60000
            && te.len() == 10000
            && tr.dim() == 784
            && (tr.channels, tr.height, tr.width) == (1, 28, 28)
            && tr.class_count == 10
            && tr.histogram() == MNIST_TRAIN_HIST
            && te.histogram() == MNIST_TEST_HIST;
        drop((tr, te));

        let (ctr, cte) = data::load_cifar100(&root)?;
        let cifar_ok = ctr.len() == 50000
            && cte.len() == 10000
            && ctr.dim() == 3072
            && (ctr.channels, ctr.height, ctr.width) == (3, 32, 32)
            && ctr.class_count == 100
            && ctr.histogram().iter().all(|&n| n == 500)
            && cte.histogram().iter().all(|&n| n == 100);
        drop((ctr, cte));

        // corrupted fixtures
        let dir = tempfile::tempdir()?;
        let be = |v: u32| v.to_be_bytes();
        let write = |name: &str, bytes: &[u8]| -> R<PathBuf> {
            let p = dir.path().join(name);
            std::fs::write(&p, bytes)?;
            Ok(p)
        };
        let images = |n: u32, rows: u32, cols: u32| -> Vec<u8> {
            let mut v = Vec::new();
            v.extend(be(2051));
            v.extend(be(n));
            v.extend(be(rows));
            v.extend(be(cols));
            v.extend(std::iter::repeat(7u8).take((n * rows * cols) as usize));
            v
        };
        let labels = |n: u32| -> Vec<u8> {
            let mut v = Vec::new();
            v.extend(be(2049));
            v.extend(be(n));
            v.extend(std::iter::repeat(1u8).take(n as usize));
            v
        };
        let good_images = write("imgs", &images(2, 2, 2))?;
        let good_labels = write("labs", &labels(2))?;

        let expect_format = |res: R<data::LabeledDataset>, needle: &str| -> bool {
            match res {
                Err(Error::DataFormat { reason, .. }) => reason.contains(needle),
                _ => false,
            }
        };
        let mut fixtures_ok = true;

        let bad_magic = write("bad_magic", &{
            let mut v = images(2, 2, 2);
            v[..4].copy_from_slice(&be(2052));
            v
        })?;
        fixtures_ok &= expect_format(data::load_idx_pair(&bad_magic, &good_labels), "bad magic");

        let truncated = write("truncated", &be(2051)[..2].to_vec())?;
        fixtures_ok &=
            expect_format(data::load_idx_pair(&truncated, &good_labels), "truncated header");

        let short = write("short", &{
            let mut v = images(2, 2, 2);
            v.truncate(16 + 5);
            v
        })?;
        fixtures_ok &= expect_format(data::load_idx_pair(&short, &good_labels), "payload is");

        let extra_labels = write("extra", &labels(3))?;
        fixtures_ok &=
            expect_format(data::load_idx_pair(&good_images, &extra_labels), "labels for");

        let ragged = write("ragged.bin", &[0u8; 100])?;
        fixtures_ok &=
            expect_format(data::load_cifar100_bin(&ragged), "not a positive multiple");

        let missing = match data::load_mnist(dir.path()) {
            Err(e @ Error::DatasetMissing(_)) => e.exit_code() == 3,
            _ => false,
        };
        fixtures_ok &= missing;

        let pass = mnist_ok && cifar_ok && fixtures_ok;
        Ok((
            pass,
            format!(
                "mnist 60000/10000 at 1x28x28 with exact label histograms: {mnist_ok}; \
                 cifar-100 50000/10000 at 3x32x32, 500/100 per class: {cifar_ok}; \
                 6 corrupted/missing fixtures raise the documented errors: {fixtures_ok}"
            ),
        ))
    });

    // C10: repeated same-seed runs of a preset produce byte-identical
    // accuracy-matrix CSVs.
    gate.run("C10", || {
        let exp = load_experiment(&config_path("quick_synthetic.json"), &[])?;
        let mut pairs = 0usize;
        let mut ok = true;
        for sc in &exp.scenarios {
            for &seed in &exp.seeds {
                let a = run_scenario(sc, &root, seed)?.matrix.to_csv();
                let b = run_scenario(sc, &root, seed)?.matrix.to_csv();
                ok &= a == b;
                pairs += 1;
            }
        }
        Ok((
            ok,
            format!(
                "{pairs} preset (scenario, seed) pairs from quick_synthetic.json rerun: \
                 all AccuracyMatrix CSVs byte-identical"
            ),
        ))
    });

    assert!(
        gate.failed.is_empty(),
        "{} of 10 criteria failed: {:?}\n{}",
        gate.failed.len(),
        gate.failed,
        gate.lines.join("\n")
    );
}
