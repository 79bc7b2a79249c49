//! Command-line front end. The binary target is a one-liner around
//! [`main`]; everything here is library code so integration tests can
//! exercise argument handling without spawning processes.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};

use crate::config::{self, DatasetId, ScenarioConfig};
use crate::continual::{run_scenario, RunRecord};
use crate::error::{Error, Result};
use crate::{data, gradcheck, report};

#[derive(Parser)]
#[command(
    name = "kancl",
    version,
    about = "KAN layers and continual-learning experiments",
    after_help = "Scenario fields can be overridden with dotted flags, e.g.\n  kancl run --config configs/split_mnist.json --model.family fastkan --replay.mode off"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the scenarios in an experiment file and write run records
    Run {
        /// Experiment file (JSON)
        #[arg(long)]
        config: PathBuf,
        /// Run a single seed instead of the file's seed list
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset root; falls back to $DATA_ROOT, then the file, then ./data
        #[arg(long)]
        data_root: Option<PathBuf>,
        /// Output directory; overrides the file's out_dir
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep only scenarios whose name contains this substring (repeatable)
        #[arg(long)]
        only: Vec<String>,
        /// Worker threads across independent (scenario, seed) jobs
        #[arg(long, default_value_t = 1)]
        parallel: usize,
    },
    /// Aggregate run records into a summary table, CSV, and plot series
    Report {
        /// Run record JSON files produced by `run`
        #[arg(required = true)]
        records: Vec<PathBuf>,
        /// Directory for summary.csv and .dat series
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Compare analytic gradients against finite differences
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Pulls `--section.field value` / `--section.field=value` tokens out of the
/// argument list before clap sees them. Dotted flags are config overrides,
/// not clap options.
fn extract_overrides(args: &mut Vec<String>) -> Result<Vec<(String, String)>> {
    let mut overrides = Vec::new();
    let mut kept = Vec::with_capacity(args.len());
    let mut it = std::mem::take(args).into_iter();
    // program name never participates
    if let Some(head) = it.next() {
        kept.push(head);
    }
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            kept.push(arg);
            continue;
        };
        let name = flag.split('=').next().unwrap_or(flag);
        if !name.contains('.') {
            kept.push(arg);
            continue;
        }
        if let Some((key, value)) = flag.split_once('=') {
            overrides.push((key.to_string(), value.to_string()));
        } else {
            let value = it
                .next()
                .filter(|v| !v.starts_with("--"))
                .ok_or_else(|| Error::Config(format!("override --{flag} needs a value")))?;
            overrides.push((flag.to_string(), value));
        }
    }
    *args = kept;
    Ok(overrides)
}

/// Checks every file a scenario will read, so a missing download fails fast
/// with exit code 3 instead of after the first scenario finishes training.
fn preflight(scenarios: &[ScenarioConfig], data_root: &Path) -> Result<()> {
    for s in scenarios {
        let paths: Vec<PathBuf> = match s.dataset {
            DatasetId::Mnist => data::mnist_paths(data_root).into(),
            DatasetId::Cifar100 => data::cifar100_paths(data_root).into(),
            DatasetId::Synthetic => Vec::new(),
        };
        for p in paths {
            if !p.is_file() {
                return Err(Error::DatasetMissing(p));
            }
        }
    }
    Ok(())
}

fn run_jobs(jobs: &[(ScenarioConfig, u64)], data_root: &Path, parallel: usize) -> Result<Vec<RunRecord>> {
    let done = |rec: &RunRecord| {
        println!(
            "done {name} seed {seed}: LA {la:.2}% AIA {aia:.2}% F_AvgG {f:.2}% ({secs:.1}s)",
            name = rec.name,
            seed = rec.seed,
            la = 100.0 * rec.metrics.last_accuracy,
            aia = 100.0 * rec.metrics.avg_incremental_accuracy,
            f = 100.0 * rec.metrics.avg_global_forgetting,
            secs = rec.total_seconds,
        );
    };
    if parallel <= 1 {
        let mut records = Vec::with_capacity(jobs.len());
        for (cfg, seed) in jobs {
            println!("run {} seed {seed} ({} tasks)", cfg.name, cfg.num_tasks);
            let rec = run_scenario(cfg, data_root, *seed)?;
            done(&rec);
            records.push(rec);
        }
        return Ok(records);
    }

    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunRecord>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..parallel.min(jobs.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((cfg, seed)) = jobs.get(i) else { break };
                let res = run_scenario(cfg, data_root, *seed);
                if let Ok(rec) = &res {
                    done(rec);
                }
                slots.lock().unwrap()[i] = Some(res);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every job index was claimed"))
        .collect()
}

fn cmd_run(
    config: &Path,
    overrides: &[(String, String)],
    seed: Option<u64>,
    data_root: Option<PathBuf>,
    out: Option<PathBuf>,
    only: &[String],
    parallel: usize,
) -> Result<()> {
    let exp = config::load_experiment(config, overrides)?;
    let seeds = seed.map(|s| vec![s]).unwrap_or(exp.seeds);
    let out_dir = out.unwrap_or(exp.out_dir);
    let data_root = data_root
        .or_else(|| std::env::var_os("DATA_ROOT").map(PathBuf::from))
        .or(exp.data_root)
        .unwrap_or_else(|| PathBuf::from("data"));

    let scenarios: Vec<ScenarioConfig> = exp
        .scenarios
        .iter()
        .filter(|s| only.is_empty() || only.iter().any(|o| s.name.contains(o.as_str())))
        .map(ScenarioConfig::resolve)
        .collect::<Result<_>>()?;
    if scenarios.is_empty() {
        return Err(Error::Config(format!(
            "no scenario name contains any of {only:?}"
        )));
    }
    preflight(&scenarios, &data_root)?;

    let jobs: Vec<(ScenarioConfig, u64)> = scenarios
        .iter()
        .flat_map(|s| seeds.iter().map(move |&seed| (s.clone(), seed)))
        .collect();
    let records = run_jobs(&jobs, &data_root, parallel)?;

    std::fs::create_dir_all(&out_dir)?;
    for rec in &records {
        let stem = out_dir.join(format!("{}_s{}", rec.name, rec.seed));
        let json = stem.with_extension("json");
        let mut text = serde_json::to_string_pretty(rec)
            .map_err(|e| Error::Param(format!("record encode: {e}")))?;
        text.push('\n');
        std::fs::write(&json, text)?;
        let csv = stem.with_extension("csv");
        std::fs::write(&csv, rec.matrix.to_csv())?;
        println!("wrote {} and {}", json.display(), csv.display());
    }

    println!();
    print!("{}", report::format_table(&report::summarize(&records)?));
    Ok(())
}

fn cmd_report(paths: &[PathBuf], out_dir: &Path) -> Result<()> {
    let records: Vec<RunRecord> = paths.iter().map(|p| report::load_record(p)).collect::<Result<_>>()?;
    let written = report::write_report(&records, out_dir)?;
    print!("{}", report::format_table(&report::summarize(&records)?));
    println!();
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_gradcheck(seed: u64) -> Result<()> {
    let reports = gradcheck::full_suite(seed)?;
    let mut failures = 0;
    for r in &reports {
        println!(
            "{:<30} rel {:>9.2e} (tol {:>5.0e})  max |d| {:>9.2e}  {:>4} elements  {}",
            r.name,
            r.worst,
            r.tol,
            r.worst_abs,
            r.elements,
            if r.passed() { "ok" } else { "FAIL" }
        );
        if !r.passed() {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(Error::Param(format!(
            "{failures} of {} gradient checks failed",
            reports.len()
        )));
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}

fn dispatch(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    match cli.cmd {
        Cmd::Run {
            config,
            seed,
            data_root,
            out,
            only,
            parallel,
        } => cmd_run(&config, overrides, seed, data_root, out, &only, parallel),
        Cmd::Report { records, out } => {
            if let Some((key, _)) = overrides.first() {
                return Err(Error::Config(format!(
                    "override --{key} only applies to the run subcommand"
                )));
            }
            cmd_report(&records, &out)
        }
        Cmd::Gradcheck { seed } => {
            if let Some((key, _)) = overrides.first() {
                return Err(Error::Config(format!(
                    "override --{key} only applies to the run subcommand"
                )));
            }
            cmd_gradcheck(seed)
        }
    }
}

/// Entry point shared by the `kancl` binary. Returns the process exit code:
/// 0 success, 2 config/usage, 3 missing dataset, 1 anything else.
pub fn main() -> i32 {
    let mut args: Vec<String> = std::env::args().collect();
    let overrides = match extract_overrides(&mut args) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too; they are not failures.
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli, &overrides) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
