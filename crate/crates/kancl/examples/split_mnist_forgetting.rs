//! Split-MNIST head to head: trains an MLP and a spline-KAN through the five
//! two-class tasks sequentially, then prints each model's accuracy matrix and
//! the forgetting metrics side by side. Sample caps keep the demo to a few
//! minutes on one core; pass `--full` for the real protocol.
//!
//!     cargo run --release --example split_mnist_forgetting [--full]
//!
//! Expects `$DATA_ROOT/mnist` (default `./data/mnist`); see scripts/.

use std::path::PathBuf;

use kancl::config::ScenarioConfig;
use kancl::continual::run_scenario;

fn scenario(name: &str, model: serde_json::Value, full: bool) -> kancl::Result<ScenarioConfig> {
    let mut doc = serde_json::json!({
        "name": name,
        "dataset": "mnist",
        "num_tasks": 5,
        "model": model,
    });
    if !full {
        doc["epochs_first_task"] = 3.into();
        doc["epochs_other_tasks"] = 2.into();
        doc["train_cap_per_task"] = 3000.into();
        doc["eval_cap_per_task"] = 1000.into();
    }
    serde_json::from_value(doc).map_err(|e| kancl::Error::Config(e.to_string()))
}

fn main() -> kancl::Result<()> {
    let full = std::env::args().any(|a| a == "--full");
    let root = PathBuf::from(std::env::var("DATA_ROOT").unwrap_or_else(|_| "./data".into()));

    let pairs = [
        ("mlp", serde_json::json!({"family": "mlp", "hidden": [128]})),
        ("kan", serde_json::json!({"family": "kan", "hidden": [64]})),
    ];

    let mut records = Vec::new();
    for (name, model) in pairs {
        let cfg = scenario(name, model, full)?;
        println!("training {name} through 5 tasks...");
        let rec = run_scenario(&cfg, &root, 0)?;
        println!(
            "  done in {:.0}s ({} parameters)\n",
            rec.total_seconds, rec.param_count
        );
        records.push(rec);
    }

    for rec in &records {
        println!("{} accuracy matrix (rows: task, cols: after task b):", rec.name);
        let n = rec.matrix.num_tasks();
        print!("        ");
        for b in 1..=n {
            print!("   b={b}  ");
        }
        println!();
        for t in 1..=n {
            print!("  task {t}");
            for b in 1..=n {
                if t <= b {
                    print!("  {:5.1}% ", 100.0 * rec.matrix.a(t, b)?);
                } else {
                    print!("     .  ");
                }
            }
            println!();
        }
        println!();
    }

    println!("{:<6}{:>18}{:>18}{:>18}{:>18}", "", "last acc", "avg incremental", "avg global forg", "classical forg");
    for rec in &records {
        let m = &rec.metrics;
        println!(
            "{:<6}{:>17.2}%{:>17.2}%{:>17.2}%{:>17.2}%",
            rec.name,
            100.0 * m.last_accuracy,
            100.0 * m.avg_incremental_accuracy,
            100.0 * m.avg_global_forgetting,
            100.0 * m.classical_avg_forgetting
        );
    }
    println!("\n(forgetting: lower is better; accuracies: higher is better)");
    Ok(())
}
