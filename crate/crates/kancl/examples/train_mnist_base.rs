//! Trains one model on all ten MNIST classes at once (no task split) and
//! prints per-epoch loss and accuracy. Uses sample caps so it finishes in
//! about a minute on one core; pass `--full` for the whole training set.
//!
//!     cargo run --release --example train_mnist_base [mlp|kan|fastkan] [--full]
//!
//! Expects the IDX files under `$DATA_ROOT/mnist` (default `./data/mnist`);
//! run `scripts/fetch_mnist.sh` first.

use std::path::PathBuf;

use kancl::config::ScenarioConfig;
use kancl::continual::Harness;
use kancl::data;
use kancl::optim::Trainable;

fn main() -> kancl::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let family = args.iter().find(|a| !a.starts_with("--")).map(String::as_str).unwrap_or("kan");
    let full = args.iter().any(|a| a == "--full");

    let model = match family {
        "mlp" => serde_json::json!({"family": "mlp", "hidden": [128]}),
        "kan" => serde_json::json!({"family": "kan", "hidden": [64]}),
        "fastkan" => serde_json::json!({"family": "fastkan", "hidden": [64]}),
        other => return Err(kancl::Error::Config(format!("unknown family {other:?}"))),
    };
    let mut scenario = serde_json::json!({
        "name": "mnist_base",
        "dataset": "mnist",
        "num_tasks": 1,
        "epochs_first_task": if full { 7 } else { 3 },
        "model": model,
    });
    if !full {
        scenario["train_cap_per_task"] = 8000.into();
        scenario["eval_cap_per_task"] = 2000.into();
    }
    let cfg: ScenarioConfig =
        serde_json::from_value(scenario).map_err(|e| kancl::Error::Config(e.to_string()))?;

    let root = PathBuf::from(std::env::var("DATA_ROOT").unwrap_or_else(|_| "./data".into()));
    let (mut train, mut test) = data::load_mnist(&root)?;
    let (mean, std) = data::channel_stats(&train);
    data::normalize(&mut train, &mean, &std)?;
    data::normalize(&mut test, &mean, &std)?;
    println!(
        "mnist: {} train / {} test, pixel mean {:.4} std {:.4}",
        train.labels.len(),
        test.labels.len(),
        mean[0],
        std[0]
    );

    let mut harness = Harness::new(&cfg, &train, &test, 0)?;
    println!("family {family}: {} parameters\n", harness.model().param_count());
    let curve = harness.train_task(1, &mut None)?;
    for e in &curve.epochs {
        println!(
            "epoch {}: train loss {:.4} acc {:5.2}%   test loss {:.4} acc {:5.2}%   ({:.1}s)",
            e.epoch,
            e.train_loss,
            100.0 * e.train_acc,
            e.test_loss,
            100.0 * e.test_acc,
            e.seconds
        );
    }
    let (acc, _) = harness.evaluate_task(1, &mut None)?;
    println!("\nfinal test accuracy: {:.2}%", 100.0 * acc);
    Ok(())
}
