//! Loads MNIST (and CIFAR-100 when present) straight from the binary files,
//! prints shapes, label histograms, channel statistics, and the class-split
//! task layout the continual harness would use.
//!
//!     cargo run --release --example dataset_stats
//!
//! Reads `$DATA_ROOT` (default `./data`); fetch datasets with scripts/.

use std::path::PathBuf;

use kancl::data::{self, LabeledDataset};

fn describe(name: &str, train: &LabeledDataset, test: &LabeledDataset, num_tasks: usize) -> kancl::Result<()> {
    println!("{name}:");
    println!(
        "  train {} x {}c{}x{}   test {}",
        train.labels.len(),
        train.channels,
        train.height,
        train.width,
        test.labels.len()
    );

    let mut hist = vec![0usize; train.class_count];
    for &l in &train.labels {
        hist[l] += 1;
    }
    let lo = hist.iter().min().unwrap();
    let hi = hist.iter().max().unwrap();
    println!("  {} classes, train per-class count range [{lo}, {hi}]", train.class_count);

    let (mean, std) = data::channel_stats(train);
    print!("  channel mean/std:");
    for (m, s) in mean.iter().zip(&std) {
        print!(" {m:.4}/{s:.4}");
    }
    println!();

    let tasks = data::split_tasks(train, test, num_tasks)?;
    println!("  {num_tasks}-task split:");
    for t in &tasks {
        println!(
            "    task {}: classes {:?}, {} train / {} test",
            t.task_id,
            t.class_ids,
            t.train_idx.len(),
            t.test_idx.len()
        );
    }
    println!();
    Ok(())
}

fn main() -> kancl::Result<()> {
    let root = PathBuf::from(std::env::var("DATA_ROOT").unwrap_or_else(|_| "./data".into()));

    let (train, test) = data::load_mnist(&root)?;
    describe("mnist", &train, &test, 5)?;

    match data::load_cifar100(&root) {
        Ok((train, test)) => describe("cifar100", &train, &test, 10)?,
        Err(kancl::Error::DatasetMissing(_)) => {
            println!("cifar100: not present under {} (scripts/fetch_cifar100.sh)", root.display());
        }
        Err(e) => return Err(e),
    }
    Ok(())
}
