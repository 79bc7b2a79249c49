//! Runs the built-in gradient-check suite (every op, every layer family,
//! the ViT with each FFN kind) and then shows how to check a custom
//! composite function with `check_fn`.
//!
//!     cargo run --release --example gradient_check [seed]

use kancl::gradcheck::{check_fn, full_suite};
use kancl::tensor::Tensor;

fn main() -> kancl::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse().expect("seed")).unwrap_or(0);

    println!("built-in suite (seed {seed}):");
    let mut failures = 0;
    for report in full_suite(seed)? {
        println!(
            "  {:<30} rel {:>9.2e} (tol {:>5.0e})  max |d| {:>9.2e}  {:>4} elements  {}",
            report.name,
            report.worst,
            report.tol,
            report.worst_abs,
            report.elements,
            if report.passed() { "ok" } else { "FAIL" }
        );
        if !report.passed() {
            failures += 1;
        }
    }
    if failures > 0 {
        return Err(kancl::Error::Param(format!("{failures} checks failed")));
    }

    // Checking your own function: build any scalar loss from graph ops and
    // check_fn compares the tape's gradients against central differences for
    // every element of every input tensor.
    let a = Tensor::new(vec![3, 4], (0..12).map(|i| 0.1 * i as f32 - 0.5).collect())?;
    let b = Tensor::new(vec![4, 2], (0..8).map(|i| 0.2 * i as f32 - 0.7).collect())?;
    let report = check_fn("silu(a.matmul(b)).sum", &[a, b], 1e-3, 3e-3, |g, vars| {
        let prod = g.matmul(vars[0], vars[1])?;
        let act = g.silu(prod)?;
        g.sum(act)
    })?;
    println!(
        "\ncustom check: {} -> max |d| {:.2e} over {} elements ({})",
        report.name,
        report.worst_abs,
        report.elements,
        if report.passed() { "ok" } else { "FAIL" }
    );
    if !report.passed() {
        return Err(kancl::Error::Param("custom check failed".into()));
    }
    Ok(())
}
