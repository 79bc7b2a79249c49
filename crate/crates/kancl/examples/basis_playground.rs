//! Walks the two basis families used by the KAN layers: cubic B-splines on a
//! uniform grid and Gaussian RBFs. Prints a partition-of-unity check, shows
//! how a single coefficient only moves the curve locally, and writes
//! plot-ready `.dat` files (x, basis values) to `basis_out/`.
//!
//!     cargo run --release --example basis_playground

use std::fs;
use std::io::Write;

use kancl::spline::{RbfGrid, SplineGrid};

fn main() -> kancl::Result<()> {
    let spline = SplineGrid::make(-1.0, 1.0, 5, 3)?;
    let rbf = RbfGrid::make(-1.0, 1.0, 8, None)?;

    println!("B-spline grid: size {}, order {}, {} basis functions", spline.grid_size(), spline.order(), spline.num_basis());
    println!("knots: {:?}", spline.knots().iter().map(|k| (k * 100.0).round() / 100.0).collect::<Vec<_>>());
    println!("RBF grid: {} centers, bandwidth {:.4}", rbf.num_basis(), rbf.bandwidth());
    println!();

    // Partition of unity: inside the grid range, B-spline bases of any order
    // sum to exactly 1. The RBF family does not have this property.
    let mut worst = 0.0f64;
    let mut row = vec![0.0; spline.num_basis()];
    for i in 0..=1000 {
        let x = -1.0 + 2.0 * i as f64 / 1000.0;
        spline.basis_row(x, &mut row);
        worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
    }
    println!("partition of unity, 1001 points in [-1,1]: worst |sum - 1| = {worst:.2e}");

    // Locality: bumping one spline coefficient changes the curve only on the
    // support of that basis function (k+1 grid cells). An RBF has global
    // support, but decays fast enough that far away the change is negligible.
    let coefs = vec![0.25f64; spline.num_basis()];
    let mut bumped = coefs.clone();
    bumped[3] += 1.0;
    let eval = |c: &[f64], x: f64, row: &mut [f64]| -> f64 {
        spline.basis_row(x, row);
        row.iter().zip(c).map(|(b, w)| b * w).sum()
    };
    println!("\nbump coefficient 3 by +1.0 and scan the curve:");
    for i in 0..=8 {
        let x = -1.0 + 2.0 * i as f64 / 8.0;
        let delta = eval(&bumped, x, &mut row) - eval(&coefs, x, &mut row);
        let marker = if delta.abs() > 1e-12 { "moved" } else { "untouched" };
        println!("  x = {x:+.2}   delta = {delta:+.4}   {marker}");
    }

    // Dump the full basis curves for plotting (gnuplot: plot for [i=2:10]
    // 'basis_out/spline.dat' u 1:i w l).
    fs::create_dir_all("basis_out").map_err(kancl::Error::Io)?;
    let dump = |name: &str, n: usize, f: &mut dyn FnMut(f64, &mut [f64])| -> kancl::Result<()> {
        let mut out = String::new();
        let mut row = vec![0.0; n];
        for i in 0..=400 {
            let x = -1.3 + 2.6 * i as f64 / 400.0;
            f(x, &mut row);
            out.push_str(&format!("{x:.4}"));
            for v in &row {
                out.push_str(&format!(" {v:.6}"));
            }
            out.push('\n');
        }
        let path = format!("basis_out/{name}.dat");
        let mut file = fs::File::create(&path).map_err(kancl::Error::Io)?;
        file.write_all(out.as_bytes()).map_err(kancl::Error::Io)?;
        println!("wrote {path}");
        Ok(())
    };
    println!();
    dump("spline", spline.num_basis(), &mut |x, row| spline.basis_row(x, row))?;
    dump("rbf", rbf.num_basis(), &mut |x, row| rbf.basis_row(x, row))?;
    Ok(())
}
