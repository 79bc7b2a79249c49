//! B-spline and Gaussian-RBF basis evaluation on uniform extended grids.
//!
//! All arithmetic here is f64 internally; callers cast to f32 at the tensor
//! boundary. Grids are immutable after construction and the evaluators are
//! pure, so everything in this module is safe to call concurrently.

use crate::error::{Error, Result};

/// Uniform knot grid for degree-`k` B-splines over `[lo, hi]` with `g`
/// interior intervals, extended by `k` knots beyond each end. Yields
/// `g + k` basis functions over `g + 2k + 1` knots.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineGrid {
    k: usize,
    lo: f64,
    hi: f64,
    g: usize,
    knots: Vec<f64>,
}

impl SplineGrid {
    pub fn make(lo: f64, hi: f64, g: usize, k: usize) -> Result<SplineGrid> {
        if !(lo < hi) {
            return Err(Error::Param(format!("spline grid needs lo < hi, got [{lo}, {hi}]")));
        }
        if g == 0 {
            return Err(Error::Param("spline grid needs at least one interval".into()));
        }
        let step = (hi - lo) / g as f64;
        let knots: Vec<f64> = (0..g + 2 * k + 1)
            .map(|i| lo + (i as f64 - k as f64) * step)
            .collect();
        Ok(SplineGrid { k, lo, hi, g, knots })
    }

    pub fn order(&self) -> usize {
        self.k
    }

    pub fn grid_size(&self) -> usize {
        self.g
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn num_basis(&self) -> usize {
        self.g + self.k
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    fn step(&self) -> f64 {
        (self.hi - self.lo) / self.g as f64
    }

    /// Index of the degree-0 interval containing x, or None outside the
    /// extended knot span. `x == hi` maps to the interval ending at hi so the
    /// right domain edge keeps partition of unity at every degree.
    fn interval_of(&self, x: f64) -> Option<usize> {
        let m = self.knots.len() - 1; // number of intervals
        if x < self.knots[0] || x >= self.knots[m] {
            if x == self.hi {
                // degenerate grids (g + 2k == 1) still land here
                return Some(m - 1);
            }
            return None;
        }
        let right_edge = m - self.k; // knot index of hi
        if x == self.knots[right_edge] {
            return Some(right_edge - 1);
        }
        let mut i = (((x - self.knots[0]) / self.step()) as usize).min(m - 1);
        // float fuzz near knots: nudge into the half-open invariant
        while i > 0 && x < self.knots[i] {
            i -= 1;
        }
        while i + 1 < m && x >= self.knots[i + 1] {
            i += 1;
        }
        Some(i)
    }

    /// Cox-de Boor values B_i(x) for all `num_basis()` functions.
    pub fn basis_row(&self, x: f64, out: &mut [f64]) {
        self.table_into(x, out, None);
    }

    /// Basis values and their x-derivatives in one pass.
    pub fn basis_and_deriv_row(&self, x: f64, out: &mut [f64], deriv: &mut [f64]) {
        self.table_into(x, out, Some(deriv));
    }

    fn table_into(&self, x: f64, out: &mut [f64], deriv: Option<&mut [f64]>) {
        let nb = self.num_basis();
        debug_assert_eq!(out.len(), nb);
        out.iter_mut().for_each(|v| *v = 0.0);
        if let Some(d) = &deriv {
            debug_assert_eq!(d.len(), nb);
        }

        let m = self.knots.len() - 1;
        let t = &self.knots;
        // full degree-0 row over all intervals, then raise degree in place
        let mut n = vec![0.0f64; m];
        match self.interval_of(x) {
            Some(i0) => n[i0] = 1.0,
            None => {
                if let Some(d) = deriv {
                    d.iter_mut().for_each(|v| *v = 0.0);
                }
                return;
            }
        }
        let mut prev = Vec::new(); // degree k-1 row, kept for the derivative
        for d in 1..=self.k {
            if d == self.k {
                prev = n.clone();
            }
            for i in 0..m - d {
                let left = {
                    let den = t[i + d] - t[i];
                    if n[i] != 0.0 { (x - t[i]) / den * n[i] } else { 0.0 }
                };
                let right = {
                    let den = t[i + d + 1] - t[i + 1];
                    if n[i + 1] != 0.0 { (t[i + d + 1] - x) / den * n[i + 1] } else { 0.0 }
                };
                n[i] = left + right;
            }
        }
        out.copy_from_slice(&n[..nb]);

        if let Some(dv) = deriv {
            let k = self.k;
            if k == 0 {
                dv.iter_mut().for_each(|v| *v = 0.0);
            } else {
                // B'_{i,k} = k [ N_{i,k-1}/(t_{i+k}-t_i) - N_{i+1,k-1}/(t_{i+k+1}-t_{i+1}) ]
                for i in 0..nb {
                    let a = prev[i] / (t[i + k] - t[i]);
                    let b = prev[i + 1] / (t[i + k + 1] - t[i + 1]);
                    dv[i] = k as f64 * (a - b);
                }
            }
        }
    }
}

/// Uniformly spaced Gaussian bumps over `[lo, hi]`: φ_i(x) = exp(-((x-c_i)/h)²).
#[derive(Clone, Debug, PartialEq)]
pub struct RbfGrid {
    centers: Vec<f64>,
    h: f64,
}

impl RbfGrid {
    pub fn make(lo: f64, hi: f64, count: usize, bandwidth: Option<f64>) -> Result<RbfGrid> {
        if !(lo < hi) {
            return Err(Error::Param(format!("rbf grid needs lo < hi, got [{lo}, {hi}]")));
        }
        if count == 0 {
            return Err(Error::Param("rbf grid needs at least one center".into()));
        }
        let centers: Vec<f64> = if count == 1 {
            vec![(lo + hi) / 2.0]
        } else {
            let step = (hi - lo) / (count - 1) as f64;
            (0..count).map(|i| lo + i as f64 * step).collect()
        };
        let default_h = if count > 1 { centers[1] - centers[0] } else { hi - lo };
        let h = bandwidth.unwrap_or(default_h);
        if !(h > 0.0) {
            return Err(Error::Param(format!("rbf bandwidth must be positive, got {h}")));
        }
        Ok(RbfGrid { centers, h })
    }

    pub fn num_basis(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn basis_row(&self, x: f64, out: &mut [f64]) {
        for (o, &c) in out.iter_mut().zip(&self.centers) {
            let z = (x - c) / self.h;
            *o = (-z * z).exp();
        }
    }

    pub fn basis_and_deriv_row(&self, x: f64, out: &mut [f64], deriv: &mut [f64]) {
        self.basis_row(x, out);
        for i in 0..self.centers.len() {
            deriv[i] = out[i] * (-2.0 * (x - self.centers[i]) / (self.h * self.h));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook recursive Cox-de Boor evaluator, written independently of the
    /// table code above and used as the oracle (0/0 := 0 convention).
    fn de_boor_recursive(t: &[f64], i: usize, k: usize, x: f64, x_is_hi_interval: usize) -> f64 {
        if k == 0 {
            // mirror the boundary convention: x == hi belongs to the interval
            // that ends at hi
            return if i == x_is_hi_interval
                || (x_is_hi_interval == usize::MAX && t[i] <= x && x < t[i + 1])
            {
                1.0
            } else {
                0.0
            };
        }
        let mut v = 0.0;
        let den_l = t[i + k] - t[i];
        if den_l != 0.0 {
            v += (x - t[i]) / den_l * de_boor_recursive(t, i, k - 1, x, x_is_hi_interval);
        }
        let den_r = t[i + k + 1] - t[i + 1];
        if den_r != 0.0 {
            v += (t[i + k + 1] - x) / den_r * de_boor_recursive(t, i + 1, k - 1, x, x_is_hi_interval);
        }
        v
    }

    fn oracle_row(grid: &SplineGrid, x: f64) -> Vec<f64> {
        let hi_interval = if x == grid.range().1 {
            grid.knots().len() - 2 - grid.order()
        } else {
            usize::MAX
        };
        (0..grid.num_basis())
            .map(|i| de_boor_recursive(grid.knots(), i, grid.order(), x, hi_interval))
            .collect()
    }

    #[test]
    fn make_grid_shapes() {
        let g = SplineGrid::make(-1.0, 1.0, 2, 0).unwrap();
        assert_eq!(g.knots(), &[-1.0, 0.0, 1.0]);
        assert_eq!(g.num_basis(), 2);

        let g = SplineGrid::make(-1.0, 1.0, 5, 3).unwrap();
        assert_eq!(g.knots().len(), 12);
        assert_eq!(g.num_basis(), 8);

        let g = SplineGrid::make(0.0, 1.0, 1, 1).unwrap();
        assert_eq!(g.knots(), &[-1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn make_grid_rejects_bad_params() {
        assert!(SplineGrid::make(1.0, -1.0, 5, 3).is_err());
        assert!(SplineGrid::make(0.0, 0.0, 5, 3).is_err());
        assert!(SplineGrid::make(-1.0, 1.0, 0, 3).is_err());
    }

    #[test]
    fn degree_zero_is_interval_indicator() {
        let g = SplineGrid::make(-1.0, 1.0, 2, 0).unwrap();
        let mut row = [0.0; 2];
        g.basis_row(-0.5, &mut row);
        assert_eq!(row, [1.0, 0.0]);
        g.basis_row(0.5, &mut row);
        assert_eq!(row, [0.0, 1.0]);
        // right edge belongs to the last interval, left edge to the first
        g.basis_row(1.0, &mut row);
        assert_eq!(row, [0.0, 1.0]);
        g.basis_row(-1.0, &mut row);
        assert_eq!(row, [1.0, 0.0]);
    }

    #[test]
    fn matches_recursive_oracle() {
        let grid = SplineGrid::make(-1.0, 1.0, 5, 3).unwrap();
        let mut row = vec![0.0; grid.num_basis()];
        // x = 0 plus a sweep that includes out-of-range extrapolation points
        let xs = [
            0.0, -1.0, 1.0, -0.73, 0.42, 0.999, -1.4, 1.4, 1.99, -1.99, 2.6, -2.6,
        ];
        for &x in &xs {
            grid.basis_row(x, &mut row);
            let want = oracle_row(&grid, x);
            for i in 0..row.len() {
                assert!(
                    (row[i] - want[i]).abs() <= 1e-12,
                    "x={x} i={i}: {} vs oracle {}",
                    row[i],
                    want[i]
                );
            }
        }
    }

    #[test]
    fn partition_of_unity_and_nonnegativity() {
        for k in 0..=3usize {
            for g in 1..=8usize {
                let grid = SplineGrid::make(-1.0, 1.0, g, k).unwrap();
                let mut row = vec![0.0; grid.num_basis()];
                let samples = 4 * g + 1;
                for s in 0..=samples {
                    let x = -1.0 + 2.0 * s as f64 / samples as f64;
                    grid.basis_row(x, &mut row);
                    let sum: f64 = row.iter().sum();
                    assert!(
                        (sum - 1.0).abs() <= 1e-9,
                        "k={k} g={g} x={x}: sum {sum}"
                    );
                    assert!(row.iter().all(|&v| v >= 0.0), "k={k} g={g} x={x}: {row:?}");
                }
            }
        }
    }

    #[test]
    fn local_support_spans_at_most_k_plus_one_columns() {
        for k in 0..=3usize {
            let grid = SplineGrid::make(-1.0, 1.0, 6, k).unwrap();
            let mut a = vec![0.0; grid.num_basis()];
            let mut b = vec![0.0; grid.num_basis()];
            // two points inside the same interior interval
            grid.basis_row(0.05, &mut a);
            grid.basis_row(0.28, &mut b);
            let nz_a: Vec<usize> = (0..a.len()).filter(|&i| a[i] != 0.0).collect();
            let nz_b: Vec<usize> = (0..b.len()).filter(|&i| b[i] != 0.0).collect();
            assert!(nz_a.len() <= k + 1, "k={k}: {nz_a:?}");
            assert_eq!(nz_a, nz_b, "support set must not move within an interval");
            for i in 0..a.len() {
                if !nz_a.contains(&i) {
                    assert_eq!(a[i], 0.0);
                    assert_eq!(b[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn derivative_matches_finite_differences_away_from_knots() {
        let grid = SplineGrid::make(-1.0, 1.0, 5, 3).unwrap();
        let nb = grid.num_basis();
        let (mut row, mut dv) = (vec![0.0; nb], vec![0.0; nb]);
        let (mut lo_row, mut hi_row) = (vec![0.0; nb], vec![0.0; nb]);
        let h = 1e-6;
        for &x in &[-0.91, -0.33, 0.17, 0.55, 0.93, 1.17, -1.23] {
            grid.basis_and_deriv_row(x, &mut row, &mut dv);
            grid.basis_row(x - h, &mut lo_row);
            grid.basis_row(x + h, &mut hi_row);
            for i in 0..nb {
                let fd = (hi_row[i] - lo_row[i]) / (2.0 * h);
                let denom = dv[i].abs().max(fd.abs()).max(1e-5);
                assert!(
                    ((dv[i] - fd) / denom).abs() < 1e-4,
                    "x={x} i={i}: analytic {} vs fd {fd}",
                    dv[i]
                );
            }
        }
    }

    #[test]
    fn rbf_center_and_bandwidth_points() {
        let g = RbfGrid::make(-1.0, 1.0, 8, None).unwrap();
        let nb = g.num_basis();
        let mut row = vec![0.0; nb];
        for (i, &c) in g.centers().to_vec().iter().enumerate() {
            g.basis_row(c, &mut row);
            assert!((row[i] - 1.0).abs() < 1e-12);
        }
        // x = c + h -> exp(-1), by direct scalar evaluation
        g.basis_row(g.centers()[3] + g.bandwidth(), &mut row);
        assert!((row[3] - (-1.0f64).exp()).abs() < 1e-12);
        // monotone decay in distance
        let c0 = g.centers()[0];
        let mut prev = f64::INFINITY;
        for step in 1..6 {
            g.basis_row(c0 + step as f64 * 0.7, &mut row);
            assert!(row[0] < prev);
            prev = row[0];
        }
    }

    #[test]
    fn rbf_derivative_matches_finite_differences() {
        let g = RbfGrid::make(-1.0, 1.0, 8, None).unwrap();
        let nb = g.num_basis();
        let (mut row, mut dv) = (vec![0.0; nb], vec![0.0; nb]);
        let (mut lo_row, mut hi_row) = (vec![0.0; nb], vec![0.0; nb]);
        let h = 1e-6;
        for &x in &[-0.8, 0.0, 0.41, 1.3] {
            g.basis_and_deriv_row(x, &mut row, &mut dv);
            g.basis_row(x - h, &mut lo_row);
            g.basis_row(x + h, &mut hi_row);
            for i in 0..nb {
                let fd = (hi_row[i] - lo_row[i]) / (2.0 * h);
                assert!((dv[i] - fd).abs() < 1e-6, "x={x} i={i}");
            }
        }
    }

    #[test]
    fn rbf_rejects_bad_params() {
        assert!(RbfGrid::make(1.0, -1.0, 8, None).is_err());
        assert!(RbfGrid::make(-1.0, 1.0, 0, None).is_err());
        assert!(RbfGrid::make(-1.0, 1.0, 8, Some(0.0)).is_err());
    }
}
