//! Uniform B-spline basis on an extended knot grid, evaluated with the
//! local triangular (de Boor) scheme.
//!
//! A grid with `G` interior intervals on `[lo, hi]` and degree `k` carries
//! `G + k` basis functions over the extended knot vector
//! `t_j = lo + (j - k) h`, `j = 0..=G+2k`, `h = (hi - lo)/G`. Every basis
//! function is supported on `k + 1` consecutive intervals; outside the
//! extended span all basis values vanish, so out-of-domain activations in
//! deeper layers simply bypass the spline path.

use serde::{Deserialize, Serialize};

use super::KanError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    /// Number of interior intervals G.
    pub grid_size: usize,
    /// Spline degree k.
    pub order: usize,
    /// Interior domain [lo, hi].
    pub domain: (f64, f64),
    /// Extended uniform knot vector, length G + 2k + 1.
    pub knots: Vec<f64>,
}

impl SplineGrid {
    pub fn new(grid_size: usize, order: usize, lo: f64, hi: f64) -> Result<Self, KanError> {
        if grid_size == 0 {
            return Err(KanError::InvalidGrid("grid_size must be >= 1".into()));
        }
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(KanError::InvalidGrid(format!("bad domain [{lo}, {hi}]")));
        }
        let h = (hi - lo) / grid_size as f64;
        let knots = (0..=grid_size + 2 * order)
            .map(|j| lo + (j as f64 - order as f64) * h)
            .collect();
        Ok(Self {
            grid_size,
            order,
            domain: (lo, hi),
            knots,
        })
    }

    /// The Table-style default: G = 5 intervals, cubic splines, domain [-1, 1].
    pub fn default_kan() -> Self {
        Self::new(5, 3, -1.0, 1.0).expect("static arguments are valid")
    }

    pub fn n_basis(&self) -> usize {
        self.grid_size + self.order
    }

    pub fn spacing(&self) -> f64 {
        (self.domain.1 - self.domain.0) / self.grid_size as f64
    }

    /// Knot by (possibly phantom) index on the infinite uniform extension.
    /// Matches `self.knots[j]` exactly for in-range indices.
    fn knot(&self, j: isize) -> f64 {
        self.domain.0 + (j - self.order as isize) as f64 * self.spacing()
    }

    /// Interval index such that `knot(span) <= x < knot(span + 1)`, or None
    /// when x falls outside the extended knot span entirely.
    fn find_span(&self, x: f64) -> Option<isize> {
        let last = (self.grid_size + 2 * self.order) as isize;
        if x < self.knot(0) || x > self.knot(last) {
            return None;
        }
        let h = self.spacing();
        let mut span = ((x - self.knot(0)) / h).floor() as isize;
        span = span.clamp(0, last - 1);
        // guard against floating-point edge placement
        if x < self.knot(span) {
            span -= 1;
        } else if x >= self.knot(span + 1) {
            span += 1;
        }
        Some(span.clamp(0, last - 1))
    }
}

/// All `G + k` basis values at `x` (mostly zeros: at most `k + 1` are active).
pub fn bspline_basis(x: f64, grid: &SplineGrid) -> Vec<f64> {
    let mut vals = vec![0.0; grid.n_basis()];
    eval_basis(x, grid, &mut vals, None);
    vals
}

/// Basis values and first derivatives in one pass.
pub fn bspline_basis_and_derivative(x: f64, grid: &SplineGrid) -> (Vec<f64>, Vec<f64>) {
    let mut vals = vec![0.0; grid.n_basis()];
    let mut derivs = vec![0.0; grid.n_basis()];
    eval_basis(x, grid, &mut vals, Some(&mut derivs));
    (vals, derivs)
}

/// Triangular Cox-de Boor evaluation at the span containing `x`, scattering
/// the `k + 1` active values into the full-length buffers. Phantom knots
/// beyond the stored vector continue the uniform spacing, which leaves the
/// values of real basis functions untouched while letting spans in the
/// extension regions evaluate without bounds checks.
fn eval_basis(x: f64, grid: &SplineGrid, vals: &mut [f64], derivs: Option<&mut [f64]>) {
    debug_assert_eq!(vals.len(), grid.n_basis());
    let span = match grid.find_span(x) {
        Some(s) => s,
        None => return,
    };
    let p = grid.order;
    let mut n = vec![0.0; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    let mut lower: Vec<f64> = Vec::new();
    n[0] = 1.0;
    for j in 1..=p {
        left[j] = x - grid.knot(span + 1 - j as isize);
        right[j] = grid.knot(span + j as isize) - x;
        let mut saved = 0.0;
        for r in 0..j {
            let temp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        n[j] = saved;
        if j == p - 1 {
            lower = n[..p].to_vec();
        }
    }

    let n_basis = grid.n_basis() as isize;
    for (r, &value) in n.iter().enumerate() {
        let m = span - p as isize + r as isize;
        if (0..n_basis).contains(&m) {
            vals[m as usize] = value;
        }
    }

    if let Some(derivs) = derivs {
        if p == 0 {
            return; // piecewise constants have zero derivative a.e.
        }
        // B'_{m,p} = p * [ B_{m,p-1}/(t_{m+p}-t_m) - B_{m+1,p-1}/(t_{m+p+1}-t_{m+1}) ]
        for r in 0..=p {
            let m = span - p as isize + r as isize;
            if !(0..n_basis).contains(&m) {
                continue;
            }
            let b_lo = if r >= 1 { lower[r - 1] } else { 0.0 };
            let b_hi = if r < p { lower[r] } else { 0.0 };
            let d_lo = grid.knot(m + p as isize) - grid.knot(m);
            let d_hi = grid.knot(m + p as isize + 1) - grid.knot(m + 1);
            derivs[m as usize] = p as f64 * (b_lo / d_lo - b_hi / d_hi);
        }
    }
}

/// `silu(u) = u / (1 + e^{ -u })`, the fixed base activation of spline layers.
pub fn silu(u: f64) -> f64 {
    u * sigmoid(u)
}

pub fn silu_prime(u: f64) -> f64 {
    let s = sigmoid(u);
    s * (1.0 + u * (1.0 - s))
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook recursive Cox-de Boor definition, written independently of
    /// the triangular production path; the oracle for the values below.
    fn naive_basis(grid: &SplineGrid, m: isize, p: usize, x: f64) -> f64 {
        let t = |j: isize| grid.knot(j);
        if p == 0 {
            return if t(m) <= x && x < t(m + 1) { 1.0 } else { 0.0 };
        }
        let left = (x - t(m)) / (t(m + p as isize) - t(m)) * naive_basis(grid, m, p - 1, x);
        let right = (t(m + p as isize + 1) - x) / (t(m + p as isize + 1) - t(m + 1))
            * naive_basis(grid, m + 1, p - 1, x);
        left + right
    }

    fn kan_grid() -> SplineGrid {
        SplineGrid::new(5, 3, -1.0, 1.0).unwrap()
    }

    #[test]
    fn knot_vector_shape() {
        let g = kan_grid();
        assert_eq!(g.knots.len(), 5 + 2 * 3 + 1);
        assert_eq!(g.n_basis(), 8);
        assert!((g.knots[0] - (-2.2)).abs() < 1e-12);
        assert!((g.knots[11] - 2.2).abs() < 1e-12);
        assert!(g.knots.windows(2).all(|w| w[1] > w[0]));
        for (j, &k) in g.knots.iter().enumerate() {
            assert_eq!(k, g.knot(j as isize));
        }
    }

    #[test]
    fn degree_zero_is_interval_indicator() {
        let g = SplineGrid::new(4, 0, 0.0, 1.0).unwrap();
        let v = bspline_basis(0.3, &g);
        assert_eq!(v.len(), 4);
        assert_eq!(v, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn cubic_values_at_zero_match_oracle() {
        // independently computed (naive recursion and scipy agree):
        // active window at x = 0 is [1/48, 23/48, 23/48, 1/48]
        let g = kan_grid();
        let v = bspline_basis(0.0, &g);
        let expected = [
            0.0,
            0.0,
            1.0 / 48.0,
            23.0 / 48.0,
            23.0 / 48.0,
            1.0 / 48.0,
            0.0,
            0.0,
        ];
        for (m, (&got, want)) in v.iter().zip(expected).enumerate() {
            assert!((got - want).abs() < 1e-12, "m={m}: {got} vs {want}");
            assert!(
                (got - naive_basis(&g, m as isize, 3, 0.0)).abs() < 1e-12,
                "naive mismatch at {m}"
            );
        }
    }

    #[test]
    fn matches_naive_recursion_everywhere() {
        let g = kan_grid();
        // includes extension-region points beyond [-1, 1]
        for i in 0..200 {
            let x = -2.5 + 5.0 * i as f64 / 199.0;
            let v = bspline_basis(x, &g);
            for m in 0..g.n_basis() {
                let want = naive_basis(&g, m as isize, 3, x);
                assert!(
                    (v[m] - want).abs() < 1e-12,
                    "x={x} m={m}: {} vs {want}",
                    v[m]
                );
            }
        }
    }

    #[test]
    fn local_support() {
        let g = kan_grid();
        for m in 0..g.n_basis() {
            let lo = g.knot(m as isize);
            let hi = g.knot(m as isize + 4);
            for &x in &[lo - 0.05, hi + 0.05, lo - 1.7, hi + 1.7] {
                assert_eq!(bspline_basis(x, &g)[m], 0.0, "m={m} x={x}");
            }
        }
    }

    #[test]
    fn continuity_across_knots() {
        let g = kan_grid();
        for j in 0..g.knots.len() {
            let t = g.knots[j];
            let below = bspline_basis(t - 1e-9, &g);
            let above = bspline_basis(t + 1e-9, &g);
            for m in 0..g.n_basis() {
                assert!(
                    (below[m] - above[m]).abs() <= 1e-6,
                    "knot {t}: basis {m} jumps"
                );
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let g = kan_grid();
        let h = 1e-6;
        for i in 0..60 {
            let x = -2.1 + 4.2 * i as f64 / 59.0;
            let (_, d) = bspline_basis_and_derivative(x, &g);
            let lo = bspline_basis(x - h, &g);
            let hi = bspline_basis(x + h, &g);
            for m in 0..g.n_basis() {
                let fd = (hi[m] - lo[m]) / (2.0 * h);
                assert!((d[m] - fd).abs() < 1e-6, "x={x} m={m}: {} vs {fd}", d[m]);
            }
        }
    }

    #[test]
    fn far_outside_is_all_zero() {
        let g = kan_grid();
        for &x in &[-3.0, 2.2000001, 50.0, -1e6] {
            assert!(bspline_basis(x, &g).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn silu_values() {
        assert_eq!(silu(0.0), 0.0);
        assert!((silu(1.0) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        // stable in the far tails
        assert_eq!(silu(-800.0), 0.0);
        assert!((silu(800.0) - 800.0).abs() < 1e-10);
        let h = 1e-6;
        for &u in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let fd = (silu(u + h) - silu(u - h)) / (2.0 * h);
            assert!((silu_prime(u) - fd).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity_inside_domain(x in -0.9999f64..0.9999) {
            let g = kan_grid();
            let sum: f64 = bspline_basis(x, &g).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-10);
        }

        #[test]
        fn basis_values_nonnegative(x in -2.5f64..2.5) {
            let g = kan_grid();
            prop_assert!(bspline_basis(x, &g).iter().all(|&v| v >= -1e-14));
        }
    }
}
