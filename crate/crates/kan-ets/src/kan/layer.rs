//! Single KAN layers: every edge (i, j) carries a learnable univariate
//! function. The spline flavour pairs a fixed SiLU base path with a
//! trainable B-spline path; the wavelet flavour uses Mexican-hat wavelets
//! with learnable weight, translation and (log-)scale per edge.

use serde::{Deserialize, Serialize};

use super::spline::{bspline_basis, bspline_basis_and_derivative, silu, silu_prime, SplineGrid};
use super::KanError;

/// Mexican-hat mother wavelet `psi(u) = c (1 - u^2) exp(-u^2 / 2)` with the
/// L2-normalizing constant `c = 2 / (sqrt(3) pi^(1/4))`.
pub fn mexican_hat(u: f64) -> f64 {
    let c = 2.0 / (3.0f64.sqrt() * std::f64::consts::PI.powf(0.25));
    c * (1.0 - u * u) * (-0.5 * u * u).exp()
}

pub fn mexican_hat_prime(u: f64) -> f64 {
    let c = 2.0 / (3.0f64.sqrt() * std::f64::consts::PI.powf(0.25));
    c * (u * u * u - 3.0 * u) * (-0.5 * u * u).exp()
}

/// Spline-layer parameters. `out = sum_j base_w[i,j] silu(x_j)
/// + sum_{j,m} coeffs[i,j,m] B_m(x_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanLayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub base_weights: Vec<f64>,
    /// `out_dim x in_dim x n_basis`, row-major.
    pub spline_coeffs: Vec<f64>,
    pub grid: SplineGrid,
}

impl KanLayerParams {
    pub fn zeros(in_dim: usize, out_dim: usize, grid: SplineGrid) -> Self {
        let nb = grid.n_basis();
        Self {
            in_dim,
            out_dim,
            base_weights: vec![0.0; out_dim * in_dim],
            spline_coeffs: vec![0.0; out_dim * in_dim * nb],
            grid,
        }
    }

    pub fn param_len(&self) -> usize {
        self.base_weights.len() + self.spline_coeffs.len()
    }

    pub fn validate(&self) -> Result<(), KanError> {
        let nb = self.grid.n_basis();
        if self.base_weights.len() != self.out_dim * self.in_dim
            || self.spline_coeffs.len() != self.out_dim * self.in_dim * nb
        {
            return Err(KanError::ShapeMismatch(format!(
                "spline layer {}x{} (n_basis {nb}): got {} base weights, {} coefficients",
                self.out_dim,
                self.in_dim,
                self.base_weights.len(),
                self.spline_coeffs.len()
            )));
        }
        if self
            .base_weights
            .iter()
            .chain(&self.spline_coeffs)
            .any(|v| !v.is_finite()) {
            return Err(KanError::ShapeMismatch("non-finite layer parameter".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, KanError> {
        if x.len() != self.in_dim {
            return Err(KanError::ShapeMismatch(format!(
                "spline layer expects {} inputs, got {}",
                self.in_dim,
                x.len()
            )));
        }
        let nb = self.grid.n_basis();
        let mut basis = vec![0.0; self.in_dim * nb];
        let mut silu_x = vec![0.0; self.in_dim];
        for (j, &xj) in x.iter().enumerate() {
            basis[j * nb..(j + 1) * nb].copy_from_slice(&bspline_basis(xj, &self.grid));
            silu_x[j] = silu(xj);
        }
        let mut out = vec![0.0; self.out_dim];
        for i in 0..self.out_dim {
            let mut acc = 0.0;
            let row = i * self.in_dim;
            for j in 0..self.in_dim {
                acc += self.base_weights[row + j] * silu_x[j];
                let coeffs = &self.spline_coeffs[(row + j) * nb..(row + j + 1) * nb];
                let b = &basis[j * nb..(j + 1) * nb];
                let mut spline_acc = 0.0;
                for m in 0..nb {
                    spline_acc += coeffs[m] * b[m];
                }
                acc += spline_acc;
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grad` (laid out as
    /// `[base_weights, spline_coeffs]`) and returns the input gradient.
    pub fn backward_into(&self, x: &[f64], upstream: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(upstream.len(), self.out_dim);
        debug_assert_eq!(grad.len(), self.param_len());
        let nb = self.grid.n_basis();
        let mut basis = vec![0.0; self.in_dim * nb];
        let mut dbasis = vec![0.0; self.in_dim * nb];
        let mut silu_x = vec![0.0; self.in_dim];
        let mut dsilu_x = vec![0.0; self.in_dim];
        for (j, &xj) in x.iter().enumerate() {
            let (b, db) = bspline_basis_and_derivative(xj, &self.grid);
            basis[j * nb..(j + 1) * nb].copy_from_slice(&b);
            dbasis[j * nb..(j + 1) * nb].copy_from_slice(&db);
            silu_x[j] = silu(xj);
            dsilu_x[j] = silu_prime(xj);
        }
        let (grad_base, grad_coeffs) = grad.split_at_mut(self.base_weights.len());
        let mut dx = vec![0.0; self.in_dim];
        for i in 0..self.out_dim {
            let g = upstream[i];
            if g == 0.0 {
                continue;
            }
            let row = i * self.in_dim;
            for j in 0..self.in_dim {
                grad_base[row + j] += g * silu_x[j];
                let coeffs = &self.spline_coeffs[(row + j) * nb..(row + j + 1) * nb];
                let gc = &mut grad_coeffs[(row + j) * nb..(row + j + 1) * nb];
                let b = &basis[j * nb..(j + 1) * nb];
                let db = &dbasis[j * nb..(j + 1) * nb];
                let mut dxj = self.base_weights[row + j] * dsilu_x[j];
                for m in 0..nb {
                    gc[m] += g * b[m];
                    dxj += coeffs[m] * db[m];
                }
                dx[j] += g * dxj;
            }
        }
        dx
    }
}

/// Wavelet-layer parameters. `out_i = sum_j w[i,j] psi((x_j - t[i,j]) / s[i,j])`
/// with `s = exp(log_scale)` kept positive by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavLayerParams {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub translations: Vec<f64>,
    pub log_scales: Vec<f64>,
}

impl WavLayerParams {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; out_dim * in_dim],
            translations: vec![0.0; out_dim * in_dim],
            log_scales: vec![0.0; out_dim * in_dim],
        }
    }

    pub fn param_len(&self) -> usize {
        3 * self.out_dim * self.in_dim
    }

    pub fn validate(&self) -> Result<(), KanError> {
        let n = self.out_dim * self.in_dim;
        if self.weights.len() != n || self.translations.len() != n || self.log_scales.len() != n {
            return Err(KanError::ShapeMismatch(format!(
                "wavelet layer {}x{}: parameter arrays {} / {} / {}",
                self.out_dim,
                self.in_dim,
                self.weights.len(),
                self.translations.len(),
                self.log_scales.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, KanError> {
        if x.len() != self.in_dim {
            return Err(KanError::ShapeMismatch(format!(
                "wavelet layer expects {} inputs, got {}",
                self.in_dim,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.out_dim];
        for i in 0..self.out_dim {
            let row = i * self.in_dim;
            let mut acc = 0.0;
            for (j, &xj) in x.iter().enumerate() {
                let s = self.log_scales[row + j].exp();
                let u = (xj - self.translations[row + j]) / s;
                acc += self.weights[row + j] * mexican_hat(u);
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// Gradient layout: `[weights, translations, log_scales]`.
    pub fn backward_into(&self, x: &[f64], upstream: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(upstream.len(), self.out_dim);
        debug_assert_eq!(grad.len(), self.param_len());
        let n = self.out_dim * self.in_dim;
        let (grad_w, rest) = grad.split_at_mut(n);
        let (grad_t, grad_ls) = rest.split_at_mut(n);
        let mut dx = vec![0.0; self.in_dim];
        for i in 0..self.out_dim {
            let g = upstream[i];
            if g == 0.0 {
                continue;
            }
            let row = i * self.in_dim;
            for (j, &xj) in x.iter().enumerate() {
                let idx = row + j;
                let s = self.log_scales[idx].exp();
                let u = (xj - self.translations[idx]) / s;
                let psi = mexican_hat(u);
                let dpsi = mexican_hat_prime(u);
                let w = self.weights[idx];
                grad_w[idx] += g * psi;
                grad_t[idx] += g * w * dpsi * (-1.0 / s);
                grad_ls[idx] += g * w * dpsi * (-u);
                dx[j] += g * w * dpsi / s;
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mexican_hat_anchor_values() {
        // c = 2 / (sqrt(3) pi^(1/4)), computed independently
        assert!((mexican_hat(0.0) - 0.8673250705840776).abs() < 1e-15);
        assert_eq!(mexican_hat(1.0), 0.0);
        assert_eq!(mexican_hat(-1.0), 0.0);
        let h = 1e-6;
        for &u in &[-2.3, -0.4, 0.0, 1.1, 2.0] {
            let fd = (mexican_hat(u + h) - mexican_hat(u - h)) / (2.0 * h);
            assert!((mexican_hat_prime(u) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_spline_layer_outputs_zero() {
        let layer = KanLayerParams::zeros(3, 2, SplineGrid::default_kan());
        assert_eq!(layer.forward(&[0.3, -0.5, 0.9]).unwrap(), vec![0.0, 0.0]);
        // silu(0) = 0, so x = 0 with zero spline coefficients stays 0 even
        // with nonzero base weights
        let mut with_base = KanLayerParams::zeros(2, 1, SplineGrid::default_kan());
        with_base.base_weights = vec![0.7, -1.3];
        assert_eq!(with_base.forward(&[0.0, 0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn one_to_one_spline_layer_hand_evaluated() {
        let grid = SplineGrid::default_kan();
        let mut layer = KanLayerParams::zeros(1, 1, grid.clone());
        layer.base_weights = vec![0.5];
        for (m, c) in layer.spline_coeffs.iter_mut().enumerate() {
            *c = (m as f64 + 1.0) * 0.1;
        }
        let x = 0.37;
        let expected: f64 = 0.5 * silu(x)
            + bspline_basis(x, &grid)
                .iter()
                .enumerate()
                .map(|(m, b)| (m as f64 + 1.0) * 0.1 * b)
                .sum::<f64>();
        let got = layer.forward(&[x]).unwrap()[0];
        assert!((got - expected).abs() < 1e-14);
    }

    #[test]
    fn spline_layer_rejects_wrong_input_length() {
        let layer = KanLayerParams::zeros(3, 2, SplineGrid::default_kan());
        assert!(layer.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn wavelet_translation_shift_identity() {
        let mut layer = WavLayerParams::zeros(2, 2);
        layer.weights = vec![0.8, -0.3, 0.1, 0.9];
        layer.translations = vec![0.2, -0.4, 0.0, 0.55];
        layer.log_scales = vec![0.1, -0.2, 0.0, 0.3];
        let x = [0.3, -0.7];
        let base = layer.forward(&x).unwrap();

        let delta = 0.37;
        let mut shifted = layer.clone();
        for t in &mut shifted.translations {
            *t += delta;
        }
        let moved = shifted.forward(&[x[0] + delta, x[1] + delta]).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let layer = KanLayerParams::zeros(2, 2, SplineGrid::default_kan());
        let mut grad = vec![0.0; layer.param_len()];
        let dx = layer.backward_into(&[0.1, 0.2], &[0.0, 0.0], &mut grad);
        assert!(grad.iter().all(|&g| g == 0.0));
        assert!(dx.iter().all(|&g| g == 0.0));
    }
}
