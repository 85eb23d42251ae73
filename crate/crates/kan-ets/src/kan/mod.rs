//! Kolmogorov-Arnold networks: stacks of layers whose edges carry learnable
//! univariate functions (B-splines with a SiLU base path, or Mexican-hat
//! wavelets), with exact reverse-mode gradients for every parameter group
//! and for the input vector.

pub mod layer;
pub mod spline;

pub use layer::{KanLayerParams, WavLayerParams};
pub use spline::{bspline_basis, bspline_basis_and_derivative, silu, SplineGrid};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KanError {
    #[error("invalid spline grid: {0}")]
    InvalidGrid(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed checkpoint {path}: {detail}")]
    Malformed { path: String, detail: String },
    #[error("checkpoint {path} has format_version {found}, expected {CHECKPOINT_FORMAT_VERSION}")]
    VersionMismatch { path: String, found: u32 },
}

/// Which univariate family the network's edges use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Spline,
    Wavelet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Layer {
    Spline(KanLayerParams),
    Wavelet(WavLayerParams),
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Spline(l) => l.in_dim,
            Layer::Wavelet(l) => l.in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Spline(l) => l.out_dim,
            Layer::Wavelet(l) => l.out_dim,
        }
    }

    pub fn param_len(&self) -> usize {
        match self {
            Layer::Spline(l) => l.param_len(),
            Layer::Wavelet(l) => l.param_len(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, KanError> {
        match self {
            Layer::Spline(l) => l.forward(x),
            Layer::Wavelet(l) => l.forward(x),
        }
    }

    pub fn backward_into(&self, x: &[f64], upstream: &[f64], grad: &mut [f64]) -> Vec<f64> {
        match self {
            Layer::Spline(l) => l.backward_into(x, upstream, grad),
            Layer::Wavelet(l) => l.backward_into(x, upstream, grad),
        }
    }

    fn write_flat(&self, out: &mut Vec<f64>) {
        match self {
            Layer::Spline(l) => {
                out.extend_from_slice(&l.base_weights);
                out.extend_from_slice(&l.spline_coeffs);
            }
            Layer::Wavelet(l) => {
                out.extend_from_slice(&l.weights);
                out.extend_from_slice(&l.translations);
                out.extend_from_slice(&l.log_scales);
            }
        }
    }

    fn read_flat(&mut self, flat: &[f64]) {
        debug_assert_eq!(flat.len(), self.param_len());
        match self {
            Layer::Spline(l) => {
                let n = l.base_weights.len();
                l.base_weights.copy_from_slice(&flat[..n]);
                l.spline_coeffs.copy_from_slice(&flat[n..]);
            }
            Layer::Wavelet(l) => {
                let n = l.weights.len();
                l.weights.copy_from_slice(&flat[..n]);
                l.translations.copy_from_slice(&flat[n..2 * n]);
                l.log_scales.copy_from_slice(&flat[2 * n..]);
            }
        }
    }
}

/// Per-layer gradients in the same grouping as the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerGradients {
    Spline {
        base_weights: Vec<f64>,
        spline_coeffs: Vec<f64>,
    },
    Wavelet {
        weights: Vec<f64>,
        translations: Vec<f64>,
        log_scales: Vec<f64>,
    },
}

/// Gradients of a scalar function of the network output with respect to all
/// parameters and to the network input.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGradients {
    pub layers: Vec<LayerGradients>,
    pub input: Vec<f64>,
}

/// A composed multi-layer KAN with the `[I, a, ..., O]` width tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct KanNetwork {
    pub kind: LayerKind,
    pub architecture: Vec<usize>,
    pub layers: Vec<Layer>,
}

impl KanNetwork {
    /// Seeded random initialization. Base weights are Uniform(+-sqrt(6/in)),
    /// spline coefficients and wavelet weights Normal(0, 0.1/sqrt(in)),
    /// wavelet translations uniform over the grid domain and log-scales zero,
    /// keeping activations O(1) on unit-scale inputs at init.
    pub fn init(
        architecture: &[usize],
        kind: LayerKind,
        grid: &SplineGrid,
        seed: u64,
    ) -> Result<Self, KanError> {
        if architecture.len() < 2 {
            return Err(KanError::InvalidArchitecture(format!(
                "need at least [input, output] widths, got {architecture:?}"
            )));
        }
        if architecture.iter().any(|&w| w == 0) {
            return Err(KanError::InvalidArchitecture(
                "zero-width layer in architecture".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(architecture.len() - 1);
        for w in architecture.windows(2) {
            let (in_dim, out_dim) = (w[0], w[1]);
            let base_bound = (6.0 / in_dim as f64).sqrt();
            let coeff_std = 0.1 / (in_dim as f64).sqrt();
            let normal = Normal::new(0.0, coeff_std).expect("positive std");
            match kind {
                LayerKind::Spline => {
                    let mut l = KanLayerParams::zeros(in_dim, out_dim, grid.clone());
                    for v in &mut l.base_weights {
                        *v = rng.gen_range(-base_bound..base_bound);
                    }
                    for v in &mut l.spline_coeffs {
                        *v = normal.sample(&mut rng);
                    }
                    layers.push(Layer::Spline(l));
                }
                LayerKind::Wavelet => {
                    let mut l = WavLayerParams::zeros(in_dim, out_dim);
                    for v in &mut l.weights {
                        *v = normal.sample(&mut rng);
                    }
                    let (lo, hi) = grid.domain;
                    for v in &mut l.translations {
                        *v = rng.gen_range(lo..hi);
                    }
                    layers.push(Layer::Wavelet(l));
                }
            }
        }
        Ok(Self {
            kind,
            architecture: architecture.to_vec(),
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.architecture[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.architecture.last().unwrap()
    }

    pub fn param_len(&self) -> usize {
        self.layers.iter().map(Layer::param_len).sum()
    }

    pub fn validate(&self) -> Result<(), KanError> {
        if self.architecture.len() != self.layers.len() + 1 {
            return Err(KanError::InvalidArchitecture(format!(
                "{} layers do not realize width tuple {:?}",
                self.layers.len(),
                self.architecture
            )));
        }
        for (l, w) in self.layers.iter().zip(self.architecture.windows(2)) {
            if l.in_dim() != w[0] || l.out_dim() != w[1] {
                return Err(KanError::InvalidArchitecture(format!(
                    "layer is {}x{}, architecture says {}x{}",
                    l.out_dim(),
                    l.in_dim(),
                    w[1],
                    w[0]
                )));
            }
            match l {
                Layer::Spline(p) => p.validate()?,
                Layer::Wavelet(p) => p.validate()?,
            }
        }
        Ok(())
    }

    /// Sequential layer composition, no inter-layer normalization.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, KanError> {
        let mut v = x.to_vec();
        for layer in &self.layers {
            v = layer.forward(&v)?;
        }
        Ok(v)
    }

    /// Forward pass retaining each layer's input, as needed by backprop.
    fn forward_intermediates(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, KanError> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for layer in &self.layers {
            let next = layer.forward(acts.last().unwrap())?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Reverse-mode sweep accumulating parameter gradients into `flat_grad`
    /// (layout: layers in order, each `[group arrays...]`) and returning the
    /// gradient with respect to the input vector.
    pub fn backward_into(
        &self,
        x: &[f64],
        upstream: &[f64],
        flat_grad: &mut [f64],
    ) -> Result<Vec<f64>, KanError> {
        if upstream.len() != self.output_dim() {
            return Err(KanError::ShapeMismatch(format!(
                "upstream gradient length {} != output dim {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        if flat_grad.len() != self.param_len() {
            return Err(KanError::ShapeMismatch(format!(
                "gradient buffer length {} != parameter count {}",
                flat_grad.len(),
                self.param_len()
            )));
        }
        let acts = self.forward_intermediates(x)?;
        let mut g = upstream.to_vec();
        let mut offset = self.param_len();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let len = layer.param_len();
            offset -= len;
            g = layer.backward_into(&acts[l], &g, &mut flat_grad[offset..offset + len]);
        }
        Ok(g)
    }

    /// Structured gradients of `sum_i upstream_i * out_i`.
    pub fn gradients(&self, x: &[f64], upstream: &[f64]) -> Result<NetworkGradients, KanError> {
        let mut flat = vec![0.0; self.param_len()];
        let input = self.backward_into(x, upstream, &mut flat)?;
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for layer in &self.layers {
            let len = layer.param_len();
            let slice = &flat[offset..offset + len];
            offset += len;
            layers.push(match layer {
                Layer::Spline(l) => LayerGradients::Spline {
                    base_weights: slice[..l.base_weights.len()].to_vec(),
                    spline_coeffs: slice[l.base_weights.len()..].to_vec(),
                },
                Layer::Wavelet(l) => {
                    let n = l.weights.len();
                    LayerGradients::Wavelet {
                        weights: slice[..n].to_vec(),
                        translations: slice[n..2 * n].to_vec(),
                        log_scales: slice[2 * n..].to_vec(),
                    }
                }
            });
        }
        Ok(NetworkGradients { layers, input })
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        for layer in &self.layers {
            layer.write_flat(&mut out);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), KanError> {
        if flat.len() != self.param_len() {
            return Err(KanError::ShapeMismatch(format!(
                "flat parameter vector length {} != {}",
                flat.len(),
                self.param_len()
            )));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let len = layer.param_len();
            layer.read_flat(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    pub fn grid(&self) -> SplineGrid {
        self.layers
            .iter()
            .find_map(|l| match l {
                Layer::Spline(p) => Some(p.grid.clone()),
                Layer::Wavelet(_) => None,
            })
            .unwrap_or_else(SplineGrid::default_kan)
    }
}

// ---------------------------------------------------------------------------
// Checkpoint persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct GridFile {
    grid_size: usize,
    order: usize,
    domain: (f64, f64),
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    kind: LayerKind,
    architecture: Vec<usize>,
    grid: GridFile,
    layers: Vec<Layer>,
}

pub fn save_network(net: &KanNetwork, path: &Path) -> Result<(), KanError> {
    let grid = net.grid();
    let file = CheckpointFile {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: net.kind,
        architecture: net.architecture.clone(),
        grid: GridFile {
            grid_size: grid.grid_size,
            order: grid.order,
            domain: grid.domain,
        },
        layers: net.layers.clone(),
    };
    let json = serde_json::to_string(&file).expect("checkpoint serialization cannot fail");
    std::fs::write(path, json).map_err(|e| KanError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_network(path: &Path) -> Result<KanNetwork, KanError> {
    let text = std::fs::read_to_string(path).map_err(|e| KanError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| KanError::Malformed {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if file.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(KanError::VersionMismatch {
            path: path.display().to_string(),
            found: file.format_version,
        });
    }
    let net = KanNetwork {
        kind: file.kind,
        architecture: file.architecture,
        layers: file.layers,
    };
    net.validate().map_err(|e| KanError::Malformed {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> SplineGrid {
        SplineGrid::default_kan()
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = KanNetwork::init(&[4, 3, 2], LayerKind::Spline, &grid(), 9).unwrap();
        let b = KanNetwork::init(&[4, 3, 2], LayerKind::Spline, &grid(), 9).unwrap();
        assert_eq!(a, b);
        let c = KanNetwork::init(&[4, 3, 2], LayerKind::Spline, &grid(), 10).unwrap();
        assert_ne!(a, c);

        let x = [0.1, 0.4, 0.7, 0.9];
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
    }

    #[test]
    fn init_keeps_activations_bounded() {
        // unit-scale input, |output| < 10 across seeds and both kinds
        for kind in [LayerKind::Spline, LayerKind::Wavelet] {
            for seed in 0..5 {
                let net = KanNetwork::init(&[20, 10, 20], kind, &grid(), seed).unwrap();
                let x: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
                let out = net.forward(&x).unwrap();
                assert!(out.iter().all(|v| v.is_finite() && v.abs() < 10.0));
            }
        }
    }

    #[test]
    fn two_layer_composition_matches_manual() {
        let net = KanNetwork::init(&[2, 2], LayerKind::Spline, &grid(), 1).unwrap();
        let hidden = net.layers[0].forward(&[0.2, 0.8]).unwrap();
        assert_eq!(net.forward(&[0.2, 0.8]).unwrap(), hidden);

        let deep = KanNetwork::init(&[2, 3, 2], LayerKind::Spline, &grid(), 2).unwrap();
        let manual = deep.layers[1]
            .forward(&deep.layers[0].forward(&[0.2, 0.8]).unwrap())
            .unwrap();
        assert_eq!(deep.forward(&[0.2, 0.8]).unwrap(), manual);
    }

    #[test]
    fn forward_rejects_bad_input_length() {
        let net = KanNetwork::init(&[4, 2], LayerKind::Spline, &grid(), 0).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn flat_params_round_trip() {
        for kind in [LayerKind::Spline, LayerKind::Wavelet] {
            let mut net = KanNetwork::init(&[3, 4, 2], kind, &grid(), 5).unwrap();
            let flat = net.flat_params();
            assert_eq!(flat.len(), net.param_len());
            let reference = net.clone();
            let mut shifted = flat.clone();
            for v in &mut shifted {
                *v += 1.0;
            }
            net.set_flat_params(&shifted).unwrap();
            assert_ne!(net, reference);
            net.set_flat_params(&flat).unwrap();
            assert_eq!(net, reference);
        }
    }

    #[test]
    fn zero_upstream_zeroes_all_gradients() {
        let net = KanNetwork::init(&[3, 2], LayerKind::Wavelet, &grid(), 3).unwrap();
        let g = net.gradients(&[0.1, 0.5, 0.9], &[0.0, 0.0]).unwrap();
        match &g.layers[0] {
            LayerGradients::Wavelet {
                weights,
                translations,
                log_scales,
            } => {
                assert!(weights.iter().all(|&v| v == 0.0));
                assert!(translations.iter().all(|&v| v == 0.0));
                assert!(log_scales.iter().all(|&v| v == 0.0));
            }
            _ => panic!("expected wavelet gradients"),
        }
        assert!(g.input.iter().all(|&v| v == 0.0));
    }

    /// Central finite differences of the scalar `sum_i upstream_i out_i(theta)`
    /// over every flat parameter; the oracle for the analytic backward pass.
    fn fd_gradient(net: &KanNetwork, x: &[f64], upstream: &[f64], step: f64) -> Vec<f64> {
        let mut probe = net.clone();
        let base = probe.flat_params();
        let mut fd = vec![0.0; base.len()];
        let scalar = |n: &KanNetwork| -> f64 {
            n.forward(x)
                .unwrap()
                .iter()
                .zip(upstream)
                .map(|(o, u)| o * u)
                .sum()
        };
        for idx in 0..base.len() {
            let mut plus = base.clone();
            plus[idx] += step;
            probe.set_flat_params(&plus).unwrap();
            let fp = scalar(&probe);
            let mut minus = base.clone();
            minus[idx] -= step;
            probe.set_flat_params(&minus).unwrap();
            let fm = scalar(&probe);
            fd[idx] = (fp - fm) / (2.0 * step);
        }
        fd
    }

    fn group_relative_errors(net: &KanNetwork, analytic: &[f64], fd: &[f64]) -> Vec<f64> {
        let mut errors = Vec::new();
        let mut offset = 0;
        for layer in &net.layers {
            let group_sizes: Vec<usize> = match layer {
                Layer::Spline(l) => vec![l.base_weights.len(), l.spline_coeffs.len()],
                Layer::Wavelet(l) => vec![l.weights.len(); 3],
            };
            for size in group_sizes {
                let a = &analytic[offset..offset + size];
                let f = &fd[offset..offset + size];
                let diff: f64 = a.iter().zip(f).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                let norm: f64 = f.iter().map(|y| y * y).sum::<f64>().sqrt();
                errors.push(diff / norm.max(1e-12));
                offset += size;
            }
        }
        errors
    }

    #[test]
    fn gradients_match_finite_differences_per_group() {
        for (kind, seeds) in [
            (LayerKind::Spline, 0..10u64),
            (LayerKind::Wavelet, 0..10u64),
        ] {
            for seed in seeds {
                let net = KanNetwork::init(&[10, 5, 10], kind, &grid(), seed).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                let x: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
                let upstream: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();

                let mut analytic = vec![0.0; net.param_len()];
                net.backward_into(&x, &upstream, &mut analytic).unwrap();
                let fd = fd_gradient(&net, &x, &upstream, 1e-5);
                for (g, err) in group_relative_errors(&net, &analytic, &fd)
                    .into_iter()
                    .enumerate()
                {
                    assert!(
                        err <= 1e-4,
                        "{kind:?} seed {seed} group {g}: relative error {err:.3e}"
                    );
                }
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        for kind in [LayerKind::Spline, LayerKind::Wavelet] {
            let net = KanNetwork::init(&[6, 4, 3], kind, &grid(), 7).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(0.05..0.95)).collect();
            let upstream: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = net.gradients(&x, &upstream).unwrap();
            let scalar = |x: &[f64]| -> f64 {
                net.forward(x)
                    .unwrap()
                    .iter()
                    .zip(&upstream)
                    .map(|(o, u)| o * u)
                    .sum()
            };
            let h = 1e-6;
            for j in 0..6 {
                let mut xp = x.clone();
                xp[j] += h;
                let mut xm = x.clone();
                xm[j] -= h;
                let fd = (scalar(&xp) - scalar(&xm)) / (2.0 * h);
                assert!(
                    (g.input[j] - fd).abs() / fd.abs().max(1e-3) < 1e-4,
                    "{kind:?} input {j}: {} vs {fd}",
                    g.input[j]
                );
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [LayerKind::Spline, LayerKind::Wavelet] {
            let net = KanNetwork::init(&[5, 3, 4], kind, &grid(), 21).unwrap();
            let path = dir.path().join(format!("{kind:?}.json"));
            save_network(&net, &path).unwrap();
            let loaded = load_network(&path).unwrap();
            assert_eq!(net, loaded);
        }
    }

    #[test]
    fn checkpoint_shape_validation() {
        let dir = tempfile::tempdir().unwrap();
        let net = KanNetwork::init(&[3, 2], LayerKind::Spline, &grid(), 4).unwrap();
        let path = dir.path().join("net.json");
        save_network(&net, &path).unwrap();
        let mut file: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        file["layers"][0]["base_weights"].as_array_mut().unwrap().pop();
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        assert!(matches!(
            load_network(&path),
            Err(KanError::Malformed { .. })
        ));
    }

    #[test]
    fn architecture_errors() {
        assert!(KanNetwork::init(&[5], LayerKind::Spline, &grid(), 0).is_err());
        assert!(KanNetwork::init(&[5, 0, 3], LayerKind::Spline, &grid(), 0).is_err());
    }
}
