//! Dataset recipes: grids of (amplitude, frequency) drive waveforms mapped
//! through the chain simulator, plus MinMax scaling, train/test splitting and
//! JSON persistence.
//!
//! The time grid is shared by every sample in a dataset: `dt = T / N_T` with
//! `T = 2*pi / omega_min`, so the slowest drive completes exactly one period.

use crate::spin_chain::{self, DriveSignal, SpinChainParams, TrajectorySample};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid recipe: {0}")]
    InvalidRecipe(String),
    #[error("simulation failed for (A = {amplitude}, omega = {omega}): {source}")]
    Simulation {
        amplitude: f64,
        omega: f64,
        source: spin_chain::SpinError,
    },
    #[error("scaler: {0}")]
    Scaler(String),
    #[error("split: {0}")]
    Split(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed dataset file {path}: {detail}")]
    Malformed { path: String, detail: String },
    #[error("dataset file {path} has format_version {found}, expected {DATASET_FORMAT_VERSION}")]
    VersionMismatch { path: String, found: u32 },
}

/// Uniform, endpoint-inclusive frequency grid.
pub fn frequency_grid(omega_min: f64, omega_max: f64, n: usize) -> Result<Vec<f64>, DatasetError> {
    if n < 2 {
        return Err(DatasetError::InvalidRecipe(format!(
            "need at least 2 frequencies, got {n}"
        )));
    }
    if !(omega_max > omega_min && omega_min > 0.0) {
        return Err(DatasetError::InvalidRecipe(format!(
            "invalid frequency range [{omega_min}, {omega_max}]"
        )));
    }
    let step = (omega_max - omega_min) / (n - 1) as f64;
    Ok((0..n).map(|i| omega_min + i as f64 * step).collect())
}

/// Amplitude ladder `A_j = A_1 + (j-1)(A_m - A_1)/(m-1)`; `m = 1` gives `[a1]`.
pub fn amplitude_grid(a1: f64, am: f64, m: usize) -> Result<Vec<f64>, DatasetError> {
    if m == 0 {
        return Err(DatasetError::InvalidRecipe("need at least one amplitude".into()));
    }
    if am < a1 {
        return Err(DatasetError::InvalidRecipe(format!(
            "amplitude range inverted: [{a1}, {am}]"
        )));
    }
    if m == 1 {
        return Ok(vec![a1]);
    }
    let step = (am - a1) / (m - 1) as f64;
    Ok((0..m).map(|j| a1 + j as f64 * step).collect())
}

/// Full description of a dataset: the drive grid and the chain it drives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecipe {
    pub amplitudes: Vec<f64>,
    pub n_frequencies: usize,
    pub omega_min: f64,
    pub omega_max: f64,
    pub n_steps: usize,
    pub chain: SpinChainParams,
}

impl DatasetRecipe {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.amplitudes.is_empty() {
            return Err(DatasetError::InvalidRecipe("no amplitudes".into()));
        }
        if self.amplitudes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DatasetError::InvalidRecipe(
                "amplitudes must be strictly increasing".into(),
            ));
        }
        if self.n_frequencies < 2 {
            return Err(DatasetError::InvalidRecipe(
                "need at least 2 frequencies per amplitude".into(),
            ));
        }
        if self.omega_min <= 0.0 || self.omega_max <= self.omega_min {
            return Err(DatasetError::InvalidRecipe(format!(
                "invalid frequency range [{}, {}]",
                self.omega_min, self.omega_max
            )));
        }
        if self.n_steps < 2 {
            return Err(DatasetError::InvalidRecipe("n_steps must be >= 2".into()));
        }
        self.chain
            .validate()
            .map_err(|e| DatasetError::InvalidRecipe(e.to_string()))?;
        Ok(())
    }

    /// Shared time step: the slowest drive covers one full period.
    pub fn dt(&self) -> f64 {
        2.0 * std::f64::consts::PI / (self.omega_min * self.n_steps as f64)
    }

    pub fn n_samples(&self) -> usize {
        self.amplitudes.len() * self.n_frequencies
    }
}

/// Which data channel a scaler transform applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Input,
    Output,
}

/// Global MinMax affine maps fitted on the training subset: one for the drive
/// channel and one for the magnetization channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub input_min: f64,
    pub input_max: f64,
    pub output_min: f64,
    pub output_max: f64,
}

impl ScalerParams {
    fn range(&self, channel: Channel) -> (f64, f64) {
        match channel {
            Channel::Input => (self.input_min, self.input_max),
            Channel::Output => (self.output_min, self.output_max),
        }
    }

    pub fn apply(&self, x: f64, channel: Channel) -> f64 {
        let (lo, hi) = self.range(channel);
        (x - lo) / (hi - lo)
    }

    pub fn invert(&self, y: f64, channel: Channel) -> f64 {
        let (lo, hi) = self.range(channel);
        lo + y * (hi - lo)
    }

    /// Multiplicative factor a derivative-like series picks up under the
    /// output map; the offset drops out of any difference.
    pub fn output_scale_factor(&self) -> f64 {
        1.0 / (self.output_max - self.output_min)
    }
}

/// Scales a whole series; test-set values may land outside [0, 1] and are
/// intentionally not clipped.
pub fn apply_scaler(series: &[f64], scaler: &ScalerParams, channel: Channel) -> Vec<f64> {
    series.iter().map(|&x| scaler.apply(x, channel)).collect()
}

pub fn invert_scaler(series: &[f64], scaler: &ScalerParams, channel: Channel) -> Vec<f64> {
    series.iter().map(|&y| scaler.invert(y, channel)).collect()
}

/// Train/test index partition, reproducible from the seed that built it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub seed: u64,
}

/// Generated samples plus optional scaler and split state.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub recipe: DatasetRecipe,
    pub dt: f64,
    pub samples: Vec<TrajectorySample>,
    pub scaler: Option<ScalerParams>,
    pub split: Option<Split>,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.samples.len()
    }

    pub fn scaler(&self) -> Result<&ScalerParams, DatasetError> {
        self.scaler
            .as_ref()
            .ok_or_else(|| DatasetError::Scaler("dataset has no fitted scaler".into()))
    }

    pub fn split(&self) -> Result<&Split, DatasetError> {
        self.split
            .as_ref()
            .ok_or_else(|| DatasetError::Split("dataset has no split".into()))
    }
}

/// Simulates one trajectory per (amplitude, frequency) pair, amplitude-major.
/// Deterministic: every trajectory is an independent fixed-precision
/// computation, collected in grid order.
pub fn generate_dataset(recipe: &DatasetRecipe) -> Result<Dataset, DatasetError> {
    recipe.validate()?;
    let omegas = frequency_grid(recipe.omega_min, recipe.omega_max, recipe.n_frequencies)?;
    let dt = recipe.dt();
    let grid: Vec<(f64, f64)> = recipe
        .amplitudes
        .iter()
        .flat_map(|&a| omegas.iter().map(move |&w| (a, w)))
        .collect();
    let samples = grid
        .par_iter()
        .map(|&(amplitude, omega)| {
            let drive = DriveSignal::new(amplitude, omega, dt, recipe.n_steps).map_err(|e| {
                DatasetError::Simulation {
                    amplitude,
                    omega,
                    source: e,
                }
            })?;
            spin_chain::evolve_trajectory(&recipe.chain, &drive).map_err(|e| {
                DatasetError::Simulation {
                    amplitude,
                    omega,
                    source: e,
                }
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset {
        recipe: recipe.clone(),
        dt,
        samples,
        scaler: None,
        split: None,
    })
}

/// Fits global input/output min-max bounds over the given training samples.
pub fn fit_scaler(dataset: &Dataset, train_indices: &[usize]) -> Result<ScalerParams, DatasetError> {
    if train_indices.is_empty() {
        return Err(DatasetError::Scaler("empty training subset".into()));
    }
    let mut input_min = f64::INFINITY;
    let mut input_max = f64::NEG_INFINITY;
    let mut output_min = f64::INFINITY;
    let mut output_max = f64::NEG_INFINITY;
    for &i in train_indices {
        let s = dataset.samples.get(i).ok_or_else(|| {
            DatasetError::Scaler(format!("train index {i} out of range"))
        })?;
        for &x in &s.drive.samples {
            input_min = input_min.min(x);
            input_max = input_max.max(x);
        }
        for &y in &s.output {
            output_min = output_min.min(y);
            output_max = output_max.max(y);
        }
    }
    if input_max <= input_min {
        return Err(DatasetError::Scaler(format!(
            "degenerate input channel: min = max = {input_min}"
        )));
    }
    if output_max <= output_min {
        return Err(DatasetError::Scaler(format!(
            "degenerate output channel: min = max = {output_min}"
        )));
    }
    Ok(ScalerParams {
        input_min,
        input_max,
        output_min,
        output_max,
    })
}

/// Random train/test partition, stratified per amplitude group so every
/// amplitude contributes the same test share.
pub fn split_train_test(
    dataset: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<Split, DatasetError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(DatasetError::Split(format!(
            "train fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = dataset.samples.len();
    let group = dataset.recipe.n_frequencies;
    if n == 0 || n % group != 0 {
        return Err(DatasetError::Split(format!(
            "sample count {n} is not a multiple of the {group}-frequency grid"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for g in 0..n / group {
        let mut idx: Vec<usize> = (g * group..(g + 1) * group).collect();
        idx.shuffle(&mut rng);
        let n_train = ((group as f64) * fraction).round() as usize;
        if n_train == 0 || n_train == group {
            return Err(DatasetError::Split(format!(
                "fraction {fraction} leaves an empty side for group size {group}"
            )));
        }
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test, seed })
}

// ---------------------------------------------------------------------------
// Persistence: one self-describing JSON document per dataset
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SampleFile {
    amplitude: f64,
    omega: f64,
    input: Vec<f64>,
    output: Vec<f64>,
    ehrenfest_rhs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format_version: u32,
    recipe: DatasetRecipe,
    dt: f64,
    samples: Vec<SampleFile>,
    scaler: Option<ScalerParams>,
    split: Option<Split>,
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let file = DatasetFile {
        format_version: DATASET_FORMAT_VERSION,
        recipe: dataset.recipe.clone(),
        dt: dataset.dt,
        samples: dataset
            .samples
            .iter()
            .map(|s| SampleFile {
                amplitude: s.drive.amplitude,
                omega: s.drive.omega,
                input: s.drive.samples.clone(),
                output: s.output.clone(),
                ehrenfest_rhs: s.ehrenfest_rhs.clone(),
            })
            .collect(),
        scaler: dataset.scaler,
        split: dataset.split.clone(),
    };
    let json = serde_json::to_string(&file).expect("dataset serialization cannot fail");
    std::fs::write(path, json).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let file: DatasetFile = serde_json::from_str(&text).map_err(|e| DatasetError::Malformed {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if file.format_version != DATASET_FORMAT_VERSION {
        return Err(DatasetError::VersionMismatch {
            path: path.display().to_string(),
            found: file.format_version,
        });
    }
    let malformed = |detail: String| DatasetError::Malformed {
        path: path.display().to_string(),
        detail,
    };
    let n_steps = file.recipe.n_steps;
    let mut samples = Vec::with_capacity(file.samples.len());
    for (i, s) in file.samples.into_iter().enumerate() {
        if s.input.len() != n_steps {
            return Err(malformed(format!(
                "sample {i}: input length {} != n_steps {n_steps}",
                s.input.len()
            )));
        }
        if s.output.len() != n_steps || s.ehrenfest_rhs.len() != n_steps {
            return Err(malformed(format!(
                "sample {i}: output/ehrenfest_rhs lengths {}/{} != n_steps {n_steps}",
                s.output.len(),
                s.ehrenfest_rhs.len()
            )));
        }
        for (k, &x) in s.input.iter().enumerate() {
            let expected = s.amplitude * (s.omega * (k + 1) as f64 * file.dt).sin();
            if (x - expected).abs() > 1e-12 {
                return Err(malformed(format!(
                    "sample {i}: input[{k}] = {x} deviates from A*sin(omega*t)"
                )));
            }
        }
        samples.push(TrajectorySample {
            drive: DriveSignal {
                amplitude: s.amplitude,
                omega: s.omega,
                dt: file.dt,
                samples: s.input,
            },
            output: s.output,
            ehrenfest_rhs: s.ehrenfest_rhs,
        });
    }
    if let Some(split) = &file.split {
        let n = samples.len();
        let mut seen = vec![false; n];
        for &i in split.train.iter().chain(&split.test) {
            if i >= n || seen[i] {
                return Err(malformed(format!("split index {i} out of range or repeated")));
            }
            seen[i] = true;
        }
    }
    Ok(Dataset {
        recipe: file.recipe,
        dt: file.dt,
        samples,
        scaler: file.scaler,
        split: file.split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_recipe() -> DatasetRecipe {
        DatasetRecipe {
            amplitudes: vec![2.6],
            n_frequencies: 2,
            omega_min: 0.4,
            omega_max: 4.0,
            n_steps: 10,
            chain: SpinChainParams::new(0.8, 0.2, -0.42, 2).unwrap(),
        }
    }

    #[test]
    fn frequency_grid_endpoints_and_spacing() {
        assert_eq!(frequency_grid(0.4, 4.0, 2).unwrap(), vec![0.4, 4.0]);

        let g = frequency_grid(0.4, 4.0, 200).unwrap();
        assert_eq!(g.len(), 200);
        assert!((g[1] - g[0] - 3.6 / 199.0).abs() < 1e-15);
        assert!((g[0] - 0.4).abs() < 1e-15 && (g[199] - 4.0).abs() < 1e-15);

        let g3 = frequency_grid(0.4, 3.0, 200).unwrap();
        assert!((g3[0] - 0.4).abs() < 1e-15 && (g3[199] - 3.0).abs() < 1e-15);

        assert!(frequency_grid(4.0, 0.4, 10).is_err());
        assert!(frequency_grid(0.4, 4.0, 1).is_err());
    }

    #[test]
    fn amplitude_grid_formula() {
        let g = amplitude_grid(0.4, 2.6, 8).unwrap();
        assert_eq!(g.len(), 8);
        assert!((g[1] - g[0] - 2.2 / 7.0).abs() < 1e-15);
        assert!((g[1] - 0.7142857142857144).abs() < 1e-15);

        let g10 = amplitude_grid(1.0, 10.0, 10).unwrap();
        for (j, a) in g10.iter().enumerate() {
            assert!((a - (j + 1) as f64).abs() < 1e-12);
        }

        assert_eq!(amplitude_grid(2.6, 2.6, 1).unwrap(), vec![2.6]);
        assert!(amplitude_grid(1.0, 0.5, 3).is_err());
        assert!(amplitude_grid(1.0, 2.0, 0).is_err());
    }

    #[test]
    fn generate_smoke_and_determinism() {
        let recipe = small_recipe();
        let d1 = generate_dataset(&recipe).unwrap();
        assert_eq!(d1.n_samples(), 2);
        assert_eq!(d1.samples[0].output.len(), 10);
        // bit-identical regeneration
        let d2 = generate_dataset(&recipe).unwrap();
        assert_eq!(d1.samples, d2.samples);
        // dt follows T = 2*pi/omega_min
        assert!((d1.dt - 2.0 * std::f64::consts::PI / (0.4 * 10.0)).abs() < 1e-15);
    }

    #[test]
    fn generated_grid_is_amplitude_major() {
        let mut recipe = small_recipe();
        recipe.amplitudes = vec![1.0, 2.0];
        let d = generate_dataset(&recipe).unwrap();
        assert_eq!(d.n_samples(), 4);
        assert_eq!(d.samples[0].drive.amplitude, 1.0);
        assert_eq!(d.samples[1].drive.amplitude, 1.0);
        assert_eq!(d.samples[2].drive.amplitude, 2.0);
        assert!((d.samples[0].drive.omega - 0.4).abs() < 1e-15);
        assert!((d.samples[1].drive.omega - 4.0).abs() < 1e-15);
    }

    #[test]
    fn scaler_bounds_and_round_trip() {
        let mut recipe = small_recipe();
        recipe.n_steps = 50;
        let d = generate_dataset(&recipe).unwrap();
        let scaler = fit_scaler(&d, &[0, 1]).unwrap();
        // long-horizon sine at A = 2.6 reaches close to both extremes
        assert!(scaler.input_min < -2.0 && scaler.input_max > 2.0);
        assert_eq!(scaler.apply(scaler.input_min, Channel::Input), 0.0);
        assert_eq!(scaler.apply(scaler.input_max, Channel::Input), 1.0);
        let mid = (scaler.output_min + scaler.output_max) / 2.0;
        assert!((scaler.apply(mid, Channel::Output) - 0.5).abs() < 1e-12);
        for &x in &d.samples[0].output {
            let rt = scaler.invert(scaler.apply(x, Channel::Output), Channel::Output);
            assert!((rt - x).abs() < 1e-12);
        }
    }

    #[test]
    fn scaler_rejects_degenerate_and_empty() {
        let recipe = small_recipe();
        let mut d = generate_dataset(&recipe).unwrap();
        assert!(fit_scaler(&d, &[]).is_err());
        for s in &mut d.samples {
            s.output.iter_mut().for_each(|y| *y = 1.5);
        }
        assert!(matches!(
            fit_scaler(&d, &[0, 1]),
            Err(DatasetError::Scaler(_))
        ));
    }

    #[test]
    fn split_is_stratified_and_reproducible() {
        let mut recipe = small_recipe();
        recipe.amplitudes = vec![1.0, 2.0];
        recipe.n_frequencies = 10;
        recipe.n_steps = 4;
        let d = generate_dataset(&recipe).unwrap();
        let s1 = split_train_test(&d, 0.8, 7).unwrap();
        let s2 = split_train_test(&d, 0.8, 7).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.train.len(), 16);
        assert_eq!(s1.test.len(), 4);
        // 2 test samples per amplitude group of 10
        for g in 0..2 {
            let in_group = s1
                .test
                .iter()
                .filter(|&&i| i / 10 == g)
                .count();
            assert_eq!(in_group, 2);
        }
        // partition property
        let mut all: Vec<usize> = s1.train.iter().chain(&s1.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());

        let s3 = split_train_test(&d, 0.8, 8).unwrap();
        assert_ne!(s1, s3);
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let recipe = small_recipe();
        let mut d = generate_dataset(&recipe).unwrap();
        let split = split_train_test(&d, 0.5, 3).unwrap();
        d.scaler = Some(fit_scaler(&d, &split.train).unwrap());
        d.split = Some(split);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        save_dataset(&d, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(d, loaded);
    }

    #[test]
    fn truncated_file_reports_error() {
        let recipe = small_recipe();
        let d = generate_dataset(&recipe).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        save_dataset(&d, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, DatasetError::Malformed { .. }), "{err}");
    }

    #[test]
    fn version_mismatch_rejected() {
        let recipe = small_recipe();
        let d = generate_dataset(&recipe).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        save_dataset(&d, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"format_version\":1", "\"format_version\":99");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_dataset(&path),
            Err(DatasetError::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn inconsistent_lengths_rejected_on_load() {
        let recipe = small_recipe();
        let d = generate_dataset(&recipe).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        save_dataset(&d, &path).unwrap();
        let mut file: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        file["samples"][0]["output"]
            .as_array_mut()
            .unwrap()
            .pop();
        std::fs::write(&path, serde_json::to_string(&file).unwrap()).unwrap();
        let err = load_dataset(&path).unwrap_err();
        match err {
            DatasetError::Malformed { detail, .. } => {
                assert!(detail.contains("sample 0"), "{detail}")
            }
            other => panic!("unexpected error {other}"),
        }
    }
}
