//! Chain of KANs: one network per output time step, each consuming only the
//! drive values at or before its own step, so causality holds by
//! construction. All members share one `[W, ..., 1]` architecture; steps with
//! fewer than `W` admissible inputs are left-padded with zeros.

use crate::kan::{self, KanNetwork, Layer, LayerKind, NetworkGradients, SplineGrid};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const CHAIN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("invalid chain model: {0}")]
    Invalid(String),
    #[error("time index {k} outside 1..={n_steps}")]
    BadTimeIndex { k: usize, n_steps: usize },
    #[error("input length {actual} != chain length {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error(transparent)]
    Kan(#[from] kan::KanError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed chain checkpoint {path}: {detail}")]
    Malformed { path: String, detail: String },
    #[error("chain checkpoint {path} has format_version {found}, expected {CHAIN_FORMAT_VERSION}")]
    VersionMismatch { path: String, found: u32 },
}

/// The causally admissible inputs for predicting step `k` (1-based): the
/// window `[h_{k-W+1}, ..., h_k]`, left-padded with zeros where the window
/// reaches before the first sample.
pub fn causal_input(h: &[f64], k: usize, window: usize) -> Result<Vec<f64>, ChainError> {
    if k == 0 || k > h.len() {
        return Err(ChainError::BadTimeIndex {
            k,
            n_steps: h.len(),
        });
    }
    let mut out = vec![0.0; window];
    let available = k.min(window);
    out[window - available..].copy_from_slice(&h[k - available..k]);
    Ok(out)
}

/// Per-time-step family of causal KANs.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainModel {
    pub members: Vec<KanNetwork>,
    pub window: usize,
}

impl ChainModel {
    /// One member per output step, all with the same `[window, ..., 1]`
    /// architecture, seeded independently but reproducibly from `seed`.
    pub fn init(
        n_steps: usize,
        member_architecture: &[usize],
        window: usize,
        kind: LayerKind,
        grid: &SplineGrid,
        seed: u64,
    ) -> Result<Self, ChainError> {
        if n_steps == 0 {
            return Err(ChainError::Invalid("chain needs at least one step".into()));
        }
        if window == 0 || window > n_steps {
            return Err(ChainError::Invalid(format!(
                "window {window} outside 1..={n_steps}"
            )));
        }
        if member_architecture.first() != Some(&window) {
            return Err(ChainError::Invalid(format!(
                "member architecture {member_architecture:?} must start at window {window}"
            )));
        }
        if member_architecture.last() != Some(&1) {
            return Err(ChainError::Invalid(format!(
                "member architecture {member_architecture:?} must end with a single output"
            )));
        }
        let members = (0..n_steps)
            .map(|k| {
                KanNetwork::init(
                    member_architecture,
                    kind,
                    grid,
                    seed.wrapping_add(k as u64),
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { members, window })
    }

    pub fn n_steps(&self) -> usize {
        self.members.len()
    }

    pub fn member_architecture(&self) -> &[usize] {
        &self.members[0].architecture
    }

    pub fn kind(&self) -> LayerKind {
        self.members[0].kind
    }

    pub fn param_len(&self) -> usize {
        self.members.iter().map(KanNetwork::param_len).sum()
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        if self.members.is_empty() {
            return Err(ChainError::Invalid("chain has no members".into()));
        }
        let arch = self.members[0].architecture.clone();
        if arch.first() != Some(&self.window) || arch.last() != Some(&1) {
            return Err(ChainError::Invalid(format!(
                "member architecture {arch:?} incompatible with window {}",
                self.window
            )));
        }
        for (k, m) in self.members.iter().enumerate() {
            if m.architecture != arch {
                return Err(ChainError::Invalid(format!(
                    "member {k} architecture {:?} != {arch:?}",
                    m.architecture
                )));
            }
            m.validate()?;
        }
        Ok(())
    }

    /// `Y_hat_k = member_k(causal_input(h, k))` for every step.
    pub fn forward(&self, h: &[f64]) -> Result<Vec<f64>, ChainError> {
        if h.len() != self.n_steps() {
            return Err(ChainError::LengthMismatch {
                expected: self.n_steps(),
                actual: h.len(),
            });
        }
        let mut out = Vec::with_capacity(self.n_steps());
        for (k, member) in self.members.iter().enumerate() {
            let x = causal_input(h, k + 1, self.window)?;
            out.push(member.forward(&x)?[0]);
        }
        Ok(out)
    }

    /// Accumulates all member gradients into one flat buffer (members in
    /// step order). `upstream[k]` is the loss gradient of prediction `k`;
    /// any coupling between steps (for example a finite-difference penalty
    /// stencil) must already be folded into `upstream` by the caller.
    pub fn backward_into(
        &self,
        h: &[f64],
        upstream: &[f64],
        flat_grad: &mut [f64],
    ) -> Result<(), ChainError> {
        if h.len() != self.n_steps() || upstream.len() != self.n_steps() {
            return Err(ChainError::LengthMismatch {
                expected: self.n_steps(),
                actual: h.len().min(upstream.len()),
            });
        }
        if flat_grad.len() != self.param_len() {
            return Err(ChainError::Invalid(format!(
                "gradient buffer length {} != parameter count {}",
                flat_grad.len(),
                self.param_len()
            )));
        }
        let mut offset = 0;
        for (k, member) in self.members.iter().enumerate() {
            let len = member.param_len();
            if upstream[k] != 0.0 {
                let x = causal_input(h, k + 1, self.window)?;
                member.backward_into(&x, &[upstream[k]], &mut flat_grad[offset..offset + len])?;
            }
            offset += len;
        }
        Ok(())
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        for m in &self.members {
            out.extend_from_slice(&m.flat_params());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), ChainError> {
        if flat.len() != self.param_len() {
            return Err(ChainError::Invalid(format!(
                "flat parameter vector length {} != {}",
                flat.len(),
                self.param_len()
            )));
        }
        let mut offset = 0;
        for m in &mut self.members {
            let len = m.param_len();
            m.set_flat_params(&flat[offset..offset + len])?;
            offset += len;
        }
        Ok(())
    }
}

/// Structured per-member gradients for the per-step upstream vector.
pub fn chain_gradients(
    model: &ChainModel,
    h: &[f64],
    upstream: &[f64],
) -> Result<Vec<NetworkGradients>, ChainError> {
    if h.len() != model.n_steps() || upstream.len() != model.n_steps() {
        return Err(ChainError::LengthMismatch {
            expected: model.n_steps(),
            actual: h.len().min(upstream.len()),
        });
    }
    model
        .members
        .iter()
        .enumerate()
        .map(|(k, member)| {
            let x = causal_input(h, k + 1, model.window)?;
            Ok(member.gradients(&x, &[upstream[k]])?)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Checkpoint persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ChainFile {
    format_version: u32,
    n_members: usize,
    window: usize,
    member_kind: LayerKind,
    architecture: Vec<usize>,
    members: Vec<Vec<Layer>>,
}

pub fn save_chain(model: &ChainModel, path: &Path) -> Result<(), ChainError> {
    let file = ChainFile {
        format_version: CHAIN_FORMAT_VERSION,
        n_members: model.n_steps(),
        window: model.window,
        member_kind: model.kind(),
        architecture: model.member_architecture().to_vec(),
        members: model.members.iter().map(|m| m.layers.clone()).collect(),
    };
    let json = serde_json::to_string(&file).expect("chain serialization cannot fail");
    std::fs::write(path, json).map_err(|e| ChainError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn load_chain(path: &Path) -> Result<ChainModel, ChainError> {
    let text = std::fs::read_to_string(path).map_err(|e| ChainError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let file: ChainFile = serde_json::from_str(&text).map_err(|e| ChainError::Malformed {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    if file.format_version != CHAIN_FORMAT_VERSION {
        return Err(ChainError::VersionMismatch {
            path: path.display().to_string(),
            found: file.format_version,
        });
    }
    if file.members.len() != file.n_members {
        return Err(ChainError::Malformed {
            path: path.display().to_string(),
            detail: format!(
                "n_members {} but {} member payloads",
                file.n_members,
                file.members.len()
            ),
        });
    }
    let model = ChainModel {
        members: file
            .members
            .into_iter()
            .map(|layers| KanNetwork {
                kind: file.member_kind,
                architecture: file.architecture.clone(),
                layers,
            })
            .collect(),
        window: file.window,
    };
    model.validate().map_err(|e| ChainError::Malformed {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    Ok(model)
}
