//! Step-wise transmission protocol: warmup, residual formation, error
//! feedback and base advancement.
//!
//! Sender and receiver each hold a [`LayerState`]. Both advance their `base`
//! (the reconstruction `ã_t`) by decoding the same payload, so the two stay
//! bit-identical.
//!
//! Residuals are formed against the sender's previous *input* `a*_{t−1}`:
//!
//! * `Naive`: send `C(a*_t)`; `ã_t = D`.
//! * `ResidualNoFeedback`: send `C(a*_t − a*_{t−1})`; `ã_t = ã_{t−1} + D`.
//!   Compression errors are never corrected, so they accumulate.
//! * `ResidualWithFeedback`: send `C(a*_t − a*_{t−1} + e_{t−1})` and keep
//!   `e_t = target − D`. This telescopes to `a*_t − ã_{t−1}`: the residual
//!   against the shared reconstruction.
//!
//! Warmup steps and lossless codecs send `a*_t` raw, so `ã_t = a*_t` exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compress::{
    decode, delta_between, encode, encode_raw, CodecError, CodecTag, CompressedPayload,
    CompressorSpec,
};
use crate::process::Trajectory;
use crate::rng::Rng;
use crate::tensor::{Matrix, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    Naive,
    ResidualNoFeedback,
    ResidualWithFeedback,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 3] = [
        PipelineMode::Naive,
        PipelineMode::ResidualNoFeedback,
        PipelineMode::ResidualWithFeedback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::ResidualNoFeedback => "residual_no_feedback",
            Self::ResidualWithFeedback => "residual_with_feedback",
        }
    }
}

impl std::fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What the sender's next input is computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopModel {
    /// `a*_t = f_t(ã_{t−1})`: the sender continues from the shared
    /// reconstruction, so errors feed back into the dynamics.
    #[default]
    Closed,
    /// `a*_t = a_t`: the sender follows the uncompressed trajectory.
    Open,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("step {got} arrived but step {expected} was expected")]
    Desync { expected: u64, got: u64 },
    #[error("expected a {expected} payload at step {step}, got {got}")]
    UnexpectedCodec {
        step: u64,
        expected: CodecTag,
        got: CodecTag,
    },
    #[error("shape mismatch: state holds {state:?}, input is {input:?}")]
    Shape {
        state: (usize, usize),
        input: (usize, usize),
    },
    #[error("step message shorter than its 4-byte header")]
    ShortMessage,
    #[error("warmup must be at least 1 step")]
    NoWarmup,
    #[error("need more steps ({steps}) than warmup steps ({warmup})")]
    TooFewSteps { steps: usize, warmup: usize },
    #[error("sender and receiver reconstructions diverged at step {0}")]
    Diverged(u64),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A payload tagged with the step it belongs to. Wire form: `u32` LE step,
/// then the payload bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepMessage {
    pub step: u32,
    pub payload: CompressedPayload,
}

impl StepMessage {
    pub const HEADER_LEN: usize = 4;

    pub fn wire_len(&self) -> usize {
        Self::HEADER_LEN + self.payload.wire_len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&self.step.to_le_bytes());
        self.payload.write_to(&mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PipelineError> {
        if bytes.len() < Self::HEADER_LEN {
            return Err(PipelineError::ShortMessage);
        }
        let step = u32::from_le_bytes(bytes[..4].try_into().unwrap());
        Ok(Self {
            step,
            payload: CompressedPayload::from_bytes(&bytes[4..])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub warmup: bool,
    /// `‖D − target‖²`.
    pub compression_error: f64,
    /// `‖target‖²`.
    pub target_energy: f64,
    pub bits: u64,
    /// Bits spent on per-element codes, excluding scales, masks and indices.
    pub element_bits: u64,
    pub wire_bytes: u64,
    pub delta_hat: f64,
}

/// One end of a (layer, peer) channel.
#[derive(Debug, Clone)]
pub struct LayerState {
    mode: PipelineMode,
    codec: CompressorSpec,
    warmup_steps: u64,
    step: u64,
    base: Matrix,
    /// Sender only: the previous input `a*_{t−1}`.
    reference: Matrix,
    /// Sender only: accumulated compression error (zero outside feedback mode).
    feedback: Matrix,
}

impl LayerState {
    pub fn new(
        rows: usize,
        cols: usize,
        mode: PipelineMode,
        codec: CompressorSpec,
        warmup_steps: usize,
    ) -> Result<Self, PipelineError> {
        if warmup_steps == 0 {
            return Err(PipelineError::NoWarmup);
        }
        codec.validate_for(rows, cols)?;
        let zeros = Matrix::zeros(rows, cols);
        Ok(Self {
            mode,
            codec,
            warmup_steps: warmup_steps as u64,
            step: 0,
            base: zeros.clone(),
            reference: zeros.clone(),
            feedback: zeros,
        })
    }

    /// Number of completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn mode(&self) -> PipelineMode {
        self.mode
    }

    pub fn codec(&self) -> &CompressorSpec {
        &self.codec
    }

    /// Current reconstruction `ã_t`.
    pub fn base(&self) -> &Matrix {
        &self.base
    }

    pub fn feedback(&self) -> &Matrix {
        &self.feedback
    }

    fn sends_raw(&self, step: u64) -> bool {
        step <= self.warmup_steps || self.codec.is_lossless()
    }

    fn check_shape(&self, m: &Matrix) -> Result<(), PipelineError> {
        if m.shape() != self.base.shape() {
            return Err(PipelineError::Shape {
                state: self.base.shape(),
                input: m.shape(),
            });
        }
        Ok(())
    }

    /// Sender side: compresses `a_star` for the next step and advances.
    /// On error the state is left unchanged.
    pub fn encode_step(
        &mut self,
        a_star: &Matrix,
        rng: &mut Rng,
    ) -> Result<(StepMessage, StepRecord), PipelineError> {
        self.check_shape(a_star)?;
        let t = self.step + 1;
        let step = u32::try_from(t).map_err(|_| CodecError::TooLarge)?;
        if self.sends_raw(t) {
            let payload = encode_raw(a_star)?;
            let decoded = decode(&payload)?;
            let record = StepRecord {
                step: t,
                warmup: t <= self.warmup_steps,
                compression_error: 0.0,
                target_energy: a_star.frob_norm_sq(),
                bits: payload.bit_size(),
                element_bits: payload.element_bits(),
                wire_bytes: (StepMessage::HEADER_LEN + payload.wire_len()) as u64,
                delta_hat: 1.0,
            };
            self.base = decoded;
            self.reference = a_star.clone();
            self.feedback = Matrix::zeros(a_star.rows(), a_star.cols());
            self.step = t;
            return Ok((StepMessage { step, payload }, record));
        }
        let target = match self.mode {
            PipelineMode::Naive => a_star.clone(),
            PipelineMode::ResidualNoFeedback => a_star.sub(&self.reference)?,
            PipelineMode::ResidualWithFeedback => {
                a_star.sub(&self.reference)?.add(&self.feedback)?
            }
        };
        let payload = encode(&self.codec, &target, rng)?;
        let decoded = decode(&payload)?;
        let next_base = match self.mode {
            PipelineMode::Naive => decoded.clone(),
            _ => self.base.add(&decoded)?,
        };
        let next_feedback = if self.mode == PipelineMode::ResidualWithFeedback {
            Some(target.sub(&decoded)?)
        } else {
            None
        };
        let record = StepRecord {
            step: t,
            warmup: false,
            compression_error: target.dist_sq(&decoded)?,
            target_energy: target.frob_norm_sq(),
            bits: payload.bit_size(),
            element_bits: payload.element_bits(),
            wire_bytes: (StepMessage::HEADER_LEN + payload.wire_len()) as u64,
            delta_hat: delta_between(&target, &decoded)?.value(),
        };
        self.base = next_base;
        self.reference = a_star.clone();
        if let Some(fb) = next_feedback {
            self.feedback = fb;
        }
        self.step = t;
        Ok((StepMessage { step, payload }, record))
    }

    /// Receiver side: applies a message and returns the new reconstruction.
    /// On error the state is left unchanged.
    pub fn decode_step(&mut self, msg: &StepMessage) -> Result<&Matrix, PipelineError> {
        let t = self.step + 1;
        if msg.step as u64 != t {
            return Err(PipelineError::Desync {
                expected: t,
                got: msg.step as u64,
            });
        }
        let raw = self.sends_raw(t);
        let expected = if raw { CodecTag::Raw } else { self.codec.tag() };
        if msg.payload.tag() != expected {
            return Err(PipelineError::UnexpectedCodec {
                step: t,
                expected,
                got: msg.payload.tag(),
            });
        }
        let decoded = decode(&msg.payload)?;
        self.check_shape(&decoded)?;
        self.base = if raw || self.mode == PipelineMode::Naive {
            decoded
        } else {
            self.base.add(&decoded)?
        };
        self.step = t;
        Ok(&self.base)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub codec: CompressorSpec,
    pub mode: PipelineMode,
    pub warmup: usize,
    #[serde(default)]
    pub loop_model: LoopModel,
    /// Seed for the codec's randomness (low-rank start vectors).
    pub seed: u64,
}

/// Per-step outcome of driving one channel along a trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRun {
    pub settings: RunSettings,
    pub records: Vec<StepRecord>,
    /// `‖ã_t − a_t‖²` against the uncompressed trajectory, per step.
    pub total_error: Vec<f64>,
    pub reconstructions: Vec<Matrix>,
    /// The sender inputs `a*_t`.
    pub inputs: Vec<Matrix>,
}

impl TrajectoryRun {
    pub fn mean_total_error(&self) -> f64 {
        mean(&self.total_error)
    }

    /// Mean total error over the last `window` steps.
    pub fn late_total_error(&self, window: usize) -> f64 {
        let n = self.total_error.len();
        mean(&self.total_error[n - window.min(n)..])
    }

    /// `1 − Σ‖D − target‖² / Σ‖target‖²` over compressed steps in the last
    /// `window` steps.
    pub fn delta_hat(&self, window: usize) -> f64 {
        let n = self.records.len();
        let (err, energy) = self.records[n - window.min(n)..]
            .iter()
            .filter(|r| !r.warmup)
            .fold((0.0, 0.0), |(e, g), r| (e + r.compression_error, g + r.target_energy));
        if energy == 0.0 {
            1.0
        } else {
            1.0 - err / energy
        }
    }

    /// Mean `‖target‖²` over compressed steps in the last `window` steps.
    pub fn mean_target_energy(&self, window: usize) -> f64 {
        let n = self.records.len();
        let e: Vec<f64> = self.records[n - window.min(n)..]
            .iter()
            .filter(|r| !r.warmup)
            .map(|r| r.target_energy)
            .collect();
        mean(&e)
    }

    pub fn total_wire_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.wire_bytes).sum()
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Streams a trajectory through one sender/receiver channel over the wire
/// encoding, checking the shared-base invariant every step.
pub fn run_trajectory(
    traj: &Trajectory,
    settings: &RunSettings,
) -> Result<TrajectoryRun, PipelineError> {
    let steps = traj.steps();
    if settings.warmup >= steps {
        return Err(PipelineError::TooFewSteps {
            steps,
            warmup: settings.warmup,
        });
    }
    let (rows, cols) = traj.shape();
    let mut sender = LayerState::new(rows, cols, settings.mode, settings.codec, settings.warmup)?;
    let mut receiver = sender.clone();
    let mut rng = Rng::stream(settings.seed, 0x636f646563);
    let mut out = TrajectoryRun {
        settings: *settings,
        records: Vec::with_capacity(steps),
        total_error: Vec::with_capacity(steps),
        reconstructions: Vec::with_capacity(steps),
        inputs: Vec::with_capacity(steps),
    };
    for t in 1..=steps {
        let reference = traj.activation(t);
        let a_star = match (settings.loop_model, out.reconstructions.last()) {
            (LoopModel::Closed, Some(prev)) => traj.step(t, prev)?,
            _ => reference.clone(),
        };
        let (msg, record) = sender.encode_step(&a_star, &mut rng)?;
        let wire = msg.to_bytes();
        let recon = receiver.decode_step(&StepMessage::from_bytes(&wire)?)?.clone();
        if recon != *sender.base() {
            return Err(PipelineError::Diverged(t as u64));
        }
        out.total_error.push(recon.dist_sq(reference)?);
        out.records.push(record);
        out.reconstructions.push(recon);
        out.inputs.push(a_star);
    }
    Ok(out)
}
