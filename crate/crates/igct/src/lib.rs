//! Invertible guided consistency training (iGCT) and its baselines on
//! low-dimensional labeled Gaussian-mixture worlds.
//!
//! The mixture world ([`oracle::MixtureWorld`]) has closed-form denoisers and
//! scores, so every training target, sampler and metric in this crate can be
//! checked against an exact reference. Three trainers are provided:
//!
//! - [`train::run_igct`] — joint denoiser/noiser consistency training with
//!   decoupled guided targets and a reconstruction coupling loss,
//! - [`train::run_cfg_edm`] — the classifier-free-guidance diffusion baseline,
//! - [`train::run_guided_cd`] — guided consistency distillation against the
//!   analytic teacher.
//!
//! All numeric code is generic over [`scalar::Scalar`] (f32 or f64); the
//! shipped CLI and every persisted artifact use [`Real`] = f64.

pub mod checkpoint;
pub mod metrics;
pub mod model;
pub mod net;
pub mod ode;
pub mod oracle;
pub mod precond;
pub mod sampler;
pub mod scalar;
pub mod schedule;
pub mod train;

pub use scalar::Scalar;

/// Canonical scalar for the CLI, checkpoints and CSV/JSON artifacts.
pub type Real = f64;

/// Schedule configuration at the canonical precision.
pub type ScheduleConfig = schedule::ScheduleConfig<Real>;
/// Mixture world at the canonical precision.
pub type MixtureWorld = oracle::MixtureWorld<Real>;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("noise level {t} outside [{lo}, {hi}]")]
    TimeOutOfRange { t: f64, lo: f64, hi: f64 },

    #[error("class id {id} out of range (world has {n_classes} classes)")]
    ClassOutOfRange { id: usize, n_classes: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("score undefined at t = 0")]
    ScoreAtZero,

    #[error("{}", if *.expects { "network expects a guidance input" } else { "network takes no guidance input" })]
    GuidanceArg { expects: bool },

    #[error("time grid must be strictly monotone with at least two levels")]
    BadTimeGrid,

    #[error("unsupported nfe {nfe} for {kind}")]
    UnsupportedNfe { nfe: usize, kind: &'static str },

    #[error("non-finite {quantity} at iteration {iteration}")]
    NonFinite { quantity: String, iteration: u64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("checkpoint schema version {got} unsupported (expected {expected})")]
    SchemaMismatch { got: u32, expected: u32 },

    #[error("checkpoint has no `{0}` network")]
    MissingNet(&'static str),

    #[error("unknown parameter array `{0}` in checkpoint")]
    UnknownArray(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
