//! Schrödinger bridge flow matching (SBFM) for paired source → target
//! transport of two-block ("audio" + "video") latent states.
//!
//! The crate is organised bottom-up:
//!
//! * [`bridge_math`] closed-form quantities of the pinned Brownian bridge.
//! * [`simulate`] Euler ODE and Euler–Maruyama SDE integration.
//! * [`field_model`] the trainable velocity field with hand-written gradients.
//! * [`objective`] training-target draws and the λ-weighted bimodal loss.
//! * [`trainer`] AdamW with linear warmup, epoch loop and run manifests.
//! * [`toy_data`] synthetic paired object-removal dataset.
//! * [`oracle_eval`] independent oracles and evaluation metrics.
//! * [`config`] the serialisable run configuration shared by the CLI.

pub mod bridge_math;
pub mod config;
pub mod error;
pub mod field_model;
pub mod objective;
pub mod oracle_eval;
pub mod rng;
pub mod simulate;
pub mod toy_data;
pub mod trainer;

pub use bridge_math::{BridgeSchedule, EndpointPair, LatentState, TimePoint};
pub use error::{Result, SbfmError};
pub use rng::RandomStream;
