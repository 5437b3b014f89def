//! Attention-based spatio-temporal point process (APP) for congestion-event
//! modeling on directed traffic networks.
//!
//! The crate is `no_std` + `alloc`: everything here is pure computation.
//! File formats, the CLI, and anything that needs an OS live in the companion
//! `stpp` crate.
//!
//! Module map:
//! - [`network`]: directed segment graph, stream distance, flow-connectivity,
//!   tail-up exponential correlation with confluence-additive weights.
//! - [`events`]: event data model, congestion extraction from count series,
//!   train/test splitting.
//! - [`autodiff`]: scalar reverse-mode tape, the score MLP, Adam.
//! - [`attention`]: score function, normalized attention weights, multi-head
//!   aggregation, endogenous self-excitation.
//! - [`intensity`]: conditional intensity, compensator, log-likelihood,
//!   conditional density, next-event prediction.
//! - [`online`]: bounded-memory event selection and the online intensity.
//! - [`simulate`]: Ogata thinning and the synthetic generators.
//! - [`train`]: maximum-likelihood training, evaluation metrics, the
//!   parametric Hawkes MLE baseline.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod attention;
pub mod autodiff;
pub mod events;
pub mod intensity;
pub mod math;
pub mod network;
pub mod online;
pub mod rng;
pub mod simulate;
pub mod train;

pub use attention::{AttentionParams, EventEmbedding};
pub use autodiff::{AdamState, MlpParams, Scalar, Tape, Var};
pub use events::{CongestionEvent, CountSeries, EventSequence, IncidentEvent};
pub use intensity::{IntensityTrace, ModelConfig, ModelParams};
pub use network::{NetworkLocation, SegmentWeights, TailupParams, TrafficNetwork};
pub use online::OnlineSelection;
pub use simulate::GeneratorSpec;
pub use train::{EvalReport, TrainConfig};
