//! Wideband massive-MIMO covariance identification and channel estimation.
//!
//! The crate covers the full simulation chain: sparse complete rulers that
//! pick the downlink training beams, a beam-squinted wideband channel model,
//! covariance support identification (greedy, subspace, coarray, and ML
//! flavors), reduced-rank channel estimators, and a Monte-Carlo harness with
//! deterministic seeding and CSV/SVG output.

pub mod channel;
pub mod chest;
pub mod error;
pub mod harness;
pub mod ident;
pub mod linalg;
pub mod rulers;

pub use channel::{ArrayConfig, ChannelParams, CovKind, CovarianceSet, Dictionary, GainProfile};
pub use error::{Error, Result};
pub use ident::{Algo, GainMode, IdentResult, SmoothingMode};
pub use linalg::{CMat, CVec, Cx};
pub use rulers::{Ruler, TrainingMatrix};
