//! Consistent subsample time-delay estimation for microphone arrays.
//!
//! The multichannel estimator maximizes the multichannel cross-correlation
//! over all delays jointly with an auxiliary-function (MM) scheme, so every
//! reference channel yields the same, mutually consistent delay family.
//! Pairwise GCC, parabolic refinement and a two-channel auxiliary solver are
//! provided as baselines, together with a free-field simulator and the
//! evaluation metrics used to compare them.

pub mod error;
pub mod evalkit;
pub mod oracle;
pub mod pairwise;
pub mod signal;
pub mod solver;
pub mod spectrum;

pub use error::{Error, Result};
pub use pairwise::{pairwise_estimate, PairwiseConfig, PairwiseMethod, TdVector};
pub use signal::{frame_and_transform, FrameConfig, MultichannelSignal, SpectraTensor};
pub use solver::{run_auxtde, AmpMode, SolverConfig, SolverOutput};
pub use spectrum::{estimate_covariance, WeightingScheme};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/delays.md")]
    mod delays {}
    #[doc = include_str!("../../../book/src/objective.md")]
    mod objective {}
    #[doc = include_str!("../../../book/src/amplitudes.md")]
    mod amplitudes {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
