#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamforming;
pub mod channel;
pub mod convex_core;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod link_metrics;
pub mod sca_optimizer;
pub mod scenario;
pub mod surrogate;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/scenario.md")]
    pub mod scenario {}
    #[doc = include_str!("../../../book/src/channels.md")]
    pub mod channels {}
    #[doc = include_str!("../../../book/src/beamforming.md")]
    pub mod beamforming {}
    #[doc = include_str!("../../../book/src/quantization.md")]
    pub mod quantization {}
    #[doc = include_str!("../../../book/src/fronthaul.md")]
    pub mod fronthaul {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    pub mod optimization {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    pub mod experiments {}
}
