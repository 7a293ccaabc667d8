//! Flow-level simulation of 802.11be multi-link operation with pluggable
//! traffic-to-link allocation policies, including a multi-headed recurrent
//! soft actor-critic agent and two rule-based baselines.

pub mod engine;
pub mod harness;
pub mod error;
pub mod mdp;
pub mod policy;
pub mod sac;
pub mod topology;
pub mod traffic;
pub mod util;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/radio.md")]
    mod radio {}
    #[doc = include_str!("../../../book/src/traffic.md")]
    mod traffic {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
    #[doc = include_str!("../../../book/src/policies.md")]
    mod policies {}
    #[doc = include_str!("../../../book/src/agent.md")]
    mod agent {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
