//! Episodic reinforcement learning over movement-primitive parameters.
//!
//! The crate is `no_std` (with `alloc`) and contains every algorithmic piece:
//! a small dense network with reverse-mode gradients ([`numkit`]), diagonal
//! Gaussian policy heads ([`gauss`]), differentiable KL trust-region
//! projections ([`trpl`]), radial-basis movement primitives ([`promp`]), PD
//! tracking and joint dynamics ([`track`]), native tasks ([`envs`]), the
//! episodic trainer ([`erl`]) and a step-based PPO baseline ([`steprl`]).
//!
//! IO, configuration files, checkpoints and the command line live in the
//! companion `bbrl` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

mod error;
pub mod math;

pub mod envs;
pub mod erl;
pub mod gauss;
pub mod numkit;
pub mod promp;
pub mod steprl;
pub mod track;
pub mod trpl;

pub use error::{Error, Result};
