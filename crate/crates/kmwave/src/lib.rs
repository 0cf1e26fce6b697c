//! Numerical toolkit for a seasonal (time-periodic) diffusive
//! Kermack-McKendrick model with nonlocal latent-period delay.
//!
//! The crate computes the threshold quantities (R0 with its
//! epsilon-perturbed family and the bound eps_sup), the critical wave
//! speed c* from the dispersion relation of the linearized traveling-wave
//! problem, simulates the reaction-diffusion system to measure spreading
//! speeds and probe for time-periodic traveling waves, and numerically
//! reconstructs the sub-solution construction that rules out waves
//! slower than c*.

pub mod coefficients;
pub mod config;
pub mod delay_ode;
pub mod error;
pub mod oracles;
pub mod pde_sim;
pub mod threshold;
pub mod wave_speed;

pub use error::{KmError, Result};
