//! Entropy-based adaptive Hamiltonian Monte Carlo.
//!
//! The preconditioner `C` (with `CCᵀ = M⁻¹`) is tuned online by stochastic
//! gradient steps on an adaptation objective. The default objective rewards
//! both a high acceptance rate and a large proposal entropy, estimated through
//! a Russian-roulette series for `log det(I + D_L)`.

pub mod cli;
pub mod diagnostics;
pub mod entropy;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod objective;
pub mod precond;
pub mod sampler;
pub mod target;

pub use diagnostics::RunReport;
pub use error::{Error, Result};
pub use nalgebra;
pub use objective::{AdaptConfig, AdaptState, Objective};
pub use precond::{PrecondKind, Preconditioner};
pub use sampler::{run_experiment, Kernel, SamplerConfig, Session};
pub use target::TargetModel;
