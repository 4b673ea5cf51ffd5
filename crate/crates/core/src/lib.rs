//! Region-of-attraction estimation and certification for autonomous ODEs.
//!
//! Quadratic Lyapunov certificates come from the linearization; neural
//! certificates are trained on Zubov's equation. Every level set the crate
//! reports is checked by an interval branch-and-prune prover.

pub mod expr;
pub mod interval;
pub mod linalg;
pub mod prover;
pub mod system;
pub mod decomp;
pub mod local;
pub mod reach;
pub mod zubovdata;
pub mod learner;
pub mod neuralverify;
pub mod pipeline;
