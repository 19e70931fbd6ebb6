//! Polynomial systems for tiny polynomial-activation networks: the
//! zero-error and critical-point equations in the weights, degree counts,
//! and small numeric solvers.

pub mod mpoly;
pub mod net;
pub mod solve;
pub mod summary;
pub mod system;

pub use mpoly::MPoly;
pub use net::{NetExpr, TinyPolyNet};
pub use solve::{
    consistency_probe, degeneracy_check, find_real_zeros, Consistency, Degeneracy, ZeroSearch,
    ZeroSearchConfig,
};
pub use summary::{summarize, PolySystemSummary};
pub use system::{build_critical_system, build_zero_system, PolySystem, Provenance};
