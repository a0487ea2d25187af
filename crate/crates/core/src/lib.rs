//! Vacuum Einstein constraint operator on the Poincaré ball.
//!
//! The crate evaluates Φ = (Φ₀, Φᵢ), its linearization and adjoint, the
//! auxiliary operators T̊, S̊, Ů and the model Laplacians on the exact
//! hyperbolic background g̊ = ρ⁻²δ, ρ = (1 − |x|²)/2, and ships a harness that
//! checks the associated identities and inequalities numerically.
//!
//! Fields are evaluated pointwise as second-order [`jet::Jet`]s, either from
//! analytic closures or from finite differences on a lattice chart, so every
//! operator has a single implementation shared by the exact and discrete
//! paths.

pub mod cli;
pub mod constraint;
pub mod error;
pub mod fields;
pub mod geoops;
pub mod jet;
pub mod linalg;
pub mod manifold;
pub mod report;
pub mod tensor;
pub mod verify;
pub mod wspace;

pub use error::{Error, Result};
pub use jet::Jet;
pub use manifold::{ChartGrid, Layout, RegionKind, RegionMask, Site};
pub use tensor::{Ctx, Deriv, TensorField};

/// Spatial dimension of the model.
pub const DIM: usize = 3;
