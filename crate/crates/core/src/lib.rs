//! Desk-scale machinery for projective limits of finite-dimensional normed
//! spaces: towers and threads, graded operators with uniform norms, a
//! Lipschitz-certified level-coherent flow engine, anchored-bundle towers with
//! bracket verification, and constructive integral-leaf charts with
//! tangency and injectivity diagnostics.

pub mod algebroid;
pub mod error;
pub mod fixtures;
pub mod leaf;
pub mod linalg;
pub mod ode;
pub mod operators;
pub mod schema;
pub mod tower;

pub use error::{Error, Result};
pub use linalg::NormKind;
pub use tower::{make_tower, projection_tower, BanachLevel, BondingMap, Thread, Tower};
