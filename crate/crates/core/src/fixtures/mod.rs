//! Executable test structures: unipotent group towers, tangent prolongation
//! towers, and jet/Cartan towers.

pub mod group;
pub mod jet;
pub mod prolongation;
