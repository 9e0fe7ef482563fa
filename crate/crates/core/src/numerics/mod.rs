//! Numerical building blocks shared by the physics modules.

pub mod fit;
pub mod ode;
pub mod simplex;
pub mod special;
