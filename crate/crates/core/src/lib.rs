//! Pseudospectral direct solver for DAE optimal control problems, with an
//! independent verification toolkit.

pub mod basis;
pub mod covector;
pub mod integrate;
pub mod ocp;
pub mod sqp;
pub mod transcribe;
pub mod vv;
