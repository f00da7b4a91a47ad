//! Forward solver, Carleman weights, measurements, source reconstruction and
//! stability harness for the Klausmeier-Gray-Scott vegetation model.

pub mod cli;
pub mod config;
pub mod domain;
pub mod expr;
pub mod forward;
pub mod inverse;
pub mod linalg;
pub mod measure;
pub mod model;
pub mod stability;
pub mod weights;
