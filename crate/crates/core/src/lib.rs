//! Digital twin of a three-well gas-lift rig together with the estimation,
//! optimization and supervision layers needed to run real-time
//! optimization experiments on it.

pub mod estimation;
pub mod harness;
pub mod integrate;
pub mod model;
pub mod nlp;
pub mod ssd;
pub mod supervisors;
pub mod twin;
