//! Oracles and harnesses shared by the integration tests and the acceptance
//! suite.
#![allow(dead_code)]

pub mod fd;
pub mod gradients;
pub mod oracles;
pub mod checks;
