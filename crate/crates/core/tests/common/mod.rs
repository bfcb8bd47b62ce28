//! Helpers shared by the integration-test targets. Each target compiles
//! this module independently, so not every target uses every item.
#![allow(dead_code)]

pub mod invariants;
pub mod oracles;
