//! Shared helpers for the integration test suites.
// Not every test binary uses every helper.
#![allow(dead_code)]

pub mod fd;
pub mod gradchecks;
pub mod stats;
