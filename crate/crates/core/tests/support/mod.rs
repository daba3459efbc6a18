#![allow(dead_code, clippy::needless_range_loop)]

pub mod grad;
pub mod oracles;
pub mod suites;
