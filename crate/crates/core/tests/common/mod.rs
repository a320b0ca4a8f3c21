#![allow(dead_code)]

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

pub mod oracles;

use std::path::Path;

/// Runs the command line in-process and returns its exit code.
pub fn cli(args: &[&str]) -> i32 {
    featurelens::cli::run(std::iter::once("featurelens").chain(args.iter().copied()))
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}
