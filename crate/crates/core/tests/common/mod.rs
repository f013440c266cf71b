#![allow(dead_code)]

use std::path::PathBuf;

use iam_core::calibration::{load_calibration, Calibration};

pub fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn configs() -> PathBuf {
    root().join("configs")
}

pub fn calib_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("calib/dice2016.toml")
}

pub fn dice() -> Calibration {
    load_calibration(&calib_path()).unwrap()
}
