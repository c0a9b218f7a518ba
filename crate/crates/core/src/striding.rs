//! Receptive-field centers of a strided fully-convolutional output.
//!
//! Idealized model: with stride `s` over an input of `n` pixels there are
//! `n / s` outputs per axis. Normal striding keeps the top-left element of
//! every block, which places centers at `i·s`. Centered striding keeps the
//! bottom-right element in the last strided layer, shifting the grid by
//! `s/2` so that it is symmetric about the image center.

use serde::{Deserialize, Serialize};

use crate::error::{GeomError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StridingMode {
    Normal,
    Centered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StridingConfig {
    input_size: u32,
    stride: u32,
    mode: StridingMode,
}

impl StridingConfig {
    pub fn new(input_size: u32, stride: u32, mode: StridingMode) -> Result<Self> {
        if stride == 0 || input_size == 0 || !input_size.is_multiple_of(stride) {
            return Err(GeomError::InvalidInput(format!(
                "input size {input_size} must be a positive multiple of stride {stride}"
            )));
        }
        Ok(Self { input_size, stride, mode })
    }

    pub fn input_size(&self) -> u32 {
        self.input_size
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn mode(&self) -> StridingMode {
        self.mode
    }
}

/// Center coordinates along one axis; the 2D grid is the Cartesian product.
pub fn receptive_centers(cfg: &StridingConfig) -> Vec<f64> {
    let s = cfg.stride as f64;
    let offset = match cfg.mode {
        StridingMode::Normal => 0.0,
        StridingMode::Centered => s / 2.0,
    };
    (0..cfg.input_size / cfg.stride).map(|i| i as f64 * s + offset).collect()
}

pub fn mean(centers: &[f64]) -> f64 {
    centers.iter().sum::<f64>() / centers.len() as f64
}

/// Cartesian product of the per-axis centers, row-major.
pub fn receptive_grid(cfg: &StridingConfig) -> Vec<(f64, f64)> {
    let c = receptive_centers(cfg);
    c.iter().flat_map(|&y| c.iter().map(move |&x| (x, y))).collect()
}
