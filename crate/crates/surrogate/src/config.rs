//! Network and training configuration with the desk and paper presets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Channel order of the enriched input.
pub const INPUT_LAYOUT: [&str; 8] = ["sdf", "sin_x", "cos_x", "sin_y", "cos_y", "sin_z", "cos_z", "mask"];
pub const INPUT_CHANNELS: usize = INPUT_LAYOUT.len();
pub const OUTPUT_CHANNELS: usize = 3;

/// Velocity normalization constant of the published corpus.
pub const PAPER_V_MAX: f64 = 128.6749;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// 1 inside the obstacle, 0 outside; carries no gradient.
    Hard,
    /// `σ(−sdf / k)`.
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UNetConfig {
    pub levels: usize,
    /// Feature channels of each level, finest first.
    pub channels: Vec<usize>,
    #[serde(default = "default_blocks")]
    pub blocks_per_level: usize,
    pub attention: bool,
    /// Intermediate channels of every attention gate.
    pub attention_channels: usize,
    pub mask: MaskMode,
    /// Sigmoid mask temperature `k`.
    pub temperature: f64,
    #[serde(default = "default_layout")]
    pub input_layout: Vec<String>,
}

fn default_blocks() -> usize {
    2
}

fn default_layout() -> Vec<String> {
    INPUT_LAYOUT.iter().map(|s| s.to_string()).collect()
}

impl UNetConfig {
    pub fn desk() -> Self {
        UNetConfig {
            levels: 2,
            channels: vec![16, 32],
            blocks_per_level: 2,
            attention: true,
            attention_channels: 16,
            mask: MaskMode::Hard,
            temperature: 0.5,
            input_layout: default_layout(),
        }
    }

    /// Three levels of two blocks at (64, 64), (128, 128), (512, 512)
    /// features; gates with 256 intermediate channels.
    pub fn paper() -> Self {
        UNetConfig {
            levels: 3,
            channels: vec![64, 128, 512],
            blocks_per_level: 2,
            attention: true,
            attention_channels: 256,
            mask: MaskMode::Hard,
            temperature: 0.5,
            input_layout: default_layout(),
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.channels.len() != self.levels {
            return Err(Error::Config(format!(
                "{} levels need {} channel counts, got {:?}",
                self.levels, self.levels, self.channels
            )));
        }
        if self.channels.contains(&0) || self.blocks_per_level == 0 || self.attention_channels == 0 {
            return Err(Error::Config("channel and block counts must be positive".into()));
        }
        if self.mask == MaskMode::Sigmoid && !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "sigmoid mask temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.input_layout != default_layout() {
            return Err(Error::Config(format!(
                "unsupported input layout {:?}, expected {:?}",
                self.input_layout, INPUT_LAYOUT
            )));
        }
        Ok(())
    }

    /// Checks that the window survives `levels - 1` halvings.
    pub fn check_window(&self, dims: [usize; 3]) -> Result<()> {
        let f = 1usize << (self.levels - 1);
        if dims.iter().any(|&d| d == 0 || d % f != 0) {
            return Err(Error::Config(format!(
                "window {dims:?} must be divisible by {f} for {} levels",
                self.levels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    pub preset: Preset,
    /// Fixed velocity normalization; the corpus maximum when unset.
    #[serde(default)]
    pub v_max: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1.5e-4,
            epochs: 400,
            seed: 0,
            preset: Preset::Paper,
            v_max: Some(PAPER_V_MAX),
        }
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 4,
            learning_rate: 2e-3,
            epochs: 40,
            seed: 0,
            preset: Preset::Desk,
            v_max: None,
        }
    }

    pub fn paper() -> Self {
        Self::default()
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if let Some(v) = self.v_max {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("v_max must be positive, got {v}")));
            }
        }
        Ok(())
    }
}
