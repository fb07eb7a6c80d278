//! The eight-channel network input built from a window SDF.

use std::f64::consts::TAU;

use shapeflow_core::diff::{DiffComponent, Port};
use shapeflow_core::ScalarField3;

use crate::config::{MaskMode, UNetConfig, INPUT_CHANNELS};
use crate::error::{Error, Result};

/// `σ(−sdf / k)`.
pub fn sigmoid_mask(sdf: f64, k: f64) -> f64 {
    1.0 / (1.0 + (sdf / k).exp())
}

pub fn hard_mask(sdf: f64) -> f64 {
    if sdf < 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Normalized node coordinate in [0, 1] along an axis of `n` nodes.
fn unit_coord(i: usize, n: usize) -> f64 {
    if n > 1 {
        i as f64 / (n - 1) as f64
    } else {
        0.0
    }
}

/// Channel-major input stack.
#[derive(Debug, Clone, PartialEq)]
pub struct EnrichedInput {
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl EnrichedInput {
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.dims.iter().product::<usize>();
        &self.values[c * n..(c + 1) * n]
    }
}

/// SDF normalization, positional encodings and obstacle mask as a
/// differentiable stage from window SDF to channel stack.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildInput {
    dims: [usize; 3],
    sdf_scale: f64,
    mask: MaskMode,
    temperature: f64,
    positional: Vec<f64>,
}

impl BuildInput {
    /// `sdf_scale` is the corpus max |SDF|; channel 0 holds `sdf / sdf_scale`.
    pub fn new(dims: [usize; 3], sdf_scale: f64, cfg: &UNetConfig) -> Result<Self> {
        cfg.validate()?;
        if !(sdf_scale > 0.0 && sdf_scale.is_finite()) {
            return Err(Error::Config(format!("SDF scale must be positive, got {sdf_scale}")));
        }
        if dims.contains(&0) {
            return Err(Error::Config(format!("window {dims:?} has an empty axis")));
        }
        let n = dims.iter().product::<usize>();
        let mut positional = vec![0.0; 6 * n];
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let node = i + dims[0] * (j + dims[1] * k);
                    for (axis, (idx, len)) in [(i, dims[0]), (j, dims[1]), (k, dims[2])].into_iter().enumerate() {
                        let phase = TAU * unit_coord(idx, len);
                        positional[(2 * axis) * n + node] = phase.sin();
                        positional[(2 * axis + 1) * n + node] = phase.cos();
                    }
                }
            }
        }
        Ok(BuildInput {
            dims,
            sdf_scale,
            mask: cfg.mask,
            temperature: cfg.temperature,
            positional,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn sdf_scale(&self) -> f64 {
        self.sdf_scale
    }

    fn mask_value(&self, sdf: f64) -> f64 {
        match self.mask {
            MaskMode::Hard => hard_mask(sdf),
            MaskMode::Sigmoid => sigmoid_mask(sdf, self.temperature),
        }
    }

    pub fn build(&self, sdf: &[f64]) -> Result<EnrichedInput> {
        let n = self.positional.len() / 6;
        if sdf.len() != n {
            return Err(shapeflow_core::Error::Length {
                context: "build_input".into(),
                expected: n,
                actual: sdf.len(),
            }
            .into());
        }
        let mut values = Vec::with_capacity(INPUT_CHANNELS * n);
        values.extend(sdf.iter().map(|s| s / self.sdf_scale));
        values.extend_from_slice(&self.positional);
        values.extend(sdf.iter().map(|&s| self.mask_value(s)));
        Ok(EnrichedInput {
            dims: self.dims,
            values,
        })
    }

    /// Maps a channel-stack cotangent back to SDF nodes.
    pub fn pullback(&self, sdf: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        let n = self.positional.len() / 6;
        if sdf.len() != n || cotangent.len() != INPUT_CHANNELS * n {
            return Err(shapeflow_core::Error::Length {
                context: "build_input vjp".into(),
                expected: INPUT_CHANNELS * n,
                actual: cotangent.len(),
            }
            .into());
        }
        let (c_sdf, c_mask) = (&cotangent[..n], &cotangent[7 * n..]);
        let inv = 1.0 / self.sdf_scale;
        Ok(match self.mask {
            MaskMode::Hard => c_sdf.iter().map(|c| c * inv).collect(),
            MaskMode::Sigmoid => {
                let k = self.temperature;
                (0..n)
                    .map(|i| {
                        let m = sigmoid_mask(sdf[i], k);
                        c_sdf[i] * inv - c_mask[i] * m * (1.0 - m) / k
                    })
                    .collect()
            }
        })
    }
}

/// One-shot input construction.
pub fn build_input(sdf: &ScalarField3, sdf_scale: f64, cfg: &UNetConfig) -> Result<EnrichedInput> {
    BuildInput::new(sdf.spec().dims, sdf_scale, cfg)?.build(sdf.values())
}

impl DiffComponent for BuildInput {
    fn name(&self) -> &str {
        "build_input"
    }
    fn input_shape(&self) -> Port {
        Port::Scalar(self.dims)
    }
    fn output_shape(&self) -> Port {
        Port::Channels(INPUT_CHANNELS, self.dims)
    }
    fn forward(&self, input: &[f64]) -> shapeflow_core::Result<Vec<f64>> {
        Ok(self.build(input)?.values)
    }
    fn vjp(&self, input: &[f64], cotangent: &[f64]) -> shapeflow_core::Result<Vec<f64>> {
        Ok(self.pullback(input, cotangent)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_values() {
        for k in [0.1, 0.5, 2.0] {
            assert_eq!(sigmoid_mask(0.0, k), 0.5);
            assert!((sigmoid_mask(-k, k) - 0.731_058_578_630_004_9).abs() < 1e-12);
            assert!((sigmoid_mask(k, k) - 0.268_941_421_369_995_1).abs() < 1e-12);
        }
        assert_eq!(hard_mask(-1e-9), 1.0);
        assert_eq!(hard_mask(0.0), 0.0);
    }

    #[test]
    fn channels_layout() {
        let cfg = UNetConfig::desk();
        let b = BuildInput::new([3, 2, 1], 2.0, &cfg).unwrap();
        let sdf = [-1.0, 0.5, 2.0, -0.2, 0.0, 4.0];
        let e = b.build(&sdf).unwrap();
        assert_eq!(e.values.len(), 48);
        assert_eq!(e.channel(0), &[-0.5, 0.25, 1.0, -0.1, 0.0, 2.0]);
        assert_eq!(e.channel(1)[0], 0.0);
        assert_eq!(e.channel(2)[0], 1.0);
        assert!((e.channel(1)[1] - 0.0).abs() < 1e-15);
        assert_eq!(e.channel(2)[1], -1.0);
        // Single-node axis sits at x̂ = 0.
        assert!(e.channel(5).iter().all(|v| *v == 0.0));
        assert!(e.channel(6).iter().all(|v| *v == 1.0));
        assert_eq!(e.channel(7), &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn rejects_bad_scale() {
        assert!(BuildInput::new([2, 2, 2], 0.0, &UNetConfig::desk()).is_err());
    }
}
