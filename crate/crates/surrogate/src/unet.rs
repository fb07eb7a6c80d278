//! Attention U-Net assembled on the autodiff tape.
//!
//! Encoder level `l` runs `blocks_per_level` blocks of 3×3×3 conv, per-voxel
//! layer norm and GELU at `channels[l]` features, with 2×2×2 max pooling
//! between levels. Going up, the coarse features first pass one block down
//! to the finer channel count, are upsampled, and are concatenated with the
//! skip features, which an attention gate driven by the coarse features
//! rescales when attention is on. A 1×1 head maps to three velocity
//! components.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapeflow_nn::{attention_gate, Element, GateVars, NormAxes, Tape, Tensor, Var};

use crate::config::{UNetConfig, INPUT_CHANNELS, OUTPUT_CHANNELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    /// Inputs feeding each output value; zero for parameters initialised to
    /// constants.
    pub fan_in: usize,
    pub fill: Fill,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    HeUniform,
    Const(f64),
}

/// Parameter layout of a configuration. Construction order is the order of
/// the parameter list.
#[derive(Debug, Clone)]
pub struct UNet {
    config: UNetConfig,
    specs: Vec<ParamSpec>,
}

struct Builder<'a> {
    specs: &'a mut Vec<ParamSpec>,
}

impl Builder<'_> {
    fn push(&mut self, name: String, shape: Vec<usize>, fan_in: usize, fill: Fill) {
        self.specs.push(ParamSpec {
            name,
            shape,
            fan_in,
            fill,
        });
    }

    fn block(&mut self, prefix: &str, c_in: usize, c_out: usize) {
        self.push(
            format!("{prefix}.conv.w"),
            vec![c_out, c_in, 3, 3, 3],
            27 * c_in,
            Fill::HeUniform,
        );
        self.push(format!("{prefix}.conv.b"), vec![c_out], 0, Fill::Const(0.0));
        self.push(format!("{prefix}.norm.g"), vec![c_out], 0, Fill::Const(1.0));
        self.push(format!("{prefix}.norm.b"), vec![c_out], 0, Fill::Const(0.0));
    }

    fn pointwise(&mut self, prefix: &str, c_in: usize, c_out: usize) {
        self.push(format!("{prefix}.w"), vec![c_out, c_in], c_in, Fill::HeUniform);
        self.push(format!("{prefix}.b"), vec![c_out], 0, Fill::Const(0.0));
    }
}

/// Cursor over the tape variables of the parameter list.
struct Params<'a> {
    vars: &'a [Var],
    next: usize,
}

impl Params<'_> {
    fn take(&mut self) -> Var {
        let v = self.vars[self.next];
        self.next += 1;
        v
    }
}

fn block<T: Element>(tape: &mut Tape<T>, x: Var, p: &mut Params) -> Result<Var> {
    let (w, b, g, beta) = (p.take(), p.take(), p.take(), p.take());
    let y = tape.conv3d(x, w, b)?;
    let y = tape.layer_norm(y, g, beta, NormAxes::Channels)?;
    Ok(tape.gelu(y))
}

impl UNet {
    pub fn new(config: &UNetConfig) -> Result<Self> {
        config.validate()?;
        let c = &config.channels;
        let mut specs = Vec::new();
        let mut b = Builder { specs: &mut specs };
        for l in 0..config.levels {
            for j in 0..config.blocks_per_level {
                let c_in = match (l, j) {
                    (0, 0) => INPUT_CHANNELS,
                    (_, 0) => c[l - 1],
                    _ => c[l],
                };
                b.block(&format!("enc{l}.b{j}"), c_in, c[l]);
            }
        }
        for l in (0..config.levels - 1).rev() {
            b.block(&format!("dec{l}.up"), c[l + 1], c[l]);
            if config.attention {
                let i = config.attention_channels;
                b.pointwise(&format!("dec{l}.gate.g"), c[l], i);
                b.pointwise(&format!("dec{l}.gate.x"), c[l], i);
                b.pointwise(&format!("dec{l}.gate.psi"), i, 1);
            }
            for j in 0..config.blocks_per_level {
                let c_in = if j == 0 { 2 * c[l] } else { c[l] };
                b.block(&format!("dec{l}.b{j}"), c_in, c[l]);
            }
        }
        b.pointwise("head", c[0], OUTPUT_CHANNELS);
        Ok(UNet {
            config: config.clone(),
            specs,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        self.specs.iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }

    /// He-uniform weights, zero biases, unit norm gains.
    pub fn init<T: Element>(&self, seed: u64) -> Vec<Tensor<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.specs
            .iter()
            .map(|s| {
                let n = s.shape.iter().product();
                let data = match s.fill {
                    Fill::Const(v) => vec![T::of(v); n],
                    Fill::HeUniform => {
                        let bound = (6.0 / s.fan_in as f64).sqrt();
                        (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect()
                    }
                };
                Tensor::new(s.shape.clone(), data).expect("spec shapes are non-empty")
            })
            .collect()
    }

    pub fn check_params<T: Element>(&self, params: &[Tensor<T>]) -> Result<()> {
        if params.len() != self.specs.len() {
            return Err(Error::Config(format!(
                "network expects {} parameter tensors, got {}",
                self.specs.len(),
                params.len()
            )));
        }
        for (s, p) in self.specs.iter().zip(params) {
            if p.shape() != s.shape.as_slice() {
                return Err(Error::Config(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    s.name,
                    p.shape(),
                    s.shape
                )));
            }
        }
        Ok(())
    }

    /// Records the network on `tape`. `x: [N, 8, D, H, W]`, output
    /// `[N, 3, D, H, W]`.
    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, params: &[Var], x: Var) -> Result<Var> {
        if params.len() != self.specs.len() {
            return Err(Error::Config(format!(
                "network expects {} parameter variables, got {}",
                self.specs.len(),
                params.len()
            )));
        }
        let cfg = &self.config;
        let spatial = tape.value(x).shape()[2..].to_vec();
        let f = 1usize << (cfg.levels - 1);
        if spatial.iter().any(|d| d % f != 0) {
            return Err(Error::Config(format!(
                "spatial shape {spatial:?} must be divisible by {f}"
            )));
        }
        let mut p = Params { vars: params, next: 0 };
        let mut skips = Vec::with_capacity(cfg.levels);
        let mut h = x;
        for l in 0..cfg.levels {
            if l > 0 {
                h = tape.maxpool2(h)?;
            }
            for _ in 0..cfg.blocks_per_level {
                h = block(tape, h, &mut p)?;
            }
            skips.push(h);
        }
        for l in (0..cfg.levels - 1).rev() {
            let coarse = block(tape, h, &mut p)?;
            let up = tape.upsample2(coarse)?;
            let skip = if cfg.attention {
                let gate = GateVars {
                    wg: p.take(),
                    bg: p.take(),
                    wx: p.take(),
                    bx: p.take(),
                    psi_w: p.take(),
                    psi_b: p.take(),
                };
                attention_gate(tape, coarse, skips[l], &gate)?.0
            } else {
                skips[l]
            };
            h = tape.concat(up, skip)?;
            for _ in 0..cfg.blocks_per_level {
                h = block(tape, h, &mut p)?;
            }
        }
        let (w, b) = (p.take(), p.take());
        Ok(tape.conv1x1(h, w, b)?)
    }
}
