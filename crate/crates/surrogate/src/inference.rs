//! A trained model as a differentiable stage from window SDF to velocity.

use std::sync::Arc;

use shapeflow_core::diff::{DiffComponent, Port};
use shapeflow_nn::{Element, Tape, Tensor, Var};

use crate::config::INPUT_CHANNELS;
use crate::error::Result;
use crate::input::BuildInput;
use crate::model::Model;
use crate::unet::UNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    /// Same weights evaluated in `f64`, for gradient checks.
    F64,
}

/// Tensor spatial shape `[D, H, W]` of a grid with x fastest.
pub fn spatial(dims: [usize; 3]) -> [usize; 3] {
    [dims[2], dims[1], dims[0]]
}

/// Channel-major values to node-major triples.
pub fn interleave(channels: &[f64], scale: f64) -> Vec<f64> {
    let n = channels.len() / 3;
    let mut out = vec![0.0; channels.len()];
    for i in 0..n {
        for c in 0..3 {
            out[3 * i + c] = channels[c * n + i] * scale;
        }
    }
    out
}

/// Node-major triples to channel-major values.
pub fn deinterleave(nodes: &[f64], scale: f64) -> Vec<f64> {
    let n = nodes.len() / 3;
    let mut out = vec![0.0; nodes.len()];
    for i in 0..n {
        for c in 0..3 {
            out[c * n + i] = nodes[3 * i + c] * scale;
        }
    }
    out
}

pub struct InferenceComponent {
    model: Arc<Model>,
    net: UNet,
    input: BuildInput,
    precision: Precision,
    wide: Vec<Tensor<f64>>,
}

impl InferenceComponent {
    pub fn new(model: Arc<Model>, precision: Precision) -> Result<Self> {
        let net = model.network()?;
        model.config.check_window(model.window)?;
        let input = BuildInput::new(model.window, model.sdf_scale, &model.config)?;
        let wide = match precision {
            Precision::F64 => model.params.iter().map(|t| t.cast()).collect(),
            Precision::F32 => Vec::new(),
        };
        Ok(InferenceComponent {
            model,
            net,
            input,
            precision,
            wide,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn input_builder(&self) -> &BuildInput {
        &self.input
    }

    fn params<T: Element>(&self) -> Vec<Tensor<T>> {
        match self.precision {
            Precision::F32 => self.model.params.iter().map(|t| t.cast()).collect(),
            Precision::F64 => self.wide.iter().map(|t| t.cast()).collect(),
        }
    }

    fn record<T: Element>(&self, sdf: &[f64], grad_input: bool) -> Result<(Tape<T>, Var, Var)> {
        let enriched = self.input.build(sdf)?;
        let [d, h, w] = spatial(self.model.window);
        let x = Tensor::new(
            vec![1, INPUT_CHANNELS, d, h, w],
            enriched.values.iter().map(|v| T::of(*v)).collect(),
        )?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params::<T>().into_iter().map(|p| tape.constant(p)).collect();
        let xv = tape.leaf(x, grad_input);
        let out = self.net.forward(&mut tape, &vars, xv)?;
        Ok((tape, xv, out))
    }

    fn forward_as<T: Element>(&self, sdf: &[f64]) -> Result<Vec<f64>> {
        let (tape, _, out) = self.record::<T>(sdf, false)?;
        let raw: Vec<f64> = tape.value(out).data().iter().map(|v| v.f64()).collect();
        Ok(interleave(&raw, self.model.v_max))
    }

    fn vjp_as<T: Element>(&self, sdf: &[f64], cotangent: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (tape, xv, out) = self.record::<T>(sdf, true)?;
        let raw: Vec<f64> = tape.value(out).data().iter().map(|v| v.f64()).collect();
        let value = interleave(&raw, self.model.v_max);
        let shape = tape.value(out).shape().to_vec();
        let cot = Tensor::new(
            shape,
            deinterleave(cotangent, self.model.v_max)
                .into_iter()
                .map(T::of)
                .collect(),
        )?;
        let mut grads = tape.backward_with(out, cot)?;
        let [d, h, w] = spatial(self.model.window);
        let gx = grads.take_or_zeros(xv, &[1, INPUT_CHANNELS, d, h, w]);
        let gx: Vec<f64> = gx.data().iter().map(|v| v.f64()).collect();
        Ok((value, self.input.pullback(sdf, &gx)?))
    }
}

impl DiffComponent for InferenceComponent {
    fn name(&self) -> &str {
        "inference"
    }
    fn input_shape(&self) -> Port {
        Port::Scalar(self.model.window)
    }
    fn output_shape(&self) -> Port {
        Port::Vector3(self.model.window)
    }
    fn forward(&self, input: &[f64]) -> shapeflow_core::Result<Vec<f64>> {
        Ok(match self.precision {
            Precision::F32 => self.forward_as::<f32>(input)?,
            Precision::F64 => self.forward_as::<f64>(input)?,
        })
    }
    fn vjp(&self, input: &[f64], cotangent: &[f64]) -> shapeflow_core::Result<Vec<f64>> {
        Ok(self.value_and_vjp(input, cotangent)?.1)
    }
    fn value_and_vjp(&self, input: &[f64], cotangent: &[f64]) -> shapeflow_core::Result<(Vec<f64>, Vec<f64>)> {
        if cotangent.len() != self.output_shape().len() {
            return Err(shapeflow_core::Error::Length {
                context: "inference cotangent".into(),
                expected: self.output_shape().len(),
                actual: cotangent.len(),
            });
        }
        Ok(match self.precision {
            Precision::F32 => self.vjp_as::<f32>(input, cotangent)?,
            Precision::F64 => self.vjp_as::<f64>(input, cotangent)?,
        })
    }
}
