//! Mini-batch Adam training on an oracle dataset.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use shapeflow_core::oracle::{Dataset, Sample};
use shapeflow_core::VectorField3;
use shapeflow_nn::{AdamState, Tape, Tensor, Var};

use crate::config::{TrainConfig, UNetConfig, INPUT_CHANNELS, OUTPUT_CHANNELS};
use crate::error::{Error, Result};
use crate::inference::{deinterleave, interleave, spatial};
use crate::input::BuildInput;
use crate::metrics::{pooled_error_gradient_corr, Corr};
use crate::model::Model;
use crate::unet::UNet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample loss seen while stepping through the epoch.
    pub train_mse: f64,
    /// Validation loss after the epoch's last update; NaN without a
    /// validation split.
    pub val_mse: f64,
    pub corr: Corr,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_model: Model,
    /// Lowest validation loss seen; the final model without a validation split.
    pub best_model: Model,
    pub best_epoch: usize,
    pub history: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn best(&self) -> &EpochMetrics {
        &self.history[self.best_epoch - 1]
    }

    pub fn last(&self) -> &EpochMetrics {
        self.history.last().expect("at least one epoch")
    }
}

pub const METRICS_HEADER: &str = "epoch,train_mse,val_mse,corr_grad_err";

pub fn write_metrics_csv<W: Write>(mut out: W, history: &[EpochMetrics]) -> std::io::Result<()> {
    writeln!(out, "{METRICS_HEADER}")?;
    for m in history {
        writeln!(out, "{},{:e},{:e},{}", m.epoch, m.train_mse, m.val_mse, m.corr.value)?;
    }
    Ok(())
}

pub fn save_metrics_csv(path: &Path, history: &[EpochMetrics]) -> Result<()> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, history).expect("writing to memory");
    std::fs::write(path, buf).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Largest |SDF| over the given samples.
pub fn sdf_scale(samples: &[&Sample]) -> f64 {
    samples
        .iter()
        .flat_map(|s| s.sdf.values().iter())
        .fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Network input and normalized channel-major target for one sample.
struct Prepared {
    input: Tensor<f32>,
    target: Tensor<f32>,
}

fn prepare(sample: &Sample, builder: &BuildInput, v_max: f64) -> Result<Prepared> {
    let [d, h, w] = spatial(sample.sdf.spec().dims);
    let enriched = builder.build(sample.sdf.values())?;
    let input = Tensor::new(
        vec![1, INPUT_CHANNELS, d, h, w],
        enriched.values.iter().map(|v| *v as f32).collect(),
    )?;
    let target = deinterleave(&sample.velocity.to_flat(), 1.0 / v_max);
    let target = Tensor::new(
        vec![1, OUTPUT_CHANNELS, d, h, w],
        target.into_iter().map(|v| v as f32).collect(),
    )?;
    Ok(Prepared { input, target })
}

fn sample_step(net: &UNet, params: &[Tensor<f32>], p: &Prepared) -> Result<(f64, Vec<Tensor<f32>>)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let x = tape.constant(p.input.clone());
    let y = net.forward(&mut tape, &vars, x)?;
    let loss = tape.mse(y, &p.target)?;
    let value = tape.value(loss).item() as f64;
    let mut grads = tape.backward(loss)?;
    let g = vars
        .iter()
        .zip(params)
        .map(|(v, t)| grads.take_or_zeros(*v, t.shape()))
        .collect();
    Ok((value, g))
}

fn predict(net: &UNet, params: &[Tensor<f32>], input: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.constant(t.clone())).collect();
    let x = tape.constant(input.clone());
    let y = net.forward(&mut tape, &vars, x)?;
    Ok(tape.value(y).clone())
}

fn evaluate(net: &UNet, params: &[Tensor<f32>], data: &[Prepared], samples: &[&Sample]) -> Result<(f64, Corr)> {
    if data.is_empty() {
        return Ok((
            f64::NAN,
            Corr {
                value: 0.0,
                degenerate: true,
            },
        ));
    }
    let outputs: Vec<Tensor<f32>> = data
        .par_iter()
        .map(|p| predict(net, params, &p.input))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut fields = Vec::with_capacity(data.len());
    for ((out, p), s) in outputs.iter().zip(data).zip(samples) {
        let se: f64 = out
            .data()
            .iter()
            .zip(p.target.data())
            .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
            .sum();
        total += se / out.len() as f64;
        let spec = *s.sdf.spec();
        let to_field = |t: &Tensor<f32>| {
            let flat = interleave(&t.data().iter().map(|v| *v as f64).collect::<Vec<_>>(), 1.0);
            VectorField3::from_flat(spec, &flat)
        };
        fields.push((to_field(out)?, to_field(&p.target)?));
    }
    let corr = pooled_error_gradient_corr(fields.iter().map(|(a, b)| (a, b)))?;
    Ok((total / data.len() as f64, corr))
}

fn add_into(acc: &mut [Tensor<f32>], g: &[Tensor<f32>]) {
    for (a, b) in acc.iter_mut().zip(g) {
        a.add_assign(b);
    }
}

pub fn train(dataset: &Dataset, ucfg: &UNetConfig, tcfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(dataset, ucfg, tcfg, |_| {})
}

/// Trains with `on_epoch` called after every epoch.
///
/// Per-sample gradients of a batch are computed in parallel and summed in
/// batch order, so results do not depend on the thread count.
pub fn train_with(
    dataset: &Dataset,
    ucfg: &UNetConfig,
    tcfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    ucfg.validate()?;
    tcfg.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::Config("dataset has no training samples".into()));
    }
    let window = dataset.samples[0].sdf.spec().dims;
    if let Some(s) = dataset.samples.iter().find(|s| s.sdf.spec().dims != window) {
        return Err(Error::Config(format!(
            "sample {} has window {:?}, expected {window:?}",
            s.id,
            s.sdf.spec().dims
        )));
    }
    ucfg.check_window(window)?;
    let train_samples: Vec<&Sample> = dataset.train.iter().map(|&i| &dataset.samples[i]).collect();
    let val_samples: Vec<&Sample> = dataset.val.iter().map(|&i| &dataset.samples[i]).collect();
    let v_max = tcfg.v_max.unwrap_or(dataset.v_max);
    let scale = sdf_scale(&train_samples);
    let builder = BuildInput::new(window, scale, ucfg)?;
    let train_data: Vec<Prepared> = train_samples
        .iter()
        .map(|s| prepare(s, &builder, v_max))
        .collect::<Result<_>>()?;
    let val_data: Vec<Prepared> = val_samples
        .iter()
        .map(|s| prepare(s, &builder, v_max))
        .collect::<Result<_>>()?;

    let mut model = Model::random(ucfg, window, v_max, scale, tcfg.seed)?;
    model.split_seed = dataset.split_seed;
    let net = model.network()?;
    let lens: Vec<usize> = model.params.iter().map(Tensor::len).collect();
    let mut adam = AdamState::<f32>::new(tcfg.learning_rate, &lens)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor<f32>>)> = None;

    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch, chunk) in order.chunks(tcfg.batch_size).enumerate() {
            let results: Vec<(f64, Vec<Tensor<f32>>)> = chunk
                .par_iter()
                .map(|&i| sample_step(&net, &model.params, &train_data[i]))
                .collect::<Result<_>>()?;
            let mut acc: Vec<Tensor<f32>> = model.params.iter().map(|t| Tensor::zeros(t.shape())).collect();
            for (loss, g) in &results {
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch });
                }
                loss_sum += loss;
                add_into(&mut acc, g);
            }
            let inv = 1.0 / chunk.len() as f32;
            for a in &mut acc {
                a.data_mut().iter_mut().for_each(|v| *v *= inv);
                if !a.all_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch });
                }
            }
            adam.step(&mut model.params, &acc)?;
        }
        let (val_mse, corr) = evaluate(&net, &model.params, &val_data, &val_samples)?;
        let m = EpochMetrics {
            epoch,
            train_mse: loss_sum / train_data.len() as f64,
            val_mse,
            corr,
        };
        if val_mse.is_finite() && best.as_ref().is_none_or(|(b, _, _)| val_mse < *b) {
            best = Some((val_mse, epoch, model.params.clone()));
        }
        on_epoch(&m);
        history.push(m);
    }
    model.epoch = tcfg.epochs;
    let (best_epoch, best_model) = match best {
        Some((_, epoch, params)) => (
            epoch,
            Model {
                epoch,
                params,
                ..model.clone()
            },
        ),
        None => (tcfg.epochs, model.clone()),
    };
    Ok(TrainOutcome {
        final_model: model,
        best_model,
        best_epoch,
        history,
    })
}
