//! Attention and mask-type comparison runs on a shared dataset split.

use std::io::Write;
use std::path::Path;

use shapeflow_core::oracle::Dataset;

use crate::config::{MaskMode, TrainConfig, UNetConfig};
use crate::error::{Error, Result};
use crate::train::{train, TrainOutcome};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub attention: bool,
    pub mask: MaskMode,
    pub temperature: f64,
}

/// Attention with a hard mask, no attention with a hard mask, and
/// attention with sigmoid masks at k = 0.5 and k = 0.1.
pub fn standard_variants() -> Vec<Variant> {
    let v = |attention, mask, temperature| Variant {
        attention,
        mask,
        temperature,
    };
    vec![
        v(true, MaskMode::Hard, 0.5),
        v(false, MaskMode::Hard, 0.5),
        v(true, MaskMode::Sigmoid, 0.5),
        v(true, MaskMode::Sigmoid, 0.1),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub train_final: f64,
    pub val_final: f64,
    pub best_train: f64,
    pub best_val: f64,
    pub best_epoch: usize,
    pub corr: f64,
}

impl AblationRow {
    pub fn from_outcome(variant: Variant, out: &TrainOutcome) -> Self {
        let (last, best) = (out.last(), out.best());
        AblationRow {
            variant,
            train_final: last.train_mse,
            val_final: last.val_mse,
            best_train: best.train_mse,
            best_val: best.val_mse,
            best_epoch: out.best_epoch,
            corr: last.corr.value,
        }
    }
}

pub fn run_ablation(
    dataset: &Dataset,
    base: &UNetConfig,
    tcfg: &TrainConfig,
    variants: &[Variant],
) -> Result<Vec<AblationRow>> {
    run_ablation_with(dataset, base, tcfg, variants, |_| {})
}

pub fn run_ablation_with(
    dataset: &Dataset,
    base: &UNetConfig,
    tcfg: &TrainConfig,
    variants: &[Variant],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::Config("no ablation variants".into()));
    }
    variants
        .iter()
        .map(|v| {
            let cfg = UNetConfig {
                attention: v.attention,
                mask: v.mask,
                temperature: v.temperature,
                ..base.clone()
            };
            let row = AblationRow::from_outcome(*v, &train(dataset, &cfg, tcfg)?);
            on_row(&row);
            Ok(row)
        })
        .collect()
}

pub const ABLATION_HEADER: &str =
    "attn,mask_type,temp,train_loss_final,val_loss_final,best_train_loss,best_val_loss,best_epoch,corr_grad_err";

pub fn write_ablation_csv<W: Write>(mut out: W, rows: &[AblationRow]) -> std::io::Result<()> {
    writeln!(out, "{ABLATION_HEADER}")?;
    for r in rows {
        let v = r.variant;
        let (mask, temp) = match v.mask {
            MaskMode::Hard => ("hard", String::new()),
            MaskMode::Sigmoid => ("sigmoid", v.temperature.to_string()),
        };
        writeln!(
            out,
            "{},{mask},{temp},{:e},{:e},{:e},{:e},{},{}",
            if v.attention { "yes" } else { "no" },
            r.train_final,
            r.val_final,
            r.best_train,
            r.best_val,
            r.best_epoch,
            r.corr
        )?;
    }
    Ok(())
}

pub fn save_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut buf = Vec::new();
    write_ablation_csv(&mut buf, rows).expect("writing to memory");
    std::fs::write(path, buf).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
