//! Trains the desk configuration on a fresh oracle dataset and prints the
//! per-epoch metrics.

use std::time::Instant;

use shapeflow_core::geometry::{sample_designs, FreeAngle, SamplingRanges};
use shapeflow_core::oracle::{build_dataset, OracleConfig};
use shapeflow_core::GridSpec;
use shapeflow_surrogate::{train_with, TrainConfig, UNetConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (batch, lr, epochs, count) = (
        arg(1, 4.0) as usize,
        arg(2, 2e-3),
        arg(3, 40.0) as usize,
        arg(4, 64.0) as usize,
    );
    let spec = GridSpec::new([-7.0, -5.25, -5.25], [0.35; 3], [50, 31, 31]).unwrap();
    let designs = sample_designs(&SamplingRanges::paper(FreeAngle::Z, 7), count).unwrap();
    let t0 = Instant::now();
    let ds = build_dataset(&designs, &spec, [40, 20, 20], &OracleConfig::default(), 11).unwrap();
    println!(
        "dataset {} samples, v_max {:.4}, {:.1}s",
        ds.samples.len(),
        ds.v_max,
        t0.elapsed().as_secs_f64()
    );
    let tcfg = TrainConfig {
        batch_size: batch,
        learning_rate: lr,
        epochs,
        ..TrainConfig::desk()
    };
    let t0 = Instant::now();
    let out = train_with(&ds, &UNetConfig::desk(), &tcfg, |m| {
        println!(
            "epoch {:3} train {:.3e} val {:.3e} corr {:+.4} ({:.0}s)",
            m.epoch,
            m.train_mse,
            m.val_mse,
            m.corr.value,
            t0.elapsed().as_secs_f64()
        )
    })
    .unwrap();
    println!("best epoch {}", out.best_epoch);
}
