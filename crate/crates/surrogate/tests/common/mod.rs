#![allow(dead_code)]

use shapeflow_core::geometry::{sample_designs, FreeAngle, SamplingRanges};
use shapeflow_core::oracle::{build_dataset, Dataset, OracleConfig};
use shapeflow_core::GridSpec;
use shapeflow_surrogate::{TrainConfig, UNetConfig};

pub fn tiny_unet() -> UNetConfig {
    UNetConfig {
        channels: vec![4, 8],
        attention_channels: 4,
        ..UNetConfig::desk()
    }
}

pub fn tiny_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        learning_rate: 3e-3,
        epochs,
        ..TrainConfig::desk()
    }
}

pub fn grid() -> GridSpec {
    GridSpec::new([-3.0, -4.0, -4.0], [0.5; 3], [24, 17, 17]).unwrap()
}

pub fn tiny_dataset(count: usize, window: [usize; 3]) -> Dataset {
    let designs = sample_designs(&SamplingRanges::paper(FreeAngle::Z, 3), count).unwrap();
    build_dataset(&designs, &grid(), window, &OracleConfig::default(), 5).unwrap()
}
