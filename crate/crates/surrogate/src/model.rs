//! Trained network plus the normalization it was trained with.
//!
//! Weights go to a `UNW1` file; a TOML sidecar next to it (same stem,
//! `.toml` extension) records the normalization constants, window, split
//! seed and network configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shapeflow_nn::{Checkpoint, Tensor};

use crate::config::UNetConfig;
use crate::error::{Error, Result};
use crate::unet::UNet;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: UNetConfig,
    pub window: [usize; 3],
    pub v_max: f64,
    pub sdf_scale: f64,
    pub split_seed: u64,
    /// Epoch the weights come from; 0 for an untrained model.
    pub epoch: usize,
    pub params: Vec<Tensor<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    weights: String,
    window: [usize; 3],
    v_max: f64,
    sdf_scale: f64,
    split_seed: u64,
    epoch: usize,
    unet: UNetConfig,
}

pub fn sidecar_path(weights: &Path) -> PathBuf {
    weights.with_extension("toml")
}

impl Model {
    /// Freshly initialised weights.
    pub fn random(config: &UNetConfig, window: [usize; 3], v_max: f64, sdf_scale: f64, seed: u64) -> Result<Self> {
        config.check_window(window)?;
        let net = UNet::new(config)?;
        Ok(Model {
            config: config.clone(),
            window,
            v_max,
            sdf_scale,
            split_seed: 0,
            epoch: 0,
            params: net.init(seed),
        })
    }

    pub fn network(&self) -> Result<UNet> {
        let net = UNet::new(&self.config)?;
        net.check_params(&self.params)?;
        Ok(net)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let net = self.network()?;
        let graph = toml::Table::try_from(&self.config).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Checkpoint {
            graph,
            tensors: net
                .specs()
                .iter()
                .map(|s| s.name.clone())
                .zip(self.params.iter().cloned())
                .collect(),
        })
    }

    pub fn save(&self, weights: &Path) -> Result<()> {
        self.checkpoint()?.save(weights)?;
        let sidecar = Sidecar {
            weights: weights
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            window: self.window,
            v_max: self.v_max,
            sdf_scale: self.sdf_scale,
            split_seed: self.split_seed,
            epoch: self.epoch,
            unet: self.config.clone(),
        };
        let text = toml::to_string(&sidecar).map_err(|e| Error::Config(e.to_string()))?;
        let path = sidecar_path(weights);
        std::fs::write(&path, text).map_err(|source| Error::Io { path, source })
    }

    pub fn load(weights: &Path) -> Result<Self> {
        let path = sidecar_path(weights);
        let text = std::fs::read_to_string(&path).map_err(|source| Error::Io {
            path: path.clone(),
            source,
        })?;
        let sidecar: Sidecar = toml::from_str(&text).map_err(|e| Error::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let ck = Checkpoint::load(weights)?;
        let net = UNet::new(&sidecar.unet)?;
        let mut params = Vec::with_capacity(net.specs().len());
        for spec in net.specs() {
            let t = ck.tensor(&spec.name).ok_or_else(|| Error::Manifest {
                path: weights.to_path_buf(),
                message: format!("missing tensor `{}`", spec.name),
            })?;
            params.push(t.clone());
        }
        if ck.tensors.len() != params.len() {
            return Err(Error::Manifest {
                path: weights.to_path_buf(),
                message: format!("{} tensors stored, network has {}", ck.tensors.len(), params.len()),
            });
        }
        let model = Model {
            config: sidecar.unet,
            window: sidecar.window,
            v_max: sidecar.v_max,
            sdf_scale: sidecar.sdf_scale,
            split_seed: sidecar.split_seed,
            epoch: sidecar.epoch,
            params,
        };
        model.network()?;
        model.config.check_window(model.window)?;
        Ok(model)
    }
}
