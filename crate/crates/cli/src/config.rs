//! Pipeline configuration: a preset file with an optional user file merged
//! over it key by key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use shapeflow_core::geometry::{Interval, SamplingRanges};
use shapeflow_core::mma::StopCriteria;
use shapeflow_core::oracle::OracleConfig;
use shapeflow_core::GridSpec;
use shapeflow_surrogate::{Preset, TrainConfig, UNetConfig};

use crate::error::CliError;

pub const DESK_PRESET: &str = include_str!("../presets/desk.toml");
pub const PAPER_PRESET: &str = include_str!("../presets/paper.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub count: usize,
    pub r_a: [f64; 2],
    pub r_b: [f64; 2],
    #[serde(rename = "L")]
    pub length: [f64; 2],
    pub theta_x: [f64; 2],
    pub theta_y: [f64; 2],
    pub theta_z: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub x0: [f64; 6],
    pub lower: [f64; 6],
    pub upper: [f64; 6],
    pub max_iters: usize,
    pub rel_change_tol: f64,
    pub export_final_mesh: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub iso: f64,
    pub smoothing_iterations: usize,
    pub smoothing_lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Random designs the geometry and chain checks are run at.
    pub designs: usize,
    /// Probed grid nodes for the field-valued stages.
    pub probes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub count: usize,
    pub window: [usize; 3],
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub preset: Preset,
    /// Every random stream derives from this; see [`Seeds`].
    pub seed: u64,
    pub out: PathBuf,
    pub window: [usize; 3],
    pub grid: GridConfig,
    pub oracle: OracleConfig,
    pub sampling: SamplingConfig,
    pub unet: UNetConfig,
    pub train: TrainConfig,
    pub optimize: OptimizeConfig,
    pub mesh: MeshConfig,
    pub gradcheck: GradcheckConfig,
    pub ablation: AblationConfig,
}

/// Per-stage seeds derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Seeds {
    pub sampling: u64,
    pub split: u64,
    pub train: u64,
    pub oracle: u64,
    pub gradcheck: u64,
}

impl Seeds {
    pub fn from_master(seed: u64) -> Self {
        Seeds {
            sampling: seed,
            split: seed.wrapping_add(1),
            train: seed.wrapping_add(2),
            oracle: seed.wrapping_add(3),
            gradcheck: seed.wrapping_add(4),
        }
    }
}

/// Recursively overlays `top` on `base`.
pub fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table, CliError> {
    text.parse::<toml::Table>()
        .map_err(|e| CliError::Usage(format!("{origin}: {e}")))
}

pub fn preset_text(p: Preset) -> &'static str {
    match p {
        Preset::Desk => DESK_PRESET,
        Preset::Paper => PAPER_PRESET,
    }
}

/// Command-line overrides applied after the files.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl PipelineConfig {
    /// Preset from the flag, else from the user file's `preset` key, else
    /// desk; then the user file on top; then the flags.
    pub fn load(path: Option<&Path>, ov: &Overrides) -> Result<Self, CliError> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_text(Some((&text, &p.display().to_string())), ov)
            }
            None => Self::from_text(None, ov),
        }
    }

    /// As [`load`](Self::load), with the user file given as `(text, name)`.
    pub fn from_text(user: Option<(&str, &str)>, ov: &Overrides) -> Result<Self, CliError> {
        let user = user.map(|(text, origin)| parse_table(text, origin)).transpose()?;
        let from_file = user
            .as_ref()
            .and_then(|t| t.get("preset"))
            .map(|v| {
                v.clone()
                    .try_into::<Preset>()
                    .map_err(|e| CliError::Usage(format!("preset: {e}")))
            })
            .transpose()?;
        let preset = ov.preset.or(from_file).unwrap_or(Preset::Desk);
        let mut table = parse_table(preset_text(preset), "built-in preset")?;
        if let Some(mut u) = user {
            u.remove("preset");
            merge(&mut table, u);
        }
        table.insert("preset".into(), toml::Value::try_from(preset).expect("enum serializes"));
        let mut cfg: PipelineConfig = table.try_into().map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if let Some(s) = ov.seed {
            cfg.seed = s;
        }
        if let Some(o) = &ov.out {
            cfg.out = o.clone();
        }
        cfg.apply_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::from_master(self.seed)
    }

    fn apply_seeds(&mut self) {
        let s = self.seeds();
        self.train.seed = s.train;
        self.train.preset = self.preset;
        self.oracle.seed = s.oracle;
    }

    pub fn grid_spec(&self) -> Result<GridSpec, CliError> {
        GridSpec::new(self.grid.origin, self.grid.spacing, self.grid.dims).map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn sampling_ranges(&self) -> SamplingRanges {
        let iv = |r: [f64; 2]| Interval::new(r[0], r[1]);
        let s = &self.sampling;
        SamplingRanges {
            r_a: iv(s.r_a),
            r_b: iv(s.r_b),
            length: iv(s.length),
            theta_x: iv(s.theta_x),
            theta_y: iv(s.theta_y),
            theta_z: iv(s.theta_z),
            seed: self.seeds().sampling,
        }
    }

    pub fn stop(&self) -> StopCriteria {
        StopCriteria {
            max_iters: self.optimize.max_iters,
            rel_change_tol: self.optimize.rel_change_tol,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let usage = |e: &dyn std::fmt::Display| CliError::Usage(e.to_string());
        let spec = self.grid_spec()?;
        spec.window([0; 3], self.window).map_err(|e| usage(&e))?;
        spec.window([0; 3], self.ablation.window).map_err(|e| usage(&e))?;
        self.oracle.validate().map_err(|e| usage(&e))?;
        self.sampling_ranges().validate().map_err(|e| usage(&e))?;
        self.unet.validate().map_err(|e| usage(&e))?;
        self.unet.check_window(self.window).map_err(|e| usage(&e))?;
        self.unet.check_window(self.ablation.window).map_err(|e| usage(&e))?;
        self.train.validate().map_err(|e| usage(&e))?;
        self.stop().validate().map_err(|e| usage(&e))?;
        if self.sampling.count == 0 || self.ablation.count == 0 || self.ablation.epochs == 0 {
            return Err(CliError::Usage("sample counts and epochs must be positive".into()));
        }
        if self.gradcheck.designs == 0 || self.gradcheck.probes == 0 {
            return Err(CliError::Usage("gradcheck designs and probes must be positive".into()));
        }
        let o = &self.optimize;
        for i in 0..6 {
            if !(o.lower[i] <= o.x0[i] && o.x0[i] <= o.upper[i]) {
                return Err(CliError::Usage(format!(
                    "optimize.x0[{i}] = {} lies outside [{}, {}]",
                    o.x0[i], o.lower[i], o.upper[i]
                )));
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_load() {
        for p in [Preset::Desk, Preset::Paper] {
            let cfg = PipelineConfig::load(
                None,
                &Overrides {
                    preset: Some(p),
                    ..Default::default()
                },
            )
            .unwrap();
            assert_eq!(cfg.preset, p);
            assert_eq!(cfg.train.preset, p);
            assert_eq!(cfg.unet, UNetConfig::preset(p));
            let mut expected = TrainConfig::preset(p);
            expected.seed = 2;
            assert_eq!(cfg.train, expected);
        }
    }

    #[test]
    fn user_file_overrides_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 9\n[train]\nepochs = 3\n").unwrap();
        let cfg = PipelineConfig::load(Some(&path), &Overrides::default()).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.seed, 11);
        let pinned = PipelineConfig::load(
            Some(&path),
            &Overrides {
                seed: Some(1),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(pinned.seed, 1);
        assert_ne!(cfg.hash(), pinned.hash());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_windows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "[train]\nepoch = 3\n").unwrap();
        assert!(matches!(
            PipelineConfig::load(Some(&path), &Overrides::default()),
            Err(CliError::Usage(_))
        ));
        std::fs::write(&path, "window = [41, 20, 20]\n").unwrap();
        assert!(PipelineConfig::load(Some(&path), &Overrides::default()).is_err());
    }
}
