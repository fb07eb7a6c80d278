//! Analytic ground-truth velocity fields and dataset assembly.
//!
//! The oracle is a cheap closed-form stand-in for a flow solver: velocity
//! vanishes inside the obstacle, recovers to the freestream over a boundary
//! layer of width `decay_length`, and is reduced downstream of the obstacle
//! by a wake that accumulates along +x.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsf::{self, AnyField};
use crate::error::{Error, Result};
use crate::field::{centered_window, GridSpec, ScalarField3, VectorField3};
use crate::format::format_sig;
use crate::geometry::{sdf_grid, DesignParams};

/// Velocity magnitudes above this reject a sample.
pub const SPEED_LIMIT: f64 = 160.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub freestream: [f64; 3],
    pub decay_length: f64,
    pub wake_factor: f64,
    /// Streamwise length over which occupied cells keep shadowing the flow.
    pub wake_length: f64,
    /// Softness of the obstacle outline that casts the wake.
    pub shadow_width: f64,
    /// Amplitude of uniform noise added to the velocity outside the obstacle.
    pub noise: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            freestream: [100.0, 0.0, 0.0],
            decay_length: 0.5,
            wake_factor: 0.3,
            wake_length: 6.0,
            shadow_width: 0.2,
            noise: 0.0,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("oracle {name} must be positive, got {v}")))
            }
        };
        positive("decay_length", self.decay_length)?;
        positive("wake_length", self.wake_length)?;
        positive("shadow_width", self.shadow_width)?;
        if !(self.wake_factor.is_finite() && self.wake_factor >= 0.0) {
            return Err(Error::Config(format!(
                "oracle wake_factor must be non-negative, got {}",
                self.wake_factor
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config(format!(
                "oracle noise must be non-negative, got {}",
                self.noise
            )));
        }
        if self.freestream.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("oracle freestream must be finite".into()));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Wake intensity in `[0, 1)` per node.
///
/// Along every x-row, `w_i = 1 - (1 - g_{i-1})(1 - f w_{i-1})` where
/// `g = 1 - exp(-σ(-sdf/s) dx/s)` is the chance that a cell of soft width
/// `s` is occupied and `f = e^{-dx/l}` fades the wake over `l`. A row that
/// meets the body saturates within a node or two and then decays from the
/// trailing edge, so the deficit follows the frontal outline.
fn wake(sdf: &ScalarField3, cfg: &OracleConfig) -> Vec<f64> {
    let spec = sdf.spec();
    let [nx, ny, nz] = spec.dims;
    let dx = spec.spacing[0];
    let fade = (-dx / cfg.wake_length).exp();
    let s = cfg.shadow_width;
    let values = sdf.values();
    let mut out = vec![0.0; spec.len()];
    for k in 0..nz {
        for j in 0..ny {
            let row = spec.index(0, j, k);
            let mut w = 0.0;
            for i in 1..nx {
                let g = 1.0 - (-sigmoid(-values[row + i - 1] / s) * dx / s).exp();
                w = 1.0 - (1.0 - g) * (1.0 - fade * w);
                out[row + i] = w;
            }
        }
    }
    out
}

/// Synthetic velocity field for an obstacle described by `sdf`.
///
/// `U = U∞ · max(0, 1 - exp(-sdf/decay)) · (1 - wake_factor · w)`, so U is
/// exactly zero on and inside the obstacle. Non-finite SDF values give a
/// non-finite velocity at that node.
pub fn synth_flow(sdf: &ScalarField3, cfg: &OracleConfig) -> VectorField3 {
    let w = wake(sdf, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let values = sdf
        .values()
        .iter()
        .zip(&w)
        .map(|(&d, &w)| {
            if !d.is_finite() {
                return [f64::NAN; 3];
            }
            let layer = (1.0 - (-d / cfg.decay_length).exp()).max(0.0);
            let scale = layer * (1.0 - cfg.wake_factor * w);
            let mut u = cfg.freestream.map(|c| c * scale);
            if cfg.noise > 0.0 && d > 0.0 {
                u[0] += cfg.noise * rng.gen_range(-1.0..=1.0);
            }
            u
        })
        .collect();
    VectorField3::new(*sdf.spec(), values).expect("same spec as the sdf")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub params: DesignParams,
    pub sdf: ScalarField3,
    pub velocity: VectorField3,
}

impl Sample {
    pub fn new(id: impl Into<String>, params: DesignParams, sdf: ScalarField3, velocity: VectorField3) -> Result<Self> {
        if sdf.spec() != velocity.spec() {
            return Err(Error::SpecMismatch {
                left: format!("sdf {:?}", sdf.spec()),
                right: format!("velocity {:?}", velocity.spec()),
            });
        }
        Ok(Sample {
            id: id.into(),
            params,
            sdf,
            velocity,
        })
    }

    /// Largest finite velocity magnitude (0 for an all-zero field).
    pub fn max_speed(&self) -> f64 {
        self.velocity
            .values()
            .iter()
            .map(|u| (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RejectReason {
    NonFinite { node: usize },
    Overspeed { node: usize, speed: f64 },
}

impl RejectReason {
    /// Manifest token.
    pub fn token(&self) -> &'static str {
        match self {
            RejectReason::NonFinite { .. } => "nan",
            RejectReason::Overspeed { .. } => "overspeed",
        }
    }
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::NonFinite { node } => write!(f, "non-finite value at node {node}"),
            RejectReason::Overspeed { node, speed } => {
                write!(f, "speed {speed} above {SPEED_LIMIT} at node {node}")
            }
        }
    }
}

/// First reason to drop `sample`, scanning nodes in layout order.
pub fn check_sample(sample: &Sample) -> Option<RejectReason> {
    for (node, (&d, u)) in sample.sdf.values().iter().zip(sample.velocity.values()).enumerate() {
        if !d.is_finite() || u.iter().any(|c| !c.is_finite()) {
            return Some(RejectReason::NonFinite { node });
        }
        let speed = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        if speed > SPEED_LIMIT {
            return Some(RejectReason::Overspeed { node, speed });
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    /// Position of the sample in the filter input.
    pub index: usize,
    pub id: String,
    pub reason: RejectReason,
}

/// Keeps samples that are finite everywhere with every speed at most 160.
pub fn filter_samples(samples: Vec<Sample>) -> (Vec<Sample>, Vec<Rejection>) {
    let mut kept = Vec::with_capacity(samples.len());
    let mut rejected = Vec::new();
    for (index, s) in samples.into_iter().enumerate() {
        match check_sample(&s) {
            None => kept.push(s),
            Some(reason) => rejected.push(Rejection {
                index,
                id: s.id.clone(),
                reason,
            }),
        }
    }
    (kept, rejected)
}

/// Seeded train/validation split with a 6:1 ratio.
///
/// `n_val = max(1, round(n / 7))` for two or more samples; a single sample
/// goes to training.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fisher-Yates, spelled out so the permutation is pinned to this code.
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_val = if n >= 2 {
        ((n as f64 / 7.0).round() as usize).max(1)
    } else {
        0
    };
    let val = order.split_off(n - n_val);
    (order, val)
}

/// One manifest row per generated design.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub id: String,
    pub params: DesignParams,
    pub retained: bool,
    pub reject_reason: String,
    pub max_umag: f64,
}

pub const MANIFEST_HEADER: [&str; 10] = [
    "id",
    "r_a",
    "r_b",
    "L",
    "theta_x",
    "theta_y",
    "theta_z",
    "retained",
    "reject_reason",
    "max_umag",
];

pub fn write_manifest<W: Write>(out: W, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let wrap = |e: csv::Error| Error::Csv {
        path: "manifest".into(),
        source: e,
    };
    w.write_record(MANIFEST_HEADER).map_err(wrap)?;
    for row in rows {
        let mut rec = vec![row.id.clone()];
        rec.extend(row.params.to_array().iter().map(|v| format_sig(*v, 17)));
        rec.push(row.retained.to_string());
        rec.push(row.reject_reason.clone());
        rec.push(format_sig(row.max_umag, 17));
        w.write_record(&rec).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io("manifest", e))
}

pub fn read_manifest<R: Read>(input: R) -> Result<Vec<ManifestRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| Error::parse(0, format!("manifest header: {e}")))?
        .clone();
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(Error::parse(
            0,
            format!("manifest header must be {}", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let offset = e.position().map_or(0, |p| p.byte() as usize);
            Error::parse(offset, e.to_string())
        })?;
        let offset = rec.position().map_or(0, |p| p.byte() as usize);
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| {
                Error::parse(
                    offset,
                    format!("column {} is not a number: `{}`", MANIFEST_HEADER[i], &rec[i]),
                )
            })
        };
        let mut p = [0.0; 6];
        for (c, slot) in p.iter_mut().enumerate() {
            *slot = num(c + 1)?;
        }
        let retained = match &rec[7] {
            "true" => true,
            "false" => false,
            other => {
                return Err(Error::parse(
                    offset,
                    format!("retained must be true or false, got `{other}`"),
                ))
            }
        };
        rows.push(ManifestRow {
            id: rec[0].to_string(),
            params: DesignParams::from_slice(&p)?,
            retained,
            reject_reason: rec[8].to_string(),
            max_umag: num(9)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Largest velocity magnitude over retained samples.
    pub v_max: f64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub split_seed: u64,
    pub manifest: Vec<ManifestRow>,
}

impl Dataset {
    /// Wraps retained samples, computing the normalization and split.
    pub fn from_samples(samples: Vec<Sample>, split_seed: u64, manifest: Vec<ManifestRow>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("dataset has no retained samples".into()));
        }
        let v_max = samples.iter().map(Sample::max_speed).fold(0.0, f64::max);
        if !(v_max > 0.0) {
            return Err(Error::Config("dataset velocity fields are all zero".into()));
        }
        let (train, val) = split_indices(samples.len(), split_seed);
        Ok(Dataset {
            samples,
            v_max,
            train,
            val,
            split_seed,
            manifest,
        })
    }
}

/// Full-domain SDF and oracle flow for one design, cropped to a window
/// centered on the obstacle.
pub fn generate_sample(
    id: impl Into<String>,
    params: &DesignParams,
    spec: &GridSpec,
    window: [usize; 3],
    cfg: &OracleConfig,
) -> Result<Sample> {
    params.validate()?;
    let sdf = sdf_grid(params, spec);
    let velocity = synth_flow(&sdf, cfg);
    let origin = centered_window(&sdf, window)?;
    Sample::new(id, *params, sdf.crop(origin, window)?, velocity.crop(origin, window)?)
}

pub fn sample_id(index: usize) -> String {
    format!("{index:05}")
}

/// Generates, filters, normalizes and splits a dataset. `tamper` may modify
/// each raw sample before filtering; it exists for fault-injection tests.
pub fn build_dataset_with(
    designs: &[DesignParams],
    spec: &GridSpec,
    window: [usize; 3],
    cfg: &OracleConfig,
    split_seed: u64,
    tamper: impl Fn(usize, &mut Sample) + Sync,
) -> Result<(Dataset, Vec<Sample>)> {
    spec.validate()?;
    cfg.validate()?;
    spec.window([0; 3], window)?;
    let raw: Vec<Sample> = designs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut s = generate_sample(sample_id(i), p, spec, window, cfg)?;
            tamper(i, &mut s);
            Ok(s)
        })
        .collect::<Result<_>>()?;
    let mut manifest: Vec<ManifestRow> = raw
        .iter()
        .map(|s| ManifestRow {
            id: s.id.clone(),
            params: s.params,
            retained: true,
            reject_reason: String::new(),
            max_umag: s.max_speed(),
        })
        .collect();
    let (kept, rejected) = filter_samples(raw.clone());
    for r in &rejected {
        manifest[r.index].retained = false;
        manifest[r.index].reject_reason = r.reason.token().to_string();
    }
    Ok((Dataset::from_samples(kept, split_seed, manifest)?, raw))
}

pub fn build_dataset(
    designs: &[DesignParams],
    spec: &GridSpec,
    window: [usize; 3],
    cfg: &OracleConfig,
    split_seed: u64,
) -> Result<Dataset> {
    Ok(build_dataset_with(designs, spec, window, cfg, split_seed, |_, _| {})?.0)
}

pub const MANIFEST_FILE: &str = "manifest.csv";

fn pair_paths(stem: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let name = stem
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let dir = stem.parent().unwrap_or_else(|| Path::new(""));
    (dir.join(format!("{name}_sdf.dsf")), dir.join(format!("{name}_vel.dsf")))
}

pub fn save_sample(dir: &Path, sample: &Sample) -> Result<()> {
    let (sdf, vel) = pair_paths(&dir.join(&sample.id));
    dsf::save_scalar(&sdf, &sample.sdf)?;
    dsf::save_vector(&vel, &sample.velocity)
}

/// Writes one DSF1 pair per sample in `all` and the manifest.
pub fn save_dataset_dir(dir: &Path, all: &[Sample], manifest: &[ManifestRow]) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in all {
        save_sample(dir, s)?;
    }
    let path = dir.join(MANIFEST_FILE);
    let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_manifest(std::io::BufWriter::new(file), manifest)
}

/// Loads the retained samples listed in a dataset directory's manifest.
pub fn load_dataset_dir(dir: &Path, split_seed: u64) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let manifest = read_manifest(std::io::BufReader::new(file))?;
    let samples = manifest
        .iter()
        .filter(|r| r.retained)
        .map(|r| {
            ingest_external(&dir.join(&r.id), r.params).map(|mut s| {
                s.id = r.id.clone();
                s
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_samples(samples, split_seed, manifest)
}

/// Reads `<stem>_sdf.dsf` and `<stem>_vel.dsf` into a sample.
pub fn ingest_external(stem: &Path, params: DesignParams) -> Result<Sample> {
    let (sdf_path, vel_path) = pair_paths(stem);
    let sdf = match dsf::load(&sdf_path)? {
        AnyField::Scalar(f) => f,
        AnyField::Vector(_) => return Err(Error::Config(format!("{} holds a vector field", sdf_path.display()))),
    };
    let velocity = match dsf::load(&vel_path)? {
        AnyField::Vector(f) => f,
        AnyField::Scalar(_) => return Err(Error::Config(format!("{} holds a scalar field", vel_path.display()))),
    };
    let id = stem
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Sample::new(id, params, sdf, velocity)
}
