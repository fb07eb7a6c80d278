//! The six pipeline commands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shapeflow_core::diff::{check_vjp, relative_error, CorruptedVjp, DiffComponent, GradCheckOptions, MeanUx};
use shapeflow_core::geometry::{
    load_designs_csv, sample_designs, save_designs_csv, sdf_grid, sdf_region, SdfGridStage, PARAM_NAMES,
};
use shapeflow_core::mesh::{export_mesh, laplacian_smooth, marching_cubes, MeshFormat};
use shapeflow_core::mma::{optimize, write_trajectory_csv, Trajectory};
use shapeflow_core::oracle::{build_dataset_with, load_dataset_dir, save_dataset_dir, Dataset};
use shapeflow_core::stages::{CropStage, WindowPlacement};
use shapeflow_core::vtk::save_structured_points;
use shapeflow_core::{chain, DesignParams, GridSpec, ScalarField3, VectorField3};
use shapeflow_surrogate::ablation::{run_ablation_with, save_ablation_csv, standard_variants};
use shapeflow_surrogate::train::save_metrics_csv;
use shapeflow_surrogate::{train_with, BuildInput, InferenceComponent, MaskMode, Model, Precision, TrainConfig};

use crate::config::PipelineConfig;
use crate::error::{io_err, CliError};

pub const DATASET_DIR: &str = "dataset";
pub const MODEL_DIR: &str = "model";
pub const OPTIMIZE_DIR: &str = "optimize";
pub const ABLATION_DIR: &str = "ablation";

type Result<T> = std::result::Result<T, CliError>;

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir.display(), e))
}

/// Records what produced the artifacts in `cfg.out`.
pub fn write_run_manifest(cfg: &PipelineConfig, command: &str, threads: usize) -> Result<PathBuf> {
    create_dir(&cfg.out)?;
    let mut t = toml::Table::new();
    t.insert("command".into(), command.into());
    t.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    t.insert("config_sha256".into(), cfg.hash().into());
    t.insert("threads".into(), (threads as i64).into());
    t.insert(
        "seeds".into(),
        toml::Value::try_from(cfg.seeds()).expect("seeds serialize"),
    );
    t.insert("config".into(), toml::Value::try_from(cfg).expect("config serializes"));
    let path = cfg.out.join(format!("run-{command}.toml"));
    let text = toml::to_string(&t).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| io_err(path.display(), e))?;
    Ok(path)
}

fn dataset_for(
    cfg: &PipelineConfig,
    count: usize,
    window: [usize; 3],
    inject_nan: &[usize],
) -> Result<(Dataset, Vec<shapeflow_core::oracle::Sample>)> {
    let spec = cfg.grid_spec()?;
    let mut ranges = cfg.sampling_ranges();
    ranges.seed = cfg.seeds().sampling;
    let designs = sample_designs(&ranges, count)?;
    Ok(build_dataset_with(
        &designs,
        &spec,
        window,
        &cfg.oracle,
        cfg.seeds().split,
        |i, s| {
            if inject_nan.contains(&i) {
                s.velocity.values_mut()[0][0] = f64::NAN;
            }
        },
    )?)
}

pub fn datagen(cfg: &PipelineConfig, inject_nan: &[usize]) -> Result<PathBuf> {
    let (ds, raw) = dataset_for(cfg, cfg.sampling.count, cfg.window, inject_nan)?;
    let dir = cfg.out.join(DATASET_DIR);
    save_dataset_dir(&dir, &raw, &ds.manifest)?;
    let designs: Vec<DesignParams> = raw.iter().map(|s| s.params).collect();
    save_designs_csv(&dir.join("designs.csv"), &designs)?;
    println!(
        "datagen: {} of {} samples retained, v_max {:.6}, split {} train / {} val",
        ds.samples.len(),
        raw.len(),
        ds.v_max,
        ds.train.len(),
        ds.val.len()
    );
    for row in ds.manifest.iter().filter(|r| !r.retained) {
        println!("  rejected {} ({})", row.id, row.reject_reason);
    }
    Ok(dir)
}

fn load_dataset(cfg: &PipelineConfig, data: Option<&Path>, window: [usize; 3]) -> Result<Dataset> {
    let dir = data.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.join(DATASET_DIR));
    if !dir.is_dir() {
        return Err(CliError::Usage(format!(
            "dataset directory {} does not exist",
            dir.display()
        )));
    }
    let ds = load_dataset_dir(&dir, cfg.seeds().split)?;
    let dims = ds.samples[0].sdf.spec().dims;
    if dims != window {
        return Err(CliError::Usage(format!(
            "dataset window {dims:?} does not match the configured window {window:?}"
        )));
    }
    Ok(ds)
}

pub fn train(cfg: &PipelineConfig, data: Option<&Path>) -> Result<PathBuf> {
    let ds = load_dataset(cfg, data, cfg.window)?;
    println!(
        "train: {} train / {} val samples, {} epochs, batch {}, lr {}",
        ds.train.len(),
        ds.val.len(),
        cfg.train.epochs,
        cfg.train.batch_size,
        cfg.train.learning_rate
    );
    let out = train_with(&ds, &cfg.unet, &cfg.train, |m| {
        println!(
            "epoch {:4}  train {:.6e}  val {:.6e}  corr {:+.4}",
            m.epoch, m.train_mse, m.val_mse, m.corr.value
        )
    })?;
    let dir = cfg.out.join(MODEL_DIR);
    create_dir(&dir)?;
    out.final_model.save(&dir.join("final.unw"))?;
    out.best_model.save(&dir.join("best.unw"))?;
    save_metrics_csv(&dir.join("metrics.csv"), &out.history)?;
    println!("train: best validation epoch {}", out.best_epoch);
    Ok(dir)
}

fn load_model(cfg: &PipelineConfig, model: Option<&Path>) -> Result<Model> {
    let path = model
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out.join(MODEL_DIR).join("best.unw"));
    if !path.is_file() {
        return Err(CliError::Usage(format!("model {} does not exist", path.display())));
    }
    let m = Model::load(&path)?;
    if m.window != cfg.window {
        return Err(CliError::Usage(format!(
            "model window {:?} does not match the configured window {:?}",
            m.window, cfg.window
        )));
    }
    Ok(m)
}

/// Design parameters → full-grid SDF → centered window → surrogate → Θ.
pub fn objective_chain(
    spec: GridSpec,
    window: [usize; 3],
    inference: InferenceComponent,
) -> Result<shapeflow_core::Chain> {
    Ok(chain(vec![
        Box::new(SdfGridStage::new(spec)),
        Box::new(CropStage::new(spec, window, WindowPlacement::Centered)?),
        Box::new(inference),
        Box::new(MeanUx::new(window)),
    ])?)
}

fn final_mesh(cfg: &PipelineConfig, params: &DesignParams, path: &Path) -> Result<()> {
    let sdf = sdf_grid(params, &cfg.grid_spec()?);
    let mesh = marching_cubes(&sdf, cfg.mesh.iso)?;
    let mesh = laplacian_smooth(&mesh, cfg.mesh.smoothing_iterations, cfg.mesh.smoothing_lambda)?;
    let format = MeshFormat::from_path(path)
        .ok_or_else(|| CliError::Usage(format!("{}: mesh output must end in .obj or .stl", path.display())))?;
    export_mesh(&mesh, path, format)?;
    println!(
        "mesh: {} vertices, {} triangles -> {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        path.display()
    );
    Ok(())
}

pub fn run_optimize(cfg: &PipelineConfig, model: Option<&Path>, export_final_mesh: bool) -> Result<Trajectory> {
    let model = Arc::new(load_model(cfg, model)?);
    let spec = cfg.grid_spec()?;
    let objective = objective_chain(
        spec,
        cfg.window,
        InferenceComponent::new(model.clone(), Precision::F32)?,
    )?;
    let o = &cfg.optimize;
    let traj = optimize(&objective, &o.x0, &o.lower, &o.upper, cfg.stop())?;
    for r in &traj.rows {
        println!(
            "iter {:2}  r_a {:.5}  r_b {:.5}  L {:.5}  theta_z {:+.5}  objective {:.6}  |grad| {:.4e}  change {:.4e}",
            r.iter, r.x[0], r.x[1], r.x[2], r.x[5], r.objective, r.grad_norm, r.rel_change
        );
    }
    println!(
        "optimize: {} after {} iterations, objective {:.6}",
        if traj.converged { "converged" } else { "stopped" },
        traj.rows.len(),
        traj.final_objective
    );

    let dir = cfg.out.join(OPTIMIZE_DIR);
    create_dir(&dir)?;
    let mut buf = Vec::new();
    write_trajectory_csv(&mut buf, &traj)?;
    let path = dir.join("trajectory.csv");
    std::fs::write(&path, buf).map_err(|e| io_err(path.display(), e))?;
    let best = DesignParams::from_slice(&traj.final_x)?;
    save_designs_csv(&dir.join("final_design.csv"), &[best])?;
    let mut summary = toml::Table::new();
    summary.insert("iterations".into(), (traj.rows.len() as i64).into());
    summary.insert("converged".into(), traj.converged.into());
    summary.insert("initial_objective".into(), traj.rows[0].objective.into());
    summary.insert("final_objective".into(), traj.final_objective.into());
    summary.insert(
        "final_x".into(),
        toml::Value::try_from(&traj.final_x).expect("floats serialize"),
    );
    let path = dir.join("summary.toml");
    std::fs::write(&path, toml::to_string(&summary).expect("summary serializes"))
        .map_err(|e| io_err(path.display(), e))?;

    let full = sdf_grid(&best, &spec);
    let crop = CropStage::new(spec, cfg.window, WindowPlacement::Centered)?;
    let origin = crop.origin_for(full.values())?;
    let sdf = full.crop(origin, cfg.window)?;
    let inference = InferenceComponent::new(model, Precision::F32)?;
    let flow = VectorField3::from_flat(*sdf.spec(), &inference.forward(sdf.values())?)?;
    save_structured_points(
        &dir.join("final_flow.vtk"),
        "surrogate flow at the final design",
        sdf.spec(),
        &[("sdf", &sdf)],
        &[("velocity", &flow)],
    )?;
    if export_final_mesh || o.export_final_mesh {
        final_mesh(cfg, &best, &dir.join("final_mesh.obj"))?;
    }
    Ok(traj)
}

pub fn export_mesh_cmd(
    cfg: &PipelineConfig,
    design: Option<&[f64]>,
    designs_csv: Option<&Path>,
    output: Option<&Path>,
) -> Result<()> {
    let params = match (design, designs_csv) {
        (Some(_), Some(_)) => return Err(CliError::Usage("give either --design or --designs, not both".into())),
        (Some(v), None) => {
            if v.len() != 6 {
                return Err(CliError::Usage(format!(
                    "--design takes 6 comma-separated values, got {}",
                    v.len()
                )));
            }
            DesignParams::from_slice(v)?
        }
        (None, Some(p)) => {
            let all = load_designs_csv(p)?;
            if all.len() != 1 {
                return Err(CliError::Usage(format!(
                    "{} holds {} designs, expected one",
                    p.display(),
                    all.len()
                )));
            }
            all[0]
        }
        (None, None) => DesignParams::from_slice(&cfg.optimize.x0)?,
    };
    params.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let path = output
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.out.join("mesh.obj"));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    final_mesh(cfg, &params, &path)
}

pub fn ablate(cfg: &PipelineConfig, data: Option<&Path>) -> Result<PathBuf> {
    let a = &cfg.ablation;
    let ds = match data {
        Some(_) => load_dataset(cfg, data, a.window)?,
        None => dataset_for(cfg, a.count, a.window, &[])?.0,
    };
    let tcfg = TrainConfig {
        epochs: a.epochs,
        ..cfg.train.clone()
    };
    println!(
        "ablate: {} train / {} val samples on a {:?} window, {} epochs per run",
        ds.train.len(),
        ds.val.len(),
        a.window,
        a.epochs
    );
    let rows = run_ablation_with(&ds, &cfg.unet, &tcfg, &standard_variants(), |r| {
        let v = r.variant;
        println!(
            "  attn {:3}  mask {:7}  k {:4}  train {:.4e}  val {:.4e}  best {:.4e}/{:.4e} ({})  corr {:+.4}",
            if v.attention { "yes" } else { "no" },
            if v.mask == MaskMode::Hard { "hard" } else { "sigmoid" },
            if v.mask == MaskMode::Hard {
                "-".to_string()
            } else {
                v.temperature.to_string()
            },
            r.train_final,
            r.val_final,
            r.best_train,
            r.best_val,
            r.best_epoch,
            r.corr
        )
    })?;
    let dir = cfg.out.join(ABLATION_DIR);
    create_dir(&dir)?;
    let path = dir.join("ablation.csv");
    save_ablation_csv(&path, &rows)?;
    Ok(path)
}

/// Stage a gradient check can be run on.
pub const GRADCHECK_STAGES: [&str; 5] = ["geometry", "crop", "build_input", "inference", "chain"];

#[derive(Debug, Clone)]
pub struct StageResult {
    pub stage: String,
    pub probes: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    /// Worst error per design parameter, for parameter-valued stages.
    pub per_param: Option<[f64; 6]>,
}

impl StageResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn maybe_corrupt(c: Box<dyn DiffComponent>, stage: &str, corrupt: Option<&str>) -> Box<dyn DiffComponent> {
    if corrupt == Some(stage) {
        Box::new(CorruptedVjp::new(Arc::<dyn DiffComponent>::from(c), 1.5))
    } else {
        c
    }
}

fn random_design(cfg: &PipelineConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let o = &cfg.optimize;
    (0..6)
        .map(|i| o.lower[i] + rng.gen::<f64>() * (o.upper[i] - o.lower[i]))
        .collect()
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// `count` distinct window nodes with |sdf| above `margin`, as flat indices
/// of the window.
fn interior_probes(sdf: &[f64], count: usize, margin: f64, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let mut candidates: Vec<usize> = (0..sdf.len()).filter(|&i| sdf[i].abs() > margin).collect();
    if candidates.len() < count {
        return Err(CliError::Runtime(format!(
            "only {} nodes are usable as probes",
            candidates.len()
        )));
    }
    for i in 0..count {
        let j = rng.gen_range(i..candidates.len());
        candidates.swap(i, j);
    }
    candidates.truncate(count);
    Ok(candidates)
}

/// Zeroes the cotangent at nodes whose SDF branch changes when any
/// parameter moves by the difference step; the SDF has kinks there.
fn mask_branch_switches(spec: GridSpec, x: &[f64], step: f64, cot: &mut [f64]) -> Result<()> {
    let base = DesignParams::from_slice(x)?;
    let mut shifted = Vec::with_capacity(12);
    for i in 0..6 {
        let h = step * x[i].abs().max(1.0);
        for s in [-h, h] {
            let mut y = x.to_vec();
            y[i] += s;
            shifted.push(DesignParams::from_slice(&y)?);
        }
    }
    for (n, c) in cot.iter_mut().enumerate() {
        let [i, j, k] = spec.unravel(n);
        let p = spec.position(i, j, k);
        let region = sdf_region(&base, p);
        if shifted.iter().any(|q| sdf_region(q, p) != region) {
            *c = 0.0;
        }
    }
    Ok(())
}

fn per_param(results: &[(usize, f64)]) -> [f64; 6] {
    let mut out = [0.0f64; 6];
    for &(i, e) in results {
        out[i] = out[i].max(e);
    }
    out
}

/// Finite-difference checks of every differentiable stage.
pub fn gradcheck(cfg: &PipelineConfig, model: Option<&Path>, corrupt: Option<&str>) -> Result<Vec<StageResult>> {
    if let Some(c) = corrupt {
        if !GRADCHECK_STAGES.contains(&c) {
            return Err(CliError::Usage(format!(
                "unknown stage `{c}`, expected one of {GRADCHECK_STAGES:?}"
            )));
        }
    }
    let spec = cfg.grid_spec()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds().gradcheck);
    let model = match model {
        Some(_) => load_model(cfg, model)?,
        None => Model::random(
            &cfg.unet,
            cfg.window,
            cfg.oracle.freestream[0].abs().max(1.0),
            5.0,
            cfg.seeds().train,
        )?,
    };
    let designs: Vec<Vec<f64>> = (0..cfg.gradcheck.designs)
        .map(|_| random_design(cfg, &mut rng))
        .collect();
    let exact = GradCheckOptions::default();
    let mut results = Vec::new();

    // Geometry: every parameter at every design.
    let geometry = maybe_corrupt(Box::new(SdfGridStage::new(spec)), "geometry", corrupt);
    let mut errs = Vec::new();
    for x in &designs {
        let mut cot = random_vec(spec.len(), &mut rng);
        mask_branch_switches(spec, x, exact.step, &mut cot)?;
        let r = check_vjp(geometry.as_ref(), x, &cot, &[0, 1, 2, 3, 4, 5], exact)?;
        errs.extend(r.probes.iter().map(|p| (p.index, p.rel_err)));
    }
    results.push(StageResult {
        stage: "geometry".into(),
        probes: errs.len(),
        max_rel_err: errs.iter().map(|e| e.1).fold(0.0, f64::max),
        tolerance: 1e-6,
        per_param: Some(per_param(&errs)),
    });

    // Crop: grid nodes inside the chosen window, away from the zero level
    // so the window cannot move.
    let full = sdf_grid(&DesignParams::from_slice(&designs[0])?, &spec);
    let crop = CropStage::new(spec, cfg.window, WindowPlacement::Centered)?;
    let origin = crop.origin_for(full.values())?;
    let window = spec.window(origin, cfg.window)?;
    let local = interior_probes(
        full.crop(origin, cfg.window)?.values(),
        cfg.gradcheck.probes,
        1e-2,
        &mut rng,
    )?;
    let probes: Vec<usize> = local
        .iter()
        .map(|&i| {
            let [a, b, c] = window.unravel(i);
            spec.index(a + origin[0], b + origin[1], c + origin[2])
        })
        .collect();
    let crop_stage = maybe_corrupt(Box::new(crop), "crop", corrupt);
    let cot = random_vec(window.len(), &mut rng);
    let r = check_vjp(crop_stage.as_ref(), full.values(), &cot, &probes, exact)?;
    results.push(StageResult {
        stage: "crop".into(),
        probes: r.probes.len(),
        max_rel_err: r.max_rel_err(),
        tolerance: 1e-6,
        per_param: None,
    });

    // Input builder and network on the cropped window.
    let sdf = full.crop(origin, cfg.window)?;
    let builder = maybe_corrupt(
        Box::new(BuildInput::new(cfg.window, model.sdf_scale, &model.config)?),
        "build_input",
        corrupt,
    );
    let probes = interior_probes(sdf.values(), cfg.gradcheck.probes, 1e-2, &mut rng)?;
    let cot = random_vec(builder.output_shape().len(), &mut rng);
    let r = check_vjp(builder.as_ref(), sdf.values(), &cot, &probes, exact)?;
    results.push(StageResult {
        stage: "build_input".into(),
        probes: r.probes.len(),
        max_rel_err: r.max_rel_err(),
        tolerance: 1e-6,
        per_param: None,
    });

    let model = Arc::new(model);
    results.push(check_inference(
        model.clone(),
        &sdf,
        cfg.gradcheck.probes,
        corrupt,
        &mut rng,
    )?);
    results.push(check_chain(cfg, spec, &model, &designs, corrupt)?);

    for r in &results {
        println!(
            "gradcheck {:12} probes {:3}  max_rel_err {:.3e}  tol {:.0e}  {}",
            r.stage,
            r.probes,
            r.max_rel_err,
            r.tolerance,
            if r.passed() { "PASS" } else { "FAIL" }
        );
        if let Some(pp) = r.per_param {
            for (name, e) in PARAM_NAMES.iter().zip(pp) {
                println!("    {name:8} {e:.3e}");
            }
        }
    }
    Ok(results)
}

/// 32-bit vjp against central differences of the same weights evaluated
/// in 64-bit; probes keep clear of the zero level so the hard mask cannot
/// switch within the step.
fn check_inference(
    model: Arc<Model>,
    sdf: &ScalarField3,
    count: usize,
    corrupt: Option<&str>,
    rng: &mut ChaCha8Rng,
) -> Result<StageResult> {
    let stage = maybe_corrupt(
        Box::new(InferenceComponent::new(model.clone(), Precision::F32)?),
        "inference",
        corrupt,
    );
    let reference = InferenceComponent::new(model, Precision::F64)?;
    let step = 1e-5;
    let probes = interior_probes(sdf.values(), count, 0.1, rng)?;
    let cot = random_vec(3 * sdf.values().len(), rng);
    let analytic = stage.vjp(sdf.values(), &cot)?;
    let numeric = check_vjp(
        &reference,
        sdf.values(),
        &cot,
        &probes,
        GradCheckOptions { step, floor: 0.0 },
    )?;
    let scale = numeric.probes.iter().map(|p| p.numeric.abs()).fold(0.0, f64::max);
    let max_rel_err = numeric
        .probes
        .iter()
        .map(|p| relative_error(analytic[p.index], p.numeric, 1e-6 * scale))
        .fold(0.0, f64::max);
    Ok(StageResult {
        stage: "inference".into(),
        probes: probes.len(),
        max_rel_err,
        tolerance: 1e-2,
        per_param: None,
    })
}

/// Whole chain in 64-bit with a sigmoid mask, so every stage is smooth.
/// Designs whose centered window would move within the difference step are
/// skipped.
fn check_chain(
    cfg: &PipelineConfig,
    spec: GridSpec,
    model: &Model,
    designs: &[Vec<f64>],
    corrupt: Option<&str>,
) -> Result<StageResult> {
    let mut smooth = model.clone();
    smooth.config.mask = MaskMode::Sigmoid;
    let inference = InferenceComponent::new(Arc::new(smooth), Precision::F64)?;
    let objective = maybe_corrupt(
        Box::new(objective_chain(spec, cfg.window, inference)?),
        "chain",
        corrupt,
    );
    let crop = CropStage::new(spec, cfg.window, WindowPlacement::Centered)?;
    let opts = GradCheckOptions {
        step: 1e-5,
        floor: 1e-10,
    };
    let origin_at = |x: &[f64]| -> Result<[usize; 3]> {
        let p = DesignParams::from_slice(x)?;
        Ok(crop.origin_for(sdf_grid(&p, &spec).values())?)
    };
    let mut errs = Vec::new();
    for x in designs {
        let o = origin_at(x)?;
        let mut stable = true;
        for i in 0..6 {
            let h = opts.step * x[i].abs().max(1.0);
            for s in [-h, h] {
                let mut y = x.clone();
                y[i] += s;
                stable &= origin_at(&y)? == o;
            }
        }
        if !stable {
            println!("gradcheck chain: skipping a design whose window moves within the step");
            continue;
        }
        let r = check_vjp(objective.as_ref(), x, &[1.0], &[0, 1, 2, 3, 4, 5], opts)?;
        errs.extend(r.probes.iter().map(|p| (p.index, p.rel_err)));
    }
    if errs.is_empty() {
        return Err(CliError::Runtime(
            "no design with a stable window for the chain check".into(),
        ));
    }
    Ok(StageResult {
        stage: "chain".into(),
        probes: errs.len(),
        max_rel_err: errs.iter().map(|e| e.1).fold(0.0, f64::max),
        tolerance: 1e-3,
        per_param: Some(per_param(&errs)),
    })
}
