mod common;

use shapeflow_core::geometry::DesignParams;
use shapeflow_core::oracle::{Dataset, Sample};
use shapeflow_core::{GridSpec, ScalarField3, VectorField3};
use shapeflow_surrogate::ablation::{save_ablation_csv, ABLATION_HEADER};
use shapeflow_surrogate::train::{save_metrics_csv, METRICS_HEADER};
use shapeflow_surrogate::{run_ablation, standard_variants, train, Error, MaskMode, Model};

#[test]
fn fixed_seed_reproduces_first_epoch() {
    let ds = common::tiny_dataset(6, [8, 4, 4]);
    let a = train(&ds, &common::tiny_unet(), &common::tiny_train(1)).unwrap();
    let b = train(&ds, &common::tiny_unet(), &common::tiny_train(1)).unwrap();
    assert_eq!(a.history[0].train_mse.to_bits(), b.history[0].train_mse.to_bits());
    assert_eq!(a.final_model, b.final_model);
}

#[test]
fn thread_count_does_not_change_results() {
    let ds = common::tiny_dataset(6, [8, 4, 4]);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&ds, &common::tiny_unet(), &common::tiny_train(1)).unwrap())
    };
    assert_eq!(run(1).final_model, run(3).final_model);
}

#[test]
fn learns_freestream() {
    let spec = GridSpec::new([0.0; 3], [0.5; 3], [8, 4, 4]).unwrap();
    let samples: Vec<Sample> = (0..8)
        .map(|i| {
            let sdf = ScalarField3::from_fn(spec, |p| 10.0 + p[0] + 0.1 * i as f64);
            let vel = VectorField3::filled(spec, [100.0, 0.0, 0.0]);
            Sample::new(format!("{i}"), DesignParams::new(1.0, 1.0, 2.0, [0.0; 3]), sdf, vel).unwrap()
        })
        .collect();
    let ds = Dataset::from_samples(samples, 1, Vec::new()).unwrap();
    let out = train(&ds, &common::tiny_unet(), &common::tiny_train(40)).unwrap();
    assert!(out.last().val_mse < 1e-3, "{:?}", out.last());
    assert!(out.last().corr.value.abs() <= 1.0);
}

#[test]
fn converges_on_oracle_data() {
    let ds = common::tiny_dataset(12, [8, 4, 4]);
    let out = train(&ds, &common::tiny_unet(), &common::tiny_train(15)).unwrap();
    let first = out.history[0].train_mse;
    assert!(
        out.last().train_mse < 0.1 * first,
        "{first} -> {}",
        out.last().train_mse
    );
    assert!(out.best().val_mse <= out.last().val_mse);
    assert_eq!(out.best_model.epoch, out.best_epoch);
}

#[test]
fn non_finite_loss_aborts_with_location() {
    let mut ds = common::tiny_dataset(4, [8, 4, 4]);
    for s in &mut ds.samples {
        s.velocity.values_mut()[0][0] = f64::INFINITY;
    }
    match train(&ds, &common::tiny_unet(), &common::tiny_train(2)) {
        Err(Error::NonFiniteLoss { epoch, batch }) => assert_eq!((epoch, batch), (1, 0)),
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}

#[test]
fn checkpoint_and_metrics_files() {
    let ds = common::tiny_dataset(4, [8, 4, 4]);
    let out = train(&ds, &common::tiny_unet(), &common::tiny_train(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("final.unw");
    out.final_model.save(&path).unwrap();
    assert!(dir.path().join("final.toml").exists());
    let back = Model::load(&path).unwrap();
    assert_eq!(back, out.final_model);
    assert_eq!(back.split_seed, 5);

    let metrics = dir.path().join("metrics.csv");
    save_metrics_csv(&metrics, &out.history).unwrap();
    let text = std::fs::read_to_string(metrics).unwrap();
    assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn ablation_reports_four_rows() {
    let ds = common::tiny_dataset(4, [8, 4, 4]);
    let rows = run_ablation(&ds, &common::tiny_unet(), &common::tiny_train(1), &standard_variants()).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().filter(|r| r.variant.mask == MaskMode::Sigmoid).count(), 2);
    assert!(rows.iter().all(|r| (-1.0..=1.0).contains(&r.corr)));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ablation.csv");
    save_ablation_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().next().unwrap(), ABLATION_HEADER);
    assert!(text.lines().nth(2).unwrap().starts_with("no,hard,,"));
}
