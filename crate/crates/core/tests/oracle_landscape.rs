use shapeflow_core::geometry::sdf_grid;
use shapeflow_core::oracle::{synth_flow, OracleConfig};
use shapeflow_core::stages::{CropStage, WindowPlacement};
use shapeflow_core::{DesignParams, GridSpec};

const WINDOW: [usize; 3] = [40, 20, 20];

fn desk_grid() -> GridSpec {
    GridSpec::new([-7.0, -5.25, -5.25], [0.35; 3], [50, 31, 31]).unwrap()
}

fn mean_ux(d: &DesignParams) -> f64 {
    let spec = desk_grid();
    let full = sdf_grid(d, &spec);
    let origin = CropStage::new(spec, WINDOW, WindowPlacement::Centered)
        .unwrap()
        .origin_for(full.values())
        .unwrap();
    let w = synth_flow(&full, &OracleConfig::default())
        .crop(origin, WINDOW)
        .unwrap();
    w.values().iter().map(|v| v[0]).sum::<f64>() / w.values().len() as f64
}

#[test]
fn smaller_radii_are_faster() {
    for l in [2.0, 3.5, 5.0] {
        for t in [0.0, 0.3] {
            let big = mean_ux(&DesignParams::new(1.4, 1.0, l, [0.0, 0.0, t]));
            let small = mean_ux(&DesignParams::new(1.0, 1.0, l, [0.0, 0.0, t]));
            assert!(small > big, "r_a at L {l}, theta {t}: {small} vs {big}");
            let big = mean_ux(&DesignParams::new(1.0, 1.4, l, [0.0, 0.0, t]));
            assert!(small > big, "r_b at L {l}, theta {t}: {small} vs {big}");
        }
    }
}

fn window_mean(d: &DesignParams, origin: [usize; 3]) -> f64 {
    let full = sdf_grid(d, &desk_grid());
    let w = synth_flow(&full, &OracleConfig::default())
        .crop(origin, WINDOW)
        .unwrap();
    w.values().iter().map(|v| v[0]).sum::<f64>() / w.values().len() as f64
}

/// With the window held where the aligned design puts it, turning a short
/// body away from the flow lowers the mean velocity. Long turned bodies
/// start to leave the window, which raises the mean.
#[test]
fn alignment_maximizes_mean_velocity_in_a_fixed_window() {
    let spec = desk_grid();
    let crop = CropStage::new(spec, WINDOW, WindowPlacement::Centered).unwrap();
    for r in [0.5, 0.75, 1.0] {
        for l in [2.0, 3.5] {
            let level = DesignParams::new(r, r, l, [0.0; 3]);
            let origin = crop.origin_for(sdf_grid(&level, &spec).values()).unwrap();
            let aligned = window_mean(&level, origin);
            for sign in [-1.0, 1.0] {
                let mut previous = aligned;
                for step in 1..=5 {
                    let t = sign * 0.1 * step as f64;
                    let turned = window_mean(&DesignParams::new(r, r, l, [0.0, 0.0, t]), origin);
                    assert!(turned < previous, "r {r}, L {l}, theta {t}: {turned} vs {previous}");
                    previous = turned;
                }
            }
        }
    }
}

/// The re-centered window jumps by whole nodes, which perturbs the mean by
/// a few hundredths; a quarter turn or more still loses to alignment.
#[test]
fn alignment_beats_large_turns_in_the_centered_window() {
    for r in [0.5, 1.0, 1.5] {
        for l in [2.0, 3.5, 5.0] {
            let aligned = mean_ux(&DesignParams::new(r, r, l, [0.0; 3]));
            for t in [-0.5, -0.3, 0.3, 0.5] {
                let turned = mean_ux(&DesignParams::new(r, r, l, [0.0, 0.0, t]));
                assert!(turned < aligned, "r {r}, L {l}, theta {t}: {turned} vs {aligned}");
            }
        }
    }
}
