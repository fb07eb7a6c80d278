//! Correlation between the spatial gradient of the prediction error and the
//! predicted speed.

use shapeflow_core::{GridSpec, VectorField3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corr {
    pub value: f64,
    /// Set when either series has zero variance; `value` is then 0.
    pub degenerate: bool,
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<Corr> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "series lengths differ: {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Ok(Corr {
            value: 0.0,
            degenerate: true,
        });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Ok(Corr {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Corr {
        value: (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// `|∇s|` by forward differences, backward at the last node of each axis;
/// an axis with one node contributes nothing.
pub fn gradient_magnitude(spec: &GridSpec, s: &[f64]) -> Vec<f64> {
    let d = spec.dims;
    let mut out = vec![0.0; s.len()];
    for k in 0..d[2] {
        for j in 0..d[1] {
            for i in 0..d[0] {
                let idx = [i, j, k];
                let mut g2 = 0.0;
                for axis in 0..3 {
                    if d[axis] < 2 {
                        continue;
                    }
                    let (mut lo, mut hi) = (idx, idx);
                    if idx[axis] + 1 < d[axis] {
                        hi[axis] += 1;
                    } else {
                        lo[axis] -= 1;
                    }
                    let g =
                        (s[spec.index(hi[0], hi[1], hi[2])] - s[spec.index(lo[0], lo[1], lo[2])]) / spec.spacing[axis];
                    g2 += g * g;
                }
                out[spec.index(i, j, k)] = g2.sqrt();
            }
        }
    }
    out
}

/// `(|∇ε|, |pred|)` per node with `ε = |target − pred|`.
pub fn error_gradient_series(pred: &VectorField3, target: &VectorField3) -> Result<(Vec<f64>, Vec<f64>)> {
    if pred.spec().dims != target.spec().dims {
        return Err(Error::Config(format!(
            "prediction dims {:?} differ from target dims {:?}",
            pred.spec().dims,
            target.spec().dims
        )));
    }
    let eps: Vec<f64> = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, t)| norm([t[0] - p[0], t[1] - p[1], t[2] - p[2]]))
        .collect();
    let grad = gradient_magnitude(pred.spec(), &eps);
    let speed = pred.values().iter().map(|p| norm(*p)).collect();
    Ok((grad, speed))
}

pub fn error_gradient_corr(pred: &VectorField3, target: &VectorField3) -> Result<Corr> {
    let (g, s) = error_gradient_series(pred, target)?;
    pearson(&g, &s)
}

/// One correlation over the nodes of all pairs together.
pub fn pooled_error_gradient_corr<'a>(
    pairs: impl IntoIterator<Item = (&'a VectorField3, &'a VectorField3)>,
) -> Result<Corr> {
    let (mut g, mut s) = (Vec::new(), Vec::new());
    for (p, t) in pairs {
        let (gi, si) = error_gradient_series(p, t)?;
        g.extend(gi);
        s.extend(si);
    }
    pearson(&g, &s)
}
