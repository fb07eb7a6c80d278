//! Round-cone geometry: the convex hull of two spheres, rotated in space.
//!
//! In the body frame sphere A (radius `r_a`) is centered at the origin and
//! sphere B (radius `r_b`) at `(L, 0, 0)`. The body is turned into world
//! coordinates by intrinsic rotations about the body X, then Y, then Z axes,
//! i.e. `p_world = Rx(theta_x) * Ry(theta_y) * Rz(theta_z) * p_body`, with
//! rotation about the origin. Data generation and optimization both use
//! this convention.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{check_len, DiffComponent, Port};
use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField3};
use crate::format::format_sig;

pub const PARAM_NAMES: [&str; 6] = ["r_a", "r_b", "L", "theta_x", "theta_y", "theta_z"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignParams {
    pub r_a: f64,
    pub r_b: f64,
    #[serde(rename = "L")]
    pub length: f64,
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_z: f64,
}

impl DesignParams {
    pub fn new(r_a: f64, r_b: f64, length: f64, angles: [f64; 3]) -> Self {
        DesignParams {
            r_a,
            r_b,
            length,
            theta_x: angles[0],
            theta_y: angles[1],
            theta_z: angles[2],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.r_a,
            self.r_b,
            self.length,
            self.theta_x,
            self.theta_y,
            self.theta_z,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        check_len("design vector", 6, v.len())?;
        Ok(DesignParams::new(v[0], v[1], v[2], [v[3], v[4], v[5]]))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.to_array().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("design {self:?}")));
        }
        if !(self.r_a > 0.0 && self.r_b > 0.0 && self.length >= 0.0) {
            return Err(Error::Config(format!(
                "design needs r_a > 0, r_b > 0, L >= 0; got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn angles(&self) -> [f64; 3] {
        [self.theta_x, self.theta_y, self.theta_z]
    }
}

type Mat3 = [[f64; 3]; 3];

fn matmul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn rx(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

fn ry(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn rz(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

fn drx(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]]
}

fn dry(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]]
}

fn drz(t: f64) -> Mat3 {
    let (s, c) = t.sin_cos();
    [[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]]
}

/// Body-to-world rotation for Euler angles `[theta_x, theta_y, theta_z]`.
pub fn rotation(angles: [f64; 3]) -> Mat3 {
    matmul(&matmul(&rx(angles[0]), &ry(angles[1])), &rz(angles[2]))
}

fn rotation_partials(angles: [f64; 3]) -> [Mat3; 3] {
    let (a, b, c) = (angles[0], angles[1], angles[2]);
    [
        matmul(&matmul(&drx(a), &ry(b)), &rz(c)),
        matmul(&matmul(&rx(a), &dry(b)), &rz(c)),
        matmul(&matmul(&rx(a), &ry(b)), &drz(c)),
    ]
}

pub fn apply(m: &Mat3, p: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * p[0] + m[i][1] * p[1] + m[i][2] * p[2])
}

fn apply_transpose(m: &Mat3, p: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[0][i] * p[0] + m[1][i] * p[1] + m[2][i] * p[2])
}

fn norm(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Signed distance with its derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfEval {
    pub value: f64,
    /// d/d(r_a, r_b, L, theta_x, theta_y, theta_z).
    pub d_params: [f64; 6],
    /// d/d(world point).
    pub d_point: [f64; 3],
}

/// Which part of the surface the nearest point lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    CapA,
    CapB,
    Lateral,
}

/// Distance in the body frame: value, d/d(r_a, r_b, L), d/d(body point).
fn body_sdf(r_a: f64, r_b: f64, length: f64, q: [f64; 3]) -> (f64, [f64; 3], [f64; 3], Region) {
    let (x, y, z) = (q[0], q[1], q[2]);
    let rho = (y * y + z * z).sqrt();
    let radial = |scale: f64| {
        if rho > 0.0 {
            [scale * y / rho, scale * z / rho]
        } else {
            [0.0, 0.0]
        }
    };
    let cap_a = || {
        let d = norm(q);
        let g = if d > 0.0 { [x / d, y / d, z / d] } else { [0.0; 3] };
        (d - r_a, [-1.0, 0.0, 0.0], g, Region::CapA)
    };
    let cap_b = || {
        let w = [x - length, y, z];
        let d = norm(w);
        let g = if d > 0.0 {
            [w[0] / d, w[1] / d, w[2] / d]
        } else {
            [0.0; 3]
        };
        // d|q - (L,0,0)|/dL = -(x - L)/d
        (d - r_b, [0.0, -1.0, -g[0]], g, Region::CapB)
    };

    // One sphere swallows the other: the hull is the larger sphere.
    if length + r_b <= r_a {
        return cap_a();
    }
    if length + r_a <= r_b {
        return cap_b();
    }

    // Lateral half-line tangent to both spheres: its outward normal in the
    // (x, rho) half-plane is (b, a) with b = (r_a - r_b)/L, a = sqrt(1 - b^2).
    let b = (r_a - r_b) / length;
    let a = (1.0 - b * b).sqrt();
    let k = a * x - b * rho;
    if k < 0.0 {
        return cap_a();
    }
    if k > a * length {
        return cap_b();
    }
    let value = b * x + a * rho - r_a;
    // d value / d b with a = sqrt(1 - b^2)
    let dvdb = x - rho * b / a;
    let d_shape = [dvdb / length - 1.0, -dvdb / length, -dvdb * b / length];
    let [gy, gz] = radial(a);
    (value, d_shape, [b, gy, gz], Region::Lateral)
}

pub fn sdf_point(params: &DesignParams, point: [f64; 3]) -> f64 {
    let r = rotation(params.angles());
    body_sdf(params.r_a, params.r_b, params.length, apply_transpose(&r, point)).0
}

/// Region that determines the distance at `point` (ties go to the lateral
/// branch).
pub fn sdf_region(params: &DesignParams, point: [f64; 3]) -> Region {
    let r = rotation(params.angles());
    body_sdf(params.r_a, params.r_b, params.length, apply_transpose(&r, point)).3
}

struct Frame {
    rot: Mat3,
    partials: [Mat3; 3],
}

impl Frame {
    fn new(params: &DesignParams) -> Self {
        Frame {
            rot: rotation(params.angles()),
            partials: rotation_partials(params.angles()),
        }
    }

    fn eval(&self, params: &DesignParams, point: [f64; 3]) -> SdfEval {
        let q = apply_transpose(&self.rot, point);
        let (value, d_shape, g_body, _) = body_sdf(params.r_a, params.r_b, params.length, q);
        // q = R^T p, so dq/dtheta_i = (dR/dtheta_i)^T p and df/dp = R g.
        let d_angle = self.partials.map(|dr| {
            let dq = apply_transpose(&dr, point);
            g_body[0] * dq[0] + g_body[1] * dq[1] + g_body[2] * dq[2]
        });
        SdfEval {
            value,
            d_params: [d_shape[0], d_shape[1], d_shape[2], d_angle[0], d_angle[1], d_angle[2]],
            d_point: apply(&self.rot, g_body),
        }
    }
}

/// Signed distance plus analytic derivatives at one point.
pub fn sdf_eval(params: &DesignParams, point: [f64; 3]) -> SdfEval {
    Frame::new(params).eval(params, point)
}

pub fn sdf_grid(params: &DesignParams, spec: &GridSpec) -> ScalarField3 {
    let r = rotation(params.angles());
    ScalarField3::from_fn(*spec, |p| {
        body_sdf(params.r_a, params.r_b, params.length, apply_transpose(&r, p)).0
    })
}

/// Gradient of `⟨cotangent, sdf_grid(params)⟩` with respect to the six
/// design parameters.
pub fn sdf_grid_vjp(params: &DesignParams, spec: &GridSpec, cotangent: &[f64]) -> Result<[f64; 6]> {
    check_len("sdf_grid cotangent", spec.len(), cotangent.len())?;
    let frame = Frame::new(params);
    let mut acc = [0.0; 6];
    for (p, &c) in spec.positions().zip(cotangent) {
        if c == 0.0 {
            continue;
        }
        let e = frame.eval(params, p);
        for i in 0..6 {
            acc[i] += c * e.d_params[i];
        }
    }
    Ok(acc)
}

/// `sdf_grid` as a pipeline stage: 6 design parameters to an SDF grid.
#[derive(Debug, Clone)]
pub struct SdfGridStage {
    spec: GridSpec,
}

impl SdfGridStage {
    pub fn new(spec: GridSpec) -> Self {
        SdfGridStage { spec }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
}

impl DiffComponent for SdfGridStage {
    fn name(&self) -> &str {
        "geometry"
    }
    fn input_shape(&self) -> Port {
        Port::Vector(6)
    }
    fn output_shape(&self) -> Port {
        Port::Scalar(self.spec.dims)
    }
    fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let params = DesignParams::from_slice(input)?;
        params.validate()?;
        Ok(sdf_grid(&params, &self.spec).into_values())
    }
    fn vjp(&self, input: &[f64], cotangent: &[f64]) -> Result<Vec<f64>> {
        let params = DesignParams::from_slice(input)?;
        params.validate()?;
        Ok(sdf_grid_vjp(&params, &self.spec, cotangent)?.to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Which Euler angle is sampled during data generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreeAngle {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingRanges {
    pub r_a: Interval,
    pub r_b: Interval,
    #[serde(rename = "L")]
    pub length: Interval,
    pub theta_x: Interval,
    pub theta_y: Interval,
    pub theta_z: Interval,
    pub seed: u64,
}

impl SamplingRanges {
    /// Radii in [0.5, 1.5], length in [2, 5], the free angle in [-0.5, 0.5]
    /// and the other two angles fixed at zero.
    pub fn paper(free: FreeAngle, seed: u64) -> Self {
        let angle = |axis| {
            if axis == free {
                Interval::new(-0.5, 0.5)
            } else {
                Interval::point(0.0)
            }
        };
        SamplingRanges {
            r_a: Interval::new(0.5, 1.5),
            r_b: Interval::new(0.5, 1.5),
            length: Interval::new(2.0, 5.0),
            theta_x: angle(FreeAngle::X),
            theta_y: angle(FreeAngle::Y),
            theta_z: angle(FreeAngle::Z),
            seed,
        }
    }

    pub fn intervals(&self) -> [Interval; 6] {
        [
            self.r_a,
            self.r_b,
            self.length,
            self.theta_x,
            self.theta_y,
            self.theta_z,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, iv) in PARAM_NAMES.iter().zip(self.intervals()) {
            if !(iv.lo.is_finite() && iv.hi.is_finite() && iv.lo <= iv.hi) {
                return Err(Error::Config(format!(
                    "sampling interval for {name} must satisfy lo <= hi, got [{}, {}]",
                    iv.lo, iv.hi
                )));
            }
        }
        Ok(())
    }
}

/// Independent uniform draws for every parameter, deterministic in the seed.
pub fn sample_designs(ranges: &SamplingRanges, count: usize) -> Result<Vec<DesignParams>> {
    ranges.validate()?;
    if count == 0 {
        return Err(Error::Config("design count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ranges.seed);
    let ivs = ranges.intervals();
    Ok((0..count)
        .map(|_| {
            let v = ivs.map(|iv| {
                let u: f64 = rng.gen();
                iv.lo + u * (iv.hi - iv.lo)
            });
            DesignParams::new(v[0], v[1], v[2], [v[3], v[4], v[5]])
        })
        .collect())
}

pub const DESIGN_CSV_HEADER: &str = "r_a,r_b,L,theta_x,theta_y,theta_z";

pub fn write_designs_csv<W: Write>(mut out: W, designs: &[DesignParams]) -> std::io::Result<()> {
    writeln!(out, "{DESIGN_CSV_HEADER}")?;
    for d in designs {
        let row: Vec<String> = d.to_array().iter().map(|v| format_sig(*v, 17)).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn save_designs_csv(path: &Path, designs: &[DesignParams]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_designs_csv(&mut w, designs).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses the design CSV written by [`write_designs_csv`].
pub fn read_designs_csv<R: Read>(input: R) -> Result<Vec<DesignParams>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = reader.headers().map_err(|e| Error::parse(0, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != PARAM_NAMES {
        return Err(Error::parse(0, format!("expected header `{DESIGN_CSV_HEADER}`")));
    }
    let mut designs = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let offset = e.position().map(|p| p.byte() as usize).unwrap_or(0);
            Error::parse(offset, e.to_string())
        })?;
        let offset = record.position().map(|p| p.byte() as usize).unwrap_or(0);
        if record.len() != 6 {
            return Err(Error::parse(offset, format!("expected 6 fields, got {}", record.len())));
        }
        let mut v = [0.0; 6];
        for (slot, field) in v.iter_mut().zip(record.iter()) {
            *slot = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(offset, format!("not a number: `{field}`")))?;
        }
        designs.push(DesignParams::new(v[0], v[1], v[2], [v[3], v[4], v[5]]));
    }
    Ok(designs)
}

pub fn load_designs_csv(path: &Path) -> Result<Vec<DesignParams>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_designs_csv(std::io::BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cone() -> DesignParams {
        DesignParams::new(1.0, 0.5, 3.0, [0.0; 3])
    }

    #[test]
    fn degenerate_sphere_center_depth() {
        let p = DesignParams::new(1.0, 1.0, 0.0, [0.0; 3]);
        assert_eq!(sdf_point(&p, [0.0; 3]), -1.0);
    }

    #[test]
    fn on_axis_beyond_tip() {
        assert!((sdf_point(&cone(), [3.0 + 0.5 + 2.0, 0.0, 0.0]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn lateral_region_closed_form() {
        // Tangent direction of the lateral line, point offset along its normal.
        let (ra, rb, l) = (1.0f64, 0.5, 3.0);
        let b = (ra - rb) / l;
        let a = (1.0 - b * b).sqrt();
        let foot = [ra * b + 1.2 * a, ra * a - 1.2 * b];
        let p = [foot[0] + 0.3 * b, foot[1] + 0.3 * a, 0.0];
        let d = sdf_point(&cone(), p);
        assert!((d - 0.3).abs() < 1e-12, "{d}");
        assert_eq!(sdf_region(&cone(), p), Region::Lateral);
    }

    #[test]
    fn sphere_grid_values() {
        let p = DesignParams::new(0.8, 0.8, 0.0, [0.0; 3]);
        let spec = GridSpec::cube(-1.0, 1.0, 3).unwrap();
        let f = sdf_grid(&p, &spec);
        assert_eq!(f.values().len(), 27);
        for (v, q) in f.values().iter().zip(spec.positions()) {
            assert!((v - (norm(q) - 0.8)).abs() < 1e-15);
        }
    }

    #[test]
    fn center_derivative_wrt_base_radius() {
        let e = sdf_eval(&cone(), [0.0; 3]);
        assert_eq!(e.d_params[0], -1.0);
        let mut bigger = cone();
        bigger.r_a += 0.1;
        assert!((sdf_point(&bigger, [0.0; 3]) - (sdf_point(&cone(), [0.0; 3]) - 0.1)).abs() < 1e-15);
    }

    #[test]
    fn contained_sphere_reduces_to_larger_one() {
        let p = DesignParams::new(2.0, 0.5, 1.0, [0.0; 3]);
        assert!((sdf_point(&p, [0.0, 3.0, 0.0]) - 1.0).abs() < 1e-15);
        let q = DesignParams::new(0.5, 3.0, 1.0, [0.0; 3]);
        assert!((sdf_point(&q, [1.0, 4.0, 0.0]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sampling_respects_ranges_and_seed() {
        let ranges = SamplingRanges::paper(FreeAngle::Z, 7);
        let designs = sample_designs(&ranges, 1000).unwrap();
        assert_eq!(designs.len(), 1000);
        for d in &designs {
            for (iv, v) in ranges.intervals().iter().zip(d.to_array()) {
                assert!(iv.contains(v));
            }
            assert_eq!((d.theta_x, d.theta_y), (0.0, 0.0));
        }
        assert_eq!(designs, sample_designs(&ranges, 1000).unwrap());
        let spread = designs.iter().map(|d| d.theta_z).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(spread > 0.45);
    }

    #[test]
    fn degenerate_interval_is_constant() {
        let mut ranges = SamplingRanges::paper(FreeAngle::Y, 1);
        ranges.length = Interval::point(3.25);
        for d in sample_designs(&ranges, 50).unwrap() {
            assert_eq!(d.length, 3.25);
            assert_eq!(d.theta_z, 0.0);
        }
        assert!(sample_designs(&ranges, 0).is_err());
        ranges.r_a = Interval::new(1.0, 0.5);
        assert!(sample_designs(&ranges, 1).is_err());
    }

    #[test]
    fn design_csv_round_trip() {
        let designs = sample_designs(&SamplingRanges::paper(FreeAngle::Z, 3), 5).unwrap();
        let mut buf = Vec::new();
        write_designs_csv(&mut buf, &designs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("r_a,r_b,L,theta_x,theta_y,theta_z\n"));
        assert_eq!(read_designs_csv(&buf[..]).unwrap(), designs);
        assert!(read_designs_csv(&b"a,b\n1,2\n"[..]).is_err());
        assert!(read_designs_csv(&b"r_a,r_b,L,theta_x,theta_y,theta_z\n1,2,x,0,0,0\n"[..]).is_err());
    }

    #[test]
    fn stage_vjp_matches_finite_differences() {
        use crate::diff::{check_vjp, GradCheckOptions};
        let spec = GridSpec::new([-2.1, -2.3, -1.9], [0.37, 0.41, 0.43], [17, 12, 10]).unwrap();
        let stage = SdfGridStage::new(spec);
        let x = [1.1, 0.7, 2.6, 0.2, -0.15, 0.35];
        let cot: Vec<f64> = (0..spec.len()).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4).collect();
        let report = check_vjp(
            &stage,
            &x,
            &cot,
            &[0, 1, 2, 3, 4, 5],
            GradCheckOptions {
                step: 1e-5,
                floor: 1e-8,
            },
        )
        .unwrap();
        assert!(report.passes(1e-6), "{report:?}");
    }

    fn design() -> impl Strategy<Value = DesignParams> {
        (
            0.3f64..1.6,
            0.3f64..1.6,
            0.0f64..5.0,
            prop::array::uniform3(-1.0f64..1.0),
        )
            .prop_map(|(a, b, l, t)| DesignParams::new(a, b, l, t))
    }

    proptest! {
        #[test]
        fn lipschitz_one(d in design(), p in prop::array::uniform3(-6.0f64..6.0), q in prop::array::uniform3(-6.0f64..6.0)) {
            let gap = (sdf_point(&d, p) - sdf_point(&d, q)).abs();
            let dist = norm([p[0] - q[0], p[1] - q[1], p[2] - q[2]]);
            prop_assert!(gap <= dist * (1.0 + 1e-12) + 1e-12);
        }

        #[test]
        fn rotation_identity(d in design(), p in prop::array::uniform3(-6.0f64..6.0)) {
            let upright = DesignParams { theta_x: 0.0, theta_y: 0.0, theta_z: 0.0, ..d };
            let world = apply(&rotation(d.angles()), p);
            prop_assert!((sdf_point(&d, world) - sdf_point(&upright, p)).abs() < 1e-12);
        }

        #[test]
        fn axial_symmetry(d in design(), p in prop::array::uniform3(-6.0f64..6.0), phi in -3.2f64..3.2) {
            let upright = DesignParams { theta_x: 0.0, theta_y: 0.0, theta_z: 0.0, ..d };
            let base = sdf_point(&upright, p);
            prop_assert!((sdf_point(&upright, [p[0], -p[1], -p[2]]) - base).abs() < 1e-12);
            let turned = apply(&rx(phi), p);
            prop_assert!((sdf_point(&upright, turned) - base).abs() < 1e-12);
        }

        #[test]
        fn monotone_in_radii(d in design(), p in prop::array::uniform3(-6.0f64..6.0), dr in 0.0f64..0.5) {
            let base = sdf_point(&d, p);
            let a = DesignParams { r_a: d.r_a + dr, ..d };
            let b = DesignParams { r_b: d.r_b + dr, ..d };
            prop_assert!(sdf_point(&a, p) <= base + 1e-12);
            prop_assert!(sdf_point(&b, p) <= base + 1e-12);
        }

        #[test]
        fn point_gradient_is_unit_and_matches_fd(d in design(), p in prop::array::uniform3(-6.0f64..6.0)) {
            // Outside a convex body the distance is C1, so central differences apply.
            let e = sdf_eval(&d, p);
            prop_assume!(e.value > 0.05);
            prop_assert!((norm(e.d_point) - 1.0).abs() < 1e-9);
            let h = 1e-6;
            for a in 0..3 {
                let mut up = p; up[a] += h;
                let mut dn = p; dn[a] -= h;
                let fd = (sdf_point(&d, up) - sdf_point(&d, dn)) / (2.0 * h);
                prop_assert!((fd - e.d_point[a]).abs() < 1e-6, "axis {} fd {} analytic {}", a, fd, e.d_point[a]);
            }
        }
    }
}
