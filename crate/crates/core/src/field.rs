//! Regular-grid field containers.
//!
//! Node `(i, j, k)` sits at `origin + (i, j, k) * spacing` and is stored at
//! flat index `i + nx * (j + ny * k)`: x varies fastest, then y, then z.
//! Every file format and tensor layout in the workspace uses this order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const AXES: [char; 3] = ['x', 'y', 'z'];

/// Geometry of a regular grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: [f64; 3], spacing: [f64; 3], dims: [usize; 3]) -> Result<Self> {
        let spec = GridSpec { origin, spacing, dims };
        spec.validate()?;
        Ok(spec)
    }

    /// Cubic grid with `n` nodes per axis spanning `[lo, hi]` on every axis.
    pub fn cube(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Grid(format!("need at least 2 nodes per axis, got {n}")));
        }
        let h = (hi - lo) / (n - 1) as f64;
        GridSpec::new([lo; 3], [h; 3], [n; 3])
    }

    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.spacing[a] > 0.0 && self.spacing[a].is_finite()) {
                return Err(Error::Grid(format!(
                    "spacing on axis {} must be positive and finite, got {}",
                    AXES[a], self.spacing[a]
                )));
            }
            if !self.origin[a].is_finite() {
                return Err(Error::Grid(format!("origin on axis {} is not finite", AXES[a])));
            }
            if self.dims[a] < 2 {
                return Err(Error::Grid(format!(
                    "dims on axis {} must be >= 2, got {}",
                    AXES[a], self.dims[a]
                )));
            }
        }
        self.dims[0]
            .checked_mul(self.dims[1])
            .and_then(|v| v.checked_mul(self.dims[2]))
            .ok_or_else(|| Error::Grid(format!("node count overflows for dims {:?}", self.dims)))?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn unravel(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    #[inline]
    pub fn position(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    /// Upper corner of the bounding box.
    pub fn extent_max(&self) -> [f64; 3] {
        self.position(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    /// Spec of the window starting at node `origin` with `dims` nodes.
    pub fn window(&self, origin: [usize; 3], dims: [usize; 3]) -> Result<GridSpec> {
        for a in 0..3 {
            if dims[a] < 2 || origin[a] + dims[a] > self.dims[a] {
                return Err(Error::Window {
                    origin,
                    window: dims,
                    source_dims: self.dims,
                });
            }
        }
        Ok(GridSpec {
            origin: self.position(origin[0], origin[1], origin[2]),
            spacing: self.spacing,
            dims,
        })
    }

    /// Iterate over node positions in layout order.
    pub fn positions(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        (0..self.len()).map(move |idx| {
            let [i, j, k] = self.unravel(idx);
            self.position(i, j, k)
        })
    }
}

/// Values that can be blended linearly on a grid.
pub trait NodeValue: Copy + Send + Sync + 'static {
    /// Number of reals stored per node.
    const WIDTH: usize;
    fn zero() -> Self;
    fn add_scaled(self, other: Self, weight: f64) -> Self;
    fn dot(self, other: Self) -> f64;
    /// `self + t (other - self)`, returning `other` exactly at `t = 1` and
    /// `self` exactly when both ends are equal.
    fn lerp(self, other: Self, t: f64) -> Self;
    fn write_flat(self, out: &mut Vec<f64>);
    fn read_flat(src: &[f64]) -> Self;
}

impl NodeValue for f64 {
    const WIDTH: usize = 1;
    fn zero() -> Self {
        0.0
    }
    #[inline]
    fn add_scaled(self, other: Self, weight: f64) -> Self {
        self + weight * other
    }
    fn dot(self, other: Self) -> f64 {
        self * other
    }
    #[inline]
    fn lerp(self, other: Self, t: f64) -> Self {
        if t == 1.0 {
            other
        } else {
            self + t * (other - self)
        }
    }
    fn write_flat(self, out: &mut Vec<f64>) {
        out.push(self);
    }
    fn read_flat(src: &[f64]) -> Self {
        src[0]
    }
}

impl NodeValue for [f64; 3] {
    const WIDTH: usize = 3;
    fn zero() -> Self {
        [0.0; 3]
    }
    #[inline]
    fn add_scaled(self, other: Self, weight: f64) -> Self {
        [
            self[0] + weight * other[0],
            self[1] + weight * other[1],
            self[2] + weight * other[2],
        ]
    }
    fn dot(self, other: Self) -> f64 {
        self[0] * other[0] + self[1] * other[1] + self[2] * other[2]
    }
    #[inline]
    fn lerp(self, other: Self, t: f64) -> Self {
        [0, 1, 2].map(|a| self[a].lerp(other[a], t))
    }
    fn write_flat(self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self);
    }
    fn read_flat(src: &[f64]) -> Self {
        [src[0], src[1], src[2]]
    }
}

/// Values of type `V` on every node of a regular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field3<V> {
    spec: GridSpec,
    values: Vec<V>,
}

pub type ScalarField3 = Field3<f64>;
pub type VectorField3 = Field3<[f64; 3]>;

impl<V: NodeValue> Field3<V> {
    pub fn new(spec: GridSpec, values: Vec<V>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::Length {
                context: "field values".into(),
                expected: spec.len(),
                actual: values.len(),
            });
        }
        Ok(Field3 { spec, values })
    }

    pub fn filled(spec: GridSpec, value: V) -> Self {
        Field3 {
            values: vec![value; spec.len()],
            spec,
        }
    }

    pub fn from_fn(spec: GridSpec, mut f: impl FnMut([f64; 3]) -> V) -> Self {
        let values = spec.positions().map(&mut f).collect();
        Field3 { spec, values }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[V] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [V] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<V> {
        self.values
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> V {
        self.values[self.spec.index(i, j, k)]
    }

    /// Node values flattened to reals (`V::WIDTH` per node, layout order).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len() * V::WIDTH);
        for v in &self.values {
            v.write_flat(&mut out);
        }
        out
    }

    pub fn from_flat(spec: GridSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != spec.len() * V::WIDTH {
            return Err(Error::Length {
                context: "flattened field".into(),
                expected: spec.len() * V::WIDTH,
                actual: flat.len(),
            });
        }
        let values = flat.chunks_exact(V::WIDTH).map(V::read_flat).collect();
        Field3::new(spec, values)
    }

    /// Trilinear blend of the eight nodes surrounding `point`.
    ///
    /// Points outside the bounding box are rejected rather than clamped.
    pub fn sample(&self, point: [f64; 3]) -> Result<V> {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let n = self.spec.dims[a];
            let t = (point[a] - self.spec.origin[a]) / self.spec.spacing[a];
            let top = (n - 1) as f64;
            // Allow a few ulps of slack so the upper face stays reachable.
            if !(t >= -1e-12 && t <= top * (1.0 + 1e-12) + 1e-12) {
                return Err(Error::OutOfBounds {
                    axis: AXES[a],
                    value: point[a],
                    lo: self.spec.origin[a],
                    hi: self.spec.origin[a] + top * self.spec.spacing[a],
                });
            }
            let t = t.clamp(0.0, top);
            let i0 = (t.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = t - i0 as f64;
        }
        // Nested linear blends along x, then y, then z.
        let [i, j, k] = base;
        let [fx, fy, fz] = frac;
        let row = |jj: usize, kk: usize| self.at(i, jj, kk).lerp(self.at(i + 1, jj, kk), fx);
        let plane = |kk: usize| row(j, kk).lerp(row(j + 1, kk), fy);
        let acc = plane(k).lerp(plane(k + 1), fz);
        Ok(acc)
    }

    /// Copy of the sub-block starting at node `origin` with `dims` nodes.
    pub fn crop(&self, origin: [usize; 3], dims: [usize; 3]) -> Result<Self> {
        let spec = self.spec.window(origin, dims)?;
        let mut values = Vec::with_capacity(spec.len());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                let start = self.spec.index(origin[0], origin[1] + j, origin[2] + k);
                values.extend_from_slice(&self.values[start..start + dims[0]]);
            }
        }
        Ok(Field3 { spec, values })
    }

    pub fn inner(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a.dot(*b)).sum()
    }
}

/// Adjoint of [`Field3::crop`]: scatter window cotangents into a zero field of
/// the source shape.
pub fn crop_vjp<V: NodeValue>(source: &GridSpec, origin: [usize; 3], cotangent: &Field3<V>) -> Result<Field3<V>> {
    let dims = cotangent.spec.dims;
    source.window(origin, dims)?;
    let mut out = Field3::filled(*source, V::zero());
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            let dst = source.index(origin[0], origin[1] + j, origin[2] + k);
            let src = cotangent.spec.index(0, j, k);
            out.values[dst..dst + dims[0]].copy_from_slice(&cotangent.values[src..src + dims[0]]);
        }
    }
    Ok(out)
}

/// Centroid of the nodes with negative value, or `None` when there are none.
pub fn negative_centroid(field: &ScalarField3) -> Option<[f64; 3]> {
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for (idx, &v) in field.values.iter().enumerate() {
        if v < 0.0 {
            let [i, j, k] = field.spec.unravel(idx);
            let p = field.spec.position(i, j, k);
            for a in 0..3 {
                sum[a] += p[a];
            }
            count += 1;
        }
    }
    (count > 0).then(|| sum.map(|s| s / count as f64))
}

/// Origin (node indices) of a `dims` window centered on the negative region
/// of `sdf`, quantized to the nearest node and shifted to stay inside the
/// grid. An all-positive field centers the window on the grid.
pub fn centered_window(sdf: &ScalarField3, dims: [usize; 3]) -> Result<[usize; 3]> {
    let spec = sdf.spec;
    for a in 0..3 {
        if dims[a] < 2 || dims[a] > spec.dims[a] {
            return Err(Error::Window {
                origin: [0; 3],
                window: dims,
                source_dims: spec.dims,
            });
        }
    }
    let center = negative_centroid(sdf);
    let mut origin = [0usize; 3];
    for a in 0..3 {
        let c = match center {
            Some(c) => ((c[a] - spec.origin[a]) / spec.spacing[a]).round() as i64,
            None => (spec.dims[a] / 2) as i64,
        };
        let lo = c - (dims[a] / 2) as i64;
        origin[a] = lo.clamp(0, (spec.dims[a] - dims[a]) as i64) as usize;
    }
    Ok(origin)
}
