//! Triangle surface meshes: marching-cubes extraction, Laplacian smoothing
//! and OBJ / binary STL encodings.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::field::ScalarField3;
use crate::format::format_sig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn length(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Checks index ranges and rejects triangles that repeat a vertex.
    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= n) {
                return Err(Error::Config(format!("triangle {t} indexes past {n} vertices")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::Config(format!("triangle {t} is degenerate: {tri:?}")));
            }
        }
        Ok(())
    }

    /// Undirected edges with the number of triangles using each.
    fn edge_counts(&self) -> HashMap<(usize, usize), (usize, usize)> {
        let mut counts: HashMap<(usize, usize), (usize, usize)> = HashMap::new();
        for tri in &self.triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                let entry = counts.entry((a.min(b), a.max(b))).or_default();
                if a < b {
                    entry.0 += 1;
                } else {
                    entry.1 += 1;
                }
            }
        }
        counts
    }

    /// Every edge is shared by exactly two triangles that traverse it in
    /// opposite directions (closed, consistently oriented surface).
    pub fn is_watertight(&self) -> bool {
        !self.triangles.is_empty() && self.edge_counts().values().all(|&(f, b)| f == 1 && b == 1)
    }

    pub fn edge_count(&self) -> usize {
        self.edge_counts().len()
    }

    /// `V - E + F`, counting only vertices referenced by a triangle.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for tri in &self.triangles {
            for &i in tri {
                used[i] = true;
            }
        }
        let v = used.iter().filter(|u| **u).count() as i64;
        v - self.edge_count() as i64 + self.triangles.len() as i64
    }

    pub fn face_normal(&self, t: usize) -> [f64; 3] {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        cross(sub(b, a), sub(c, a))
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| 0.5 * length(self.face_normal(t)))
            .sum()
    }

    /// Signed enclosed volume (positive for outward-facing normals).
    pub fn volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|tri| {
                let [a, b, c] = tri.map(|i| self.vertices[i]);
                let n = cross(b, c);
                (a[0] * n[0] + a[1] * n[1] + a[2] * n[2]) / 6.0
            })
            .sum()
    }

    /// Unique neighbours of every vertex through triangle edges.
    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for tri in &self.triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                adj[a].push(b);
                adj[b].push(a);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}

// Corner c of a cell sits at offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
// Edge 4a + m joins the m-th corner with bit a clear to its neighbour along a.
fn edge_corners(edge: usize) -> (usize, usize) {
    let axis = edge / 4;
    let m = edge % 4;
    // Insert a zero bit at position `axis` into the 2-bit counter m.
    let low = m & ((1 << axis) - 1);
    let high = (m >> axis) << (axis + 1);
    let c0 = high | low;
    (c0, c0 | (1 << axis))
}

fn edge_between(a: usize, b: usize) -> usize {
    let diff = a ^ b;
    debug_assert!(diff.count_ones() == 1);
    let axis = diff.trailing_zeros() as usize;
    (0..4)
        .map(|m| axis * 4 + m)
        .find(|&e| edge_corners(e) == (a.min(b), a.max(b)))
        .expect("cube edge")
}

/// Corners of each cell face in counter-clockwise order seen from outside.
fn face_cycles() -> [[usize; 4]; 6] {
    let mut faces = [[0usize; 4]; 6];
    for axis in 0..3 {
        let u = (axis + 1) % 3;
        let w = (axis + 2) % 3;
        for side in 0..2 {
            let corner = |cu: usize, cw: usize| (side << axis) | (cu << u) | (cw << w);
            // (u, w) is right-handed about +axis.
            let mut cyc = [corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)];
            if side == 0 {
                cyc.reverse();
            }
            faces[axis * 2 + side] = cyc;
        }
    }
    faces
}

/// Triangles (as cell-edge triples) for each of the 256 inside/outside
/// corner configurations. Bit c of the case index is set when corner c is
/// inside (below the iso value).
///
/// Each case is derived by tracing the polygon loops that the isosurface
/// cuts on the six faces. On a face, every run of consecutive inside corners
/// is cut off by one segment, so ambiguous faces always separate the inside
/// corners. The rule depends only on the corner signs, so neighbouring cells
/// agree on every shared face and the surface closes.
pub fn case_table() -> &'static [Vec<[u8; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[u8; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let faces = face_cycles();
        std::array::from_fn(|case| {
            let inside = |c: usize| case & (1 << c) != 0;
            let mut next = [usize::MAX; 12];
            for cyc in &faces {
                let n_in = cyc.iter().filter(|&&c| inside(c)).count();
                if n_in == 0 || n_in == 4 {
                    continue;
                }
                for s in 0..4 {
                    // Start of an inside run: outside corner followed by inside.
                    if inside(cyc[s]) || !inside(cyc[(s + 1) % 4]) {
                        continue;
                    }
                    let entry = edge_between(cyc[s], cyc[(s + 1) % 4]);
                    let mut t = (s + 1) % 4;
                    while inside(cyc[(t + 1) % 4]) {
                        t = (t + 1) % 4;
                    }
                    let exit = edge_between(cyc[t], cyc[(t + 1) % 4]);
                    // Directed entry -> exit; with corners ordered as seen
                    // from outside this orients triangles toward the outside.
                    next[entry] = exit;
                }
            }
            let mut seen = [false; 12];
            let mut tris = Vec::new();
            for start in 0..12 {
                if next[start] == usize::MAX || seen[start] {
                    continue;
                }
                let mut ring = vec![start];
                seen[start] = true;
                let mut e = next[start];
                while e != start {
                    seen[e] = true;
                    ring.push(e);
                    e = next[e];
                }
                for i in 1..ring.len() - 1 {
                    tris.push([ring[0] as u8, ring[i] as u8, ring[i + 1] as u8]);
                }
            }
            tris
        })
    })
}

/// Extracts the `iso` level set of `field` as an indexed triangle mesh.
///
/// Vertices are placed on cell edges by linear interpolation and shared
/// between neighbouring cells; triangle normals point toward values above
/// `iso`. The level set must not reach the grid boundary.
pub fn marching_cubes(field: &ScalarField3, iso: f64) -> Result<TriMesh> {
    let spec = field.spec();
    let [nx, ny, nz] = spec.dims;
    let values = field.values();
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("field value {v} in marching cubes input")));
    }
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let on_boundary = i == 0 || j == 0 || k == 0 || i == nx - 1 || j == ny - 1 || k == nz - 1;
                if on_boundary && values[spec.index(i, j, k)] < iso {
                    return Err(Error::BoundaryCrossing { node: [i, j, k] });
                }
            }
        }
    }

    let table = case_table();
    let mut mesh = TriMesh::default();
    // Grid edge (lower node index, axis) -> vertex index.
    let mut welded: HashMap<usize, usize> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let node = |c: usize| spec.index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1));
                let mut case = 0usize;
                for c in 0..8 {
                    if values[node(c)] < iso {
                        case |= 1 << c;
                    }
                }
                let tris = &table[case];
                if tris.is_empty() {
                    continue;
                }
                let mut vertex_of = |edge: u8| -> usize {
                    let (c0, c1) = edge_corners(edge as usize);
                    let (n0, n1) = (node(c0), node(c1));
                    let key = n0 * 3 + edge as usize / 4;
                    *welded.entry(key).or_insert_with(|| {
                        let [a0, a1, a2] = spec.unravel(n0);
                        let [b0, b1, b2] = spec.unravel(n1);
                        let p0 = spec.position(a0, a1, a2);
                        let p1 = spec.position(b0, b1, b2);
                        let (v0, v1) = (values[n0], values[n1]);
                        let t = (iso - v0) / (v1 - v0);
                        mesh.vertices.push([0, 1, 2].map(|a| p0[a] + t * (p1[a] - p0[a])));
                        mesh.vertices.len() - 1
                    })
                };
                for tri in tris {
                    let t = [vertex_of(tri[0]), vertex_of(tri[1]), vertex_of(tri[2])];
                    mesh.triangles.push(t);
                }
            }
        }
    }
    Ok(mesh)
}

/// Moves each vertex by `lambda * (centroid of its 1-ring - vertex)`, all
/// vertices updated simultaneously, `iterations` times.
pub fn laplacian_smooth(mesh: &TriMesh, iterations: usize, lambda: f64) -> Result<TriMesh> {
    mesh.validate()?;
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Config(format!(
            "smoothing lambda must be in (0, 1], got {lambda}"
        )));
    }
    let adj = mesh.neighbours();
    let mut current = mesh.vertices.clone();
    for _ in 0..iterations {
        let next = current
            .iter()
            .zip(&adj)
            .map(|(&v, ring)| {
                if ring.is_empty() {
                    return v;
                }
                let mut c = [0.0; 3];
                for &n in ring {
                    for a in 0..3 {
                        c[a] += current[n][a];
                    }
                }
                let inv = 1.0 / ring.len() as f64;
                [0, 1, 2].map(|a| v[a] + lambda * (c[a] * inv - v[a]))
            })
            .collect();
        current = next;
    }
    Ok(TriMesh {
        vertices: current,
        triangles: mesh.triangles.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    StlBinary,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "obj" => Some(MeshFormat::Obj),
            "stl" => Some(MeshFormat::StlBinary),
            _ => None,
        }
    }
}

/// Wavefront OBJ with 9 significant digits and 1-based faces.
pub fn write_obj<W: Write>(mut out: W, mesh: &TriMesh) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(
            out,
            "v {} {} {}",
            format_sig(v[0], 9),
            format_sig(v[1], 9),
            format_sig(v[2], 9)
        )?;
    }
    for t in &mesh.triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

/// Binary STL: 80-byte header, `u32` facet count, then per facet the unit
/// normal and three vertices as little-endian `f32` and a zero `u16`.
pub fn write_stl<W: Write>(mut out: W, mesh: &TriMesh) -> std::io::Result<()> {
    let mut header = [0u8; 80];
    let tag = b"shapeflow binary STL";
    header[..tag.len()].copy_from_slice(tag);
    out.write_all(&header)?;
    out.write_all(&(mesh.triangles.len() as u32).to_le_bytes())?;
    for t in 0..mesh.triangles.len() {
        let n = mesh.face_normal(t);
        let len = length(n);
        let unit = if len > 0.0 { n.map(|c| c / len) } else { [0.0; 3] };
        for c in unit {
            out.write_all(&(c as f32).to_le_bytes())?;
        }
        for &i in &mesh.triangles[t] {
            for c in mesh.vertices[i] {
                out.write_all(&(c as f32).to_le_bytes())?;
            }
        }
        out.write_all(&0u16.to_le_bytes())?;
    }
    Ok(())
}

pub fn export_mesh(mesh: &TriMesh, path: &Path, format: MeshFormat) -> Result<()> {
    mesh.validate()?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    match format {
        MeshFormat::Obj => write_obj(&mut w, mesh),
        MeshFormat::StlBinary => write_stl(&mut w, mesh),
    }
    .and_then(|_| w.flush())
    .map_err(|e| Error::io(path, e))
}

/// Reads `v` and `f` records of an OBJ file; other records are ignored.
/// Faces with more than three corners are fan-triangulated and
/// `index/texture/normal` references use the vertex index only.
pub fn read_obj(bytes: &[u8]) -> Result<TriMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(e.valid_up_to(), "OBJ is not UTF-8"))?;
    let mut mesh = TriMesh::default();
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let here = offset;
        offset += line.len();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for slot in &mut p {
                    let tok = it
                        .next()
                        .ok_or_else(|| Error::parse(here, "vertex needs 3 coordinates"))?;
                    *slot = tok
                        .parse()
                        .map_err(|_| Error::parse(here, format!("bad coordinate `{tok}`")))?;
                }
                mesh.vertices.push(p);
            }
            Some("f") => {
                let mut idx = Vec::new();
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let i: i64 = head
                        .parse()
                        .map_err(|_| Error::parse(here, format!("bad face index `{tok}`")))?;
                    let n = mesh.vertices.len() as i64;
                    let resolved = if i > 0 { i - 1 } else { n + i };
                    if i == 0 || resolved < 0 || resolved >= n {
                        return Err(Error::parse(here, format!("face index {i} out of range")));
                    }
                    idx.push(resolved as usize);
                }
                if idx.len() < 3 {
                    return Err(Error::parse(here, "face needs at least 3 vertices"));
                }
                for i in 1..idx.len() - 1 {
                    mesh.triangles.push([idx[0], idx[i], idx[i + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

/// Reads a binary STL into an unwelded triangle soup.
pub fn read_stl(bytes: &[u8]) -> Result<TriMesh> {
    if bytes.len() < 84 {
        return Err(Error::parse(bytes.len(), "STL shorter than its 84-byte header"));
    }
    let count = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    let expected = count
        .checked_mul(50)
        .and_then(|n| n.checked_add(84))
        .ok_or_else(|| Error::parse(80, "facet count overflows"))?;
    if bytes.len() != expected {
        return Err(Error::parse(
            80,
            format!("{count} facets need {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let f = |at: usize| f32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as f64;
    let mut mesh = TriMesh::default();
    for t in 0..count {
        let base = 84 + 50 * t + 12;
        for v in 0..3 {
            let at = base + 12 * v;
            mesh.vertices.push([f(at), f(at + 4), f(at + 8)]);
        }
        mesh.triangles.push([3 * t, 3 * t + 1, 3 * t + 2]);
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::GridSpec;

    fn sphere_field(n: usize, r: f64) -> ScalarField3 {
        let spec = GridSpec::cube(-2.0, 2.0, n).unwrap();
        ScalarField3::from_fn(spec, |p| length(p) - r)
    }

    #[test]
    fn edge_numbering_is_consistent() {
        for e in 0..12 {
            let (a, b) = edge_corners(e);
            assert_eq!((a ^ b).count_ones(), 1);
            assert_eq!(edge_between(a, b), e);
            assert_eq!(edge_between(b, a), e);
        }
    }

    #[test]
    fn table_covers_all_cases() {
        let t = case_table();
        assert!(t[0].is_empty() && t[255].is_empty());
        assert_eq!(t[1].len(), 1);
        // Two inside corners on a face diagonal stay separated.
        assert_eq!(t[0b0000_1001].len(), 2);
        // Four corners of one face: a quad.
        assert_eq!(t[0b0000_1111].len(), 2);
        for (case, tris) in t.iter().enumerate() {
            let complement = &t[255 - case];
            let count = |v: &Vec<[u8; 3]>| v.iter().flatten().collect::<std::collections::BTreeSet<_>>().len();
            assert_eq!(count(tris), count(complement), "case {case}");
        }
    }

    #[test]
    fn sphere_is_closed_and_accurate() {
        let field = sphere_field(33, 1.0);
        let mesh = marching_cubes(&field, 0.0).unwrap();
        mesh.validate().unwrap();
        assert!(mesh.is_watertight());
        assert_eq!(mesh.euler_characteristic(), 2);
        let h = field.spec().max_spacing();
        for v in &mesh.vertices {
            assert!((length(*v) - 1.0).abs() <= 1.5 * h);
        }
        let area = mesh.area();
        let exact = 4.0 * std::f64::consts::PI;
        assert!((area - exact).abs() < 0.1 * exact, "area {area}");
        assert!(mesh.volume() > 0.0, "normals must face outward");
    }

    #[test]
    fn vertices_lie_on_interpolated_isosurface() {
        let field = sphere_field(17, 1.1);
        let mesh = marching_cubes(&field, 0.0).unwrap();
        for v in &mesh.vertices {
            assert!(field.sample(*v).unwrap().abs() <= 1e-9);
        }
    }

    #[test]
    fn empty_and_boundary_cases() {
        let spec = GridSpec::cube(-1.0, 1.0, 5).unwrap();
        let positive = ScalarField3::filled(spec, 1.0);
        assert!(marching_cubes(&positive, 0.0).unwrap().is_empty());
        let big = sphere_field(9, 3.0);
        assert!(matches!(marching_cubes(&big, 0.0), Err(Error::BoundaryCrossing { .. })));
    }

    #[test]
    fn tetrahedron_smoothing_hand_computed() {
        let s = 1.0 / 2f64.sqrt();
        let mesh = TriMesh {
            vertices: vec![[1.0, 0.0, -s], [-1.0, 0.0, -s], [0.0, 1.0, s], [0.0, -1.0, s]],
            triangles: vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]],
        };
        assert_eq!(laplacian_smooth(&mesh, 0, 0.5).unwrap(), mesh);
        let out = laplacian_smooth(&mesh, 1, 1.0).unwrap();
        for v in 0..4 {
            let mut c = [0.0; 3];
            for o in (0..4).filter(|&o| o != v) {
                for a in 0..3 {
                    c[a] += mesh.vertices[o][a] / 3.0;
                }
            }
            for a in 0..3 {
                assert!((out.vertices[v][a] - c[a]).abs() < 1e-15);
            }
            // Barycenter is the origin: every vertex moves a third of the way in.
            assert!((length(out.vertices[v]) - length(mesh.vertices[v]) / 3.0).abs() < 1e-12);
        }
        assert!(laplacian_smooth(&mesh, 1, 0.0).is_err());
    }

    /// Unit sphere sampled as an inside/outside indicator, so the extracted
    /// surface carries the grid staircase.
    fn voxel_sphere(n: usize) -> ScalarField3 {
        let spec = GridSpec::cube(-2.0, 2.0, n).unwrap();
        ScalarField3::from_fn(spec, |p| if length(p) < 1.0 { -0.5 } else { 0.5 })
    }

    #[test]
    fn smoothing_reduces_radius_variance() {
        let mesh = marching_cubes(&voxel_sphere(33), 0.0).unwrap();
        assert!(mesh.is_watertight());
        let variance = |m: &TriMesh| {
            let r: Vec<f64> = m.vertices.iter().map(|v| length(*v)).collect();
            let mean = r.iter().sum::<f64>() / r.len() as f64;
            r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r.len() as f64
        };
        let smooth = laplacian_smooth(&mesh, 5, 0.5).unwrap();
        assert_eq!(smooth.vertices.len(), mesh.vertices.len());
        assert_eq!(smooth.triangles, mesh.triangles);
        assert!(variance(&smooth) < variance(&mesh));
    }

    #[test]
    fn obj_round_trip() {
        let mesh = TriMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            triangles: vec![[0, 1, 2]],
        };
        let mut buf = Vec::new();
        write_obj(&mut buf, &mesh).unwrap();
        let back = read_obj(&buf).unwrap();
        assert_eq!(back.triangles, mesh.triangles);
        for (a, b) in back.vertices.iter().zip(&mesh.vertices) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
        let sphere = marching_cubes(&sphere_field(9, 1.0), 0.0).unwrap();
        let mut buf = Vec::new();
        write_obj(&mut buf, &sphere).unwrap();
        let back = read_obj(&buf).unwrap();
        for (a, b) in back.vertices.iter().zip(&sphere.vertices) {
            assert!(length(sub(*a, *b)) < 1e-8);
        }
        assert!(read_obj(b"v 1 2\n").is_err());
        assert!(read_obj(b"v 0 0 0\nf 1 2 3\n").is_err());
    }

    #[test]
    fn stl_layout() {
        let mut buf = Vec::new();
        write_stl(&mut buf, &TriMesh::default()).unwrap();
        assert_eq!(buf.len(), 84);
        assert_eq!(&buf[80..84], &[0, 0, 0, 0]);
        let mesh = marching_cubes(&sphere_field(9, 1.0), 0.0).unwrap();
        let mut buf = Vec::new();
        write_stl(&mut buf, &mesh).unwrap();
        let count = u32::from_le_bytes(buf[80..84].try_into().unwrap()) as usize;
        assert_eq!(count, mesh.triangles.len());
        assert_eq!(buf.len(), 84 + 50 * count);
        let soup = read_stl(&buf).unwrap();
        assert_eq!(soup.triangles.len(), count);
        assert!(read_stl(&buf[..buf.len() - 1]).is_err());
    }
}
