//! DSF1 field files.
//!
//! One ASCII header line
//! `DSF1 <kind> <nx> <ny> <nz> <ox> <oy> <oz> <sx> <sy> <sz>\n`, `kind` being
//! `scalar` or `vector`, followed by little-endian `f32` values in grid
//! layout order (x fastest), three per node for vector fields.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{GridSpec, ScalarField3, VectorField3};

pub const MAGIC: &str = "DSF1";
const MAX_HEADER: usize = 1024;

/// A decoded DSF1 file of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyField {
    Scalar(ScalarField3),
    Vector(VectorField3),
}

impl AnyField {
    pub fn spec(&self) -> &GridSpec {
        match self {
            AnyField::Scalar(f) => f.spec(),
            AnyField::Vector(f) => f.spec(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnyField::Scalar(_) => "scalar",
            AnyField::Vector(_) => "vector",
        }
    }
}

fn header(kind: &str, spec: &GridSpec) -> String {
    let [nx, ny, nz] = spec.dims;
    let [ox, oy, oz] = spec.origin;
    let [sx, sy, sz] = spec.spacing;
    format!("{MAGIC} {kind} {nx} {ny} {nz} {ox:?} {oy:?} {oz:?} {sx:?} {sy:?} {sz:?}\n")
}

pub fn encode_scalar(field: &ScalarField3) -> Vec<u8> {
    let mut out = header("scalar", field.spec()).into_bytes();
    out.reserve(field.values().len() * 4);
    for &v in field.values() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn encode_vector(field: &VectorField3) -> Vec<u8> {
    let mut out = header("vector", field.spec()).into_bytes();
    out.reserve(field.values().len() * 12);
    for v in field.values() {
        for c in v {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    out
}

/// Decodes a DSF1 byte stream. Never panics on malformed input; errors carry
/// the byte offset of the offending token.
pub fn decode(bytes: &[u8]) -> Result<AnyField> {
    let limit = bytes.len().min(MAX_HEADER);
    let newline = bytes[..limit]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::parse(limit, "header line not terminated within 1024 bytes"))?;
    let line =
        std::str::from_utf8(&bytes[..newline]).map_err(|e| Error::parse(e.valid_up_to(), "header is not UTF-8"))?;

    let mut tokens = Vec::new();
    let mut pos = 0;
    for tok in line.split(' ') {
        tokens.push((pos, tok));
        pos += tok.len() + 1;
    }
    if tokens.len() != 11 {
        return Err(Error::parse(
            0,
            format!("header has {} tokens, expected 11", tokens.len()),
        ));
    }
    if tokens[0].1 != MAGIC {
        return Err(Error::parse(0, format!("bad magic `{}`", tokens[0].1)));
    }
    let width = match tokens[1].1 {
        "scalar" => 1usize,
        "vector" => 3,
        other => return Err(Error::parse(tokens[1].0, format!("unknown kind `{other}`"))),
    };
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let (off, tok) = tokens[2 + a];
        dims[a] = tok
            .parse()
            .map_err(|_| Error::parse(off, format!("bad dimension `{tok}`")))?;
    }
    let mut reals = [0.0f64; 6];
    for (a, slot) in reals.iter_mut().enumerate() {
        let (off, tok) = tokens[5 + a];
        *slot = tok
            .parse()
            .map_err(|_| Error::parse(off, format!("bad number `{tok}`")))?;
    }
    let spec = GridSpec {
        origin: [reals[0], reals[1], reals[2]],
        spacing: [reals[3], reals[4], reals[5]],
        dims,
    };
    spec.validate().map_err(|e| Error::parse(tokens[2].0, e.to_string()))?;

    let body = &bytes[newline + 1..];
    let expected = spec
        .len()
        .checked_mul(width * 4)
        .ok_or_else(|| Error::parse(tokens[2].0, "payload size overflows"))?;
    if body.len() != expected {
        return Err(Error::parse(
            newline + 1,
            format!("payload has {} bytes, expected {expected}", body.len()),
        ));
    }
    let reals: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(if width == 1 {
        AnyField::Scalar(ScalarField3::new(spec, reals)?)
    } else {
        AnyField::Vector(VectorField3::from_flat(spec, &reals)?)
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn save_scalar(path: &Path, field: &ScalarField3) -> Result<()> {
    write_file(path, &encode_scalar(field))
}

pub fn save_vector(path: &Path, field: &VectorField3) -> Result<()> {
    write_file(path, &encode_vector(field))
}

pub fn load(path: &Path) -> Result<AnyField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
