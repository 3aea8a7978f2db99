//! Full-precision weight matrices, sub-vector partitioning, and the WTS
//! bundle container.
//!
//! WTS layout (all integers little-endian):
//!
//! ```text
//! "WTS1" | u32 layer_count | layer* | u32 crc32(all preceding bytes)
//! layer := u16 name_len | name (utf-8) | u32 rows | u32 cols | f32 * rows*cols
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};

pub const WTS_MAGIC: &[u8; 4] = b"WTS1";

/// Dense `rows x cols` weight matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    name: String,
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl WeightMatrix {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if rows == 0 || cols == 0 {
            return Err(Error::Data(format!("layer {name:?} has an empty shape {rows}x{cols}")));
        }
        if values.len() != rows * cols {
            return Err(Error::Data(format!(
                "layer {name:?}: expected {} values for shape {rows}x{cols}, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "layer {name:?}: non-finite value {} at flat index {pos}",
                values[pos]
            )));
        }
        Ok(Self { name, rows, cols, values })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f32> {
        ArrayView2::from_shape((self.rows, self.cols), &self.values).expect("shape checked at construction")
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn stats(&self) -> LayerStats {
        LayerStats::compute(&self.values)
    }

    /// Sum of squared differences against another matrix of the same shape.
    pub fn squared_error(&self, other: &[f32]) -> f64 {
        assert_eq!(other.len(), self.values.len());
        self.values
            .iter()
            .zip(other)
            .map(|(&a, &b)| {
                let diff = f64::from(a) - f64::from(b);
                diff * diff
            })
            .sum()
    }
}

/// Summary statistics printed by `weights inspect`.
#[derive(Debug, Clone, Serialize)]
pub struct LayerStats {
    pub min: f32,
    pub max: f32,
    pub mean: f64,
    pub std: f64,
    /// Entries further than 6 standard deviations from the mean.
    pub outliers: usize,
}

impl LayerStats {
    pub fn compute(values: &[f32]) -> Self {
        let n = values.len().max(1) as f64;
        let mut min = f32::INFINITY;
        let mut max = f32::NEG_INFINITY;
        let mut sum = 0.0f64;
        for &v in values {
            min = min.min(v);
            max = max.max(v);
            sum += f64::from(v);
        }
        let mean = sum / n;
        let var = values
            .iter()
            .map(|&v| (f64::from(v) - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        let outliers = values
            .iter()
            .filter(|&&v| (f64::from(v) - mean).abs() > 6.0 * std)
            .count();
        Self { min, max, mean, std, outliers }
    }
}

/// Ordered set of named layers plus free-form metadata.
///
/// Metadata is an in-memory annotation only; the WTS container has no field
/// for it, so a loaded bundle always has empty metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelBundle {
    layers: Vec<WeightMatrix>,
    pub metadata: BTreeMap<String, String>,
}

impl ModelBundle {
    pub fn new(layers: Vec<WeightMatrix>) -> Result<Self> {
        let mut seen = HashSet::new();
        for layer in &layers {
            if !seen.insert(layer.name.as_str()) {
                return Err(Error::Data(format!("duplicate layer name {:?}", layer.name)));
            }
            if layer.name.len() > usize::from(u16::MAX) {
                return Err(Error::Data(format!("layer name longer than {} bytes", u16::MAX)));
            }
        }
        Ok(Self { layers, metadata: BTreeMap::new() })
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.metadata.insert(key.into(), value.into());
        self
    }

    pub fn layers(&self) -> &[WeightMatrix] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&WeightMatrix> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Row-major view of a matrix as `rows x (cols / d)` sub-vectors of length `d`.
/// Sub-vectors never span rows.
#[derive(Debug, Clone, Copy)]
pub struct SubVectorTable<'a> {
    name: &'a str,
    d: usize,
    rows: usize,
    slots: usize,
    values: &'a [f32],
}

impl<'a> SubVectorTable<'a> {
    pub fn name(&self) -> &'a str {
        self.name
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn len(&self) -> usize {
        self.rows * self.slots
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, row: usize, slot: usize) -> &'a [f32] {
        assert!(row < self.rows && slot < self.slots, "sub-vector ({row}, {slot}) out of range");
        self.flat(row * self.slots + slot)
    }

    /// Sub-vector by row-major flat index `row * slots + slot`.
    pub fn flat(&self, idx: usize) -> &'a [f32] {
        &self.values[idx * self.d..(idx + 1) * self.d]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &'a [f32]> + 'a {
        self.values.chunks_exact(self.d)
    }

    /// Concatenates the sub-vectors back into a row-major value array.
    pub fn assemble(&self) -> Vec<f32> {
        self.iter().flatten().copied().collect()
    }
}

pub fn partition(w: &WeightMatrix, d: usize) -> Result<SubVectorTable<'_>> {
    if d == 0 || !w.cols.is_multiple_of(d) {
        return Err(Error::Partition { d, cols: w.cols });
    }
    Ok(SubVectorTable {
        name: &w.name,
        d,
        rows: w.rows,
        slots: w.cols / d,
        values: &w.values,
    })
}

/// Serializes a bundle into WTS bytes. Output depends only on the layers.
pub fn encode_bundle(bundle: &ModelBundle) -> Vec<u8> {
    let payload: usize = bundle
        .layers
        .iter()
        .map(|l| 2 + l.name.len() + 8 + 4 * l.values.len())
        .sum();
    let mut buf = Vec::with_capacity(12 + payload);
    buf.extend_from_slice(WTS_MAGIC);
    buf.write_u32::<LittleEndian>(bundle.layers.len() as u32).unwrap();
    for layer in &bundle.layers {
        buf.write_u16::<LittleEndian>(layer.name.len() as u16).unwrap();
        buf.extend_from_slice(layer.name.as_bytes());
        buf.write_u32::<LittleEndian>(layer.rows as u32).unwrap();
        buf.write_u32::<LittleEndian>(layer.cols as u32).unwrap();
        for &v in &layer.values {
            buf.write_f32::<LittleEndian>(v).unwrap();
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.write_u32::<LittleEndian>(crc).unwrap();
    buf
}

pub fn decode_bundle(bytes: &[u8]) -> Result<ModelBundle> {
    if bytes.len() < 4 || &bytes[..4] != WTS_MAGIC {
        return Err(Error::Format("missing WTS1 magic".into()));
    }
    let mut cur = Cursor::new(bytes);
    cur.set_position(4);
    let count = cur.read_u32::<LittleEndian>()? as usize;

    struct RawLayer {
        name: String,
        rows: usize,
        cols: usize,
        values: Vec<f32>,
    }
    let mut raw = Vec::with_capacity(count.min(1024));
    for li in 0..count {
        let name_len = cur.read_u16::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        cur.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format(format!("layer {li}: name is not valid utf-8")))?;
        let rows = cur.read_u32::<LittleEndian>()? as usize;
        let cols = cur.read_u32::<LittleEndian>()? as usize;
        if rows == 0 || cols == 0 {
            return Err(Error::Format(format!("layer {name:?}: empty shape {rows}x{cols}")));
        }
        let n = rows
            .checked_mul(cols)
            .filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| {
                Error::Io(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    format!("layer {name:?}: shape {rows}x{cols} exceeds file size"),
                ))
            })?;
        let mut values = vec![0f32; n];
        cur.read_f32_into::<LittleEndian>(&mut values)?;
        raw.push(RawLayer { name, rows, cols, values });
    }
    let body_end = cur.position() as usize;
    let stored = cur.read_u32::<LittleEndian>()?;
    if cur.position() as usize != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checksum",
            bytes.len() - cur.position() as usize
        )));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(Error::Corruption { context: "WTS bundle".into(), stored, computed });
    }

    let layers = raw
        .into_iter()
        .map(|l| WeightMatrix::new(l.name, l.rows, l.cols, l.values))
        .collect::<Result<Vec<_>>>()?;
    ModelBundle::new(layers).map_err(|e| match e {
        Error::Data(msg) => Error::Format(msg),
        other => other,
    })
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_bundle(bundle))?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    decode_bundle(&fs::read(path)?)
}
