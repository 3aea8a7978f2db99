//! Bit-packed assignments, bit-rate accounting, and the VQM container.
//!
//! Indices are packed at `log2 k` bits each, LSB-first within bytes, in
//! row-major sub-vector order, with the final byte zero-padded.
//!
//! VQM layout (little-endian):
//!
//! ```text
//! "VQM1" | u32 layer_count | layer*
//! layer := u16 name_len | name | u32 rows | u32 cols | u16 d | u32 k
//!          | f32 * k*d codebook | packed indices | u32 crc32(layer bytes above)
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::Serialize;

use crate::error::{contract, Error, Result};
use crate::kmeans::{Assignments, Codebook};

pub const VQM_MAGIC: &[u8; 4] = b"VQM1";
pub const VQM_HEADER_BYTES: usize = 8;
/// Per-layer bytes outside name, codebook, and bitstream.
pub const VQM_LAYER_FIXED_BYTES: usize = 2 + 4 + 4 + 2 + 4 + 4;

/// Bytes needed for `count` indices at `bits` bits each.
pub fn packed_len(count: usize, bits: u32) -> usize {
    (count * bits as usize).div_ceil(8)
}

fn bits_for(k: usize) -> Result<u32> {
    if !k.is_power_of_two() {
        return Err(contract(format!("codebook size {k} is not a power of two")));
    }
    Ok(k.trailing_zeros())
}

/// Packs indices at `log2 k` bits each, LSB-first.
pub fn pack(indices: &[u32], k: usize) -> Result<Vec<u8>> {
    let bits = bits_for(k)?;
    if let Some(pos) = indices.iter().position(|&a| a as usize >= k) {
        return Err(contract(format!("index {} at position {pos} is out of range for k = {k}", indices[pos])));
    }
    let mut out = Vec::with_capacity(packed_len(indices.len(), bits));
    let mut acc = 0u64;
    let mut filled = 0u32;
    for &a in indices {
        acc |= u64::from(a) << filled;
        filled += bits;
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
    Ok(out)
}

/// Inverse of [`pack`]. Rejects buffers of the wrong length and nonzero
/// padding bits.
pub fn unpack(bytes: &[u8], count: usize, k: usize) -> Result<Vec<u32>> {
    let bits = bits_for(k)?;
    let expected = packed_len(count, bits);
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "packed stream of {} bytes, expected {expected} for {count} indices at {bits} bits",
            bytes.len()
        )));
    }
    let used = count * bits as usize;
    if !used.is_multiple_of(8) {
        let last = bytes[expected - 1];
        if last >> (used % 8) != 0 {
            return Err(Error::Format("nonzero padding bits in packed stream".into()));
        }
    }
    Ok((0..count).map(|j| read_index(bytes, j, bits)).collect())
}

/// Reads the `j`-th `bits`-wide index (`bits <= 32`).
#[inline]
pub fn read_index(bytes: &[u8], j: usize, bits: u32) -> u32 {
    if bits == 0 {
        return 0;
    }
    let start = j * bits as usize;
    let first = start / 8;
    let shift = start % 8;
    let mut word = 0u64;
    let end = ((start + bits as usize).div_ceil(8)).min(bytes.len());
    for (i, &b) in bytes[first..end].iter().enumerate() {
        word |= u64::from(b) << (8 * i);
    }
    ((word >> shift) & ((1u64 << bits) - 1)) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bitrate {
    pub bits_per_weight: f64,
    pub assignment_bits: u64,
    pub codebook_bits: u64,
}

/// Storage cost of a `o x i` layer quantized with a `k x d` codebook.
pub fn bitrate(o: usize, i: usize, d: usize, k: usize) -> Result<Bitrate> {
    let bits = bits_for(k)?;
    if d == 0 || !i.is_multiple_of(d) {
        return Err(Error::Partition { d, cols: i });
    }
    Ok(Bitrate {
        bits_per_weight: f64::from(bits) / d as f64,
        assignment_bits: (o * i / d) as u64 * u64::from(bits),
        codebook_bits: (k * d * 32) as u64,
    })
}

/// One quantized layer in storage form.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedLayer {
    name: String,
    rows: usize,
    cols: usize,
    codebook: Codebook,
    stream: Vec<u8>,
}

impl PackedLayer {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, codebook: Codebook, assignments: &Assignments) -> Result<Self> {
        let name = name.into();
        let d = codebook.dim();
        if !cols.is_multiple_of(d) {
            return Err(Error::Partition { d, cols });
        }
        if assignments.rows() != rows || assignments.slots() != cols / d {
            return Err(contract(format!(
                "layer {name:?}: {}x{} assignments for a {rows}x{cols} matrix with d = {d}",
                assignments.rows(),
                assignments.slots()
            )));
        }
        if name.len() > usize::from(u16::MAX) || d > usize::from(u16::MAX) {
            return Err(contract(format!("layer {name:?}: name or d too large for the container")));
        }
        let stream = pack(assignments.indices(), codebook.k())?;
        Ok(Self { name, rows, cols, codebook, stream })
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

    pub fn dim(&self) -> usize {
        self.codebook.dim()
    }

    pub fn k(&self) -> usize {
        self.codebook.k()
    }

    pub fn slots(&self) -> usize {
        self.cols / self.codebook.dim()
    }

    pub fn count(&self) -> usize {
        self.rows * self.slots()
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn stream(&self) -> &[u8] {
        &self.stream
    }

    /// Codeword index of sub-vector `(row, slot)`, read from the bitstream.
    #[inline]
    pub fn index(&self, row: usize, slot: usize) -> u32 {
        read_index(&self.stream, row * self.slots() + slot, self.codebook.index_bits())
    }

    pub fn assignments(&self) -> Assignments {
        let indices = unpack(&self.stream, self.count(), self.k()).expect("stream built by pack");
        Assignments::new(self.rows, self.slots(), indices).expect("grid matches layer")
    }

    pub fn bitrate(&self) -> Bitrate {
        bitrate(self.rows, self.cols, self.dim(), self.k()).expect("validated at construction")
    }

    /// Serialized size of this layer inside a VQM file.
    pub fn encoded_len(&self) -> usize {
        VQM_LAYER_FIXED_BYTES + self.name.len() + self.codebook.entries().len() * 4 + self.stream.len()
    }

    fn encode_into(&self, buf: &mut Vec<u8>) {
        let start = buf.len();
        buf.write_u16::<LittleEndian>(self.name.len() as u16).unwrap();
        buf.extend_from_slice(self.name.as_bytes());
        buf.write_u32::<LittleEndian>(self.rows as u32).unwrap();
        buf.write_u32::<LittleEndian>(self.cols as u32).unwrap();
        buf.write_u16::<LittleEndian>(self.dim() as u16).unwrap();
        buf.write_u32::<LittleEndian>(self.k() as u32).unwrap();
        for &v in self.codebook.entries() {
            buf.write_f32::<LittleEndian>(v).unwrap();
        }
        buf.extend_from_slice(&self.stream);
        let crc = crc32fast::hash(&buf[start..]);
        buf.write_u32::<LittleEndian>(crc).unwrap();
    }
}

/// Ordered collection of packed layers with unique names.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PackedModel {
    layers: Vec<PackedLayer>,
}

impl PackedModel {
    pub fn new(layers: Vec<PackedLayer>) -> Result<Self> {
        let mut seen = HashSet::new();
        for l in &layers {
            if !seen.insert(l.name.as_str()) {
                return Err(contract(format!("duplicate layer name {:?}", l.name)));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[PackedLayer] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&PackedLayer> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn encoded_len(&self) -> usize {
        VQM_HEADER_BYTES + self.layers.iter().map(PackedLayer::encoded_len).sum::<usize>()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        buf.extend_from_slice(VQM_MAGIC);
        buf.write_u32::<LittleEndian>(self.layers.len() as u32).unwrap();
        for l in &self.layers {
            l.encode_into(&mut buf);
        }
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != VQM_MAGIC {
            return Err(Error::Format("missing VQM1 magic".into()));
        }
        let mut cur = Cursor::new(bytes);
        cur.set_position(4);
        let count = cur.read_u32::<LittleEndian>()? as usize;
        let mut layers = Vec::with_capacity(count.min(1024));
        for li in 0..count {
            layers.push(decode_layer(&mut cur, bytes, li)?);
        }
        let end = cur.position() as usize;
        if end != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after the last layer", bytes.len() - end)));
        }
        Self::new(layers).map_err(|e| Error::Format(e.to_string()))
    }
}

fn eof(msg: String) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, msg))
}

fn decode_layer(cur: &mut Cursor<&[u8]>, bytes: &[u8], li: usize) -> Result<PackedLayer> {
    let start = cur.position() as usize;
    let name_len = cur.read_u16::<LittleEndian>()? as usize;
    let mut name = vec![0u8; name_len];
    cur.read_exact(&mut name)?;
    let rows = cur.read_u32::<LittleEndian>()? as usize;
    let cols = cur.read_u32::<LittleEndian>()? as usize;
    let d = cur.read_u16::<LittleEndian>()? as usize;
    let k = cur.read_u32::<LittleEndian>()? as usize;
    if !k.is_power_of_two() || d == 0 || !cols.is_multiple_of(d) || rows == 0 {
        return Err(Error::Format(format!(
            "layer {li}: invalid geometry rows={rows} cols={cols} d={d} k={k}"
        )));
    }
    let bits = k.trailing_zeros();
    let count = rows
        .checked_mul(cols / d)
        .ok_or_else(|| Error::Format(format!("layer {li}: assignment count overflows")))?;
    let cb_bytes = k.checked_mul(d).and_then(|n| n.checked_mul(4));
    let stream_len = count.checked_mul(bits as usize).map(|b| b.div_ceil(8));
    let remaining = bytes.len() - cur.position() as usize;
    let (cb_bytes, stream_len) = match (cb_bytes, stream_len) {
        (Some(c), Some(s)) if c.checked_add(s).is_some_and(|t| t <= remaining) => (c, s),
        _ => return Err(eof(format!("layer {li}: payload exceeds file size"))),
    };
    let mut codebook = vec![0f32; cb_bytes / 4];
    cur.read_f32_into::<LittleEndian>(&mut codebook)?;
    let mut stream = vec![0u8; stream_len];
    cur.read_exact(&mut stream)?;
    let body_end = cur.position() as usize;
    let stored = cur.read_u32::<LittleEndian>()?;
    let computed = crc32fast::hash(&bytes[start..body_end]);
    if stored != computed {
        return Err(Error::Corruption { context: format!("VQM layer {li}"), stored, computed });
    }

    let name = String::from_utf8(name).map_err(|_| Error::Format(format!("layer {li}: name is not valid utf-8")))?;
    let codebook = Codebook::new(k, d, codebook).map_err(|e| Error::Format(format!("layer {name:?}: {e}")))?;
    let indices = unpack(&stream, count, k)?;
    let assignments = Assignments::new(rows, cols / d, indices)?;
    PackedLayer::new(name, rows, cols, codebook, &assignments)
}

pub fn write_vqm(model: &PackedModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.encode())?;
    Ok(())
}

pub fn read_vqm(path: impl AsRef<Path>) -> Result<PackedModel> {
    PackedModel::decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_bit_layout() {
        assert_eq!(pack(&[1, 2, 3, 0], 4).unwrap(), vec![0x39]);
        assert_eq!(unpack(&[0x39], 4, 4).unwrap(), vec![1, 2, 3, 0]);
    }

    #[test]
    fn zeros_and_lengths() {
        assert_eq!(pack(&[0; 9], 8).unwrap(), vec![0; 4]);
        assert_eq!(pack(&[7, 1, 0, 5, 3], 8).unwrap().len(), 2);
        assert_eq!(pack(&[0; 7], 1).unwrap(), Vec::<u8>::new());
    }

    #[test]
    fn out_of_range_index() {
        assert!(matches!(pack(&[4], 4), Err(Error::Contract(_))));
        assert!(matches!(pack(&[0], 3), Err(Error::Contract(_))));
    }

    #[test]
    fn strict_reader() {
        assert!(matches!(unpack(&[0x39], 5, 4), Err(Error::Format(_))));
        // 3 indices at 2 bits leave the top two bits as padding
        assert!(unpack(&[0b0011_1001], 3, 4).is_ok());
        assert!(matches!(unpack(&[0b0111_1001], 3, 4), Err(Error::Format(_))));
    }

    #[test]
    fn wide_indices_cross_bytes() {
        let idx: Vec<u32> = (0..37).map(|j| (j * 2654435761u64 % 4096) as u32).collect();
        let bytes = pack(&idx, 4096).unwrap();
        assert_eq!(bytes.len(), packed_len(37, 12));
        assert_eq!(unpack(&bytes, 37, 4096).unwrap(), idx);
    }

    #[test]
    fn presets() {
        assert_eq!(bitrate(128, 128, 2, 64).unwrap().bits_per_weight, 3.0);
        assert_eq!(bitrate(128, 128, 4, 256).unwrap().bits_per_weight, 2.0);
        assert_eq!(bitrate(128, 128, 8, 256).unwrap().bits_per_weight, 1.0);
        assert_eq!(bitrate(3, 5, 1, 2).unwrap().bits_per_weight, 1.0);
        let b = bitrate(128, 128, 4, 256).unwrap();
        assert_eq!(b.assignment_bits, 4096 * 8);
        assert_eq!(b.codebook_bits, 256 * 4 * 32);
    }

    fn sample_layer() -> PackedLayer {
        let cb = Codebook::new(4, 2, vec![0., 1., 2., 3., 4., 5., 6., 7.]).unwrap();
        let a = Assignments::new(2, 3, vec![0, 1, 2, 3, 3, 1]).unwrap();
        PackedLayer::new("proj", 2, 6, cb, &a).unwrap()
    }

    #[test]
    fn vqm_round_trip_and_size() {
        let model = PackedModel::new(vec![sample_layer()]).unwrap();
        let bytes = model.encode();
        assert_eq!(bytes.len(), 8 + (20 + 4) + 4 * 2 * 4 + 2);
        assert_eq!(bytes.len(), model.encoded_len());
        assert_eq!(PackedModel::decode(&bytes).unwrap(), model);
    }

    #[test]
    fn vqm_flipped_byte_is_corruption() {
        let bytes = PackedModel::new(vec![sample_layer()]).unwrap().encode();
        let mut bad = bytes.clone();
        bad[40] ^= 0x10;
        assert!(matches!(PackedModel::decode(&bad), Err(Error::Corruption { .. })));
    }

    #[test]
    fn vqm_rejects_trailing_bytes() {
        let mut bytes = PackedModel::new(vec![sample_layer()]).unwrap().encode();
        bytes.push(0);
        assert!(matches!(PackedModel::decode(&bytes), Err(Error::Format(_))));
    }
}
