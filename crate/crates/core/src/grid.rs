//! Discrete pixel grids, datasets and their on-disk formats.
//!
//! Integer values `v ∈ {0, …, L−1}` with `L = 2^B` are rescaled to
//! `x = 2v/(L−1) − 1 ∈ [−1, 1]`.

use std::io::{Read, Write};
use std::path::Path;

use crate::stats::round_half_even;
use crate::{Error, Real, Result};

pub const MAX_BIT_DEPTH: u8 = 8;

fn check_bit_depth(bit_depth: u8) -> Result<()> {
    if (1..=MAX_BIT_DEPTH).contains(&bit_depth) {
        Ok(())
    } else {
        Err(Error::invalid("bit depth", format!("{bit_depth} not in 1..=8")))
    }
}

pub fn levels(bit_depth: u8) -> usize {
    1usize << bit_depth
}

pub fn rescale_value<S: Real>(v: u8, bit_depth: u8) -> S {
    let top = (levels(bit_depth) - 1) as f64;
    S::lit(2.0 * v as f64 / top - 1.0)
}

/// Inverse of [`rescale_value`]: round half to even, then clamp.
pub fn snap_value<S: Real>(x: S, bit_depth: u8) -> u8 {
    let top = (levels(bit_depth) - 1) as f64;
    let x = x.as_f64();
    if x.is_nan() {
        return 0;
    }
    round_half_even((x + 1.0) * 0.5 * top).clamp(0.0, top) as u8
}

/// One discrete image (or vector) with fixed spatial shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiscreteGrid {
    dims: Vec<usize>,
    bit_depth: u8,
    values: Vec<u8>,
}

impl DiscreteGrid {
    pub fn new(dims: Vec<usize>, bit_depth: u8, values: Vec<u8>) -> Result<Self> {
        check_bit_depth(bit_depth)?;
        let d: usize = dims.iter().product();
        if dims.is_empty() || d == 0 || d != values.len() {
            return Err(Error::invalid(
                "grid",
                format!("shape {dims:?} does not hold {} values", values.len()),
            ));
        }
        check_values(&values, bit_depth)?;
        Ok(Self {
            dims,
            bit_depth,
            values,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }
    pub fn values(&self) -> &[u8] {
        &self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn rescaled<S: Real>(&self) -> RealVector<S> {
        RealVector {
            dims: self.dims.clone(),
            values: self.values.iter().map(|&v| rescale_value(v, self.bit_depth)).collect(),
        }
    }
}

fn check_values(values: &[u8], bit_depth: u8) -> Result<()> {
    let max = levels(bit_depth) - 1;
    match values.iter().position(|&v| v as usize > max) {
        Some(i) => Err(Error::ValueOutOfRange {
            index: i,
            value: values[i] as i64,
            max: max as i64,
        }),
        None => Ok(()),
    }
}

/// Continuous values on the rescaled domain, same shape as a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RealVector<S = f64> {
    pub dims: Vec<usize>,
    pub values: Vec<S>,
}

impl<S: Real> RealVector<S> {
    pub fn snap(&self, bit_depth: u8) -> Result<DiscreteGrid> {
        DiscreteGrid::new(
            self.dims.clone(),
            bit_depth,
            self.values.iter().map(|&x| snap_value(x, bit_depth)).collect(),
        )
    }
}

/// `n` grids of a common shape stored as a flat `n × d` array.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    dims: Vec<usize>,
    bit_depth: u8,
    values: Vec<u8>,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(dims: Vec<usize>, bit_depth: u8, values: Vec<u8>, labels: Option<Vec<usize>>) -> Result<Self> {
        check_bit_depth(bit_depth)?;
        let d: usize = dims.iter().product();
        if dims.is_empty() || d == 0 || !values.len().is_multiple_of(d) {
            return Err(Error::invalid(
                "dataset",
                format!("{} values do not tile shape {dims:?}", values.len()),
            ));
        }
        check_values(&values, bit_depth)?;
        if let Some(l) = &labels {
            if l.len() != values.len() / d {
                return Err(Error::invalid("dataset", "one label per sample required"));
            }
        }
        Ok(Self {
            dims,
            bit_depth,
            values,
            labels,
        })
    }

    pub fn from_grids(grids: &[DiscreteGrid]) -> Result<Self> {
        let first = grids.first().ok_or(Error::EmptyDataset)?;
        let mut values = Vec::with_capacity(grids.len() * first.len());
        for g in grids {
            if g.dims != first.dims || g.bit_depth != first.bit_depth {
                return Err(Error::invalid("dataset", "grids differ in shape or bit depth"));
            }
            values.extend_from_slice(&g.values);
        }
        Self::new(first.dims.clone(), first.bit_depth, values, None)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }
    /// Values per sample.
    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }
    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }
    pub fn len(&self) -> usize {
        self.values.len() / self.dim()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
    pub fn values(&self) -> &[u8] {
        &self.values
    }
    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }
    pub fn label(&self, i: usize) -> Option<usize> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let d = self.dim();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn grid(&self, i: usize) -> DiscreteGrid {
        DiscreteGrid {
            dims: self.dims.clone(),
            bit_depth: self.bit_depth,
            values: self.row(i).to_vec(),
        }
    }

    pub fn rescaled_row<S: Real>(&self, i: usize) -> Vec<S> {
        self.row(i).iter().map(|&v| rescale_value(v, self.bit_depth)).collect()
    }

    /// All samples rescaled, flat `n × d`.
    pub fn rescaled<S: Real>(&self) -> Vec<S> {
        self.values.iter().map(|&v| rescale_value(v, self.bit_depth)).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.dim());
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Dataset {
            dims: self.dims.clone(),
            bit_depth: self.bit_depth,
            values,
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Same samples with unchanged shape but replaced values.
    pub fn with_values(&self, values: Vec<u8>) -> Result<Dataset> {
        if values.len() != self.values.len() {
            return Err(Error::invalid("dataset", "replacement values differ in length"));
        }
        Dataset::new(self.dims.clone(), self.bit_depth, values, self.labels.clone())
    }

    pub fn with_labels(mut self, labels: Option<Vec<usize>>) -> Result<Dataset> {
        if let Some(l) = &labels {
            if l.len() != self.len() {
                return Err(Error::invalid("dataset", "one label per sample required"));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Snaps flat `n × d` continuous rows back to the grid.
    pub fn from_rescaled<S: Real>(dims: Vec<usize>, bit_depth: u8, rows: &[S]) -> Result<Dataset> {
        Dataset::new(dims, bit_depth, rows.iter().map(|&x| snap_value(x, bit_depth)).collect(), None)
    }
}

const GRID_MAGIC: &[u8; 4] = b"GRID";

/// Binary dataset format: `GRID`, then little-endian `u32` count, `u32`
/// rank, `rank × u32` dims, one `u8` bit depth and the packed values.
/// Labels are not stored.
pub fn write_grid_file<W: Write>(mut w: W, data: &Dataset) -> Result<()> {
    w.write_all(GRID_MAGIC)?;
    w.write_all(&(data.len() as u32).to_le_bytes())?;
    w.write_all(&(data.dims.len() as u32).to_le_bytes())?;
    for &d in &data.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&[data.bit_depth])?;
    w.write_all(&data.values)?;
    Ok(())
}

pub fn read_grid_file<R: Read>(mut r: R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let fmt = |m: &str| Error::GridFormat(m.to_string());
    if bytes.len() < 4 || &bytes[..4] != GRID_MAGIC {
        return Err(fmt("missing GRID magic"));
    }
    let mut pos = 4;
    let u32_at = |pos: &mut usize| -> Result<usize> {
        let b = bytes.get(*pos..*pos + 4).ok_or_else(|| fmt("truncated header"))?;
        *pos += 4;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    };
    let count = u32_at(&mut pos)?;
    let rank = u32_at(&mut pos)?;
    if rank == 0 || rank > 8 {
        return Err(fmt("rank must be in 1..=8"));
    }
    let dims = (0..rank).map(|_| u32_at(&mut pos)).collect::<Result<Vec<_>>>()?;
    let bit_depth = *bytes.get(pos).ok_or_else(|| fmt("truncated header"))?;
    pos += 1;
    let need = count
        .checked_mul(dims.iter().product())
        .ok_or_else(|| fmt("size overflow"))?;
    if bytes.len() - pos != need {
        return Err(Error::GridFormat(format!(
            "expected {need} value bytes, found {}",
            bytes.len() - pos
        )));
    }
    Dataset::new(dims, bit_depth, bytes[pos..].to_vec(), None)
}

pub fn load_grid_file(path: &Path) -> Result<Dataset> {
    read_grid_file(std::fs::File::open(path)?)
}

/// Writes `bytes` next to `path` and renames over it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_grid_file(path: &Path, data: &Dataset) -> Result<()> {
    let mut buf = Vec::new();
    write_grid_file(&mut buf, data)?;
    write_atomic(path, &buf)
}

/// Tiles the samples into one binary PGM (one channel) or PPM (three
/// channels) image with a one-pixel black border between tiles. Rank-1
/// samples are drawn as single rows.
pub fn write_pnm_mosaic<W: Write>(mut w: W, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (h, wd, c) = match *data.dims() {
        [n] => (1, n, 1),
        [h, w] => (h, w, 1),
        [h, w, c] if c == 1 || c == 3 => (h, w, c),
        _ => return Err(Error::invalid("mosaic", format!("unsupported shape {:?}", data.dims()))),
    };
    let n = data.len();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (ih, iw) = (rows * (h + 1) + 1, cols * (wd + 1) + 1);
    let mut img = vec![0u8; ih * iw * c];
    for s in 0..n {
        let (ty, tx) = (s / cols, s % cols);
        let src = data.row(s);
        for y in 0..h {
            for x in 0..wd {
                let dst = ((ty * (h + 1) + 1 + y) * iw + tx * (wd + 1) + 1 + x) * c;
                img[dst..dst + c].copy_from_slice(&src[(y * wd + x) * c..(y * wd + x + 1) * c]);
            }
        }
    }
    let magic = if c == 1 { "P5" } else { "P6" };
    write!(w, "{magic}\n{iw} {ih}\n{}\n", levels(data.bit_depth()) - 1)?;
    w.write_all(&img)?;
    Ok(())
}
