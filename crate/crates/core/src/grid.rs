//! Scalar fields on uniform dyadic grids over the unit square.
//!
//! A [`GridField`] with exponent `N` holds `2^N x 2^N` cell values. Entry
//! `(k, n)` is the value at the lower-left corner `(k 2^-N, n 2^-N)` of its
//! cell and represents the whole cell; `k` indexes x and `n` indexes y.
//! Storage is row-major in `(k, n)`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GFLD";

#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    exponent: u32,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(exponent: u32) -> Self {
        let side = 1usize << exponent;
        GridField {
            exponent,
            values: vec![0.0; side * side],
        }
    }

    pub fn constant(exponent: u32, value: f64) -> Self {
        let side = 1usize << exponent;
        GridField {
            exponent,
            values: vec![value; side * side],
        }
    }

    /// Builds a field from row-major values; the length must be `4^N`.
    pub fn from_values(exponent: u32, values: Vec<f64>) -> Result<Self> {
        let side = 1usize << exponent;
        if values.len() != side * side {
            return Err(Error::invalid(format!(
                "grid of exponent {exponent} needs {} values, got {}",
                side * side,
                values.len()
            )));
        }
        Ok(GridField { exponent, values })
    }

    /// Builds a field from a square matrix given as rows (row index = x index).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let side = rows.len();
        if side == 0 || !side.is_power_of_two() {
            return Err(Error::invalid(format!(
                "grid side {side} is not a power of two"
            )));
        }
        if rows.iter().any(|r| r.len() != side) {
            return Err(Error::invalid("grid is not square"));
        }
        let exponent = side.trailing_zeros();
        Ok(GridField {
            exponent,
            values: rows.iter().flatten().copied().collect(),
        })
    }

    /// Samples `f` at the cell points `(k h, n h)`.
    pub fn from_fn(exponent: u32, f: impl Fn(f64, f64) -> f64) -> Self {
        let side = 1usize << exponent;
        let h = 1.0 / side as f64;
        let mut values = Vec::with_capacity(side * side);
        for k in 0..side {
            for n in 0..side {
                values.push(f(k as f64 * h, n as f64 * h));
            }
        }
        GridField { exponent, values }
    }

    /// Samples `f` at the cell centres `((k + 1/2) h, (n + 1/2) h)`.
    pub fn from_fn_centers(exponent: u32, f: impl Fn(f64, f64) -> f64) -> Self {
        let side = 1usize << exponent;
        let h = 1.0 / side as f64;
        let mut values = Vec::with_capacity(side * side);
        for k in 0..side {
            for n in 0..side {
                values.push(f((k as f64 + 0.5) * h, (n as f64 + 0.5) * h));
            }
        }
        GridField { exponent, values }
    }

    pub fn exponent(&self) -> u32 {
        self.exponent
    }

    pub fn side(&self) -> usize {
        1 << self.exponent
    }

    pub fn cell_size(&self) -> f64 {
        1.0 / self.side() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, k: usize, n: usize) -> f64 {
        self.values[k * self.side() + n]
    }

    #[inline]
    pub fn set(&mut self, k: usize, n: usize, v: f64) {
        let side = self.side();
        self.values[k * side + n] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            exponent: self.exponent,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Value of the piecewise-constant field at `(x, y)` in `[0,1)^2`.
    pub fn lookup(&self, x: f64, y: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&x) || !(0.0..1.0).contains(&y) {
            return Err(Error::invalid(format!(
                "point ({x}, {y}) outside [0,1)^2"
            )));
        }
        let side = self.side() as f64;
        let k = (x * side).floor() as usize;
        let n = (y * side).floor() as usize;
        Ok(self.get(k, n))
    }

    /// Mean over all cells, i.e. the integral over the unit square.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn max_abs_diff(&self, other: &GridField) -> f64 {
        assert_eq!(self.exponent, other.exponent, "grid exponents differ");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Piecewise-constant prolongation to a finer grid (exact for dyadic
    /// piecewise-constant fields).
    pub fn prolong(&self, exponent: u32) -> Result<GridField> {
        if exponent < self.exponent {
            return Err(Error::invalid(format!(
                "cannot prolong exponent {} to coarser {exponent}",
                self.exponent
            )));
        }
        let shift = exponent - self.exponent;
        let side = 1usize << exponent;
        let mut out = GridField::zeros(exponent);
        for k in 0..side {
            for n in 0..side {
                out.values[k * side + n] = self.get(k >> shift, n >> shift);
            }
        }
        Ok(out)
    }

    /// Cell-average restriction to a coarser grid.
    pub fn restrict_mean(&self, exponent: u32) -> Result<GridField> {
        if exponent > self.exponent {
            return Err(Error::invalid(format!(
                "cannot restrict exponent {} to finer {exponent}",
                self.exponent
            )));
        }
        let shift = self.exponent - exponent;
        let block = 1usize << shift;
        let weight = 1.0 / (block * block) as f64;
        let mut out = GridField::zeros(exponent);
        let side = self.side();
        let coarse = out.side();
        for k in 0..side {
            for n in 0..side {
                out.values[(k >> shift) * coarse + (n >> shift)] +=
                    weight * self.values[k * side + n];
            }
        }
        Ok(out)
    }

    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&self.exponent.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("missing GFLD magic".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let exponent = u32::from_le_bytes(word);
        if exponent > 15 {
            return Err(Error::Format(format!("grid exponent {exponent} too large")));
        }
        let count = 1usize << (2 * exponent);
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes", rest.len())));
        }
        Ok(GridField { exponent, values })
    }

    /// CSV matrix: one line per x index `k`, values along y. Values are
    /// written with the shortest round-trip representation.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let side = self.side();
        let mut line = String::new();
        for k in 0..side {
            line.clear();
            for n in 0..side {
                if n > 0 {
                    line.push(',');
                }
                line.push_str(&format!("{:?}", self.values[k * side + n]));
            }
            line.push('\n');
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl Read) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row = record
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| Error::Format(format!("bad number `{s}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        GridField::from_rows(&rows)
    }

    /// Writes `.csv` as CSV and anything else in the binary format.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        if is_csv(path) {
            self.write_csv(file)
        } else {
            self.write_binary(file)
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        if is_csv(path) {
            GridField::read_csv(file)
        } else {
            GridField::read_binary(file)
        }
    }

    /// Grayscale PNG with linear scaling between the field's min and max.
    /// Returns the `(min, max)` used so callers can record it.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(f64, f64)> {
        let (lo, hi) = self.min_max();
        let span = if hi > lo { hi - lo } else { 1.0 };
        let side = self.side();
        // Image rows run top to bottom in y, columns left to right in x.
        let mut pixels = vec![0u8; side * side];
        for row in 0..side {
            let n = side - 1 - row;
            for k in 0..side {
                let t = (self.get(k, n) - lo) / span;
                pixels[row * side + k] = (t * 255.0).round().clamp(0.0, 255.0) as u8;
            }
        }
        let file = std::io::BufWriter::new(std::fs::File::create(path.as_ref())?);
        let mut encoder = png::Encoder::new(file, side as u32, side as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Format(e.to_string()))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::Format(e.to_string()))?;
        Ok((lo, hi))
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}
