//! Uniform periodic grids on the box `[-L, L)^n` and the real fields that live on them.
//!
//! Nodes are stored in row-major order: for `n = 2` the flat index of node
//! `(i0, i1)` is `i0 * N + i1`, with axis 0 the slowest.

use std::fmt;
use std::io::{Read, Write};
use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

const DUMP_MAGIC: &[u8; 4] = b"FCL1";

/// Coordinates of a node; only the first `dims` entries are meaningful.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dims: usize,
    points: usize,
    half_length: f64,
}

impl Grid {
    /// `dims` in {1, 2}; `points` per axis, even and at least 16; `half_length > 0`.
    pub fn new(dims: usize, points: usize, half_length: f64) -> Result<Self> {
        if !(1..=2).contains(&dims) {
            return Err(Error::InvalidGrid(format!("dimension {dims} not in {{1, 2}}")));
        }
        if points < 16 || points % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "points per axis must be even and >= 16, got {points}"
            )));
        }
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(Error::InvalidGrid(format!("half length must be positive, got {half_length}")));
        }
        Ok(Self { dims, points, half_length })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / self.points as f64
    }

    /// Volume element `h^n` of the discrete integral.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dims as i32)
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.half_length + i as f64 * self.spacing()
    }

    pub fn multi(&self, flat: usize) -> [usize; 2] {
        match self.dims {
            1 => [flat, 0],
            _ => [flat / self.points, flat % self.points],
        }
    }

    pub fn flat(&self, multi: [usize; 2]) -> usize {
        match self.dims {
            1 => multi[0],
            _ => multi[0] * self.points + multi[1],
        }
    }

    pub fn coord(&self, flat: usize) -> Point {
        let m = self.multi(flat);
        let mut p = [0.0; 2];
        for (axis, slot) in p.iter_mut().enumerate().take(self.dims) {
            *slot = self.axis_coord(m[axis]);
        }
        p
    }

    /// Signed integer wavenumber of FFT bin `i`, in `-N/2 ..= N/2 - 1`.
    pub fn wavenumber(&self, i: usize) -> i64 {
        let n = self.points as i64;
        let i = i as i64;
        if i < n / 2 {
            i
        } else {
            i - n
        }
    }

    /// Angular frequency `pi k / L` of FFT bin `i`.
    pub fn frequency(&self, i: usize) -> f64 {
        std::f64::consts::PI * self.wavenumber(i) as f64 / self.half_length
    }

    pub fn is_nyquist(&self, i: usize) -> bool {
        self.wavenumber(i) == -(self.points as i64) / 2
    }

    /// Grid with twice as many points per axis over the same box.
    pub fn refined(&self) -> Self {
        Self { points: self.points * 2, ..*self }
    }

    pub fn distance(&self, a: &Point, b: &Point) -> f64 {
        (0..self.dims).map(|k| (a[k] - b[k]).powi(2)).sum::<f64>().sqrt()
    }

    /// Distance on the torus (minimum image).
    pub fn periodic_distance(&self, a: &Point, b: &Point) -> f64 {
        let period = 2.0 * self.half_length;
        (0..self.dims)
            .map(|k| {
                let d = (a[k] - b[k]).abs() % period;
                d.min(period - d).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Real field sampled on every node of a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), actual: values.len() });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    /// Caller guarantees length and finiteness.
    pub(crate) fn from_raw(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: Grid, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.len()])
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let values = (0..grid.len()).map(|i| f(&grid.coord(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::from_raw(self.grid, self.values.iter().map(|v| c * v).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise product.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a * b)
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &Self) -> Result<Self> {
        self.zip(other, |a, b| a + c * b)
    }

    pub fn zip(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch);
        }
        Self::new(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// Writes the little-endian binary dump: magic, `n`, `N`, `L`, then the values.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&(self.grid.dims as u64).to_le_bytes())?;
        w.write_all(&(self.grid.points as u64).to_le_bytes())?;
        w.write_all(&self.grid.half_length.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::Format("bad magic, expected FCL1".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let dims = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let points = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let half_length = f64::from_le_bytes(word);
        let grid = Grid::new(dims, points, half_length)?;
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            r.read_exact(&mut word)?;
            values.push(f64::from_le_bytes(word));
        }
        Self::new(grid, values)
    }
}

impl Add for &GridFunction {
    type Output = GridFunction;
    fn add(self, rhs: Self) -> GridFunction {
        assert_eq!(self.grid, rhs.grid, "grid mismatch");
        GridFunction::from_raw(
            self.grid,
            self.values.iter().zip(&rhs.values).map(|(a, b)| a + b).collect(),
        )
    }
}

impl Sub for &GridFunction {
    type Output = GridFunction;
    fn sub(self, rhs: Self) -> GridFunction {
        assert_eq!(self.grid, rhs.grid, "grid mismatch");
        GridFunction::from_raw(
            self.grid,
            self.values.iter().zip(&rhs.values).map(|(a, b)| a - b).collect(),
        )
    }
}

impl Mul<&GridFunction> for f64 {
    type Output = GridFunction;
    fn mul(self, rhs: &GridFunction) -> GridFunction {
        rhs.scale(self)
    }
}

/// Multi-index `alpha` of a partial derivative; entries are per-axis orders.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: &[i64]) -> Result<Self> {
        if entries.is_empty() || entries.len() > 2 {
            return Err(Error::InvalidMultiIndex(format!(
                "expected 1 or 2 entries, got {}",
                entries.len()
            )));
        }
        entries
            .iter()
            .map(|&e| {
                u32::try_from(e).map_err(|_| Error::InvalidMultiIndex(format!("negative entry {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn zero(dims: usize) -> Self {
        Self(vec![0; dims])
    }

    /// Unit multi-index along `axis`.
    pub fn unit(dims: usize, axis: usize) -> Self {
        let mut v = vec![0; dims];
        v[axis] = 1;
        Self(v)
    }

    pub fn dims(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn order(&self) -> u32 {
        self.0.iter().sum()
    }

    /// `alpha! = prod alpha_i!`
    pub fn factorial(&self) -> f64 {
        self.0
            .iter()
            .map(|&a| (1..=a).map(f64::from).product::<f64>())
            .product()
    }

    /// `x^alpha`
    pub fn monomial(&self, x: &Point) -> f64 {
        self.0.iter().enumerate().map(|(k, &a)| x[k].powi(a as i32)).product()
    }

    /// All multi-indices in `dims` dimensions with order exactly `order`, lexicographic.
    pub fn of_order(dims: usize, order: u32) -> Vec<Self> {
        match dims {
            1 => vec![Self(vec![order])],
            _ => (0..=order).map(|a| Self(vec![a, order - a])).collect(),
        }
    }

    /// All multi-indices with `|alpha| <= max_order`, grouped by order.
    pub fn up_to_order(dims: usize, max_order: u32) -> Vec<Self> {
        (0..=max_order).flat_map(|o| Self::of_order(dims, o)).collect()
    }

    /// Dash-joined tuple, e.g. `1-0`.
    pub fn label(&self) -> String {
        self.0.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("-")
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.0.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(Grid::new(3, 32, 1.0).is_err());
        assert!(Grid::new(1, 15, 1.0).is_err());
        assert!(Grid::new(1, 18, 1.0).is_ok());
        assert!(Grid::new(1, 14, 1.0).is_err());
        assert!(Grid::new(1, 32, 0.0).is_err());
        let g = Grid::new(2, 16, 2.0).unwrap();
        assert_eq!(g.len(), 256);
        assert_eq!(g.spacing(), 0.25);
        assert_eq!(g.wavenumber(8), -8);
        assert!(g.is_nyquist(8));
        assert_eq!(g.coord(g.flat([1, 2])), [-1.75, -1.5]);
    }

    #[test]
    fn rejects_non_finite() {
        let g = Grid::new(1, 16, 1.0).unwrap();
        let mut v = vec![0.0; 16];
        v[3] = f64::NAN;
        assert!(matches!(GridFunction::new(g, v), Err(Error::NonFinite { index: 3 })));
    }

    #[test]
    fn multi_index_basics() {
        assert!(MultiIndex::new(&[1, -1]).is_err());
        let a = MultiIndex::new(&[2, 1]).unwrap();
        assert_eq!(a.order(), 3);
        assert_eq!(a.factorial(), 2.0);
        assert_eq!(a.monomial(&[3.0, 5.0]), 45.0);
        assert_eq!(a.label(), "2-1");
        let o2 = MultiIndex::of_order(2, 2);
        assert_eq!(o2, vec![
            MultiIndex::new(&[0, 2]).unwrap(),
            MultiIndex::new(&[1, 1]).unwrap(),
            MultiIndex::new(&[2, 0]).unwrap()
        ]);
    }

    #[test]
    fn dump_roundtrip() {
        let g = Grid::new(2, 16, 1.5).unwrap();
        let u = GridFunction::from_fn(g, |x| x[0] * 3.0 - x[1]).unwrap();
        let mut buf = Vec::new();
        u.write_dump(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"FCL1");
        assert_eq!(buf.len(), 4 + 24 + 8 * 256);
        let back = GridFunction::read_dump(&buf[..]).unwrap();
        assert_eq!(back, u);
        assert!(GridFunction::read_dump(&b"XXXX"[..]).is_err());
    }
}
