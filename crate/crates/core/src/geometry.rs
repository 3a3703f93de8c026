//! Node sets for the domain and the exterior windows, smooth bumps and
//! cutoff-localized monomials.

use std::fmt;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction, MultiIndex, Point};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Label {
    Omega,
    W1,
    W2,
    Custom(String),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Omega => write!(f, "Omega"),
            Label::W1 => write!(f, "W1"),
            Label::W2 => write!(f, "W2"),
            Label::Custom(name) => write!(f, "{name}"),
        }
    }
}

/// Open ball or open axis-aligned box, in box coordinates (no wrap-around).
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Ball { center: Point, radius: f64 },
    Box { lo: Point, hi: Point },
}

impl Shape {
    pub fn ball(center: &[f64], radius: f64) -> Self {
        Shape::Ball { center: to_point(center), radius }
    }

    pub fn cuboid(lo: &[f64], hi: &[f64]) -> Self {
        Shape::Box { lo: to_point(lo), hi: to_point(hi) }
    }

    pub fn contains(&self, grid: &Grid, x: &Point) -> bool {
        match self {
            Shape::Ball { center, radius } => grid.distance(x, center) < *radius,
            Shape::Box { lo, hi } => (0..grid.dims()).all(|k| lo[k] < x[k] && x[k] < hi[k]),
        }
    }

    /// Euclidean distance from `x` to the closed shape (0 inside).
    pub fn distance_to(&self, grid: &Grid, x: &Point) -> f64 {
        match self {
            Shape::Ball { center, radius } => (grid.distance(x, center) - radius).max(0.0),
            Shape::Box { lo, hi } => (0..grid.dims())
                .map(|k| (lo[k] - x[k]).max(x[k] - hi[k]).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Whether the closed ball `B(y, r)` sits inside the closed shape.
    pub fn contains_ball(&self, grid: &Grid, y: &Point, r: f64) -> bool {
        let tol = 1e-12;
        match self {
            Shape::Ball { center, radius } => grid.distance(y, center) + r <= radius + tol,
            Shape::Box { lo, hi } => {
                (0..grid.dims()).all(|k| lo[k] + r <= y[k] + tol && y[k] + r <= hi[k] + tol)
            }
        }
    }

    /// Inner parallel shape at depth `d`; `None` if nothing is left.
    pub fn shrunk(&self, grid: &Grid, d: f64) -> Option<Self> {
        match self {
            Shape::Ball { center, radius } => {
                (radius - d > 0.0).then_some(Shape::Ball { center: *center, radius: radius - d })
            }
            Shape::Box { lo, hi } => {
                let mut l = *lo;
                let mut h = *hi;
                for k in 0..grid.dims() {
                    l[k] += d;
                    h[k] -= d;
                    if l[k] >= h[k] {
                        return None;
                    }
                }
                Some(Shape::Box { lo: l, hi: h })
            }
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let big = grid.half_length();
        let inside = |v: f64| v.is_finite() && (-big..=big).contains(&v);
        match self {
            Shape::Ball { center, radius } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::Geometry(format!("ball radius must be positive, got {radius}")));
                }
                if !(0..grid.dims()).all(|k| inside(center[k] - radius) && inside(center[k] + radius)) {
                    return Err(Error::Geometry("ball does not fit in the periodic box".into()));
                }
            }
            Shape::Box { lo, hi } => {
                for k in 0..grid.dims() {
                    if !(inside(lo[k]) && inside(hi[k]) && lo[k] < hi[k]) {
                        return Err(Error::Geometry(format!(
                            "box bounds [{}, {}] on axis {k} invalid or outside the periodic box",
                            lo[k], hi[k]
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

fn to_point(v: &[f64]) -> Point {
    let mut p = [0.0; 2];
    for (slot, x) in p.iter_mut().zip(v) {
        *slot = *x;
    }
    p
}

/// Labeled subset of grid nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeSet {
    grid: Grid,
    mask: Vec<bool>,
    indices: Vec<usize>,
    label: Label,
    shape: Option<Shape>,
    margin: f64,
}

impl NodeSet {
    /// Nodes strictly inside `shape`.
    pub fn from_shape(grid: Grid, shape: Shape, label: Label) -> Result<Self> {
        shape.validate(&grid)?;
        let mask = (0..grid.len()).map(|i| shape.contains(&grid, &grid.coord(i))).collect();
        let mut set = Self::from_mask(grid, mask, label)?;
        set.shape = Some(shape);
        Ok(set)
    }

    pub fn from_mask(grid: Grid, mask: Vec<bool>, label: Label) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(Error::LengthMismatch { expected: grid.len(), actual: mask.len() });
        }
        let indices: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if indices.is_empty() {
            return Err(Error::Geometry(format!("node set {label} is empty")));
        }
        Ok(Self { grid, mask, indices, label, shape: None, margin: f64::INFINITY })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Node indices in increasing flat order.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn label(&self) -> &Label {
        &self.label
    }

    pub fn shape(&self) -> Option<&Shape> {
        self.shape.as_ref()
    }

    /// Distance to the nearest other registered set (infinite when unregistered).
    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Smallest periodic node-to-node distance between two sets.
    pub fn distance_to(&self, other: &NodeSet) -> f64 {
        let mut best = f64::INFINITY;
        for &i in &self.indices {
            let x = self.grid.coord(i);
            for &j in &other.indices {
                best = best.min(self.grid.periodic_distance(&x, &self.grid.coord(j)));
            }
        }
        best
    }

    /// Whether the support of `u` lies inside the set.
    pub fn supports(&self, u: &GridFunction) -> bool {
        u.values().iter().zip(&self.mask).all(|(&v, &m)| m || v == 0.0)
    }

    /// Whether `u` vanishes on every node of the set.
    pub fn avoids(&self, u: &GridFunction) -> bool {
        self.indices.iter().all(|&i| u.values()[i] == 0.0)
    }
}

/// Builds a labeled node set from a shape.
pub fn make_nodeset(grid: Grid, shape: Shape, label: Label) -> Result<NodeSet> {
    NodeSet::from_shape(grid, shape, label)
}

/// Registry of labeled node sets that enforces pairwise separation of at least `2h`.
#[derive(Debug, Clone)]
pub struct Layout {
    grid: Grid,
    sets: Vec<NodeSet>,
}

impl Layout {
    pub fn new(grid: Grid) -> Self {
        Self { grid, sets: Vec::new() }
    }

    pub fn register(&mut self, mut set: NodeSet) -> Result<&NodeSet> {
        if set.grid != self.grid {
            return Err(Error::GridMismatch);
        }
        if self.sets.iter().any(|s| s.label == set.label) {
            return Err(Error::Geometry(format!("label {} registered twice", set.label)));
        }
        let min_gap = 2.0 * self.grid.spacing() * (1.0 - 1e-12);
        for other in &mut self.sets {
            let d = set.distance_to(other);
            if d < min_gap {
                return Err(Error::Geometry(format!(
                    "{} and {} are closer than 2h (node distance {d:.6})",
                    set.label, other.label
                )));
            }
            set.margin = set.margin.min(d);
            other.margin = other.margin.min(d);
        }
        self.sets.push(set);
        Ok(self.sets.last().expect("just pushed"))
    }

    pub fn get(&self, label: &Label) -> Option<&NodeSet> {
        self.sets.iter().find(|s| &s.label == label)
    }

    pub fn sets(&self) -> &[NodeSet] {
        &self.sets
    }
}

/// Smooth unit-mass bump `exp(-1/(1 - |x-c|^2/rho^2))`.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpSpec {
    pub center: Point,
    pub radius: f64,
}

impl BumpSpec {
    pub fn new(center: &[f64], radius: f64) -> Self {
        Self { center: to_point(center), radius }
    }
}

/// Unit-mass bump on the torus. With `host`, the support must lie inside it.
pub fn bump(grid: &Grid, spec: &BumpSpec, host: Option<&NodeSet>) -> Result<GridFunction> {
    if !(spec.radius.is_finite() && spec.radius > 0.0) {
        return Err(Error::Geometry(format!("bump radius must be positive, got {}", spec.radius)));
    }
    let values: Vec<f64> = (0..grid.len())
        .map(|i| {
            let d = grid.periodic_distance(&grid.coord(i), &spec.center) / spec.radius;
            if d < 1.0 {
                (-1.0 / (1.0 - d * d)).exp()
            } else {
                0.0
            }
        })
        .collect();
    let mass: f64 = values.iter().sum::<f64>() * grid.cell_volume();
    if mass == 0.0 {
        return Err(Error::Geometry("bump support contains no grid node".into()));
    }
    let u = GridFunction::new(*grid, values.into_iter().map(|v| v / mass).collect())?;
    if let Some(host) = host {
        if host.grid() != grid {
            return Err(Error::GridMismatch);
        }
        if !host.supports(&u) {
            return Err(Error::Support(format!("bump support escapes {}", host.label())));
        }
    }
    Ok(u)
}

fn smooth_step(t: f64) -> f64 {
    let g = |t: f64| if t > 0.0 { (-1.0 / t).exp() } else { 0.0 };
    let (a, b) = (g(t), g(1.0 - t));
    a / (a + b)
}

/// `x^alpha` times a smooth cutoff equal to 1 on `plateau` and 0 beyond distance `width`.
/// The collar must stay inside `omega`.
pub fn monomial_cutoff(
    alpha: &MultiIndex,
    plateau: &Shape,
    width: f64,
    omega: &NodeSet,
) -> Result<GridFunction> {
    let grid = *omega.grid();
    if alpha.dims() != grid.dims() {
        return Err(Error::InvalidMultiIndex(format!("{alpha} does not match dimension {}", grid.dims())));
    }
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::Geometry(format!("cutoff width must be positive, got {width}")));
    }
    let mut values = vec![0.0; grid.len()];
    for (i, slot) in values.iter_mut().enumerate() {
        let x = grid.coord(i);
        let chi = smooth_step(1.0 - plateau.distance_to(&grid, &x) / width);
        if chi == 0.0 {
            continue;
        }
        if !omega.contains(i) {
            return Err(Error::Geometry("cutoff collar exits the domain".into()));
        }
        *slot = chi * alpha.monomial(&x);
    }
    GridFunction::new(grid, values)
}

/// Values of `u` on the nodes of `set`, in index order.
pub fn restrict(u: &GridFunction, set: &NodeSet) -> Result<Vec<f64>> {
    if u.grid() != set.grid() {
        return Err(Error::GridMismatch);
    }
    Ok(set.indices().iter().map(|&i| u.values()[i]).collect())
}

/// Field equal to `values` on `set` and zero elsewhere.
pub fn extend_zero(values: &[f64], set: &NodeSet) -> Result<GridFunction> {
    if values.len() != set.len() {
        return Err(Error::LengthMismatch { expected: set.len(), actual: values.len() });
    }
    let mut out = vec![0.0; set.grid().len()];
    for (&i, &v) in set.indices().iter().zip(values) {
        out[i] = v;
    }
    GridFunction::new(*set.grid(), out)
}

/// `u` with its values on `set` replaced by zero.
pub fn zero_on(u: &GridFunction, set: &NodeSet) -> GridFunction {
    let mut v = u.values().to_vec();
    for &i in set.indices() {
        v[i] = 0.0;
    }
    GridFunction::from_raw(*u.grid(), v)
}
