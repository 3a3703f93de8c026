//! Exterior dictionaries, DN matrices, the duality check and the Alessandrini identity.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{bump, BumpSpec, NodeSet};
use crate::grid::{GridFunction, Point};
use crate::operator::ForwardProblem;
use crate::spectral::{self, weighted_triple};

const GRAM_CONDITION_LIMIT: f64 = 1e10;

/// Finite family of exterior data supported in one window.
#[derive(Debug, Clone)]
pub struct ExteriorDictionary {
    host: NodeSet,
    elements: Vec<GridFunction>,
    centers: Vec<Point>,
    radius: f64,
}

impl ExteriorDictionary {
    /// Bumps of the given radius centred on every `stride`-th host node (per axis)
    /// whose support fits in the host.
    pub fn lattice(host: &NodeSet, radius: f64, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("dictionary stride must be >= 1".into()));
        }
        let grid = *host.grid();
        let origin = grid.multi(host.indices()[0]);
        let mut elements = Vec::new();
        let mut centers = Vec::new();
        for &i in host.indices() {
            let m = grid.multi(i);
            let on_lattice = (0..grid.dims()).all(|k| (m[k] + grid.points() - origin[k]) % stride == 0);
            if !on_lattice {
                continue;
            }
            let c = grid.coord(i);
            if let Ok(b) = bump(&grid, &BumpSpec { center: c, radius }, Some(host)) {
                elements.push(b);
                centers.push(c);
            }
        }
        Self::from_parts(host.clone(), elements, centers, radius)
    }

    /// Validates supports and linear independence.
    pub fn from_parts(host: NodeSet, elements: Vec<GridFunction>, centers: Vec<Point>, radius: f64) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::Geometry(format!("no dictionary element fits in {}", host.label())));
        }
        if centers.len() != elements.len() {
            return Err(Error::LengthMismatch { expected: elements.len(), actual: centers.len() });
        }
        for (k, e) in elements.iter().enumerate() {
            if e.grid() != host.grid() {
                return Err(Error::GridMismatch);
            }
            if !host.supports(e) {
                return Err(Error::Support(format!("dictionary element {k} escapes {}", host.label())));
            }
        }
        let dict = Self { host, elements, centers, radius };
        let cond = condition_spd(&dict.gram());
        if !(cond < GRAM_CONDITION_LIMIT) {
            return Err(Error::InvalidArgument(format!(
                "dictionary Gram condition {cond:.3e} exceeds {GRAM_CONDITION_LIMIT:.0e}; elements are nearly dependent"
            )));
        }
        Ok(dict)
    }

    /// First `k` elements.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidArgument(format!("prefix length {k} not in 1..={}", self.len())));
        }
        Ok(Self {
            host: self.host.clone(),
            elements: self.elements[..k].to_vec(),
            centers: self.centers[..k].to_vec(),
            radius: self.radius,
        })
    }

    pub fn host(&self) -> &NodeSet {
        &self.host
    }

    pub fn elements(&self) -> &[GridFunction] {
        &self.elements
    }

    pub fn centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// `G_ij = <f_i, f_j>`.
    pub fn gram(&self) -> DMatrix<f64> {
        let n = self.len();
        let hv = self.host.grid().cell_volume();
        DMatrix::from_fn(n, n, |i, j| hv * spectral::dot(self.elements[i].values(), self.elements[j].values()))
    }

    /// `sum c_i f_i`.
    pub fn combine(&self, coefficients: &[f64]) -> Result<GridFunction> {
        if coefficients.len() != self.len() {
            return Err(Error::LengthMismatch { expected: self.len(), actual: coefficients.len() });
        }
        let mut out = vec![0.0; self.host.grid().len()];
        for (c, e) in coefficients.iter().zip(&self.elements) {
            for (o, v) in out.iter_mut().zip(e.values()) {
                *o += c * v;
            }
        }
        GridFunction::new(*self.host.grid(), out)
    }

    /// Sidecar descriptor: one row per element with its centre and radius.
    pub fn write_descriptor<W: Write>(&self, name: &str, w: W) -> Result<()> {
        let dims = self.host.grid().dims();
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["dictionary".to_string(), "index".to_string()];
        header.extend((0..dims).map(|k| format!("x{k}")));
        header.push("radius".into());
        out.write_record(&header)?;
        for (k, c) in self.centers.iter().enumerate() {
            let mut row = vec![name.to_string(), k.to_string()];
            row.extend((0..dims).map(|d| fmt_real(c[d])));
            row.push(fmt_real(self.radius));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Seventeen significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn condition_spd(m: &DMatrix<f64>) -> f64 {
    let e = m.clone().symmetric_eigenvalues();
    let (lo, hi) = (e.min(), e.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Measurements `<Lambda f_i, g_j>` against two dictionaries.
#[derive(Debug, Clone, PartialEq)]
pub struct DnMatrix {
    pub entries: DMatrix<f64>,
    pub adjoint: bool,
}

impl DnMatrix {
    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    /// Row = datum index, column = test-function index.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["row".to_string()];
        header.extend((0..self.cols()).map(|j| format!("g{j}")));
        out.write_record(&header)?;
        for i in 0..self.rows() {
            let mut row = vec![i.to_string()];
            row.extend((0..self.cols()).map(|j| fmt_real(self.entries[(i, j)])));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().from_reader(r);
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| Error::Format(format!("bad DN entry {v:?}: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(vals);
        }
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Format("ragged DN matrix".into()));
        }
        let entries = DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]);
        Ok(Self { entries, adjoint: false })
    }
}

fn check_host(problem: &ForwardProblem, dict: &ExteriorDictionary) -> Result<()> {
    if dict.host().grid() != problem.grid() {
        return Err(Error::GridMismatch);
    }
    if dict.elements().iter().any(|e| !problem.omega().avoids(e)) {
        return Err(Error::Support(format!("dictionary on {} touches the domain", dict.host().label())));
    }
    Ok(())
}

/// `entries[i][j] = B_P(u_{f_i}, g_j)`.
pub fn assemble_dn(problem: &ForwardProblem, dict1: &ExteriorDictionary, dict2: &ExteriorDictionary) -> Result<DnMatrix> {
    assemble(problem, dict1, dict2, false)
}

/// `entries[j][i] = B_P^*(u^*_{g_j}, f_i)`, with `dict2` as data.
pub fn assemble_dn_adjoint(
    problem: &ForwardProblem,
    dict2: &ExteriorDictionary,
    dict1: &ExteriorDictionary,
) -> Result<DnMatrix> {
    assemble(problem, dict2, dict1, true)
}

fn assemble(problem: &ForwardProblem, data: &ExteriorDictionary, tests: &ExteriorDictionary, adjoint: bool) -> Result<DnMatrix> {
    check_host(problem, data)?;
    check_host(problem, tests)?;
    let rows: Vec<Vec<f64>> = data
        .elements()
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let wrap = |e: Error| Error::Dictionary { index: i, source: Box::new(e) };
            let u = if adjoint { problem.solve_adjoint(f, None) } else { problem.solve_forward(f, None) }
                .map_err(wrap)?
                .u;
            tests
                .elements()
                .iter()
                .map(|g| if adjoint { problem.bilinear_adjoint(&u, g) } else { problem.bilinear(&u, g) })
                .collect::<Result<Vec<f64>>>()
                .map_err(wrap)
        })
        .collect::<Result<Vec<_>>>()?;
    let entries = DMatrix::from_fn(data.len(), tests.len(), |i, j| rows[i][j]);
    if entries.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidProblem("non-finite DN entry".into()));
    }
    Ok(DnMatrix { entries, adjoint })
}

/// `max |DN[i][j] - DN*[j][i]| / max |DN|`.
pub fn duality_deviation(dn: &DnMatrix, dn_adjoint: &DnMatrix) -> Result<f64> {
    let t = dn_adjoint.entries.transpose();
    if t.shape() != dn.entries.shape() {
        return Err(Error::LengthMismatch { expected: dn.entries.len(), actual: t.len() });
    }
    let scale = dn.entries.amax().max(f64::MIN_POSITIVE);
    Ok((&dn.entries - t).amax() / scale)
}

/// Assembles both DN matrices and returns their duality deviation.
pub fn check_duality(problem: &ForwardProblem, dict1: &ExteriorDictionary, dict2: &ExteriorDictionary) -> Result<f64> {
    let dn = assemble_dn(problem, dict1, dict2)?;
    let dn_star = assemble_dn_adjoint(problem, dict2, dict1)?;
    duality_deviation(&dn, &dn_star)
}

/// Both sides of the integral identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlessandriniReport {
    pub lhs: f64,
    pub rhs: f64,
}

impl AlessandriniReport {
    /// `|lhs - rhs| / max(1, |lhs|)`.
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.lhs.abs().max(1.0)
    }
}

/// `<(Lambda_1 - Lambda_2) f1, f2>` against `sum <a_{1,alpha} - a_{2,alpha}, (D^alpha u_1) u_2^*>`.
pub fn alessandrini(
    p1: &ForwardProblem,
    p2: &ForwardProblem,
    f1: &GridFunction,
    f2: &GridFunction,
) -> Result<AlessandriniReport> {
    if p1.grid() != p2.grid() || f1.grid() != p1.grid() || f2.grid() != p1.grid() {
        return Err(Error::GridMismatch);
    }
    if p1.s() != p2.s() || p1.omega() != p2.omega() || p1.lambda_shift() != p2.lambda_shift() {
        return Err(Error::InvalidProblem("problems must share s, the domain and the shift".into()));
    }
    if !p1.omega().avoids(f1) || !p1.omega().avoids(f2) {
        return Err(Error::Support("exterior data must vanish on the domain".into()));
    }
    let u1 = p1.solve_forward(f1, None)?.u;
    let u2 = p2.solve_forward(f1, None)?.u;
    let u2_star = p2.solve_adjoint(f2, None)?.u;
    let lhs = p1.bilinear(&u1, f2)? - p2.bilinear(&u2, f2)?;
    let delta = p1.coefficients().difference(p2.coefficients())?;
    let mut rhs = 0.0;
    for (alpha, a) in delta.iter() {
        let d = spectral::derivative(&u1, alpha)?;
        rhs += weighted_triple(a.values(), d.values(), u2_star.values());
    }
    rhs *= p1.grid().cell_volume();
    Ok(AlessandriniReport { lhs, rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_nodeset, monomial_cutoff, Label, Shape};
    use crate::grid::{Grid, MultiIndex};
    use crate::operator::PdoCoefficients;
    use crate::spectral::pairing;

    struct Setup {
        grid: Grid,
        omega: NodeSet,
        d1: ExteriorDictionary,
        d2: ExteriorDictionary,
    }

    fn setup() -> Setup {
        let grid = Grid::new(1, 128, 4.0).unwrap();
        let h = grid.spacing();
        let omega = make_nodeset(grid, Shape::ball(&[0.0], 1.5), Label::Omega).unwrap();
        let w1 = make_nodeset(grid, Shape::cuboid(&[-3.8], &[-1.5 - 2.0 * h]), Label::W1).unwrap();
        let w2 = make_nodeset(grid, Shape::cuboid(&[1.5 + 2.0 * h], &[3.8]), Label::W2).unwrap();
        let d1 = ExteriorDictionary::lattice(&w1, 3.0 * h, 2).unwrap();
        let d2 = ExteriorDictionary::lattice(&w2, 3.0 * h, 2).unwrap();
        Setup { grid, omega, d1, d2 }
    }

    fn coefficient(s: &Setup, c: f64, amp: f64) -> GridFunction {
        let h = s.grid.spacing();
        let cut = monomial_cutoff(&MultiIndex::zero(1), &Shape::ball(&[0.0], 1.5 - 9.0 * h), 8.0 * h, &s.omega).unwrap();
        GridFunction::from_fn(s.grid, |x| amp * (-(x[0] - c).powi(2) / 0.5).exp()).unwrap().mul(&cut).unwrap()
    }

    fn m1(s: &Setup) -> ForwardProblem {
        let p = PdoCoefficients::new(s.grid, 1)
            .with(MultiIndex::zero(1), coefficient(s, 0.0, 0.8))
            .unwrap()
            .with(MultiIndex::unit(1, 0), coefficient(s, 0.2, 0.5))
            .unwrap();
        ForwardProblem::new(0.7, p, s.omega.clone()).unwrap()
    }

    #[test]
    fn lattice_dictionary_shape() {
        let s = setup();
        assert!(s.d1.len() >= 12);
        assert!(s.d1.elements().iter().all(|e| s.d1.host().supports(e)));
        assert!(ExteriorDictionary::lattice(s.d1.host(), 3.0 * s.grid.spacing(), 0).is_err());
        let mut buf = Vec::new();
        s.d1.write_descriptor("d1", &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("dictionary,index,x0,radius\n"));
        assert_eq!(text.lines().count(), s.d1.len() + 1);
    }

    #[test]
    fn free_dn_matches_direct_pairing() {
        let s = setup();
        let prob = ForwardProblem::new(0.7, PdoCoefficients::new(s.grid, 0), s.omega.clone()).unwrap();
        let dn = assemble_dn(&prob, &s.d1, &s.d2).unwrap();
        for (i, f) in s.d1.elements().iter().enumerate().step_by(3) {
            let u = prob.solve_forward(f, None).unwrap().u;
            let lu = spectral::frac_laplacian(&u, 0.7).unwrap();
            for (j, g) in s.d2.elements().iter().enumerate().step_by(3) {
                let direct = pairing(&lu, g).unwrap();
                assert!((dn.entries[(i, j)] - direct).abs() <= 1e-10 * dn.entries.amax());
            }
        }
        assert!(duality_deviation(&dn, &assemble_dn_adjoint(&prob, &s.d2, &s.d1).unwrap()).unwrap() <= 1e-10);
    }

    #[test]
    fn duality_for_first_order_problem() {
        let s = setup();
        let dev = check_duality(&m1(&s), &s.d1, &s.d2).unwrap();
        assert!(dev <= 1e-8, "deviation {dev}");
    }

    #[test]
    fn entries_ignore_interior_modifications() {
        let s = setup();
        let prob = m1(&s);
        let f = &s.d1.elements()[3];
        let g = &s.d2.elements()[2];
        let u = prob.solve_forward(f, None).unwrap().u;
        let base = prob.bilinear(&u, g).unwrap();
        let phi = coefficient(&s, -0.4, 3.0);
        let moved = prob.bilinear(&u, &(g + &phi)).unwrap();
        assert!((base - moved).abs() <= 1e-9 * base.abs().max(1e-12));
        let u_shift = prob.solve_forward(&(f + &phi), None).unwrap().u;
        assert!((prob.bilinear(&u_shift, g).unwrap() - base).abs() <= 1e-9 * base.abs().max(1e-12));
    }

    #[test]
    fn zero_element_gives_zero_row() {
        let s = setup();
        let prob = m1(&s);
        let mut elements = s.d1.elements().to_vec();
        elements[0] = GridFunction::zeros(s.grid);
        let d = ExteriorDictionary { elements, ..s.d1.clone() };
        let dn = assemble_dn(&prob, &d, &s.d2).unwrap();
        assert!(dn.entries.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn alessandrini_identity_cases() {
        let s = setup();
        let free = ForwardProblem::new(0.7, PdoCoefficients::new(s.grid, 1), s.omega.clone()).unwrap();
        let p1 = m1(&s);
        let f1 = &s.d1.elements()[4];
        let f2 = &s.d2.elements()[5];
        let same = alessandrini(&p1, &p1, f1, f2).unwrap();
        assert!(same.lhs.abs() <= 1e-9 && same.rhs.abs() <= 1e-9);
        let r = alessandrini(&p1, &free, f1, f2).unwrap();
        assert!(r.residual() <= 1e-7, "{r:?}");
        assert!(r.lhs.abs() > 1e-6);
        // shared a0: only the first-order term survives
        let shared = PdoCoefficients::new(s.grid, 1).with(MultiIndex::zero(1), coefficient(&s, 0.0, 0.8)).unwrap();
        let p2 = ForwardProblem::new(0.7, shared, s.omega.clone()).unwrap();
        let r = alessandrini(&p1, &p2, f1, f2).unwrap();
        let u1 = p1.solve_forward(f1, None).unwrap().u;
        let u2s = p2.solve_adjoint(f2, None).unwrap().u;
        let du = spectral::derivative(&u1, &MultiIndex::unit(1, 0)).unwrap();
        let term = pairing(&coefficient(&s, 0.2, 0.5), &du.mul(&u2s).unwrap()).unwrap();
        assert!((r.rhs - term).abs() <= 1e-12 * term.abs().max(1e-300));
        assert!(r.residual() <= 1e-7);
        assert!(alessandrini(&p1, &free, &coefficient(&s, 0.0, 1.0), f2).is_err());
    }

    #[test]
    fn dn_csv_roundtrip() {
        let s = setup();
        let prob = m1(&s);
        let d1 = s.d1.prefix(3).unwrap();
        let d2 = s.d2.prefix(4).unwrap();
        let dn = assemble_dn(&prob, &d1, &d2).unwrap();
        let mut buf = Vec::new();
        dn.write_csv(&mut buf).unwrap();
        let back = DnMatrix::read_csv(&buf[..]).unwrap();
        assert_eq!(back.entries, dn.entries);
    }
}
