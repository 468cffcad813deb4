//! Groups as coordinate charts: group law, analytic Jacobians of the law, and
//! the Haar / modular data derived from them.

mod haar;
mod law;
mod parse;
mod sl2;

pub use haar::{haar_left_density, haar_right_density, modular_value, HaarOptions};
pub use law::Law;
pub use parse::{catalog, parse_group};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// A point of a group in chart coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub coords: Vec<f64>,
}

impl Element {
    pub fn new(coords: Vec<f64>) -> Self {
        Element { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

impl From<Vec<f64>> for Element {
    fn from(coords: Vec<f64>) -> Self {
        Element { coords }
    }
}

/// (d, m, h, n, n - h) for a group: dimension, maximal compact subgroup
/// dimension, helix dimension, noncompact Lie dimension and the exponent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DimensionProfile {
    pub d: u32,
    pub m: u32,
    pub h: u32,
    pub n: u32,
    pub bm_exponent: u32,
}

impl DimensionProfile {
    pub fn new(d: u32, m: u32, h: u32) -> Result<Self> {
        if m > d {
            return Err(Error::Invalid(format!("compact dimension {m} exceeds dimension {d}")));
        }
        let n = d - m;
        if h > n / 3 {
            return Err(Error::Invalid(format!("helix dimension {h} exceeds floor({n}/3)")));
        }
        Ok(DimensionProfile { d, m, h, n, bm_exponent: n - h })
    }

    pub fn sum(&self, other: &DimensionProfile) -> DimensionProfile {
        DimensionProfile {
            d: self.d + other.d,
            m: self.m + other.m,
            h: self.h + other.h,
            n: self.n + other.n,
            bm_exponent: self.bm_exponent + other.bm_exponent,
        }
    }
}

impl fmt::Display for DimensionProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(d={}, m={}, h={}, n={})", self.d, self.m, self.h, self.n)
    }
}

/// Coordinate axis of a chart.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub label: String,
    /// Lower bound of the admissible domain; `open_lo` marks it as excluded.
    pub lo: f64,
    pub hi: f64,
    pub open_lo: bool,
    /// Coordinates are taken modulo `period` and stored in `[0, period)`.
    pub period: Option<f64>,
    /// Left translation by the compact one-parameter subgroup along this axis
    /// shifts this coordinate and nothing else; the Haar density does not
    /// depend on it.
    pub compact: bool,
}

impl Axis {
    fn line(label: &str) -> Self {
        Axis {
            label: label.to_string(),
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
            open_lo: false,
            period: None,
            compact: false,
        }
    }

    fn positive(label: &str) -> Self {
        Axis { lo: 0.0, open_lo: true, ..Axis::line(label) }
    }

    fn circle(label: &str, period: f64) -> Self {
        Axis {
            label: label.to_string(),
            lo: 0.0,
            hi: period,
            open_lo: false,
            period: Some(period),
            compact: true,
        }
    }
}

/// A concrete group: chart, law and derived data. Cheap to clone.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupChart {
    inner: Arc<ChartInner>,
}

#[derive(Debug, PartialEq)]
struct ChartInner {
    name: String,
    law: Law,
    axes: Vec<Axis>,
    profile: DimensionProfile,
}

pub const MAX_DIM: usize = 12;

impl GroupChart {
    pub fn new(law: Law) -> Result<Self> {
        let (name, axes, profile) = law.describe()?;
        if axes.len() > MAX_DIM {
            return Err(Error::Invalid(format!("dimension {} exceeds {MAX_DIM}", axes.len())));
        }
        Ok(GroupChart { inner: Arc::new(ChartInner { name, law, axes, profile }) })
    }

    pub fn euclid(d: usize) -> Self {
        GroupChart::new(Law::Euclid(d)).expect("euclidean chart")
    }

    pub fn torus(d: usize) -> Self {
        GroupChart::new(Law::Torus(d)).expect("torus chart")
    }

    pub fn heis3() -> Self {
        GroupChart::new(Law::Heis3).expect("heisenberg chart")
    }

    pub fn aff() -> Self {
        GroupChart::new(Law::Aff).expect("affine chart")
    }

    pub fn aff_log() -> Self {
        GroupChart::new(Law::AffLog).expect("log-affine chart")
    }

    pub fn sl2() -> Self {
        GroupChart::new(Law::Sl2).expect("sl2 chart")
    }

    pub fn product(factors: Vec<GroupChart>) -> Result<Self> {
        GroupChart::new(Law::Product(factors))
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn law(&self) -> &Law {
        &self.inner.law
    }

    pub fn dim(&self) -> usize {
        self.inner.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.inner.axes
    }

    pub fn profile(&self) -> DimensionProfile {
        self.inner.profile
    }

    pub fn identity(&self) -> Element {
        let mut e = vec![0.0; self.dim()];
        self.inner.law.identity_into(&mut e);
        Element::new(e)
    }

    /// Bit mask of axes with `compact == true`.
    pub fn compact_mask(&self) -> u32 {
        self.axes()
            .iter()
            .enumerate()
            .filter(|(_, a)| a.compact)
            .fold(0, |m, (i, _)| m | (1 << i))
    }

    pub fn is_unimodular(&self) -> bool {
        self.inner.law.is_unimodular()
    }

    pub fn in_domain(&self, g: &[f64]) -> bool {
        g.len() == self.dim()
            && g.iter().zip(self.axes()).all(|(&x, a)| {
                x.is_finite() && if a.open_lo { x > a.lo } else { x >= a.lo } && x <= a.hi
            })
    }

    pub fn check(&self, g: &Element) -> Result<()> {
        if g.dim() != self.dim() {
            return Err(Error::Domain(format!(
                "element has {} coordinates, chart {} has dimension {}",
                g.dim(),
                self.name(),
                self.dim()
            )));
        }
        if !self.in_domain(&g.coords) {
            return Err(Error::Domain(format!("{:?} outside the domain of {}", g.coords, self.name())));
        }
        Ok(())
    }

    /// Reduce periodic coordinates into their fundamental interval.
    pub fn wrap(&self, g: &mut [f64]) {
        for (x, a) in g.iter_mut().zip(self.axes()) {
            if let Some(p) = a.period {
                *x = wrap_periodic(*x, p);
            }
        }
    }

    /// `b - a` along axis `i`, taken in `(-p/2, p/2]` on periodic axes.
    pub fn axis_delta(&self, i: usize, a: f64, b: f64) -> f64 {
        let d = b - a;
        match self.axes()[i].period {
            Some(p) => d - p * (d / p).round(),
            None => d,
        }
    }

    pub fn mul_into(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        self.inner.law.mul_into(a, b, out);
    }

    pub fn inv_into(&self, a: &[f64], out: &mut [f64]) {
        self.inner.law.inv_into(a, out);
    }

    /// Row-major Jacobians of `(a, b) -> a b`: `ja[i*d+j] = d(ab)_i / da_j`.
    pub fn jac_mul(&self, a: &[f64], b: &[f64], ja: &mut [f64], jb: &mut [f64]) {
        self.inner.law.jac_into(a, b, ja, jb);
    }

    pub fn multiply(&self, a: &Element, b: &Element) -> Element {
        let mut out = vec![0.0; self.dim()];
        self.mul_into(&a.coords, &b.coords, &mut out);
        Element::new(out)
    }

    pub fn invert(&self, a: &Element) -> Element {
        let mut out = vec![0.0; self.dim()];
        self.inv_into(&a.coords, &mut out);
        Element::new(out)
    }

    pub fn left_density_closed(&self, g: &[f64]) -> Option<f64> {
        self.inner.law.left_density_closed(g)
    }

    pub fn modular_closed(&self, g: &[f64]) -> Option<f64> {
        self.inner.law.modular_closed(g)
    }

    /// Left Haar density `1/|det D_y(g y)|_{y=e}` from the analytic Jacobian.
    pub fn left_density(&self, g: &[f64]) -> f64 {
        let d = self.dim();
        let e = self.identity();
        let mut ja = [0.0; MAX_DIM * MAX_DIM];
        let mut jb = [0.0; MAX_DIM * MAX_DIM];
        self.jac_mul(g, &e.coords, &mut ja[..d * d], &mut jb[..d * d]);
        1.0 / det(&mut jb[..d * d], d).abs()
    }

    /// Modular function `lambda(g) |det D_y(y g)|_{y=e}` from the analytic Jacobian.
    pub fn modular(&self, g: &[f64]) -> f64 {
        let d = self.dim();
        let e = self.identity();
        let mut ja = [0.0; MAX_DIM * MAX_DIM];
        let mut jb = [0.0; MAX_DIM * MAX_DIM];
        self.jac_mul(&e.coords, g, &mut ja[..d * d], &mut jb[..d * d]);
        self.left_density(g) * det(&mut ja[..d * d], d).abs()
    }

    pub fn right_density(&self, g: &[f64]) -> f64 {
        self.left_density(g) / self.modular(g)
    }
}

impl fmt::Display for GroupChart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) fn wrap_periodic(x: f64, p: f64) -> f64 {
    let r = x.rem_euclid(p);
    if r >= p {
        0.0
    } else {
        r
    }
}

/// Determinant by Gaussian elimination with partial pivoting; destroys `m`.
pub fn det(m: &mut [f64], d: usize) -> f64 {
    let mut acc = 1.0;
    for c in 0..d {
        let mut piv = c;
        for r in c + 1..d {
            if m[r * d + c].abs() > m[piv * d + c].abs() {
                piv = r;
            }
        }
        let p = m[piv * d + c];
        if p == 0.0 {
            return 0.0;
        }
        if piv != c {
            for k in 0..d {
                m.swap(c * d + k, piv * d + k);
            }
            acc = -acc;
        }
        acc *= p;
        for r in c + 1..d {
            let f = m[r * d + c] / p;
            if f != 0.0 {
                for k in c..d {
                    m[r * d + k] -= f * m[c * d + k];
                }
            }
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn det_of_small_matrices() {
        let mut a = [2.0, 0.0, 0.0, 3.0];
        assert_eq!(det(&mut a, 2), 6.0);
        let mut b = [0.0, 1.0, 1.0, 0.0];
        assert_eq!(det(&mut b, 2), -1.0);
        let mut c = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 10.0];
        assert!((det(&mut c, 3) + 3.0).abs() < 1e-12);
    }

    #[test]
    fn profile_rejects_helix_above_bound() {
        assert!(DimensionProfile::new(3, 0, 1).is_ok());
        assert!(DimensionProfile::new(3, 1, 1).is_err());
        assert!(DimensionProfile::new(2, 3, 0).is_err());
    }

    #[test]
    fn wrap_stays_in_fundamental_interval() {
        let p = std::f64::consts::TAU;
        for x in [-1e-18, -p, 7.0 * p, 3.0, -0.5] {
            let w = wrap_periodic(x, p);
            assert!((0.0..p).contains(&w), "{x} -> {w}");
        }
    }

    #[test]
    fn domain_checks() {
        let aff = GroupChart::aff();
        assert!(aff.in_domain(&[1.0, -3.0]));
        assert!(!aff.in_domain(&[0.0, 1.0]));
        assert!(aff.check(&Element::new(vec![1.0])).is_err());
    }
}
