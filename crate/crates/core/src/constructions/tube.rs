//! Tubes `D_r = {g : d(eK, gK) <= r}` around the maximal compact subgroup.
//!
//! The quotient metric is Euclidean on line factors, hyperbolic on the
//! SL(2,R) factor (upper half plane, base point `i`), trivial on circle
//! factors, and the l2 combination across factors. Compact axes are
//! saturated, so cells live on the remaining axes only.

use crate::error::{Error, Result};
use crate::group::{GroupChart, Law};
use crate::setrep::{CellSet, Grid, Role};

#[derive(Clone, Debug)]
pub struct TubeSpec {
    pub chart: GroupChart,
    pub radius: f64,
    pub grid: Grid,
    /// `Outer`: cells meeting the open tube. `Inner`: cells inside it.
    pub cover: Role,
}

impl TubeSpec {
    /// Grid with side `2 r` on line axes and one period on compact axes.
    pub fn new(chart: &GroupChart, radius: f64, level: u32) -> Result<TubeSpec> {
        let grid = tube_grid(chart, 2.0 * radius, level)?;
        Ok(TubeSpec { chart: chart.clone(), radius, grid, cover: Role::Outer })
    }

    pub fn on_grid(chart: &GroupChart, radius: f64, grid: Grid) -> TubeSpec {
        TubeSpec { chart: chart.clone(), radius, grid, cover: Role::Outer }
    }

    pub fn inner(mut self) -> TubeSpec {
        self.cover = Role::Inner;
        self
    }
}

/// Grid with base `side` on noncompact axes and the period on compact ones.
pub fn tube_grid(chart: &GroupChart, side: f64, level: u32) -> Result<Grid> {
    let base = chart.axes().iter().map(|a| a.period.unwrap_or(side)).collect();
    Grid::new(chart, base, level)
}

/// Factor kinds along the chart axes.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Factor {
    Line,
    Circle,
    /// Offset of the `(theta, t, u)` block.
    Sl2,
}

fn factors(chart: &GroupChart) -> Result<Vec<(usize, Factor)>> {
    fn walk(law: &Law, off: usize, out: &mut Vec<(usize, Factor)>, name: &str) -> Result<()> {
        match law {
            Law::Euclid(d) => out.extend((0..*d).map(|i| (off + i, Factor::Line))),
            Law::Torus(d) => out.extend((0..*d).map(|i| (off + i, Factor::Circle))),
            Law::Sl2 => out.push((off, Factor::Sl2)),
            Law::Product(fs) => {
                let mut o = off;
                for f in fs {
                    walk(f.law(), o, out, name)?;
                    o += f.dim();
                }
            }
            _ => {
                return Err(Error::Unsupported(format!(
                    "tubes need a quotient metric; {name} is not built from r:d, t:d and sl2r"
                )))
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(chart.law(), 0, &mut out, chart.name())?;
    Ok(out)
}

/// `cosh d(i, g i)` for `g = k(theta) a(t) n(u)`.
pub fn sl2_cosh_distance(t: f64, u: f64) -> f64 {
    0.5 * (t.exp() * (1.0 + u * u) + (-t).exp())
}

/// Quotient distance `d(eK, gK)`.
pub fn quotient_distance(chart: &GroupChart, g: &[f64]) -> Result<f64> {
    let mut sq = 0.0;
    for (a, f) in factors(chart)? {
        sq += match f {
            Factor::Line => g[a] * g[a],
            Factor::Circle => 0.0,
            Factor::Sl2 => sl2_cosh_distance(g[a + 1], g[a + 2]).max(1.0).acosh().powi(2),
        };
    }
    Ok(sq.sqrt())
}

/// Smallest and largest squared distance over a `(t, u)` box.
fn sl2_range(lo: [f64; 2], hi: [f64; 2]) -> (f64, f64) {
    // increasing in |u| and convex in t with minimum at -ln(1 + u^2) / 2
    let um = if lo[1] > 0.0 {
        lo[1]
    } else if hi[1] < 0.0 {
        hi[1]
    } else {
        0.0
    };
    let ts = (-0.5 * (1.0 + um * um).ln()).clamp(lo[0], hi[0]);
    let cmin = sl2_cosh_distance(ts, um);
    let umax = lo[1].abs().max(hi[1].abs());
    let cmax = sl2_cosh_distance(lo[0], umax).max(sl2_cosh_distance(hi[0], umax));
    (cmin.max(1.0).acosh().powi(2), cmax.max(1.0).acosh().powi(2))
}

fn line_range(lo: f64, hi: f64) -> (f64, f64) {
    let m = if lo > 0.0 {
        lo
    } else if hi < 0.0 {
        -hi
    } else {
        0.0
    };
    (m * m, lo.abs().max(hi.abs()).powi(2))
}

/// Squared distance range over the cell `[lo, hi]`.
fn cell_range(fs: &[(usize, Factor)], lo: &[f64], hi: &[f64]) -> (f64, f64) {
    let (mut a, mut b) = (0.0, 0.0);
    for &(i, f) in fs {
        let (x, y) = match f {
            Factor::Line => line_range(lo[i], hi[i]),
            Factor::Circle => (0.0, 0.0),
            Factor::Sl2 => sl2_range([lo[i + 1], lo[i + 2]], [hi[i + 1], hi[i + 2]]),
        };
        a += x;
        b += y;
    }
    (a, b)
}

pub fn tube(spec: &TubeSpec) -> Result<CellSet> {
    let chart = &spec.chart;
    if !(spec.radius > 0.0 && spec.radius.is_finite()) {
        return Err(Error::Invalid(format!("tube radius {} must be positive", spec.radius)));
    }
    if spec.radius > 20.0 {
        return Err(Error::Invalid(format!("tube radius {} exceeds the representable range", spec.radius)));
    }
    let fs = factors(chart)?;
    let sat = chart.compact_mask();
    let red: Vec<usize> = (0..chart.dim()).filter(|a| sat & (1 << a) == 0).collect();
    let r = spec.radius;
    // coordinate bounds of the tube on each reduced axis
    let mut bound = vec![0.0; chart.dim()];
    for &(i, f) in &fs {
        match f {
            Factor::Line => bound[i] = r,
            Factor::Circle => {}
            Factor::Sl2 => {
                bound[i + 1] = r;
                bound[i + 2] = (2.0 * (r.cosh() - 1.0) * r.exp()).sqrt();
            }
        }
    }
    let lo_idx: Vec<i64> = red.iter().map(|&a| (-bound[a] / spec.grid.side(a)).floor() as i64 - 1).collect();
    let hi_idx: Vec<i64> = red.iter().map(|&a| (bound[a] / spec.grid.side(a)).ceil() as i64).collect();
    let r2 = r * r;
    let role = spec.cover;
    let keep = |clo: &[f64], chi: &[f64]| {
        let (mn, mx) = cell_range(&fs, clo, chi);
        match role {
            Role::Inner => mx <= r2,
            _ => mn < r2,
        }
    };
    if red.is_empty() {
        return CellSet::from_keys(chart, spec.grid.clone(), sat, vec![0], Role::Exact);
    }
    let out_role = if role == Role::Inner { Role::Inner } else { Role::Outer };
    CellSet::from_predicate(chart, spec.grid.clone(), sat, &lo_idx, &hi_idx, out_role, keep)
}

/// Haar measure of the SL(2,R) tube: the theta period times the
/// hyperbolic disk area `2 pi (cosh r - 1)`.
pub fn sl2_tube_measure(r: f64) -> f64 {
    std::f64::consts::TAU * std::f64::consts::TAU * (r.cosh() - 1.0)
}
