//! Two-box families in the affine group whose product barely exceeds the
//! larger factor.
//!
//! In `(a, b)` coordinates `X = [A, A(1+s^2)] x [0, b_X]` and
//! `Y = [A', A'(1+s)] x [0, b_Y]` with `A = 1`. The heights are solved from
//! `mu(X) = alpha`, `mu(Y) = beta`, and `A'` is taken large enough that the
//! translate of `b_X` is negligible against `A b_Y`. Sets are built in the
//! log chart `affl`, where both boxes are grid aligned.

use crate::error::{Error, Result};
use crate::group::GroupChart;
use crate::setrep::{product_sets_on, CellSet, Grid, ProductOptions, Side};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseParams {
    pub s: f64,
    pub alpha: f64,
    pub beta: f64,
    pub a_x: f64,
    pub b_x: f64,
    pub a_y: f64,
    pub b_y: f64,
}

impl CollapseParams {
    pub fn solve(s: f64, alpha: f64, beta: f64) -> Result<CollapseParams> {
        if !(s > 0.0 && s <= 0.2) {
            return Err(Error::Invalid(format!("collapse needs 0 < s <= 0.2, got {s}")));
        }
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Invalid(format!("collapse needs alpha, beta > 0, got {alpha}, {beta}")));
        }
        let a_x = 1.0;
        let b_x = alpha * a_x * (1.0 + s * s) / (s * s);
        // b_X / (A A') <= s beta / 4: snap A' up to a power of (1 + s)
        let target = 4.0 * alpha * (1.0 + s * s) / (beta * s * s * (1.0 + s));
        let k = (target.ln() / s.ln_1p()).ceil();
        let a_y = (k * s.ln_1p()).exp();
        if !a_y.is_finite() || a_y > 1e12 {
            return Err(Error::Invalid(format!("collapse parameters infeasible at s = {s}")));
        }
        let b_y = beta * a_y * (1.0 + s) / s;
        Ok(CollapseParams { s, alpha, beta, a_x, b_x, a_y, b_y })
    }

    /// Exact left measure of `XY`.
    pub fn mu_xy(&self) -> f64 {
        let s = self.s;
        let top = self.a_x * (1.0 + s * s);
        let p0 = self.a_x * self.a_y;
        let p1 = p0 * (1.0 + s * s);
        let p2 = p1 * (1.0 + s);
        // fiber over a = P is [0, min(A(1+s^2), P/A') b_Y + b_X]
        let lower = self.b_y / self.a_y * (p1 / p0).ln() + self.b_x * (1.0 / p0 - 1.0 / p1);
        let upper = (top * self.b_y + self.b_x) * (1.0 / p1 - 1.0 / p2);
        lower + upper
    }

    pub fn ratio(&self) -> f64 {
        self.mu_xy() / self.beta
    }
}

#[derive(Clone, Debug)]
pub struct CollapsePair {
    pub params: CollapseParams,
    pub x: CellSet,
    pub y: CellSet,
    /// Exact `mu(XY) / mu(Y)`.
    pub ratio_exact: f64,
    /// `C` with `mu(XY) = (1 + C s) mu(Y)`.
    pub c: f64,
}

impl CollapsePair {
    /// Outer cover of `XY` on the grid of `Y`.
    pub fn product(&self) -> Result<CellSet> {
        Ok(product_sets_on(&self.x, &self.y, self.y.grid().clone(), None, &ProductOptions::default())?.outer)
    }

    pub fn measured_ratio(&self) -> Result<f64> {
        Ok(self.product()?.measure(Side::Left).value / self.y.measure(Side::Left).value)
    }
}

pub fn collapse_pair(s: f64, alpha: f64, beta: f64, level: u32) -> Result<CollapsePair> {
    let p = CollapseParams::solve(s, alpha, beta)?;
    let chart = GroupChart::aff_log();
    let (sx, sy) = ((s * s).ln_1p(), s.ln_1p());
    let gx = Grid::new(&chart, vec![sx, p.b_x], level)?;
    let gy = Grid::new(&chart, vec![sy, p.b_y], level)?;
    let ly = p.a_y.ln();
    let x = CellSet::from_box_on(&chart, gx, 0, &[p.a_x.ln(), 0.0], &[p.a_x.ln() + sx, p.b_x])?;
    let y = CellSet::from_box_on(&chart, gy, 0, &[ly, 0.0], &[ly + sy, p.b_y])?;
    let ratio_exact = p.ratio();
    Ok(CollapsePair { c: (ratio_exact - 1.0) / s, ratio_exact, params: p, x, y })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Midpoint-rule oracle for `mu(XY)` from the fiber description.
    fn oracle(p: &CollapseParams) -> f64 {
        let s = p.s;
        let (p0, p2) = (p.a_x * p.a_y, p.a_x * p.a_y * (1.0 + s * s) * (1.0 + s));
        let n = 400_000;
        let h = (p2 - p0) / n as f64;
        (0..n)
            .map(|i| {
                let pp = p0 + (i as f64 + 0.5) * h;
                let a = (p.a_x * (1.0 + s * s)).min(pp / p.a_y);
                (a * p.b_y + p.b_x) / (pp * pp) * h
            })
            .sum()
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for s in [0.05, 0.1, 0.2] {
            let p = CollapseParams::solve(s, 1.0, 1.0).unwrap();
            assert!((p.mu_xy() - oracle(&p)).abs() < 1e-7 * p.mu_xy());
        }
    }

    #[test]
    fn measures_are_solved() {
        let c = collapse_pair(0.05, 1.0, 2.0, 5).unwrap();
        assert!((c.x.measure(Side::Left).value - 1.0).abs() < 1e-6);
        assert!((c.y.measure(Side::Left).value - 2.0).abs() < 1e-6);
    }

    #[test]
    fn ratio_collapses_as_s_shrinks() {
        let r: Vec<f64> = [0.2, 0.1, 0.05, 0.02].iter().map(|&s| CollapseParams::solve(s, 1.0, 1.0).unwrap().ratio()).collect();
        assert!(r.windows(2).all(|w| w[1] < w[0]), "{r:?}");
        assert!(r.iter().all(|&v| v >= 1.0));
        assert!(r[3] < 1.03);
    }

    #[test]
    fn grid_product_brackets_closed_form() {
        let c = collapse_pair(0.05, 1.0, 1.0, 5).unwrap();
        let m = c.measured_ratio().unwrap();
        assert!(m >= c.ratio_exact - 1e-9 && m < c.ratio_exact * 1.1, "{m} {}", c.ratio_exact);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(collapse_pair(0.3, 1.0, 1.0, 4).is_err());
        assert!(collapse_pair(0.05, -1.0, 1.0, 4).is_err());
    }
}
