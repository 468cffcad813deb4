//! Nested tubes `X = D_delta` inside `X_1 = D_delta1` whose product stays
//! below `(2 + eps)^n mu(X)`.

use super::tube::{tube, tube_grid, TubeSpec};
use crate::error::{Error, Result};
use crate::group::GroupChart;
use crate::setrep::{product_sets_on, CellSet, ProductOptions, Side};

#[derive(Clone, Debug)]
pub struct StabilityPair {
    pub x: CellSet,
    pub x1: CellSet,
    pub delta: f64,
    pub delta1: f64,
    /// Measured `mu(X_1 X) / mu(X)` with the outer product cover.
    pub ratio: f64,
    /// `(2 + eps)^n`.
    pub bound: f64,
}

/// Tries `delta1 = delta (1 + eps f)` for shrinking `f` and returns the
/// first pair meeting the bound.
pub fn stability_pair(chart: &GroupChart, eps: f64, delta: f64, level: u32) -> Result<StabilityPair> {
    if !(eps > 0.0 && delta > 0.0) {
        return Err(Error::Invalid(format!("stability needs eps, delta > 0, got {eps}, {delta}")));
    }
    let n = chart.profile().bm_exponent as i32;
    let bound = (2.0 + eps).powi(n);
    let grid = tube_grid(chart, 2.0 * delta, level)?;
    let x = tube(&TubeSpec::on_grid(chart, delta, grid.clone()))?;
    let mu_x = x.measure(Side::Left).value;
    let mut best: Option<(f64, f64)> = None;
    for f in [0.4, 0.2, 0.1, 0.05] {
        let delta1 = delta * (1.0 + eps * f);
        let x1 = tube(&TubeSpec::on_grid(chart, delta1, grid.clone()))?;
        let prod = product_sets_on(&x1, &x, grid.clone(), None, &ProductOptions::default())?.outer;
        let ratio = prod.measure(Side::Left).value / mu_x;
        if ratio < bound {
            return Ok(StabilityPair { x, x1, delta, delta1, ratio, bound });
        }
        if best.map_or(true, |(r, _)| ratio < r) {
            best = Some((ratio, delta1));
        }
    }
    let (r, d1) = best.expect("at least one candidate");
    Err(Error::Invalid(format!(
        "no delta1 meets (2 + {eps})^{n} = {bound:.4} at level {level}; best ratio {r:.4} at delta1 = {d1}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_plane() {
        let p = stability_pair(&GroupChart::euclid(2), 0.5, 0.5, 6).unwrap();
        assert!((p.delta1 - 0.6).abs() < 1e-12);
        // area of the (delta1 + delta)-ball over the delta-ball is 2.2^2
        assert!(p.ratio < 6.25 && p.ratio > 4.84 * 0.98, "{}", p.ratio);
        assert!(p.x.is_subset_of(&p.x1).unwrap());
    }

    #[test]
    fn infeasible_is_reported() {
        let e = stability_pair(&GroupChart::euclid(2), 1e-4, 0.5, 3).unwrap_err();
        assert!(e.to_string().contains("best ratio"));
    }
}
