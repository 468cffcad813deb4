//! Derivative-free search over parametric set families.
//!
//! Coordinate descent with halving steps from seeded random starts. Each
//! round evaluates all `2 k` coordinate moves in parallel and keeps the best
//! one, ties going to the lower candidate index, so results do not depend on
//! the thread count.

use super::collapse::collapse_pair;
use super::tube::{tube, TubeSpec};
use crate::bm::{bm_lhs, check_bm, BmOptions, BmReport};
use crate::error::{Error, Result};
use crate::group::GroupChart;
use crate::setrep::{product_set, product_sets_on, CellSet, ProductOptions, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub trait Family: Sync {
    fn name(&self) -> String;
    fn chart(&self) -> GroupChart;
    /// Parameter box.
    fn bounds(&self) -> Vec<(f64, f64)>;
    /// The pair `(X, Y)` at parameters `p`.
    fn sets(&self, p: &[f64]) -> Result<(CellSet, CellSet)>;
    /// Objective to minimize.
    fn objective(&self, p: &[f64]) -> Result<f64>;
    /// Exponent for the final report; `None` uses the group's.
    fn exponent(&self) -> Option<u32> {
        None
    }
}

/// Two axis-parallel boxes `[0, w1] x [0, h1]`, `[0, w2] x [0, h2]` in R^2.
/// Objective: `1 - lhs` with the outer product cover.
pub struct BoxFamily {
    pub level: u32,
    pub lo: f64,
    pub hi: f64,
}

impl Family for BoxFamily {
    fn name(&self) -> String {
        "boxes".into()
    }

    fn chart(&self) -> GroupChart {
        GroupChart::euclid(2)
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(self.lo, self.hi); 4]
    }

    fn sets(&self, p: &[f64]) -> Result<(CellSet, CellSet)> {
        let c = self.chart();
        let x = CellSet::from_box(&c, &[0.0, 0.0], &[p[0], p[1]], self.level)?;
        let y = CellSet::from_box(&c, &[0.0, 0.0], &[p[2], p[3]], self.level)?;
        Ok((x, y))
    }

    fn objective(&self, p: &[f64]) -> Result<f64> {
        let (x, y) = self.sets(p)?;
        let xy = product_set(&x, &y, self.level)?;
        let lhs = bm_lhs(x.measure(Side::Right).value, xy.measure(Side::Right).value, y.measure(Side::Left).value, xy.measure(Side::Left).value, 2)?;
        Ok(1.0 - lhs)
    }
}

/// `X = Y = D_delta` in SL(2,R) on a grid with a fixed number of cells per
/// radius. Objective: `mu(X^2) / mu(X)` with outer covers.
pub struct TubeRadiusFamily {
    pub level: u32,
    pub lo: f64,
    pub hi: f64,
}

impl Family for TubeRadiusFamily {
    fn name(&self) -> String {
        "tube_radius".into()
    }

    fn chart(&self) -> GroupChart {
        GroupChart::sl2()
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(self.lo, self.hi)]
    }

    fn sets(&self, p: &[f64]) -> Result<(CellSet, CellSet)> {
        let x = tube(&TubeSpec::new(&self.chart(), p[0], self.level)?)?;
        Ok((x.clone(), x))
    }

    fn objective(&self, p: &[f64]) -> Result<f64> {
        let (x, _) = self.sets(p)?;
        let sq = product_sets_on(&x, &x, x.grid().clone(), None, &ProductOptions::default())?.outer;
        Ok(sq.measure(Side::Left).value / x.measure(Side::Left).value)
    }

    fn exponent(&self) -> Option<u32> {
        Some(2)
    }
}

/// Collapse pairs with parameters `(s, alpha)` and `beta = 1`.
/// Objective: `mu(XY) / (mu(X) + mu(Y))` with the outer product cover.
pub struct CollapseFamily {
    pub level: u32,
}

impl Family for CollapseFamily {
    fn name(&self) -> String {
        "collapse".into()
    }

    fn chart(&self) -> GroupChart {
        GroupChart::aff_log()
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(0.02, 0.2), (0.25, 4.0)]
    }

    fn sets(&self, p: &[f64]) -> Result<(CellSet, CellSet)> {
        let c = collapse_pair(p[0], p[1], 1.0, self.level)?;
        Ok((c.x, c.y))
    }

    fn objective(&self, p: &[f64]) -> Result<f64> {
        let c = collapse_pair(p[0], p[1], 1.0, self.level)?;
        let xy = c.product()?.measure(Side::Left).value;
        Ok(xy / (c.x.measure(Side::Left).value + c.y.measure(Side::Left).value))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    /// Maximum number of objective evaluations.
    pub budget: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Stop a descent once every step is below this fraction of its range.
    pub min_step: f64,
    /// Stop early once the objective drops below this value.
    pub target: Option<f64>,
    /// Samples for the final report's inner estimate; 0 skips the report.
    pub report_samples: u64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions { budget: 200, restarts: 2, seed: 1, min_step: 1e-3, target: None, report_samples: 200_000 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub family: String,
    pub params: Vec<f64>,
    pub objective: f64,
    pub evaluations: usize,
    /// The budget ran out before the descent converged.
    pub exhausted: bool,
    /// Every accepted improvement: parameters and objective.
    pub trail: Vec<(Vec<f64>, f64)>,
    pub report: Option<BmReport>,
}

pub fn minimize_product(family: &dyn Family, opts: &MinimizeOptions) -> Result<OptimizeResult> {
    let bounds = family.bounds();
    if bounds.is_empty() || bounds.iter().any(|&(l, h)| !(l < h)) {
        return Err(Error::Invalid("family needs a nonempty parameter box".into()));
    }
    let k = bounds.len();
    let clamp = |p: &mut Vec<f64>| {
        for (v, &(l, h)) in p.iter_mut().zip(&bounds) {
            *v = v.clamp(l, h);
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut evals = 0usize;
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut trail = Vec::new();
    let mut exhausted = false;
    let reached = |v: f64| opts.target.is_some_and(|t| v < t);

    'restarts: for r in 0..=opts.restarts {
        // first start at the box center, later ones uniformly at random
        let mut p: Vec<f64> = bounds
            .iter()
            .map(|&(l, h)| if r == 0 { 0.5 * (l + h) } else { rng.gen_range(l..h) })
            .collect();
        if evals >= opts.budget {
            exhausted = true;
            break;
        }
        let mut f = family.objective(&p)?;
        evals += 1;
        if best.as_ref().map_or(true, |b| f < b.1) {
            best = Some((p.clone(), f));
            trail.push((p.clone(), f));
        }
        let mut step: Vec<f64> = bounds.iter().map(|&(l, h)| 0.25 * (h - l)).collect();
        loop {
            if reached(f) {
                break 'restarts;
            }
            if step.iter().zip(&bounds).all(|(s, &(l, h))| *s < opts.min_step * (h - l)) {
                break;
            }
            let mut cands: Vec<Vec<f64>> = Vec::with_capacity(2 * k);
            for i in 0..k {
                for sgn in [-1.0, 1.0] {
                    let mut q = p.clone();
                    q[i] += sgn * step[i];
                    clamp(&mut q);
                    if q != p {
                        cands.push(q);
                    }
                }
            }
            let room = opts.budget - evals;
            if room == 0 {
                exhausted = true;
                break 'restarts;
            }
            cands.truncate(room);
            let vals: Vec<Result<f64>> = cands.par_iter().map(|q| family.objective(q)).collect();
            evals += cands.len();
            let mut pick: Option<(usize, f64)> = None;
            for (i, v) in vals.into_iter().enumerate() {
                let v = v?;
                if v < f && pick.map_or(true, |(_, b)| v < b) {
                    pick = Some((i, v));
                }
            }
            match pick {
                Some((i, v)) => {
                    p = cands.swap_remove(i);
                    f = v;
                    if best.as_ref().map_or(true, |b| f < b.1) {
                        best = Some((p.clone(), f));
                        trail.push((p.clone(), f));
                    }
                }
                None => step.iter_mut().for_each(|s| *s *= 0.5),
            }
        }
    }
    let (params, objective) = best.expect("at least one evaluation");
    let report = if opts.report_samples > 0 {
        let (x, y) = family.sets(&params)?;
        let bo = BmOptions { samples: opts.report_samples, seed: opts.seed, out_grid: Some(y.grid().clone()), ..Default::default() };
        Some(check_bm(&x, &y, family.exponent(), &bo)?)
    } else {
        None
    };
    Ok(OptimizeResult { family: family.name(), params, objective, evaluations: evals, exhausted, trail, report })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;

    impl Family for Quadratic {
        fn name(&self) -> String {
            "quadratic".into()
        }
        fn chart(&self) -> GroupChart {
            GroupChart::euclid(1)
        }
        fn bounds(&self) -> Vec<(f64, f64)> {
            vec![(-2.0, 2.0), (-2.0, 2.0)]
        }
        fn sets(&self, p: &[f64]) -> Result<(CellSet, CellSet)> {
            let x = CellSet::from_box(&self.chart(), &[0.0], &[1.0 + p[0].abs()], 3)?;
            Ok((x.clone(), x))
        }
        fn objective(&self, p: &[f64]) -> Result<f64> {
            Ok((p[0] - 0.3).powi(2) + 2.0 * (p[1] + 0.7).powi(2))
        }
    }

    #[test]
    fn finds_a_smooth_minimum() {
        let r = minimize_product(&Quadratic, &MinimizeOptions { budget: 500, report_samples: 0, ..Default::default() }).unwrap();
        assert!((r.params[0] - 0.3).abs() < 1e-2 && (r.params[1] + 0.7).abs() < 1e-2, "{:?}", r.params);
        assert!(!r.exhausted);
        assert!(r.trail.windows(2).all(|w| w[1].1 < w[0].1));
    }

    #[test]
    fn budget_exhaustion_is_flagged() {
        let r = minimize_product(&Quadratic, &MinimizeOptions { budget: 5, report_samples: 0, ..Default::default() }).unwrap();
        assert!(r.exhausted);
        assert!(r.evaluations <= 5);
    }

    #[test]
    fn deterministic_under_seed() {
        let o = MinimizeOptions { budget: 60, restarts: 3, seed: 9, report_samples: 0, ..Default::default() };
        let a = minimize_product(&Quadratic, &o).unwrap();
        let b = minimize_product(&Quadratic, &o).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.trail, b.trail);
    }

    #[test]
    fn collapse_family_beats_the_sum() {
        let f = CollapseFamily { level: 4 };
        let o = MinimizeOptions { budget: 12, restarts: 0, report_samples: 0, target: Some(0.9), ..Default::default() };
        let r = minimize_product(&f, &o).unwrap();
        assert!(r.objective < 1.0);
    }
}
