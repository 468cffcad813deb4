//! Brunn-Minkowski functionals and verdict reports.

use crate::error::{Error, Result};
use crate::setrep::{product_sets, product_sets_on, CellSet, Grid, Measure, ProductOptions, Side};
use serde::{Deserialize, Serialize};

/// `(x^{1/n} + y^{1/n})^n`, or `max(x, y)` for `n = 0`.
pub fn holder_norm(x: f64, y: f64, n: u32) -> Result<f64> {
    if !(x >= 0.0 && y >= 0.0) {
        return Err(Error::Invalid(format!("holder norm of ({x}, {y}) needs nonnegative entries")));
    }
    if n == 0 {
        return Ok(x.max(y));
    }
    let p = 1.0 / n as f64;
    Ok((x.powf(p) + y.powf(p)).powi(n as i32))
}

fn ratio_sum(a: f64, b: f64, n: u32) -> f64 {
    if n == 0 {
        a.max(b)
    } else {
        let p = 1.0 / n as f64;
        a.powf(p) + b.powf(p)
    }
}

fn check_measures(vals: &[f64], prod: &[f64]) -> Result<()> {
    if vals.iter().chain(prod).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Invalid(format!("measures must be finite and nonnegative: {vals:?} {prod:?}")));
    }
    if prod.iter().any(|&v| v == 0.0) {
        return Err(Error::Invalid("product set has zero measure".into()));
    }
    Ok(())
}

/// `(nu(X)/nu(XY))^{1/n} + (mu(Y)/mu(XY))^{1/n}`, the max of the ratios for `n = 0`.
pub fn bm_lhs(nu_x: f64, nu_xy: f64, mu_y: f64, mu_xy: f64, n: u32) -> Result<f64> {
    check_measures(&[nu_x, mu_y], &[nu_xy, mu_xy])?;
    Ok(ratio_sum(nu_x / nu_xy, mu_y / mu_xy, n))
}

/// Unimodular form `(mu(X)/mu(XY))^{1/k} + (mu(Y)/mu(XY))^{1/k}`.
pub fn mccrudden_lhs(mu_x: f64, mu_y: f64, mu_xy: f64, exponent: u32) -> Result<f64> {
    check_measures(&[mu_x, mu_y], &[mu_xy])?;
    Ok(ratio_sum(mu_x / mu_xy, mu_y / mu_xy, exponent))
}

pub fn kemperman_lhs(nu_x: f64, nu_xy: f64, mu_y: f64, mu_xy: f64) -> Result<f64> {
    bm_lhs(nu_x, nu_xy, mu_y, mu_xy, 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmOptions {
    /// Output level of the product; defaults to the finer operand level.
    pub out_level: Option<u32>,
    /// Explicit output grid, overriding `out_level`.
    #[serde(skip)]
    pub out_grid: Option<Grid>,
    pub samples: u64,
    pub seed: u64,
    pub product: ProductOptions,
}

impl Default for BmOptions {
    fn default() -> Self {
        BmOptions { out_level: None, out_grid: None, samples: 1_000_000, seed: 1, product: ProductOptions::default() }
    }
}

/// All measures and functionals for one `(X, Y)` pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BmReport {
    pub group: String,
    pub exponent: u32,
    pub nu_x: Measure,
    pub mu_y: Measure,
    pub nu_xy_inner: Measure,
    pub nu_xy_outer: Measure,
    pub mu_xy_inner: Measure,
    pub mu_xy_outer: Measure,
    /// LHS with the inner product estimates.
    pub lhs_conservative: f64,
    /// LHS with the outer product cover.
    pub lhs_optimistic: f64,
    /// `1 - lhs_conservative`.
    pub deficit: f64,
    /// Quadrature error plus a 3 sigma sampling band, in LHS units.
    pub allowance: f64,
    /// The inequality holds with the inner estimates: `lhs_conservative <= 1 + allowance`.
    pub pass: bool,
    /// Certified violation: even the outer cover gives `lhs_optimistic > 1 + allowance`.
    pub violated: bool,
    pub level_x: u32,
    pub level_y: u32,
    pub out_level: u32,
    pub samples: u64,
    pub seed: u64,
    pub pad: f64,
    pub pairs: u64,
    pub marginal_cells: usize,
    pub notes: Vec<String>,
}

pub const CSV_HEADER: &str = "group,exponent,level_x,level_y,out_level,samples,seed,nu_x,mu_y,nu_xy_inner,nu_xy_outer,mu_xy_inner,mu_xy_outer,lhs_conservative,lhs_optimistic,deficit,allowance,verdict";

impl BmReport {
    /// One row in the column order of [`CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10},{:.10},{:.10},{:.10},{}",
            self.group,
            self.exponent,
            self.level_x,
            self.level_y,
            self.out_level,
            self.samples,
            self.seed,
            self.nu_x.value,
            self.mu_y.value,
            self.nu_xy_inner.value,
            self.nu_xy_outer.value,
            self.mu_xy_inner.value,
            self.mu_xy_outer.value,
            self.lhs_conservative,
            self.lhs_optimistic,
            self.deficit,
            self.allowance,
            self.verdict()
        )
    }

    /// `PASS`, `FAIL` on a certified violation, `INCONCLUSIVE` in between.
    pub fn verdict(&self) -> &'static str {
        if self.pass {
            "PASS"
        } else if self.violated {
            "FAIL"
        } else {
            "INCONCLUSIVE"
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// First-order propagation of measure errors `errs` through `f` at `vals`.
fn propagate(f: &dyn Fn(&[f64]) -> f64, vals: &[f64], errs: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut v = vals.to_vec();
    for i in 0..vals.len() {
        if errs[i] == 0.0 {
            continue;
        }
        let h = (errs[i]).min(0.5 * vals[i].abs()).max(1e-12 * vals[i].abs().max(1e-300));
        v[i] = vals[i] + h;
        let up = f(&v);
        v[i] = (vals[i] - h).max(f64::MIN_POSITIVE);
        let dn = f(&v);
        v[i] = vals[i];
        total += ((up - dn) / (2.0 * h)).abs() * errs[i];
    }
    total
}

/// Measures `X`, `Y` and both estimates of `XY`, and evaluates the
/// functional with exponent `n` (default: the group's exponent).
pub fn check_bm(x: &CellSet, y: &CellSet, n: Option<u32>, opts: &BmOptions) -> Result<BmReport> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Invalid("both sets must be nonempty".into()));
    }
    let chart = x.chart();
    let n = n.unwrap_or(chart.profile().bm_exponent);
    let prod = match &opts.out_grid {
        Some(g) => product_sets_on(x, y, g.clone(), Some((opts.samples, opts.seed)), &opts.product)?,
        None => {
            let level = opts.out_level.unwrap_or(x.level().max(y.level()));
            product_sets(x, y, level, Some((opts.samples, opts.seed)), &opts.product)?
        }
    };
    let inner = prod.inner.as_ref().expect("inner requested");
    let marginal = prod.marginal.as_ref().expect("inner requested");
    let nu_x = x.measure(Side::Right);
    let mu_y = y.measure(Side::Left);
    let nu_xy_inner = inner.measure(Side::Right);
    let nu_xy_outer = prod.outer.measure(Side::Right);
    let mu_xy_inner = inner.measure(Side::Left);
    let mu_xy_outer = prod.outer.measure(Side::Left);
    if nu_xy_inner.value <= 0.0 || mu_xy_inner.value <= 0.0 {
        return Err(Error::Invalid("the inner estimate of XY is empty; raise the sample count".into()));
    }
    let lhs_conservative = bm_lhs(nu_x.value, nu_xy_inner.value, mu_y.value, mu_xy_inner.value, n)?;
    let lhs_optimistic = bm_lhs(nu_x.value, nu_xy_outer.value, mu_y.value, mu_xy_outer.value, n)?;

    // Each marginal cell is in or out of the inner set with a coin-flip
    // uncertainty; sigma of the sum is half a cell measure times sqrt(M).
    let m = marginal.len().max(1) as f64;
    let sigma = |s: Side| 0.5 * marginal.measure(s).value / m.sqrt();
    let f = |v: &[f64]| ratio_sum(v[0] / v[1], v[2] / v[3], n);
    let vals = [nu_x.value, nu_xy_inner.value, mu_y.value, mu_xy_inner.value];
    let quad = [nu_x.err, nu_xy_inner.err, mu_y.err, mu_xy_inner.err];
    let mc = [0.0, 3.0 * sigma(Side::Right), 0.0, 3.0 * sigma(Side::Left)];
    let allowance = propagate(&f, &vals, &quad) + propagate(&f, &vals, &mc);

    let mut notes: Vec<String> = x.notes().iter().chain(y.notes()).chain(prod.outer.notes()).cloned().collect();
    if prod.stats.escaped_samples > 0 {
        notes.push(format!("{} sampled products fell outside the outer cover", prod.stats.escaped_samples));
    }
    Ok(BmReport {
        group: chart.name().to_string(),
        exponent: n,
        nu_x,
        mu_y,
        nu_xy_inner,
        nu_xy_outer,
        mu_xy_inner,
        mu_xy_outer,
        lhs_conservative,
        lhs_optimistic,
        deficit: 1.0 - lhs_conservative,
        allowance,
        pass: lhs_conservative <= 1.0 + allowance,
        violated: lhs_optimistic > 1.0 + allowance,
        level_x: x.level(),
        level_y: y.level(),
        out_level: prod.outer.level(),
        samples: opts.samples,
        seed: opts.seed,
        pad: prod.stats.pad,
        pairs: prod.stats.pairs,
        marginal_cells: prod.stats.marginal_cells,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::GroupChart;
    use proptest::prelude::*;

    #[test]
    fn holder_norm_examples() {
        assert_eq!(holder_norm(1.0, 1.0, 1).unwrap(), 2.0);
        assert_eq!(holder_norm(1.0, 1.0, 2).unwrap(), 4.0);
        assert_eq!(holder_norm(3.0, 7.0, 0).unwrap(), 7.0);
        assert!(holder_norm(-1.0, 1.0, 1).is_err());
    }

    #[test]
    fn lhs_examples() {
        assert!((bm_lhs(1.0, 2.0, 1.0, 2.0, 1).unwrap() - 1.0).abs() < 1e-15);
        assert!((bm_lhs(1.0, 4.0, 1.0, 4.0, 2).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(bm_lhs(1.0, 1.0, 1.0, 1.0, 0).unwrap(), 1.0);
        assert!(bm_lhs(1.0, 0.0, 1.0, 1.0, 1).is_err());
        assert!((mccrudden_lhs(1.0, 1.0, 4.0, 2).unwrap() - 1.0).abs() < 1e-15);
        let h = mccrudden_lhs(1.0, 1.0, 10.0, 3).unwrap();
        assert!((h - 2.0 * 0.1f64.cbrt()).abs() < 1e-15 && h < 1.0);
        assert!((kemperman_lhs(1.0, 2.0, 1.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn unit_interval_is_an_equality_case() {
        let r1 = GroupChart::euclid(1);
        let x = CellSet::from_box(&r1, &[0.0], &[1.0], 8).unwrap();
        let r = check_bm(&x, &x, None, &BmOptions { samples: 400_000, ..Default::default() }).unwrap();
        assert_eq!(r.exponent, 1);
        assert!(r.deficit.abs() < 0.02, "{r:?}");
        assert!(r.lhs_optimistic <= r.lhs_conservative);
        // sharp case: the inner estimate sits just above 1, the outer just below
        assert!(!r.violated && r.verdict() != "FAIL");
        assert_eq!(r.csv_row().split(',').count(), CSV_HEADER.split(',').count());
    }

    #[test]
    fn left_and_right_reports_agree_when_unimodular() {
        let h = GroupChart::heis3();
        let x = CellSet::from_box(&h, &[0.0; 3], &[1.0, 0.5, 0.5], 3).unwrap();
        let r = check_bm(&x, &x, None, &BmOptions { samples: 200_000, ..Default::default() }).unwrap();
        assert!((r.nu_x.value - x.measure(Side::Left).value).abs() < 1e-12);
        assert!((r.nu_xy_outer.value - r.mu_xy_outer.value).abs() < 1e-9 * r.mu_xy_outer.value);
    }

    proptest! {
        #[test]
        fn holder_norm_is_homogeneous(x in 0.0f64..10.0, y in 0.0f64..10.0, c in 0.01f64..100.0, n in 0u32..5) {
            let a = holder_norm(c * x, c * y, n).unwrap();
            let b = c * holder_norm(x, y, n).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-300));
        }

        #[test]
        fn lhs_ignores_haar_normalization(nx in 0.01f64..1.0, ny in 0.01f64..1.0, g in 1.0f64..3.0,
                                          c in 0.01f64..100.0, n in 0u32..5) {
            let (nxy, mxy) = (g * (nx + ny), g * (nx + ny) * 1.1);
            let a = bm_lhs(nx, nxy, ny, mxy, n).unwrap();
            let b = bm_lhs(c * nx, c * nxy, c * ny, c * mxy, n).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }

        #[test]
        fn smaller_exponents_inherit_the_inequality(u in 0.0f64..1.0, s in 0.0f64..1.0, n in 1u32..6) {
            // measures with lhs <= 1 at exponent n satisfy it at every m <= n
            let (r1, r2) = ((s * u).powi(n as i32), ((1.0 - s) * u).powi(n as i32));
            prop_assert!(ratio_sum(r1, r2, n) <= 1.0 + 1e-12);
            for m in 0..n {
                prop_assert!(bm_lhs(r1, 1.0, r2, 1.0, m).unwrap() <= 1.0 + 1e-12);
            }
        }
    }
}
