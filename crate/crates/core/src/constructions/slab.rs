//! Thickened kernel slabs in the affine group `(a, b) . (a', b') = (a a', a b' + b)`.
//!
//! `ker Delta = {(1, b)}` and the transversal direction is pure scaling, so
//! the slab of thickness `eps` over `[0, w]` is `[1, e^eps] x [0, w]`.

use crate::error::{Error, Result};
use crate::group::{GroupChart, Law};
use crate::setrep::{product_sets_on, CellSet, Grid, Measure, ProductOptions, Side};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug)]
pub struct SlabSpec {
    pub chart: GroupChart,
    /// Thickness along the scaling subgroup.
    pub eps: f64,
    /// Length `w` of the kernel interval `[0, w]`.
    pub width: f64,
    pub level: u32,
}

impl SlabSpec {
    pub fn new(eps: f64, width: f64, level: u32) -> SlabSpec {
        SlabSpec { chart: GroupChart::aff(), eps, width, level }
    }

    /// Dyadic base `2^ceil(log2(e^eps - 1))` on the `a` axis, `w` on `b`.
    pub fn grid(&self) -> Result<Grid> {
        let span = self.eps.exp_m1();
        let base_a = 2f64.powi(span.log2().ceil() as i32);
        Grid::new(&self.chart, vec![base_a, self.width], self.level)
    }
}

pub fn slab(spec: &SlabSpec) -> Result<CellSet> {
    if !matches!(spec.chart.law(), Law::Aff) {
        return Err(Error::Unsupported(format!("slabs are built on aff, not {}", spec.chart.name())));
    }
    if !(spec.eps > 0.0 && spec.eps < 5.0 && spec.width > 0.0) {
        return Err(Error::Invalid(format!("slab needs 0 < eps < 5 and width > 0, got {} and {}", spec.eps, spec.width)));
    }
    CellSet::from_box_on(&spec.chart, spec.grid()?, 0, &[1.0, 0.0], &[spec.eps.exp(), spec.width])
}

/// Closed forms for the slab `X` and its square.
pub mod exact {
    /// Left measure `w (1 - e^-eps)`.
    pub fn mu_x(eps: f64, w: f64) -> f64 {
        -w * (-eps).exp_m1()
    }

    /// Right measure `w eps`.
    pub fn nu_x(eps: f64, w: f64) -> f64 {
        w * eps
    }

    // X^2 = {(a, b) : 1 <= a <= e^{2 eps}, 0 <= b <= w (1 + min(a, e^eps))}

    pub fn mu_x2(eps: f64, w: f64) -> f64 {
        let e = eps.exp();
        // int_1^e w (1 + a) a^-2 da + int_e^{e^2} w (1 + e) a^-2 da
        let first = w * ((1.0 - 1.0 / e) + e.ln());
        let second = w * (1.0 + e) * (1.0 / e - 1.0 / (e * e));
        first + second
    }

    pub fn nu_x2(eps: f64, w: f64) -> f64 {
        let e = eps.exp();
        // int w (1 + min(a, e)) a^-1 da
        let first = w * (e.ln() + (e - 1.0));
        let second = w * (1.0 + e) * eps;
        first + second
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlabReport {
    pub eps: f64,
    pub level: u32,
    pub mu_x: Measure,
    pub nu_x: Measure,
    pub mu_x2: Measure,
    pub nu_x2: Measure,
    /// `p` in `(nu(X)/nu(X^2))^p + (mu(X)/mu(X^2))^p`.
    pub power: f64,
    /// Value with the outer cover of `X^2`, a lower bound up to quadrature.
    pub lhs: f64,
}

/// Measures of the slab and of the outer cover of its square.
pub fn slab_report(spec: &SlabSpec, power: f64) -> Result<SlabReport> {
    let x = slab(spec)?;
    let x2 = product_sets_on(&x, &x, x.grid().clone(), None, &ProductOptions::default())?.outer;
    let (mu_x, nu_x) = (x.measure(Side::Left), x.measure(Side::Right));
    let (mu_x2, nu_x2) = (x2.measure(Side::Left), x2.measure(Side::Right));
    let lhs = (nu_x.value / nu_x2.value).powf(power) + (mu_x.value / mu_x2.value).powf(power);
    Ok(SlabReport { eps: spec.eps, level: spec.level, mu_x, nu_x, mu_x2, nu_x2, power, lhs })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Trapezoid-rule oracle over the union of products of two slabs.
    fn square_oracle(eps: f64, w: f64, right: bool) -> f64 {
        let n = 200_000;
        let (lo, hi) = (0.0, 2.0 * eps);
        let h = (hi - lo) / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let sigma = lo + i as f64 * h;
            let a = sigma.exp();
            // b extent: max over a1 in [max(1, a e^-eps), min(a, e^eps)] of a1 w + w
            let a1 = a.min(eps.exp());
            let len = w * (1.0 + a1);
            // da = a dsigma; left density a^-2, right a^-1
            let f = if right { len } else { len / a };
            s += if i == 0 || i == n { 0.5 * f } else { f };
        }
        s * h
    }

    #[test]
    fn closed_forms_match_quadrature() {
        for eps in [0.05, 0.3] {
            assert!((exact::mu_x2(eps, 1.0) - square_oracle(eps, 1.0, false)).abs() < 1e-8);
            assert!((exact::nu_x2(eps, 1.0) - square_oracle(eps, 1.0, true)).abs() < 1e-8);
        }
    }

    #[test]
    fn thin_slab_is_almost_unimodular() {
        let r = slab(&SlabSpec::new(0.01, 1.0, 7)).unwrap();
        let ratio = r.measure(Side::Right).value / r.measure(Side::Left).value;
        assert!((ratio - 1.0).abs() < 0.02);
    }

    #[test]
    fn slab_report_brackets_closed_forms() {
        let spec = SlabSpec::new(0.05, 1.0, 5);
        let r = slab_report(&spec, 0.4).unwrap();
        assert!(r.mu_x.value >= exact::mu_x(0.05, 1.0) - 1e-9);
        assert!(r.mu_x2.value >= exact::mu_x2(0.05, 1.0));
        assert!(r.nu_x2.value >= exact::nu_x2(0.05, 1.0));
        let exact_ratio = exact::mu_x2(0.05, 1.0) / exact::mu_x(0.05, 1.0);
        assert!((exact_ratio - 4.0).abs() < 0.1);
    }

    #[test]
    fn other_groups_are_rejected() {
        let mut s = SlabSpec::new(0.1, 1.0, 4);
        s.chart = GroupChart::heis3();
        assert!(matches!(slab(&s), Err(Error::Unsupported(_))));
    }
}
