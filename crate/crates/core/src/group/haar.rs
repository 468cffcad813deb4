//! Haar data from the group law alone, by finite differences of translations.
//!
//! `lambda(g) = 1 / |det D_y(g y)|_{y=e}` is the left density with
//! `lambda(e) = 1`, and `Delta(g) = lambda(g) |det D_y(y g)|_{y=e}` is the
//! limit of `mu(A g) / mu(A)` over shrinking boxes `A` around the identity.

use super::{det, Element, GroupChart, MAX_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HaarOptions {
    /// Base step of the central differences, scaled by `max(1, |e_j|)`.
    pub step: f64,
}

impl Default for HaarOptions {
    fn default() -> Self {
        HaarOptions { step: 1e-3 }
    }
}

/// Jacobian of `f` at `x0`, central differences with one Richardson step.
fn fd_jacobian(chart: &GroupChart, x0: &[f64], step: f64, f: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
    let d = chart.dim();
    let mut jac = vec![0.0; d * d];
    let mut base = [0.0; MAX_DIM];
    f(x0, &mut base[..d]);
    let mut xp = x0.to_vec();
    let mut xm = x0.to_vec();
    let mut fp = [0.0; MAX_DIM];
    let mut fm = [0.0; MAX_DIM];
    let mut central = |j: usize, h: f64, col: &mut [f64]| {
        xp.copy_from_slice(x0);
        xm.copy_from_slice(x0);
        xp[j] += h;
        xm[j] -= h;
        f(&xp, &mut fp[..d]);
        f(&xm, &mut fm[..d]);
        for i in 0..d {
            col[i] = chart.axis_delta(i, fm[i], fp[i]) / (2.0 * h);
        }
    };
    let mut c1 = [0.0; MAX_DIM];
    let mut c2 = [0.0; MAX_DIM];
    for j in 0..d {
        let h = step * x0[j].abs().max(1.0);
        central(j, h, &mut c1[..d]);
        central(j, 0.5 * h, &mut c2[..d]);
        for i in 0..d {
            jac[i * d + j] = (4.0 * c2[i] - c1[i]) / 3.0;
        }
    }
    jac
}

fn checked_det(chart: &GroupChart, g: &Element, mut jac: Vec<f64>) -> Result<f64> {
    let d = chart.dim();
    let v = det(&mut jac, d).abs();
    if !(v.is_finite() && v > 1e-300) {
        return Err(Error::Domain(format!("translation Jacobian of {} is singular at {:?}", chart.name(), g.coords)));
    }
    Ok(v)
}

pub fn haar_left_density(chart: &GroupChart, g: &Element, opts: HaarOptions) -> Result<f64> {
    chart.check(g)?;
    let e = chart.identity();
    let jac = fd_jacobian(chart, &e.coords, opts.step, |y, out| chart.mul_into(&g.coords, y, out));
    Ok(1.0 / checked_det(chart, g, jac)?)
}

pub fn modular_value(chart: &GroupChart, g: &Element, opts: HaarOptions) -> Result<f64> {
    let lam = haar_left_density(chart, g, opts)?;
    let e = chart.identity();
    let jac = fd_jacobian(chart, &e.coords, opts.step, |y, out| chart.mul_into(y, &g.coords, out));
    Ok(lam * checked_det(chart, g, jac)?)
}

pub fn haar_right_density(chart: &GroupChart, g: &Element, opts: HaarOptions) -> Result<f64> {
    Ok(haar_left_density(chart, g, opts)? / modular_value(chart, g, opts)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn el(v: &[f64]) -> Element {
        Element::new(v.to_vec())
    }

    #[test]
    fn euclidean_density_is_one() {
        let r2 = GroupChart::euclid(2);
        let v = haar_left_density(&r2, &el(&[3.0, -1.0]), HaarOptions::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn affine_left_density_at_two() {
        let v = haar_left_density(&GroupChart::aff(), &el(&[2.0, 0.0]), HaarOptions::default()).unwrap();
        assert!((v - 0.25).abs() < 1e-10, "{v}");
    }

    #[test]
    fn affine_modular_and_right() {
        let aff = GroupChart::aff();
        let o = HaarOptions::default();
        let m = modular_value(&aff, &el(&[2.0, 5.0]), o).unwrap();
        assert!((m - 0.5).abs() < 1e-10, "{m}");
        let r = haar_right_density(&aff, &el(&[2.0, 0.0]), o).unwrap();
        assert!((r - 0.5).abs() < 1e-10, "{r}");
    }

    #[test]
    fn heisenberg_density_is_one() {
        let h = GroupChart::heis3();
        for g in [[0.5, -2.0, 3.0], [10.0, 7.0, -1.0]] {
            let v = haar_left_density(&h, &el(&g), HaarOptions::default()).unwrap();
            assert!((v - 1.0).abs() < 1e-10);
            let r = haar_right_density(&h, &el(&g), HaarOptions::default()).unwrap();
            assert!((r - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sl2_density_matches_iwasawa_weight() {
        let s = GroupChart::sl2();
        for g in [[0.2, 0.7, -0.3], [6.2, -1.5, 2.0], [3.0, 0.0, 0.0]] {
            let v = haar_left_density(&s, &el(&g), HaarOptions::default()).unwrap();
            assert!((v / g[1].exp() - 1.0).abs() < 1e-9, "{g:?}: {v}");
            let m = modular_value(&s, &el(&g), HaarOptions::default()).unwrap();
            assert!((m - 1.0).abs() < 1e-9, "{g:?}: {m}");
        }
    }

    #[test]
    fn outside_domain_is_an_error() {
        let r = haar_left_density(&GroupChart::aff(), &el(&[-1.0, 0.0]), HaarOptions::default());
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
