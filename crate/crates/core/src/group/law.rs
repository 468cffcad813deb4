use super::sl2;
use super::{wrap_periodic, Axis, DimensionProfile, GroupChart};
use crate::error::{Error, Result};
use std::f64::consts::TAU;

/// Group laws of the catalog.
///
/// * `Euclid(d)`: (R^d, +).
/// * `Torus(d)`: (R/Z)^d with coordinates in `[0,1)`.
/// * `Heis3`: `(x,y,z)(x',y',z') = (x+x', y+y', z+z'+x y')`.
/// * `Aff`: `(a,b)(a',b') = (a a', a b' + b)`, `a > 0`.
/// * `AffLog`: the same group in coordinates `(s, b)` with `a = e^s`.
/// * `Sl2`: SL(2,R) in Iwasawa coordinates `k(theta) a(t) n(u)`.
/// * `Product`: direct product, coordinates concatenated.
#[derive(Clone, Debug, PartialEq)]
pub enum Law {
    Euclid(usize),
    Torus(usize),
    Heis3,
    Aff,
    AffLog,
    Sl2,
    Product(Vec<GroupChart>),
}

impl Law {
    pub(super) fn describe(&self) -> Result<(String, Vec<Axis>, DimensionProfile)> {
        Ok(match self {
            Law::Euclid(d) => {
                if *d == 0 {
                    return Err(Error::Invalid("r:0 has no coordinates".into()));
                }
                let axes = (0..*d).map(|i| Axis::line(&format!("x{i}"))).collect();
                let d = *d as u32;
                (format!("r:{d}"), axes, DimensionProfile::new(d, 0, 0)?)
            }
            Law::Torus(d) => {
                if *d == 0 {
                    return Err(Error::Invalid("t:0 has no coordinates".into()));
                }
                let axes = (0..*d).map(|i| Axis::circle(&format!("phi{i}"), 1.0)).collect();
                let d = *d as u32;
                (format!("t:{d}"), axes, DimensionProfile::new(d, d, 0)?)
            }
            Law::Heis3 => (
                "heis3".into(),
                vec![Axis::line("x"), Axis::line("y"), Axis::line("z")],
                DimensionProfile::new(3, 0, 0)?,
            ),
            Law::Aff => ("aff".into(), vec![Axis::positive("a"), Axis::line("b")], DimensionProfile::new(2, 0, 0)?),
            Law::AffLog => ("affl".into(), vec![Axis::line("s"), Axis::line("b")], DimensionProfile::new(2, 0, 0)?),
            Law::Sl2 => (
                "sl2r".into(),
                vec![Axis::circle("theta", TAU), Axis::line("t"), Axis::line("u")],
                DimensionProfile::new(3, 1, 0)?,
            ),
            Law::Product(fs) => {
                if fs.len() < 2 {
                    return Err(Error::Invalid("a product needs at least two factors".into()));
                }
                let names: Vec<&str> = fs.iter().map(|f| f.name()).collect();
                let mut axes = Vec::new();
                let mut prof = fs[0].profile();
                for (k, f) in fs.iter().enumerate() {
                    if k > 0 {
                        prof = prof.sum(&f.profile());
                    }
                    for a in f.axes() {
                        let mut a = a.clone();
                        a.label = format!("{}.{}", k, a.label);
                        axes.push(a);
                    }
                }
                (format!("prod({})", names.join(",")), axes, prof)
            }
        })
    }

    pub(super) fn dim(&self) -> usize {
        match self {
            Law::Euclid(d) | Law::Torus(d) => *d,
            Law::Heis3 | Law::Sl2 => 3,
            Law::Aff | Law::AffLog => 2,
            Law::Product(fs) => fs.iter().map(|f| f.dim()).sum(),
        }
    }

    pub(super) fn is_unimodular(&self) -> bool {
        match self {
            Law::Aff | Law::AffLog => false,
            Law::Product(fs) => fs.iter().all(|f| f.is_unimodular()),
            _ => true,
        }
    }

    pub(super) fn identity_into(&self, e: &mut [f64]) {
        match self {
            Law::Aff => {
                e[0] = 1.0;
                e[1] = 0.0;
            }
            Law::Product(fs) => {
                let mut o = 0;
                for f in fs {
                    let k = f.dim();
                    f.law().identity_into(&mut e[o..o + k]);
                    o += k;
                }
            }
            _ => e.iter_mut().for_each(|x| *x = 0.0),
        }
    }

    pub(super) fn mul_into(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        match self {
            Law::Euclid(d) => {
                for i in 0..*d {
                    out[i] = a[i] + b[i];
                }
            }
            Law::Torus(d) => {
                for i in 0..*d {
                    out[i] = wrap_periodic(a[i] + b[i], 1.0);
                }
            }
            Law::Heis3 => {
                out[0] = a[0] + b[0];
                out[1] = a[1] + b[1];
                out[2] = a[2] + b[2] + a[0] * b[1];
            }
            Law::Aff => {
                out[0] = a[0] * b[0];
                out[1] = a[0] * b[1] + a[1];
            }
            Law::AffLog => {
                out[0] = a[0] + b[0];
                out[1] = a[0].exp() * b[1] + a[1];
            }
            Law::Sl2 => sl2::mul(a, b, out),
            Law::Product(fs) => {
                let mut o = 0;
                for f in fs {
                    let k = f.dim();
                    f.mul_into(&a[o..o + k], &b[o..o + k], &mut out[o..o + k]);
                    o += k;
                }
            }
        }
    }

    pub(super) fn inv_into(&self, a: &[f64], out: &mut [f64]) {
        match self {
            Law::Euclid(d) => {
                for i in 0..*d {
                    out[i] = -a[i];
                }
            }
            Law::Torus(d) => {
                for i in 0..*d {
                    out[i] = wrap_periodic(-a[i], 1.0);
                }
            }
            Law::Heis3 => {
                out[0] = -a[0];
                out[1] = -a[1];
                out[2] = -a[2] + a[0] * a[1];
            }
            Law::Aff => {
                out[0] = 1.0 / a[0];
                out[1] = -a[1] / a[0];
            }
            Law::AffLog => {
                out[0] = -a[0];
                out[1] = -(-a[0]).exp() * a[1];
            }
            Law::Sl2 => sl2::inv(a, out),
            Law::Product(fs) => {
                let mut o = 0;
                for f in fs {
                    let k = f.dim();
                    f.inv_into(&a[o..o + k], &mut out[o..o + k]);
                    o += k;
                }
            }
        }
    }

    /// Row-major Jacobians of the law with respect to both arguments.
    pub(super) fn jac_into(&self, a: &[f64], b: &[f64], ja: &mut [f64], jb: &mut [f64]) {
        let d = self.dim();
        ja[..d * d].iter_mut().for_each(|x| *x = 0.0);
        jb[..d * d].iter_mut().for_each(|x| *x = 0.0);
        match self {
            Law::Euclid(_) | Law::Torus(_) => {
                for i in 0..d {
                    ja[i * d + i] = 1.0;
                    jb[i * d + i] = 1.0;
                }
            }
            Law::Heis3 => {
                for i in 0..3 {
                    ja[i * 3 + i] = 1.0;
                    jb[i * 3 + i] = 1.0;
                }
                ja[2 * 3] = b[1];
                jb[2 * 3 + 1] = a[0];
            }
            Law::Aff => {
                ja[0] = b[0];
                ja[2] = b[1];
                ja[3] = 1.0;
                jb[0] = a[0];
                jb[3] = a[0];
            }
            Law::AffLog => {
                let e = a[0].exp();
                ja[0] = 1.0;
                ja[2] = e * b[1];
                ja[3] = 1.0;
                jb[0] = 1.0;
                jb[3] = e;
            }
            Law::Sl2 => sl2::jac(a, b, ja, jb),
            Law::Product(fs) => {
                let mut o = 0;
                let mut sa = [0.0; super::MAX_DIM * super::MAX_DIM];
                let mut sb = [0.0; super::MAX_DIM * super::MAX_DIM];
                for f in fs {
                    let k = f.dim();
                    f.jac_mul(&a[o..o + k], &b[o..o + k], &mut sa[..k * k], &mut sb[..k * k]);
                    for i in 0..k {
                        for j in 0..k {
                            ja[(o + i) * d + o + j] = sa[i * k + j];
                            jb[(o + i) * d + o + j] = sb[i * k + j];
                        }
                    }
                    o += k;
                }
            }
        }
    }

    pub(super) fn left_density_closed(&self, g: &[f64]) -> Option<f64> {
        match self {
            Law::Euclid(_) | Law::Torus(_) | Law::Heis3 => Some(1.0),
            Law::Aff => Some(1.0 / (g[0] * g[0])),
            Law::AffLog => Some((-g[0]).exp()),
            Law::Sl2 => Some(g[1].exp()),
            Law::Product(fs) => {
                let mut o = 0;
                let mut acc = 1.0;
                for f in fs {
                    let k = f.dim();
                    acc *= f.left_density_closed(&g[o..o + k])?;
                    o += k;
                }
                Some(acc)
            }
        }
    }

    pub(super) fn modular_closed(&self, g: &[f64]) -> Option<f64> {
        match self {
            Law::Euclid(_) | Law::Torus(_) | Law::Heis3 | Law::Sl2 => Some(1.0),
            Law::Aff => Some(1.0 / g[0]),
            Law::AffLog => Some((-g[0]).exp()),
            Law::Product(fs) => {
                let mut o = 0;
                let mut acc = 1.0;
                for f in fs {
                    let k = f.dim();
                    acc *= f.modular_closed(&g[o..o + k])?;
                    o += k;
                }
                Some(acc)
            }
        }
    }
}
