//! SL(2,R) in Iwasawa coordinates `g = k(theta) a(t) n(u)` with
//! `a(t) = diag(e^{t/2}, e^{-t/2})`, `n(u) = [[1,u],[0,1]]`.
//! Products go through 2x2 matrices and are re-extracted by Gram-Schmidt
//! on the first column.

use super::wrap_periodic;
use std::f64::consts::TAU;

/// Row-major 2x2 matrix `[m11, m12, m21, m22]`.
pub type Mat = [f64; 4];

pub fn matrix(g: &[f64]) -> Mat {
    let (s, c) = g[0].sin_cos();
    let e = (0.5 * g[1]).exp();
    let ei = 1.0 / e;
    let u = g[2];
    [c * e, c * e * u - s * ei, s * e, s * e * u + c * ei]
}

/// Partial derivatives of `matrix` with respect to theta, t, u.
pub fn dmatrix(g: &[f64]) -> [Mat; 3] {
    let (s, c) = g[0].sin_cos();
    let e = (0.5 * g[1]).exp();
    let ei = 1.0 / e;
    let u = g[2];
    [
        [-s * e, -s * e * u - c * ei, c * e, c * e * u - s * ei],
        [0.5 * c * e, 0.5 * (c * e * u + s * ei), 0.5 * s * e, 0.5 * (s * e * u - c * ei)],
        [0.0, c * e, 0.0, s * e],
    ]
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    [
        a[0] * b[0] + a[1] * b[2],
        a[0] * b[1] + a[1] * b[3],
        a[2] * b[0] + a[3] * b[2],
        a[2] * b[1] + a[3] * b[3],
    ]
}

pub fn extract(m: &Mat, out: &mut [f64]) {
    let (p, r) = (m[0], m[2]);
    let s = p * p + r * r;
    let mut th = r.atan2(p);
    if th < 0.0 {
        th += TAU;
    }
    out[0] = wrap_periodic(th, TAU);
    out[1] = s.ln();
    out[2] = (p * m[1] + r * m[3]) / s;
}

/// Differential of `extract` at `m` applied to `dm`.
fn dextract(m: &Mat, dm: &Mat) -> [f64; 3] {
    let (p, r) = (m[0], m[2]);
    let s = p * p + r * r;
    let u = (p * m[1] + r * m[3]) / s;
    let ds = 2.0 * (p * dm[0] + r * dm[2]);
    [
        (p * dm[2] - r * dm[0]) / s,
        ds / s,
        (dm[0] * m[1] + p * dm[1] + dm[2] * m[3] + r * dm[3]) / s - u * ds / s,
    ]
}

pub fn mul(a: &[f64], b: &[f64], out: &mut [f64]) {
    extract(&matmul(&matrix(a), &matrix(b)), out);
}

pub fn inv(a: &[f64], out: &mut [f64]) {
    let m = matrix(a);
    extract(&[m[3], -m[1], -m[2], m[0]], out);
}

pub fn jac(a: &[f64], b: &[f64], ja: &mut [f64], jb: &mut [f64]) {
    let ma = matrix(a);
    let mb = matrix(b);
    let m = matmul(&ma, &mb);
    let da = dmatrix(a);
    let db = dmatrix(b);
    for j in 0..3 {
        let ca = dextract(&m, &matmul(&da[j], &mb));
        let cb = dextract(&m, &matmul(&ma, &db[j]));
        for i in 0..3 {
            ja[i * 3 + j] = ca[i];
            jb[i * 3 + j] = cb[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinant_is_one() {
        for g in [[0.3, -1.2, 0.7], [5.9, 2.0, -3.0], [0.0, 0.0, 0.0]] {
            let m = matrix(&g);
            assert!((m[0] * m[3] - m[1] * m[2] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn extract_inverts_matrix() {
        for g in [[0.3, -1.2, 0.7], [5.9, 2.0, -3.0], [3.2, 0.1, 0.0]] {
            let mut out = [0.0; 3];
            extract(&matrix(&g), &mut out);
            for i in 0..3 {
                assert!((out[i] - g[i]).abs() < 1e-12, "{g:?} -> {out:?}");
            }
        }
    }

    #[test]
    fn dmatrix_matches_finite_differences() {
        let g = [0.7, -0.4, 1.3];
        let d = dmatrix(&g);
        let h = 1e-6;
        for j in 0..3 {
            let mut gp = g;
            let mut gm = g;
            gp[j] += h;
            gm[j] -= h;
            let (mp, mm) = (matrix(&gp), matrix(&gm));
            for k in 0..4 {
                let fd = (mp[k] - mm[k]) / (2.0 * h);
                assert!((fd - d[j][k]).abs() < 1e-8, "axis {j} entry {k}");
            }
        }
    }

    #[test]
    fn identity_coordinates() {
        let m = matrix(&[0.0, 0.0, 0.0]);
        assert_eq!(m, [1.0, 0.0, 0.0, 1.0]);
    }
}
