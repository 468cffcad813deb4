//! Fibers over a normal subgroup spanned by coordinate axes.
//!
//! For a split `1 -> H -> G -> G/H -> 1` with `H` the set of elements whose
//! non-fiber coordinates are those of the identity, a coset `gH` is labelled
//! by the quotient coordinates `q` of `g` and represented by the section
//! `g_q` (fiber coordinates of the identity). The fiber length of `Omega` is
//! `f(q) = mu_H(g_q^{-1} Omega cap H)`, and the quotient measure has density
//! `lambda_G(g_q) J(q)` in `q`, with `J(q)` the Jacobian of `h -> g_q h` on
//! the fiber axes, so that `int f d mu_{G/H} = mu_G(Omega)`.

use crate::error::{Error, Result};
use crate::group::{det, GroupChart, MAX_DIM};
use crate::setrep::{CellSet, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

const TOL: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct FiberSplit {
    chart: GroupChart,
    mask: u32,
    fiber: Vec<usize>,
    base: Vec<usize>,
    identity: Vec<f64>,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * (1.0 + a.abs().max(b.abs()))
}

/// A random element with coordinates of order one inside the domain.
fn sample_element(chart: &GroupChart, rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for (x, a) in out.iter_mut().zip(chart.axes()) {
        *x = match a.period {
            Some(p) => rng.gen_range(0.0..p),
            None if a.lo.is_finite() => a.lo + rng.gen_range(-0.7f64..0.7).exp(),
            None => rng.gen_range(-1.0..1.0),
        };
    }
}

impl FiberSplit {
    /// Checks on seeded samples that the axes in `mask` span a normal
    /// subgroup whose cosets are the coordinate slices.
    pub fn new(chart: &GroupChart, mask: u32) -> Result<FiberSplit> {
        let d = chart.dim();
        if mask == 0 || mask >> d != 0 || mask.count_ones() as usize == d {
            return Err(Error::Invalid(format!("fiber mask {mask:#b} must select a proper nonempty set of the {d} axes")));
        }
        let fiber: Vec<usize> = (0..d).filter(|a| mask & (1 << a) != 0).collect();
        let base: Vec<usize> = (0..d).filter(|a| mask & (1 << a) == 0).collect();
        let split = FiberSplit { chart: chart.clone(), mask, fiber, base, identity: chart.identity().coords };
        split.validate()?;
        Ok(split)
    }

    /// The center `{(0, 0, z)}` of the Heisenberg group.
    pub fn heis3_center() -> FiberSplit {
        FiberSplit::new(&GroupChart::heis3(), 0b100).expect("center is normal")
    }

    fn in_h(&self, g: &[f64]) -> bool {
        self.base.iter().all(|&a| close(g[a], self.identity[a]))
    }

    fn validate(&self) -> Result<()> {
        let c = &self.chart;
        let d = c.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let (mut g, mut h1, mut h2, mut t, mut u) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let name = c.name();
        for _ in 0..200 {
            sample_element(c, &mut rng, &mut g);
            sample_element(c, &mut rng, &mut h1);
            sample_element(c, &mut rng, &mut h2);
            for &a in &self.base {
                h1[a] = self.identity[a];
                h2[a] = self.identity[a];
            }
            c.mul_into(&h1, &h2, &mut t);
            c.inv_into(&h1, &mut u);
            if !self.in_h(&t) || !self.in_h(&u) {
                return Err(Error::Unsupported(format!("axes {:?} of {name} do not form a subgroup", self.fiber)));
            }
            // g h g^-1 in H
            c.mul_into(&g, &h1, &mut t);
            c.inv_into(&g, &mut u);
            let mut w = vec![0.0; d];
            c.mul_into(&t, &u, &mut w);
            if !self.in_h(&w) {
                return Err(Error::Unsupported(format!("axes {:?} of {name} do not span a normal subgroup", self.fiber)));
            }
            // g h stays on the coordinate slice of g
            if self.base.iter().any(|&a| !close(t[a], g[a])) {
                return Err(Error::Unsupported(format!("cosets of axes {:?} in {name} are not coordinate slices", self.fiber)));
            }
            // the fiber coordinates of g_q h are affine in those of h
            let q = self.quotient(&g);
            let s = self.section(&q);
            let jac = self.fiber_jacobian(&s);
            c.mul_into(&s, &h1, &mut t);
            if self.fiber.len() == 1 {
                let a = self.fiber[0];
                if !close(t[a] - self.identity[a], jac * (h1[a] - self.identity[a])) {
                    return Err(Error::Unsupported(format!("fiber coordinates of {name} are not linear along cosets")));
                }
            }
        }
        Ok(())
    }

    pub fn chart(&self) -> &GroupChart {
        &self.chart
    }

    pub fn mask(&self) -> u32 {
        self.mask
    }

    pub fn fiber_axes(&self) -> &[usize] {
        &self.fiber
    }

    pub fn base_axes(&self) -> &[usize] {
        &self.base
    }

    pub fn quotient(&self, g: &[f64]) -> Vec<f64> {
        self.base.iter().map(|&a| g[a]).collect()
    }

    pub fn section(&self, q: &[f64]) -> Vec<f64> {
        let mut g = self.identity.clone();
        for (&a, &v) in self.base.iter().zip(q) {
            g[a] = v;
        }
        g
    }

    /// `|det|` of the fiber block of `D_h (g h)` at `h = e`.
    fn fiber_jacobian(&self, g: &[f64]) -> f64 {
        let d = self.chart.dim();
        let k = self.fiber.len();
        let mut ja = [0.0; MAX_DIM * MAX_DIM];
        let mut jb = [0.0; MAX_DIM * MAX_DIM];
        self.chart.jac_mul(g, &self.identity, &mut ja[..d * d], &mut jb[..d * d]);
        let mut m = vec![0.0; k * k];
        for (i, &r) in self.fiber.iter().enumerate() {
            for (j, &c) in self.fiber.iter().enumerate() {
                m[i * k + j] = jb[r * d + c];
            }
        }
        det(&mut m, k).abs()
    }

    /// Density of the quotient measure in the quotient coordinates.
    pub fn quotient_density(&self, q: &[f64]) -> f64 {
        let s = self.section(q);
        self.chart.left_density(&s) * self.fiber_jacobian(&s)
    }

    fn check_set(&self, omega: &CellSet) -> Result<CellSet> {
        if omega.chart().name() != self.chart.name() {
            return Err(Error::Invalid(format!("set lives on {}, split on {}", omega.chart().name(), self.chart.name())));
        }
        omega.desaturate(omega.sat())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberCell {
    pub index: Vec<i64>,
    pub center: Vec<f64>,
    /// Fiber length at the cell center.
    pub value: f64,
    /// Quotient measure of the cell.
    pub weight: f64,
}

/// Fiber lengths on the quotient cells of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberProfile {
    pub group: String,
    pub base_axes: Vec<usize>,
    pub sides: Vec<f64>,
    pub level: u32,
    /// Cells with a nonempty fiber, sorted by index.
    pub cells: Vec<FiberCell>,
}

impl FiberProfile {
    /// `int f d mu_{G/H}`.
    pub fn integral(&self) -> f64 {
        self.integral_pow(1.0)
    }

    pub fn integral_pow(&self, r: f64) -> f64 {
        self.cells.iter().map(|c| c.value.powf(r) * c.weight).sum()
    }

    pub fn max_value(&self) -> f64 {
        self.cells.iter().map(|c| c.value).fold(0.0, f64::max)
    }

    /// CSV with one row per quotient cell: center coordinates, value, weight.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head: Vec<String> = self.base_axes.iter().map(|a| format!("q{a}")).collect();
        head.push("value".into());
        head.push("weight".into());
        w.write_record(&head).map_err(|e| Error::Io(e.to_string()))?;
        for c in &self.cells {
            let mut row: Vec<String> = c.center.iter().map(|v| format!("{v:.12e}")).collect();
            row.push(format!("{:.12e}", c.value));
            row.push(format!("{:.12e}", c.weight));
            w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Fiber intervals per quotient cell of a cell set, in fiber coordinates.
struct Slices {
    sides: Vec<f64>,
    /// Quotient index to merged intervals (one fiber axis) or total
    /// Lebesgue measure (stored as a single interval `[0, m]`).
    map: FxHashMap<Vec<i64>, Vec<(f64, f64)>>,
}

fn merge(iv: &mut Vec<(f64, f64)>) {
    iv.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
    for &(lo, hi) in iv.iter() {
        match out.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    *iv = out;
}

fn length(iv: &[(f64, f64)]) -> f64 {
    iv.iter().map(|(a, b)| b - a).sum()
}

fn slices(split: &FiberSplit, set: &CellSet) -> Slices {
    let grid = set.grid();
    let red = set.reduced_axes();
    let pos = |a: usize| red.iter().position(|&r| r == a).expect("desaturated");
    let base_pos: Vec<usize> = split.base.iter().map(|&a| pos(a)).collect();
    let fiber_pos: Vec<usize> = split.fiber.iter().map(|&a| pos(a)).collect();
    let sides: Vec<f64> = split.base.iter().map(|&a| grid.side(a)).collect();
    let fside: Vec<f64> = split.fiber.iter().map(|&a| grid.side(a)).collect();
    let vol: f64 = fside.iter().product();
    let one = split.fiber.len() == 1;
    let mut map: FxHashMap<Vec<i64>, Vec<(f64, f64)>> = FxHashMap::default();
    let mut idx = vec![0i64; red.len()];
    for &k in set.keys() {
        set.unpack(k, &mut idx);
        let q: Vec<i64> = base_pos.iter().map(|&p| idx[p]).collect();
        let e = map.entry(q).or_default();
        if one {
            let i = idx[fiber_pos[0]] as f64;
            e.push((i * fside[0], (i + 1.0) * fside[0]));
        } else {
            match e.first_mut() {
                Some(iv) => iv.1 += vol,
                None => e.push((0.0, vol)),
            }
        }
    }
    if one {
        map.values_mut().for_each(merge);
    }
    Slices { sides, map }
}

fn centers(idx: &[i64], sides: &[f64]) -> Vec<f64> {
    idx.iter().zip(sides).map(|(&i, &h)| (i as f64 + 0.5) * h).collect()
}

/// Fiber lengths of `omega` on its own grid.
pub fn fiber_profile(split: &FiberSplit, omega: &CellSet) -> Result<FiberProfile> {
    let set = split.check_set(omega)?;
    let s = slices(split, &set);
    let vol: f64 = s.sides.iter().product();
    let mut cells: Vec<FiberCell> = s
        .map
        .iter()
        .map(|(q, iv)| {
            let center = centers(q, &s.sides);
            let g = split.section(&center);
            let jac = split.fiber_jacobian(&g);
            FiberCell {
                index: q.clone(),
                value: length(iv) / jac,
                weight: split.chart.left_density(&g) * jac * vol,
                center,
            }
        })
        .collect();
    cells.sort_by(|a, b| a.index.cmp(&b.index));
    Ok(FiberProfile { group: split.chart.name().to_string(), base_axes: split.base.clone(), sides: s.sides, level: set.level(), cells })
}

/// `|mu_G(Omega) - int f_Omega| / mu_G(Omega)`.
pub fn quotient_integral_check(split: &FiberSplit, omega: &CellSet) -> Result<f64> {
    let m = omega.measure(Side::Left).value;
    if m <= 0.0 {
        return Err(Error::Invalid("the set has zero measure".into()));
    }
    let p = fiber_profile(split, omega)?;
    Ok((m - p.integral()).abs() / m)
}

/// Inner estimate of the fiber lengths of `XY` on the grid of `X`.
///
/// For a one-dimensional fiber with law `(q1, m1)(q2, m2) = (q1 q2, m1 +
/// A m2 + c)`, the fiber of `XY` over `q` contains `F_X(q1) + A F_Y(q2) + c`
/// for every `q1` with `q1^{-1} q = q2`. Cells are closed, so the union
/// over a lattice of `(sub + 1)^k` points `q1` per quotient cell of `X`,
/// corners included, is a subset of the true fiber.
pub fn fiber_product_profile(split: &FiberSplit, x: &CellSet, y: &CellSet, sub: usize) -> Result<FiberProfile> {
    if split.fiber.len() != 1 {
        return Err(Error::Unsupported("fiber products need a one-dimensional fiber".into()));
    }
    let sub = sub.max(1);
    let (x, y) = (split.check_set(x)?, split.check_set(y)?);
    let c = &split.chart;
    let d = c.dim();
    let fa = split.fiber[0];
    let sx = slices(split, &x);
    let sy = slices(split, &y);
    let k = split.base.len();
    let ygrid = y.grid();
    let xgrid = x.grid();

    // sample points of the X quotient cells with their fibers
    let mut q1s: Vec<(Vec<f64>, &Vec<(f64, f64)>)> = Vec::new();
    let mut keys: Vec<&Vec<i64>> = sx.map.keys().collect();
    keys.sort();
    for q in keys {
        let iv = &sx.map[q];
        let mut off = vec![0usize; k];
        loop {
            let p: Vec<f64> = (0..k).map(|i| (q[i] as f64 + off[i] as f64 / sub as f64) * sx.sides[i]).collect();
            q1s.push((p, iv));
            let mut i = 0;
            while i < k {
                off[i] += 1;
                if off[i] <= sub {
                    break;
                }
                off[i] = 0;
                i += 1;
            }
            if i == k {
                break;
            }
        }
    }
    let y_index = |q2: &[f64]| -> Vec<i64> { split.base.iter().zip(q2).map(|(&a, &v)| ygrid.index(a, v)).collect() };
    let x_index = |q: &[f64]| -> Vec<i64> { split.base.iter().zip(q).map(|(&a, &v)| xgrid.index(a, v)).collect() };

    // candidate output cells from sample points times Y cell centers
    let mut ykeys: Vec<&Vec<i64>> = sy.map.keys().collect();
    ykeys.sort();
    let mut cand: FxHashSet<Vec<i64>> = FxHashSet::default();
    let mut prod = vec![0.0; d];
    for (p, _) in &q1s {
        let g1 = split.section(p);
        for qy in &ykeys {
            let g2 = split.section(&centers(qy, &sy.sides));
            c.mul_into(&g1, &g2, &mut prod);
            c.wrap(&mut prod);
            cand.insert(x_index(&split.quotient(&prod)));
        }
    }
    let mut cand: Vec<Vec<i64>> = cand.into_iter().collect();
    cand.sort();

    let vol: f64 = sx.sides.iter().product();
    let cells: Vec<FiberCell> = cand
        .par_iter()
        .filter_map(|qi| {
            let center = centers(qi, &sx.sides);
            let gq = split.section(&center);
            let mut inv = vec![0.0; d];
            let mut t = vec![0.0; d];
            let mut ja = [0.0; MAX_DIM * MAX_DIM];
            let mut jb = [0.0; MAX_DIM * MAX_DIM];
            let mut iv: Vec<(f64, f64)> = Vec::new();
            for (p, fx) in &q1s {
                let g1 = split.section(p);
                c.inv_into(&g1, &mut inv);
                c.mul_into(&inv, &gq, &mut t);
                c.wrap(&mut t);
                let q2 = split.quotient(&t);
                let Some(fy) = sy.map.get(&y_index(&q2)) else { continue };
                let g2 = split.section(&q2);
                c.mul_into(&g1, &g2, &mut t);
                let shift = t[fa] - split.identity[fa];
                c.jac_mul(&g1, &g2, &mut ja[..d * d], &mut jb[..d * d]);
                let a = jb[fa * d + fa];
                for &(xl, xh) in fx.iter() {
                    for &(yl, yh) in fy.iter() {
                        let (u, v) = (a * (yl - split.identity[fa]), a * (yh - split.identity[fa]));
                        iv.push((xl + u.min(v) + shift, xh + u.max(v) + shift));
                    }
                }
            }
            if iv.is_empty() {
                return None;
            }
            merge(&mut iv);
            let jac = split.fiber_jacobian(&gq);
            Some(FiberCell {
                index: qi.clone(),
                value: length(&iv) / jac,
                weight: c.left_density(&gq) * jac * vol,
                center,
            })
        })
        .collect();
    Ok(FiberProfile { group: c.name().to_string(), base_axes: split.base.clone(), sides: sx.sides, level: x.level(), cells })
}

/// Quotient measure of `{f >= t}`.
pub fn superlevel_measure(p: &FiberProfile, t: f64) -> f64 {
    p.cells.iter().filter(|c| c.value >= t).map(|c| c.weight).sum()
}

/// `int_0^inf r t^{r-1} mu(L+(t)) dt` by the midpoint rule with `nodes` nodes
/// on `[0, max f]`.
pub fn layer_cake(p: &FiberProfile, r: f64, nodes: usize) -> f64 {
    let top = p.max_value();
    if top == 0.0 || nodes == 0 {
        return 0.0;
    }
    let mut vals: Vec<(f64, f64)> = p.cells.iter().map(|c| (c.value, c.weight)).collect();
    vals.sort_by(|a, b| b.0.total_cmp(&a.0));
    let h = top / nodes as f64;
    let mut acc = 0.0;
    let mut mass = 0.0;
    let mut j = 0;
    // walk t downward so the superlevel mass accumulates
    for i in (0..nodes).rev() {
        let t = (i as f64 + 0.5) * h;
        while j < vals.len() && vals[j].0 >= t {
            mass += vals[j].1;
            j += 1;
        }
        acc += r * t.powf(r - 1.0) * mass * h;
    }
    acc
}

fn spillover_exponents(n1: u32, n2: u32) -> Result<(f64, f64)> {
    if n1 == 0 || n1 + n2 < 2 {
        return Err(Error::Invalid(format!("the spillover functional needs n1 >= 1 and n1 + n2 >= 2, got ({n1}, {n2})")));
    }
    let gamma = (n1 + n2 - 1) as f64;
    // beta / n2 = 1 / gamma, which stays defined at n2 = 0
    Ok(((n1 - 1) as f64 / gamma, 1.0 / gamma))
}

/// `F(t) = t^alpha mu^{beta/n2}(L+(t^{n1}))`.
pub fn spillover_f(p: &FiberProfile, n1: u32, n2: u32, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Invalid(format!("spillover functional needs t > 0, got {t}")));
    }
    let (alpha, e) = spillover_exponents(n1, n2)?;
    Ok(t.powf(alpha) * superlevel_measure(p, t.powi(n1 as i32)).powf(e))
}

/// `F_XY(t1 + t2) - F_X(t1) - F_Y(t2)`.
pub fn convexity_margin(pxy: &FiberProfile, px: &FiberProfile, py: &FiberProfile, n1: u32, n2: u32, t1: f64, t2: f64) -> Result<f64> {
    Ok(spillover_f(pxy, n1, n2, t1 + t2)? - spillover_f(px, n1, n2, t1)? - spillover_f(py, n1, n2, t2)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub min_margin: f64,
    pub at: (f64, f64),
    pub points: usize,
    /// Largest `t` with `F_X(t) > 0`, likewise for `Y`.
    pub t_max: (f64, f64),
}

/// Worst margin over `t_i = k T_i / grid`, `k = 1..=grid`, where `T_i` is
/// the end of the support of `F_X`, `F_Y`. Fibers of `XY` use the inner
/// fiber-product estimate.
pub fn spillover_convexity_check(split: &FiberSplit, x: &CellSet, y: &CellSet, n1: u32, n2: u32, grid: usize) -> Result<ConvexityReport> {
    spillover_exponents(n1, n2)?;
    if grid == 0 {
        return Err(Error::Invalid("convexity grid needs at least one point per axis".into()));
    }
    let px = fiber_profile(split, x)?;
    let py = fiber_profile(split, y)?;
    let pxy = fiber_product_profile(split, x, y, 1)?;
    let root = |m: f64| m.powf(1.0 / n1 as f64);
    let (tx, ty) = (root(px.max_value()), root(py.max_value()));
    let mut rep = ConvexityReport { min_margin: f64::INFINITY, at: (0.0, 0.0), points: 0, t_max: (tx, ty) };
    for i in 1..=grid {
        for j in 1..=grid {
            let (t1, t2) = (tx * i as f64 / grid as f64, ty * j as f64 / grid as f64);
            let m = convexity_margin(&pxy, &px, &py, n1, n2, t1, t2)?;
            rep.points += 1;
            if m < rep.min_margin {
                rep.min_margin = m;
                rep.at = (t1, t2);
            }
        }
    }
    Ok(rep)
}

fn lemma51_ratio(ab: f64, kab: f64, p: f64, s: f64) -> f64 {
    let r = s.exp();
    let (u, v) = ((r * ab).powf(p), (r * kab).powf(p));
    (v - u) / ((1.0 + u) * (1.0 + v))
}

/// `sup_r [(r(a+e)(b+e))^p - (r a b)^p] / [(1 + (r a b)^p)(1 + (r(a+e)(b+e))^p)]`
/// with `p = 1/(n+1)`; `n = 0` gives the linear form of the same bound.
/// The supremum is found by a coarse scan over `log r in [ln 1e-8, ln 1e8]`,
/// widened while the best point sits on the edge, then golden-section search.
pub fn lemma51_deficit(a: f64, b: f64, n: u32, eps: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && eps >= 0.0 && a.is_finite() && b.is_finite() && eps.is_finite()) {
        return Err(Error::Invalid(format!("lemma bound needs a, b > 0 and eps >= 0, got {a}, {b}, {eps}")));
    }
    if eps == 0.0 {
        return Ok(0.0);
    }
    let p = 1.0 / (n as f64 + 1.0);
    let ab = a * b;
    let kab = ab + eps * (a + b + eps);
    let g = |s: f64| lemma51_ratio(ab, kab, p, s);
    let (mut lo, mut hi) = (1e-8f64.ln(), 1e8f64.ln());
    let m = 128;
    let (mut best, mut step);
    loop {
        step = (hi - lo) / m as f64;
        best = (0..=m).map(|i| lo + i as f64 * step).map(|s| (s, g(s))).fold((lo, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
        let width = hi - lo;
        if best.0 == lo && lo > -700.0 {
            lo -= width;
        } else if best.0 == hi && hi < 700.0 {
            hi += width;
        } else {
            break;
        }
    }
    let (mut x0, mut x1) = (best.0 - step, best.0 + step);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = x1 - phi * (x1 - x0);
    let mut d = x0 + phi * (x1 - x0);
    let (mut gc, mut gd) = (g(c), g(d));
    while x1 - x0 > 1e-10 {
        if gc > gd {
            x1 = d;
            d = c;
            gd = gc;
            c = x1 - phi * (x1 - x0);
            gc = g(c);
        } else {
            x0 = c;
            c = d;
            gc = gd;
            d = x0 + phi * (x1 - x0);
            gd = g(d);
        }
    }
    Ok(g(0.5 * (x0 + x1)).max(best.1))
}
