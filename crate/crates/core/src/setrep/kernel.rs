//! Product sets `XY = {x y}` of cell sets.
//!
//! The outer cover encloses the image of every relevant cell pair by the box
//! around the product of the centers with half-widths `pad` times the
//! first-order extent `sum_j |J_ij| w_j` of the law's Jacobian at the centers. Since an
//! interior point of `X` or `Y` produces an interior point of `XY`, only
//! boundary pairs are enclosed; bounded holes of the resulting band are then
//! filled. Saturated operands are handled on their reduced axes.
//!
//! The inner estimate samples random products and keeps cells that were hit
//! at least `min_hits` times and whose face neighbors are corroborated.

use super::cellset::{CellSet, Role};
use super::dense::DenseBox;
use super::grid::{floor_i64, Grid, Packer};
use crate::error::{Error, Result};
use crate::group::{GroupChart, MAX_DIM};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductOptions {
    /// Safety factor on the first-order enclosure.
    pub pad: f64,
    /// Hits needed before a cell may enter the inner estimate.
    pub min_hits: u32,
    /// Clipping at the chart domain is an error instead of a note.
    pub strict: bool,
    /// Largest enclosure contribution of a compact segment, in output cells.
    pub segment_tol: f64,
    /// Share of inner samples drawn from boundary cell pairs.
    pub boundary_share: f64,
}

impl Default for ProductOptions {
    fn default() -> Self {
        ProductOptions { pad: 1.5, min_hits: 3, strict: false, segment_tol: 0.25, boundary_share: 0.75 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProductStats {
    pub pairs: u64,
    pub band_cells: usize,
    pub filled_cells: usize,
    pub clipped_cells: usize,
    pub segments: usize,
    pub samples: u64,
    pub escaped_samples: u64,
    /// Band cells whose hit count lies in `1..2*min_hits`.
    pub marginal_cells: usize,
    pub pad: f64,
}

#[derive(Clone, Debug)]
pub struct ProductResult {
    pub outer: CellSet,
    pub inner: Option<CellSet>,
    /// Cells whose inner classification is statistically uncertain.
    pub marginal: Option<CellSet>,
    pub stats: ProductStats,
}

/// Outer cover of `XY` on the grid of `X` at `out_level`.
pub fn product_set(x: &CellSet, y: &CellSet, out_level: u32) -> Result<CellSet> {
    Ok(product_sets(x, y, out_level, None, &ProductOptions::default())?.outer)
}

/// Inner estimate of `XY` from `samples` random products.
pub fn product_set_inner(x: &CellSet, y: &CellSet, out_level: u32, samples: u64, seed: u64) -> Result<CellSet> {
    let r = product_sets(x, y, out_level, Some((samples, seed)), &ProductOptions::default())?;
    Ok(r.inner.expect("inner requested"))
}

/// Outer cover and, when `sampling = Some((samples, seed))`, the inner estimate.
pub fn product_sets(
    x: &CellSet,
    y: &CellSet,
    out_level: u32,
    sampling: Option<(u64, u64)>,
    opts: &ProductOptions,
) -> Result<ProductResult> {
    let grid = x.grid().at_level(out_level);
    if out_level < x.level() || (x.grid().same_base(y.grid()) && out_level < y.level()) {
        return Err(Error::Invalid(format!(
            "output level {out_level} is below the operand levels {} and {}",
            x.level(),
            y.level()
        )));
    }
    product_sets_on(x, y, grid, sampling, opts)
}

/// As [`product_sets`] with an explicit output grid.
pub fn product_sets_on(
    x: &CellSet,
    y: &CellSet,
    grid: Grid,
    sampling: Option<(u64, u64)>,
    opts: &ProductOptions,
) -> Result<ProductResult> {
    let chart = x.chart().clone();
    if chart.name() != y.chart().name() {
        return Err(Error::Invalid(format!("operands live on {} and {}", chart.name(), y.chart().name())));
    }
    if grid.dim() != chart.dim() {
        return Err(Error::Invalid("output grid dimension differs from the chart".into()));
    }
    let mut stats = ProductStats { pad: opts.pad, ..Default::default() };
    let out_sat = x.sat();
    let red: Vec<usize> = (0..chart.dim()).filter(|a| out_sat & (1 << a) == 0).collect();
    let role = if x.role() == Role::Inner || y.role() == Role::Inner { Role::Inner } else { Role::Outer };

    if x.is_empty() || y.is_empty() {
        let outer = CellSet::from_keys(&chart, grid.clone(), out_sat, Vec::new(), role)?;
        let inner = sampling.map(|_| outer.clone().with_role(Role::Inner));
        return Ok(ProductResult { marginal: inner.clone(), outer, inner, stats });
    }
    if red.is_empty() {
        let outer = CellSet::from_keys(&chart, grid.clone(), out_sat, vec![0], role)?;
        let inner = sampling.map(|_| outer.clone().with_role(Role::Inner));
        return Ok(ProductResult { marginal: None, outer, inner, stats });
    }

    let fill = red.iter().any(|&a| grid.period_cells[a].is_none());
    // Saturation of Y that X does not share is expanded away.
    let y = y.desaturate(y.sat() & !out_sat)?;
    let s = y.sat();
    let pick = |set: &CellSet| if fill { set.boundary_keys() } else { set.keys().to_vec() };

    let cover = if s != 0 {
        // X Y = (X K_S) Y_0 with Y_0 the section of Y at the identity of K_S.
        let a = Boxes::from_cells(x, &pick(x));
        let seg = segment_counts(&chart, &a, s, &grid, &red, opts);
        let k = Boxes::segments(&chart, s, &seg);
        stats.segments = k.len();
        let zc = cover(&chart, &a, &k, &grid, out_sat, fill, opts)?;
        stats.pairs += zc.pairs;
        let z = zc.to_set(&chart, Role::Outer, opts.strict)?.0;
        let a = Boxes::from_cells(&z, &pick(&z));
        let b = Boxes::from_cells(&y, &pick(&y));
        cover(&chart, &a, &b, &grid, out_sat, fill, opts)?
    } else {
        let a = Boxes::from_cells(x, &pick(x));
        let b = Boxes::from_cells(&y, &pick(&y));
        cover(&chart, &a, &b, &grid, out_sat, fill, opts)?
    };
    stats.pairs += cover.pairs;
    stats.band_cells = cover.count(BAND);
    let (mut outer, filled, clipped) = cover.to_set(&chart, role, opts.strict)?;
    stats.filled_cells = filled;
    stats.clipped_cells = clipped;
    if clipped > 0 {
        outer.add_note(format!("{clipped} cells of the product fell outside the chart domain and were clipped"));
    }

    let (inner, marginal) = match sampling {
        Some((samples, seed)) => {
            let (inner, marginal) = inner_estimate(&cover, x, &y, samples, seed, opts, &mut stats)?;
            (Some(inner), Some(marginal))
        }
        None => (None, None),
    };
    Ok(ProductResult { outer, inner, marginal, stats })
}

/// Boxes in full chart coordinates: centers and half-widths.
struct Boxes {
    d: usize,
    c: Vec<f64>,
    h: Vec<f64>,
}

impl Boxes {
    /// Cells as boxes; saturated axes become the identity section.
    fn from_cells(set: &CellSet, keys: &[u64]) -> Boxes {
        let chart = set.chart();
        let d = chart.dim();
        let e = chart.identity().coords;
        let red = set.reduced_axes();
        let hs: Vec<f64> = red.iter().map(|&a| set.grid().side(a)).collect();
        let mut c = Vec::with_capacity(keys.len() * d);
        let mut h = Vec::with_capacity(keys.len() * d);
        let mut idx = vec![0i64; red.len()];
        for &key in keys {
            set.unpack(key, &mut idx);
            let base = c.len();
            c.extend_from_slice(&e);
            h.extend(std::iter::repeat(0.0).take(d));
            for (r, &a) in red.iter().enumerate() {
                c[base + a] = (idx[r] as f64 + 0.5) * hs[r];
                h[base + a] = 0.5 * hs[r];
            }
        }
        Boxes { d, c, h }
    }

    /// Segments of the compact subgroup along `axes`, `counts[a]` per axis.
    fn segments(chart: &GroupChart, axes: u32, counts: &[usize]) -> Boxes {
        let d = chart.dim();
        let e = chart.identity().coords;
        let ax: Vec<usize> = (0..d).filter(|a| axes & (1 << a) != 0).collect();
        let ranges: Vec<Vec<i64>> = ax.iter().map(|&a| (0..counts[a] as i64).collect()).collect();
        let mut c = Vec::new();
        let mut h = Vec::new();
        let mut cur = vec![0i64; ax.len()];
        super::cellset::for_each_product(&ranges, &mut cur, &mut |sel| {
            let base = c.len();
            c.extend_from_slice(&e);
            h.extend(std::iter::repeat(0.0).take(d));
            for (r, &a) in ax.iter().enumerate() {
                let p = chart.axes()[a].period.unwrap_or(1.0);
                let w = p / counts[a] as f64;
                c[base + a] = (sel[r] as f64 + 0.5) * w;
                h[base + a] = 0.5 * w;
            }
        });
        Boxes { d, c, h }
    }

    fn len(&self) -> usize {
        if self.d == 0 {
            0
        } else {
            self.c.len() / self.d
        }
    }

    fn center(&self, i: usize) -> &[f64] {
        &self.c[i * self.d..(i + 1) * self.d]
    }

    fn half(&self, i: usize) -> &[f64] {
        &self.h[i * self.d..(i + 1) * self.d]
    }
}

/// Segments per compact axis so that each contributes at most
/// `segment_tol` output cells to an enclosure.
fn segment_counts(chart: &GroupChart, a: &Boxes, axes: u32, grid: &Grid, red: &[usize], opts: &ProductOptions) -> Vec<usize> {
    let d = chart.dim();
    let mut counts = vec![1usize; d];
    let probes = 16;
    let stride = (a.len() / 256).max(1);
    let mut ja = [0.0; MAX_DIM * MAX_DIM];
    let mut jb = [0.0; MAX_DIM * MAX_DIM];
    let e = chart.identity().coords;
    for j in (0..d).filter(|j| axes & (1 << j) != 0) {
        let p = chart.axes()[j].period.unwrap_or(1.0);
        let mut need = 1.0f64;
        for i in (0..a.len()).step_by(stride) {
            for q in 0..probes {
                let mut k = e.clone();
                k[j] = (q as f64 + 0.5) / probes as f64 * p;
                chart.jac_mul(a.center(i), &k, &mut ja[..d * d], &mut jb[..d * d]);
                for (r, &ax) in red.iter().enumerate() {
                    let _ = r;
                    let slope = 1.25 * opts.pad * jb[ax * d + j].abs();
                    let w = opts.segment_tol * grid.side(ax);
                    need = need.max(p * slope / (2.0 * w));
                }
            }
        }
        counts[j] = (need.ceil() as usize).clamp(1, 1 << 16);
    }
    counts
}

#[inline]
fn ceil_i64(x: f64) -> i64 {
    let i = x as i64;
    if (i as f64) < x {
        i + 1
    } else {
        i
    }
}

const BAND: u8 = 1;
const EXTERIOR: u8 = 2;
const CLIPPED: u8 = 4;
const INNER: u8 = 8;

struct Cover {
    dbox: DenseBox,
    field: Vec<u8>,
    grid: Grid,
    sat: u32,
    red: Vec<usize>,
    fill: bool,
    pairs: u64,
}

impl Cover {
    fn is_outer(&self, o: usize) -> bool {
        let f = self.field[o];
        f & CLIPPED == 0 && (f & BAND != 0 || (self.fill && f & EXTERIOR == 0))
    }

    fn count(&self, flag: u8) -> usize {
        self.field.iter().filter(|&&f| f & flag != 0).count()
    }

    fn keys_where(&self, pred: impl Fn(usize) -> bool) -> Vec<u64> {
        let packer = Packer::new(self.red.len());
        let mut idx = vec![0i64; self.red.len()];
        let mut out = Vec::new();
        for o in 0..self.dbox.len() {
            if pred(o) {
                self.dbox.index_of(o, &mut idx);
                out.push(packer.pack(&idx));
            }
        }
        out
    }

    /// Outer set, filled cell count and clipped cell count.
    fn to_set(&self, chart: &GroupChart, role: Role, strict: bool) -> Result<(CellSet, usize, usize)> {
        let clipped = (0..self.dbox.len())
            .filter(|&o| {
                let f = self.field[o];
                f & CLIPPED != 0 && (f & BAND != 0 || (self.fill && f & EXTERIOR == 0))
            })
            .count();
        if clipped > 0 && strict {
            return Err(Error::Coverage(format!("{clipped} product cells fall outside the domain of {}", chart.name())));
        }
        let filled = (0..self.dbox.len()).filter(|&o| self.is_outer(o) && self.field[o] & BAND == 0).count();
        let keys = self.keys_where(|o| self.is_outer(o));
        Ok((CellSet::from_keys(chart, self.grid.clone(), self.sat, keys, role)?, filled, clipped))
    }
}

type ClassKey = [u16; MAX_DIM];

/// Sparse bit set of cells in blocks of up to 512 bits.
struct BlockSet {
    k: usize,
    bb: u32,
    packer: Packer,
    map: FxHashMap<u64, u32>,
    blocks: Vec<[u64; 8]>,
    last: Option<(u64, u32)>,
}

impl BlockSet {
    fn new(k: usize) -> BlockSet {
        let bb = match k {
            1 => 9,
            2 => 4,
            3 => 3,
            4 => 2,
            5..=9 => 1,
            _ => 0,
        };
        BlockSet { k, bb, packer: Packer::new(k), map: FxHashMap::default(), blocks: Vec::new(), last: None }
    }

    #[inline]
    fn insert(&mut self, idx: &[i64]) {
        let mut blk = [0i64; MAX_DIM];
        let mut bit = 0usize;
        let mask = (1i64 << self.bb) - 1;
        for r in 0..self.k {
            blk[r] = idx[r] >> self.bb;
            bit = (bit << self.bb) | (idx[r] & mask) as usize;
        }
        let key = self.packer.pack(&blk[..self.k]);
        let slot = match self.last {
            Some((k, s)) if k == key => s,
            _ => {
                let n = self.blocks.len() as u32;
                let s = *self.map.entry(key).or_insert(n);
                if s == n {
                    self.blocks.push([0; 8]);
                }
                self.last = Some((key, s));
                s
            }
        };
        self.blocks[slot as usize][bit >> 6] |= 1u64 << (bit & 63);
    }

    fn merge(&mut self, other: BlockSet) {
        for (key, s) in other.map {
            let n = self.blocks.len() as u32;
            let t = *self.map.entry(key).or_insert(n);
            if t == n {
                self.blocks.push([0; 8]);
            }
            let src = other.blocks[s as usize];
            for w in 0..8 {
                self.blocks[t as usize][w] |= src[w];
            }
        }
        self.last = None;
    }

    fn for_each(&self, mut f: impl FnMut(&[i64])) {
        let mut blk = [0i64; MAX_DIM];
        let mut idx = [0i64; MAX_DIM];
        let mask = (1usize << self.bb) - 1;
        for (&key, &s) in &self.map {
            self.packer.unpack(key, &mut blk[..self.k]);
            let words = &self.blocks[s as usize];
            for (w, &word) in words.iter().enumerate() {
                let mut word = word;
                while word != 0 {
                    let t = word.trailing_zeros() as usize;
                    word &= word - 1;
                    let bit = w * 64 + t;
                    for r in 0..self.k {
                        let shift = self.bb as usize * (self.k - 1 - r);
                        idx[r] = (blk[r] << self.bb) + ((bit >> shift) & mask) as i64;
                    }
                    f(&idx[..self.k]);
                }
            }
        }
    }

    /// Index bounds of the blocks present.
    fn bounds(&self, lo: &mut [i64], hi: &mut [i64]) {
        let mut blk = [0i64; MAX_DIM];
        for &key in self.map.keys() {
            self.packer.unpack(key, &mut blk[..self.k]);
            for r in 0..self.k {
                lo[r] = lo[r].min(blk[r] << self.bb);
                hi[r] = hi[r].max(((blk[r] + 1) << self.bb) - 1);
            }
        }
    }
}

#[derive(Default)]
struct Marks {
    index: FxHashMap<ClassKey, usize>,
    sets: Vec<(ClassKey, BlockSet)>,
    pairs: u64,
    bad: Option<String>,
}

impl Marks {
    fn slot(&mut self, key: &ClassKey, k: usize) -> usize {
        let n = self.sets.len();
        let s = *self.index.entry(*key).or_insert(n);
        if s == n {
            self.sets.push((*key, BlockSet::new(k)));
        }
        s
    }

    fn merge(mut self, other: Marks) -> Marks {
        for (key, set) in other.sets {
            let s = self.slot(&key, set.k);
            self.sets[s].1.merge(set);
        }
        self.pairs += other.pairs;
        if self.bad.is_none() {
            self.bad = other.bad;
        }
        self
    }
}

fn cover(chart: &GroupChart, a: &Boxes, b: &Boxes, grid: &Grid, sat: u32, fill: bool, opts: &ProductOptions) -> Result<Cover> {
    let d = chart.dim();
    let red: Vec<usize> = (0..d).filter(|x| sat & (1 << x) == 0).collect();
    let k = red.len();
    let hs: Vec<f64> = red.iter().map(|&x| grid.side(x)).collect();
    let packer = Packer::new(k);
    let limit_f = (packer.limit() / 2) as f64;
    let inv_h: Vec<f64> = hs.iter().map(|h| 1.0 / h).collect();
    let pad = opts.pad;

    let chunk = 16usize;
    let starts: Vec<usize> = (0..a.len()).step_by(chunk).collect();
    let marks = starts
        .par_iter()
        .fold(Marks::default, |mut m, &s| {
            let mut out = [0.0; MAX_DIM];
            let mut ja = [0.0; MAX_DIM * MAX_DIM];
            let mut jb = [0.0; MAX_DIM * MAX_DIM];
            let mut idx = [0i64; MAX_DIM];
            let mut class: ClassKey = [0; MAX_DIM];
            let mut cached: Option<(ClassKey, usize)> = None;
            for i in s..(s + chunk).min(a.len()) {
                let (ca, ha) = (a.center(i), a.half(i));
                for j in 0..b.len() {
                    let (cb, hb) = (b.center(j), b.half(j));
                    chart.mul_into(ca, cb, &mut out[..d]);
                    chart.jac_mul(ca, cb, &mut ja[..d * d], &mut jb[..d * d]);
                    for (r, &x) in red.iter().enumerate() {
                        let (jar, jbr) = (&ja[x * d..x * d + d], &jb[x * d..x * d + d]);
                        let mut e = 0.0;
                        for t in 0..d {
                            e += jar[t].abs() * ha[t] + jbr[t].abs() * hb[t];
                        }
                        // Closed enclosure [v - pad e, v + pad e] as a cell range.
                        let v = out[x];
                        let lo = (v - pad * e) * inv_h[r];
                        let hi = (v + pad * e) * inv_h[r];
                        if !(lo.abs() < limit_f && hi.abs() < limit_f) {
                            m.bad.get_or_insert_with(|| format!("product {:?} leaves the grid range", &out[..d]));
                            idx[r] = 0;
                            class[r] = 0;
                        } else {
                            let (lo, hi) = (floor_i64(lo), ceil_i64(hi) - 1);
                            idx[r] = grid.wrap_index(x, lo);
                            class[r] = (hi - lo).clamp(0, u16::MAX as i64) as u16;
                        }
                    }
                    let slot = match cached {
                        Some((ck, s)) if ck == class => s,
                        _ => {
                            let s = m.slot(&class, k);
                            cached = Some((class, s));
                            s
                        }
                    };
                    m.sets[slot].1.insert(&idx[..k]);
                }
                m.pairs += b.len() as u64;
            }
            m
        })
        .reduce(Marks::default, Marks::merge);
    if let Some(msg) = marks.bad {
        return Err(Error::Domain(msg));
    }

    let periodic: Vec<bool> = red.iter().map(|&x| grid.period_cells[x].is_some()).collect();
    let mut lo = vec![i64::MAX; k];
    let mut hi = vec![i64::MIN; k];
    for (ck, set) in &marks.sets {
        let mut l = vec![i64::MAX; k];
        let mut h = vec![i64::MIN; k];
        set.bounds(&mut l, &mut h);
        for r in 0..k {
            lo[r] = lo[r].min(l[r] - 1);
            hi[r] = hi[r].max(h[r] + ck[r] as i64 + 1);
        }
    }
    for (r, &x) in red.iter().enumerate() {
        if let Some(n) = grid.period_cells[x] {
            lo[r] = 0;
            hi[r] = n - 1;
        }
    }
    let dbox = DenseBox::new(lo, hi, periodic)?;
    let mut field = vec![0u8; dbox.len()];
    let mut tmp = vec![0u8; dbox.len()];
    let mut sets: Vec<&(ClassKey, BlockSet)> = marks.sets.iter().collect();
    sets.sort_by_key(|(ck, _)| *ck);
    for (ck, set) in sets {
        tmp.iter_mut().for_each(|v| *v = 0);
        set.for_each(|idx| {
            if let Some(o) = dbox.offset(idx) {
                tmp[o] = 1;
            }
        });
        let fwd: Vec<usize> = ck[..k].iter().map(|&r| r as usize).collect();
        dbox.spread(&mut tmp, 1, &vec![0; k], &fwd);
        for (f, t) in field.iter_mut().zip(&tmp) {
            *f |= *t * BAND;
        }
    }
    drop(tmp);

    if fill {
        let mut stack: Vec<usize> = Vec::new();
        for o in 0..dbox.len() {
            if field[o] & BAND == 0 && dbox.on_face(o) {
                field[o] |= EXTERIOR;
                stack.push(o);
            }
        }
        while let Some(o) = stack.pop() {
            for ax in 0..k {
                for dir in [-1, 1] {
                    if let Some(n) = dbox.neighbor(o, ax, dir) {
                        if field[n] & (BAND | EXTERIOR) == 0 {
                            field[n] |= EXTERIOR;
                            stack.push(n);
                        }
                    }
                }
            }
        }
    }

    // Cells whose interior misses the chart domain.
    let mut idx = vec![0i64; k];
    for (r, &x) in red.iter().enumerate() {
        let ax = &chart.axes()[x];
        if ax.period.is_some() || (ax.lo == f64::NEG_INFINITY && ax.hi == f64::INFINITY) {
            continue;
        }
        for o in 0..dbox.len() {
            dbox.index_of(o, &mut idx);
            let cl = idx[r] as f64 * hs[r];
            if cl + hs[r] <= ax.lo || cl >= ax.hi {
                field[o] |= CLIPPED;
            }
        }
    }

    Ok(Cover { dbox, field, grid: grid.clone(), sat, red, fill, pairs: marks.pairs })
}

const SAMPLE_CHUNK: u64 = 1 << 15;

/// Random point of a random cell: reduced coordinates uniform in the cell,
/// saturated coordinates uniform over their period.
fn sample_point(set: &CellSet, keys: &[u64], rng: &mut ChaCha8Rng, idx: &mut [i64], g: &mut [f64]) {
    let key = keys[rng.gen_range(0..keys.len())];
    set.unpack(key, idx);
    let chart = set.chart();
    let mut r = 0;
    for a in 0..chart.dim() {
        if set.sat() & (1 << a) != 0 {
            g[a] = rng.gen::<f64>() * chart.axes()[a].period.unwrap_or(1.0);
        } else {
            let h = set.grid().side(a);
            g[a] = (idx[r] as f64 + rng.gen::<f64>()) * h;
            r += 1;
        }
    }
}

fn inner_estimate(
    cover: &Cover,
    x: &CellSet,
    y: &CellSet,
    samples: u64,
    seed: u64,
    opts: &ProductOptions,
    stats: &mut ProductStats,
) -> Result<(CellSet, CellSet)> {
    if samples == 0 {
        return Err(Error::Invalid("the inner estimate needs at least one sample".into()));
    }
    let chart = x.chart();
    let d = chart.dim();
    let k = cover.red.len();
    let (bx, by) = (x.boundary_keys(), y.boundary_keys());
    let (bx, by) = (
        if bx.is_empty() { x.keys().to_vec() } else { bx },
        if by.is_empty() { y.keys().to_vec() } else { by },
    );
    let n_boundary = (samples as f64 * opts.boundary_share).round() as u64;
    let chunks = samples.div_ceil(SAMPLE_CHUNK);
    let mut counts = vec![0u16; cover.dbox.len()];
    let mut escaped = 0u64;
    let batch = 32u64;
    let mut c0 = 0;
    while c0 < chunks {
        let hits: Vec<Vec<u32>> = (c0..(c0 + batch).min(chunks))
            .into_par_iter()
            .map(|c| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(c);
                let mut gx = vec![0.0; d];
                let mut gy = vec![0.0; d];
                let mut out = vec![0.0; d];
                let mut ix = vec![0i64; x.reduced_axes().len()];
                let mut iy = vec![0i64; y.reduced_axes().len()];
                let mut io = vec![0i64; k];
                let lo = c * SAMPLE_CHUNK;
                let hi = (lo + SAMPLE_CHUNK).min(samples);
                let mut v = Vec::with_capacity((hi - lo) as usize);
                for s in lo..hi {
                    let (kx, ky) = if s < n_boundary { (&bx[..], &by[..]) } else { (x.keys(), y.keys()) };
                    sample_point(x, kx, &mut rng, &mut ix, &mut gx);
                    sample_point(y, ky, &mut rng, &mut iy, &mut gy);
                    chart.mul_into(&gx, &gy, &mut out);
                    for (r, &a) in cover.red.iter().enumerate() {
                        io[r] = cover.grid.index(a, out[a]);
                    }
                    v.push(match cover.dbox.offset(&io) {
                        Some(o) if cover.is_outer(o) => o as u32,
                        _ => u32::MAX,
                    });
                }
                v
            })
            .collect();
        for v in hits {
            for o in v {
                if o == u32::MAX {
                    escaped += 1;
                } else {
                    let c = &mut counts[o as usize];
                    *c = c.saturating_add(1);
                }
            }
        }
        c0 += batch;
    }
    stats.samples += samples;
    stats.escaped_samples += escaped;

    // Hole components count as inner when one of their cells was hit.
    let n = cover.dbox.len();
    let mut comp = vec![u32::MAX; n];
    let mut comp_hit: Vec<bool> = Vec::new();
    if cover.fill {
        let mut stack = Vec::new();
        for o in 0..n {
            let f = cover.field[o];
            if f & (BAND | EXTERIOR | CLIPPED) != 0 || comp[o] != u32::MAX {
                continue;
            }
            let id = comp_hit.len() as u32;
            let mut hit = false;
            comp[o] = id;
            stack.push(o);
            while let Some(p) = stack.pop() {
                hit |= counts[p] > 0;
                for ax in 0..k {
                    for dir in [-1, 1] {
                        if let Some(q) = cover.dbox.neighbor(p, ax, dir) {
                            let fq = cover.field[q];
                            if fq & (BAND | EXTERIOR | CLIPPED) == 0 && comp[q] == u32::MAX {
                                comp[q] = id;
                                stack.push(q);
                            }
                        }
                    }
                }
            }
            comp_hit.push(hit);
        }
    }
    let in_hole = |o: usize| comp[o] != u32::MAX && comp_hit[comp[o] as usize];
    let min_hits = opts.min_hits.min(u16::MAX as u32) as u16;
    let mut flags = vec![0u8; n];
    let mut marginal = vec![false; n];
    for o in 0..n {
        if !cover.is_outer(o) {
            continue;
        }
        if cover.field[o] & BAND == 0 {
            if in_hole(o) {
                flags[o] = INNER;
            }
            continue;
        }
        let c = counts[o];
        if c > 0 && (c as u32) < 2 * opts.min_hits {
            marginal[o] = true;
        }
        if c < min_hits {
            continue;
        }
        let corroborated = (0..k).all(|ax| {
            [-1, 1].iter().all(|&dir| match cover.dbox.neighbor(o, ax, dir) {
                Some(q) => counts[q] > 0 || in_hole(q),
                None => false,
            })
        });
        if corroborated {
            flags[o] = INNER;
        }
    }
    stats.marginal_cells = marginal.iter().filter(|&&m| m).count();
    let inner_keys = cover.keys_where(|o| flags[o] == INNER);
    let marginal_keys = cover.keys_where(|o| marginal[o]);
    let inner = CellSet::from_keys(chart, cover.grid.clone(), cover.sat, inner_keys, Role::Inner)?;
    let marginal = CellSet::from_keys(chart, cover.grid.clone(), cover.sat, marginal_keys, Role::Inner)?;
    Ok((inner, marginal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setrep::Side;

    fn interval(lo: f64, hi: f64, level: u32) -> CellSet {
        CellSet::from_box(&GroupChart::euclid(1), &[lo], &[hi], level).unwrap()
    }

    #[test]
    fn interval_sum_outer_shrinks_to_two() {
        let mut prev = f64::INFINITY;
        for level in [4, 6, 8] {
            let x = interval(0.0, 1.0, level);
            let o = product_set(&x, &x, level).unwrap();
            let m = o.measure(Side::Left).value;
            assert!(m >= 2.0 && m < prev, "level {level}: {m}");
            prev = m;
        }
        assert!(prev < 2.05);
    }

    #[test]
    fn interval_sum_inner_close_to_two() {
        let x = interval(0.0, 1.0, 7);
        let r = product_sets(&x, &x, 7, Some((200_000, 1)), &ProductOptions::default()).unwrap();
        let inner = r.inner.unwrap();
        let mi = inner.measure(Side::Left).value;
        assert!(mi <= 2.0 && mi > 0.98 * 2.0, "{mi}");
        assert!(inner.is_subset_of(&r.outer).unwrap());
        assert_eq!(r.stats.escaped_samples, 0);
    }

    #[test]
    fn product_contains_sampled_products() {
        let aff = GroupChart::aff();
        let x = CellSet::from_box(&aff, &[1.0, 0.0], &[1.5, 0.5], 5).unwrap();
        let y = CellSet::from_box(&aff, &[0.5, -0.25], &[1.0, 0.25], 5).unwrap();
        let o = product_set(&x, &y, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut idx = [0i64; 2];
        for _ in 0..20_000 {
            let g = [rng.gen_range(1.0..1.5), rng.gen_range(0.0..0.5)];
            let h = [rng.gen_range(0.5..1.0), rng.gen_range(-0.25..0.25)];
            let mut p = [0.0; 2];
            aff.mul_into(&g, &h, &mut p);
            for a in 0..2 {
                idx[a] = o.grid().index(a, p[a]);
            }
            assert!(o.contains_key(o.packer().pack(&idx)), "{p:?} missing");
        }
    }

    #[test]
    fn empty_operand_gives_empty_product() {
        let r1 = GroupChart::euclid(1);
        let e = CellSet::empty(&r1, Grid::standard(&r1, 3).unwrap(), 0).unwrap();
        let x = interval(0.0, 1.0, 3);
        assert!(product_set(&e, &x, 3).unwrap().is_empty());
    }

    #[test]
    fn torus_product_is_full_circle() {
        let t = GroupChart::torus(1);
        let x = CellSet::from_box(&t, &[0.0], &[0.6], 4).unwrap();
        let o = product_set(&x, &x, 4).unwrap();
        assert_eq!(o.len(), 16);
    }

    #[test]
    fn level_below_operands_is_rejected() {
        let x = interval(0.0, 1.0, 5);
        assert!(product_set(&x, &x, 4).is_err());
    }

    #[test]
    fn products_are_deterministic() {
        let h = GroupChart::heis3();
        let x = CellSet::from_box(&h, &[0.0; 3], &[1.0; 3], 3).unwrap();
        let a = product_sets(&x, &x, 3, Some((50_000, 9)), &ProductOptions::default()).unwrap();
        let b = product_sets(&x, &x, 3, Some((50_000, 9)), &ProductOptions::default()).unwrap();
        assert_eq!(a.outer.keys(), b.outer.keys());
        assert_eq!(a.inner.unwrap().keys(), b.inner.unwrap().keys());
    }
}
