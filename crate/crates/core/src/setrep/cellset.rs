use super::dense::DenseBox;
use super::grid::{Grid, Packer};
use crate::error::{Error, Result};
use crate::group::GroupChart;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    /// The cells are the set.
    Exact,
    /// The cells contain the set they approximate.
    Outer,
    /// The cells are contained in the set they approximate (statistically).
    Inner,
}

impl Role {
    fn join(self, other: Role) -> Result<Role> {
        use Role::*;
        Ok(match (self, other) {
            (Exact, r) | (r, Exact) => r,
            (Outer, Outer) => Outer,
            (Inner, Inner) => Inner,
            _ => return Err(Error::Invalid("union of an inner and an outer approximation has no role".into())),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

/// Where cell quadrature takes the Haar density from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DensitySource {
    /// `1/|det|` of the analytic translation Jacobian of the law.
    #[default]
    Law,
    /// The chart's closed-form expressions.
    Closed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measure {
    pub value: f64,
    /// Sum over cells of |refined - coarse| midpoint quadrature.
    pub err: f64,
}

/// A compact set as a union of closed dyadic cells.
///
/// Axes in `sat` are saturated: the set is invariant under the compact
/// subgroup along them, and cells are stored with those axes dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct CellSet {
    chart: GroupChart,
    grid: Grid,
    sat: u32,
    red: Vec<usize>,
    packer: Packer,
    cells: Vec<u64>,
    role: Role,
    notes: Vec<String>,
}

const CHUNK: usize = 4096;
const MAX_BOX_CELLS: u128 = 400_000_000;

impl CellSet {
    /// Builds a set from packed keys of the reduced axes (any order).
    pub fn from_keys(chart: &GroupChart, grid: Grid, sat: u32, mut cells: Vec<u64>, role: Role) -> Result<CellSet> {
        if grid.dim() != chart.dim() {
            return Err(Error::Invalid("grid and chart dimensions differ".into()));
        }
        if sat & !chart.compact_mask() != 0 {
            return Err(Error::Invalid(format!(
                "saturated axes {sat:#b} are not compact axes of {}",
                chart.name()
            )));
        }
        let red: Vec<usize> = (0..chart.dim()).filter(|a| sat & (1 << a) == 0).collect();
        let packer = Packer::new(red.len());
        cells.sort_unstable();
        cells.dedup();
        Ok(CellSet { chart: chart.clone(), grid, sat, red, packer, cells, role, notes: Vec::new() })
    }

    pub fn empty(chart: &GroupChart, grid: Grid, sat: u32) -> Result<CellSet> {
        CellSet::from_keys(chart, grid, sat, Vec::new(), Role::Exact)
    }

    /// Cells meeting the interior of `[lo, hi]` on the standard grid.
    pub fn from_box(chart: &GroupChart, lo: &[f64], hi: &[f64], level: u32) -> Result<CellSet> {
        CellSet::from_box_on(chart, Grid::standard(chart, level)?, 0, lo, hi)
    }

    /// Cells of `grid` meeting the interior of `[lo, hi]`; saturated axes
    /// ignore the box. Role is exact when the box is grid aligned.
    pub fn from_box_on(chart: &GroupChart, grid: Grid, sat: u32, lo: &[f64], hi: &[f64]) -> Result<CellSet> {
        let d = chart.dim();
        if lo.len() != d || hi.len() != d {
            return Err(Error::Invalid("box corners must have the chart dimension".into()));
        }
        let mut aligned = true;
        let mut ranges: Vec<Vec<i64>> = Vec::new();
        for a in 0..d {
            if sat & (1 << a) != 0 {
                continue;
            }
            let ax = &chart.axes()[a];
            if !(lo[a] < hi[a]) {
                return Err(Error::Invalid(format!("box side {} is empty: [{}, {}]", ax.label, lo[a], hi[a])));
            }
            let h = grid.side(a);
            let (l, al) = snap_floor(lo[a] / h);
            let (u, au) = snap_ceil(hi[a] / h);
            aligned &= al && au;
            match grid.period_cells[a] {
                Some(n) => {
                    if u - l >= n {
                        ranges.push((0..n).collect());
                    } else {
                        let mut v: Vec<i64> = (l..u).map(|i| i.rem_euclid(n)).collect();
                        v.sort_unstable();
                        v.dedup();
                        ranges.push(v);
                    }
                }
                None => {
                    let inside = if ax.open_lo { lo[a] > ax.lo } else { lo[a] >= ax.lo };
                    if !inside || hi[a] > ax.hi {
                        return Err(Error::Domain(format!(
                            "box [{}, {}] on axis {} leaves the domain of {}",
                            lo[a],
                            hi[a],
                            ax.label,
                            chart.name()
                        )));
                    }
                    ranges.push((l..u).collect());
                }
            }
        }
        let total: u128 = ranges.iter().map(|r| r.len() as u128).product();
        if total > MAX_BOX_CELLS {
            return Err(Error::Invalid(format!("box needs {total} cells")));
        }
        let packer = Packer::new(ranges.len());
        let mut cells = Vec::with_capacity(total as usize);
        let mut idx = vec![0i64; ranges.len()];
        if ranges.iter().any(|r| r.iter().any(|&i| !packer.fits(&[i]))) {
            return Err(Error::Invalid("box indices exceed the packing range".into()));
        }
        for_each_product(&ranges, &mut idx, &mut |ix| cells.push(packer.pack(ix)));
        let role = if aligned { Role::Exact } else { Role::Outer };
        CellSet::from_keys(chart, grid, sat, cells, role)
    }

    /// Cells of `grid` inside the index box `[lo_idx, hi_idx]` (reduced axes,
    /// inclusive) for which `keep(cell_lo, cell_hi)` holds; coordinates are
    /// full-dimensional with saturated axes spanning their period.
    pub fn from_predicate(
        chart: &GroupChart,
        grid: Grid,
        sat: u32,
        lo_idx: &[i64],
        hi_idx: &[i64],
        role: Role,
        keep: impl Fn(&[f64], &[f64]) -> bool + Sync,
    ) -> Result<CellSet> {
        let proto = CellSet::empty(chart, grid, sat)?;
        let k = proto.red.len();
        if lo_idx.len() != k || hi_idx.len() != k {
            return Err(Error::Invalid("index box must cover the reduced axes".into()));
        }
        let dbox = DenseBox::new(lo_idx.to_vec(), hi_idx.to_vec(), vec![false; k])?;
        if !proto.packer.fits(lo_idx) || !proto.packer.fits(hi_idx) {
            return Err(Error::Invalid("index box exceeds the packing range".into()));
        }
        let offs: Vec<usize> = (0..dbox.len()).collect();
        let cells: Vec<u64> = offs
            .par_chunks(CHUNK)
            .flat_map_iter(|chunk| {
                let mut idx = vec![0i64; k];
                let mut clo = vec![0.0; chart.dim()];
                let mut chi = vec![0.0; chart.dim()];
                let mut out = Vec::new();
                for &o in chunk {
                    dbox.index_of(o, &mut idx);
                    proto.cell_bounds(&idx, &mut clo, &mut chi);
                    if keep(&clo, &chi) {
                        out.push(proto.packer.pack(&idx));
                    }
                }
                out
            })
            .collect();
        CellSet::from_keys(chart, proto.grid, sat, cells, role)
    }

    pub fn chart(&self) -> &GroupChart {
        &self.chart
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn level(&self) -> u32 {
        self.grid.level
    }

    pub fn sat(&self) -> u32 {
        self.sat
    }

    pub fn reduced_axes(&self) -> &[usize] {
        &self.red
    }

    pub fn packer(&self) -> Packer {
        self.packer
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> CellSet {
        self.role = role;
        self
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn add_note(&mut self, note: String) {
        self.notes.push(note);
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Sorted packed keys of the reduced axes.
    pub fn keys(&self) -> &[u64] {
        &self.cells
    }

    pub fn unpack(&self, key: u64, idx: &mut [i64]) {
        self.packer.unpack(key, idx);
    }

    pub fn contains_key(&self, key: u64) -> bool {
        self.cells.binary_search(&key).is_ok()
    }

    /// Corners of the cell with reduced index `idx`.
    pub fn cell_bounds(&self, idx: &[i64], lo: &mut [f64], hi: &mut [f64]) {
        let mut r = 0;
        for a in 0..self.chart.dim() {
            if self.sat & (1 << a) != 0 {
                lo[a] = 0.0;
                hi[a] = self.chart.axes()[a].period.unwrap_or(0.0);
            } else {
                let h = self.grid.side(a);
                lo[a] = idx[r] as f64 * h;
                hi[a] = lo[a] + h;
                r += 1;
            }
        }
    }

    /// Product of the periods of the saturated axes.
    pub fn saturated_volume(&self) -> f64 {
        (0..self.chart.dim())
            .filter(|a| self.sat & (1 << a) != 0)
            .map(|a| self.chart.axes()[a].period.unwrap_or(1.0))
            .product()
    }

    pub fn measure(&self, side: Side) -> Measure {
        self.measure_with(side, DensitySource::Law)
    }

    /// Midpoint quadrature per cell, refined once into `2^k` subcells.
    pub fn measure_with(&self, side: Side, source: DensitySource) -> Measure {
        let k = self.red.len();
        let identity = self.chart.identity().coords;
        let density = |g: &[f64]| -> f64 {
            match (source, side) {
                (DensitySource::Law, Side::Left) => self.chart.left_density(g),
                (DensitySource::Law, Side::Right) => self.chart.right_density(g),
                (DensitySource::Closed, s) => {
                    let l = self.chart.left_density_closed(g).unwrap_or_else(|| self.chart.left_density(g));
                    match s {
                        Side::Left => l,
                        Side::Right => l / self.chart.modular_closed(g).unwrap_or_else(|| self.chart.modular(g)),
                    }
                }
            }
        };
        let hs: Vec<f64> = self.red.iter().map(|&a| self.grid.side(a)).collect();
        let vol: f64 = hs.iter().product::<f64>() * self.saturated_volume();
        let partials: Vec<(f64, f64)> = self
            .cells
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut idx = vec![0i64; k];
                let mut g = identity.clone();
                let mut sum = 0.0;
                let mut err = 0.0;
                for &key in chunk {
                    self.packer.unpack(key, &mut idx);
                    for (r, &a) in self.red.iter().enumerate() {
                        g[a] = (idx[r] as f64 + 0.5) * hs[r];
                    }
                    let coarse = density(&g);
                    let mut fine = 0.0;
                    for sub in 0..(1usize << k) {
                        for (r, &a) in self.red.iter().enumerate() {
                            let q = if sub & (1 << r) != 0 { 0.75 } else { 0.25 };
                            g[a] = (idx[r] as f64 + q) * hs[r];
                        }
                        fine += density(&g);
                    }
                    fine /= (1usize << k) as f64;
                    sum += fine;
                    err += (fine - coarse).abs();
                }
                (sum * vol, err * vol)
            })
            .collect();
        let (value, err) = partials.iter().fold((0.0, 0.0), |(v, e), (a, b)| (v + a, e + b));
        Measure { value, err }
    }

    fn compatible(&self, other: &CellSet) -> Result<()> {
        if self.chart.name() != other.chart.name() {
            return Err(Error::Invalid(format!(
                "sets live on different charts: {} and {}",
                self.chart.name(),
                other.chart.name()
            )));
        }
        if !self.grid.same_base(&other.grid) {
            return Err(Error::Invalid("sets use different grid bases".into()));
        }
        Ok(())
    }

    /// Brings two sets to a common level and saturation.
    fn align(&self, other: &CellSet) -> Result<(CellSet, CellSet)> {
        self.compatible(other)?;
        let level = self.level().max(other.level());
        let sat = self.sat & other.sat;
        let a = self.refine(level)?.desaturate(self.sat & !sat)?;
        let b = other.refine(level)?.desaturate(other.sat & !sat)?;
        Ok((a, b))
    }

    pub fn union(&self, other: &CellSet) -> Result<CellSet> {
        let (a, b) = self.align(other)?;
        let role = a.role.join(b.role)?;
        let mut cells = Vec::with_capacity(a.len() + b.len());
        let (mut i, mut j) = (0, 0);
        while i < a.cells.len() && j < b.cells.len() {
            match a.cells[i].cmp(&b.cells[j]) {
                std::cmp::Ordering::Less => {
                    cells.push(a.cells[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    cells.push(b.cells[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    cells.push(a.cells[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        cells.extend_from_slice(&a.cells[i..]);
        cells.extend_from_slice(&b.cells[j..]);
        let mut out = CellSet { cells, role, ..a };
        out.notes.extend(b.notes);
        Ok(out)
    }

    /// Splits every cell into `2^k` children per level step.
    pub fn refine(&self, level: u32) -> Result<CellSet> {
        if level < self.level() {
            return Err(Error::Invalid(format!("cannot refine level {} down to {level}", self.level())));
        }
        if level == self.level() {
            return Ok(self.clone());
        }
        let shift = level - self.level();
        let k = self.red.len();
        let m = 1i64 << shift;
        let per = (m as u128).pow(k as u32);
        if per * self.len() as u128 > MAX_BOX_CELLS {
            return Err(Error::Invalid("refinement is too large".into()));
        }
        if let Some((lo, hi)) = self.index_bounds() {
            let big = lo.iter().chain(&hi).map(|i| i.abs() + 1).max().unwrap_or(0);
            if (big as i128) << shift > self.packer.limit() as i128 {
                return Err(Error::Invalid(format!("level {level} exceeds the packing range")));
            }
        }
        let mut idx = vec![0i64; k];
        let ranges_proto: Vec<Vec<i64>> = vec![(0..m).collect(); k];
        let mut cells = Vec::with_capacity((per as usize) * self.len());
        let mut child = vec![0i64; k];
        for &key in &self.cells {
            self.packer.unpack(key, &mut idx);
            for_each_product(&ranges_proto, &mut child, &mut |c| {
                let full: Vec<i64> = (0..k).map(|r| (idx[r] << shift) + c[r]).collect();
                cells.push(self.packer.pack(&full));
            });
        }
        let grid = self.grid.at_level(level);
        let mut out = CellSet::from_keys(&self.chart, grid, self.sat, cells, self.role)?;
        out.notes = self.notes.clone();
        Ok(out)
    }

    /// Expands the saturated axes in `axes` into explicit cells.
    pub fn desaturate(&self, axes: u32) -> Result<CellSet> {
        let axes = axes & self.sat;
        if axes == 0 {
            return Ok(self.clone());
        }
        let new_sat = self.sat & !axes;
        let proto = CellSet::empty(&self.chart, self.grid.clone(), new_sat)?;
        let k_old = self.red.len();
        let k_new = proto.red.len();
        let mut ranges: Vec<Vec<i64>> = Vec::new();
        let mut expanded = Vec::new();
        for a in 0..self.chart.dim() {
            if axes & (1 << a) != 0 {
                ranges.push((0..self.grid.period_cells[a].unwrap_or(1)).collect());
                expanded.push(a);
            }
        }
        let total: u128 = ranges.iter().map(|r| r.len() as u128).product::<u128>() * self.len() as u128;
        if total > MAX_BOX_CELLS {
            return Err(Error::Invalid("desaturation is too large".into()));
        }
        let mut old = vec![0i64; k_old];
        let mut sel = vec![0i64; ranges.len()];
        let mut full = vec![0i64; k_new];
        let mut cells = Vec::with_capacity(total as usize);
        for &key in &self.cells {
            self.packer.unpack(key, &mut old);
            for_each_product(&ranges, &mut sel, &mut |s| {
                let (mut r_old, mut r_exp) = (0, 0);
                for (r_new, &a) in proto.red.iter().enumerate() {
                    if expanded.get(r_exp) == Some(&a) {
                        full[r_new] = s[r_exp];
                        r_exp += 1;
                    } else {
                        full[r_new] = old[r_old];
                        r_old += 1;
                    }
                }
                cells.push(proto.packer.pack(&full));
            });
        }
        let mut out = CellSet::from_keys(&self.chart, self.grid.clone(), new_sat, cells, self.role)?;
        out.notes = self.notes.clone();
        Ok(out)
    }

    /// Saturates along `axes` when every fiber along them is complete.
    pub fn saturate(&self, axes: u32) -> Result<Option<CellSet>> {
        let axes = axes & !self.sat;
        if axes == 0 {
            return Ok(Some(self.clone()));
        }
        if axes & !self.chart.compact_mask() != 0 {
            return Err(Error::Invalid("only compact axes can be saturated".into()));
        }
        let new_sat = self.sat | axes;
        let proto = CellSet::empty(&self.chart, self.grid.clone(), new_sat)?;
        let fiber: i64 = (0..self.chart.dim())
            .filter(|a| axes & (1 << a) != 0)
            .map(|a| self.grid.period_cells[a].unwrap_or(1))
            .product();
        let k_old = self.red.len();
        let mut old = vec![0i64; k_old];
        let mut keep = Vec::with_capacity(proto.red.len());
        let mut counts: std::collections::BTreeMap<u64, i64> = std::collections::BTreeMap::new();
        for &key in &self.cells {
            self.packer.unpack(key, &mut old);
            keep.clear();
            for (r, &a) in self.red.iter().enumerate() {
                if axes & (1 << a) == 0 {
                    keep.push(old[r]);
                }
            }
            *counts.entry(proto.packer.pack(&keep)).or_insert(0) += 1;
        }
        if counts.values().any(|&c| c != fiber) {
            return Ok(None);
        }
        let mut out = CellSet::from_keys(&self.chart, self.grid.clone(), new_sat, counts.into_keys().collect(), self.role)?;
        out.notes = self.notes.clone();
        Ok(Some(out))
    }

    /// Cellwise inclusion after aligning levels and saturation.
    pub fn is_subset_of(&self, other: &CellSet) -> Result<bool> {
        let (a, b) = self.align(other)?;
        let mut j = 0;
        for &c in &a.cells {
            while j < b.cells.len() && b.cells[j] < c {
                j += 1;
            }
            if j == b.cells.len() || b.cells[j] != c {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Bounding index box of the reduced cells (periodic axes span a period).
    pub fn index_bounds(&self) -> Option<(Vec<i64>, Vec<i64>)> {
        if self.cells.is_empty() {
            return None;
        }
        let k = self.red.len();
        let mut lo = vec![i64::MAX; k];
        let mut hi = vec![i64::MIN; k];
        let mut idx = vec![0i64; k];
        for &key in &self.cells {
            self.packer.unpack(key, &mut idx);
            for r in 0..k {
                lo[r] = lo[r].min(idx[r]);
                hi[r] = hi[r].max(idx[r]);
            }
        }
        for (r, &a) in self.red.iter().enumerate() {
            if let Some(n) = self.grid.period_cells[a] {
                lo[r] = 0;
                hi[r] = n - 1;
            }
        }
        Some((lo, hi))
    }

    pub fn periodic_reduced(&self) -> Vec<bool> {
        self.red.iter().map(|&a| self.grid.period_cells[a].is_some()).collect()
    }

    /// Occupancy of the set on its bounding box.
    pub fn dense(&self) -> Result<(DenseBox, Vec<u8>)> {
        let (lo, hi) = self.index_bounds().unwrap_or_else(|| (vec![0; self.red.len()], vec![-1; self.red.len()]));
        let b = DenseBox::new(lo, hi, self.periodic_reduced())?;
        let mut occ = vec![0u8; b.len()];
        let mut idx = vec![0i64; self.red.len()];
        for &key in &self.cells {
            self.packer.unpack(key, &mut idx);
            if let Some(o) = b.offset(&idx) {
                occ[o] = 1;
            }
        }
        Ok((b, occ))
    }

    /// Keys of cells with at least one face neighbor outside the set.
    pub fn boundary_keys(&self) -> Vec<u64> {
        let k = self.red.len();
        if k == 0 {
            return Vec::new();
        }
        let mut idx = vec![0i64; k];
        match self.dense() {
            Ok((b, occ)) if b.len() <= 64 * self.len().max(1024) => {
                let mut out = Vec::new();
                for &key in &self.cells {
                    self.packer.unpack(key, &mut idx);
                    let o = b.offset(&idx).expect("cell inside its bounding box");
                    let open = (0..k).any(|a| {
                        [-1, 1].iter().any(|&dir| match b.neighbor(o, a, dir) {
                            Some(n) => occ[n] == 0,
                            None => true,
                        })
                    });
                    if open {
                        out.push(key);
                    }
                }
                out
            }
            _ => {
                let mut nb = vec![0i64; k];
                self.cells
                    .iter()
                    .copied()
                    .filter(|&key| {
                        self.packer.unpack(key, &mut idx);
                        (0..k).any(|a| {
                            [-1i64, 1].iter().any(|&dir| {
                                nb.copy_from_slice(&idx);
                                nb[a] = self.grid.wrap_index(self.red[a], nb[a] + dir);
                                !self.contains_key(self.packer.pack(&nb))
                            })
                        })
                    })
                    .collect()
            }
        }
    }
}

/// Integer index with tolerance: `(floor(x), x was an integer)`.
fn snap_floor(x: f64) -> (i64, bool) {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        (r as i64, true)
    } else {
        (x.floor() as i64, false)
    }
}

fn snap_ceil(x: f64) -> (i64, bool) {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.abs().max(1.0) {
        (r as i64, true)
    } else {
        (x.ceil() as i64, false)
    }
}

/// Calls `f` on every element of the Cartesian product of `ranges` in
/// lexicographic order.
pub(crate) fn for_each_product(ranges: &[Vec<i64>], cur: &mut [i64], f: &mut impl FnMut(&[i64])) {
    fn rec(ranges: &[Vec<i64>], depth: usize, cur: &mut [i64], f: &mut impl FnMut(&[i64])) {
        if depth == ranges.len() {
            f(cur);
            return;
        }
        for &i in &ranges[depth] {
            cur[depth] = i;
            rec(ranges, depth + 1, cur, f);
        }
    }
    if ranges.iter().any(|r| r.is_empty()) {
        return;
    }
    rec(ranges, 0, cur, f);
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unit_interval_at_level_four() {
        let r1 = GroupChart::euclid(1);
        let s = CellSet::from_box(&r1, &[0.0], &[1.0], 4).unwrap();
        assert_eq!(s.len(), 16);
        assert_eq!(s.role(), Role::Exact);
        assert!((s.measure(Side::Left).value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn misaligned_box_is_outer() {
        let r1 = GroupChart::euclid(1);
        let s = CellSet::from_box(&r1, &[0.03], &[0.9], 4).unwrap();
        assert_eq!(s.role(), Role::Outer);
        assert!(s.measure(Side::Left).value >= 0.87);
    }

    #[test]
    fn unit_square_measure() {
        let s = CellSet::from_box(&GroupChart::euclid(2), &[0.0, 0.0], &[1.0, 1.0], 5).unwrap();
        let m = s.measure(Side::Left);
        assert!((m.value - 1.0).abs() < 1e-12);
        assert!(m.err < 1e-12);
    }

    #[test]
    fn affine_box_left_and_right() {
        let aff = GroupChart::aff();
        let s = CellSet::from_box(&aff, &[1.0, 0.0], &[2.0, 1.0], 6).unwrap();
        let l = s.measure(Side::Left);
        let r = s.measure(Side::Right);
        // int_1^2 a^-2 da = 1/2 and int_1^2 a^-1 da = ln 2
        assert!((l.value - 0.5).abs() < 1e-5, "{l:?}");
        assert!((r.value - std::f64::consts::LN_2).abs() < 1e-5, "{r:?}");
        assert!(l.err > 0.0 && l.err < 1e-3);
    }

    #[test]
    fn affine_box_outside_domain() {
        let r = CellSet::from_box(&GroupChart::aff(), &[-1.0, 0.0], &[1.0, 1.0], 3);
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn empty_set_has_zero_measure() {
        let r2 = GroupChart::euclid(2);
        let s = CellSet::empty(&r2, Grid::standard(&r2, 3).unwrap(), 0).unwrap();
        assert_eq!(s.measure(Side::Left).value, 0.0);
    }

    #[test]
    fn closed_and_law_densities_agree() {
        let s = GroupChart::sl2();
        let grid = Grid::standard(&s, 3).unwrap();
        let set = CellSet::from_box_on(&s, grid, 0, &[0.0, -0.5, -0.5], &[3.0, 0.5, 0.5]).unwrap();
        let a = set.measure_with(Side::Left, DensitySource::Law).value;
        let b = set.measure_with(Side::Left, DensitySource::Closed).value;
        assert!((a / b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn saturation_round_trip() {
        let s = GroupChart::sl2();
        let grid = Grid::standard(&s, 3).unwrap();
        let full = CellSet::from_box_on(&s, grid.clone(), 0, &[0.0, 0.0, 0.0], &[std::f64::consts::TAU, 0.5, 0.25]).unwrap();
        let sat = full.saturate(1).unwrap().expect("full in theta");
        assert_eq!(sat.len() * 8, full.len());
        assert_eq!(sat.desaturate(1).unwrap().keys(), full.keys());
        let m1 = full.measure(Side::Left).value;
        let m2 = sat.measure(Side::Left).value;
        assert!((m1 / m2 - 1.0).abs() < 1e-12);
        let partial = CellSet::from_box_on(&s, grid, 0, &[0.0, 0.0, 0.0], &[1.0, 0.5, 0.25]).unwrap();
        assert!(partial.saturate(1).unwrap().is_none());
    }

    #[test]
    fn boundary_of_a_square() {
        let s = CellSet::from_box(&GroupChart::euclid(2), &[0.0, 0.0], &[1.0, 1.0], 3).unwrap();
        assert_eq!(s.boundary_keys().len(), 64 - 36);
    }

    #[test]
    fn boundary_on_periodic_axis() {
        let t = GroupChart::torus(1);
        let s = CellSet::from_box(&t, &[0.0], &[1.0], 3).unwrap();
        assert!(s.boundary_keys().is_empty());
    }

    #[test]
    fn union_with_empty_and_self() {
        let r2 = GroupChart::euclid(2);
        let s = CellSet::from_box(&r2, &[0.0, 0.0], &[0.5, 1.0], 3).unwrap();
        let e = CellSet::empty(&r2, Grid::standard(&r2, 3).unwrap(), 0).unwrap();
        assert_eq!(s.union(&e).unwrap().keys(), s.keys());
        assert_eq!(s.union(&s).unwrap().keys(), s.keys());
    }

    #[test]
    fn union_refines_coarser_operand() {
        let r1 = GroupChart::euclid(1);
        let a = CellSet::from_box(&r1, &[0.0], &[0.5], 2).unwrap();
        let b = CellSet::from_box(&r1, &[0.5], &[1.0], 4).unwrap();
        let u = a.union(&b).unwrap();
        assert_eq!(u.level(), 4);
        assert!((u.measure(Side::Left).value - 1.0).abs() < 1e-14);
    }

    #[test]
    fn inner_and_outer_do_not_mix() {
        let r1 = GroupChart::euclid(1);
        let a = CellSet::from_box(&r1, &[0.0], &[0.5], 2).unwrap().with_role(Role::Inner);
        let b = CellSet::from_box(&r1, &[0.5], &[1.0], 2).unwrap().with_role(Role::Outer);
        assert!(a.union(&b).is_err());
    }

    proptest! {
        #[test]
        fn refine_preserves_measure(l in 0.0f64..2.0, w in 0.1f64..2.0, b in -1.0f64..1.0, level in 1u32..4, extra in 0u32..3) {
            let aff = GroupChart::aff();
            let s = CellSet::from_box(&aff, &[0.5 + l, b], &[0.5 + l + w, b + 0.7], level).unwrap();
            let r = s.refine(level + extra).unwrap();
            prop_assert!(s.is_subset_of(&r).unwrap() && r.is_subset_of(&s).unwrap());
            let m0 = s.measure(Side::Left);
            let m1 = r.measure(Side::Left);
            prop_assert!((m0.value - m1.value).abs() <= 2.0 * m0.err + 1e-12);
        }

        #[test]
        fn union_is_idempotent_and_monotone(x0 in -2.0f64..2.0, x1 in -2.0f64..2.0, w0 in 0.1f64..1.0, w1 in 0.1f64..1.0) {
            let r2 = GroupChart::euclid(2);
            let a = CellSet::from_box(&r2, &[x0, 0.0], &[x0 + w0, 1.0], 3).unwrap();
            let b = CellSet::from_box(&r2, &[x1, 0.5], &[x1 + w1, 2.0], 3).unwrap();
            let u = a.union(&b).unwrap();
            let uu = u.union(&u).unwrap();
            prop_assert_eq!(uu.keys(), u.keys());
            prop_assert!(a.is_subset_of(&u).unwrap() && b.is_subset_of(&u).unwrap());
            prop_assert!(u.measure(Side::Left).value >= a.measure(Side::Left).value);
        }
    }
}
