use crate::error::{Error, Result};
use crate::group::GroupChart;
use serde::{Deserialize, Serialize};

/// Dyadic grid anchored at the chart origin: cell `i` on axis `k` covers
/// `[i h_k, (i+1) h_k)` with `h_k = base[k] / 2^level`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub base: Vec<f64>,
    pub level: u32,
    /// Cells per period on periodic axes.
    pub period_cells: Vec<Option<i64>>,
}

impl Grid {
    pub fn new(chart: &GroupChart, base: Vec<f64>, level: u32) -> Result<Grid> {
        if base.len() != chart.dim() {
            return Err(Error::Invalid(format!(
                "grid has {} base sides, chart {} has dimension {}",
                base.len(),
                chart.name(),
                chart.dim()
            )));
        }
        if level > 40 {
            return Err(Error::Invalid(format!("level {level} is too deep")));
        }
        let mut period_cells = Vec::with_capacity(base.len());
        for (b, a) in base.iter().zip(chart.axes()) {
            if !(b.is_finite() && *b > 0.0) {
                return Err(Error::Invalid(format!("base side {b} on axis {} must be positive", a.label)));
            }
            period_cells.push(match a.period {
                Some(p) => {
                    let n = p / b * (1u64 << level) as f64;
                    let r = n.round();
                    if r < 1.0 || (n - r).abs() > 1e-9 * r {
                        return Err(Error::Invalid(format!(
                            "period {p} of axis {} is not a whole number of cells of side {}",
                            a.label,
                            b / (1u64 << level) as f64
                        )));
                    }
                    Some(r as i64)
                }
                None => None,
            });
        }
        Ok(Grid { base, level, period_cells })
    }

    /// Unit sides on line axes and one period on periodic axes.
    pub fn standard(chart: &GroupChart, level: u32) -> Result<Grid> {
        let base = chart.axes().iter().map(|a| a.period.unwrap_or(1.0)).collect();
        Grid::new(chart, base, level)
    }

    pub fn dim(&self) -> usize {
        self.base.len()
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.base[axis] / (1u64 << self.level) as f64
    }

    pub fn at_level(&self, level: u32) -> Grid {
        let scale = |n: i64| {
            if level >= self.level {
                n << (level - self.level)
            } else {
                n >> (self.level - level)
            }
        };
        Grid {
            base: self.base.clone(),
            level,
            period_cells: self.period_cells.iter().map(|p| p.map(scale)).collect(),
        }
    }

    pub fn same_base(&self, other: &Grid) -> bool {
        self.base.len() == other.base.len()
            && self.base.iter().zip(&other.base).all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()))
    }

    /// Index of the cell containing coordinate `x` on `axis`.
    pub fn index(&self, axis: usize, x: f64) -> i64 {
        let i = floor_i64(x / self.side(axis));
        match self.period_cells[axis] {
            Some(n) => i.rem_euclid(n),
            None => i,
        }
    }

    pub fn wrap_index(&self, axis: usize, i: i64) -> i64 {
        match self.period_cells[axis] {
            Some(n) => i.rem_euclid(n),
            None => i,
        }
    }
}

/// `floor` as an integer, valid for `|x| < 2^62`.
#[inline]
pub(crate) fn floor_i64(x: f64) -> i64 {
    let i = x as i64;
    if (i as f64) > x {
        i - 1
    } else {
        i
    }
}

/// Packs multi-indices into `u64` keys, axis 0 most significant, each
/// component in offset binary so that key order is lexicographic order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Packer {
    pub dims: usize,
    bits: u32,
}

impl Packer {
    pub fn new(dims: usize) -> Packer {
        let bits = if dims == 0 { 0 } else { (64 / dims as u32).min(63) };
        Packer { dims, bits }
    }

    /// Largest representable absolute index.
    pub fn limit(&self) -> i64 {
        if self.bits == 0 {
            0
        } else {
            (1i64 << (self.bits - 1)) - 1
        }
    }

    pub fn fits(&self, idx: &[i64]) -> bool {
        let l = self.limit();
        idx.iter().all(|&i| i >= -l && i <= l)
    }

    #[inline]
    pub fn pack(&self, idx: &[i64]) -> u64 {
        let off = 1i64 << (self.bits.max(1) - 1);
        let mut k = 0u64;
        for &i in &idx[..self.dims] {
            k = (k << self.bits) | ((i + off) as u64);
        }
        k
    }

    #[inline]
    pub fn unpack(&self, mut key: u64, idx: &mut [i64]) {
        let off = 1i64 << (self.bits.max(1) - 1);
        let mask = if self.bits >= 64 { u64::MAX } else { (1u64 << self.bits) - 1 };
        for a in (0..self.dims).rev() {
            idx[a] = (key & mask) as i64 - off;
            key >>= self.bits;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn period_must_divide() {
        let s = GroupChart::sl2();
        assert!(Grid::new(&s, vec![std::f64::consts::TAU, 1.0, 1.0], 4).is_ok());
        assert!(Grid::new(&s, vec![1.0, 1.0, 1.0], 4).is_err());
        let g = Grid::standard(&s, 5).unwrap();
        assert_eq!(g.period_cells[0], Some(32));
        assert_eq!(g.at_level(7).period_cells[0], Some(128));
    }

    #[test]
    fn periodic_index_wraps() {
        let g = Grid::standard(&GroupChart::torus(1), 3).unwrap();
        assert_eq!(g.index(0, -0.01), 7);
        assert_eq!(g.index(0, 1.01), 0);
    }

    proptest! {
        #[test]
        fn pack_round_trip(v in proptest::collection::vec(-1000i64..1000, 1..7)) {
            let p = Packer::new(v.len());
            prop_assume!(p.fits(&v));
            let mut out = vec![0; v.len()];
            p.unpack(p.pack(&v), &mut out);
            prop_assert_eq!(out, v);
        }

        #[test]
        fn pack_preserves_lexicographic_order(a in proptest::collection::vec(-500i64..500, 3),
                                              b in proptest::collection::vec(-500i64..500, 3)) {
            let p = Packer::new(3);
            prop_assert_eq!(a.cmp(&b), p.pack(&a).cmp(&p.pack(&b)));
        }
    }
}
