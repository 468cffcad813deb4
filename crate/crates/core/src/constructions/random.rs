//! Seeded random unions of grid-aligned boxes.

use crate::error::{Error, Result};
use crate::group::GroupChart;
use crate::setrep::{CellSet, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Union of `count` grid-aligned boxes inside `[lo, hi]` on the unsaturated
/// axes of `grid`. Each box side covers between `min_cells` and `max_cells`
/// cells.
pub fn random_box_union(
    chart: &GroupChart,
    grid: &Grid,
    lo: &[f64],
    hi: &[f64],
    count: usize,
    cells: (i64, i64),
    seed: u64,
) -> Result<CellSet> {
    let d = chart.dim();
    if lo.len() != d || hi.len() != d || count == 0 || cells.0 < 1 || cells.1 < cells.0 {
        return Err(Error::Invalid("random boxes need a full-dimensional region, count >= 1 and 1 <= min <= max cells".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Option<CellSet> = None;
    for _ in 0..count {
        let mut blo = vec![0.0; d];
        let mut bhi = vec![0.0; d];
        for a in 0..d {
            let h = grid.side(a);
            let (i0, i1) = ((lo[a] / h).ceil() as i64, (hi[a] / h).floor() as i64);
            let w = rng.gen_range(cells.0..=cells.1).min(i1 - i0);
            if w < 1 {
                return Err(Error::Invalid(format!("region on axis {a} holds no full cell")));
            }
            let s = rng.gen_range(i0..=i1 - w);
            blo[a] = s as f64 * h;
            bhi[a] = (s + w) as f64 * h;
        }
        let b = CellSet::from_box_on(chart, grid.clone(), 0, &blo, &bhi)?;
        out = Some(match out {
            None => b,
            Some(u) => u.union(&b)?,
        });
    }
    Ok(out.expect("count >= 1"))
}

/// Two independent single boxes in the affine group, `a` in `[0.5, 2]` and
/// `b` in `[-1, 1]`, on a grid with side `1/4` at level 0.
pub fn random_box_pair(seed: u64, level: u32) -> Result<(CellSet, CellSet)> {
    let chart = GroupChart::aff();
    let grid = Grid::new(&chart, vec![0.25, 0.25], level)?;
    let k = 1i64 << level;
    let lo = [0.5, -1.0];
    let hi = [2.0, 1.0];
    let x = random_box_union(&chart, &grid, &lo, &hi, 1, (k, 4 * k), seed.wrapping_mul(2))?;
    let y = random_box_union(&chart, &grid, &lo, &hi, 1, (k, 4 * k), seed.wrapping_mul(2) + 1)?;
    Ok((x, y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setrep::{Role, Side};

    #[test]
    fn unions_are_exact_and_deterministic() {
        let r2 = GroupChart::euclid(2);
        let g = Grid::standard(&r2, 4).unwrap();
        let a = random_box_union(&r2, &g, &[0.0, 0.0], &[2.0, 2.0], 3, (2, 8), 7).unwrap();
        let b = random_box_union(&r2, &g, &[0.0, 0.0], &[2.0, 2.0], 3, (2, 8), 7).unwrap();
        assert_eq!(a.keys(), b.keys());
        assert_eq!(a.role(), Role::Exact);
        assert!(a.measure(Side::Left).value <= 4.0);
    }

    #[test]
    fn affine_pairs_stay_in_range() {
        for seed in 0..5 {
            let (x, y) = random_box_pair(seed, 2).unwrap();
            for s in [&x, &y] {
                let (lo, hi) = s.index_bounds().unwrap();
                assert!(lo[0] >= 8 && hi[0] < 32, "{lo:?} {hi:?}");
            }
        }
    }
}
