//! Dense index boxes over the reduced axes of a grid, used for neighbor
//! lookups, dilation and flood fill.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DenseBox {
    pub lo: Vec<i64>,
    pub dims: Vec<usize>,
    pub periodic: Vec<bool>,
    strides: Vec<usize>,
    len: usize,
}

pub const MAX_DENSE: usize = 1 << 31;

impl DenseBox {
    /// `lo`/`hi` are inclusive bounds; periodic axes must span `[0, n)`.
    pub fn new(lo: Vec<i64>, hi: Vec<i64>, periodic: Vec<bool>) -> Result<DenseBox> {
        let k = lo.len();
        let mut dims = Vec::with_capacity(k);
        let mut len: usize = 1;
        for a in 0..k {
            let n = (hi[a] - lo[a] + 1).max(0) as usize;
            dims.push(n);
            len = len.checked_mul(n).filter(|&l| l <= MAX_DENSE).ok_or_else(|| {
                Error::Invalid(format!("dense box {lo:?}..{hi:?} exceeds {MAX_DENSE} cells"))
            })?;
        }
        let mut strides = vec![1; k];
        for a in (0..k.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        Ok(DenseBox { lo, dims, periodic, strides, len })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    #[inline]
    pub fn offset(&self, idx: &[i64]) -> Option<usize> {
        let mut o = 0;
        for a in 0..self.dims.len() {
            let mut r = idx[a] - self.lo[a];
            if self.periodic[a] {
                r = r.rem_euclid(self.dims[a] as i64);
            } else if r < 0 || r >= self.dims[a] as i64 {
                return None;
            }
            o += r as usize * self.strides[a];
        }
        Some(o)
    }

    #[inline]
    pub fn index_of(&self, mut off: usize, idx: &mut [i64]) {
        for a in 0..self.dims.len() {
            let q = off / self.strides[a];
            off -= q * self.strides[a];
            idx[a] = self.lo[a] + q as i64;
        }
    }

    /// Offset of the face neighbor of `off` along `axis` in direction `dir`.
    #[inline]
    pub fn neighbor(&self, off: usize, axis: usize, dir: i64) -> Option<usize> {
        let s = self.strides[axis];
        let n = self.dims[axis];
        let pos = (off / s) % n;
        if dir > 0 {
            if pos + 1 < n {
                Some(off + s)
            } else if self.periodic[axis] {
                Some(off + s - n * s)
            } else {
                None
            }
        } else if pos > 0 {
            Some(off - s)
        } else if self.periodic[axis] {
            Some(off + (n - 1) * s)
        } else {
            None
        }
    }

    /// True when `off` lies on a non-periodic face of the box.
    pub fn on_face(&self, off: usize) -> bool {
        (0..self.dims.len()).any(|a| {
            if self.periodic[a] {
                return false;
            }
            let pos = (off / self.strides[a]) % self.dims[a];
            pos == 0 || pos + 1 == self.dims[a]
        })
    }

    /// In-place box dilation `out[i] |= any(in[i + k e_axis], |k| <= r)` for
    /// the bit `flag` of a byte field, one axis at a time.
    pub fn dilate(&self, field: &mut [u8], flag: u8, radius: &[usize]) {
        self.spread(field, flag, radius, radius);
    }

    /// Each set cell `m` also sets `m - back[a] ..= m + fwd[a]` along every
    /// axis `a` (separable, so the result is the full box).
    pub fn spread(&self, field: &mut [u8], flag: u8, back: &[usize], fwd: &[usize]) {
        let mut line = Vec::new();
        let mut prefix = Vec::new();
        for a in 0..self.dims.len() {
            let (b, f) = (back[a], fwd[a]);
            if b + f == 0 {
                continue;
            }
            let n = self.dims[a];
            let s = self.strides[a];
            let outer = self.len / (n * s);
            for o in 0..outer {
                for inner in 0..s {
                    let start = o * n * s + inner;
                    line.clear();
                    line.extend((0..n).map(|i| (field[start + i * s] & flag != 0) as u32));
                    if self.periodic[a] {
                        if b + f + 1 >= n {
                            if line.iter().any(|&v| v != 0) {
                                for i in 0..n {
                                    field[start + i * s] |= flag;
                                }
                            }
                            continue;
                        }
                        // cell i is set when some m in [i - f, i + b] is
                        prefix.clear();
                        prefix.push(0u32);
                        for i in 0..n + b + f {
                            let v = line[(i + n - f) % n];
                            prefix.push(prefix[i] + v);
                        }
                        for i in 0..n {
                            if prefix[i + b + f + 1] - prefix[i] > 0 {
                                field[start + i * s] |= flag;
                            }
                        }
                    } else {
                        prefix.clear();
                        prefix.push(0u32);
                        for i in 0..n {
                            prefix.push(prefix[i] + line[i]);
                        }
                        for i in 0..n {
                            let lo = i.saturating_sub(f);
                            let hi = (i + b + 1).min(n);
                            if hi > lo && prefix[hi] - prefix[lo] > 0 {
                                field[start + i * s] |= flag;
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn offsets_round_trip() {
        let b = DenseBox::new(vec![-2, 0], vec![3, 4], vec![false, true]).unwrap();
        assert_eq!(b.len(), 30);
        let mut idx = [0i64; 2];
        for off in 0..b.len() {
            b.index_of(off, &mut idx);
            assert_eq!(b.offset(&idx), Some(off));
        }
        assert_eq!(b.offset(&[-3, 0]), None);
        assert_eq!(b.offset(&[0, 5]), b.offset(&[0, 0]));
    }

    #[test]
    fn neighbors_wrap_only_on_periodic_axes() {
        let b = DenseBox::new(vec![0, 0], vec![2, 3], vec![false, true]).unwrap();
        let o = b.offset(&[0, 0]).unwrap();
        assert_eq!(b.neighbor(o, 0, -1), None);
        assert_eq!(b.neighbor(o, 1, -1), b.offset(&[0, 3]));
        assert!(b.on_face(o));
        assert!(!b.on_face(b.offset(&[1, 0]).unwrap()));
    }

    #[test]
    fn dilation_of_a_point() {
        let b = DenseBox::new(vec![0, 0], vec![6, 6], vec![false, false]).unwrap();
        let mut f = vec![0u8; b.len()];
        f[b.offset(&[3, 3]).unwrap()] = 1;
        b.dilate(&mut f, 1, &[1, 2]);
        let count = f.iter().filter(|&&v| v != 0).count();
        assert_eq!(count, 3 * 5);
        assert_eq!(f[b.offset(&[2, 1]).unwrap()], 1);
        assert_eq!(f[b.offset(&[1, 3]).unwrap()], 0);
    }

    #[test]
    fn periodic_dilation_wraps() {
        let b = DenseBox::new(vec![0], vec![9], vec![true]).unwrap();
        let mut f = vec![0u8; 10];
        f[0] = 1;
        b.dilate(&mut f, 1, &[2]);
        let on: Vec<usize> = (0..10).filter(|&i| f[i] != 0).collect();
        assert_eq!(on, vec![0, 1, 2, 8, 9]);
    }

    #[test]
    fn forward_spread() {
        let b = DenseBox::new(vec![0], vec![9], vec![false]).unwrap();
        let mut f = vec![0u8; 10];
        f[4] = 1;
        b.spread(&mut f, 1, &[1], &[3]);
        let on: Vec<usize> = (0..10).filter(|&i| f[i] != 0).collect();
        assert_eq!(on, vec![3, 4, 5, 6, 7]);
        let p = DenseBox::new(vec![0], vec![9], vec![true]).unwrap();
        let mut g = vec![0u8; 10];
        g[8] = 1;
        p.spread(&mut g, 1, &[0], &[3]);
        let on: Vec<usize> = (0..10).filter(|&i| g[i] != 0).collect();
        assert_eq!(on, vec![0, 1, 8, 9]);
    }
}
