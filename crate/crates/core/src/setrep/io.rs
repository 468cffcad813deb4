//! Serialization of cell sets.
//!
//! Binary layout, all integers little endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `BMCS` |
//! | 1     | format version (1) |
//! | 2     | chart name length `n` |
//! | n     | chart name, UTF-8, as accepted by the group grammar |
//! | 1     | chart dimension `d` |
//! | 8 d   | grid base sides, f64 |
//! | 4     | level |
//! | 4     | saturated axis mask |
//! | 1     | role: 0 exact, 1 outer, 2 inner |
//! | 8     | cell count `c` |
//! | 8 c   | packed cell keys, sorted ascending |
//!
//! Keys pack the indices of the unsaturated axes in offset binary with
//! `64 / k` bits each, first axis most significant.

use super::{CellSet, Grid, Role};
use crate::error::{Error, Result};
use crate::group::parse_group;
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 4] = b"BMCS";
const VERSION: u8 = 1;

fn role_byte(r: Role) -> u8 {
    match r {
        Role::Exact => 0,
        Role::Outer => 1,
        Role::Inner => 2,
    }
}

pub fn to_bytes(set: &CellSet) -> Vec<u8> {
    let name = set.chart().name().as_bytes();
    let mut out = Vec::with_capacity(32 + name.len() + 8 * (set.len() + set.grid().dim()));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name);
    out.push(set.grid().dim() as u8);
    for b in &set.grid().base {
        out.extend_from_slice(&b.to_le_bytes());
    }
    out.extend_from_slice(&set.level().to_le_bytes());
    out.extend_from_slice(&set.sat().to_le_bytes());
    out.push(role_byte(set.role()));
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for k in set.keys() {
        out.extend_from_slice(&k.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Parse(format!("cell set truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<CellSet> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Parse("not a cell set file".into()));
    }
    let v = r.u8()?;
    if v != VERSION {
        return Err(Error::Parse(format!("unsupported cell set format version {v}")));
    }
    let n = r.u16()? as usize;
    let name = std::str::from_utf8(r.take(n)?).map_err(|e| Error::Parse(e.to_string()))?;
    let chart = parse_group(name)?;
    let d = r.u8()? as usize;
    let mut base = Vec::with_capacity(d);
    for _ in 0..d {
        base.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
    }
    let level = r.u32()?;
    let sat = r.u32()?;
    let role = match r.u8()? {
        0 => Role::Exact,
        1 => Role::Outer,
        2 => Role::Inner,
        b => return Err(Error::Parse(format!("unknown role byte {b}"))),
    };
    let count = r.u64()? as usize;
    if count > (buf.len() - r.pos) / 8 {
        return Err(Error::Parse(format!("cell count {count} exceeds the payload")));
    }
    let mut keys = Vec::with_capacity(count);
    for _ in 0..count {
        keys.push(r.u64()?);
    }
    if keys.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Parse("cell keys are not strictly increasing".into()));
    }
    if r.pos != buf.len() {
        return Err(Error::Parse("trailing bytes after cell set".into()));
    }
    let grid = Grid::new(&chart, base, level)?;
    CellSet::from_keys(&chart, grid, sat, keys, role)
}

#[derive(Serialize, Deserialize)]
struct JsonSet {
    chart: String,
    base: Vec<f64>,
    level: u32,
    sat: u32,
    role: Role,
    /// Indices of the unsaturated axes, one array per cell.
    cells: Vec<Vec<i64>>,
}

pub fn to_json(set: &CellSet) -> String {
    let k = set.reduced_axes().len();
    let cells = set
        .keys()
        .iter()
        .map(|&key| {
            let mut idx = vec![0i64; k];
            set.unpack(key, &mut idx);
            idx
        })
        .collect();
    let j = JsonSet {
        chart: set.chart().name().to_string(),
        base: set.grid().base.clone(),
        level: set.level(),
        sat: set.sat(),
        role: set.role(),
        cells,
    };
    serde_json::to_string(&j).expect("cell set serializes")
}

pub fn from_json(s: &str) -> Result<CellSet> {
    let j: JsonSet = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
    let chart = parse_group(&j.chart)?;
    let grid = Grid::new(&chart, j.base, j.level)?;
    let empty = CellSet::empty(&chart, grid.clone(), j.sat)?;
    let packer = empty.packer();
    let k = empty.reduced_axes().len();
    let mut keys = Vec::with_capacity(j.cells.len());
    for c in &j.cells {
        if c.len() != k || !packer.fits(c) {
            return Err(Error::Parse(format!("cell {c:?} does not fit {k} packed axes")));
        }
        keys.push(packer.pack(c));
    }
    CellSet::from_keys(&chart, grid, j.sat, keys, j.role)
}
