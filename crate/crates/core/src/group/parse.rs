//! Group names:
//!
//! ```text
//! group := "sl2r" | "aff" | "affl" | "heis3" | "r:" INT | "t:" INT
//!        | "prod(" group ("," group)+ ")"
//! ```

use super::{GroupChart, Law};
use crate::error::{Error, Result};

pub fn parse_group(s: &str) -> Result<GroupChart> {
    let mut p = Parser { s: s.as_bytes(), pos: 0 };
    let g = p.group()?;
    p.skip_ws();
    if p.pos != p.s.len() {
        return Err(Error::Parse(format!("trailing input in group name {s:?} at byte {}", p.pos)));
    }
    Ok(g)
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn ident(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && (self.s[self.pos].is_ascii_alphanumeric() || self.s[self.pos] == b'_') {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.s[start..self.pos]).into_owned()
    }

    fn eat(&mut self, c: u8) -> bool {
        self.skip_ws();
        if self.pos < self.s.len() && self.s[self.pos] == c {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn int(&mut self) -> Result<usize> {
        let t = self.ident();
        t.parse::<usize>().map_err(|_| Error::Parse(format!("expected a dimension, found {t:?}")))
    }

    fn group(&mut self) -> Result<GroupChart> {
        let id = self.ident();
        match id.as_str() {
            "sl2r" => Ok(GroupChart::sl2()),
            "aff" => Ok(GroupChart::aff()),
            "affl" => Ok(GroupChart::aff_log()),
            "heis3" => Ok(GroupChart::heis3()),
            "r" | "t" => {
                if !self.eat(b':') {
                    return Err(Error::Parse(format!("expected ':' after {id:?}")));
                }
                let d = self.int()?;
                GroupChart::new(if id == "r" { Law::Euclid(d) } else { Law::Torus(d) })
            }
            "prod" => {
                if !self.eat(b'(') {
                    return Err(Error::Parse("expected '(' after prod".into()));
                }
                let mut fs = vec![self.group()?];
                while self.eat(b',') {
                    fs.push(self.group()?);
                }
                if !self.eat(b')') {
                    return Err(Error::Parse("expected ')' closing prod".into()));
                }
                GroupChart::product(fs)
            }
            "" => Err(Error::Parse("empty group name".into())),
            other => Err(Error::Parse(format!("unknown group {other:?}"))),
        }
    }
}

/// The catalog of concrete charts.
pub fn catalog() -> Vec<GroupChart> {
    ["r:1", "r:2", "r:3", "t:1", "t:2", "heis3", "aff", "affl", "sl2r", "prod(r:1,heis3)", "prod(sl2r,r:1)"]
        .iter()
        .map(|s| parse_group(s).expect("catalog names parse"))
        .collect()
}
