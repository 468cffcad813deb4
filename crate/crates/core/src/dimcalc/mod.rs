//! Symbolic noncompact Lie dimension and helix dimension of group expressions.
//!
//! ```text
//! expr := atom
//!       | "prod(" expr "," expr ")"
//!       | "ext_lie(" expr "," expr ["," "semisimple"] ")"
//!       | "ext_rpos(" expr ")"
//!       | "quot_compact(" expr "," INT ")"
//!       | "open_sub(" expr ")"
//! atom := "sl2r_cover" | "T" | "Z" | "R" | "compact(" INT ")" | catalog group
//! ```
//!
//! `ext_lie(k, q)` is a group `G` with `1 -> k -> G -> q -> 1`, `ext_rpos(k)`
//! an extension of `(R_{>0}, x)` by `k`. Only the additivity rules that hold
//! in general are applied; anything else is reported as unsupported.

use crate::error::{Error, Result};
use crate::group::{parse_group, DimensionProfile, GroupChart, Law};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Clone, Debug, PartialEq)]
pub enum GroupExpr {
    Atom(String),
    Product(Box<GroupExpr>, Box<GroupExpr>),
    LieExtension { kernel: Box<GroupExpr>, quotient: Box<GroupExpr>, semisimple: bool },
    RposExtension(Box<GroupExpr>),
    QuotientByCompact(Box<GroupExpr>, u32),
    OpenSubgroup(Box<GroupExpr>),
}

impl fmt::Display for GroupExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupExpr::Atom(a) => f.write_str(a),
            GroupExpr::Product(a, b) => write!(f, "prod({a},{b})"),
            GroupExpr::LieExtension { kernel, quotient, semisimple } => {
                write!(f, "ext_lie({kernel},{quotient}{})", if *semisimple { ",semisimple" } else { "" })
            }
            GroupExpr::RposExtension(k) => write!(f, "ext_rpos({k})"),
            GroupExpr::QuotientByCompact(e, k) => write!(f, "quot_compact({e},{k})"),
            GroupExpr::OpenSubgroup(e) => write!(f, "open_sub({e})"),
        }
    }
}

/// Structural facts tracked alongside the profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Traits {
    pub connected: bool,
    pub solvable: bool,
    pub semisimple: bool,
}

/// Profile of a node, the rule that produced it, and the children's derivations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Derivation {
    pub expr: String,
    pub profile: DimensionProfile,
    pub traits: Traits,
    pub rule: String,
    pub children: Vec<Derivation>,
}

pub fn parse_expr(s: &str) -> Result<GroupExpr> {
    let mut p = Parser { s: s.as_bytes(), pos: 0 };
    let e = p.expr()?;
    p.ws();
    if p.pos != p.s.len() {
        return Err(Error::Parse(format!("trailing input in {s:?} at byte {}", p.pos)));
    }
    Ok(e)
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn word(&mut self) -> String {
        self.ws();
        let st = self.pos;
        while self.pos < self.s.len() && (self.s[self.pos].is_ascii_alphanumeric() || matches!(self.s[self.pos], b'_' | b':')) {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.s[st..self.pos]).into_owned()
    }

    fn eat(&mut self, c: u8) -> bool {
        self.ws();
        if self.s.get(self.pos) == Some(&c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8, ctx: &str) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::Parse(format!("expected '{}' in {ctx} at byte {}", c as char, self.pos)))
        }
    }

    fn int(&mut self) -> Result<u32> {
        let w = self.word();
        w.parse().map_err(|_| Error::Parse(format!("expected an integer, found {w:?}")))
    }

    /// Text of a balanced `prod(...)` catalog name starting at `start`.
    fn expr(&mut self) -> Result<GroupExpr> {
        let w = self.word();
        let b = Box::new;
        let e = match w.as_str() {
            "prod" => {
                self.expect(b'(', "prod")?;
                let a = self.expr()?;
                self.expect(b',', "prod")?;
                let c = self.expr()?;
                let mut e = GroupExpr::Product(b(a), b(c));
                // catalog products may list more than two factors
                while self.eat(b',') {
                    e = GroupExpr::Product(b(e), b(self.expr()?));
                }
                self.expect(b')', "prod")?;
                e
            }
            "ext_lie" => {
                self.expect(b'(', "ext_lie")?;
                let k = self.expr()?;
                self.expect(b',', "ext_lie")?;
                let q = self.expr()?;
                let mut semisimple = false;
                if self.eat(b',') {
                    let f = self.word();
                    semisimple = match f.as_str() {
                        "semisimple" | "true" => true,
                        "false" => false,
                        _ => return Err(Error::Parse(format!("expected 'semisimple', found {f:?}"))),
                    };
                }
                self.expect(b')', "ext_lie")?;
                GroupExpr::LieExtension { kernel: b(k), quotient: b(q), semisimple }
            }
            "ext_rpos" | "open_sub" => {
                self.expect(b'(', &w)?;
                let k = self.expr()?;
                self.expect(b')', &w)?;
                if w == "ext_rpos" {
                    GroupExpr::RposExtension(b(k))
                } else {
                    GroupExpr::OpenSubgroup(b(k))
                }
            }
            "quot_compact" => {
                self.expect(b'(', "quot_compact")?;
                let e = self.expr()?;
                self.expect(b',', "quot_compact")?;
                let k = self.int()?;
                self.expect(b')', "quot_compact")?;
                GroupExpr::QuotientByCompact(b(e), k)
            }
            "compact" => {
                self.expect(b'(', "compact")?;
                let k = self.int()?;
                self.expect(b')', "compact")?;
                GroupExpr::Atom(format!("compact({k})"))
            }
            "" => return Err(Error::Parse(format!("expected a group expression at byte {}", self.pos))),
            _ => {
                atom(&w)?;
                GroupExpr::Atom(w)
            }
        };
        Ok(e)
    }
}

fn law_traits(chart: &GroupChart) -> Traits {
    fn walk(law: &Law) -> (bool, bool) {
        match law {
            Law::Euclid(_) | Law::Torus(_) | Law::Heis3 | Law::Aff | Law::AffLog => (true, false),
            Law::Sl2 => (false, true),
            Law::Product(fs) => fs.iter().map(|f| walk(f.law())).fold((true, true), |a, b| (a.0 && b.0, a.1 && b.1)),
        }
    }
    let (solvable, semisimple) = walk(chart.law());
    Traits { connected: true, solvable, semisimple }
}

/// Declared profile, traits and provenance of an atom.
fn atom(name: &str) -> Result<(DimensionProfile, Traits, String)> {
    let t = |connected, solvable, semisimple| Traits { connected, solvable, semisimple };
    Ok(match name {
        "sl2r_cover" => (DimensionProfile::new(3, 0, 1)?, t(true, false, true), "universal cover of SL(2,R): center Z, no compact subgroup".into()),
        "T" => (DimensionProfile::new(1, 1, 0)?, t(true, true, false), "circle group".into()),
        "Z" => (DimensionProfile::new(0, 0, 0)?, t(false, true, false), "discrete integers".into()),
        "R" => (DimensionProfile::new(1, 0, 0)?, t(true, true, false), "real line".into()),
        _ if name.starts_with("compact(") => {
            let k: u32 = name[8..name.len() - 1].parse().map_err(|_| Error::Parse(format!("bad atom {name:?}")))?;
            // connectivity of a generic compact group is unknown
            (DimensionProfile::new(k, k, 0)?, t(false, false, false), format!("compact group of dimension {k}"))
        }
        _ => {
            let chart = parse_group(name).map_err(|_| Error::Parse(format!("unknown atom {name:?}")))?;
            (chart.profile(), law_traits(&chart), format!("catalog chart {}", chart.name()))
        }
    })
}

fn unsupported(e: &GroupExpr, why: &str) -> Error {
    Error::Unsupported(format!("{e}: {why}"))
}

fn profile(d: u32, m: u32, h: u32, e: &GroupExpr) -> Result<DimensionProfile> {
    DimensionProfile::new(d, m, h).map_err(|err| unsupported(e, &format!("derived profile is inconsistent ({err})")))
}

/// Profile of `e` with the rule used at every node. Unsupported patterns
/// anywhere in the tree make the whole tree unsupported.
pub fn eval_profile(e: &GroupExpr) -> Result<Derivation> {
    let (p, traits, rule, children) = match e {
        GroupExpr::Atom(a) => {
            let (p, t, why) = atom(a)?;
            (p, t, format!("atom: {why}"), vec![])
        }
        GroupExpr::Product(a, b) => {
            let (da, db) = (eval_profile(a)?, eval_profile(b)?);
            let (pa, pb) = (da.profile, db.profile);
            let p = profile(pa.d + pb.d, pa.m + pb.m, pa.h + pb.h, e)?;
            let (ta, tb) = (da.traits, db.traits);
            let t = Traits {
                connected: ta.connected && tb.connected,
                solvable: ta.solvable && tb.solvable,
                semisimple: ta.semisimple && tb.semisimple,
            };
            (p, t, "direct product: d, m, h and n add".into(), vec![da, db])
        }
        GroupExpr::LieExtension { kernel, quotient, semisimple } => {
            let (dk, dq) = (eval_profile(kernel)?, eval_profile(quotient)?);
            if !(dk.traits.connected && dq.traits.connected) {
                return Err(unsupported(
                    e,
                    "additivity needs connected Lie groups; 1 -> Z -> R -> T -> 1 has n(R) = 1 but n(Z) = n(T) = 0",
                ));
            }
            let (pk, pq) = (dk.profile, dq.profile);
            let (h, t, rule) = if *semisimple {
                if !(dk.traits.semisimple && dq.traits.semisimple) {
                    return Err(unsupported(e, "a semisimple extension needs semisimple kernel and quotient"));
                }
                let t = Traits { connected: true, solvable: false, semisimple: true };
                (pk.h + pq.h, t, "connected semisimple extension: n and h add")
            } else if dk.traits.solvable && dq.traits.solvable {
                let t = Traits { connected: true, solvable: true, semisimple: false };
                (0, t, "connected extension: n adds; solvable, so h = 0")
            } else {
                return Err(unsupported(
                    e,
                    "helix dimension is not additive for non-semisimple extensions (the universal cover of SL(2,R) inside (H x R)/Z over T)",
                ));
            };
            (profile(pk.d + pq.d, pk.m + pq.m, h, e)?, t, rule.into(), vec![dk, dq])
        }
        GroupExpr::RposExtension(k) => {
            let dk = eval_profile(k)?;
            let pk = dk.profile;
            let t = Traits { connected: dk.traits.connected, solvable: dk.traits.solvable, semisimple: false };
            (profile(pk.d + 1, pk.m, pk.h, e)?, t, "extension by (R>0, x): n + 1, h preserved".into(), vec![dk])
        }
        GroupExpr::QuotientByCompact(inner, k) => {
            let di = eval_profile(inner)?;
            let pi = di.profile;
            if *k > pi.m {
                return Err(unsupported(e, &format!("a compact normal subgroup of dimension {k} exceeds m = {}", pi.m)));
            }
            (profile(pi.d - k, pi.m - k, pi.h, e)?, di.traits, "quotient by a compact normal subgroup: n, h preserved".into(), vec![di])
        }
        GroupExpr::OpenSubgroup(inner) => {
            let di = eval_profile(inner)?;
            (di.profile, di.traits, "open subgroup: n, h preserved".into(), vec![di])
        }
    };
    Ok(Derivation { expr: e.to_string(), profile: p, traits, rule, children })
}

/// `h <= floor(n / 3)`.
pub fn check_helix_bound(e: &GroupExpr) -> Result<bool> {
    let p = eval_profile(e)?.profile;
    Ok(p.h <= p.n / 3)
}

/// `n - h`.
pub fn bm_exponent(e: &GroupExpr) -> Result<u32> {
    Ok(eval_profile(e)?.profile.bm_exponent)
}

const ATOMS: [&str; 13] = ["sl2r", "sl2r_cover", "T", "Z", "R", "compact(1)", "compact(3)", "heis3", "aff", "affl", "r:2", "t:1", "prod(sl2r,r:1)"];

/// A random expression of depth at most `depth`.
pub fn random_expr<R: Rng>(rng: &mut R, depth: u32) -> GroupExpr {
    let b = Box::new;
    if depth == 0 || rng.gen_bool(0.3) {
        return GroupExpr::Atom(ATOMS[rng.gen_range(0..ATOMS.len())].to_string());
    }
    match rng.gen_range(0..5) {
        0 => GroupExpr::Product(b(random_expr(rng, depth - 1)), b(random_expr(rng, depth - 1))),
        1 => GroupExpr::LieExtension {
            kernel: b(random_expr(rng, depth - 1)),
            quotient: b(random_expr(rng, depth - 1)),
            semisimple: rng.gen_bool(0.5),
        },
        2 => GroupExpr::RposExtension(b(random_expr(rng, depth - 1))),
        3 => GroupExpr::QuotientByCompact(b(random_expr(rng, depth - 1)), rng.gen_range(0..3)),
        _ => GroupExpr::OpenSubgroup(b(random_expr(rng, depth - 1))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::catalog;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn prof(s: &str) -> DimensionProfile {
        eval_profile(&parse_expr(s).unwrap()).unwrap().profile
    }

    #[test]
    fn atoms_and_catalog() {
        assert_eq!((prof("sl2r").n, prof("sl2r").h), (2, 0));
        assert_eq!(prof("sl2r_cover").h, 1);
        for g in catalog() {
            assert_eq!(prof(g.name()), g.profile(), "{}", g.name());
        }
    }

    #[test]
    fn exponents_and_bounds() {
        let e = parse_expr("heis3").unwrap();
        assert!(check_helix_bound(&e).unwrap());
        assert_eq!(bm_exponent(&e).unwrap(), 3);
        let p = parse_expr("prod(sl2r, r:1)").unwrap();
        assert_eq!((prof("prod(sl2r, r:1)").n, bm_exponent(&p).unwrap()), (3, 3));
        let c = parse_expr("sl2r_cover").unwrap();
        assert_eq!(bm_exponent(&c).unwrap(), 2);
        assert!(check_helix_bound(&c).unwrap());
        assert_eq!((prof("ext_rpos(open_sub(heis3))").n, prof("ext_rpos(open_sub(heis3))").h), (4, 0));
    }

    #[test]
    fn failure_examples_are_unsupported() {
        for s in ["ext_lie(Z, T)", "ext_lie(sl2r_cover, T)", "prod(R, ext_lie(Z, T))", "quot_compact(R, 1)", "ext_lie(sl2r, R, semisimple)"] {
            assert!(matches!(eval_profile(&parse_expr(s).unwrap()), Err(Error::Unsupported(_))), "{s}");
        }
        assert!(matches!(parse_expr("ext_lie(R)"), Err(Error::Parse(_))));
        assert!(matches!(parse_expr("so3"), Err(Error::Parse(_))));
    }

    #[test]
    fn licensed_rules() {
        let p = prof("ext_lie(sl2r, sl2r_cover, semisimple)");
        assert_eq!((p.n, p.h), (5, 1));
        let p = prof("ext_lie(heis3, R)");
        assert_eq!((p.n, p.h), (4, 0));
        let p = prof("quot_compact(prod(sl2r, T), 1)");
        assert_eq!((p.d, p.n), (3, 2));
    }

    #[test]
    fn display_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let e = random_expr(&mut rng, 4);
            // catalog products reparse as product nodes with the same text
            assert_eq!(parse_expr(&e.to_string()).unwrap().to_string(), e.to_string());
        }
    }

    #[test]
    fn random_trees_respect_the_helix_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut supported = 0;
        for _ in 0..1000 {
            let e = random_expr(&mut rng, 4);
            match eval_profile(&e) {
                Ok(d) => {
                    supported += 1;
                    assert!(d.profile.h <= d.profile.n / 3, "{e}");
                }
                Err(Error::Unsupported(_)) => {}
                Err(err) => panic!("{e}: {err}"),
            }
        }
        assert!(supported > 300, "{supported}");
    }

    #[test]
    fn products_commute_and_associate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = Box::new;
        for _ in 0..200 {
            let (x, y, z) = (random_expr(&mut rng, 2), random_expr(&mut rng, 2), random_expr(&mut rng, 2));
            let xy = GroupExpr::Product(b(x.clone()), b(y.clone()));
            let yx = GroupExpr::Product(b(y.clone()), b(x.clone()));
            let l = GroupExpr::Product(b(xy.clone()), b(z.clone()));
            let r = GroupExpr::Product(b(x), b(GroupExpr::Product(b(y), b(z))));
            let p = |e: &GroupExpr| eval_profile(e).ok().map(|d| d.profile);
            assert_eq!(p(&xy), p(&yx));
            assert_eq!(p(&l), p(&r));
        }
    }

    #[test]
    fn unsupported_is_sticky() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bad = parse_expr("ext_lie(Z, T)").unwrap();
        for _ in 0..100 {
            let e = GroupExpr::Product(Box::new(random_expr(&mut rng, 2)), Box::new(bad.clone()));
            let e = GroupExpr::OpenSubgroup(Box::new(e));
            assert!(eval_profile(&e).is_err());
        }
    }
}
