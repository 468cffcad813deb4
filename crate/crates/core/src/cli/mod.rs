//! Config-driven experiment runner.
//!
//! A config is a `key = value` text file; `#` starts a comment. Common keys:
//!
//! ```text
//! experiment = tube_sharpness    # one of the kinds in `list_experiments()`
//! group      = sl2r              # sl2r | aff | affl | heis3 | r:N | t:N | prod(g, g, ...)
//! levels     = 5,6,7             # nonempty, strictly increasing
//! samples    = 1000000           # random products for inner estimates
//! seed       = 1                 # required by stochastic kinds
//! out        = results/tube      # file stem for <out>.csv and <out>.json
//! threads    = 4
//! strict     = false             # clipping at the chart domain fails the run
//! ```
//!
//! Every other key is an experiment parameter; `describe(kind)` lists them.
//! Command-line flags override config values. CSV bodies depend only on the
//! config; timings and timestamps go to the JSON file.

use crate::bm::{check_bm, BmOptions, CSV_HEADER};
use crate::constructions::optimize::{BoxFamily, CollapseFamily, Family, TubeRadiusFamily};
use crate::constructions::slab::exact;
use crate::constructions::{
    collapse_pair, minimize_product, sl2_tube_measure, slab_report, stability_pair, tube, MinimizeOptions, SlabSpec, TubeSpec,
};
use crate::dimcalc::{eval_profile, parse_expr};
use crate::error::{Error, Result};
use crate::fiber::{quotient_integral_check, spillover_convexity_check, FiberSplit};
use crate::group::{parse_group, GroupChart, Law};
use crate::setrep::{product_sets_on, CellSet, ProductOptions, Side};
use clap::Parser;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// Version of the CSV column layouts below.
pub const CSV_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Kind {
    BmCheck,
    TubeSharpness,
    SlabSharpness,
    Collapse,
    Stability,
    FiberSuite,
    DimEval,
    Optimize,
}

struct Param {
    name: &'static str,
    default: &'static str,
    doc: &'static str,
}

const fn p(name: &'static str, default: &'static str, doc: &'static str) -> Param {
    Param { name, default, doc }
}

const BM_CHECK_PARAMS: &[Param] = &[
    p("x_lo", "", "lower corner of X, comma separated; default 0 (1 on positive axes)"),
    p("x_hi", "", "upper corner of X; default lower corner + 1"),
    p("y_lo", "", "lower corner of Y; default as X"),
    p("y_hi", "", "upper corner of Y; default as X"),
    p("exponent", "", "exponent n; default the group's n - h"),
];

const TUBE_PARAMS: &[Param] = &[
    p("delta", "0.1", "tube radius"),
];

const SLAB_PARAMS: &[Param] = &[
    p("eps", "0.05", "slab height in log a"),
    p("width", "1", "slab width in b"),
    p("power", "0.4", "power in the two-term sum"),
];

const COLLAPSE_PARAMS: &[Param] = &[
    p("s", "0.05", "collapse parameter, in (0, 0.2]"),
    p("alpha", "1", "target mu(X)"),
    p("beta", "1", "target mu(Y)"),
    p("bound", "1.1", "pass when mu(XY) <= bound mu(Y)"),
];

const STABILITY_PARAMS: &[Param] = &[
    p("eps", "0.5", "slack in (2 + eps)^n"),
    p("delta", "0.5", "radius of X"),
];

const FIBER_PARAMS: &[Param] = &[
    p("mask", "", "bit mask of the normal subgroup axes; default the last axis"),
    p("side", "1", "side of the cube X = Y"),
    p("grid", "50", "convexity grid points per axis"),
    p("quot_tol", "0.01", "allowed relative error of the quotient integral"),
    p("margin_tol", "0.02", "allowed negative convexity margin"),
];

const DIM_EVAL_PARAMS: &[Param] = &[
    p("expr", "", "group expression (required)"),
];

const OPTIMIZE_PARAMS: &[Param] = &[
    p("family", "collapse", "boxes | tube_radius | collapse"),
    p("budget", "60", "objective evaluations"),
    p("restarts", "1", "random restarts after the center start"),
    p("target", "", "stop once the objective drops below this"),
];

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::BmCheck,
        Kind::TubeSharpness,
        Kind::SlabSharpness,
        Kind::Collapse,
        Kind::Stability,
        Kind::FiberSuite,
        Kind::DimEval,
        Kind::Optimize,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::BmCheck => "bm_check",
            Kind::TubeSharpness => "tube_sharpness",
            Kind::SlabSharpness => "slab_sharpness",
            Kind::Collapse => "collapse",
            Kind::Stability => "stability",
            Kind::FiberSuite => "fiber_suite",
            Kind::DimEval => "dim_eval",
            Kind::Optimize => "optimize",
        }
    }

    pub fn parse(s: &str) -> Result<Kind> {
        Kind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Kind::ALL.iter().map(|k| k.name()).collect();
            Error::Invalid(format!("unknown experiment {s:?}; expected one of {}", names.join(", ")))
        })
    }

    fn summary(self) -> &'static str {
        match self {
            Kind::BmCheck => "measures two boxes and their product, evaluates the inequality with exponent n; fails only on a certified violation",
            Kind::TubeSharpness => "ratio mu(D^2) / mu(D) for the tube D around the maximal compact subgroup",
            Kind::SlabSharpness => "slab in Aff+(R) whose power sum exceeds 1 for powers below 1/2",
            Kind::Collapse => "box pair in Aff+(R) with mu(XY) close to mu(Y)",
            Kind::Stability => "nested tubes X inside X1 with mu(X1 X) < (2 + eps)^n mu(X)",
            Kind::FiberSuite => "quotient integral formula and spillover convexity for a normal subgroup split",
            Kind::DimEval => "noncompact and helix dimension of a group expression",
            Kind::Optimize => "coordinate descent over a set family, with a final inequality check",
        }
    }

    /// Whether results depend on the seed.
    pub fn stochastic(self) -> bool {
        matches!(self, Kind::BmCheck | Kind::Optimize)
    }

    fn default_group(self) -> &'static str {
        match self {
            Kind::BmCheck | Kind::Stability => "r:2",
            Kind::TubeSharpness => "sl2r",
            Kind::SlabSharpness => "aff",
            Kind::Collapse | Kind::Optimize => "affl",
            Kind::FiberSuite => "heis3",
            Kind::DimEval => "",
        }
    }

    fn default_levels(self) -> &'static str {
        match self {
            Kind::BmCheck => "5,6,7",
            Kind::TubeSharpness => "5,6,7",
            Kind::SlabSharpness => "5,6",
            Kind::Collapse => "5,6,7",
            Kind::Stability => "6",
            Kind::FiberSuite => "3,4",
            Kind::DimEval => "0",
            Kind::Optimize => "4",
        }
    }

    fn params(self) -> &'static [Param] {
        match self {
            Kind::BmCheck => BM_CHECK_PARAMS,
            Kind::TubeSharpness => TUBE_PARAMS,
            Kind::SlabSharpness => SLAB_PARAMS,
            Kind::Collapse => COLLAPSE_PARAMS,
            Kind::Stability => STABILITY_PARAMS,
            Kind::FiberSuite => FIBER_PARAMS,
            Kind::DimEval => DIM_EVAL_PARAMS,
            Kind::Optimize => OPTIMIZE_PARAMS,
        }
    }
}

pub fn list_experiments() -> String {
    Kind::ALL.iter().map(|k| format!("{:<15} {}\n", k.name(), k.summary())).collect()
}

pub fn describe(kind: &str) -> Result<String> {
    let k = Kind::parse(kind)?;
    let mut s = format!("{}: {}\n", k.name(), k.summary());
    s += &format!("  group    default {}\n", if k.default_group().is_empty() { "(unused)" } else { k.default_group() });
    s += &format!("  levels   default {}\n", k.default_levels());
    s += &format!("  seed     {}\n", if k.stochastic() { "required" } else { "optional" });
    for prm in k.params() {
        let d = if prm.default.is_empty() { String::new() } else { format!(" (default {})", prm.default) };
        s += &format!("  {:<8} {}{}\n", prm.name, prm.doc, d);
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub group: String,
    pub levels: Vec<u32>,
    pub samples: u64,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub strict: bool,
    pub params: BTreeMap<String, String>,
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Parse(format!("{key} = {v:?} is not a valid number")))
}

fn parse_levels(v: &str) -> Result<Vec<u32>> {
    v.split(',').map(|l| num::<u32>("levels", l)).collect()
}

impl ExperimentConfig {
    /// Parses `key = value` lines into a raw map; duplicate keys are errors.
    pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
        let mut m = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key = value, found {line:?}", i + 1)))?;
            let k = k.trim().to_string();
            if m.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Parse(format!("line {}: duplicate key {k:?}", i + 1)));
            }
        }
        Ok(m)
    }

    /// Validates a raw map against the schema of its experiment kind.
    pub fn from_map(mut m: BTreeMap<String, String>) -> Result<ExperimentConfig> {
        let kind = Kind::parse(&m.remove("experiment").ok_or_else(|| Error::Invalid("missing key 'experiment'".into()))?)?;
        let group = m.remove("group").unwrap_or_else(|| kind.default_group().to_string());
        let levels = parse_levels(&m.remove("levels").unwrap_or_else(|| kind.default_levels().to_string()))?;
        let samples = m.remove("samples").map(|v| num("samples", &v)).transpose()?.unwrap_or(1_000_000);
        let seed = m.remove("seed").map(|v| num("seed", &v)).transpose()?;
        let out = m.remove("out").map(PathBuf::from);
        let threads = m.remove("threads").map(|v| num("threads", &v)).transpose()?;
        let strict = match m.remove("strict").as_deref() {
            None | Some("false") => false,
            Some("true") => true,
            Some(v) => return Err(Error::Parse(format!("strict = {v:?}; expected true or false"))),
        };
        for k in m.keys() {
            if !kind.params().iter().any(|p| p.name == k) {
                let names: Vec<_> = kind.params().iter().map(|p| p.name).collect();
                return Err(Error::Invalid(format!(
                    "unknown parameter {k:?} for {}; expected one of: {}",
                    kind.name(),
                    names.join(", ")
                )));
            }
        }
        let cfg = ExperimentConfig { kind, group, levels, samples, seed, out, threads, strict, params: m };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_map(ExperimentConfig::parse_kv(text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(format!("levels {:?} must be nonempty and strictly increasing", self.levels)));
        }
        if self.kind.stochastic() && self.seed.is_none() {
            return Err(Error::Invalid(format!("{} is stochastic; set 'seed'", self.kind.name())));
        }
        if self.threads == Some(0) {
            return Err(Error::Invalid("threads must be at least 1".into()));
        }
        if self.kind != Kind::DimEval {
            parse_group(&self.group)?;
        }
        Ok(())
    }

    fn param(&self, name: &str) -> Option<&str> {
        self.params
            .get(name)
            .map(String::as_str)
            .or_else(|| self.kind.params().iter().find(|p| p.name == name).map(|p| p.default))
            .filter(|v| !v.is_empty())
    }

    fn f64_param(&self, name: &str) -> Result<f64> {
        num(name, self.param(name).ok_or_else(|| Error::Invalid(format!("missing parameter {name:?}")))?)
    }

    /// Canonical text of the config, used for the content hash.
    pub fn canonical(&self) -> String {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        m.insert("experiment", self.kind.name().into());
        m.insert("group", self.group.clone());
        m.insert("levels", self.levels.iter().map(u32::to_string).collect::<Vec<_>>().join(","));
        m.insert("samples", self.samples.to_string());
        m.insert("strict", self.strict.to_string());
        if let Some(s) = self.seed {
            m.insert("seed", s.to_string());
        }
        for prm in self.kind.params() {
            if let Some(v) = self.param(prm.name) {
                m.insert(prm.name, v.to_string());
            }
        }
        m.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// SHA-256 of the canonical config framed as a git blob.
    pub fn content_hash(&self) -> String {
        let c = self.canonical();
        let mut h = Sha256::new();
        h.update(format!("blob {}\0", c.len()));
        h.update(c.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Result of one run: the CSV body, the JSON metadata and the verdict.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub csv: String,
    pub json: String,
    pub pass: bool,
}

struct Row {
    cells: Vec<String>,
    pass: bool,
    allowance: f64,
    seconds: f64,
}

fn f(x: f64) -> String {
    format!("{x:.10}")
}

fn e(x: f64) -> String {
    format!("{x:.10e}")
}

fn verdict(pass: bool) -> String {
    if pass { "PASS" } else { "FAIL" }.into()
}

fn header(kind: Kind) -> Vec<&'static str> {
    match kind {
        Kind::BmCheck => CSV_HEADER.split(',').collect(),
        Kind::TubeSharpness => vec!["level", "delta", "mu_x", "mu_x2_outer", "ratio", "ratio_exact_denominator", "oracle", "lower_bound", "allowance", "verdict"],
        Kind::SlabSharpness => vec!["level", "eps", "power", "mu_x", "nu_x", "mu_x2_outer", "nu_x2_outer", "lhs", "lhs_exact", "allowance", "verdict"],
        Kind::Collapse => vec!["level", "s", "alpha", "beta", "mu_x", "mu_y", "mu_xy_outer", "ratio", "ratio_exact", "c", "bound", "allowance", "verdict"],
        Kind::Stability => vec!["level", "eps", "delta", "delta1", "ratio", "bound", "verdict"],
        Kind::FiberSuite => vec!["level", "mu_x", "quotient_err_x", "mu_x2_outer", "quotient_err_x2", "min_margin", "t1", "t2", "allowance", "verdict"],
        Kind::DimEval => vec!["expr", "d", "m", "h", "n", "bm_exponent", "helix_bound", "rule", "verdict"],
        Kind::Optimize => vec!["level", "family", "params", "objective", "evaluations", "exhausted", "lhs_conservative", "allowance", "verdict"],
    }
}

/// Relative quadrature error of a measure.
fn rel(m: &crate::setrep::Measure) -> f64 {
    if m.value > 0.0 {
        m.err / m.value
    } else {
        0.0
    }
}

fn check_clipping(cfg: &ExperimentConfig, sets: &[&CellSet]) -> Result<()> {
    if cfg.strict {
        if let Some(n) = sets.iter().flat_map(|s| s.notes()).find(|n| n.contains("clipped")) {
            return Err(Error::Coverage(n.clone()));
        }
    }
    Ok(())
}

fn product_opts(cfg: &ExperimentConfig) -> ProductOptions {
    ProductOptions { strict: cfg.strict, ..Default::default() }
}

fn corner(cfg: &ExperimentConfig, chart: &GroupChart, key: &str, fallback: Option<Vec<f64>>) -> Result<Vec<f64>> {
    match cfg.param(key) {
        Some(v) => {
            let c: Vec<f64> = v.split(',').map(|x| num(key, x)).collect::<Result<_>>()?;
            if c.len() != chart.dim() {
                return Err(Error::Invalid(format!("{key} has {} entries, {} has dimension {}", c.len(), chart.name(), chart.dim())));
            }
            Ok(c)
        }
        None => Ok(fallback.unwrap_or_else(|| chart.axes().iter().map(|a| if a.lo >= 0.0 { 1.0 } else { 0.0 }).collect())),
    }
}

fn bm_row(cfg: &ExperimentConfig, chart: &GroupChart, level: u32) -> Result<Row> {
    let x_lo = corner(cfg, chart, "x_lo", None)?;
    let x_hi = corner(cfg, chart, "x_hi", Some(x_lo.iter().map(|v| v + 1.0).collect()))?;
    let y_lo = corner(cfg, chart, "y_lo", Some(x_lo.clone()))?;
    let y_hi = corner(cfg, chart, "y_hi", Some(x_hi.clone()))?;
    let x = CellSet::from_box(chart, &x_lo, &x_hi, level)?;
    let y = CellSet::from_box(chart, &y_lo, &y_hi, level)?;
    let n = cfg.param("exponent").map(|v| num("exponent", v)).transpose()?;
    let opts = BmOptions { samples: cfg.samples, seed: cfg.seed.unwrap_or(1), product: product_opts(cfg), ..Default::default() };
    let r = check_bm(&x, &y, n, &opts)?;
    Ok(Row { cells: r.csv_row().split(',').map(String::from).collect(), pass: !r.violated, allowance: r.allowance, seconds: 0.0 })
}

/// Exact measure of the tube of radius `r`, where a closed form is known.
fn exact_tube(chart: &GroupChart, r: f64) -> Option<f64> {
    match chart.law() {
        Law::Sl2 => Some(sl2_tube_measure(r)),
        Law::Euclid(1) => Some(2.0 * r),
        Law::Euclid(2) => Some(std::f64::consts::PI * r * r),
        Law::Euclid(3) => Some(4.0 / 3.0 * std::f64::consts::PI * r.powi(3)),
        _ => None,
    }
}

fn tube_oracle(chart: &GroupChart, r: f64) -> Option<f64> {
    match chart.law() {
        Law::Sl2 => Some(((2.0 * r).cosh() - 1.0) / (r.cosh() - 1.0)),
        Law::Euclid(d) => Some(2f64.powi(*d as i32)),
        _ => None,
    }
}

fn tube_row(cfg: &ExperimentConfig, chart: &GroupChart, level: u32) -> Result<Row> {
    let delta = cfg.f64_param("delta")?;
    let x = tube(&TubeSpec::new(chart, delta, level)?)?;
    let x2 = product_sets_on(&x, &x, x.grid().clone(), None, &product_opts(cfg))?.outer;
    check_clipping(cfg, &[&x2])?;
    let (mx, mx2) = (x.measure(Side::Left), x2.measure(Side::Left));
    let ratio = mx2.value / mx.value;
    let exact = exact_tube(chart, delta).map(|m| mx2.value / m);
    let oracle = tube_oracle(chart, delta);
    let lower = 2f64.powi(chart.profile().bm_exponent as i32);
    let allowance = rel(&mx) + rel(&mx2);
    // the outer cover of the square is an upper bound, so it must clear the lower bound
    let best = exact.unwrap_or(ratio);
    let pass = best >= lower * (1.0 - allowance);
    let opt = |v: Option<f64>| v.map(f).unwrap_or_default();
    Ok(Row {
        cells: vec![level.to_string(), f(delta), e(mx.value), e(mx2.value), f(ratio), opt(exact), opt(oracle), f(lower), f(allowance), verdict(pass)],
        pass,
        allowance,
        seconds: 0.0,
    })
}

fn slab_row(cfg: &ExperimentConfig, chart: &GroupChart, level: u32) -> Result<Row> {
    if !matches!(chart.law(), Law::Aff) {
        return Err(Error::Unsupported(format!("slab_sharpness runs on aff, not {}", chart.name())));
    }
    let (eps, w, pw) = (cfg.f64_param("eps")?, cfg.f64_param("width")?, cfg.f64_param("power")?);
    let r = slab_report(&SlabSpec::new(eps, w, level), pw)?;
    let lhs_exact = (exact::nu_x(eps, w) / exact::nu_x2(eps, w)).powf(pw) + (exact::mu_x(eps, w) / exact::mu_x2(eps, w)).powf(pw);
    let allowance = pw * r.lhs * (rel(&r.mu_x) + rel(&r.nu_x) + rel(&r.mu_x2) + rel(&r.nu_x2));
    let pass = r.lhs - allowance > 1.0;
    Ok(Row {
        cells: vec![
            level.to_string(),
            f(eps),
            f(pw),
            e(r.mu_x.value),
            e(r.nu_x.value),
            e(r.mu_x2.value),
            e(r.nu_x2.value),
            f(r.lhs),
            f(lhs_exact),
            f(allowance),
            verdict(pass),
        ],
        pass,
        allowance,
        seconds: 0.0,
    })
}

fn collapse_row(cfg: &ExperimentConfig, chart: &GroupChart, level: u32) -> Result<Row> {
    if !matches!(chart.law(), Law::Aff | Law::AffLog) {
        return Err(Error::Unsupported(format!("collapse runs on aff or affl, not {}", chart.name())));
    }
    let (s, a, b, bound) = (cfg.f64_param("s")?, cfg.f64_param("alpha")?, cfg.f64_param("beta")?, cfg.f64_param("bound")?);
    let c = collapse_pair(s, a, b, level)?;
    let xy = c.product()?;
    check_clipping(cfg, &[&xy])?;
    let (mx, my, mxy) = (c.x.measure(Side::Left), c.y.measure(Side::Left), xy.measure(Side::Left));
    let ratio = mxy.value / my.value;
    let allowance = ratio * (rel(&my) + rel(&mxy));
    let pass = ratio <= bound + allowance;
    Ok(Row {
        cells: vec![
            level.to_string(),
            f(s),
            f(a),
            f(b),
            e(mx.value),
            e(my.value),
            e(mxy.value),
            f(ratio),
            f(c.ratio_exact),
            f(c.c),
            f(bound),
            f(allowance),
            verdict(pass),
        ],
        pass,
        allowance,
        seconds: 0.0,
    })
}

fn stability_row(cfg: &ExperimentConfig, chart: &GroupChart, level: u32) -> Result<Row> {
    let (eps, delta) = (cfg.f64_param("eps")?, cfg.f64_param("delta")?);
    let bound = (2.0 + eps).powi(chart.profile().bm_exponent as i32);
    let (cells, pass) = match stability_pair(chart, eps, delta, level) {
        Ok(p) => (vec![level.to_string(), f(eps), f(delta), f(p.delta1), f(p.ratio), f(p.bound), verdict(true)], true),
        Err(Error::Invalid(_)) => (vec![level.to_string(), f(eps), f(delta), String::new(), String::new(), f(bound), verdict(false)], false),
        Err(err) => return Err(err),
    };
    Ok(Row { cells, pass, allowance: 0.0, seconds: 0.0 })
}

fn fiber_row(cfg: &ExperimentConfig, chart: &GroupChart, level: u32) -> Result<Row> {
    let d = chart.dim();
    let mask = match cfg.param("mask") {
        Some(v) => num::<u32>("mask", v)?,
        None => 1 << (d - 1),
    };
    let split = FiberSplit::new(chart, mask)?;
    let side = cfg.f64_param("side")?;
    let grid: usize = num("grid", cfg.param("grid").unwrap_or("50"))?;
    let (qtol, mtol) = (cfg.f64_param("quot_tol")?, cfg.f64_param("margin_tol")?);
    let x = CellSet::from_box(chart, &vec![0.0; d], &vec![side; d], level)?;
    let x2 = product_sets_on(&x, &x, x.grid().clone(), None, &product_opts(cfg))?.outer;
    check_clipping(cfg, &[&x2])?;
    let (ex, ex2) = (quotient_integral_check(&split, &x)?, quotient_integral_check(&split, &x2)?);
    // n1 belongs to the normal subgroup, n2 to the quotient
    let n1 = split.fiber_axes().len() as u32;
    let n2 = split.base_axes().len() as u32;
    let conv = spillover_convexity_check(&split, &x, &x, n1, n2, grid)?;
    let allowance = mtol;
    let pass = ex < qtol && ex2 < qtol && conv.min_margin >= -mtol;
    Ok(Row {
        cells: vec![
            level.to_string(),
            e(x.measure(Side::Left).value),
            e(ex),
            e(x2.measure(Side::Left).value),
            e(ex2),
            f(conv.min_margin),
            f(conv.at.0),
            f(conv.at.1),
            f(allowance),
            verdict(pass),
        ],
        pass,
        allowance,
        seconds: 0.0,
    })
}

fn dim_row(cfg: &ExperimentConfig) -> Result<Row> {
    let src = cfg.param("expr").ok_or_else(|| Error::Invalid("dim_eval needs parameter 'expr'".into()))?;
    let ex = parse_expr(src)?;
    let cells = match eval_profile(&ex) {
        Ok(dv) => {
            let p = dv.profile;
            let ok = p.h <= p.n / 3;
            let c = vec![ex.to_string(), p.d.to_string(), p.m.to_string(), p.h.to_string(), p.n.to_string(), p.bm_exponent.to_string(), ok.to_string(), dv.rule, verdict(ok)];
            return Ok(Row { cells: c, pass: ok, allowance: 0.0, seconds: 0.0 });
        }
        Err(Error::Unsupported(why)) => {
            let mut c = vec![ex.to_string()];
            c.extend(std::iter::repeat(String::new()).take(6));
            c.push(why);
            c.push("UNSUPPORTED".into());
            c
        }
        Err(err) => return Err(err),
    };
    Ok(Row { cells, pass: false, allowance: 0.0, seconds: 0.0 })
}

fn optimize_row(cfg: &ExperimentConfig, level: u32) -> Result<Row> {
    let fam: Box<dyn Family> = match cfg.param("family").unwrap_or("collapse") {
        "boxes" => Box::new(BoxFamily { level, lo: 0.25, hi: 2.0 }),
        "tube_radius" => Box::new(TubeRadiusFamily { level, lo: 0.1, hi: 0.5 }),
        "collapse" => Box::new(CollapseFamily { level }),
        other => return Err(Error::Invalid(format!("unknown family {other:?}; expected boxes, tube_radius or collapse"))),
    };
    let opts = MinimizeOptions {
        budget: num("budget", cfg.param("budget").unwrap_or("60"))?,
        restarts: num("restarts", cfg.param("restarts").unwrap_or("1"))?,
        seed: cfg.seed.unwrap_or(1),
        target: cfg.param("target").map(|v| num("target", v)).transpose()?,
        report_samples: cfg.samples,
        ..Default::default()
    };
    let r = minimize_product(fam.as_ref(), &opts)?;
    let rep = r.report.as_ref().expect("report requested");
    let params: Vec<String> = r.params.iter().map(|v| f(*v)).collect();
    Ok(Row {
        cells: vec![
            level.to_string(),
            r.family.clone(),
            params.join(";"),
            f(r.objective),
            r.evaluations.to_string(),
            r.exhausted.to_string(),
            f(rep.lhs_conservative),
            f(rep.allowance),
            rep.verdict().to_string(),
        ],
        pass: !rep.violated,
        allowance: rep.allowance,
        seconds: 0.0,
    })
}

fn run_rows(cfg: &ExperimentConfig) -> Result<Vec<Row>> {
    if cfg.kind == Kind::DimEval {
        let t = Instant::now();
        let mut r = dim_row(cfg)?;
        r.seconds = t.elapsed().as_secs_f64();
        return Ok(vec![r]);
    }
    let chart = parse_group(&cfg.group)?;
    if cfg.kind == Kind::Optimize && cfg.group != Kind::Optimize.default_group() {
        return Err(Error::Unsupported("optimize picks its group from 'family'; drop 'group'".into()));
    }
    let mut rows = Vec::with_capacity(cfg.levels.len());
    for &level in &cfg.levels {
        let t = Instant::now();
        let mut r = match cfg.kind {
            Kind::BmCheck => bm_row(cfg, &chart, level),
            Kind::TubeSharpness => tube_row(cfg, &chart, level),
            Kind::SlabSharpness => slab_row(cfg, &chart, level),
            Kind::Collapse => collapse_row(cfg, &chart, level),
            Kind::Stability => stability_row(cfg, &chart, level),
            Kind::FiberSuite => fiber_row(cfg, &chart, level),
            Kind::Optimize => optimize_row(cfg, level),
            Kind::DimEval => unreachable!(),
        }?;
        r.seconds = t.elapsed().as_secs_f64();
        rows.push(r);
    }
    Ok(rows)
}

/// Runs the experiment and assembles CSV and JSON without touching files.
pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    let start = Instant::now();
    let rows = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?
            .install(|| run_rows(cfg))?,
        None => run_rows(cfg)?,
    };
    let head = header(cfg.kind);
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(&head).map_err(io)?;
    for r in &rows {
        debug_assert_eq!(r.cells.len(), head.len());
        w.write_record(&r.cells).map_err(io)?;
    }
    let csv = String::from_utf8(w.into_inner().map_err(|e| Error::Io(e.to_string()))?).expect("csv is utf-8");
    let pass = rows.iter().all(|r| r.pass);
    let echo: BTreeMap<String, String> =
        ExperimentConfig::parse_kv(&cfg.canonical()).expect("canonical config parses");
    let records: Vec<Value> = rows
        .iter()
        .map(|r| {
            let m: serde_json::Map<String, Value> = head.iter().zip(&r.cells).map(|(k, v)| (k.to_string(), json!(v))).collect();
            json!({ "values": m, "allowance": r.allowance, "pass": r.pass, "seconds": r.seconds })
        })
        .collect();
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = json!({
        "tool": "bmlab",
        "version": env!("CARGO_PKG_VERSION"),
        "csv_version": CSV_VERSION,
        "experiment": cfg.kind.name(),
        "config": echo,
        "content_hash": cfg.content_hash(),
        "columns": head,
        "rows": records,
        "pass": pass,
        "threads": cfg.threads,
        "started_unix": started,
        "total_seconds": start.elapsed().as_secs_f64(),
    });
    let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    Ok(Outcome { csv, json, pass })
}

/// Runs the experiment and writes `<out>.csv` and `<out>.json` when `out` is set.
pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    let o = execute(cfg)?;
    if let Some(out) = &cfg.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(out.with_extension("csv"), &o.csv)?;
        std::fs::write(out.with_extension("json"), &o.json)?;
    }
    Ok(o)
}

#[derive(Parser, Debug, Default)]
#[command(name = "bmlab", version, about = "Brunn-Minkowski experiments on small Lie groups")]
pub struct Args {
    /// Config file with `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long)]
    pub experiment: Option<String>,
    /// Comma-separated increasing levels.
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long)]
    pub samples: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output file stem; `.csv` and `.json` are appended.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Treat clipping at the chart domain as a failure.
    #[arg(long)]
    pub strict: bool,
    /// Extra experiment parameters as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// List experiment kinds and exit.
    #[arg(long)]
    pub list: bool,
    /// Describe one experiment kind and exit.
    #[arg(long, value_name = "KIND")]
    pub describe: Option<String>,
}

/// Merges the config file with command-line overrides.
pub fn config_from_args(args: &Args) -> Result<ExperimentConfig> {
    let mut m = match &args.config {
        Some(p) => ExperimentConfig::parse_kv(&read(p)?)?,
        None => BTreeMap::new(),
    };
    let mut put = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            m.insert(k.to_string(), v);
        }
    };
    put("experiment", args.experiment.clone());
    put("group", args.group.clone());
    put("levels", args.levels.clone());
    put("samples", args.samples.map(|v| v.to_string()));
    put("seed", args.seed.map(|v| v.to_string()));
    put("threads", args.threads.map(|v| v.to_string()));
    put("out", args.out.as_ref().map(|p| p.display().to_string()));
    if args.strict {
        put("strict", Some("true".into()));
    }
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Parse(format!("--set {kv:?}: expected key=value")))?;
        put(k.trim(), Some(v.trim().to_string()));
    }
    ExperimentConfig::from_map(m)
}

fn read(p: &Path) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))
}

/// Entry point: 0 when every criterion passes, 1 when one fails, 2 on errors.
pub fn main_with(args: Args) -> i32 {
    if args.list {
        print!("{}", list_experiments());
        return 0;
    }
    if let Some(k) = &args.describe {
        return match describe(k) {
            Ok(s) => {
                print!("{s}");
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                2
            }
        };
    }
    let res = config_from_args(&args).and_then(|cfg| run(&cfg).map(|o| (cfg, o)));
    match res {
        Ok((cfg, o)) => {
            if cfg.out.is_none() {
                print!("{}", o.csv);
            }
            eprintln!("{}: {}", cfg.kind.name(), if o.pass { "PASS" } else { "FAIL" });
            if o.pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
