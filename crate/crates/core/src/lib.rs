//! Numerical laboratory for Brunn-Minkowski type inequalities on small Lie groups.
//!
//! Groups are concrete coordinate charts ([`group`]), compact sets are unions of
//! dyadic cells ([`setrep`]), and the inequality functionals, extremal families,
//! fiber calculus and the symbolic dimension rules sit on top of those.

pub mod bm;
pub mod cli;
pub mod constructions;
pub mod dimcalc;
pub mod error;
pub mod fiber;
pub mod group;
pub mod setrep;

pub use error::{Error, Result};
pub use group::{DimensionProfile, Element, GroupChart};
pub use setrep::{CellSet, Grid, Role, Side};
