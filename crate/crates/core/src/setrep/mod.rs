//! Compact sets as unions of dyadic cells, their Haar measures, and
//! certified-outer / sampled-inner product sets.

mod cellset;
mod dense;
mod grid;
pub mod io;
mod kernel;

pub use cellset::{CellSet, DensitySource, Measure, Role, Side};
pub use dense::DenseBox;
pub use grid::{Grid, Packer};
pub use kernel::{product_set, product_set_inner, product_sets, product_sets_on, ProductOptions, ProductResult, ProductStats};
