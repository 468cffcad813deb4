//! Extremal and near-extremal set families and a parametric search over them.

pub mod collapse;
pub mod optimize;
pub mod random;
pub mod slab;
pub mod stability;
pub mod tube;

pub use collapse::{collapse_pair, CollapsePair};
pub use optimize::{minimize_product, BoxFamily, CollapseFamily, Family, MinimizeOptions, OptimizeResult, TubeRadiusFamily};
pub use random::{random_box_pair, random_box_union};
pub use slab::{slab, slab_report, SlabReport, SlabSpec};
pub use stability::{stability_pair, StabilityPair};
pub use tube::{quotient_distance, sl2_tube_measure, tube, tube_grid, TubeSpec};
