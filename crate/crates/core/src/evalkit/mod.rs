//! Overlap and surface metrics, aggregation, and confusion overlays.

pub mod aggregate;
pub mod overlap;
pub mod overlay;
pub mod records;
pub mod surface;

pub use aggregate::{aggregate, mean_std, AggregateRow, METRICS};
pub use overlap::{confusion, dsc, jsc, Confusion};
pub use overlay::{overlay, FALSE_NEGATIVE, FALSE_POSITIVE, TRUE_POSITIVE};
pub use records::{evaluate_pair, read_metrics_csv, write_metrics_csv, MetricRecord};
pub use surface::{
    diagonal, hausdorff, mad, surface_metrics, surface_points, DegenerateFlag, SurfaceDistance, SurfaceMetrics,
};
