//! Manual cluster delineation on layouts and cluster-level bias statistics.

mod composition;
mod consistency;
mod polygon;

pub use composition::{
    cluster_composition, Composition, CompositionField, CompositionRow, DOMINANCE_THRESHOLD, MISSING_CATEGORY,
};
pub use consistency::{
    cross_region_consistency, independence_expectation, observed_ratio, ConsistencyCounts, ConsistencyReport,
    RegionRate,
};
pub use polygon::{
    assign_clusters, point_in_polygon, read_polygons_json, validate_polygons, write_polygons_json, ClusterLabeling,
    Polygon, REST_LABEL,
};
