//! Curb segmentation: DBSCAN, comparison clusterers and the cross-frame
//! cluster merge.

mod alt;
mod curbs;
mod dbscan;

pub use alt::{alt_cluster, alt_method_by_name, AltMethod};
pub use curbs::{
    boundary_points, merge_clusters, temporal_associate, ClusterParams, CurbCluster,
    CurbClusterSet, MergeRule, PointTag,
};
pub use dbscan::{dbscan, dbscan_with, partition, relabel_by_first_appearance, NOISE};
