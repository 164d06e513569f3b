//! Delaunay tetrahedralization, its Voronoi dual and the medial-axis filter.

mod filter;
mod mesh;
pub mod predicates;
mod voronoi;

pub use filter::{delaunay_filter, delaunay_filter_traced, DelaunayOutcome, DelaunayParams, DelaunayTrace};
pub use mesh::{tetrahedralize, TetraMesh, Tetrahedron, EPS_GEOM};
pub use voronoi::{
    circumcenter, circumspheres, medial_axis, voronoi_subgraph, voronoi_subgraph_with, MedialAxis,
    RadiusPolicy, VoronoiSubgraph, VoronoiVertex,
};
