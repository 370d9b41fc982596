//! Ontology-weighted kernel density fusion of urban social infrastructure,
//! with neighborhood-level Local Moran's I cluster detection.
//!
//! The crate is organised as the pipeline runs:
//!
//! - [`geo`] projection, polygons and point-in-polygon;
//! - [`raster`] ESRI ASCII grids, population rasters, heatmaps;
//! - [`ontology`] category weights, bandwidths and capital kinds;
//! - [`ingest`] GeoJSON structures and neighborhoods;
//! - [`catchment`] population within reach of each structure;
//! - [`density`] Gaussian kernels, per-layer surfaces and fusion;
//! - [`stats`] zonal means, spatial weights and LISA;
//! - [`output`] CSV, GeoJSON and the markdown report;
//! - [`pipeline`] configuration and the staged batch run.

pub mod catchment;
pub mod density;
pub mod geo;
pub mod ingest;
pub mod ontology;
pub mod output;
pub mod pipeline;
pub mod raster;
pub mod stats;
pub mod toy;

pub use catchment::{catchment_population, catchments, CatchmentResult};
pub use density::{amplitude, fuse, render_kernels, Kernel, SocialCapitalSurface};
pub use geo::{GeoPoint, PlanarPoint, Polygon, Projection};
pub use ingest::{Access, Neighborhood, SocialStructure};
pub use ontology::{CapitalKind, Ontology};
pub use pipeline::{run, PipelineError, RunConfig};
pub use raster::{AsciiGrid, Grid, GridHeader, PopulationGroupRaster, PopulationRaster};
pub use stats::{build_weights, global_morans_i, lisa, local_morans_i, LisaConfig, Quadrant, SpatialWeights, WeightScheme};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/inputs.md")]
    mod inputs {}
    #[doc = include_str!("../../../book/src/ontology.md")]
    mod ontology {}
    #[doc = include_str!("../../../book/src/catchments.md")]
    mod catchments {}
    #[doc = include_str!("../../../book/src/density.md")]
    mod density {}
    #[doc = include_str!("../../../book/src/lisa.md")]
    mod lisa {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
