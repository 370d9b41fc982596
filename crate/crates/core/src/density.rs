//! Gaussian kernel density layers and their fusion into social-capital
//! surfaces.
//!
//! Each structure contributes a 2-D Gaussian whose *peak* is its amplitude
//! `A = w_eff · C / max(P, p_floor)`: effective weight times capacity over
//! catchment population. Kernels are truncated beyond `truncation_sigmas · σ`
//! (4σ by default, where the kernel has fallen below 3.4e-4 of its peak).

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::catchment::CatchmentResult;
use crate::geo::PlanarPoint;
use crate::ingest::SocialStructure;
use crate::ontology::{CapitalKind, Ontology, OntologyError};
use crate::raster::{Grid, GridHeader, RasterError};

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("layer {layer:?}: {source}")]
    Misaligned {
        layer: String,
        #[source]
        source: RasterError,
    },
    #[error("{structures} structures but {catchments} catchment results")]
    LengthMismatch { structures: usize, catchments: usize },
    #[error("no layers to fuse")]
    NoLayers,
    #[error(transparent)]
    Ontology(#[from] OntologyError),
}

/// Kernel peak for a structure: `w_eff · C / max(P, p_floor)`.
pub fn amplitude(s: &SocialStructure, c: &CatchmentResult, ont: &Ontology) -> Result<f64, OntologyError> {
    let w = ont.effective_weight(s, c.ingroup_fraction)?;
    Ok(w * s.capacity / c.population.max(ont.population_floor))
}

/// One Gaussian kernel ready to render.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kernel {
    pub position: PlanarPoint,
    pub amplitude: f64,
    pub bandwidth: f64,
    pub kind: CapitalKind,
}

/// A kernel tagged with the layer it belongs to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlacedKernel {
    pub structure_id: String,
    pub layer: String,
    pub kernel: Kernel,
}

/// Amplitude, bandwidth, layer and capital kind for every structure, in
/// input order.
pub fn build_kernels(
    structures: &[SocialStructure],
    catchments: &[CatchmentResult],
    ont: &Ontology,
) -> Result<Vec<PlacedKernel>, DensityError> {
    if structures.len() != catchments.len() {
        return Err(DensityError::LengthMismatch {
            structures: structures.len(),
            catchments: catchments.len(),
        });
    }
    structures
        .iter()
        .zip(catchments)
        .map(|(s, c)| {
            let spec = ont.category(&s.category)?;
            Ok(PlacedKernel {
                structure_id: s.id.clone(),
                layer: spec.layer.clone(),
                kernel: Kernel {
                    position: s.position,
                    amplitude: amplitude(s, c, ont)?,
                    bandwidth: spec.bandwidth,
                    kind: ont.classify_capital(s, c.ingroup_fraction)?,
                },
            })
        })
        .collect()
}

/// Sum of truncated Gaussian kernels evaluated at every cell center.
///
/// Rows are rendered independently and every cell accumulates kernels in
/// slice order, so the output does not depend on the worker count.
pub fn render_kernels(kernels: &[Kernel], header: &GridHeader, truncation_sigmas: f64) -> Grid {
    let mut grid = Grid::zeros(*header);
    if header.is_empty() {
        return grid;
    }
    grid.values
        .par_chunks_mut(header.ncols)
        .enumerate()
        .for_each(|(row, cells)| {
            let y = header.cell_center(row, 0).y;
            for k in kernels {
                let cutoff = truncation_sigmas * k.bandwidth;
                let dy = y - k.position.y;
                if dy.abs() > cutoff {
                    continue;
                }
                let Some((_, cols)) = header.window(k.position, cutoff) else {
                    continue;
                };
                let two_var = 2.0 * k.bandwidth * k.bandwidth;
                let cut2 = cutoff * cutoff;
                for col in cols {
                    let dx = header.cell_center(row, col).x - k.position.x;
                    let d2 = dx * dx + dy * dy;
                    if d2 <= cut2 {
                        cells[col] += k.amplitude * (-d2 / two_var).exp();
                    }
                }
            }
        });
    grid
}

/// A per-layer density raster with its bridging and bonding parts.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityLayer {
    pub name: String,
    /// `bridging + bonding`, cell-wise.
    pub grid: Grid,
    pub bridging: Grid,
    pub bonding: Grid,
    pub structure_count: usize,
}

impl DensityLayer {
    pub fn header(&self) -> &GridHeader {
        &self.grid.header
    }
}

/// Render one layer. Bridging and bonding kernels are accumulated
/// separately and summed.
pub fn render_layer(name: &str, kernels: &[Kernel], header: &GridHeader, truncation_sigmas: f64) -> DensityLayer {
    let split = |kind| -> Vec<Kernel> { kernels.iter().filter(|k| k.kind == kind).copied().collect() };
    let bridging = render_kernels(&split(CapitalKind::Bridging), header, truncation_sigmas);
    let bonding = render_kernels(&split(CapitalKind::Bonding), header, truncation_sigmas);
    DensityLayer {
        name: name.to_string(),
        grid: add(&bridging, &bonding),
        bridging,
        bonding,
        structure_count: kernels.len(),
    }
}

/// One layer per ontology layer (sorted by name), including empty ones.
pub fn render_layers(kernels: &[PlacedKernel], ont: &Ontology, header: &GridHeader) -> Vec<DensityLayer> {
    ont.layers()
        .map(|layer| {
            let ks: Vec<Kernel> = kernels
                .iter()
                .filter(|k| k.layer == layer)
                .map(|k| k.kernel)
                .collect();
            render_layer(layer, &ks, header, ont.truncation_sigmas)
        })
        .collect()
}

fn add(a: &Grid, b: &Grid) -> Grid {
    Grid {
        header: a.header,
        values: a.values.iter().zip(&b.values).map(|(x, y)| x + y).collect(),
    }
}

/// Fused social-capital rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialCapitalSurface {
    pub total: Grid,
    pub bridging: Grid,
    pub bonding: Grid,
}

/// `total = Σ layer_weight · layer` cell-wise, with the bridging and bonding
/// sub-surfaces fused the same way from each layer's parts.
pub fn fuse(layers: &[DensityLayer], ont: &Ontology) -> Result<SocialCapitalSurface, DensityError> {
    let first = layers.first().ok_or(DensityError::NoLayers)?;
    let header = *first.header();
    for layer in layers {
        for g in [&layer.grid, &layer.bridging, &layer.bonding] {
            header
                .check_aligned(&g.header)
                .map_err(|source| DensityError::Misaligned {
                    layer: layer.name.clone(),
                    source,
                })?;
        }
    }
    let combine = |pick: fn(&DensityLayer) -> &Grid| -> Grid {
        let mut out = Grid::zeros(header);
        for layer in layers {
            let w = ont.layer_weight(&layer.name);
            for (o, v) in out.values.iter_mut().zip(&pick(layer).values) {
                *o += w * v;
            }
        }
        out
    };
    Ok(SocialCapitalSurface {
        total: combine(|l| &l.grid),
        bridging: combine(|l| &l.bridging),
        bonding: combine(|l| &l.bonding),
    })
}
