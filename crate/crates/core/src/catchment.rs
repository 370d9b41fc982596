//! Catchment populations: the population living within a radial buffer of
//! each structure, and the share of that population belonging to the
//! structure's group.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geo::PlanarPoint;
use crate::ingest::SocialStructure;
use crate::ontology::{Ontology, OntologyError};
use crate::raster::{PopulationGroupRaster, PopulationRaster, RasterError};

#[derive(Debug, Error)]
pub enum CatchmentError {
    #[error("group raster {group:?}: {source}")]
    Misaligned {
        group: String,
        #[source]
        source: RasterError,
    },
    #[error("catchment radius must be > 0, got {0}")]
    InvalidRadius(f64),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatchmentResult {
    pub structure_id: String,
    pub population: f64,
    /// Share of `population` in the structure's group. 1.0 when no group
    /// raster applies; 0.0 by convention when the catchment is empty.
    pub ingroup_fraction: f64,
    pub cell_count: usize,
    /// Set when a group raster applies but the catchment holds nobody.
    pub empty_group_catchment: bool,
}

/// Integrate population over every non-nodata cell whose center lies within
/// `radius` meters of the structure.
pub fn catchment_population(
    s: &SocialStructure,
    pop: &PopulationRaster,
    radius: f64,
    group: Option<&PopulationGroupRaster>,
) -> Result<CatchmentResult, CatchmentError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(CatchmentError::InvalidRadius(radius));
    }
    if let Some(g) = group {
        pop.header()
            .check_aligned(g.header())
            .map_err(|source| CatchmentError::Misaligned {
                group: g.group.clone(),
                source,
            })?;
    }
    let (population, ingroup, cell_count) = integrate(s.position, pop, radius, group);
    let (ingroup_fraction, empty_group_catchment) = match group {
        None => (1.0, false),
        Some(_) if population > 0.0 => ((ingroup / population).clamp(0.0, 1.0), false),
        Some(_) => (0.0, true),
    };
    Ok(CatchmentResult {
        structure_id: s.id.clone(),
        population,
        ingroup_fraction,
        cell_count,
        empty_group_catchment,
    })
}

fn integrate(
    center: PlanarPoint,
    pop: &PopulationRaster,
    radius: f64,
    group: Option<&PopulationGroupRaster>,
) -> (f64, f64, usize) {
    let header = pop.header();
    let Some((rows, cols)) = header.window(center, radius) else {
        return (0.0, 0.0, 0);
    };
    let r2 = radius * radius;
    let (mut total, mut ingroup, mut cells) = (0.0, 0.0, 0);
    for row in rows {
        for col in cols.clone() {
            let c = header.cell_center(row, col);
            let (dx, dy) = (c.x - center.x, c.y - center.y);
            if dx * dx + dy * dy > r2 {
                continue;
            }
            let idx = header.index(row, col);
            if pop.is_nodata(idx) {
                continue;
            }
            let p = pop.population(idx);
            total += p;
            if let Some(g) = group {
                ingroup += p * g.fraction(idx);
            }
            cells += 1;
        }
    }
    (total, ingroup, cells)
}

/// Catchments for every structure, in input order, using each category's
/// catchment radius and the group raster matching the structure's group.
pub fn catchments(
    structures: &[SocialStructure],
    ontology: &Ontology,
    pop: &PopulationRaster,
    groups: &[PopulationGroupRaster],
) -> Result<Vec<CatchmentResult>, CatchmentError> {
    structures
        .par_iter()
        .map(|s| {
            let radius = ontology.category(&s.category)?.catchment_radius;
            let group = s
                .group
                .as_deref()
                .and_then(|g| groups.iter().find(|r| r.group == g));
            catchment_population(s, pop, radius, group)
        })
        .collect()
}

/// Diagnostic CSV: `structure_id,population,ingroup_fraction,cell_count,flags`.
pub fn catchments_csv(results: &[CatchmentResult], population_floor: f64) -> String {
    let mut out = String::from("structure_id,population,ingroup_fraction,cell_count,flags\n");
    for r in results {
        let mut flags = Vec::new();
        if r.population < population_floor {
            flags.push("population_floor");
        }
        if r.empty_group_catchment {
            flags.push("empty_group_catchment");
        }
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            crate::output::csv_field(&r.structure_id),
            r.population,
            r.ingroup_fraction,
            r.cell_count,
            flags.join(";")
        );
    }
    out
}
