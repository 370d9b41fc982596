//! Zonal means of a surface over neighborhood polygons.

use crate::ingest::Neighborhood;
use crate::raster::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct ZonalMeans {
    /// Mean per neighborhood; `None` when no cell center falls inside.
    pub values: Vec<Option<f64>>,
    pub cell_counts: Vec<usize>,
}

impl ZonalMeans {
    /// Indices of neighborhoods that covered no cells.
    pub fn empty(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.is_none().then_some(i))
            .collect()
    }
}

/// Mean of surface cells whose centers fall inside each neighborhood.
///
/// Masked (nodata) cells are skipped. A cell belongs to at most one
/// neighborhood: the first in input order that contains its center.
pub fn aggregate(surface: &Grid, mask: Option<&[bool]>, hoods: &[Neighborhood]) -> ZonalMeans {
    let header = &surface.header;
    let mut assigned = vec![false; header.len()];
    let mut values = Vec::with_capacity(hoods.len());
    let mut cell_counts = Vec::with_capacity(hoods.len());
    for hood in hoods {
        let bbox = hood.bbox();
        let center = crate::geo::PlanarPoint::new((bbox.min.x + bbox.max.x) / 2.0, (bbox.min.y + bbox.max.y) / 2.0);
        let half = (bbox.max.x - bbox.min.x).max(bbox.max.y - bbox.min.y) / 2.0;
        let (mut sum, mut count) = (0.0, 0usize);
        if let Some((rows, cols)) = header.window(center, half) {
            for row in rows {
                for col in cols.clone() {
                    let idx = header.index(row, col);
                    if assigned[idx] || mask.is_some_and(|m| m[idx]) {
                        continue;
                    }
                    if hood.contains(header.cell_center(row, col)) {
                        assigned[idx] = true;
                        sum += surface.values[idx];
                        count += 1;
                    }
                }
            }
        }
        values.push((count > 0).then(|| sum / count as f64));
        cell_counts.push(count);
    }
    ZonalMeans { values, cell_counts }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{PlanarPoint, Polygon};
    use crate::raster::GridHeader;

    fn hood(id: i64, x0: f64, y0: f64, x1: f64, y1: f64) -> Neighborhood {
        Neighborhood {
            id,
            name: format!("h{id}"),
            parts: vec![Polygon::rect(PlanarPoint::new(x0, y0), PlanarPoint::new(x1, y1)).unwrap()],
        }
    }

    fn surface() -> Grid {
        Grid {
            header: GridHeader {
                ncols: 4,
                nrows: 2,
                xllcorner: 0.0,
                yllcorner: 0.0,
                cellsize: 1.0,
            },
            values: vec![1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0],
        }
    }

    #[test]
    fn mean_of_covered_cells() {
        let z = aggregate(&surface(), None, &[hood(1, 0.0, 0.0, 2.0, 2.0)]);
        assert_eq!(z.values, vec![Some(2.5)]);
        assert_eq!(z.cell_counts, vec![4]);
    }

    #[test]
    fn polygon_without_cells_is_empty() {
        let z = aggregate(&surface(), None, &[hood(1, 0.1, 0.1, 0.4, 0.4)]);
        assert_eq!(z.values, vec![None]);
        assert_eq!(z.empty(), vec![0]);
    }

    #[test]
    fn shared_edge_center_goes_to_first() {
        // Both polygons have x = 1.5 on their boundary, where column 1
        // centers sit.
        let hoods = [hood(1, 0.0, 0.0, 1.5, 2.0), hood(2, 1.5, 0.0, 4.0, 2.0)];
        let z = aggregate(&surface(), None, &hoods);
        assert_eq!(z.cell_counts, vec![4, 4]);
        assert_eq!(z.values[0], Some((1.0 + 2.0 + 3.0 + 4.0) / 4.0));
        assert_eq!(z.values[1], Some((5.0 + 6.0 + 7.0 + 8.0) / 4.0));
    }

    #[test]
    fn masked_cells_skipped() {
        let mask = [true, false, false, false, false, false, false, false];
        let z = aggregate(&surface(), Some(&mask), &[hood(1, 0.0, 0.0, 2.0, 2.0)]);
        assert_eq!(z.values, vec![Some(3.0)]);
    }
}
