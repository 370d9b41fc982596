//! Spatial weights: queen contiguity and k-nearest-centroid neighbors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::geo::{distance, segment_distance};
use crate::ingest::Neighborhood;

/// Vertex snapping tolerance for contiguity, meters.
pub const SNAP_TOLERANCE_M: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightScheme {
    Queen,
    Knn(usize),
}

impl FromStr for WeightScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "queen" => Ok(WeightScheme::Queen),
            other => other
                .strip_prefix("knn:")
                .and_then(|k| k.parse().ok())
                .map(WeightScheme::Knn)
                .ok_or_else(|| format!("unknown weights scheme {other:?} (expected \"queen\" or \"knn:<k>\")")),
        }
    }
}

impl fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightScheme::Queen => f.write_str("queen"),
            WeightScheme::Knn(k) => write!(f, "knn:{k}"),
        }
    }
}

/// Sparse weights matrix: sorted neighbor lists with one weight per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeights {
    neighbors: Vec<Vec<usize>>,
    weights: Vec<Vec<f64>>,
    row_standardized: bool,
}

impl SpatialWeights {
    /// Binary weights from neighbor lists. Self-neighbors and duplicates
    /// are dropped and the lists sorted.
    pub fn from_neighbors(mut neighbors: Vec<Vec<usize>>) -> Result<Self, StatsError> {
        let n = neighbors.len();
        for (i, list) in neighbors.iter_mut().enumerate() {
            list.retain(|&j| j != i);
            list.sort_unstable();
            list.dedup();
            if let Some(&j) = list.last() {
                if j >= n {
                    return Err(StatsError::InvalidWeights(format!("neighbor index {j} out of range for n = {n}")));
                }
            }
        }
        let weights = neighbors.iter().map(|l| vec![1.0; l.len()]).collect();
        Ok(SpatialWeights {
            neighbors,
            weights,
            row_standardized: false,
        })
    }

    /// Scale each nonempty row to sum to one.
    pub fn row_standardize(mut self) -> Self {
        for row in &mut self.weights {
            let sum: f64 = row.iter().sum();
            if sum != 0.0 {
                row.iter_mut().for_each(|w| *w /= sum);
            }
        }
        self.row_standardized = true;
        self
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    pub fn is_row_standardized(&self) -> bool {
        self.row_standardized
    }

    pub fn is_isolate(&self, i: usize) -> bool {
        self.neighbors[i].is_empty()
    }

    /// Sum of all weights.
    pub fn s0(&self) -> f64 {
        self.weights.iter().flatten().sum()
    }

    /// `Σ_j w_ij · z_j`.
    pub fn lag(&self, i: usize, z: &[f64]) -> f64 {
        self.neighbors[i]
            .iter()
            .zip(&self.weights[i])
            .map(|(&j, &w)| w * z[j])
            .sum()
    }

    /// True when `j ∈ N(i)` ⇔ `i ∈ N(j)`.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n()).all(|i| self.neighbors[i].iter().all(|&j| self.neighbors[j].binary_search(&i).is_ok()))
    }
}

/// Build row-standardized weights for `hoods` under `scheme`.
pub fn build_weights(hoods: &[Neighborhood], scheme: WeightScheme) -> Result<SpatialWeights, StatsError> {
    let n = hoods.len();
    if n < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: n });
    }
    let neighbors = match scheme {
        WeightScheme::Queen => queen_neighbors(hoods),
        WeightScheme::Knn(k) => {
            if k == 0 || k >= n {
                return Err(StatsError::InvalidWeights(format!("knn requires 0 < k < n, got k = {k}, n = {n}")));
            }
            knn_neighbors(hoods, k)
        }
    };
    Ok(SpatialWeights::from_neighbors(neighbors)?.row_standardize())
}

fn queen_neighbors(hoods: &[Neighborhood]) -> Vec<Vec<usize>> {
    let n = hoods.len();
    let boxes: Vec<_> = hoods.iter().map(Neighborhood::bbox).collect();
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in (i + 1)..n {
            if boxes[i].intersects(&boxes[j], SNAP_TOLERANCE_M) && boundaries_touch(&hoods[i], &hoods[j]) {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    neighbors
}

fn boundaries_touch(a: &Neighborhood, b: &Neighborhood) -> bool {
    let segs = |h: &Neighborhood| -> Vec<_> {
        h.parts
            .iter()
            .flat_map(|p| p.rings())
            .flat_map(|r| r.segments())
            .collect()
    };
    let (sa, sb) = (segs(a), segs(b));
    sa.iter().any(|&(p, q)| {
        sb.iter().any(|&(r, s)| {
            // Cheap reject on segment bounding boxes first.
            let tol = SNAP_TOLERANCE_M;
            p.x.min(q.x) <= r.x.max(s.x) + tol
                && r.x.min(s.x) <= p.x.max(q.x) + tol
                && p.y.min(q.y) <= r.y.max(s.y) + tol
                && r.y.min(s.y) <= p.y.max(q.y) + tol
                && segment_distance(p, q, r, s) <= tol
        })
    })
}

fn knn_neighbors(hoods: &[Neighborhood], k: usize) -> Vec<Vec<usize>> {
    let centroids: Vec<_> = hoods.iter().map(Neighborhood::centroid).collect();
    (0..hoods.len())
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..hoods.len())
                .filter(|&j| j != i)
                .map(|j| (distance(centroids[i], centroids[j]), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}
