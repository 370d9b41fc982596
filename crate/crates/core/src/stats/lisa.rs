//! Local and global Moran's I with conditional permutation inference.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::weights::SpatialWeights;
use super::StatsError;

/// Scaling applied to `z_i · Σ_j w_ij z_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by `m2 = Σ z_k² / n`. Local values then sum to `n · I_global`
    /// under row-standardized weights.
    #[default]
    Anselin,
    /// No variance scaling.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quadrant {
    /// High value among high neighbors ("stable").
    HH,
    /// Low value among low neighbors ("feral").
    LL,
    LH,
    HL,
    /// Not significant.
    NS,
    /// No neighbors.
    #[serde(rename = "ISOLATE")]
    Isolate,
}

impl Quadrant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Quadrant::HH => "HH",
            Quadrant::LL => "LL",
            Quadrant::LH => "LH",
            Quadrant::HL => "HL",
            Quadrant::NS => "NS",
            Quadrant::Isolate => "ISOLATE",
        }
    }

    pub fn is_significant(&self) -> bool {
        matches!(self, Quadrant::HH | Quadrant::LL | Quadrant::LH | Quadrant::HL)
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Quadrant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "HH" => Quadrant::HH,
            "LL" => Quadrant::LL,
            "LH" => Quadrant::LH,
            "HL" => Quadrant::HL,
            "NS" => Quadrant::NS,
            "ISOLATE" => Quadrant::Isolate,
            other => return Err(format!("unknown quadrant {other:?}")),
        })
    }
}

/// Per-observation deviations, spatial lags and local statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMoran {
    pub z: Vec<f64>,
    pub lag: Vec<f64>,
    pub local_i: Vec<f64>,
    /// `Σ z_k² / n`.
    pub m2: f64,
}

fn check_inputs(values: &[f64], w: &SpatialWeights) -> Result<(), StatsError> {
    if values.len() != w.n() {
        return Err(StatsError::LengthMismatch {
            values: values.len(),
            weights: w.n(),
        });
    }
    if values.len() < 3 {
        return Err(StatsError::TooFewObservations {
            needed: 3,
            got: values.len(),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

fn deviations(values: &[f64]) -> (Vec<f64>, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let m2 = z.iter().map(|d| d * d).sum::<f64>() / n;
    (z, m2)
}

fn scale(norm: Normalization, m2: f64) -> f64 {
    match norm {
        Normalization::Anselin if m2 > 0.0 => 1.0 / m2,
        Normalization::Anselin => 0.0,
        Normalization::Raw => 1.0,
    }
}

/// `I_i = (z_i / m2) · Σ_j w_ij z_j` with `z = x − x̄`.
pub fn local_morans_i(values: &[f64], w: &SpatialWeights, norm: Normalization) -> Result<LocalMoran, StatsError> {
    check_inputs(values, w)?;
    let (z, m2) = deviations(values);
    let s = scale(norm, m2);
    let lag: Vec<f64> = (0..z.len()).map(|i| w.lag(i, &z)).collect();
    let local_i = z.iter().zip(&lag).map(|(zi, li)| s * zi * li).collect();
    Ok(LocalMoran { z, lag, local_i, m2 })
}

/// `I = (n / S0) · Σ_ij w_ij z_i z_j / Σ z_k²`; zero when all deviations
/// vanish.
pub fn global_morans_i(values: &[f64], w: &SpatialWeights) -> Result<f64, StatsError> {
    check_inputs(values, w)?;
    let (z, _) = deviations(values);
    let denom: f64 = z.iter().map(|d| d * d).sum();
    let s0 = w.s0();
    if denom == 0.0 || s0 == 0.0 {
        return Ok(0.0);
    }
    let cross: f64 = (0..z.len()).map(|i| z[i] * w.lag(i, &z)).sum();
    Ok(z.len() as f64 / s0 * cross / denom)
}

/// RNG for observation `index`: the run seed picks the key, the index picks
/// the stream, so draws do not depend on evaluation order.
fn observation_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Two-sided conditional permutation pseudo p-values.
///
/// For each observation `i`, `z_i` stays fixed while `n_perm` random draws
/// (without replacement) of the other `n − 1` deviations fill its neighbor
/// slots. `p = (#{|I_perm| ≥ |I_obs|} + 1) / (n_perm + 1)`.
pub fn permutation_p(
    values: &[f64],
    w: &SpatialWeights,
    n_perm: usize,
    seed: u64,
    norm: Normalization,
) -> Result<Vec<f64>, StatsError> {
    if n_perm < 99 {
        return Err(StatsError::TooFewPermutations(n_perm));
    }
    let observed = local_morans_i(values, w, norm)?;
    let n = values.len();
    if observed.m2 == 0.0 {
        return Ok(vec![1.0; n]);
    }
    let s = scale(norm, observed.m2);
    let z = &observed.z;
    let p = (0..n)
        .into_par_iter()
        .map(|i| {
            if w.is_isolate(i) {
                return 1.0;
            }
            let weights = w.weights(i);
            let k = weights.len();
            let others: Vec<f64> = z.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| *v).collect();
            let mut slots: Vec<usize> = (0..others.len()).collect();
            let mut rng = observation_rng(seed, i);
            let target = observed.local_i[i].abs();
            let zi = z[i];
            let mut extreme = 0usize;
            for _ in 0..n_perm {
                // Partial Fisher-Yates: the first k slots become a uniform
                // ordered sample without replacement.
                for t in 0..k {
                    let j = rng.random_range(t..slots.len());
                    slots.swap(t, j);
                }
                let lag: f64 = weights.iter().zip(&slots[..k]).map(|(wij, &j)| wij * others[j]).sum();
                if (s * zi * lag).abs() >= target {
                    extreme += 1;
                }
            }
            (extreme + 1) as f64 / (n_perm + 1) as f64
        })
        .collect();
    Ok(p)
}

/// Quadrant label for one observation. Significance is `p ≤ alpha`.
pub fn classify(z: f64, lag: f64, p: f64, alpha: f64) -> Quadrant {
    if p > alpha || z == 0.0 || lag == 0.0 {
        return Quadrant::NS;
    }
    match (z > 0.0, lag > 0.0) {
        (true, true) => Quadrant::HH,
        (false, false) => Quadrant::LL,
        (false, true) => Quadrant::LH,
        (true, false) => Quadrant::HL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LisaConfig {
    pub n_perm: usize,
    pub seed: u64,
    pub alpha: f64,
    pub normalization: Normalization,
    /// Divide `alpha` by the number of observations.
    pub bonferroni: bool,
}

impl Default for LisaConfig {
    fn default() -> Self {
        LisaConfig {
            n_perm: 999,
            seed: 0,
            alpha: 0.05,
            normalization: Normalization::Anselin,
            bonferroni: false,
        }
    }
}

impl LisaConfig {
    pub fn effective_alpha(&self, n: usize) -> f64 {
        if self.bonferroni {
            self.alpha / n as f64
        } else {
            self.alpha
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LisaObservation {
    pub value: f64,
    pub z: f64,
    pub lag: f64,
    pub local_i: f64,
    pub p_value: f64,
    pub quadrant: Quadrant,
}

/// Full LISA run: local statistics, permutation p-values and quadrants.
pub fn lisa(values: &[f64], w: &SpatialWeights, config: &LisaConfig) -> Result<Vec<LisaObservation>, StatsError> {
    if !(config.alpha > 0.0 && config.alpha < 1.0) {
        return Err(StatsError::InvalidAlpha(config.alpha));
    }
    let local = local_morans_i(values, w, config.normalization)?;
    let p = permutation_p(values, w, config.n_perm, config.seed, config.normalization)?;
    let alpha = config.effective_alpha(values.len());
    Ok((0..values.len())
        .map(|i| LisaObservation {
            value: values[i],
            z: local.z[i],
            lag: local.lag[i],
            local_i: local.local_i[i],
            p_value: p[i],
            quadrant: if w.is_isolate(i) {
                Quadrant::Isolate
            } else {
                classify(local.z[i], local.lag[i], p[i], alpha)
            },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring4() -> SpatialWeights {
        SpatialWeights::from_neighbors(vec![vec![1, 3], vec![0, 2], vec![1, 3], vec![2, 0]])
            .unwrap()
            .row_standardize()
    }

    #[test]
    fn ring_local_and_global() {
        let w = ring4();
        let lm = local_morans_i(&[3.0, 1.0, -1.0, -3.0], &w, Normalization::Anselin).unwrap();
        assert_eq!(lm.m2, 5.0);
        assert_eq!(lm.lag, vec![-1.0, 1.0, -1.0, 1.0]);
        let expected = [-0.6, 0.2, 0.2, -0.6];
        for (got, want) in lm.local_i.iter().zip(expected) {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
        let g = global_morans_i(&[3.0, 1.0, -1.0, -3.0], &w).unwrap();
        assert!((g + 0.2).abs() < 1e-15);
        assert!((lm.local_i.iter().sum::<f64>() - 4.0 * g).abs() < 1e-12);
    }

    #[test]
    fn raw_normalization_omits_m2() {
        let lm = local_morans_i(&[3.0, 1.0, -1.0, -3.0], &ring4(), Normalization::Raw).unwrap();
        assert_eq!(lm.local_i, vec![-3.0, 1.0, 1.0, -3.0]);
    }

    #[test]
    fn scaled_values_give_identical_local_i() {
        let w = ring4();
        let a = local_morans_i(&[3.0, 1.0, -1.0, -3.0], &w, Normalization::Anselin).unwrap();
        let b = local_morans_i(&[30.0, 10.0, -10.0, -30.0], &w, Normalization::Anselin).unwrap();
        for (x, y) in a.local_i.iter().zip(&b.local_i) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_values_are_degenerate() {
        let w = ring4();
        let v = [2.0; 4];
        assert!(local_morans_i(&v, &w, Normalization::Anselin).unwrap().local_i.iter().all(|i| *i == 0.0));
        assert_eq!(global_morans_i(&v, &w).unwrap(), 0.0);
        assert_eq!(permutation_p(&v, &w, 99, 1, Normalization::Anselin).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn checkerboard_on_four_cycle() {
        let g = global_morans_i(&[1.0, -1.0, 1.0, -1.0], &ring4()).unwrap();
        assert!((g + 1.0).abs() < 1e-15);
    }

    #[test]
    fn input_validation() {
        let w = ring4();
        assert!(matches!(
            local_morans_i(&[1.0, 2.0], &w, Normalization::Anselin),
            Err(StatsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            permutation_p(&[1.0, 2.0, 3.0, 4.0], &w, 98, 0, Normalization::Anselin),
            Err(StatsError::TooFewPermutations(98))
        ));
    }

    #[test]
    fn p_floor_and_bounds() {
        let w = ring4();
        let p = permutation_p(&[3.0, 1.0, -1.0, -3.0], &w, 999, 42, Normalization::Anselin).unwrap();
        assert!(p.iter().all(|x| (0.001..=1.0).contains(x)));
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(2.0, 1.5, 0.001, 0.001), Quadrant::HH);
        assert_eq!(classify(-1.0, -0.5, 0.0005, 0.001), Quadrant::LL);
        assert_eq!(classify(1.0, -1.0, 0.2, 0.05), Quadrant::NS);
        assert_eq!(classify(-1.0, 1.0, 0.01, 0.05), Quadrant::LH);
        assert_eq!(classify(1.0, -1.0, 0.01, 0.05), Quadrant::HL);
        assert_eq!(classify(0.0, 1.0, 0.001, 0.05), Quadrant::NS);
    }

    #[test]
    fn isolates_labelled() {
        let w = SpatialWeights::from_neighbors(vec![vec![1], vec![0, 2], vec![1], vec![]])
            .unwrap()
            .row_standardize();
        let out = lisa(&[1.0, 2.0, 3.0, 9.0], &w, &LisaConfig::default()).unwrap();
        assert_eq!(out[3].quadrant, Quadrant::Isolate);
        assert_eq!(out[3].p_value, 1.0);
    }

    #[test]
    fn quadrant_round_trip() {
        for q in [Quadrant::HH, Quadrant::LL, Quadrant::LH, Quadrant::HL, Quadrant::NS, Quadrant::Isolate] {
            assert_eq!(q.as_str().parse::<Quadrant>().unwrap(), q);
        }
    }
}
