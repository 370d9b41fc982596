use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use resil_fuse::geo::PlanarPoint;
use resil_fuse::stats::{
    build_weights, global_morans_i, lisa, local_morans_i, permutation_p, LisaConfig, Normalization, Quadrant,
    SpatialWeights, WeightScheme,
};
use resil_fuse::toy::lattice;

fn queen(rows: usize, cols: usize) -> SpatialWeights {
    build_weights(&lattice(rows, cols, 50.0, PlanarPoint::new(0.0, 0.0)), WeightScheme::Queen).unwrap()
}

#[test]
fn two_by_two_block_of_highs_is_high_high() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut values: Vec<f64> = (0..25).map(|_| rng.sample(StandardNormal)).collect();
    let block = [6, 7, 11, 12];
    for i in block {
        values[i] += 10.0;
    }
    let config = LisaConfig {
        seed: 42,
        ..LisaConfig::default()
    };
    let obs = lisa(&values, &queen(5, 5), &config).unwrap();
    for i in block {
        assert_eq!(obs[i].quadrant, Quadrant::HH, "{i}: {:?}", obs[i]);
        assert!(obs[i].p_value <= 0.05);
    }
}

#[test]
fn affine_transform_leaves_local_i_unchanged() {
    let w = queen(4, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<f64> = (0..24).map(|_| rng.random_range(-3.0..3.0)).collect();
    let base = local_morans_i(&x, &w, Normalization::Anselin).unwrap();
    for (a, b) in [(2.5, -7.0), (-0.3, 100.0), (1e4, 1e-3)] {
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let other = local_morans_i(&y, &w, Normalization::Anselin).unwrap();
        for (p, q) in base.local_i.iter().zip(&other.local_i) {
            assert!((p - q).abs() < 1e-9, "{p} vs {q}");
        }
    }
    let g = global_morans_i(&x, &w).unwrap();
    let sum: f64 = base.local_i.iter().sum();
    assert!((sum - 24.0 * g).abs() < 1e-9);
}

/// Exact conditional p-value by enumerating every ordered assignment of the
/// other values to the neighbor slots.
fn exact_p(values: &[f64], w: &SpatialWeights, i: usize) -> f64 {
    let lm = local_morans_i(values, w, Normalization::Anselin).unwrap();
    let others: Vec<f64> = (0..values.len()).filter(|&j| j != i).map(|j| lm.z[j]).collect();
    let weights = w.weights(i);
    let target = lm.local_i[i].abs();
    let (mut hits, mut total) = (0u64, 0u64);
    let mut used = vec![false; others.len()];
    fn walk(
        depth: usize,
        lag: f64,
        weights: &[f64],
        others: &[f64],
        used: &mut [bool],
        check: &mut dyn FnMut(f64),
    ) {
        if depth == weights.len() {
            check(lag);
            return;
        }
        for j in 0..others.len() {
            if !used[j] {
                used[j] = true;
                walk(depth + 1, lag + weights[depth] * others[j], weights, others, used, check);
                used[j] = false;
            }
        }
    }
    let zi = lm.z[i] / lm.m2;
    walk(0, 0.0, weights, &others, &mut used, &mut |lag| {
        total += 1;
        if (zi * lag).abs() >= target * (1.0 - 1e-12) {
            hits += 1;
        }
    });
    hits as f64 / total as f64
}

#[test]
fn permutation_p_tracks_exact_enumeration() {
    let w = queen(2, 4);
    let values = [4.0, 3.5, 0.2, -1.0, 3.0, 2.0, -0.5, -2.5];
    let p = permutation_p(&values, &w, 9999, 11, Normalization::Anselin).unwrap();
    for (i, got) in p.iter().enumerate() {
        let exact = exact_p(&values, &w, i);
        assert!((got - exact).abs() < 0.02, "obs {i}: {got} vs exact {exact}");
    }
}

#[test]
fn knn_weights_feed_lisa() {
    let hoods = lattice(3, 4, 100.0, PlanarPoint::new(0.0, 0.0));
    let w = build_weights(&hoods, WeightScheme::Knn(3)).unwrap();
    assert!((0..12).all(|i| w.neighbors(i).len() == 3));
    let values: Vec<f64> = (0..12).map(|i| (i % 4) as f64).collect();
    let obs = lisa(&values, &w, &LisaConfig::default()).unwrap();
    assert!(obs.iter().all(|o| o.p_value >= 0.001 && o.quadrant != Quadrant::Isolate));
}
