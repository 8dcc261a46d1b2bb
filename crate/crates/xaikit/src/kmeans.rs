//! Lloyd's algorithm with k-means++ seeding, written for deterministic
//! seeded runs on small numeric datasets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squared distances after each assignment step.
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = sq_dist(point, &centers[0]);
    for (i, c) in centers.iter().enumerate().skip(1) {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    (best, best_d)
}

fn seed_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..points.len())].clone());
    while centers.len() < k {
        let dists: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = dists.iter().sum();
        if total <= 0.0 {
            // All remaining mass sits on existing centers; pick an unused
            // point deterministically if one exists.
            let next = points
                .iter()
                .find(|p| !centers.contains(p))
                .cloned()
                .unwrap_or_else(|| points[0].clone());
            centers.push(next);
            continue;
        }
        let mut target = rng.random_range(0.0..total);
        let mut chosen = points.len() - 1;
        for (i, d) in dists.iter().enumerate() {
            if target < *d {
                chosen = i;
                break;
            }
            target -= d;
        }
        centers.push(points[chosen].clone());
    }
    centers
}

/// Runs Lloyd's algorithm until the largest center shift drops below `tol`
/// or `max_iter` iterations elapse.
pub fn lloyd(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> KMeansResult {
    assert!(k >= 1 && k <= points.len(), "k must be in 1..=n_points");
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(points, k, &mut rng);
    let mut assignments = vec![0; points.len()];
    let mut sse_history = Vec::new();
    let mut iterations = 0;

    for _ in 0..max_iter {
        iterations += 1;
        let mut sse = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centers);
            assignments[i] = c;
            sse += d;
        }
        sse_history.push(sse);

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift = 0.0_f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue; // empty cluster keeps its center
            }
            let new_center: Vec<f64> =
                sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&new_center, &centers[c]).sqrt());
            centers[c] = new_center;
        }
        if shift < tol {
            break;
        }
    }

    // Final assignment against the converged centers.
    let mut sse = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (c, d) = nearest(p, &centers);
        assignments[i] = c;
        sse += d;
    }
    sse_history.push(sse);

    KMeansResult {
        centers,
        assignments,
        sse_history,
        iterations,
    }
}
