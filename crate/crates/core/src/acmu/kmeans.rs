use rand::Rng as _;

use crate::rng::Rng;

pub const MAX_ITER: usize = 100;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(p, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // all remaining points coincide with a centre; take unused indices
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

/// Moves the worst-fitting point of a multi-member cluster into each empty
/// cluster so every label stays occupied.
fn fill_empty(points: &[Vec<f64>], centers: &[Vec<f64>], labels: &mut [usize], k: usize) {
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let donor = (0..points.len())
            .filter(|&i| sizes[labels[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(&points[a], &centers[labels[a]]);
                let db = sq_dist(&points[b], &centers[labels[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("n >= k guarantees a multi-member cluster");
        labels[donor] = empty;
    }
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> (Vec<usize>, f64) {
    let dim = points[0].len();
    let mut centers = plus_plus(points, k, rng);
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    fill_empty(points, &centers, &mut labels, k);
    for _ in 0..MAX_ITER {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for ((c, s), &cnt) in centers.iter_mut().zip(sums).zip(&counts) {
            *c = s.into_iter().map(|v| v / cnt as f64).collect();
        }
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        fill_empty(points, &centers, &mut next, k);
        if next == labels {
            break;
        }
        labels = next;
    }
    let inertia = points.iter().zip(&labels).map(|(p, &l)| sq_dist(p, &centers[l])).sum();
    (labels, inertia)
}

/// Renames clusters in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

/// Euclidean k-means with k-means++ seeding and `restarts` independent
/// initialisations; the lowest-inertia labelling wins (earliest on ties).
/// Every one of the `k` clusters is non-empty. Requires `1 <= k <= n`.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, rng: &mut Rng) -> Vec<usize> {
    assert!(k >= 1 && k <= points.len(), "k must lie in [1, n]");
    let mut best: Option<(Vec<usize>, f64)> = None;
    for _ in 0..restarts.max(1) {
        let (labels, inertia) = lloyd(points, k, rng);
        if best.as_ref().is_none_or(|(_, b)| inertia < *b) {
            best = Some((labels, inertia));
        }
    }
    canonical_labels(&best.expect("at least one restart").0)
}
