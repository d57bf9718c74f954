//! Weighted Lloyd's algorithm with k-means++ seeding and restarts.
//!
//! Identical input points are merged into one weighted point first; binary
//! rhythm clips repeat heavily, so this shrinks the work by orders of
//! magnitude without changing the objective.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::nearest;
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Stop once an iteration improves WCSS by no more than this.
    pub tol: f64,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 8,
            seed: 0,
            max_iter: 300,
            tol: 0.0,
            restarts: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub counts: Vec<u64>,
    /// Cluster of each input point.
    pub labels: Vec<usize>,
    pub wcss: f64,
    pub iterations: usize,
    /// WCSS after seeding and after every Lloyd iteration of the chosen run.
    pub wcss_history: Vec<f64>,
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

struct Weighted {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// unique index of each original point
    origin: Vec<usize>,
}

fn total_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

fn dedupe(points: &[Vec<f64>]) -> Weighted {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| total_cmp(&points[a], &points[b]));
    let mut unique: Vec<Vec<f64>> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut origin = vec![0; points.len()];
    for i in order {
        if unique.last().is_none_or(|u| total_cmp(u, &points[i]).is_ne()) {
            unique.push(points[i].clone());
            weights.push(0.0);
        }
        *weights.last_mut().unwrap() += 1.0;
        origin[i] = unique.len() - 1;
    }
    Weighted {
        points: unique,
        weights,
        origin,
    }
}

fn wcss(data: &Weighted, centroids: &[Vec<f64>], labels: &[usize]) -> f64 {
    data.points
        .iter()
        .zip(&data.weights)
        .zip(labels)
        .map(|((p, w), &l)| w * squared_distance(p, &centroids[l]))
        .sum()
}

fn assign_all(data: &Weighted, centroids: &[Vec<f64>]) -> Vec<usize> {
    data.points.iter().map(|p| nearest(centroids, p)).collect()
}

fn seed_plus_plus(data: &Weighted, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let pick = |scores: &[f64], rng: &mut ChaCha8Rng| -> usize {
        let total: f64 = scores.iter().sum();
        let mut target = rng.gen::<f64>() * total;
        for (i, &s) in scores.iter().enumerate() {
            if s > 0.0 {
                if target < s {
                    return i;
                }
                target -= s;
            }
        }
        scores.iter().rposition(|&s| s > 0.0).unwrap()
    };
    // Greedy variant: draw several candidates per step and keep the one that
    // lowers the seeding potential most.
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![data.points[pick(&data.weights, rng)].clone()];
    let mut d2: Vec<f64> = data.points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let scores: Vec<f64> = d2.iter().zip(&data.weights).map(|(d, w)| d * w).collect();
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let c = pick(&scores, rng);
            let next: Vec<f64> = d2
                .iter()
                .zip(&data.points)
                .map(|(d, p)| d.min(squared_distance(p, &data.points[c])))
                .collect();
            let potential: f64 = next.iter().zip(&data.weights).map(|(d, w)| d * w).sum();
            if best.as_ref().is_none_or(|(bp, _, _)| potential < *bp) {
                best = Some((potential, c, next));
            }
        }
        let (_, c, next) = best.unwrap();
        d2 = next;
        centroids.push(data.points[c].clone());
    }
    centroids
}

struct Run {
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    wcss: f64,
    iterations: usize,
    history: Vec<f64>,
}

fn lloyd(data: &Weighted, mut centroids: Vec<Vec<f64>>, max_iter: usize, tol: f64) -> Run {
    let k = centroids.len();
    let dim = data.points[0].len();
    let mut labels = assign_all(data, &centroids);
    let mut current = wcss(data, &centroids, &labels);
    let mut history = vec![current];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        // Repair empty clusters by moving in the worst-fit point of a cluster
        // that can spare it.
        for j in 0..k {
            if labels.contains(&j) {
                continue;
            }
            let mut sizes = vec![0usize; k];
            for &l in &labels {
                sizes[l] += 1;
            }
            let donor = (0..data.points.len())
                .filter(|&i| sizes[labels[i]] > 1)
                .map(|i| (i, squared_distance(&data.points[i], &centroids[labels[i]])))
                .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                });
            if let Some((i, _)) = donor {
                labels[i] = j;
                centroids[j] = data.points[i].clone();
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut mass = vec![0.0; k];
        for ((p, &w), &l) in data.points.iter().zip(&data.weights).zip(&labels) {
            mass[l] += w;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += w * x;
            }
        }
        for j in 0..k {
            if mass[j] > 0.0 {
                centroids[j] = sums[j].iter().map(|s| s / mass[j]).collect();
            }
        }
        let next_labels = assign_all(data, &centroids);
        let next = wcss(data, &centroids, &next_labels);
        debug_assert!(
            next <= current * (1.0 + 1e-12) + 1e-12,
            "Lloyd iteration increased WCSS: {current} -> {next}"
        );
        let stable = next_labels == labels;
        labels = next_labels;
        let improvement = current - next;
        current = next;
        history.push(current);
        if stable || improvement <= tol && improvement > 0.0 && tol > 0.0 {
            break;
        }
    }
    Run {
        centroids,
        labels,
        wcss: current,
        iterations,
        history,
    }
}

fn finish(data: &Weighted, run: Run) -> KMeansResult {
    let k = run.centroids.len();
    let mut counts = vec![0u64; k];
    for (&l, &w) in run.labels.iter().zip(&data.weights) {
        counts[l] += w as u64;
    }
    KMeansResult {
        labels: data.origin.iter().map(|&u| run.labels[u]).collect(),
        centroids: run.centroids,
        counts,
        wcss: run.wcss,
        iterations: run.iterations,
        wcss_history: run.history,
    }
}

fn validate(points: &[Vec<f64>], k: usize) -> Result<Weighted> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if points.len() < k {
        return Err(Error::invalid(format!("{} clips is fewer than k = {k}", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points have differing dimensions".into()));
    }
    let data = dedupe(points);
    if data.points.len() < k {
        return Err(Error::invalid(format!(
            "only {} distinct clips, cannot form k = {k} distinct centroids",
            data.points.len()
        )));
    }
    Ok(data)
}

/// Restarted k-means++/Lloyd. Deterministic for a given seed regardless of
/// `exec`. Centroids are returned ordered by decreasing cluster population.
pub fn kmeans(points: &[Vec<f64>], config: &KMeansConfig, exec: Exec) -> Result<KMeansResult> {
    let data = validate(points, config.k)?;
    let runs = exec.map_range(config.restarts.max(1), |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(r as u64);
        let init = seed_plus_plus(&data, config.k, &mut rng);
        lloyd(&data, init, config.max_iter, config.tol)
    });
    let mut best = runs
        .into_iter()
        .reduce(|a, b| if b.wcss < a.wcss { b } else { a })
        .expect("at least one restart");

    // Reorder by population and settle again so labels agree with the
    // nearest-centroid rule (ties -> lowest index) under the final order.
    for _ in 0..8 {
        let mut mass = vec![0.0; config.k];
        for (&l, &w) in best.labels.iter().zip(&data.weights) {
            mass[l] += w;
        }
        let mut order: Vec<usize> = (0..config.k).collect();
        order.sort_by(|&a, &b| {
            mass[b]
                .total_cmp(&mass[a])
                .then_with(|| total_cmp(&best.centroids[a], &best.centroids[b]))
        });
        if order.iter().enumerate().all(|(i, &j)| i == j) && assign_all(&data, &best.centroids) == best.labels {
            break;
        }
        let reordered: Vec<Vec<f64>> = order.iter().map(|&j| best.centroids[j].clone()).collect();
        let mut settled = lloyd(&data, reordered, config.max_iter, config.tol);
        let mut history = std::mem::take(&mut best.history);
        history.extend(settled.history.drain(1..));
        settled.history = history;
        settled.iterations += best.iterations;
        best = settled;
    }
    Ok(finish(&data, best))
}

/// A single Lloyd run from explicit initial centroids.
pub fn kmeans_from(points: &[Vec<f64>], init: Vec<Vec<f64>>, config: &KMeansConfig) -> KMeansResult {
    let data = dedupe(points);
    finish(&data, lloyd(&data, init, config.max_iter, config.tol))
}

/// The point farthest from its nearest centroid.
pub(crate) fn worst_fit(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> Vec<f64> {
    let mut best = (0, -1.0);
    for (i, p) in points.iter().enumerate() {
        let d = squared_distance(p, &centroids[nearest(centroids, p)]);
        if d > best.1 {
            best = (i, d);
        }
    }
    points[best.0].clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    fn bits(s: &str) -> Vec<f64> {
        s.bytes().map(|b| (b - b'0') as f64).collect()
    }

    fn cfg(k: usize, seed: u64) -> KMeansConfig {
        KMeansConfig {
            k,
            seed,
            ..Default::default()
        }
    }

    /// Exhaustive optimum over all k^n labelings (oracle).
    pub(crate) fn brute_force_wcss(points: &[Vec<f64>], k: usize) -> f64 {
        let n = points.len();
        let dim = points[0].len();
        let mut best = f64::INFINITY;
        let mut labels = vec![0usize; n];
        loop {
            let mut total = 0.0;
            for j in 0..k {
                let members: Vec<&Vec<f64>> = points.iter().zip(&labels).filter(|(_, &l)| l == j).map(|(p, _)| p).collect();
                if members.is_empty() {
                    continue;
                }
                let mean: Vec<f64> = (0..dim).map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64).collect();
                total += members.iter().map(|p| squared_distance(p, &mean)).sum::<f64>();
            }
            best = best.min(total);
            let mut i = 0;
            loop {
                if i == n {
                    return best;
                }
                labels[i] += 1;
                if labels[i] < k {
                    break;
                }
                labels[i] = 0;
                i += 1;
            }
        }
    }

    #[test]
    fn identical_clips_single_cluster() {
        let pts = vec![bits("1010"); 6];
        let r = kmeans(&pts, &cfg(1, 0), Exec::Sequential).unwrap();
        assert_eq!(r.centroids, vec![bits("1010")]);
        assert_eq!(r.wcss, 0.0);
    }

    #[test]
    fn separated_duplicates() {
        let mut pts = vec![bits("0000"); 5];
        pts.extend(vec![bits("1111"); 3]);
        let r = kmeans(&pts, &cfg(2, 3), Exec::Sequential).unwrap();
        assert_eq!(r.centroids, vec![bits("0000"), bits("1111")]);
        assert_eq!(r.counts, vec![5, 3]);
        assert_eq!(r.labels, vec![0, 0, 0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn too_few_clips_is_an_error() {
        assert!(kmeans(&[bits("1000")], &cfg(2, 0), Exec::Sequential).is_err());
        assert!(kmeans(&vec![bits("1000"); 4], &cfg(2, 0), Exec::Sequential).is_err());
    }

    #[test]
    fn matches_brute_force_on_eight_clips() {
        // Lloyd is a local method: even with 50 restarts one of these 30
        // instances settles in a local optimum.
        let (mut hits, mut skipped) = (0, 0);
        for seed in 0..30 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..8).map(|_| (0..4).map(|_| rng.gen_range(0..2) as f64).collect()).collect();
            let Ok(r) = kmeans(&pts, &KMeansConfig { restarts: 50, ..cfg(3, seed) }, Exec::Sequential) else {
                skipped += 1;
                continue;
            };
            let opt = brute_force_wcss(&pts, 3);
            assert!(r.wcss >= opt - 1e-9);
            hits += ((r.wcss - opt).abs() < 1e-9) as usize;
        }
        assert!(hits + 1 >= 30 - skipped, "{hits} of {}", 30 - skipped);
    }

    #[test]
    fn empty_cluster_is_repaired() {
        // Two seeds on the same side leave a cluster empty after assignment.
        let pts = vec![bits("0000"), bits("0001"), bits("1111"), bits("1110"), bits("0011")];
        let r = kmeans_from(&pts, vec![bits("0000"), bits("0000"), bits("1111")], &cfg(3, 0));
        assert!(r.counts.iter().all(|&c| c > 0), "{:?}", r.counts);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..400).map(|_| (0..16).map(|_| rng.gen_range(0..2) as f64).collect()).collect();
        let a = kmeans(&pts, &cfg(16, 7), Exec::Sequential).unwrap();
        let b = kmeans(&pts, &cfg(16, 7), Exec::Parallel).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn lloyd_invariants(seed in 0u64..1000, n in 6usize..40, k in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.gen_range(0..2) as f64).collect()).collect();
            let Ok(r) = kmeans(&pts, &cfg(k, seed), Exec::Sequential) else { return Ok(()) };
            // WCSS never increases across iterations
            prop_assert!(r.wcss_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            // centroids are convex combinations of binary points, pairwise distinct
            for c in &r.centroids {
                prop_assert!(c.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
            for i in 0..k {
                for j in i + 1..k {
                    prop_assert!(r.centroids[i] != r.centroids[j]);
                }
            }
            // converged labels are nearest-centroid assignments
            for (p, &l) in pts.iter().zip(&r.labels) {
                prop_assert_eq!(nearest(&r.centroids, p), l);
                for c in &r.centroids {
                    prop_assert!(squared_distance(p, &r.centroids[l]) <= squared_distance(p, c));
                }
            }
            prop_assert_eq!(r.counts.iter().sum::<u64>(), n as u64);
        }
    }
}
