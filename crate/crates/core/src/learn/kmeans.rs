//! k-means with k-means++ seeding, used for LearnSPN instance splits and GMM
//! initialisation.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed;

/// Row labels plus per-cluster sizes. Every cluster is non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
}

#[inline]
fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: the first centre uniformly, each further centre with
/// probability proportional to the squared distance to the nearest chosen
/// centre. Returns row indices. When every remaining point coincides with a
/// centre, the next index is drawn uniformly.
pub fn plus_plus<R: Rng>(data: ArrayView2<f64>, k: usize, rng: &mut R) -> Vec<usize> {
    let n = data.nrows();
    if k == 0 || n == 0 {
        return Vec::new();
    }
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(data.row(i), data.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    pick = i;
                    break;
                }
            }
            // Rounding can leave `pick` on a zero-weight point; step back to a positive one.
            if nearest[pick] == 0.0 {
                pick = nearest.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(data.row(i), data.row(next)));
        }
    }
    chosen
}

/// Columns centred and scaled to unit variance; constant columns are only centred.
pub fn standardize(data: ArrayView2<f64>) -> Array2<f64> {
    let mut out = data.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let n = col.len() as f64;
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
        col.mapv_inplace(|v| (v - mean) * scale);
    }
    out
}

fn assign(data: ArrayView2<f64>, centroids: &Array2<f64>) -> Vec<(usize, f64)> {
    (0..data.nrows())
        .into_par_iter()
        .map(|i| {
            let row = data.row(i);
            let mut best = (0, f64::INFINITY);
            for (c, centre) in centroids.axis_iter(Axis(0)).enumerate() {
                let d = sq_dist(row, centre);
                // strict < keeps the lowest index on ties
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .collect()
}

/// Lloyd iterations from the given initial centroids. Empty clusters are
/// re-seeded with the point farthest from its current centroid (taken from a
/// cluster that can spare it), so every returned cluster is non-empty.
pub fn lloyd(data: ArrayView2<f64>, mut centroids: Array2<f64>, max_iter: usize) -> Clustering {
    let n = data.nrows();
    let k = centroids.nrows();
    let mut labels: Vec<usize> = vec![usize::MAX; n];
    let mut sizes = vec![0usize; k];
    for _ in 0..max_iter.max(1) {
        let assigned = assign(data, &centroids);
        let mut new_labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        let mut dist: Vec<f64> = assigned.iter().map(|a| a.1).collect();
        sizes = vec![0; k];
        for &l in &new_labels {
            sizes[l] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let donor = (0..n)
                .filter(|&i| sizes[new_labels[i]] > 1)
                .fold(None::<usize>, |best, i| match best {
                    Some(b) if dist[b] >= dist[i] => Some(b),
                    _ => Some(i),
                });
            let Some(i) = donor else { break };
            sizes[new_labels[i]] -= 1;
            new_labels[i] = c;
            sizes[c] = 1;
            dist[i] = 0.0;
            centroids.row_mut(c).assign(&data.row(i));
        }
        let converged = new_labels == labels;
        labels = new_labels;
        // centroid update
        let mut sums = Array2::<f64>::zeros(centroids.dim());
        for (i, &l) in labels.iter().enumerate() {
            let mut s = sums.row_mut(l);
            s += &data.row(i);
        }
        for (c, &size) in sizes.iter().enumerate() {
            if size > 0 {
                let mean = &sums.row(c) / size as f64;
                centroids.row_mut(c).assign(&mean);
            }
        }
        if converged {
            break;
        }
    }
    Clustering { labels, sizes }
}

/// Standardises columns, seeds with k-means++ and runs Lloyd's algorithm
/// until the assignment is a fixpoint or `max_iter` is reached.
pub fn cluster_instances(
    data: ArrayView2<f64>,
    k: usize,
    max_iter: usize,
    seed: u64,
) -> Result<Clustering> {
    if k == 0 {
        return Err(Error::Input("cluster count must be positive".into()));
    }
    if data.nrows() < k {
        return Err(Error::Input(format!(
            "cannot form {k} clusters from {} rows",
            data.nrows()
        )));
    }
    let z = standardize(data);
    let mut rng = seed::rng(seed);
    let seeds = plus_plus(z.view(), k, &mut rng);
    let centroids = z.select(Axis(0), &seeds);
    Ok(lloyd(z.view(), centroids, max_iter))
}
