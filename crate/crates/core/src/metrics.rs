//! Accuracy metrics over Monte-Carlo runs.
//!
//! A run is a list of evaluation points; each point holds one estimate per
//! node (a single entry for single-node runs). Count metrics pool every
//! (run, point, node) triple.

use crate::error::{Error, Result};
use crate::vecmath::distance;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalPoint {
    /// Stream position (number of vectors seen by one node).
    pub t: u64,
    /// Vectors per active cluster so far.
    pub progress: usize,
    pub k_true: usize,
    /// One estimate per node.
    pub k_hat: Vec<usize>,
    /// Detected centroids per node.
    pub centroids: Vec<Vec<Vec<f64>>>,
    /// Wall-clock seconds spent since the previous point.
    pub seconds: f64,
    /// Force terms evaluated since the previous point, summed over nodes.
    pub force_terms: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub points: Vec<EvalPoint>,
}

impl RunRecord {
    pub fn validate(&self) -> Result<()> {
        let nodes = self.points.first().map_or(0, |p| p.k_hat.len());
        for p in &self.points {
            if p.k_hat.len() != nodes || (!p.centroids.is_empty() && p.centroids.len() != nodes) {
                return Err(Error::DimensionMismatch {
                    expected: nodes,
                    found: p.k_hat.len(),
                });
            }
        }
        Ok(())
    }
}

fn errors(runs: &[RunRecord]) -> Result<impl Iterator<Item = (usize, usize)> + '_> {
    if runs.iter().all(|r| r.points.iter().all(|p| p.k_hat.is_empty())) {
        return Err(Error::Empty("metric over runs"));
    }
    Ok(runs
        .iter()
        .flat_map(|r| &r.points)
        .flat_map(|p| p.k_hat.iter().map(move |&k| (k, p.k_true))))
}

/// Root mean square of `k_hat - k_true`, pooled over runs, points and nodes.
pub fn rmse_k(runs: &[RunRecord]) -> Result<f64> {
    let (mut sq, mut n) = (0u64, 0u64);
    for (k, truth) in errors(runs)? {
        let e = k.abs_diff(truth) as u64;
        sq += e * e;
        n += 1;
    }
    Ok((sq as f64 / n as f64).sqrt())
}

/// Fraction of pooled estimates equal to the truth.
pub fn p_correct(runs: &[RunRecord]) -> Result<f64> {
    let (mut hits, mut n) = (0u64, 0u64);
    for (k, truth) in errors(runs)? {
        hits += u64::from(k == truth);
        n += 1;
    }
    Ok(hits as f64 / n as f64)
}

/// Greedy nearest pairing of estimated and true centroids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CentroidMatch {
    /// `(estimate index, truth index, distance)`, closest first.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_estimates: usize,
    pub unmatched_truths: usize,
}

impl CentroidMatch {
    /// RMSE over matched pairs; unmatched entries count at `penalty` when given.
    pub fn rmse(&self, penalty: Option<f64>) -> Option<f64> {
        let mut sq: f64 = self.pairs.iter().map(|p| p.2 * p.2).sum();
        let mut n = self.pairs.len();
        if let Some(pen) = penalty {
            let extra = self.unmatched_estimates + self.unmatched_truths;
            sq += pen * pen * extra as f64;
            n += extra;
        }
        (n > 0).then(|| (sq / n as f64).sqrt())
    }
}

pub fn match_centroids(estimates: &[Vec<f64>], truths: &[Vec<f64>]) -> CentroidMatch {
    let mut all: Vec<(f64, usize, usize)> = Vec::with_capacity(estimates.len() * truths.len());
    for (i, e) in estimates.iter().enumerate() {
        for (j, w) in truths.iter().enumerate() {
            all.push((distance(e, w), i, j));
        }
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_e = vec![false; estimates.len()];
    let mut used_t = vec![false; truths.len()];
    let mut pairs = Vec::new();
    for (r, i, j) in all {
        if !used_e[i] && !used_t[j] {
            used_e[i] = true;
            used_t[j] = true;
            pairs.push((i, j, r));
        }
    }
    CentroidMatch {
        unmatched_estimates: estimates.len() - pairs.len(),
        unmatched_truths: truths.len() - pairs.len(),
        pairs,
    }
}

/// Centroid RMSE under greedy matching with unmatched entries excluded.
/// `None` when either list is empty.
pub fn rmse_centroids(estimates: &[Vec<f64>], truths: &[Vec<f64>]) -> Option<f64> {
    if estimates.is_empty() || truths.is_empty() {
        return None;
    }
    match_centroids(estimates, truths).rmse(None)
}

/// Pools matched centroid distances over runs, points and nodes. `truths`
/// maps a point to the centroids of the clusters active there.
pub fn pooled_centroid_rmse<F>(runs: &[RunRecord], truths: F) -> Option<f64>
where
    F: Fn(&EvalPoint) -> Vec<Vec<f64>>,
{
    let (mut sq, mut n) = (0.0, 0usize);
    for p in runs.iter().flat_map(|r| &r.points) {
        let truth = truths(p);
        for est in &p.centroids {
            for (_, _, r) in match_centroids(est, &truth).pairs {
                sq += r * r;
                n += 1;
            }
        }
    }
    (n > 0).then(|| (sq / n as f64).sqrt())
}

/// First 1-based index from which every value is below `epsilon_min`.
/// `None` if the series never settles below it.
pub fn convergence_time(series: &[f64], epsilon_min: f64) -> Option<usize> {
    let mut start = None;
    for (i, &d) in series.iter().enumerate() {
        if d < epsilon_min {
            start.get_or_insert(i + 1);
        } else {
            start = None;
        }
    }
    start
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for one sample).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}
