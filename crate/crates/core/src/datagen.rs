//! Synthetic streaming data: the two reference datasets, cluster noise,
//! additive outlier contamination and the growing-cluster arrival schedule.

use std::io::Write;

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};

use crate::error::{config_err, Result};
use crate::gc::FeatureVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseFamily {
    Gaussian,
    /// Laplace with the same per-axis variance as the Gaussian case.
    Laplace,
}

/// A cluster with diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub centroid: Vec<f64>,
    pub variances: Vec<f64>,
    pub noise: NoiseFamily,
}

impl ClusterSpec {
    pub fn new(centroid: Vec<f64>, variances: Vec<f64>, noise: NoiseFamily) -> Result<Self> {
        if centroid.len() != variances.len() {
            return Err(config_err("centroid and variance dimensions differ"));
        }
        if variances.iter().any(|v| !(*v > 0.0)) {
            return Err(config_err("cluster variances must be positive"));
        }
        Ok(ClusterSpec {
            centroid,
            variances,
            noise,
        })
    }

    pub fn dim(&self) -> usize {
        self.centroid.len()
    }

    fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.variances
            .iter()
            .map(|&var| match self.noise {
                NoiseFamily::Gaussian => {
                    let z: f64 = StandardNormal.sample(rng);
                    var.sqrt() * z
                }
                NoiseFamily::Laplace => {
                    let b = (var / 2.0).sqrt();
                    let e: f64 = Exp1.sample(rng);
                    if rng.random::<bool>() {
                        b * e
                    } else {
                        -b * e
                    }
                }
            })
            .collect()
    }
}

fn specs(rows: &[(&[f64], &[f64])], scale: f64) -> Vec<ClusterSpec> {
    rows.iter()
        .map(|(w, var)| ClusterSpec {
            centroid: w.to_vec(),
            variances: var.iter().map(|v| v * scale).collect(),
            noise: NoiseFamily::Gaussian,
        })
        .collect()
}

/// Five 2-D clusters.
pub fn dataset_data1() -> Vec<ClusterSpec> {
    specs(
        &[
            (&[-1.0, 0.0], &[0.2, 0.4]),
            (&[4.0, 0.0], &[0.6, 0.6]),
            (&[0.0, 5.0], &[0.4, 0.2]),
            (&[9.0, 4.0], &[0.2, 0.2]),
            (&[3.0, 9.0], &[0.3, 0.5]),
        ],
        1.0,
    )
}

/// Variance scale applied to every Data-2 cluster.
pub const DATA2_ALPHA: f64 = 0.15;

/// Six tight 3-D clusters.
pub fn dataset_data2() -> Vec<ClusterSpec> {
    specs(
        &[
            (&[-1.0, 0.0, 7.0], &[0.2, 0.4, 0.2]),
            (&[3.0, 0.0, 8.0], &[0.6, 0.3, 0.5]),
            (&[0.0, 5.0, 1.0], &[0.4, 0.2, 0.1]),
            (&[9.0, 4.0, 4.0], &[0.3, 0.3, 0.3]),
            (&[3.0, 9.0, 5.0], &[0.3, 0.5, 0.3]),
            (&[5.0, 5.0, 1.55], &[0.4, 0.4, 0.4]),
        ],
        DATA2_ALPHA,
    )
}

pub fn with_noise(mut specs: Vec<ClusterSpec>, noise: NoiseFamily) -> Vec<ClusterSpec> {
    for s in &mut specs {
        s.noise = noise;
    }
    specs
}

/// One axis of a chi-square outlier: a draw with `dof` degrees of freedom,
/// added when `negate` is false and subtracted otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedChiSquare {
    pub dof: f64,
    pub negate: bool,
}

impl SignedChiSquare {
    pub fn add(dof: f64) -> Self {
        SignedChiSquare { dof, negate: false }
    }

    pub fn sub(dof: f64) -> Self {
        SignedChiSquare { dof, negate: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutlierDistribution {
    ChiSquare(Vec<SignedChiSquare>),
    Gaussian { mean: Vec<f64>, variances: Vec<f64> },
}

impl OutlierDistribution {
    pub fn isotropic_gaussian(q: usize, variance: f64) -> Self {
        OutlierDistribution::Gaussian {
            mean: vec![0.0; q],
            variances: vec![variance; q],
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            OutlierDistribution::ChiSquare(axes) => axes
                .iter()
                .map(|a| {
                    // dof validated at construction of the contamination spec
                    let x: f64 = ChiSquared::new(a.dof).unwrap().sample(rng);
                    if a.negate {
                        -x
                    } else {
                        x
                    }
                })
                .collect(),
            OutlierDistribution::Gaussian { mean, variances } => mean
                .iter()
                .zip(variances)
                .map(|(m, v)| {
                    let z: f64 = StandardNormal.sample(rng);
                    m + v.sqrt() * z
                })
                .collect(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            OutlierDistribution::ChiSquare(axes) => {
                if axes.iter().any(|a| !(a.dof > 0.0)) {
                    return Err(config_err("chi-square degrees of freedom must be positive"));
                }
            }
            OutlierDistribution::Gaussian { mean, variances } => {
                if mean.len() != variances.len() || variances.iter().any(|v| *v < 0.0) {
                    return Err(config_err("malformed gaussian outlier distribution"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OutlierFamily {
    /// Same outlier law for every cluster.
    Shared(OutlierDistribution),
    /// Indexed by cluster; clusters past the end use the last entry.
    PerCluster(Vec<OutlierDistribution>),
}

/// With probability `p_e` an independent outlier draw is added to a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ContaminationSpec {
    pub p_e: f64,
    pub family: Option<OutlierFamily>,
}

impl ContaminationSpec {
    pub fn none() -> Self {
        ContaminationSpec {
            p_e: 0.0,
            family: None,
        }
    }

    pub fn new(p_e: f64, family: OutlierFamily) -> Result<Self> {
        let spec = ContaminationSpec {
            p_e,
            family: Some(family),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Skewed per-cluster outliers for the 2-D dataset; the fifth cluster
    /// gets zero-mean Gaussian outliers with covariance `3 I`.
    pub fn chi_square_data1(p_e: f64) -> Result<Self> {
        use SignedChiSquare as C;
        Self::new(
            p_e,
            OutlierFamily::PerCluster(vec![
                OutlierDistribution::ChiSquare(vec![C::add(3.0), C::add(3.0)]),
                OutlierDistribution::ChiSquare(vec![C::sub(5.0), C::sub(5.0)]),
                OutlierDistribution::ChiSquare(vec![C::add(4.0), C::sub(1.0)]),
                OutlierDistribution::ChiSquare(vec![C::add(2.0), C::sub(3.0)]),
                OutlierDistribution::isotropic_gaussian(2, 3.0),
            ]),
        )
    }

    /// Zero-mean Gaussian outliers with covariance `3 I_q`.
    pub fn gaussian(p_e: f64, q: usize) -> Result<Self> {
        Self::new(
            p_e,
            OutlierFamily::Shared(OutlierDistribution::isotropic_gaussian(q, 3.0)),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_e) {
            return Err(config_err(format!("p_e must lie in [0, 1], got {}", self.p_e)));
        }
        match &self.family {
            None => {
                if self.p_e > 0.0 {
                    return Err(config_err("p_e > 0 requires an outlier distribution"));
                }
            }
            Some(OutlierFamily::Shared(d)) => d.validate()?,
            Some(OutlierFamily::PerCluster(ds)) => {
                if ds.is_empty() {
                    return Err(config_err("per-cluster outlier list is empty"));
                }
                for d in ds {
                    d.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn for_cluster(&self, k: usize) -> Option<&OutlierDistribution> {
        match self.family.as_ref()? {
            OutlierFamily::Shared(d) => Some(d),
            OutlierFamily::PerCluster(ds) => ds.get(k).or_else(|| ds.last()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub coords: Vec<f64>,
    pub is_outlier: bool,
}

/// Draws one observation of cluster `k`.
pub fn sample<R: Rng + ?Sized>(
    spec: &ClusterSpec,
    k: usize,
    contamination: &ContaminationSpec,
    rng: &mut R,
) -> Sample {
    let noise = spec.draw_noise(rng);
    let mut coords: Vec<f64> = spec.centroid.iter().zip(&noise).map(|(w, e)| w + e).collect();
    let mut is_outlier = false;
    if contamination.p_e > 0.0 && rng.random::<f64>() < contamination.p_e {
        if let Some(dist) = contamination.for_cluster(k) {
            for (c, o) in coords.iter_mut().zip(dist.draw(rng)) {
                *c += o;
            }
            is_outlier = true;
        }
    }
    Sample { coords, is_outlier }
}

/// Growing-cluster arrival schedule.
///
/// Phase `c` (from `initial_clusters` up to `total_clusters`) interleaves
/// the first `c` clusters round-robin until each has contributed
/// `vectors_per_cluster_per_phase` vectors. Every `batch_size` rounds is an
/// evaluation point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSchedule {
    pub vectors_per_cluster_per_phase: usize,
    pub batch_size: usize,
    pub initial_clusters: usize,
    pub total_clusters: usize,
}

impl StreamSchedule {
    pub fn growing(total_clusters: usize) -> Self {
        StreamSchedule {
            vectors_per_cluster_per_phase: 50,
            batch_size: 10,
            initial_clusters: 1,
            total_clusters,
        }
    }

    /// All clusters active from the start, a single phase.
    pub fn stationary(clusters: usize, vectors_per_cluster: usize, batch_size: usize) -> Self {
        StreamSchedule {
            vectors_per_cluster_per_phase: vectors_per_cluster,
            batch_size,
            initial_clusters: clusters,
            total_clusters: clusters,
        }
    }

    pub fn validate(&self, available: usize) -> Result<()> {
        if self.vectors_per_cluster_per_phase == 0 || self.batch_size == 0 {
            return Err(config_err("schedule counts must be positive"));
        }
        if self.initial_clusters == 0 || self.initial_clusters > self.total_clusters {
            return Err(config_err("initial_clusters must lie in 1..=total_clusters"));
        }
        if self.total_clusters > available {
            return Err(config_err(format!(
                "schedule needs {} clusters, dataset has {}",
                self.total_clusters, available
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        (self.initial_clusters..=self.total_clusters)
            .map(|c| c * self.vectors_per_cluster_per_phase)
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamItem {
    pub feature: FeatureVector,
    pub cluster: usize,
    pub is_outlier: bool,
    /// Ground-truth number of active clusters at this step.
    pub k_true: usize,
    /// Cumulative vectors per active cluster, counted across phases.
    pub progress: usize,
    /// Last vector of a batch: metrics are sampled here.
    pub eval_point: bool,
}

pub fn make_stream<R: Rng + ?Sized>(
    specs: &[ClusterSpec],
    schedule: &StreamSchedule,
    contamination: &ContaminationSpec,
    rng: &mut R,
) -> Result<Vec<StreamItem>> {
    schedule.validate(specs.len())?;
    contamination.validate()?;
    let mut out = Vec::with_capacity(schedule.len());
    let mut t = 0u64;
    let per_phase = schedule.vectors_per_cluster_per_phase;
    for (phase, c) in (schedule.initial_clusters..=schedule.total_clusters).enumerate() {
        for round in 0..per_phase {
            let progress = phase * per_phase + round + 1;
            let batch_done = (round + 1) % schedule.batch_size == 0 || round + 1 == per_phase;
            for k in 0..c {
                t += 1;
                let s = sample(&specs[k], k, contamination, rng);
                out.push(StreamItem {
                    feature: FeatureVector::new(s.coords, t),
                    cluster: k,
                    is_outlier: s.is_outlier,
                    k_true: c,
                    progress,
                    eval_point: batch_done && k + 1 == c,
                });
            }
        }
    }
    Ok(out)
}

/// Writes `t,node,x1..xq,true_cluster,is_outlier` rows with a header.
pub fn write_stream_csv<W: Write>(
    mut w: W,
    streams: &[(usize, &[StreamItem])],
) -> std::io::Result<()> {
    let q = streams
        .iter()
        .find_map(|(_, s)| s.first())
        .map_or(0, |i| i.feature.coords.len());
    let mut header = String::from("t,node");
    for k in 1..=q {
        header.push_str(&format!(",x{k}"));
    }
    header.push_str(",true_cluster,is_outlier");
    writeln!(w, "{header}")?;
    for (node, items) in streams {
        for it in *items {
            write!(w, "{},{}", it.feature.arrival, node)?;
            for c in &it.feature.coords {
                write!(w, ",{c}")?;
            }
            writeln!(w, ",{},{}", it.cluster + 1, u8::from(it.is_outlier))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn data1_table() {
        let d = dataset_data1();
        assert_eq!(d.len(), 5);
        assert!(d.iter().all(|s| s.dim() == 2));
        assert_eq!(d[0].centroid, vec![-1.0, 0.0]);
        assert_eq!(d[0].variances, vec![0.2, 0.4]);
        assert_eq!(d[4].centroid, vec![3.0, 9.0]);
        assert_eq!(d[4].variances, vec![0.3, 0.5]);
    }

    #[test]
    fn data2_table() {
        let d = dataset_data2();
        assert_eq!(d.len(), 6);
        assert!(d.iter().all(|s| s.dim() == 3));
        assert_eq!(d[5].centroid, vec![5.0, 5.0, 1.55]);
        for v in &d[5].variances {
            assert!((v - 0.06).abs() < 1e-12);
        }
        let expected = [0.15 * 0.2, 0.15 * 0.4, 0.15 * 0.2];
        for (v, e) in d[0].variances.iter().zip(expected) {
            assert!((v - e).abs() < 1e-12);
        }
        assert_eq!(d[0].centroid, vec![-1.0, 0.0, 7.0]);
    }

    #[test]
    fn cluster_spec_rejects_bad_variance() {
        assert!(ClusterSpec::new(vec![0.0], vec![0.0], NoiseFamily::Gaussian).is_err());
        assert!(ClusterSpec::new(vec![0.0, 1.0], vec![1.0], NoiseFamily::Gaussian).is_err());
    }

    #[test]
    fn clean_samples_are_unbiased() {
        let spec = dataset_data1()[1].clone();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<Sample> = (0..10_000)
            .map(|_| sample(&spec, 1, &ContaminationSpec::none(), &mut rng))
            .collect();
        for axis in 0..2 {
            let xs: Vec<f64> = draws.iter().map(|s| s.coords[axis]).collect();
            let (m, _) = mean_var(&xs);
            let sigma = spec.variances[axis].sqrt();
            assert!((m - spec.centroid[axis]).abs() < 5.0 * sigma / 100.0);
        }
        assert!(draws.iter().all(|s| !s.is_outlier));
    }

    #[test]
    fn full_contamination_adds_covariances() {
        let spec = dataset_data1()[0].clone();
        let cont = ContaminationSpec::gaussian(1.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let draws: Vec<Vec<f64>> = (0..10_000)
            .map(|_| sample(&spec, 0, &cont, &mut rng).coords)
            .collect();
        for axis in 0..2 {
            let xs: Vec<f64> = draws.iter().map(|c| c[axis]).collect();
            let (_, v) = mean_var(&xs);
            let expected = spec.variances[axis] + 3.0;
            assert!((v / expected - 1.0).abs() < 0.10, "axis {axis}: {v}");
        }
    }

    #[test]
    fn chi_square_signs_follow_cluster() {
        let cont = ContaminationSpec::chi_square_data1(1.0).unwrap();
        let specs = dataset_data1();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mean_shift = |k: usize, rng: &mut ChaCha8Rng| {
            let n = 20_000;
            let mut acc = [0.0; 2];
            for _ in 0..n {
                let s = sample(&specs[k], k, &cont, rng);
                for a in 0..2 {
                    acc[a] += (s.coords[a] - specs[k].centroid[a]) / n as f64;
                }
            }
            acc
        };
        // chi-square mean equals its degrees of freedom
        let expected = [[3.0, 3.0], [-5.0, -5.0], [4.0, -1.0], [2.0, -3.0], [0.0, 0.0]];
        for (k, e) in expected.iter().enumerate() {
            let m = mean_shift(k, &mut rng);
            for a in 0..2 {
                assert!((m[a] - e[a]).abs() < 0.15, "cluster {k} axis {a}: {}", m[a]);
            }
        }
    }

    #[test]
    fn outlier_rate_matches_p_e() {
        let spec = dataset_data2()[0].clone();
        let cont = ContaminationSpec::gaussian(0.05, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample(&spec, 0, &cont, &mut rng).is_outlier)
            .count();
        assert!((hits as f64 / n as f64 - 0.05).abs() < 0.01);
    }

    #[test]
    fn laplace_variance_matches() {
        let spec = ClusterSpec::new(vec![0.0, 0.0], vec![0.2, 0.6], NoiseFamily::Laplace).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let draws: Vec<Vec<f64>> = (0..100_000)
            .map(|_| sample(&spec, 0, &ContaminationSpec::none(), &mut rng).coords)
            .collect();
        for axis in 0..2 {
            let xs: Vec<f64> = draws.iter().map(|c| c[axis]).collect();
            let (_, v) = mean_var(&xs);
            assert!((v / spec.variances[axis] - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn contamination_validation() {
        assert!(ContaminationSpec::gaussian(1.5, 2).is_err());
        assert!(ContaminationSpec::gaussian(-0.1, 2).is_err());
        let no_family = ContaminationSpec { p_e: 0.1, family: None };
        assert!(no_family.validate().is_err());
        let bad_dof = OutlierFamily::Shared(OutlierDistribution::ChiSquare(vec![
            SignedChiSquare::add(0.0),
        ]));
        assert!(ContaminationSpec::new(0.1, bad_dof).is_err());
    }

    #[test]
    fn growing_schedule_lengths_and_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = StreamSchedule::growing(5);
        assert_eq!(s.len(), 750);
        let stream = make_stream(&dataset_data1(), &s, &ContaminationSpec::none(), &mut rng).unwrap();
        assert_eq!(stream.len(), 750);
        let mut truth: Vec<usize> = stream.iter().map(|i| i.k_true).collect();
        truth.dedup();
        assert_eq!(truth, vec![1, 2, 3, 4, 5]);
        assert_eq!(stream.iter().filter(|i| i.eval_point).count(), 25);
        let last = stream.last().unwrap();
        assert!(last.eval_point);
        assert_eq!(last.progress, 250);
        // round-robin inside a phase
        let phase2: Vec<usize> = stream[50..54].iter().map(|i| i.cluster).collect();
        assert_eq!(phase2, vec![0, 1, 0, 1]);
    }

    #[test]
    fn single_cluster_schedule_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let stream = make_stream(
            &dataset_data1(),
            &StreamSchedule::growing(1),
            &ContaminationSpec::none(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(stream.len(), 50);
        assert!(stream.iter().all(|i| i.k_true == 1));
    }

    #[test]
    fn schedule_needs_enough_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = make_stream(
            &dataset_data1(),
            &StreamSchedule::growing(6),
            &ContaminationSpec::none(),
            &mut rng,
        );
        assert!(r.is_err());
    }

    #[test]
    fn seeded_streams_repeat() {
        let gen = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            make_stream(
                &dataset_data2(),
                &StreamSchedule::growing(6),
                &ContaminationSpec::gaussian(0.1, 3).unwrap(),
                &mut rng,
            )
            .unwrap()
        };
        assert_eq!(gen(4), gen(4));
        assert_ne!(gen(4), gen(5));
    }

    #[test]
    fn stream_csv_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stream = make_stream(
            &dataset_data1(),
            &StreamSchedule::stationary(2, 1, 1),
            &ContaminationSpec::none(),
            &mut rng,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_stream_csv(&mut buf, &[(3, &stream)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,node,x1,x2,true_cluster,is_outlier");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("2,3,"));
        assert!(lines[2].ends_with(",2,0"));
    }
}
