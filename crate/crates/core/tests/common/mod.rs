#![allow(dead_code)]

use gravclust::datagen::{sample, ClusterSpec, ContaminationSpec, NoiseFamily};
use gravclust::gc::{GcParams, GcState, MobileMassUnit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Straightforward replay of the merge procedure: repeatedly take the
/// closest remaining pair within the radius, keep the member with the
/// smaller mean distance to all units, drop every pair naming the other.
pub fn oracle_combine(units: &[(Vec<f64>, f64)], eps: f64) -> Vec<(Vec<f64>, f64)> {
    let n = units.len();
    let d = |a: &[f64], b: &[f64]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let mean: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| d(&units[i].0, &units[j].0)).sum::<f64>() / n as f64)
        .collect();
    let mut set: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let r = d(&units[i].0, &units[j].0);
            if r <= eps {
                set.push((r, i, j));
            }
        }
    }
    let mut mass: Vec<f64> = units.iter().map(|u| u.1).collect();
    let mut alive = vec![true; n];
    while !set.is_empty() {
        let (at, &(_, i, j)) = set
            .iter()
            .enumerate()
            .min_by(|a, b| {
                a.1 .0.total_cmp(&b.1 .0).then((a.1 .1, a.1 .2).cmp(&(b.1 .1, b.1 .2)))
            })
            .unwrap();
        set.remove(at);
        let (keep, gone) = if mean[j] < mean[i] { (j, i) } else { (i, j) };
        mass[keep] += mass[gone];
        alive[gone] = false;
        set.retain(|&(_, a, b)| a != gone && b != gone);
    }
    (0..n)
        .filter(|&i| alive[i])
        .map(|i| (units[i].0.clone(), mass[i]))
        .collect()
}

/// Force magnitude on a unit-mass probe along one ray from a cluster centre.
pub struct ForceProfile {
    pub radii: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub sigma: f64,
}

impl ForceProfile {
    /// Peak inside three standard deviations, strict decrease beyond.
    pub fn check(&self) -> Result<(), String> {
        let (peak, _) = self
            .magnitudes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        let r_peak = self.radii[peak];
        if !(r_peak > 0.0 && r_peak <= 3.0 * self.sigma) {
            return Err(format!("peak at r={r_peak}"));
        }
        for i in 1..self.radii.len() {
            if self.radii[i - 1] >= 3.0 * self.sigma && self.magnitudes[i] >= self.magnitudes[i - 1] {
                return Err(format!("not decreasing at r={}", self.radii[i]));
            }
        }
        Ok(())
    }
}

/// 500 features around the origin with variances (0.2, 0.4), probed along
/// rays every 30 degrees out to radius 20.
pub fn outlier_force_profiles(seed: u64) -> Vec<(u32, ForceProfile)> {
    let spec = ClusterSpec::new(vec![0.0, 0.0], vec![0.2, 0.4], NoiseFamily::Gaussian).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = ContaminationSpec::none();
    let mut s = GcState::new(2, GcParams::unbounded(2), 0).unwrap();
    for n in 0..500 {
        let d = sample(&spec, 0, &clean, &mut rng).coords;
        s.push_fixed(&gravclust::gc::FeatureVector::new(d, n)).unwrap();
    }
    let radii: Vec<f64> = (0..=400).map(|i| i as f64 * 0.05).collect();
    (0..360)
        .step_by(30)
        .map(|deg| {
            let (sin, cos) = (deg as f64).to_radians().sin_cos();
            let magnitudes = radii
                .iter()
                .map(|&r| {
                    let f = s.gravitational_force(&MobileMassUnit::at_rest(vec![r * cos, r * sin]));
                    f[0].hypot(f[1])
                })
                .collect();
            (
                deg,
                ForceProfile {
                    radii: radii.clone(),
                    magnitudes,
                    sigma: 0.4f64.sqrt(),
                },
            )
        })
        .collect()
}
