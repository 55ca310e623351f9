//! Single-node gravitational clustering.
//!
//! Every streamed feature vector becomes an immovable unit-mass attractor.
//! Next to it a mobile probe is emitted; probes fall towards dense regions
//! of the feature space under a damped inverse-power force, fuse when they
//! come within `epsilon_r` of each other, and a probe whose accumulated mass
//! reaches `m_min` is reported as a cluster whose centroid is the probe
//! position.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{config_err, Error, Result};
use crate::vecmath::{distance, norm};

/// How the force exponent `p` is chosen for a (fixed, mobile) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExponentRule {
    Constant(f64),
    /// `p = log10(r + 1) + 2`: about 2 at short range, steeper far away.
    Adaptive,
}

impl ExponentRule {
    #[inline]
    pub fn at_distance(&self, r: f64) -> f64 {
        match *self {
            ExponentRule::Constant(p) => p,
            ExponentRule::Adaptive => (r + 1.0).log10() + 2.0,
        }
    }
}

/// Where the viscous term enters the velocity update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Damping {
    /// `v += (f - k v) / m * dt`: heavy probes are damped less.
    ForceOverMass,
    /// `v += (f / m - k v) * dt`: every probe loses the same velocity fraction.
    Velocity,
}

/// Which position a fused pair of probes keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeRule {
    /// The member with the smaller mean distance to all probes.
    MeanDistance,
    /// The heavier member; equal masses fall back to `MeanDistance`.
    Heavier,
    /// The mass-weighted average of both positions and velocities.
    CenterOfMass,
}

/// Tuning constants of the dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct GcParams {
    /// Gravitational gain.
    pub g: f64,
    pub exponent: ExponentRule,
    /// Viscous damping coefficient, strictly inside (0, 1).
    pub k_damp: f64,
    /// Merge radius.
    pub epsilon_r: f64,
    /// Emission covariance scale: probes are drawn from `N(d, r_x I)`.
    pub r_x: f64,
    /// Minimum mass of a probe for it to count as a cluster (inclusive).
    pub m_min: f64,
    /// Fixed units farther than this from a probe exert no force.
    pub d_max: f64,
    pub delta_t: f64,
    /// Upper bound on the distance a probe travels in one step, as a
    /// multiple of `epsilon_r`. Infinite disables the bound.
    pub max_step: f64,
    pub merge_rule: MergeRule,
    pub damping: Damping,
    /// Run enumeration every this many steps.
    pub enumerate_every: u64,
}

impl GcParams {
    /// Defaults used for the synthetic experiments, with `epsilon_r = sqrt(q)`.
    ///
    /// The force is cut off at distance 3 and a probe moves at most half a
    /// merge radius per step. Without these two limits the summed force of a
    /// few hundred features throws probes far past their cluster on the
    /// first step and nothing ever fuses; see [`GcParams::unbounded`].
    pub fn for_dimension(q: usize) -> Self {
        GcParams {
            d_max: 3.0,
            max_step: 0.5,
            ..Self::unbounded(q)
        }
    }

    /// Same constants with no force cutoff and no travel limit.
    pub fn unbounded(q: usize) -> Self {
        GcParams {
            g: 1.0,
            exponent: ExponentRule::Adaptive,
            k_damp: 0.8,
            epsilon_r: (q as f64).sqrt(),
            r_x: 1.0,
            m_min: 7.0,
            d_max: f64::INFINITY,
            delta_t: 1.0,
            max_step: f64::INFINITY,
            merge_rule: MergeRule::MeanDistance,
            damping: Damping::ForceOverMass,
            enumerate_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g > 0.0 && self.g.is_finite()) {
            return Err(config_err(format!("g must be positive, got {}", self.g)));
        }
        if let ExponentRule::Constant(p) = self.exponent {
            if !p.is_finite() {
                return Err(config_err("constant exponent must be finite"));
            }
        }
        if !(self.k_damp > 0.0 && self.k_damp < 1.0) {
            return Err(config_err(format!(
                "k_damp must lie in (0, 1), got {}",
                self.k_damp
            )));
        }
        if !(self.epsilon_r > 0.0 && self.epsilon_r.is_finite()) {
            return Err(config_err(format!(
                "epsilon_r must be positive, got {}",
                self.epsilon_r
            )));
        }
        if !(self.r_x > 0.0 && self.r_x.is_finite()) {
            return Err(config_err(format!("r_x must be positive, got {}", self.r_x)));
        }
        if !(self.m_min > 1.0 && self.m_min.is_finite()) {
            return Err(config_err(format!(
                "m_min must be greater than 1, got {}",
                self.m_min
            )));
        }
        if !(self.d_max > 0.0) {
            return Err(config_err(format!(
                "d_max must be positive or infinite, got {}",
                self.d_max
            )));
        }
        if !(self.delta_t > 0.0 && self.delta_t.is_finite()) {
            return Err(config_err(format!(
                "delta_t must be positive, got {}",
                self.delta_t
            )));
        }
        if !(self.max_step > 0.0) {
            return Err(config_err("max_step must be positive or infinite"));
        }
        if self.enumerate_every == 0 {
            return Err(config_err("enumerate_every must be at least 1"));
        }
        Ok(())
    }
}

/// `p` for the pair `(x1, x2)` under the configured rule.
pub fn exponent(params: &GcParams, x1: &[f64], x2: &[f64]) -> f64 {
    params.exponent.at_distance(distance(x1, x2))
}

/// A streamed feature vector; stored as a fixed attractor of unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub coords: Vec<f64>,
    pub arrival: u64,
}

impl FeatureVector {
    pub fn new(coords: Vec<f64>, arrival: u64) -> Self {
        FeatureVector { coords, arrival }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobileMassUnit {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub mass: f64,
}

impl MobileMassUnit {
    pub fn at_rest(position: Vec<f64>) -> Self {
        let q = position.len();
        MobileMassUnit {
            position,
            velocity: vec![0.0; q],
            mass: 1.0,
        }
    }
}

/// Detected clusters at one instant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClusterEstimate {
    pub k_hat: usize,
    pub centroids: Vec<Vec<f64>>,
    pub masses: Vec<f64>,
}

/// `-k_damp * v`.
pub fn damping_force(unit: &MobileMassUnit, k_damp: f64) -> Vec<f64> {
    unit.velocity.iter().map(|v| -k_damp * v).collect()
}

/// State of one clustering node: stored features, live probes, RNG.
#[derive(Debug, Clone)]
pub struct GcState {
    params: GcParams,
    dim: usize,
    // fixed units, row-major `dim` coordinates each
    fixed: Vec<f64>,
    arrivals: Vec<u64>,
    mobile: Vec<MobileMassUnit>,
    rng: ChaCha8Rng,
    emitted: u64,
    injected: f64,
    steps: u64,
    force_terms: u64,
    last: ClusterEstimate,
}

impl GcState {
    pub fn new(q: usize, params: GcParams, seed: u64) -> Result<Self> {
        if q == 0 {
            return Err(config_err("dimension must be at least 1"));
        }
        params.validate()?;
        Ok(GcState {
            params,
            dim: q,
            fixed: Vec::new(),
            arrivals: Vec::new(),
            mobile: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            emitted: 0,
            injected: 0.0,
            steps: 0,
            force_terms: 0,
            last: ClusterEstimate::default(),
        })
    }

    pub fn params(&self) -> &GcParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fixed_count(&self) -> usize {
        self.arrivals.len()
    }

    pub fn fixed_units(&self) -> impl Iterator<Item = FeatureVector> + '_ {
        self.fixed
            .chunks_exact(self.dim)
            .zip(&self.arrivals)
            .map(|(c, &t)| FeatureVector::new(c.to_vec(), t))
    }

    pub fn mobile_units(&self) -> &[MobileMassUnit] {
        &self.mobile
    }

    /// Number of probes emitted by [`GcState::ingest`].
    pub fn emitted(&self) -> u64 {
        self.emitted
    }

    /// Mass of every probe ever added; merging keeps the live total equal to it.
    pub fn injected_mass(&self) -> f64 {
        self.injected
    }

    pub fn total_mobile_mass(&self) -> f64 {
        self.mobile.iter().map(|u| u.mass).sum()
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Force terms actually evaluated (not cut off by `d_max`) over all steps.
    pub fn force_terms(&self) -> u64 {
        self.force_terms
    }

    pub fn last_estimate(&self) -> &ClusterEstimate {
        &self.last
    }

    /// Inserts a probe directly. Used by experiments that place probes
    /// themselves; ordinary streaming goes through [`GcState::ingest`].
    pub fn push_mobile(&mut self, unit: MobileMassUnit) -> Result<()> {
        self.check_dim(unit.position.len())?;
        self.check_dim(unit.velocity.len())?;
        if !(unit.mass >= 1.0) {
            return Err(config_err("mobile mass must be at least 1"));
        }
        self.injected += unit.mass;
        self.mobile.push(unit);
        Ok(())
    }

    /// Stores `d` as a fixed unit without emitting a probe.
    pub fn push_fixed(&mut self, d: &FeatureVector) -> Result<()> {
        self.check_dim(d.coords.len())?;
        if d.coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("feature vector"));
        }
        self.fixed.extend_from_slice(&d.coords);
        self.arrivals.push(d.arrival);
        Ok(())
    }

    /// Stores `d` and emits one probe at rest, drawn from `N(d, r_x I)`.
    pub fn ingest(&mut self, d: &FeatureVector) -> Result<()> {
        self.push_fixed(d)?;
        let spread = self.params.r_x.sqrt();
        let position: Vec<f64> = d
            .coords
            .iter()
            .map(|&c| {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                c + spread * z
            })
            .collect();
        self.mobile.push(MobileMassUnit::at_rest(position));
        self.emitted += 1;
        self.injected += 1.0;
        Ok(())
    }

    /// Total attraction exerted by all stored features on `unit`.
    pub fn gravitational_force(&self, unit: &MobileMassUnit) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.accumulate_force(&unit.position, unit.mass, &mut out);
        out
    }

    fn accumulate_force(&self, position: &[f64], mass: f64, out: &mut [f64]) -> u64 {
        let q = self.dim;
        let gm = self.params.g * mass;
        let d_max = self.params.d_max;
        let rule = self.params.exponent;
        let mut terms = 0;
        out.iter_mut().for_each(|o| *o = 0.0);
        for d in self.fixed.chunks_exact(q) {
            let mut r2 = 0.0;
            for k in 0..q {
                let diff = d[k] - position[k];
                r2 += diff * diff;
            }
            if r2 == 0.0 {
                // coincident with a feature: singular term skipped
                continue;
            }
            let r = r2.sqrt();
            if r > d_max {
                continue;
            }
            let scale = gm / r.powf(rule.at_distance(r));
            for k in 0..q {
                out[k] += scale * (d[k] - position[k]);
            }
            terms += 1;
        }
        terms
    }

    /// One iteration: move every probe, merge, enumerate.
    ///
    /// All forces are taken from the configuration before the step, so the
    /// result does not depend on the order in which probes are visited.
    pub fn step(&mut self) -> ClusterEstimate {
        let q = self.dim;
        let mut forces = vec![0.0; self.mobile.len() * q];
        let mut terms = 0;
        for (unit, f) in self.mobile.iter().zip(forces.chunks_exact_mut(q)) {
            terms += self.accumulate_force(&unit.position, unit.mass, f);
        }
        self.force_terms += terms;

        let dt = self.params.delta_t;
        let k_damp = self.params.k_damp;
        let max_step = self.params.max_step * self.params.epsilon_r;
        for (unit, f) in self.mobile.iter_mut().zip(forces.chunks_exact(q)) {
            let m = unit.mass;
            for k in 0..q {
                let damp = -k_damp * unit.velocity[k];
                unit.velocity[k] += match self.params.damping {
                    Damping::ForceOverMass => (f[k] + damp) / m * dt,
                    Damping::Velocity => (f[k] / m + damp) * dt,
                };
            }
            let travel = norm(&unit.velocity) * dt;
            if travel > max_step {
                let shrink = max_step / travel;
                unit.velocity.iter_mut().for_each(|v| *v *= shrink);
            }
            for k in 0..q {
                unit.position[k] += unit.velocity[k] * dt;
            }
        }

        self.combine_units();
        self.steps += 1;
        if self.steps.is_multiple_of(self.params.enumerate_every) {
            self.last = self.enumerate();
        }
        self.last.clone()
    }

    /// Fuses probes lying within `epsilon_r` of each other.
    ///
    /// Candidate pairs are collected once from the pre-merge configuration
    /// and visited in increasing distance (ties by index). Of each pair
    /// still alive, the probe with the smaller mean distance to every probe
    /// (self included) keeps its position and absorbs the other's mass; the
    /// lower index wins ties. Mean distances are those of the configuration
    /// before merging.
    pub fn combine_units(&mut self) {
        let n = self.mobile.len();
        if n < 2 {
            return;
        }
        let eps = self.params.epsilon_r;
        let mut row_sum = vec![0.0; n];
        let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let r = distance(&self.mobile[i].position, &self.mobile[j].position);
                row_sum[i] += r;
                row_sum[j] += r;
                if r <= eps {
                    pairs.push((r, i, j));
                }
            }
        }
        if pairs.is_empty() {
            return;
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        // the common 1/|U| factor does not change the comparison
        let mut alive = vec![true; n];
        for (_, i, j) in pairs {
            if !(alive[i] && alive[j]) {
                continue;
            }
            let by_mean = if row_sum[j] < row_sum[i] { (j, i) } else { (i, j) };
            let (mi, mj) = (self.mobile[i].mass, self.mobile[j].mass);
            let (keep, drop) = match self.params.merge_rule {
                MergeRule::MeanDistance => by_mean,
                MergeRule::Heavier if mi > mj => (i, j),
                MergeRule::Heavier if mj > mi => (j, i),
                MergeRule::Heavier => by_mean,
                MergeRule::CenterOfMass => {
                    let (keep, drop) = by_mean;
                    let (mk, md) = (self.mobile[keep].mass, self.mobile[drop].mass);
                    let other = self.mobile[drop].clone();
                    let unit = &mut self.mobile[keep];
                    for k in 0..unit.position.len() {
                        unit.position[k] = (mk * unit.position[k] + md * other.position[k]) / (mk + md);
                        unit.velocity[k] = (mk * unit.velocity[k] + md * other.velocity[k]) / (mk + md);
                    }
                    (keep, drop)
                }
            };
            let absorbed = self.mobile[drop].mass;
            self.mobile[keep].mass += absorbed;
            alive[drop] = false;
        }
        let mut idx = 0;
        self.mobile.retain(|_| {
            let keep = alive[idx];
            idx += 1;
            keep
        });
    }

    /// Reports every probe whose mass reaches `m_min`.
    pub fn enumerate(&self) -> ClusterEstimate {
        let mut est = ClusterEstimate::default();
        for unit in self.mobile.iter().filter(|u| u.mass >= self.params.m_min) {
            est.centroids.push(unit.position.clone());
            est.masses.push(unit.mass);
        }
        est.k_hat = est.centroids.len();
        est
    }

    /// Ingest then step, once per vector.
    pub fn run_stream<I>(&mut self, stream: I) -> Result<Vec<ClusterEstimate>>
    where
        I: IntoIterator<Item = FeatureVector>,
    {
        let mut series = Vec::new();
        for d in stream {
            self.ingest(&d)?;
            series.push(self.step());
        }
        Ok(series)
    }

    fn check_dim(&self, found: usize) -> Result<()> {
        if found != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found,
            });
        }
        Ok(())
    }
}
