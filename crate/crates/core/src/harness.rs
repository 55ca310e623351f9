//! Monte-Carlo experiment runner.
//!
//! An [`ExperimentConfig`] is resolved from flat `key=value` pairs (a config
//! file, then command-line overrides). [`run_experiment`] executes it and
//! returns a [`Report`] whose tables are written as CSV by [`write_report`],
//! together with a manifest that reproduces the run when fed back as a
//! config file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datagen::{
    dataset_data1, dataset_data2, make_stream, with_noise, ClusterSpec, ContaminationSpec,
    NoiseFamily, StreamItem, StreamSchedule,
};
use crate::error::{config_err, Error, Result};
use crate::gc::{Damping, ExponentRule, FeatureVector, GcParams, GcState, MergeRule};
use crate::metrics::{
    convergence_time, match_centroids, mean_std, p_correct, pooled_centroid_rmse, rmse_k,
    EvalPoint, RunRecord,
};
use crate::network::{build_topology, random_positions, ExchangeMode, Network, NetworkTopology};
use crate::vecmath::distance;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Single,
    Distributed,
    Convergence,
    Timing,
    DemoFig1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetId {
    Data1,
    Data2,
}

impl DatasetId {
    pub fn specs(self) -> Vec<ClusterSpec> {
        match self {
            DatasetId::Data1 => dataset_data1(),
            DatasetId::Data2 => dataset_data2(),
        }
    }

    pub fn dim(self) -> usize {
        match self {
            DatasetId::Data1 => 2,
            DatasetId::Data2 => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierKind {
    /// Skewed per-cluster outliers (2-D data only).
    ChiSquare,
    /// Zero-mean Gaussian outliers with covariance `3 I`.
    Gaussian,
}

/// `none`, `chi2:<p_e>` or `gaussian:<p_e>`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contamination {
    pub kind: OutlierKind,
    pub p_e: f64,
}

impl Contamination {
    pub fn none() -> Self {
        Contamination {
            kind: OutlierKind::Gaussian,
            p_e: 0.0,
        }
    }

    fn spec(&self, q: usize, p_e: f64) -> Result<ContaminationSpec> {
        if p_e == 0.0 {
            return Ok(ContaminationSpec::none());
        }
        match self.kind {
            OutlierKind::ChiSquare if q != 2 => {
                Err(config_err("chi-square outliers are defined for 2-D data only"))
            }
            OutlierKind::ChiSquare => ContaminationSpec::chi_square_data1(p_e),
            OutlierKind::Gaussian => ContaminationSpec::gaussian(p_e, q),
        }
    }
}

macro_rules! keyword_enum {
    ($ty:ty, $what:literal, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(config_err(format!(
                        concat!("unknown ", $what, " '{}' (expected one of: {})"),
                        s,
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                $(if *self == $variant { return f.write_str($name); })+
                unreachable!()
            }
        }
    };
}

keyword_enum!(ExperimentKind, "experiment",
    "single" => ExperimentKind::Single,
    "distributed" => ExperimentKind::Distributed,
    "convergence" => ExperimentKind::Convergence,
    "timing" => ExperimentKind::Timing,
    "demo-fig1" => ExperimentKind::DemoFig1,
);
keyword_enum!(MergeRule, "merge rule",
    "mean-distance" => MergeRule::MeanDistance,
    "heavier" => MergeRule::Heavier,
    "center-of-mass" => MergeRule::CenterOfMass,
);
keyword_enum!(Damping, "damping",
    "force-over-mass" => Damping::ForceOverMass,
    "velocity" => Damping::Velocity,
);
keyword_enum!(DatasetId, "dataset",
    "data1" => DatasetId::Data1,
    "data2" => DatasetId::Data2,
);
keyword_enum!(NoiseFamily, "noise",
    "gaussian" => NoiseFamily::Gaussian,
    "laplace" => NoiseFamily::Laplace,
);
keyword_enum!(ExchangeMode, "mode",
    "both" => ExchangeMode::FeaturesAndEstimates,
    "estimates" => ExchangeMode::EstimatesOnly,
    "non-coop" => ExchangeMode::NonCooperative,
);

impl FromStr for Contamination {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(Contamination::none());
        }
        let (kind, p) = s
            .split_once(':')
            .ok_or_else(|| config_err(format!("contamination '{s}' is not none, chi2:P or gaussian:P")))?;
        let kind = match kind {
            "chi2" => OutlierKind::ChiSquare,
            "gaussian" => OutlierKind::Gaussian,
            _ => return Err(config_err(format!("unknown outlier family '{kind}'"))),
        };
        let p_e: f64 = parse_num("contamination", p)?;
        if !(0.0..=1.0).contains(&p_e) {
            return Err(config_err(format!("outlier probability must lie in [0, 1], got {p_e}")));
        }
        Ok(Contamination { kind, p_e })
    }
}

impl fmt::Display for Contamination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.p_e == 0.0 {
            return f.write_str("none");
        }
        let kind = match self.kind {
            OutlierKind::ChiSquare => "chi2",
            OutlierKind::Gaussian => "gaussian",
        };
        write!(f, "{kind}:{}", self.p_e)
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| config_err(format!("invalid value '{v}' for {key}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_num(key, x)).collect()
}

fn parse_exponent(v: &str) -> Result<ExponentRule> {
    match v {
        "adaptive" => Ok(ExponentRule::Adaptive),
        "const" => Ok(ExponentRule::Constant(2.0)),
        _ => {
            let p = v.strip_prefix("const:").unwrap_or(v);
            Ok(ExponentRule::Constant(parse_num("p", p)?))
        }
    }
}

fn show_exponent(e: ExponentRule) -> String {
    match e {
        ExponentRule::Adaptive => "adaptive".into(),
        ExponentRule::Constant(p) => format!("const:{p}"),
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Keys accepted in config files and as `--key` flags.
pub const KEYS: &[&str] = &[
    "experiment",
    "dataset",
    "noise",
    "contamination",
    "mode",
    "runs",
    "seed",
    "out",
    "workers",
    "g",
    "kdamp",
    "eps-r",
    "rx",
    "mmin",
    "dmax",
    "p",
    "dt",
    "max-step",
    "enumerate-every",
    "merge",
    "damping",
    "schedule",
    "clusters",
    "per-phase",
    "batch",
    "nodes",
    "neighbors",
    "node-contamination",
    "sigmas",
    "eps-min",
    "conv-features",
    "conv-steps",
    "dump-units",
];

/// Informational manifest keys, ignored when a manifest is read back.
const MANIFEST_ONLY: &[&str] = &["version", "files"];

/// Growing adds one cluster per phase; stationary streams all clusters at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Growing,
    Stationary,
}

keyword_enum!(ScheduleKind, "schedule",
    "growing" => ScheduleKind::Growing,
    "stationary" => ScheduleKind::Stationary,
);

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub dataset: DatasetId,
    pub noise: NoiseFamily,
    pub contamination: Contamination,
    pub mode: ExchangeMode,
    pub runs: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Worker threads for Monte-Carlo runs; results do not depend on it.
    pub workers: usize,
    pub params: GcParams,
    pub schedule: ScheduleKind,
    /// Number of clusters streamed; defaults to the whole dataset.
    pub clusters: usize,
    pub per_phase: usize,
    pub batch: usize,
    pub nodes: usize,
    pub neighbors: usize,
    /// Outlier probability of each node; empty means `contamination` everywhere.
    pub node_contamination: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub eps_min: f64,
    pub conv_features: usize,
    pub conv_steps: usize,
    /// Runs whose per-step unit positions are written out (demo only).
    pub dump_units: usize,
}

impl ExperimentConfig {
    /// Defaults for `kind`.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let dataset = match kind {
            ExperimentKind::Distributed => DatasetId::Data2,
            _ => DatasetId::Data1,
        };
        let mut cfg = ExperimentConfig {
            kind,
            dataset,
            noise: NoiseFamily::Gaussian,
            contamination: Contamination::none(),
            mode: ExchangeMode::FeaturesAndEstimates,
            runs: 100,
            seed: 1,
            out: None,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            params: GcParams::for_dimension(dataset.dim()),
            schedule: ScheduleKind::Growing,
            clusters: dataset.specs().len(),
            per_phase: 50,
            batch: 10,
            nodes: 10,
            neighbors: 4,
            node_contamination: Vec::new(),
            sigmas: vec![0.5, 3.0, 7.0],
            eps_min: 0.5,
            conv_features: 50,
            conv_steps: 400,
            dump_units: 0,
        };
        match kind {
            ExperimentKind::Distributed => {
                cfg.contamination = Contamination {
                    kind: OutlierKind::Gaussian,
                    p_e: 0.0,
                };
                cfg.node_contamination =
                    vec![0.0, 0.0, 0.0, 0.05, 0.05, 0.05, 0.1, 0.1, 0.1, 0.2];
            }
            ExperimentKind::Convergence => {
                // probes start up to tens of units away from the lone cluster
                cfg.runs = 20;
                cfg.params.d_max = f64::INFINITY;
                cfg.params.max_step = 0.1;
            }
            ExperimentKind::Timing => {
                cfg.runs = 5;
            }
            ExperimentKind::DemoFig1 => {
                cfg.contamination = Contamination {
                    kind: OutlierKind::ChiSquare,
                    p_e: 0.05,
                };
                cfg.params.exponent = ExponentRule::Constant(2.0);
                cfg.params.epsilon_r = 1.0;
                cfg.params.r_x = 2.0;
                cfg.params.m_min = 7.0;
                cfg.dump_units = 1;
            }
            ExperimentKind::Single => {}
        }
        cfg
    }

    /// Resolves `pairs` on top of the defaults of the experiment they name.
    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = pairs
            .keys()
            .find(|k| !KEYS.contains(&k.as_str()) && !MANIFEST_ONLY.contains(&k.as_str()))
        {
            return Err(config_err(format!("unknown key '{k}'")));
        }
        let get = |k: &str| pairs.get(k).map(|v| v.trim());
        let kind = match get("experiment") {
            Some(v) => v.parse()?,
            None => ExperimentKind::Single,
        };
        let mut cfg = Self::defaults(kind);
        if let Some(v) = get("dataset") {
            cfg.dataset = v.parse()?;
            let q = cfg.dataset.dim();
            cfg.params.epsilon_r = if kind == ExperimentKind::DemoFig1 {
                cfg.params.epsilon_r
            } else {
                (q as f64).sqrt()
            };
            cfg.clusters = cfg.dataset.specs().len();
        }
        if kind == ExperimentKind::DemoFig1 && cfg.dataset != DatasetId::Data1 {
            return Err(config_err("demo-fig1 uses the 2-D dataset"));
        }
        if let Some(v) = get("noise") {
            cfg.noise = v.parse()?;
        }
        if let Some(v) = get("contamination") {
            cfg.contamination = v.parse()?;
        }
        if let Some(v) = get("mode") {
            cfg.mode = v.parse()?;
        }
        if let Some(v) = get("runs") {
            cfg.runs = parse_num("runs", v)?;
        }
        if let Some(v) = get("seed") {
            cfg.seed = parse_num("seed", v)?;
        }
        if let Some(v) = get("out") {
            cfg.out = Some(PathBuf::from(v));
        }
        if let Some(v) = get("workers") {
            cfg.workers = parse_num("workers", v)?;
        }
        let p = &mut cfg.params;
        if let Some(v) = get("g") {
            p.g = parse_num("g", v)?;
        }
        if let Some(v) = get("kdamp") {
            p.k_damp = parse_num("kdamp", v)?;
        }
        if let Some(v) = get("eps-r") {
            p.epsilon_r = parse_num("eps-r", v)?;
        }
        if let Some(v) = get("rx") {
            p.r_x = parse_num("rx", v)?;
        }
        if let Some(v) = get("mmin") {
            p.m_min = parse_num("mmin", v)?;
        }
        if let Some(v) = get("dmax") {
            p.d_max = match v {
                "inf" => f64::INFINITY,
                _ => parse_num("dmax", v)?,
            };
        }
        if let Some(v) = get("p") {
            p.exponent = parse_exponent(v)?;
        }
        if let Some(v) = get("dt") {
            p.delta_t = parse_num("dt", v)?;
        }
        if let Some(v) = get("max-step") {
            p.max_step = match v {
                "inf" => f64::INFINITY,
                _ => parse_num("max-step", v)?,
            };
        }
        if let Some(v) = get("damping") {
            p.damping = v.parse()?;
        }
        if let Some(v) = get("merge") {
            p.merge_rule = v.parse()?;
        }
        if let Some(v) = get("enumerate-every") {
            p.enumerate_every = parse_num("enumerate-every", v)?;
        }
        if let Some(v) = get("schedule") {
            cfg.schedule = v.parse()?;
        }
        if let Some(v) = get("clusters") {
            cfg.clusters = parse_num("clusters", v)?;
        }
        if let Some(v) = get("per-phase") {
            cfg.per_phase = parse_num("per-phase", v)?;
        }
        if let Some(v) = get("batch") {
            cfg.batch = parse_num("batch", v)?;
        }
        if let Some(v) = get("nodes") {
            cfg.nodes = parse_num("nodes", v)?;
            if get("node-contamination").is_none() {
                cfg.node_contamination.clear();
            }
        }
        if let Some(v) = get("neighbors") {
            cfg.neighbors = parse_num("neighbors", v)?;
        }
        if let Some(v) = get("node-contamination") {
            cfg.node_contamination = parse_list("node-contamination", v)?;
        }
        if let Some(v) = get("sigmas") {
            cfg.sigmas = parse_list("sigmas", v)?;
        }
        if let Some(v) = get("eps-min") {
            cfg.eps_min = parse_num("eps-min", v)?;
        }
        if let Some(v) = get("conv-features") {
            cfg.conv_features = parse_num("conv-features", v)?;
        }
        if let Some(v) = get("conv-steps") {
            cfg.conv_steps = parse_num("conv-steps", v)?;
        }
        if let Some(v) = get("dump-units") {
            cfg.dump_units = parse_num("dump-units", v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.runs == 0 {
            return Err(config_err("runs must be at least 1"));
        }
        if self.workers == 0 {
            return Err(config_err("workers must be at least 1"));
        }
        let available = self.dataset.specs().len();
        let initial = match (self.kind, self.schedule) {
            (ExperimentKind::DemoFig1, _) => 5,
            (_, ScheduleKind::Growing) => 1,
            (_, ScheduleKind::Stationary) => self.clusters,
        };
        let total = if self.kind == ExperimentKind::DemoFig1 { 6 } else { self.clusters };
        StreamSchedule {
            vectors_per_cluster_per_phase: self.per_phase,
            batch_size: self.batch,
            initial_clusters: initial,
            total_clusters: total,
        }
        .validate(if self.kind == ExperimentKind::DemoFig1 { 6 } else { available })?;
        self.contamination.spec(self.dataset.dim(), self.contamination.p_e)?;
        if self.kind == ExperimentKind::Distributed {
            if self.nodes == 0 {
                return Err(config_err("nodes must be at least 1"));
            }
            if !self.node_contamination.is_empty() && self.node_contamination.len() != self.nodes {
                return Err(config_err(format!(
                    "node-contamination lists {} values for {} nodes",
                    self.node_contamination.len(),
                    self.nodes
                )));
            }
            for &p in &self.node_contamination {
                self.contamination.spec(self.dataset.dim(), p)?;
            }
            if self.neighbors >= self.nodes {
                return Err(config_err("neighbors must be below nodes"));
            }
        }
        if self.kind == ExperimentKind::Convergence {
            if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s > 0.0)) {
                return Err(config_err("sigmas must be a non-empty list of positive values"));
            }
            if !(self.eps_min > 0.0) {
                return Err(config_err("eps-min must be positive"));
            }
            if self.conv_features == 0 || self.conv_steps == 0 {
                return Err(config_err("conv-features and conv-steps must be positive"));
            }
        }
        Ok(())
    }

    /// The resolved configuration as `key=value` pairs, in [`KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let p = &self.params;
        let inf = |x: f64| if x.is_infinite() { "inf".to_string() } else { x.to_string() };
        let mut v: Vec<(&str, String)> = vec![
            ("experiment", self.kind.to_string()),
            ("dataset", self.dataset.to_string()),
            ("noise", self.noise.to_string()),
            ("contamination", self.contamination.to_string()),
            ("mode", self.mode.to_string()),
            ("runs", self.runs.to_string()),
            ("seed", self.seed.to_string()),
        ];
        if let Some(out) = &self.out {
            v.push(("out", out.display().to_string()));
        }
        v.extend([
            ("g", p.g.to_string()),
            ("kdamp", p.k_damp.to_string()),
            ("eps-r", p.epsilon_r.to_string()),
            ("rx", p.r_x.to_string()),
            ("mmin", p.m_min.to_string()),
            ("dmax", inf(p.d_max)),
            ("p", show_exponent(p.exponent)),
            ("dt", p.delta_t.to_string()),
            ("max-step", inf(p.max_step)),
            ("merge", p.merge_rule.to_string()),
            ("damping", p.damping.to_string()),
            ("enumerate-every", p.enumerate_every.to_string()),
            ("schedule", self.schedule.to_string()),
            ("clusters", self.clusters.to_string()),
            ("per-phase", self.per_phase.to_string()),
            ("batch", self.batch.to_string()),
            ("nodes", self.nodes.to_string()),
            ("neighbors", self.neighbors.to_string()),
            ("node-contamination", join(&self.node_contamination)),
            ("sigmas", join(&self.sigmas)),
            ("eps-min", self.eps_min.to_string()),
            ("conv-features", self.conv_features.to_string()),
            ("conv-steps", self.conv_steps.to_string()),
            ("dump-units", self.dump_units.to_string()),
        ]);
        v.into_iter().map(|(k, x)| (k.to_string(), x)).collect()
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped and a
/// repeated key keeps its last value.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(format!("line {}: expected key=value", n + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// A CSV file to be written: name, header and rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.to_string(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceResult {
    pub sigma: f64,
    /// Steps to settle below `eps_min`, per run.
    pub steps: Vec<Option<usize>>,
}

impl ConvergenceResult {
    /// Mean over runs; `None` unless every run settled.
    pub fn mean_steps(&self) -> Option<f64> {
        let all: Option<Vec<usize>> = self.steps.iter().copied().collect();
        all.map(|v| v.iter().sum::<usize>() as f64 / v.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Summary {
    pub rmse_k: Option<f64>,
    pub p_correct: Option<f64>,
    pub centroid_rmse: Option<f64>,
    /// Centroid RMSE at each evaluated vectors-per-cluster count.
    pub centroid_rmse_by_progress: Vec<(usize, Option<f64>)>,
    pub unmatched_estimates: usize,
    pub unmatched_truths: usize,
    pub force_terms: u64,
    pub convergence: Vec<ConvergenceResult>,
    /// Demo runs that showed the 5 then 6 transition.
    pub demo_successes: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
    pub summary: Summary,
    /// Deterministic given the config.
    pub tables: Vec<Table>,
    /// Wall-clock measurements; differ between executions.
    pub timing: Option<Table>,
}

/// RNG of Monte-Carlo run `run`: an independent ChaCha stream of the master seed.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

/// Runs `f(0..n)` on `workers` threads and returns results in index order.
fn monte_carlo<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(&f).collect();
    }
    let mut slots: Vec<Option<Result<T>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|s| {
        let f = &f;
        let chunks: Vec<_> = slots
            .chunks_mut(n.div_ceil(workers))
            .enumerate()
            .map(|(c, chunk)| {
                let base = c * n.div_ceil(workers);
                s.spawn(move || {
                    for (i, slot) in chunk.iter_mut().enumerate() {
                        *slot = Some(f(base + i));
                    }
                })
            })
            .collect();
        for h in chunks {
            h.join().expect("monte-carlo worker panicked");
        }
    });
    slots.into_iter().map(|s| s.expect("every slot filled")).collect()
}

fn demo_specs(noise: NoiseFamily) -> Vec<ClusterSpec> {
    let mut specs = dataset_data1();
    specs.push(ClusterSpec {
        centroid: vec![-4.0, -11.0],
        variances: vec![0.3, 0.3],
        noise: NoiseFamily::Gaussian,
    });
    with_noise(specs, noise)
}

fn schedule_of(cfg: &ExperimentConfig) -> StreamSchedule {
    match (cfg.kind, cfg.schedule) {
        (ExperimentKind::DemoFig1, _) => StreamSchedule {
            vectors_per_cluster_per_phase: cfg.per_phase,
            batch_size: 1,
            initial_clusters: 5,
            total_clusters: 6,
        },
        (_, ScheduleKind::Growing) => StreamSchedule {
            vectors_per_cluster_per_phase: cfg.per_phase,
            batch_size: cfg.batch,
            initial_clusters: 1,
            total_clusters: cfg.clusters,
        },
        (_, ScheduleKind::Stationary) => {
            StreamSchedule::stationary(cfg.clusters, cfg.per_phase, cfg.batch)
        }
    }
}

struct StreamRun {
    record: RunRecord,
    frames: Vec<Vec<String>>,
}

fn single_run(cfg: &ExperimentConfig, specs: &[ClusterSpec], run: usize) -> Result<StreamRun> {
    let q = specs[0].dim();
    let mut rng = run_rng(cfg.seed, run as u64);
    let gc_seed = rng.next_u64();
    let contamination = cfg.contamination.spec(q, cfg.contamination.p_e)?;
    let stream = make_stream(specs, &schedule_of(cfg), &contamination, &mut rng)?;
    let mut gc = GcState::new(q, cfg.params.clone(), gc_seed)?;
    let every_step = cfg.kind == ExperimentKind::DemoFig1;
    let dump = every_step && run < cfg.dump_units;
    let mut record = RunRecord::default();
    let mut frames = Vec::new();
    let mut clock = Instant::now();
    let mut terms = 0;
    for item in &stream {
        gc.ingest(&item.feature)?;
        let est = gc.step();
        if dump {
            for (u, unit) in gc.mobile_units().iter().enumerate() {
                let mut row = vec![run.to_string(), item.feature.arrival.to_string(), u.to_string()];
                row.extend(unit.position.iter().map(|x| x.to_string()));
                row.push(unit.mass.to_string());
                row.push(u8::from(unit.mass >= cfg.params.m_min).to_string());
                frames.push(row);
            }
        }
        if item.eval_point || every_step {
            record.points.push(EvalPoint {
                t: item.feature.arrival,
                progress: item.progress,
                k_true: item.k_true,
                k_hat: vec![est.k_hat],
                centroids: vec![est.centroids],
                seconds: clock.elapsed().as_secs_f64(),
                force_terms: gc.force_terms() - terms,
            });
            terms = gc.force_terms();
            clock = Instant::now();
        }
    }
    Ok(StreamRun { record, frames })
}

fn node_p_e(cfg: &ExperimentConfig) -> Vec<f64> {
    if cfg.node_contamination.is_empty() {
        vec![cfg.contamination.p_e; cfg.nodes]
    } else {
        cfg.node_contamination.clone()
    }
}

/// Node placement is drawn once from the master seed and shared by all runs.
pub fn experiment_topology(cfg: &ExperimentConfig) -> Result<NetworkTopology> {
    let mut rng = run_rng(cfg.seed, u64::MAX);
    build_topology(random_positions(cfg.nodes, &mut rng), cfg.neighbors)
}

fn distributed_run(
    cfg: &ExperimentConfig,
    specs: &[ClusterSpec],
    topology: &NetworkTopology,
    run: usize,
) -> Result<RunRecord> {
    let q = specs[0].dim();
    let mut rng = run_rng(cfg.seed, run as u64);
    let seeds: Vec<u64> = (0..cfg.nodes).map(|_| rng.next_u64()).collect();
    let schedule = schedule_of(cfg);
    let streams: Vec<Vec<StreamItem>> = node_p_e(cfg)
        .iter()
        .map(|&p| make_stream(specs, &schedule, &cfg.contamination.spec(q, p)?, &mut rng))
        .collect::<Result<_>>()?;
    let mut net = Network::new(topology.clone(), cfg.mode, q, &cfg.params, &seeds)?;
    let mut record = RunRecord::default();
    let mut clock = Instant::now();
    let mut terms = 0;
    for t in 0..streams[0].len() {
        let incoming: Vec<Option<FeatureVector>> =
            streams.iter().map(|s| Some(s[t].feature.clone())).collect();
        let out = net.round(&incoming)?;
        let item = &streams[0][t];
        if item.eval_point {
            let total: u64 = net.nodes().iter().map(|n| n.gc.force_terms()).sum();
            record.points.push(EvalPoint {
                t: item.feature.arrival,
                progress: item.progress,
                k_true: item.k_true,
                k_hat: out.iter().map(|o| o.k_hat).collect(),
                centroids: out.into_iter().map(|o| o.local.centroids).collect(),
                seconds: clock.elapsed().as_secs_f64(),
                force_terms: total - terms,
            });
            terms = total;
            clock = Instant::now();
        }
    }
    Ok(record)
}

/// Mass-weighted mean distance of the probes to `center` after each step.
pub fn convergence_series(
    params: &GcParams,
    center: &[f64],
    variance: f64,
    features: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let q = center.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gc_seed = rng.next_u64();
    let mut gc = GcState::new(q, params.clone(), gc_seed)?;
    for n in 0..features {
        let coords: Vec<f64> = center
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + variance.sqrt() * z
            })
            .collect();
        gc.ingest(&FeatureVector::new(coords, n as u64 + 1))?;
    }
    let mut series = Vec::with_capacity(steps);
    for _ in 0..steps {
        gc.step();
        let total = gc.total_mobile_mass();
        let d: f64 = gc
            .mobile_units()
            .iter()
            .map(|u| u.mass * distance(&u.position, center))
            .sum::<f64>()
            / total;
        series.push(d);
    }
    Ok(series)
}

fn truths_for(specs: &[ClusterSpec], p: &EvalPoint) -> Vec<Vec<f64>> {
    specs[..p.k_true].iter().map(|s| s.centroid.clone()).collect()
}

fn k_tables(cfg: &ExperimentConfig, runs: &[RunRecord], tables: &mut Vec<Table>) {
    let mut series = Table::new("series", &["t", "mean_k_hat", "std_k_hat", "k_true"]);
    let points = runs.first().map_or(0, |r| r.points.len());
    for i in 0..points {
        let p0 = &runs[0].points[i];
        let ks: Vec<f64> = runs
            .iter()
            .flat_map(|r| r.points[i].k_hat.iter().map(|&k| k as f64))
            .collect();
        let (m, s) = mean_std(&ks);
        series.push([p0.t.to_string(), m.to_string(), s.to_string(), p0.k_true.to_string()]);
    }
    tables.push(series);

    if cfg.kind == ExperimentKind::Distributed {
        let mut nodes = Table::new(
            "series_nodes",
            &["t", "node", "mean_k_hat", "std_k_hat", "k_true"],
        );
        for i in 0..points {
            let p0 = &runs[0].points[i];
            for j in 0..p0.k_hat.len() {
                let ks: Vec<f64> = runs.iter().map(|r| r.points[i].k_hat[j] as f64).collect();
                let (m, s) = mean_std(&ks);
                nodes.push([
                    p0.t.to_string(),
                    j.to_string(),
                    m.to_string(),
                    s.to_string(),
                    p0.k_true.to_string(),
                ]);
            }
        }
        tables.push(nodes);
    }
}

fn stream_summary(specs: &[ClusterSpec], runs: &[RunRecord]) -> Result<Summary> {
    let truths = |p: &EvalPoint| truths_for(specs, p);
    let mut s = Summary {
        rmse_k: Some(rmse_k(runs)?),
        p_correct: Some(p_correct(runs)?),
        centroid_rmse: pooled_centroid_rmse(runs, truths),
        ..Default::default()
    };
    let mut progress: Vec<usize> = runs[0].points.iter().map(|p| p.progress).collect();
    progress.dedup();
    for pr in progress {
        let subset: Vec<RunRecord> = runs
            .iter()
            .map(|r| RunRecord {
                points: r.points.iter().filter(|p| p.progress == pr).cloned().collect(),
            })
            .collect();
        s.centroid_rmse_by_progress
            .push((pr, pooled_centroid_rmse(&subset, truths)));
    }
    for p in runs.iter().flat_map(|r| &r.points) {
        let truth = truths(p);
        for est in &p.centroids {
            let m = match_centroids(est, &truth);
            s.unmatched_estimates += m.unmatched_estimates;
            s.unmatched_truths += m.unmatched_truths;
        }
        s.force_terms += p.force_terms;
    }
    Ok(s)
}

/// A demo run succeeds when the count is 5 once the five initial clusters
/// have streamed, and reaches 6 within 100 further vectors.
pub fn demo_success(record: &RunRecord, per_phase: usize) -> bool {
    let before = 5 * per_phase;
    let k_at = |i: usize| record.points.get(i).map(|p| p.k_hat[0]);
    k_at(before - 1) == Some(5) && (before..before + 100).any(|i| k_at(i) == Some(6))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    if cfg.kind == ExperimentKind::Convergence {
        return run_convergence(cfg);
    }
    let specs = match cfg.kind {
        ExperimentKind::DemoFig1 => demo_specs(cfg.noise),
        _ => with_noise(cfg.dataset.specs(), cfg.noise),
    };
    let mut tables = Vec::new();
    let mut frames = Vec::new();
    let runs: Vec<RunRecord> = if cfg.kind == ExperimentKind::Distributed {
        let topology = experiment_topology(cfg)?;
        let mut topo = Table::new("topology", &["node", "x", "y", "p_e", "neighborhood"]);
        for (j, (pos, b)) in topology
            .positions
            .iter()
            .zip(&topology.neighborhoods)
            .enumerate()
        {
            let b: Vec<String> = b.iter().map(|x| x.to_string()).collect();
            topo.push([
                j.to_string(),
                pos[0].to_string(),
                pos[1].to_string(),
                node_p_e(cfg)[j].to_string(),
                b.join(" "),
            ]);
        }
        tables.push(topo);
        monte_carlo(cfg.runs, cfg.workers, |r| distributed_run(cfg, &specs, &topology, r))?
    } else {
        let out = monte_carlo(cfg.runs, cfg.workers, |r| single_run(cfg, &specs, r))?;
        out.into_iter()
            .map(|s| {
                frames.extend(s.frames);
                s.record
            })
            .collect()
    };

    let mut summary = stream_summary(&specs, &runs)?;
    k_tables(cfg, &runs, &mut tables);

    let mut by_progress = Table::new("centroids", &["vectors_per_cluster", "centroid_rmse"]);
    for (pr, r) in &summary.centroid_rmse_by_progress {
        by_progress.push([pr.to_string(), opt(*r)]);
    }
    tables.push(by_progress);

    if cfg.kind == ExperimentKind::DemoFig1 {
        summary.demo_successes = Some(
            runs.iter()
                .filter(|r| demo_success(r, cfg.per_phase))
                .count(),
        );
        let mut units = Table::new("units", &["run", "t", "unit", "x1", "x2", "mass", "detected"]);
        units.rows = frames;
        tables.push(units);
    }

    let mut s = Table::new(
        "summary",
        &[
            "experiment",
            "runs",
            "rmse_k",
            "p_correct",
            "centroid_rmse",
            "unmatched_estimates",
            "unmatched_truths",
            "force_terms",
            "demo_successes",
        ],
    );
    s.push([
        cfg.kind.to_string(),
        cfg.runs.to_string(),
        opt(summary.rmse_k),
        opt(summary.p_correct),
        opt(summary.centroid_rmse),
        summary.unmatched_estimates.to_string(),
        summary.unmatched_truths.to_string(),
        summary.force_terms.to_string(),
        summary.demo_successes.map_or(String::new(), |d| d.to_string()),
    ]);
    tables.insert(0, s);

    let mut timing = Table::new(
        "timing",
        &["run", "t", "features", "seconds", "force_terms"],
    );
    for (r, run) in runs.iter().enumerate() {
        for p in &run.points {
            timing.push([
                r.to_string(),
                p.t.to_string(),
                (p.t * p.k_hat.len() as u64).to_string(),
                p.seconds.to_string(),
                p.force_terms.to_string(),
            ]);
        }
    }

    Ok(Report {
        config: cfg.clone(),
        runs,
        summary,
        tables,
        timing: Some(timing),
    })
}

fn run_convergence(cfg: &ExperimentConfig) -> Result<Report> {
    let center = [3.0, 3.0];
    let mut series_table = Table::new(
        "series",
        &["sigma", "step", "mean_distance", "std_distance"],
    );
    let mut runs_table = Table::new("convergence", &["sigma", "run", "steps"]);
    let mut summary = Summary::default();
    for (si, &sigma) in cfg.sigmas.iter().enumerate() {
        let params = GcParams {
            r_x: sigma,
            ..cfg.params.clone()
        };
        let all = monte_carlo(cfg.runs, cfg.workers, |r| {
            let seed = run_rng(cfg.seed, ((si as u64) << 32) | r as u64).next_u64();
            convergence_series(&params, &center, 0.3, cfg.conv_features, cfg.conv_steps, seed)
        })?;
        for step in 0..cfg.conv_steps {
            let ds: Vec<f64> = all.iter().map(|s| s[step]).collect();
            let (m, sd) = mean_std(&ds);
            series_table.push([sigma.to_string(), (step + 1).to_string(), m.to_string(), sd.to_string()]);
        }
        let steps: Vec<Option<usize>> = all.iter().map(|s| convergence_time(s, cfg.eps_min)).collect();
        for (r, st) in steps.iter().enumerate() {
            runs_table.push([
                sigma.to_string(),
                r.to_string(),
                st.map_or(String::new(), |x| x.to_string()),
            ]);
        }
        summary.convergence.push(ConvergenceResult { sigma, steps });
    }
    let mut s = Table::new("summary", &["sigma", "runs", "converged", "mean_steps"]);
    for c in &summary.convergence {
        s.push([
            c.sigma.to_string(),
            c.steps.len().to_string(),
            c.steps.iter().filter(|x| x.is_some()).count().to_string(),
            opt(c.mean_steps()),
        ]);
    }
    Ok(Report {
        config: cfg.clone(),
        runs: Vec::new(),
        summary,
        tables: vec![s, series_table, runs_table],
        timing: None,
    })
}

/// Writes every table as `<name>.csv`, `timing.csv` for the timing
/// experiment, and `manifest.txt` listing the resolved configuration.
pub fn write_report(report: &Report, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut tables: Vec<&Table> = report.tables.iter().collect();
    if report.config.kind == ExperimentKind::Timing {
        tables.extend(&report.timing);
    }
    for t in tables {
        let path = dir.join(format!("{}.csv", t.name));
        fs::write(&path, t.to_csv())?;
        written.push(path);
    }
    let mut manifest = String::new();
    manifest.push_str(&format!("version={}\n", env!("CARGO_PKG_VERSION")));
    for (k, v) in report.config.to_pairs() {
        if k != "out" {
            manifest.push_str(&format!("{k}={v}\n"));
        }
    }
    let files: Vec<String> = written
        .iter()
        .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .collect();
    manifest.push_str(&format!("files={}\n", files.join(",")));
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(kv: &[(&str, &str)]) -> BTreeMap<String, String> {
        kv.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn small(kind: &str) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::from_pairs(&pairs(&[
            ("experiment", kind),
            ("runs", "4"),
            ("per-phase", "10"),
        ]))
        .unwrap();
        cfg.clusters = 3;
        cfg
    }

    #[test]
    fn config_text() {
        let m = parse_config_text("# c\n\nruns = 5\nseed=2\nruns=7\n").unwrap();
        assert_eq!(m["runs"], "7");
        assert_eq!(m["seed"], "2");
        assert!(parse_config_text("runs 5").is_err());
    }

    #[test]
    fn unknown_key_rejected() {
        let e = ExperimentConfig::from_pairs(&pairs(&[("colour", "red")])).unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn bad_values_rejected() {
        for (k, v) in [
            ("experiment", "fig9"),
            ("contamination", "chi2:1.5"),
            ("contamination", "poisson:0.1"),
            ("kdamp", "1.2"),
            ("mmin", "1"),
            ("runs", "0"),
            ("p", "cubic"),
            ("mode", "gossip"),
        ] {
            let r = ExperimentConfig::from_pairs(&pairs(&[(k, v)]));
            assert!(r.is_err(), "{k}={v} accepted");
        }
    }

    #[test]
    fn overrides_apply() {
        let cfg = ExperimentConfig::from_pairs(&pairs(&[
            ("g", "2"),
            ("eps-r", "0.7"),
            ("dmax", "inf"),
            ("p", "const:2.5"),
            ("contamination", "chi2:0.05"),
        ]))
        .unwrap();
        assert_eq!(cfg.params.g, 2.0);
        assert_eq!(cfg.params.epsilon_r, 0.7);
        assert!(cfg.params.d_max.is_infinite());
        assert_eq!(cfg.params.exponent, ExponentRule::Constant(2.5));
        assert_eq!(cfg.contamination.kind, OutlierKind::ChiSquare);
        let bare = ExperimentConfig::from_pairs(&pairs(&[("p", "const")])).unwrap();
        assert_eq!(bare.params.exponent, ExponentRule::Constant(2.0));
    }

    #[test]
    fn manifest_round_trip() {
        for kind in ["single", "distributed", "convergence", "timing", "demo-fig1"] {
            let mut cfg = small(kind);
            cfg.params.max_step = 0.3;
            let text: String = cfg
                .to_pairs()
                .into_iter()
                .map(|(k, v)| format!("{k}={v}\n"))
                .collect();
            let text = format!("version=0\n{text}files=a.csv\n");
            let back = ExperimentConfig::from_pairs(&parse_config_text(&text).unwrap()).unwrap();
            assert_eq!(back, cfg, "{kind}");
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let mut a = small("single");
        a.workers = 1;
        let mut b = a.clone();
        b.workers = 3;
        let ra = run_experiment(&a).unwrap();
        let rb = run_experiment(&b).unwrap();
        assert_eq!(ra.summary, rb.summary);
        assert_eq!(ra.tables, rb.tables);
        assert_eq!(without_clock(&ra.runs), without_clock(&rb.runs));
    }

    fn without_clock(runs: &[RunRecord]) -> Vec<RunRecord> {
        let mut runs = runs.to_vec();
        runs.iter_mut()
            .flat_map(|r| &mut r.points)
            .for_each(|p| p.seconds = 0.0);
        runs
    }

    #[test]
    fn rerun_is_identical() {
        let mut cfg = small("distributed");
        cfg.runs = 2;
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.tables, b.tables);
    }

    #[test]
    fn run_streams_differ() {
        use rand::RngCore;
        let x = run_rng(1, 0).next_u64();
        assert_eq!(x, run_rng(1, 0).next_u64());
        assert_ne!(x, run_rng(1, 1).next_u64());
        assert_ne!(x, run_rng(2, 0).next_u64());
    }

    #[test]
    fn demo_success_rule() {
        let rec = |ks: &[usize]| RunRecord {
            points: ks
                .iter()
                .map(|&k| EvalPoint {
                    k_hat: vec![k],
                    ..Default::default()
                })
                .collect(),
        };
        let mut ks = vec![5; 5];
        ks.extend([5, 5, 6]);
        assert!(demo_success(&rec(&ks), 1));
        ks[4] = 4;
        assert!(!demo_success(&rec(&ks), 1));
        assert!(!demo_success(&rec(&[5; 200]), 1));
    }

    #[test]
    fn report_files() {
        let dir = std::env::temp_dir().join(format!("gravclust-report-{}", std::process::id()));
        let report = run_experiment(&small("single")).unwrap();
        let files = write_report(&report, &dir).unwrap();
        let names: Vec<String> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"summary.csv".to_string()));
        assert!(names.contains(&"series.csv".to_string()));
        assert_eq!(names.last().unwrap(), "manifest.txt");
        let manifest = fs::read_to_string(dir.join("manifest.txt")).unwrap();
        assert!(manifest.contains("experiment=single\n"));
        assert!(!manifest.contains("out="));
        fs::remove_dir_all(&dir).unwrap();
    }
}
