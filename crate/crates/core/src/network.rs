//! Multi-node clustering with neighbourhood exchange and median fusion.
//!
//! Every round each node stores its own new vector, optionally pulls the
//! vectors its neighbours received in the same round, runs one local step
//! and then replaces its count by the median of the counts in its
//! neighbourhood.

use rand::Rng;

use crate::error::{config_err, Error, Result};
use crate::gc::{ClusterEstimate, FeatureVector, GcParams, GcState};
use crate::vecmath::squared_distance;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    pub positions: Vec<Vec<f64>>,
    /// `neighborhoods[j]` starts with `j` and lists its neighbours nearest first.
    pub neighborhoods: Vec<Vec<usize>>,
}

impl NetworkTopology {
    pub fn len(&self) -> usize {
        self.neighborhoods.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighborhoods.is_empty()
    }
}

/// Links each node to itself and its `k` nearest nodes; distance ties go to
/// the lower index.
pub fn build_topology(positions: Vec<Vec<f64>>, k: usize) -> Result<NetworkTopology> {
    let j = positions.len();
    if j == 0 {
        return Err(Error::Empty("topology"));
    }
    if k >= j {
        return Err(config_err(format!(
            "k_neighbors must be below the node count ({j}), got {k}"
        )));
    }
    let q = positions[0].len();
    if let Some(p) = positions.iter().find(|p| p.len() != q) {
        return Err(Error::DimensionMismatch {
            expected: q,
            found: p.len(),
        });
    }
    let neighborhoods = (0..j)
        .map(|a| {
            let mut others: Vec<(f64, usize)> = (0..j)
                .filter(|&b| b != a)
                .map(|b| (squared_distance(&positions[a], &positions[b]), b))
                .collect();
            others.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            std::iter::once(a)
                .chain(others.into_iter().take(k).map(|(_, b)| b))
                .collect()
        })
        .collect();
    Ok(NetworkTopology {
        positions,
        neighborhoods,
    })
}

/// `count` nodes placed uniformly in the unit square.
pub fn random_positions<R: Rng + ?Sized>(count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| vec![rng.random::<f64>(), rng.random::<f64>()])
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExchangeMode {
    FeaturesAndEstimates,
    EstimatesOnly,
    NonCooperative,
}

/// Median of a non-empty multiset; the lower middle value for even sizes.
pub fn fuse_median(estimates: &[usize]) -> Result<usize> {
    if estimates.is_empty() {
        return Err(Error::Empty("median fusion"));
    }
    let mut v = estimates.to_vec();
    v.sort_unstable();
    Ok(v[(v.len() - 1) / 2])
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub gc: GcState,
    inbox_features: Vec<(FeatureVector, usize)>,
    inbox_estimates: Vec<(usize, usize)>,
}

impl NodeState {
    /// Total number of vectors this node has stored.
    pub fn ingested(&self) -> usize {
        self.gc.fixed_count()
    }
}

/// Output of one node for one round.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeOutput {
    /// Fused count.
    pub k_hat: usize,
    /// The node's own detection before fusion.
    pub local: ClusterEstimate,
}

#[derive(Debug, Clone)]
pub struct Network {
    topology: NetworkTopology,
    mode: ExchangeMode,
    nodes: Vec<NodeState>,
}

impl Network {
    /// Node `j` is seeded with `seeds[j]`.
    pub fn new(
        topology: NetworkTopology,
        mode: ExchangeMode,
        q: usize,
        params: &GcParams,
        seeds: &[u64],
    ) -> Result<Self> {
        if seeds.len() != topology.len() {
            return Err(config_err(format!(
                "{} seeds for {} nodes",
                seeds.len(),
                topology.len()
            )));
        }
        let nodes = seeds
            .iter()
            .map(|&s| {
                Ok(NodeState {
                    gc: GcState::new(q, params.clone(), s)?,
                    inbox_features: Vec::new(),
                    inbox_estimates: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Network {
            topology,
            mode,
            nodes,
        })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn mode(&self) -> ExchangeMode {
        self.mode
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    /// One synchronous round. `incoming[j]` is node `j`'s new vector, if any.
    pub fn round(&mut self, incoming: &[Option<FeatureVector>]) -> Result<Vec<NodeOutput>> {
        if incoming.len() != self.nodes.len() {
            return Err(config_err(format!(
                "{} inputs for {} nodes",
                incoming.len(),
                self.nodes.len()
            )));
        }
        let q = self.nodes[0].gc.dim();
        for d in incoming.iter().flatten() {
            if d.coords.len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    found: d.coords.len(),
                });
            }
        }

        for (node, d) in self.nodes.iter_mut().zip(incoming) {
            if let Some(d) = d {
                node.gc.ingest(d)?;
            }
        }

        if self.mode == ExchangeMode::FeaturesAndEstimates {
            for (j, node) in self.nodes.iter_mut().enumerate() {
                for &l in &self.topology.neighborhoods[j][1..] {
                    if let Some(d) = &incoming[l] {
                        node.inbox_features.push((d.clone(), l));
                    }
                }
            }
            for node in &mut self.nodes {
                for (d, _) in std::mem::take(&mut node.inbox_features) {
                    node.gc.ingest(&d)?;
                }
            }
        }

        let local: Vec<ClusterEstimate> = self.nodes.iter_mut().map(|n| n.gc.step()).collect();

        let mut out = Vec::with_capacity(self.nodes.len());
        for (j, node) in self.nodes.iter_mut().enumerate() {
            let k_hat = if self.mode == ExchangeMode::NonCooperative {
                local[j].k_hat
            } else {
                for &l in &self.topology.neighborhoods[j] {
                    node.inbox_estimates.push((l, local[l].k_hat));
                }
                let ks: Vec<usize> = node.inbox_estimates.drain(..).map(|(_, k)| k).collect();
                fuse_median(&ks)?
            };
            out.push(NodeOutput {
                k_hat,
                local: local[j].clone(),
            });
        }
        Ok(out)
    }
}
