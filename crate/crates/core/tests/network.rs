use gravclust::gc::{FeatureVector, GcParams, GcState};
use gravclust::network::{build_topology, random_positions, ExchangeMode, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_inputs(rng: &mut ChaCha8Rng, nodes: usize, rounds: usize) -> Vec<Vec<Option<FeatureVector>>> {
    (0..rounds)
        .map(|t| {
            (0..nodes)
                .map(|_| {
                    rng.random_bool(0.8).then(|| {
                        let c = if rng.random_bool(0.5) { 0.0 } else { 6.0 };
                        FeatureVector::new(
                            vec![c + rng.random_range(-1.0..1.0), c + rng.random_range(-1.0..1.0)],
                            t as u64,
                        )
                    })
                })
                .collect()
        })
        .collect()
}

const MODES: [ExchangeMode; 3] = [
    ExchangeMode::FeaturesAndEstimates,
    ExchangeMode::EstimatesOnly,
    ExchangeMode::NonCooperative,
];

#[test]
fn lone_node_matches_single_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = random_inputs(&mut rng, 1, 120);
    let params = GcParams::for_dimension(2);
    for mode in MODES {
        let topo = build_topology(vec![vec![0.5, 0.5]], 0).unwrap();
        let mut net = Network::new(topo, mode, 2, &params, &[77]).unwrap();
        let mut single = GcState::new(2, params.clone(), 77).unwrap();
        for round in &inputs {
            let out = net.round(round).unwrap();
            if let Some(d) = &round[0] {
                single.ingest(d).unwrap();
            }
            let est = single.step();
            assert_eq!(out[0].k_hat, est.k_hat);
            assert_eq!(out[0].local, est);
        }
        assert_eq!(net.nodes()[0].gc.mobile_units(), single.mobile_units());
    }
}

#[test]
fn non_cooperative_nodes_ignore_each_other() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let topo = build_topology(random_positions(6, &mut rng), 3).unwrap();
    let a = random_inputs(&mut rng, 6, 80);
    let mut b = random_inputs(&mut rng, 6, 80);
    for (ra, rb) in a.iter().zip(&mut b) {
        rb[2] = ra[2].clone();
    }
    let params = GcParams::for_dimension(2);
    let seeds = [1, 2, 3, 4, 5, 6];
    let mut na = Network::new(topo.clone(), ExchangeMode::NonCooperative, 2, &params, &seeds).unwrap();
    let mut nb = Network::new(topo, ExchangeMode::NonCooperative, 2, &params, &seeds).unwrap();
    for (ra, rb) in a.iter().zip(&b) {
        let oa = na.round(ra).unwrap();
        let ob = nb.round(rb).unwrap();
        assert_eq!(oa[2], ob[2]);
    }
}

#[test]
fn every_node_keeps_one_mass_per_stored_vector() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let topo = build_topology(random_positions(10, &mut rng), 4).unwrap();
    let inputs = random_inputs(&mut rng, 10, 60);
    let seeds: Vec<u64> = (0..10).collect();
    for mode in MODES {
        let mut net = Network::new(topo.clone(), mode, 2, &GcParams::for_dimension(2), &seeds).unwrap();
        for round in &inputs {
            net.round(round).unwrap();
            for node in net.nodes() {
                assert_eq!(node.gc.total_mobile_mass(), node.ingested() as f64);
            }
        }
    }
}

#[test]
fn fused_count_is_a_neighbourhood_median() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let topo = build_topology(random_positions(7, &mut rng), 2).unwrap();
    let inputs = random_inputs(&mut rng, 7, 100);
    let seeds: Vec<u64> = (10..17).collect();
    let mut net = Network::new(topo.clone(), ExchangeMode::EstimatesOnly, 2, &GcParams::for_dimension(2), &seeds).unwrap();
    for round in &inputs {
        let out = net.round(round).unwrap();
        for (j, o) in out.iter().enumerate() {
            let mut ks: Vec<usize> = topo.neighborhoods[j].iter().map(|&l| out[l].local.k_hat).collect();
            ks.sort_unstable();
            assert_eq!(o.k_hat, ks[(ks.len() - 1) / 2]);
        }
    }
}
