mod common;

use netdyn::dynamics::{
    self, DopriOptions, DynamicsConstants, DynamicsFamily, DynamicsParams, DynamicsSpec, IcMode, TrajectorySet,
};
use netdyn::graph::{self, TopologyFamily, TopologySpec, WeightedGraph};
use proptest::prelude::*;

fn er(n: usize, p: f64, seed: u64) -> WeightedGraph {
    graph::generate(&TopologySpec {
        family: TopologyFamily::ErdosRenyi,
        n_nodes: n,
        p,
        seed,
        ..Default::default()
    })
    .unwrap()
}

fn spec(params: DynamicsParams, t_final: f64, seed: u64) -> DynamicsSpec {
    DynamicsSpec {
        params,
        t_final,
        n_timestamps: 200,
        seed,
    }
}

/// Independent dense-matrix SIS right-hand side.
fn sis_oracle(a: &[Vec<f64>], delta: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| -delta[i] * x[i] + (1.0 - x[i]) * (0..x.len()).map(|j| a[i][j] * x[j]).sum::<f64>())
        .collect()
}

#[test]
fn sis_matches_brute_force_euler_and_stays_in_unit_interval() {
    let g = er(5, 0.6, 4);
    let c = DynamicsConstants::default();
    let delta = dynamics::sample_sis_delta(&g, 9, &c).unwrap();
    let s = spec(DynamicsParams::Sis { delta: delta.clone() }, 5.0, 0);
    let x0 = dynamics::sample_initial_condition(DynamicsFamily::Sis, 5, IcMode::InDistribution, 2);
    let traj = dynamics::integrate(&s, &g, &x0).unwrap();

    let a: Vec<Vec<f64>> = (0..5).map(|i| g.adjacency().row(i).to_vec()).collect();
    let h: f64 = 1e-4;
    let grid = s.time_grid();
    let mut x = x0.clone();
    let mut t = 0.0;
    let mut worst: f64 = 0.0;
    for (k, &tk) in grid.iter().enumerate() {
        while t < tk - 1e-12 {
            let step = h.min(tk - t);
            let d = sis_oracle(&a, &delta, &x);
            for i in 0..5 {
                x[i] += step * d[i];
            }
            t += step;
            assert!(x.iter().all(|v| (0.0..=1.0).contains(v)), "Euler left [0, 1] at t = {t}");
        }
        for i in 0..5 {
            worst = worst.max((x[i] - traj.get(i, k, 0)).abs());
        }
    }
    // Euler is first order: global error O(h).
    assert!(worst < 1e-3, "max deviation from Euler {worst}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sis_trajectories_stay_in_unit_interval(seed in any::<u64>(), n in 2usize..25) {
        let g = er(n, 0.3, seed);
        let c = DynamicsConstants::default();
        let delta = dynamics::sample_sis_delta(&g, seed ^ 1, &c).unwrap();
        let x0 = dynamics::sample_initial_condition(DynamicsFamily::Sis, n, IcMode::InDistribution, seed ^ 2);
        let traj = dynamics::integrate(&spec(DynamicsParams::Sis { delta }, 5.0, 0), &g, &x0).unwrap();
        prop_assert!(traj.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn cooperative_dynamics_stay_nonnegative(seed in any::<u64>(), fam in 0usize..5) {
        let family = DynamicsFamily::ALL[fam];
        let g = er(12, 0.3, seed);
        let p = dynamics::sample_params(family, &g, seed, &DynamicsConstants::default()).unwrap();
        let x0 = dynamics::sample_initial_condition(family, 12, IcMode::InDistribution, seed);
        let traj = dynamics::integrate(&spec(p, family.default_t_final(), 0), &g, &x0).unwrap();
        // Adaptive steps may dip transiently below zero near an absorbing 0.
        prop_assert!(traj.data().iter().all(|&v| v >= -1e-6), "min {}", traj.data().iter().cloned().fold(f64::INFINITY, f64::min));
    }
}

/// Mixed absolute/relative norm: Population states grow to O(10), where the
/// coarse run's own local tolerance is already `rtol * |x| > 1e-5`.
#[test]
fn tolerance_refinement_changes_states_by_less_than_1e_5() {
    let tight = DopriOptions {
        rtol: 1e-9,
        atol: 1e-11,
        ..Default::default()
    };
    for (k, &family) in DynamicsFamily::ALL.iter().enumerate() {
        let g = er(10, 0.4, 100 + k as u64);
        let p = dynamics::sample_params(family, &g, 7, &DynamicsConstants::default()).unwrap();
        let x0 = dynamics::sample_initial_condition(family, 10, IcMode::InDistribution, 8);
        let s = spec(p, family.default_t_final(), 0);
        let coarse = dynamics::integrate(&s, &g, &x0).unwrap();
        let fine = dynamics::integrate_with(&s, &g, &x0, &tight).unwrap();
        let diff = coarse
            .data()
            .iter()
            .zip(fine.data())
            .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
            .fold(0.0, f64::max);
        assert!(diff < 1e-5, "{family:?}: {diff}");
    }
}

/// With no edges the network is N independent scalar systems. Both sides run
/// at tight tolerances so the step sequences do not dominate the comparison.
#[test]
fn zero_adjacency_decouples_into_scalar_systems() {
    let opts = DopriOptions {
        rtol: 1e-11,
        atol: 1e-13,
        ..Default::default()
    };
    let empty = WeightedGraph::from_undirected(6, &[]).unwrap();
    let single = WeightedGraph::from_undirected(1, &[]).unwrap();
    for &family in DynamicsFamily::ALL.iter() {
        let c = DynamicsConstants::default();
        let p = dynamics::sample_params(family, &empty, 3, &c).unwrap();
        let x0 = dynamics::sample_initial_condition(family, 6, IcMode::InDistribution, 4);
        let s = spec(p.clone(), family.default_t_final(), 0);
        let joint = dynamics::integrate_with(&s, &empty, &x0, &opts).unwrap();
        for i in 0..6 {
            let pi = match &p {
                DynamicsParams::Sis { delta } => DynamicsParams::Sis { delta: vec![delta[i]] },
                DynamicsParams::LotkaVolterra { alpha, theta } => DynamicsParams::LotkaVolterra {
                    alpha: vec![alpha[i]],
                    theta: vec![theta[i]],
                },
                other => other.clone(),
            };
            let alone = dynamics::integrate_with(&spec(pi, s.t_final, 0), &single, &[x0[i]], &opts).unwrap();
            for t in 0..200 {
                let d = (joint.get(i, t, 0) - alone.get(0, t, 0)).abs();
                assert!(d < 1e-8, "{family:?} node {i} t {t}: {d}");
            }
        }
    }
}

#[test]
fn noise_is_unbiased_monte_carlo() {
    let traj = TrajectorySet::from_time_major(&[vec![2.5], vec![1.0]], vec![0.0, 1.0], 1).unwrap();
    let (sigma, n) = (0.1, 10_000);
    let draws: Vec<f64> = (0..n)
        .map(|s| dynamics::add_observation_noise(&traj, 1, sigma, s).unwrap().get(0, 0, 0))
        .collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let se = sigma * 2.5 / (n as f64).sqrt();
    assert!((mean - 2.5).abs() < 3.0 * se, "mean {mean}");
    let noisy = dynamics::add_observation_noise(&traj, 1, sigma, 1).unwrap();
    assert_eq!(noisy.get(0, 1, 0), 1.0, "prediction window untouched");
}

#[test]
fn sis_reproduction_number_is_target() {
    for seed in 0..20 {
        let g = er(30, 0.2, seed);
        let delta = dynamics::sample_sis_delta(&g, seed, &DynamicsConstants::default()).unwrap();
        assert!(delta.iter().all(|&d| d > 0.0));
        let r0 = dynamics::sis_r0(&g, &delta).unwrap();
        assert!((r0 - 1.5).abs() < 1e-6, "R0 = {r0}");
    }
}

#[test]
fn simulation_is_bitwise_deterministic() {
    let topo = TopologySpec {
        n_nodes: 15,
        seed: 5,
        ..Default::default()
    };
    let c = DynamicsConstants::default();
    for &family in DynamicsFamily::ALL.iter() {
        let a = dynamics::simulate_instance(family, &topo, &c, IcMode::InDistribution, 2.0, 50, 9).unwrap();
        let b = dynamics::simulate_instance(family, &topo, &c, IcMode::InDistribution, 2.0, 50, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.2.is_finite());
    }
}
