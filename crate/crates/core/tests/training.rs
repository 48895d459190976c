use netdyn::dataset::{self, DatasetSpec, Split};
use netdyn::dynamics::{DynamicsFamily, TrajectorySet};
use netdyn::graph::TopologySpec;
use netdyn::model::{ModelConfig, OdeKind};
use netdyn::train::{self, Sample, TrainConfig};

fn small_dataset(seed: u64, n_train: usize) -> dataset::Dataset {
    let spec = DatasetSpec {
        dynamics: DynamicsFamily::Regulatory,
        topology: TopologySpec {
            n_nodes: 8,
            p: 0.4,
            ..Default::default()
        },
        n_train,
        n_val: 1,
        n_test: 2,
        n_timestamps: 40,
        ..Default::default()
    };
    dataset::generate(&spec, seed, true).unwrap()
}

fn small_model(ode_type: OdeKind) -> ModelConfig {
    ModelConfig {
        latent_dim: 6,
        n_heads: 2,
        ode_type,
        t_obs: 8,
        ..Default::default()
    }
}

#[test]
fn one_epoch_is_bitwise_reproducible() {
    let ds = small_dataset(1, 3);
    let train_set = ds.samples(Split::Train, 8).unwrap();
    let val = ds.samples(Split::Val, 8).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        seed: 5,
        deterministic: true,
        ..Default::default()
    };
    for ode in [OdeKind::StaticEdge, OdeKind::AttentionEdge] {
        let (a, ha) = train::train(&small_model(ode), &train_set, &val, &cfg).unwrap();
        let (b, hb) = train::train(&small_model(ode), &train_set, &val, &cfg).unwrap();
        assert_eq!(a.params().blob(), b.params().blob());
        assert_eq!(ha, hb);
    }
}

#[test]
fn loss_decreases_over_five_epochs_for_most_seeds() {
    let ds = small_dataset(2, 1);
    let train_set = ds.samples(Split::Train, 8).unwrap();
    let mut decreased = 0;
    for seed in 0..10 {
        let cfg = TrainConfig {
            epochs: 5,
            seed,
            ..Default::default()
        };
        let (_, h) = train::train(&small_model(OdeKind::StaticEdge), &train_set, &[], &cfg).unwrap();
        if h[4].train_loss < h[0].train_loss {
            decreased += 1;
        }
    }
    assert!(decreased >= 9, "loss decreased for {decreased}/10 seeds");
}

#[test]
fn schedule_is_nonincreasing_and_ends_at_lr_min() {
    let cfg = TrainConfig {
        epochs: 37,
        lr_min: 1e-4,
        ..Default::default()
    };
    let lrs: Vec<f64> = (0..=37).map(|e| train::cosine_lr(&cfg, e)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    assert!((lrs[37] - 1e-4).abs() < 1e-12);
}

#[test]
fn empty_training_set_is_config_error() {
    let e = train::train(&small_model(OdeKind::SelfOnly), &[], &[], &TrainConfig::default()).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn report_has_one_row_per_trajectory_and_oracle_scores_zero() {
    let ds = small_dataset(3, 1);
    let test = ds.samples(Split::Test, 8).unwrap();
    let oracle: Vec<_> = test.iter().map(|s| s.targets.clone()).collect();
    let r = train::report_from_predictions(&test, &oracle).unwrap();
    assert_eq!(r.per_trajectory.len(), test.len());
    assert_eq!(r.aggregate.mae_mean, 0.0);
    assert_eq!(r.aggregate.rmse_mean, 0.0);
    assert_eq!(r.per_timestamp.mae.len(), 32);
}

fn series(t: usize) -> TrajectorySet {
    let states: Vec<Vec<f64>> = (0..t).map(|k| vec![k as f64, 2.0 * k as f64 + 1.0]).collect();
    TrajectorySet::from_time_major(&states, (0..t).map(|k| k as f64).collect(), 1).unwrap()
}

#[test]
fn transductive_windows_count_and_do_not_overlap() {
    let s = series(100);
    for (t_obs, t_pred, split) in [(21, 7, 70), (21, 14, 60), (21, 21, 50)] {
        let w = train::transductive_windows(&s, t_obs, t_pred, split).unwrap();
        assert_eq!(w.train.len(), split - (t_obs + t_pred) + 1);
        // Window contents are the time index, so the last training target
        // and first test observation identify the timestamps used.
        let last_train = w.train.iter().map(|x| x.targets.last().unwrap().data()[0]).fold(0.0, f64::max);
        let first_test = w.test.iter().map(|x| x.obs.row(0)[0]).fold(f64::INFINITY, f64::min);
        assert!(last_train < split as f64 && first_test >= split as f64);
        assert!(w.test.iter().all(|x| x.targets.len() == t_pred));
    }
    assert_eq!(train::transductive_windows(&series(20), 21, 7, 20).unwrap_err().exit_code(), 2);
}

#[test]
fn persistence_baseline_repeats_last_observation() {
    let s = Sample::from_trajectory(&series(12), "s", 4).unwrap();
    let p = s.persistence();
    assert_eq!(p.len(), 8);
    assert_eq!(p[7].data(), &[3.0, 7.0]);
}
