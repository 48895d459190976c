use netdyn::metrics::{self, CurveAccumulator, MetricReport};
use proptest::prelude::*;

fn values(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| (prop::collection::vec(-10.0..10.0f64, n), prop::collection::vec(-10.0..10.0f64, n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn rmse_dominates_mae((p, t) in values(1..64)) {
        let mae = metrics::mae(&p, &t).unwrap();
        prop_assert!(mae >= 0.0);
        prop_assert!(metrics::rmse(&p, &t).unwrap() >= mae - 1e-12);
    }

    #[test]
    fn scale_covariance((p, t) in values(1..32), c in -5.0..5.0f64) {
        prop_assume!(c.abs() > 1e-3);
        let sp: Vec<f64> = p.iter().map(|v| c * v).collect();
        let st: Vec<f64> = t.iter().map(|v| c * v).collect();
        let mae = metrics::mae(&p, &t).unwrap();
        prop_assert!((metrics::mae(&sp, &st).unwrap() - c.abs() * mae).abs() <= 1e-9 * (1.0 + mae));
        if let (Ok(a), Ok(b)) = (metrics::mape(&p, &t), metrics::mape(&sp, &st)) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        }
    }

    #[test]
    fn permutation_invariance((p, t) in values(2..32), rot in 1usize..31) {
        let k = rot % p.len();
        let mut rp = p.clone();
        let mut rt = t.clone();
        rp.rotate_left(k);
        rt.rotate_left(k);
        let a = MetricReport::compute(&p, &t).unwrap();
        let b = MetricReport::compute(&rp, &rt).unwrap();
        prop_assert!((a.mae - b.mae).abs() < 1e-12 && (a.rmse - b.rmse).abs() < 1e-12);
    }
}

#[test]
fn rmse_dominates_mae_on_a_thousand_tensors() {
    use rand::{Rng, SeedableRng};
    let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let n = r.random_range(1..200);
        let p: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        assert!(metrics::rmse(&p, &t).unwrap() >= metrics::mae(&p, &t).unwrap());
    }
}

#[test]
fn perfect_prediction_scores_zero() {
    let t = [1.0, -2.0, 0.5];
    let r = MetricReport::compute(&t, &t).unwrap();
    assert_eq!((r.mape, r.mae, r.rmse), (Some(0.0), 0.0, 0.0));
}

#[test]
fn constant_error_gives_flat_curve_whose_mean_is_mae() {
    let truth: Vec<Vec<f64>> = (0..5).map(|k| vec![k as f64 + 1.0, 2.0, -1.0]).collect();
    let pred: Vec<Vec<f64>> = truth.iter().map(|r| r.iter().map(|v| v + 0.3).collect()).collect();
    let c = metrics::error_vs_time(&pred, &truth).unwrap();
    assert!(c.mae.iter().all(|v| (v - 0.3).abs() < 1e-12));

    let truth: Vec<Vec<f64>> = (0..4).map(|k| vec![k as f64, 1.0 - k as f64]).collect();
    let pred: Vec<Vec<f64>> = (0..4).map(|k| vec![(k * k) as f64, 0.5]).collect();
    let c = metrics::error_vs_time(&pred, &truth).unwrap();
    let flat = |v: &[Vec<f64>]| v.concat();
    let mae = metrics::mae(&flat(&pred), &flat(&truth)).unwrap();
    assert!((c.mae.iter().sum::<f64>() / 4.0 - mae).abs() < 1e-12);
}

#[test]
fn averaging_curves_equals_concatenated_nodes() {
    let a_t = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
    let a_p = vec![vec![1.5, 2.0], vec![2.0, 4.5]];
    let b_t = vec![vec![-1.0, 0.5], vec![2.0, 2.0]];
    let b_p = vec![vec![0.0, 0.5], vec![2.5, 1.0]];
    let mut acc = CurveAccumulator::default();
    acc.push(&a_p, &a_t).unwrap();
    acc.push(&b_p, &b_t).unwrap();
    let pooled = acc.curves().unwrap();
    let cat = |x: &[Vec<f64>], y: &[Vec<f64>]| -> Vec<Vec<f64>> { x.iter().zip(y).map(|(u, v)| [u.clone(), v.clone()].concat()).collect() };
    let direct = metrics::error_vs_time(&cat(&a_p, &b_p), &cat(&a_t, &b_t)).unwrap();
    let ca = metrics::error_vs_time(&a_p, &a_t).unwrap();
    let cb = metrics::error_vs_time(&b_p, &b_t).unwrap();
    for k in 0..2 {
        assert!((pooled.mae[k] - direct.mae[k]).abs() < 1e-12);
        assert!(((ca.mae[k] + cb.mae[k]) / 2.0 - direct.mae[k]).abs() < 1e-12);
    }
}

#[test]
fn grid_examples() {
    let g = metrics::grid_layout(&[3.0, 1.0, 2.0, 4.0], &[3.0, 1.0, 2.0, 4.0]).unwrap();
    assert_eq!(g, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    let g = metrics::grid_layout(&[5.0, 4.0, 3.0, 2.0, 1.0], &[5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
    assert_eq!(g.len(), 3);
    assert_eq!(g.iter().flatten().filter(|v| v.is_nan()).count(), 4);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.csv");
    metrics::write_grid_csv(&path, &g).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[1].ends_with(",") && !lines[1].ends_with(",,"));
    assert_eq!(lines[2], ",,");
}
