use fabsched::nes::{
    self, adam_step, centered_ranks, estimate_gradient, gradient_from_samples, AdamState, FitnessShaping, NesConfig,
};
use proptest::prelude::*;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rank_shaping_ignores_monotone_transforms(f in prop::collection::vec(-50.0f64..50.0, 2..40), seed in 0u64..100) {
        let dim = 5;
        let eps: Vec<Vec<f64>> = (0..f.len()).map(|i| nes::perturbation(seed, i, dim, false)).collect();
        let g = gradient_from_samples(&eps, &f, 0.01, FitnessShaping::CenteredRank);
        let t: Vec<f64> = f.iter().map(|x| x.powi(3) + 7.0 * x).collect();
        let h = gradient_from_samples(&eps, &t, 0.01, FitnessShaping::CenteredRank);
        prop_assert_eq!(g, h);
    }

    #[test]
    fn centered_ranks_are_centered(f in prop::collection::vec(-5.0f64..5.0, 2..50)) {
        let r = centered_ranks(&f);
        prop_assert!(r.iter().sum::<f64>().abs() < 1e-9);
        prop_assert!(r.iter().all(|&v| (-0.5..=0.5).contains(&v)));
    }

    #[test]
    fn estimate_does_not_depend_on_thread_count(seed in 0u64..1000) {
        let f = |t: &[f64], _: u64| -t.iter().map(|v| (v - 0.3).powi(2)).sum::<f64>();
        let theta = vec![0.1; 6];
        let par = estimate_gradient(&theta, 0.05, 16, &f, seed, 0, FitnessShaping::Raw, false).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let seq = pool.install(|| estimate_gradient(&theta, 0.05, 16, &f, seed, 0, FitnessShaping::Raw, false).unwrap());
        prop_assert_eq!(par, seq);
    }

    #[test]
    fn zero_gradient_leaves_params(theta in prop::collection::vec(-3.0f64..3.0, 1..20), eta in 0.0f64..0.1) {
        let mut s = AdamState::new(theta.len(), &NesConfig::default());
        prop_assert_eq!(adam_step(&mut s, &theta, &vec![0.0; theta.len()], eta), theta);
    }
}

#[test]
fn all_tied_fitness_gives_zero_gradient() {
    let f = |_: &[f64], _: u64| 4.2;
    let g = estimate_gradient(&[0.5; 8], 0.01, 32, &f, 9, 0, FitnessShaping::CenteredRank, false).unwrap();
    assert!(g.gradient.iter().all(|&v| v == 0.0));
}

#[test]
fn sphere_estimate_points_downhill() {
    let theta: Vec<f64> = (0..10).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    let f = |t: &[f64], _: u64| -t.iter().map(|v| v * v).sum::<f64>();
    let g = estimate_gradient(&theta, 0.01, 512, &f, 21, 0, FitnessShaping::CenteredRank, false).unwrap().gradient;
    let truth: Vec<f64> = theta.iter().map(|t| -2.0 * t).collect();
    let cos = g.iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() / (norm(&g) * norm(&truth));
    assert!(cos.acos().to_degrees() < 15.0, "angle {}", cos.acos().to_degrees());
}

#[test]
fn same_master_seed_same_history() {
    let f = |t: &[f64], s: u64| -t.iter().map(|v| v * v).sum::<f64>() - (s % 7) as f64 * 1e-3;
    let cfg = NesConfig { population: 8, i_max: 5, master_seed: 3, ..NesConfig::default() };
    let a = nes::train_with(&f, &[0.4; 4], &cfg, |_, _| {}).unwrap();
    let b = nes::train_with(&f, &[0.4; 4], &cfg, |_, _| {}).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.theta, b.theta);
}

#[test]
fn history_csv_has_header_and_rows() {
    let f = |t: &[f64], _: u64| -t[0].abs();
    let cfg = NesConfig { population: 4, i_max: 3, ..NesConfig::default() };
    let out = nes::train_with(&f, &[1.0], &cfg, |_, _| {}).unwrap();
    let mut buf = Vec::new();
    nes::write_history_csv(&out.history, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap(), "iteration,sigma,eta,mean_fitness,max_fitness,center_cost");
    assert_eq!(text.lines().count(), 4);
}
