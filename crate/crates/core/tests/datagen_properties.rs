use dslda::datagen::{ar1_covariance, generate_shards, paper_model, ExperimentConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ar1_is_positive_definite(rho in -0.95f64..=0.95, d in 1usize..=500) {
        prop_assert!(ar1_covariance(d, rho).unwrap().cholesky().is_ok());
    }

    #[test]
    fn seed_changes_data_and_m_keeps_the_budget(seed in any::<u64>(), m in prop::sample::select(vec![1usize, 2, 4, 5])) {
        let model = paper_model(12).unwrap();
        let cfg = ExperimentConfig { d: 12, n_total: 40, m, r: 0.5, seed, reps: 1, ..Default::default() };
        let a = generate_shards(&model, &cfg).unwrap();
        let b = generate_shards(&model, &ExperimentConfig { seed: seed ^ 1, ..cfg.clone() }).unwrap();
        prop_assert_ne!(&a, &b);
        prop_assert_eq!(a.len(), m);
        prop_assert_eq!(a.iter().map(|s| s.n()).sum::<usize>(), 40);
    }
}

#[test]
fn benchmark_model_is_consistent() {
    for d in [11, 50, 200] {
        let model = paper_model(d).unwrap();
        let mud = model.mu1.sub(&model.mu2).unwrap();
        let resid = model.sigma_star.mat_vec(&model.beta_star).unwrap().sub(&mud).unwrap();
        assert!(resid.max_abs() <= 1e-8);
        assert_eq!(model.s, 11);
    }
}
