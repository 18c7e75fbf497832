mod common;

use common::{instance, random_theta, small_instance, Shape};
use ksbl_core::em::{fisher_gradient, EStep};
use ksbl_core::likelihood::{build_ry, grad_gamma_fd, likelihood_upper_bound};
use ksbl_core::{grad_gamma, log_likelihood, log_likelihood_innovations, Theta};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn direct_and_innovations_forms_agree(seed in 0u64..100_000, n in 1usize..=4, m in 1usize..=3, k in 1usize..=15) {
        let inst = instance(seed, Shape { n, m, k, sparsity: 1 }, 0.2);
        let theta = random_theta(&inst, 1e-3, 5.0);
        let direct = log_likelihood(&inst.model, inst.y(), &theta).unwrap();
        let innov = log_likelihood_innovations(&inst.model, inst.y(), &theta).unwrap();
        prop_assert!((direct - innov).abs() <= 1e-9 * (1.0 + direct.abs()));
        prop_assert!(direct <= likelihood_upper_bound(&inst.model));
    }

    #[test]
    fn ry_is_symmetric_psd(seed in 0u64..100_000) {
        let inst = small_instance(seed);
        let theta = random_theta(&inst, 1e-3, 5.0);
        let cov = build_ry(&inst.model, &theta).unwrap();
        let scale = cov.ry.amax().max(f64::MIN_POSITIVE);
        prop_assert!((&cov.ry - cov.ry.transpose()).amax() <= 1e-12 * scale);
        let eig = cov.ry.clone().symmetric_eigen();
        prop_assert!(eig.eigenvalues.min() >= -1e-10 * scale);
    }
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let inst = instance(5, Shape { n: 3, m: 2, k: 6, sparsity: 2 }, 0.1);
    let theta = Theta::new(vec![0.4, 1.3, 0.7], inst.data.zstar.clone());
    let g = grad_gamma(&inst.model, inst.y(), &theta).unwrap();
    let fd = grad_gamma_fd(&inst.model, inst.y(), &theta, 1e-6).unwrap();
    for (a, b) in g.iter().zip(&fd) {
        assert!((a - b).abs() <= 1e-5 * a.abs().max(1e-3), "{g:?} vs {fd:?}");
    }
}

#[test]
fn fisher_identity_gradient_equals_direct_gradient() {
    for seed in 0..20 {
        let inst = small_instance(300 + seed);
        let theta = random_theta(&inst, 0.05, 2.0);
        let direct = grad_gamma(&inst.model, inst.y(), &theta).unwrap();
        let es = EStep::run(&inst.model, inst.y(), &theta).unwrap();
        let fisher = fisher_gradient(&theta.gamma, &es.stats);
        let scale = direct.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for (a, b) in direct.iter().zip(&fisher) {
            assert!((a - b).abs() <= 1e-7 * scale, "seed {seed}: {direct:?} vs {fisher:?}");
        }
    }
}

#[test]
fn all_missing_likelihood_is_pure_noise() {
    let inst = small_instance(42);
    let theta = Theta::new(vec![3.0; inst.model.n], vec![0; inst.model.k]);
    let y = inst.y();
    let expected = likelihood_upper_bound(&inst.model) - y.norm_squared() / (2.0 * inst.model.sigma2);
    let l = log_likelihood(&inst.model, y, &theta).unwrap();
    assert!((l - expected).abs() <= 1e-10 * expected.abs());
    assert!(grad_gamma(&inst.model, y, &theta).unwrap().iter().all(|g| *g == 0.0));
}
