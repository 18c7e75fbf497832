mod common;

use common::{instance, random_theta, small_instance, Shape};
use ksbl_core::em::{mstep_gamma, viterbi, EStep};
use ksbl_core::oracle::{
    brute_force_gamma, brute_force_z, exhaustive_ml, exhaustive_ml_seeded, pattern, ExhaustiveOptions,
};
use ksbl_core::{run_em, EmOptions, Error, SystemModel, Theta};
use nalgebra::DMatrix;

#[test]
fn viterbi_is_in_the_argmax_set() {
    for seed in 0..20 {
        let inst = instance(800 + seed, Shape { n: 2, m: 1, k: 4 + (seed % 9) as usize, sparsity: 1 }, 0.1);
        let theta = random_theta(&inst, 0.05, 2.0);
        let oracle = brute_force_z(&inst.model, inst.y(), &theta).unwrap();
        let es = EStep::run(&inst.model, inst.y(), &theta).unwrap();
        assert!(oracle.contains(&viterbi(&es.scores, &inst.model)));
        assert!(oracle.contains(&oracle.best_z));
        let table = oracle.table.unwrap();
        assert_eq!(table.len(), 1 << inst.model.k);
        let max = table.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(max, oracle.best_value);
    }
}

#[test]
fn table_is_dropped_above_twelve_steps() {
    let inst = instance(1, Shape { n: 1, m: 1, k: 14, sparsity: 1 }, 0.1);
    let oracle = brute_force_z(&inst.model, inst.y(), &Theta::uniform(&inst.model, 1.0)).unwrap();
    assert!(oracle.table.is_none());
}

#[test]
fn horizon_cap() {
    let inst = instance(1, Shape { n: 1, m: 1, k: 21, sparsity: 1 }, 0.1);
    let err = brute_force_z(&inst.model, inst.y(), &Theta::uniform(&inst.model, 1.0)).unwrap_err();
    assert!(matches!(err, Error::SizeCap { cap: 20, .. }));
    let big = instance(1, Shape { n: 6, m: 1, k: 4, sparsity: 1 }, 0.1);
    assert!(matches!(
        exhaustive_ml(&big.model, big.y(), &ExhaustiveOptions::default()),
        Err(Error::SizeCap { what: "n", .. })
    ));
}

#[test]
fn golden_section_agrees_with_closed_form() {
    for seed in 0..10 {
        let inst = small_instance(850 + seed);
        let theta = random_theta(&inst, 0.05, 2.0);
        let es = EStep::run(&inst.model, inst.y(), &theta).unwrap();
        let closed = mstep_gamma(&es.stats, 1e-12);
        let searched = brute_force_gamma(&inst.model, inst.y(), &theta, 1e-12).unwrap();
        for (a, b) in closed.iter().zip(&searched) {
            assert!((a - b).abs() <= 1e-8, "{closed:?} vs {searched:?}");
        }
    }
}

#[test]
fn pattern_bits_are_time_ordered() {
    assert_eq!(pattern(0b0110, 4), vec![0, 1, 1, 0]);
}

#[test]
fn scalar_family_recovers_closed_form() {
    // D = 0 makes the steps independent: large |y_k| are kept, near-noise ones dropped
    let ys = [2.0, 0.1, -1.5, 0.05, 1.2];
    let model = SystemModel::new(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0), 0.5, 0.5, 0.5, 0.5, ys.len()).unwrap();
    let y = DMatrix::from_row_slice(1, ys.len(), &ys);
    let ml = exhaustive_ml(&model, &y, &ExhaustiveOptions::default()).unwrap();
    let expected: Vec<u8> = ys.iter().map(|v| u8::from(v * v > 0.5)).collect();
    assert_eq!(ml.z_best, expected);
    // kept steps share one variance: y_k ~ N(0, gamma + sigma2), so gamma = mean(y_k^2) - sigma2
    let kept: Vec<f64> = ys.iter().filter(|v| *v * *v > 0.5).map(|v| v * v).collect();
    let gamma = kept.iter().sum::<f64>() / kept.len() as f64 - 0.5;
    // the inner runs stop on a relative L change of 1e-10, which pins gamma to about sqrt(1e-10)
    assert!((ml.gamma_best[0] - gamma).abs() < 1e-4, "{:?} vs {gamma}", ml.gamma_best);
    assert_eq!(ml.table.len(), 1 << ys.len());
}

#[test]
fn oracle_bounds_an_em_run() {
    let inst = instance(7003, Shape { n: 2, m: 2, k: 6, sparsity: 1 }, 0.01);
    let opts = EmOptions { max_iters: 500, ..Default::default() };
    let trace = run_em(&inst.model, inst.y(), &Theta::uniform(&inst.model, 1.0), &opts).unwrap();
    let quick = ExhaustiveOptions { screen_iters: 100, refine_top: 4, refine_iters: 2000, ..Default::default() };
    let ml = exhaustive_ml_seeded(&inst.model, inst.y(), &quick, std::slice::from_ref(&trace.theta_final)).unwrap();
    assert!(ml.l_best >= trace.final_log_likelihood - 1e-9);
    let em_entry = ml.table.iter().find(|e| e.z == trace.theta_final.z).unwrap();
    assert!(em_entry.refined);
    assert!(em_entry.log_likelihood >= trace.final_log_likelihood - 1e-9);
}
