mod common;

use common::small_instance;
use ksbl_core::diagnostics::{
    check_coercive, check_gibbs_surrogate, check_map_closed, dyadic_sequence, gibbs_pairs, run_suite,
    DiagnosticsConfig,
};
use ksbl_core::em::EStep;
use ksbl_core::{em_iterate, log_likelihood, run_em, EmOptions, SystemModel, Termination, Theta};
use nalgebra::DMatrix;

fn converged_run(first_seed: u64) -> (common::Instance, ksbl_core::EmTrace) {
    let opts = EmOptions { max_iters: 2000, ..Default::default() };
    (first_seed..first_seed + 200)
        .map(small_instance)
        .find_map(|inst| {
            let trace = run_em(&inst.model, inst.y(), &Theta::uniform(&inst.model, 1.0), &opts).unwrap();
            (trace.termination == Termination::Converged).then_some((inst, trace))
        })
        .expect("a converged run")
}

#[test]
fn full_suite_passes_on_a_converged_run() {
    for start in [0, 40, 80] {
        let (inst, trace) = converged_run(start);
        let report = run_suite(&inst.model, inst.y(), &trace, &DiagnosticsConfig::default()).unwrap();
        assert!(report.verdict, "seed {}: {:?}", inst.seed, report.failed().collect::<Vec<_>>());
        assert!(report.get("l_oscillation").unwrap().value >= 0.0);
    }
}

#[test]
fn truncated_run_fails_stationarity() {
    let inst = small_instance(0);
    let opts = EmOptions { max_iters: 3, ..Default::default() };
    let trace = run_em(&inst.model, inst.y(), &Theta::uniform(&inst.model, 1.0), &opts).unwrap();
    let report = run_suite(&inst.model, inst.y(), &trace, &DiagnosticsConfig::default()).unwrap();
    assert!(!report.get("stationary").unwrap().pass);
    assert!(!report.verdict);
    assert!(report.get("monotone").unwrap().pass);
}

#[test]
fn surrogate_inequality_under_many_perturbations() {
    let inst = small_instance(21);
    let theta_ref = Theta::new(vec![0.7; inst.model.n], inst.data.zstar.clone());
    let pairs = gibbs_pairs(&inst.model, inst.y(), &theta_ref, 1000, 1e-12, 5).unwrap();
    let rec = check_gibbs_surrogate(&inst.model, inst.y(), &pairs).unwrap();
    assert!(rec.pass, "{rec:?}");
}

#[test]
fn variance_update_strictly_gains_off_the_stationary_set() {
    let inst = small_instance(22);
    let theta_ref = Theta::uniform(&inst.model, 1.0);
    let es = EStep::run(&inst.model, inst.y(), &theta_ref).unwrap();
    let update = theta_ref.with_gamma(em_iterate(&inst.model, inst.y(), &theta_ref, 1e-12).unwrap().gamma);
    let dq = es.q_value(&inst.model, &update) - es.q_value(&inst.model, &theta_ref);
    let dl = log_likelihood(&inst.model, inst.y(), &update).unwrap() - es.log_likelihood();
    assert!(dq > 0.0 && dl >= dq - 1e-9, "dq {dq} dl {dl}");
    let rec = check_gibbs_surrogate(&inst.model, inst.y(), &[(update, theta_ref.clone()), (theta_ref.clone(), theta_ref)]).unwrap();
    assert!(rec.pass);
}

#[test]
fn mismatched_patterns_are_rejected() {
    let inst = small_instance(23);
    let a = Theta::uniform(&inst.model, 1.0);
    let mut b = a.clone();
    b.z[0] = 0;
    assert!(check_gibbs_surrogate(&inst.model, inst.y(), &[(a, b)]).is_err());
}

#[test]
fn coercive_on_seeded_instances() {
    for seed in 0..10 {
        let inst = small_instance(30 + seed);
        let z = vec![1; inst.model.k];
        let rec = check_coercive(&inst.model, inst.y(), &z, &vec![1.0; inst.model.n], &[1.0, 10.0, 1e2, 1e3, 1e4]).unwrap();
        assert!(rec.pass && !rec.skipped, "seed {seed}: {rec:?}");
    }
}

#[test]
fn map_closed_on_a_converged_run() {
    let (inst, trace) = converged_run(100);
    let lim = &trace.theta_final;
    let rec = check_map_closed(&inst.model, inst.y(), &dyadic_sequence(&lim.gamma, 30), &lim.gamma, &lim.z, 1e-12).unwrap();
    assert!(rec.pass, "{rec:?}");
}

/// Scalar instance whose two emission scores tie at gamma = 2 (sigma2 = 1, y^2 = 3/4).
#[test]
fn decoding_tie_is_reported() {
    let model = SystemModel::new(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0), 1.0, 0.5, 0.5, 0.5, 1).unwrap();
    let y = DMatrix::from_element(1, 1, 0.75f64.sqrt());
    let above: Vec<Vec<f64>> = (1..=20).map(|j| vec![2.0 + 2f64.powi(-j)]).collect();
    let below: Vec<Vec<f64>> = (1..=20).map(|j| vec![2.0 - 2f64.powi(-j)]).collect();
    let z_of = |g: f64| em_iterate(&model, &y, &Theta::new(vec![g], vec![1]), 1e-12).unwrap().z;
    assert_eq!(z_of(2.0 + 1e-6), vec![0]);
    assert_eq!(z_of(2.0 - 1e-6), vec![1]);

    let up = check_map_closed(&model, &y, &above, &[2.0], &[1], 1e-12).unwrap();
    let down = check_map_closed(&model, &y, &below, &[2.0], &[1], 1e-12).unwrap();
    // exactly one side disagrees with the decoded pattern at the tie
    assert!(up.pass != down.pass, "{up:?} {down:?}");
    let failed = if up.pass { down } else { up };
    assert!(failed.witness.unwrap().contains("tie"));
}
