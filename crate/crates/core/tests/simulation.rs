mod common;

use common::{instance, Shape};
use ksbl_core::io::{load_dataset, save_dataset};
use ksbl_core::model::{simulate_dataset, SimConfig};
use proptest::prelude::*;

fn shape() -> impl Strategy<Value = Shape> {
    (1usize..=5, 1usize..=4, 1usize..=12).prop_flat_map(|(n, m, k)| {
        (0..=n).prop_map(move |s| Shape { n, m, k, sparsity: s })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn same_seed_same_dataset(seed in 0u64..10_000, shape in shape()) {
        let a = instance(seed, shape, 0.1);
        let b = instance(seed, shape, 0.1);
        prop_assert_eq!(&a.model, &b.model);
        prop_assert_eq!(&a.data, &b.data);
    }

    #[test]
    fn states_follow_the_recursion(seed in 0u64..10_000, shape in shape()) {
        let inst = instance(seed, shape, 0.1);
        let (x, u, d) = (&inst.data.x, &inst.data.u, &inst.model.d);
        for k in 0..shape.k {
            let prev = if k == 0 { nalgebra::DVector::zeros(shape.n) } else { x.column(k - 1).into_owned() };
            let rebuilt = d * prev + u.column(k);
            prop_assert!((rebuilt - x.column(k)).amax() <= 1e-12 * (1.0 + x.amax()));
        }
    }

    #[test]
    fn support_has_requested_size(seed in 0u64..10_000, shape in shape()) {
        let inst = instance(seed, shape, 0.1);
        let support = inst.data.support();
        prop_assert_eq!(support.len(), shape.sparsity);
        for i in 0..shape.n {
            let active = support.contains(&i);
            prop_assert_eq!(active, inst.data.u.row(i).iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn residual_is_noise_sized(seed in 0u64..10_000, shape in shape()) {
        let inst = instance(seed, shape, 0.1);
        let signal = &inst.model.a * &inst.data.x;
        let sd = inst.model.sigma2.sqrt();
        for (k, z) in inst.data.zstar.iter().enumerate() {
            let w = inst.data.y.column(k) - signal.column(k) * f64::from(*z);
            prop_assert!(w.amax() < 8.0 * sd);
        }
    }
}

#[test]
fn explicit_support_is_respected() {
    let inst = instance(3, Shape { n: 5, m: 2, k: 6, sparsity: 2 }, 0.1);
    let cfg = SimConfig {
        sparsity: 2,
        support: Some(vec![4, 1]),
        input_variance: 2.0,
        seed: 3,
    };
    let ds = simulate_dataset(&inst.model, &cfg).unwrap();
    assert_eq!(ds.support(), vec![1, 4]);
}

#[test]
fn dataset_round_trips_through_files() {
    let inst = instance(11, Shape { n: 3, m: 2, k: 7, sparsity: 1 }, 0.05);
    let cfg = SimConfig {
        sparsity: 1,
        support: None,
        input_variance: 1.0,
        seed: 11,
    };
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &inst.model, Some(&cfg), &inst.data).unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["U.csv", "X.csv", "Y.csv", "model.json", "zstar.csv"]);
    let (manifest, ds) = load_dataset(dir.path()).unwrap();
    assert_eq!(manifest.model, inst.model);
    assert_eq!(manifest.sim, Some(cfg));
    assert_eq!(ds, inst.data);
}

#[test]
fn truncated_file_is_a_shape_error() {
    let inst = instance(12, Shape { n: 2, m: 2, k: 5, sparsity: 1 }, 0.05);
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &inst.model, None, &inst.data).unwrap();
    std::fs::write(dir.path().join("Y.csv"), "1,2,3,4,5\n").unwrap();
    assert!(load_dataset(dir.path()).is_err());
}
