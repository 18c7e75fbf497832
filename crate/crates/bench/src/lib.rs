//! Shared fixtures for the benchmarks.

use ksbl_core::model::{random_model, simulate_dataset, stream_rng, RandomModelSpec, Stream};
use ksbl_core::{Dataset, SimConfig, SystemModel};

/// A stable random system with one active input and its simulated data.
pub fn fixture(n: usize, m: usize, k: usize, seed: u64) -> (SystemModel, Dataset) {
    let spec = RandomModelSpec {
        n,
        m,
        k,
        sigma2: 0.01,
        p0: 0.8,
        p1: 0.9,
        pi1: 0.5,
        spectral_radius: 0.9,
    };
    let model = random_model(&spec, &mut stream_rng(seed, Stream::Model)).expect("valid spec");
    let sim = SimConfig { sparsity: 1, support: None, input_variance: 1.0, seed };
    let data = simulate_dataset(&model, &sim).expect("valid simulation");
    (model, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shapes() {
        let (model, data) = fixture(4, 2, 10, 1);
        assert_eq!(data.y.shape(), (2, 10));
        assert_eq!(model.n, 4);
    }
}
