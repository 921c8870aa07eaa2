//! Shared fixtures for the criterion benchmarks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use spill_core::{dgp, timeseries, BalancedPanel};

/// Random regression problem with `m` rows and `k` regressors.
pub fn regression(m: usize, k: usize, seed: u64) -> (Vec<f64>, DMatrix<f64>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(m, k, |_, _| rng.random_range(-1.0..1.0));
    let y = (0..m)
        .map(|i| 0.5 + (0..k).map(|j| x[(i, j)]).sum::<f64>() + rng.random_range(-1.0..1.0))
        .collect();
    (y, x)
}

/// Simulated stable VAR(1) panel with `n` assets and `t` observations.
pub fn panel(n: usize, t: usize, seed: u64) -> BalancedPanel {
    let b = DMatrix::from_fn(n, n, |i, j| if i == j { 0.3 } else { 0.05 });
    let sigma = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.3 });
    let spec = dgp::DgpSpec::new(vec![b], sigma, t, seed);
    let dev = dgp::simulate(&spec).expect("valid spec");
    let ids: Vec<String> = dev.assets().iter().map(|a| a.id.clone()).collect();
    let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
    timeseries::balanced(&dev, &refs, 10).expect("complete panel")
}
