//! Fixtures shared by the benchmarks.

use std::f64::consts::PI;

use ctsa_core::bundle::{advdiff_bundle, AdvDiffFamily, LinearBundle};
use ctsa_core::Result;

pub const THETA_STAR: [f64; 9] = [0.5, 0.2, 0.5, 0.1, 2.0, PI / 4.0, 0.3, -0.3, 0.01];

pub const TARGETS: [[f64; 2]; 8] = [
    [0.0, 7.0],
    [6.0, 8.0],
    [4.0, 4.0],
    [9.0, 6.0],
    [1.0, 1.0],
    [7.0, 10.0],
    [10.0, 11.0],
    [3.0, 10.0],
];

pub const SENSORS: [[f64; 2]; 8] = [
    [10.1, 7.8],
    [4.1, 6.01],
    [5.2, 3.75],
    [7.2, 4.02],
    [3.2, 3.1],
    [6.1, 2.1],
    [1.01, 2.8],
    [3.0, 1.0],
];

/// Advection-diffusion bundle at `k_max = 3` with eight sensors.
pub fn advdiff_fixture(seed: u64) -> Result<(LinearBundle<AdvDiffFamily>, Vec<f64>)> {
    let scale = |p: &[f64; 2]| [p[0] / 12.0, p[1] / 12.0];
    let family = AdvDiffFamily::new(3, 1.0 / 24.0, TARGETS.iter().map(scale).collect())?;
    let o: Vec<f64> = SENSORS.iter().flat_map(scale).collect();
    Ok((advdiff_bundle(family, &THETA_STAR, &THETA_STAR, seed)?, o))
}
