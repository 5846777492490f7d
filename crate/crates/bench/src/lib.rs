//! Shared fixtures for the benchmarks.

use drdid_core::model::build_grid;
use drdid_core::simlab::{generate, DgpSpec};
use drdid_core::{GridPolicy, ObservationTable, ThresholdGrid};

/// Default logit design with `n` rows per cell and a `quantile:k` grid.
pub fn univariate(n: usize, k: usize) -> (ObservationTable, ThresholdGrid) {
    let table = generate(&DgpSpec::default_logit(n, 42)).expect("valid design");
    let grid = build_grid(&table.y_values(), &GridPolicy::Quantile(k)).expect("grid");
    (table, grid)
}

/// Two-outcome design with a Gaussian copula and `quantile:k` lattices.
pub fn bivariate(n: usize, k: usize) -> (ObservationTable, ThresholdGrid, ThresholdGrid) {
    let table = generate(&DgpSpec::default_logit(n, 43).with_copula(0.5, 0.1, -0.2)).expect("valid design");
    let gy = build_grid(&table.y_values(), &GridPolicy::Quantile(k)).expect("grid");
    let gz = build_grid(&table.z_values().expect("second outcome"), &GridPolicy::Quantile(k)).expect("grid");
    (table, gy, gz)
}

/// Treated post-period outcome pairs of [`bivariate`].
pub fn pairs(n: usize) -> Vec<(f64, f64)> {
    let (table, _, _) = bivariate(n, 4);
    drdid_core::biv::treated_pairs(&table, None).expect("pairs").0
}
