use drdid_core::biv::{counterfactual_joint, fit_biv, observed_joint, pmf_from_surface, BivSpec};
use drdid_core::model::build_grid;
use drdid_core::simlab::{generate, true_counterfactual_joint, DgpSpec};
use drdid_core::uni::observed_cdf;
use drdid_core::{DesignSpec, GridPolicy, Link, ObservationTable, ThresholdGrid};

fn lattice(table: &ObservationTable, k: usize) -> (ThresholdGrid, ThresholdGrid) {
    (
        build_grid(&table.y_values(), &GridPolicy::Quantile(k)).unwrap(),
        build_grid(&table.z_values().unwrap(), &GridPolicy::Quantile(k)).unwrap(),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn independent_copula_gives_small_correlation_indices() {
    let spec = DgpSpec::default_logit(2500, 11).with_copula(0.0, 0.0, 0.0);
    let table = generate(&spec).unwrap();
    let (gy, gz) = lattice(&table, 10);
    let fit = fit_biv(&table, &BivSpec::new(DesignSpec::intercepts(Link::Logit)), &gy, &gz, None).unwrap();
    let rho: Vec<f64> = fit.copula.iter().flatten().map(|c| c[0].tanh().abs()).collect();
    assert!(median(rho) <= 0.05);
}

#[test]
fn group_shift_in_copula_is_recovered() {
    let spec = DgpSpec::default_logit(2500, 12).with_copula(0.2, 0.0, 0.3);
    let table = generate(&spec).unwrap();
    let (gy, gz) = lattice(&table, 10);
    let fit = fit_biv(&table, &BivSpec::new(DesignSpec::intercepts(Link::Logit)), &gy, &gz, None).unwrap();
    let gamma = median(fit.copula.iter().flatten().map(|c| c[2]).collect());
    assert!((gamma - 0.3).abs() <= 0.1, "{gamma}");
}

#[test]
fn counterfactual_joint_tracks_true_surface() {
    let spec = DgpSpec::default_logit(20_000, 13).with_copula(0.4, 0.1, -0.2);
    let table = generate(&spec).unwrap();
    let (gy, gz) = lattice(&table, 10);
    let fit = fit_biv(&table, &BivSpec::new(DesignSpec::intercepts(Link::Logit)), &gy, &gz, None).unwrap();
    assert_eq!(fit.nonconverged(), 0);
    let est = counterfactual_joint(&fit, &table, None).unwrap();
    let truth = true_counterfactual_joint(&spec, gy.points(), gz.points()).unwrap();
    let mut err = 0.0f64;
    for (i, row) in truth.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            err = err.max((est.surface[i][j] - v).abs());
        }
    }
    assert!(err <= 0.03, "{err}");
    let pmf = pmf_from_surface(&est).unwrap();
    assert!((pmf.p.iter().flatten().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(pmf.clipped <= 0.01);
}

#[test]
fn observed_joint_under_independence() {
    let spec = DgpSpec::default_logit(4000, 14).with_copula(0.0, 0.0, 0.0);
    let table = generate(&spec).unwrap();
    let (gy, gz) = lattice(&table, 12);
    let est = observed_joint(&table, &gy, &gz, None).unwrap();
    let fy = observed_cdf(&table, &gy, None).unwrap();
    let fz = observed_cdf(&table.second_as_primary().unwrap(), &gz, None).unwrap();
    let (kk, ll) = (gy.len(), gz.len());
    let bound = 4.0 / (est.n11).sqrt();
    for i in 0..kk {
        assert!((est.surface[i][ll] - fy.cdf[i]).abs() < 1e-12);
        for j in 0..ll {
            assert!((est.surface[i][j] - fy.cdf[i] * fz.cdf[j]).abs() <= bound);
        }
    }
    for j in 0..ll {
        assert!((est.surface[kk][j] - fz.cdf[j]).abs() < 1e-12);
    }
}
