//! Weighted bootstrap: cluster weights, replicate runs, max-t bands and
//! intervals for scalar functionals.

use crate::biv::{
    kendall_weighted, pmf_clipped, pmf_from_surface, rank_corr_pmf, MAX_CLIPPED_MASS, rank_corr_treated, spearman_weighted, treated_pairs, Arm,
    BivProblem, BivSpec, RankMethod,
};
use crate::model::{ObservationTable, PanelMode, ThresholdGrid};
use crate::uni::{distribution_mean, invert_cdf, rearrange, DistEstimate, DrFit, DrProblem};
use crate::model::DesignSpec;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use std::collections::HashMap;

/// Normal-consistent IQR divisor.
pub const IQR_SCALE: f64 = 1.34896;
pub const SCALE_FLOOR: f64 = 1e-6;
/// Share of floored grid points above which a band is flagged.
pub const MAX_FLOORED_SHARE: f64 = 0.2;
/// Share of flagged replicates above which a run fails.
pub const MAX_FLAGGED_SHARE: f64 = 0.1;
pub const DEFAULT_REPLICATES: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScheme {
    #[default]
    Exponential,
    /// Empirical bootstrap: unit counts from one multinomial draw.
    Multinomial,
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exponential" | "bayesian" => Ok(WeightScheme::Exponential),
            "multinomial" | "empirical" => Ok(WeightScheme::Multinomial),
            other => Err(Error::InvalidSpec(format!("unknown weight scheme `{other}`"))),
        }
    }
}

impl std::fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightScheme::Exponential => "exponential",
            WeightScheme::Multinomial => "multinomial",
        })
    }
}

/// Stream `b` of the generator keyed by `seed`.
pub fn replicate_rng(seed: u64, b: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b);
    rng
}

/// Raw per-unit weights: standard exponential, or multinomial counts summing to `n`.
pub fn draw_unit_weights<R: Rng + ?Sized>(n: usize, scheme: WeightScheme, rng: &mut R) -> Vec<f64> {
    match scheme {
        WeightScheme::Exponential => (0..n).map(|_| Exp1.sample(rng)).collect(),
        WeightScheme::Multinomial => {
            let mut w = vec![0.0; n];
            for _ in 0..n {
                w[rng.random_range(0..n)] += 1.0;
            }
            w
        }
    }
}

/// Unit index of each row: shared by rows with one id in panel mode, one per row otherwise.
pub fn cluster_index(ids: &[u64], mode: PanelMode) -> (Vec<usize>, usize) {
    match mode {
        PanelMode::RepeatedCrossSection => ((0..ids.len()).collect(), ids.len()),
        PanelMode::Panel => {
            let mut seen: HashMap<u64, usize> = HashMap::new();
            let idx = ids
                .iter()
                .map(|id| {
                    let next = seen.len();
                    *seen.entry(*id).or_insert(next)
                })
                .collect();
            (idx, seen.len())
        }
    }
}

/// Row weights normalized to sum to one.
pub fn draw_weights<R: Rng + ?Sized>(ids: &[u64], mode: PanelMode, scheme: WeightScheme, rng: &mut R) -> Vec<f64> {
    let (idx, n) = cluster_index(ids, mode);
    let unit = draw_unit_weights(n, scheme, rng);
    let mut w: Vec<f64> = idx.iter().map(|&u| unit[u]).collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        for v in &mut w {
            *v /= total;
        }
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    /// Difference of observed and counterfactual means.
    MeanEffect,
    /// Quantile treatment effect at level `q`.
    Qte(f64),
}

impl Functional {
    pub fn label(&self) -> String {
        match self {
            Functional::MeanEffect => "mean".to_string(),
            Functional::Qte(q) => format!("qte:{q}"),
        }
    }

    pub fn evaluate(&self, observed: &DistEstimate, counterfactual: &DistEstimate) -> Option<f64> {
        match *self {
            Functional::MeanEffect => Some(distribution_mean(observed) - distribution_mean(counterfactual)),
            Functional::Qte(q) => match (invert_cdf(observed, q), invert_cdf(counterfactual, q)) {
                (Ok(a), Ok(b)) => Some(a - b),
                _ => None,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapOptions {
    pub replicates: usize,
    pub seed: u64,
    pub scheme: WeightScheme,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions { replicates: DEFAULT_REPLICATES, seed: 0, scheme: WeightScheme::Exponential }
    }
}

/// Point value and replicate values of one scalar functional; `None` marks an undefined value.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarReplicates {
    pub label: String,
    pub point: Option<f64>,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapRun {
    pub replicates: usize,
    pub seed: u64,
    pub scheme: WeightScheme,
    pub points: Vec<f64>,
    /// Rearranged counterfactual curves of successful replicates.
    pub counterfactual: Vec<Vec<f64>>,
    pub observed: Vec<Vec<f64>>,
    pub scalars: Vec<ScalarReplicates>,
    /// Replicates with a non-converged fit; retained.
    pub nonconverged: Vec<usize>,
    /// Replicates whose fit failed; dropped.
    pub failed: Vec<usize>,
    /// Replicates whose joint surface needed more clipping than a point estimate allows; retained.
    pub heavy_clipping: Vec<usize>,
}

impl BootstrapRun {
    pub fn scalar(&self, label: &str) -> Option<&ScalarReplicates> {
        self.scalars.iter().find(|s| s.label == label)
    }

    fn check(&self) -> Result<()> {
        if self.failed.len() == self.replicates {
            return Err(Error::AllReplicatesFailed);
        }
        let flagged = self.failed.len() + self.nonconverged.len();
        if flagged as f64 > MAX_FLAGGED_SHARE * self.replicates as f64 {
            return Err(Error::ExcessiveNonConvergence { flagged, total: self.replicates });
        }
        Ok(())
    }
}

struct Replicate {
    cf: Vec<f64>,
    obs: Vec<f64>,
    scalars: Vec<Option<f64>>,
    converged: bool,
    heavy_clipping: bool,
}

fn collect_run(
    opts: &BootstrapOptions,
    points: Vec<f64>,
    labels: Vec<(String, Option<f64>)>,
    reps: Vec<Result<Replicate>>,
) -> Result<BootstrapRun> {
    let mut run = BootstrapRun {
        replicates: opts.replicates,
        seed: opts.seed,
        scheme: opts.scheme,
        points,
        counterfactual: Vec::new(),
        observed: Vec::new(),
        scalars: labels
            .into_iter()
            .map(|(label, point)| ScalarReplicates { label, point, values: Vec::new() })
            .collect(),
        nonconverged: Vec::new(),
        failed: Vec::new(),
        heavy_clipping: Vec::new(),
    };
    for (b, rep) in reps.into_iter().enumerate() {
        match rep {
            Ok(r) => {
                if !r.converged {
                    run.nonconverged.push(b);
                }
                if r.heavy_clipping {
                    run.heavy_clipping.push(b);
                }
                if !r.cf.is_empty() {
                    run.counterfactual.push(r.cf);
                    run.observed.push(r.obs);
                }
                for (s, v) in run.scalars.iter_mut().zip(r.scalars) {
                    s.values.push(v);
                }
            }
            Err(_) => run.failed.push(b),
        }
    }
    run.check()?;
    Ok(run)
}

/// Point estimates of a univariate run, shared by [`bootstrap`] callers.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimates {
    pub fit: DrFit,
    pub counterfactual: DistEstimate,
    pub observed: DistEstimate,
}

/// Weighted refits of the full univariate pipeline. Replicate `b` uses stream `b`
/// of `seed`, so results do not depend on the worker count.
pub fn bootstrap(
    table: &ObservationTable,
    spec: &DesignSpec,
    grid: &ThresholdGrid,
    opts: &BootstrapOptions,
    functionals: &[Functional],
) -> Result<(PointEstimates, BootstrapRun)> {
    let problem = DrProblem::new(table, spec, grid)?;
    let fit = problem.fit(None, None)?;
    let counterfactual = rearrange(&problem.counterfactual(&fit, None)?);
    let observed = problem.observed(None)?;
    let labels = functionals.iter().map(|f| (f.label(), f.evaluate(&observed, &counterfactual))).collect();
    let ids: Vec<u64> = table.rows().iter().map(|r| r.id).collect();
    let reps: Vec<Result<Replicate>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(opts.seed, b as u64);
            let w = draw_weights(&ids, table.panel_mode(), opts.scheme, &mut rng);
            let f = problem.fit(Some(&w), Some(&fit))?;
            let cf = rearrange(&problem.counterfactual(&f, Some(&w))?);
            let obs = problem.observed(Some(&w))?;
            Ok(Replicate {
                scalars: functionals.iter().map(|fun| fun.evaluate(&obs, &cf)).collect(),
                cf: cf.cdf,
                obs: obs.cdf,
                converged: f.nonconverged() == 0,
                heavy_clipping: false,
            })
        })
        .collect();
    let run = collect_run(opts, grid.points().to_vec(), labels, reps)?;
    Ok((PointEstimates { fit, counterfactual, observed }, run))
}

/// Labels of the scalars produced by [`bootstrap_rank_corr`].
pub const RANK_LABELS: [&str; 6] = [
    "kendall:treated",
    "kendall:counterfactual",
    "kendall:difference",
    "spearman:treated",
    "spearman:counterfactual",
    "spearman:difference",
];

fn rank_scalars(treated: (f64, f64), cf: (f64, f64)) -> Vec<Option<f64>> {
    vec![
        Some(treated.0),
        Some(cf.0),
        Some(treated.0 - cf.0),
        Some(treated.1),
        Some(cf.1),
        Some(treated.1 - cf.1),
    ]
}

/// Bootstrap of treated and counterfactual rank correlations and their differences.
pub fn bootstrap_rank_corr(
    table: &ObservationTable,
    spec: &BivSpec,
    grid_y: &ThresholdGrid,
    grid_z: &ThresholdGrid,
    opts: &BootstrapOptions,
    method: RankMethod,
) -> Result<BootstrapRun> {
    let problem = BivProblem::new(table, spec, grid_y, grid_z)?;
    let fit = problem.fit(None, None)?;
    let cf_point = rank_corr_pmf(&pmf_from_surface(&problem.counterfactual(&fit, None)?)?, Arm::Counterfactual, method)?;
    let tr_point = rank_corr_treated(table, None)?;
    let point = rank_scalars((tr_point.kendall, tr_point.spearman), (cf_point.kendall, cf_point.spearman));
    let labels = RANK_LABELS.iter().zip(point).map(|(l, v)| (l.to_string(), v)).collect();
    let ids: Vec<u64> = table.rows().iter().map(|r| r.id).collect();
    let reps: Vec<Result<Replicate>> = (0..opts.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(opts.seed, b as u64);
            let w = draw_weights(&ids, table.panel_mode(), opts.scheme, &mut rng);
            let f = problem.fit(Some(&w), Some(&fit))?;
            let pmf = pmf_clipped(&problem.counterfactual(&f, Some(&w))?)?;
            let cf = rank_corr_pmf(&pmf, Arm::Counterfactual, method)?;
            let (pairs, pw) = treated_pairs(table, Some(&w))?;
            let tr = (kendall_weighted(&pairs, &pw)?, spearman_weighted(&pairs, &pw)?);
            let converged = f.nonconverged() == 0 && f.y_fit.nonconverged() == 0 && f.z_fit.nonconverged() == 0;
            Ok(Replicate {
                cf: Vec::new(),
                obs: Vec::new(),
                scalars: rank_scalars(tr, (cf.kendall, cf.spearman)),
                converged,
                heavy_clipping: pmf.clipped > MAX_CLIPPED_MASS,
            })
        })
        .collect();
    collect_run(opts, Vec::new(), labels, reps)
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// IQR/1.34896 floored at [`SCALE_FLOOR`]; the flag reports a floor hit.
pub fn robust_scale(values: &[f64]) -> (f64, bool) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let s = (quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25)) / IQR_SCALE;
    if s < SCALE_FLOOR {
        (SCALE_FLOOR, true)
    } else {
        (s, false)
    }
}

/// The `ceil((1 − α) B)`-th smallest value.
pub fn critical_value(stats: &[f64], alpha: f64) -> f64 {
    let mut v = stats.to_vec();
    v.sort_by(f64::total_cmp);
    let k = (((1.0 - alpha) * v.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    v[k.min(v.len()) - 1]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Band {
    pub points: Vec<f64>,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub scale: Vec<f64>,
    pub critical: f64,
    pub floored: usize,
    /// More than a fifth of the grid hit the scale floor.
    pub degenerate_scale: bool,
}

impl Band {
    pub fn covers(&self, truth: &[f64]) -> bool {
        truth.iter().zip(self.lower.iter().zip(&self.upper)).all(|(t, (l, u))| l <= t && t <= u)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn arm_scales(curves: &[Vec<f64>], k: usize) -> (Vec<f64>, usize) {
    let mut floored = 0;
    let s = (0..k)
        .map(|j| {
            let col: Vec<f64> = curves.iter().map(|c| c[j]).collect();
            let (s, hit) = robust_scale(&col);
            floored += usize::from(hit);
            s
        })
        .collect();
    (s, floored)
}

/// Joint max-t bands for the counterfactual and observed curves, sharing one critical value.
pub fn band(run: &BootstrapRun, counterfactual: &DistEstimate, observed: &DistEstimate, alpha: f64) -> Result<(Band, Band)> {
    check_alpha(alpha)?;
    let k = run.points.len();
    if counterfactual.cdf.len() != k || observed.cdf.len() != k {
        return Err(Error::GridMismatch);
    }
    if run.counterfactual.is_empty() {
        return Err(Error::AllReplicatesFailed);
    }
    let (s0, f0) = arm_scales(&run.counterfactual, k);
    let (s1, f1) = arm_scales(&run.observed, k);
    let stats: Vec<f64> = run
        .counterfactual
        .iter()
        .zip(&run.observed)
        .map(|(c, o)| {
            let mut m = 0.0f64;
            for j in 0..k {
                m = m.max((c[j] - counterfactual.cdf[j]).abs() / s0[j]);
                m = m.max((o[j] - observed.cdf[j]).abs() / s1[j]);
            }
            m
        })
        .collect();
    let critical = critical_value(&stats, alpha);
    let make = |est: &DistEstimate, s: Vec<f64>, floored: usize| Band {
        points: run.points.clone(),
        estimate: est.cdf.clone(),
        lower: est.cdf.iter().zip(&s).map(|(f, s)| f - critical * s).collect(),
        upper: est.cdf.iter().zip(&s).map(|(f, s)| f + critical * s).collect(),
        level: 1.0 - alpha,
        scale: s,
        critical,
        floored,
        degenerate_scale: floored as f64 > MAX_FLOORED_SHARE * k as f64,
    };
    Ok((make(counterfactual, s0, f0), make(observed, s1, f1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IntervalMethod {
    #[default]
    Percentile,
    SymmetricT,
}

impl std::str::FromStr for IntervalMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "percentile" => Ok(IntervalMethod::Percentile),
            "symmetric_t" | "symmetric" => Ok(IntervalMethod::SymmetricT),
            other => Err(Error::InvalidSpec(format!("unknown interval method `{other}`"))),
        }
    }
}

impl std::fmt::Display for IntervalMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IntervalMethod::Percentile => "percentile",
            IntervalMethod::SymmetricT => "symmetric_t",
        })
    }
}

/// Interval for one scalar; `None` when the point or every replicate is undefined.
pub fn scalar_interval(rep: &ScalarReplicates, alpha: f64, method: IntervalMethod) -> Result<Option<(f64, f64)>> {
    check_alpha(alpha)?;
    let mut v: Vec<f64> = rep.values.iter().flatten().copied().collect();
    let Some(point) = rep.point else { return Ok(None) };
    if v.is_empty() {
        return Ok(None);
    }
    v.sort_by(f64::total_cmp);
    Ok(Some(match method {
        IntervalMethod::Percentile => (quantile_sorted(&v, alpha / 2.0), quantile_sorted(&v, 1.0 - alpha / 2.0)),
        IntervalMethod::SymmetricT => {
            let (s, _) = robust_scale(&v);
            let stats: Vec<f64> = v.iter().map(|x| (x - point).abs() / s).collect();
            let t = critical_value(&stats, alpha);
            (point - t * s, point + t * s)
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::links::Link;
    use crate::model::{build_grid, GridPolicy};
    use crate::simlab::{generate, DgpSpec};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn panel_weights_shared_within_unit() {
        let mut rng = replicate_rng(3, 0);
        let w = draw_weights(&[1, 1, 2, 2], PanelMode::Panel, WeightScheme::Exponential, &mut rng);
        assert_eq!(w[0], w[1]);
        assert_eq!(w[2], w[3]);
        assert_ne!(w[0], w[2]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        let w = draw_weights(&[1, 1, 2, 2], PanelMode::RepeatedCrossSection, WeightScheme::Exponential, &mut rng);
        assert_ne!(w[0], w[1]);
    }

    #[test]
    fn exponential_moments() {
        let mut rng = replicate_rng(1, 7);
        let w = draw_unit_weights(10_000, WeightScheme::Exponential, &mut rng);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!((mean - 1.0).abs() < 0.03);
        let m = draw_unit_weights(50, WeightScheme::Multinomial, &mut rng);
        assert_eq!(m.iter().sum::<f64>(), 50.0);
        assert!(m.iter().all(|v| v.fract() == 0.0));
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = replicate_rng(5, 1).random();
        let b: u64 = replicate_rng(5, 1).random();
        let c: u64 = replicate_rng(5, 2).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn critical_value_order_statistic() {
        let stats: Vec<f64> = (1..=500).rev().map(f64::from).collect();
        assert_eq!(critical_value(&stats, 0.05), 475.0);
        let stats: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(critical_value(&stats, 0.1), 900.0);
    }

    #[test]
    fn robust_scale_of_normal_quantiles() {
        let v: Vec<f64> = (1..2000).map(|i| crate::links::norm_inv(f64::from(i) / 2000.0)).collect();
        assert!((robust_scale(&v).0 - 1.0).abs() < 2e-3);
        assert_eq!(robust_scale(&[0.3; 10]), (SCALE_FLOOR, true));
    }

    fn small() -> (ObservationTable, ThresholdGrid) {
        let table = generate(&DgpSpec::default_logit(150, 4)).unwrap();
        let grid = build_grid(&table.y_values(), &GridPolicy::Quantile(8)).unwrap();
        (table, grid)
    }

    #[test]
    fn bootstrap_is_deterministic_and_monotone() {
        let (table, grid) = small();
        let spec = DesignSpec::intercepts(Link::Logit);
        let opts = BootstrapOptions { replicates: 20, seed: 42, scheme: WeightScheme::Exponential };
        let funs = [Functional::MeanEffect, Functional::Qte(0.5)];
        let (p1, r1) = bootstrap(&table, &spec, &grid, &opts, &funs).unwrap();
        let (_, r2) = bootstrap(&table, &spec, &grid, &opts, &funs).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.counterfactual.len(), 20);
        for c in r1.counterfactual.iter().chain(&r1.observed) {
            assert!(c.windows(2).all(|w| w[0] <= w[1]));
        }
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (_, r3) = pool.install(|| bootstrap(&table, &spec, &grid, &opts, &funs).unwrap());
        assert_eq!(r1, r3);
        let (b0, b1) = band(&r1, &p1.counterfactual, &p1.observed, 0.05).unwrap();
        assert_eq!(b0.critical, b1.critical);
        for b in [&b0, &b1] {
            for j in 0..b.points.len() {
                assert!(b.lower[j] <= b.estimate[j] && b.estimate[j] <= b.upper[j]);
            }
        }
        let (w0, _) = band(&r1, &p1.counterfactual, &p1.observed, 0.2).unwrap();
        for j in 0..w0.points.len() {
            assert!(w0.upper[j] - w0.lower[j] <= b0.upper[j] - b0.lower[j] + 1e-15);
        }
    }

    #[test]
    fn equal_weights_reproduce_point_estimate() {
        let (table, grid) = small();
        let spec = DesignSpec::intercepts(Link::Logit);
        let problem = DrProblem::new(&table, &spec, &grid).unwrap();
        let fit = problem.fit(None, None).unwrap();
        let w = vec![1.0 / table.len() as f64; table.len()];
        let wf = problem.fit(Some(&w), None).unwrap();
        let a = problem.counterfactual(&fit, None).unwrap();
        let b = problem.counterfactual(&wf, Some(&w)).unwrap();
        for (x, y) in a.cdf.iter().zip(&b.cdf) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_replicates_give_degenerate_results() {
        let est = DistEstimate {
            points: vec![1.0, 2.0],
            cdf: vec![0.3, 0.7],
            rearranged: false,
            reordered: false,
            n11: 1.0,
            support_max: 3.0,
        };
        let run = BootstrapRun {
            replicates: 10,
            seed: 0,
            scheme: WeightScheme::Exponential,
            points: vec![1.0, 2.0],
            counterfactual: vec![est.cdf.clone(); 10],
            observed: vec![est.cdf.clone(); 10],
            scalars: vec![ScalarReplicates { label: "mean".into(), point: Some(0.5), values: vec![Some(0.5); 10] }],
            nonconverged: vec![],
            failed: vec![],
            heavy_clipping: vec![],
        };
        let (b0, _) = band(&run, &est, &est, 0.05).unwrap();
        assert_eq!(b0.critical, 0.0);
        assert_eq!(b0.lower, b0.estimate);
        assert!(b0.degenerate_scale);
        for m in [IntervalMethod::Percentile, IntervalMethod::SymmetricT] {
            assert_eq!(scalar_interval(&run.scalars[0], 0.05, m).unwrap(), Some((0.5, 0.5)));
        }
    }

    #[test]
    fn run_failure_thresholds() {
        let mut run = BootstrapRun {
            replicates: 10,
            seed: 0,
            scheme: WeightScheme::Exponential,
            points: vec![],
            counterfactual: vec![],
            observed: vec![],
            scalars: vec![],
            nonconverged: vec![1],
            failed: vec![],
            heavy_clipping: vec![],
        };
        assert!(run.check().is_ok());
        run.failed.push(2);
        assert_eq!(run.check(), Err(Error::ExcessiveNonConvergence { flagged: 2, total: 10 }));
        run.failed = (0..10).collect();
        assert_eq!(run.check(), Err(Error::AllReplicatesFailed));
    }

    #[test]
    fn rank_bootstrap_runs() {
        let table = generate(&DgpSpec::default_logit(120, 8).with_copula(0.5, 0.0, 0.0)).unwrap();
        let gy = build_grid(&table.y_values(), &GridPolicy::Quantile(5)).unwrap();
        let gz = build_grid(&table.z_values().unwrap(), &GridPolicy::Quantile(5)).unwrap();
        let spec = BivSpec::new(DesignSpec::intercepts(Link::Logit));
        let opts = BootstrapOptions { replicates: 12, seed: 1, scheme: WeightScheme::Exponential };
        let run = bootstrap_rank_corr(&table, &spec, &gy, &gz, &opts, RankMethod::Pmf).unwrap();
        assert_eq!(run.scalars.len(), 6);
        let d = run.scalar("spearman:difference").unwrap();
        assert_eq!(d.values.len() + run.failed.len(), 12);
        let iv = scalar_interval(d, 0.1, IntervalMethod::Percentile).unwrap().unwrap();
        assert!(iv.0 <= iv.1);
    }

    proptest! {
        #[test]
        fn weights_normalized(ids in prop::collection::vec(0u64..30, 1..200), seed in any::<u64>()) {
            let mut rng = replicate_rng(seed, 0);
            for mode in [PanelMode::Panel, PanelMode::RepeatedCrossSection] {
                for scheme in [WeightScheme::Exponential, WeightScheme::Multinomial] {
                    let w = draw_weights(&ids, mode, scheme, &mut rng);
                    prop_assert!(w.iter().all(|v| *v >= 0.0));
                    prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn percentile_and_t_agree_on_symmetric_samples(seed in any::<u64>()) {
            let mut rng = replicate_rng(seed, 0);
            let values: Vec<Option<f64>> = (0..400).map(|_| {
                let u: f64 = rng.random::<f64>() - 0.5;
                Some(u + rng.random::<f64>() - 0.5)
            }).collect();
            let rep = ScalarReplicates { label: "x".into(), point: Some(0.0), values };
            let a = scalar_interval(&rep, 0.1, IntervalMethod::Percentile).unwrap().unwrap();
            let b = scalar_interval(&rep, 0.1, IntervalMethod::SymmetricT).unwrap().unwrap();
            let width = a.1 - a.0;
            prop_assert!(((a.0 + a.1) / 2.0 - (b.0 + b.1) / 2.0).abs() <= 0.1 * width);
        }
    }
}
