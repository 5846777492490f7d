//! Subcommand implementations.

use crate::config::{RunConfig, SimConfig};
use crate::error::{CliError, CliResult};
use crate::ingest::{build_table, read_raw, Ingested, RawData};
use crate::output::{ensure_dir, file_stem, fmt_f, fmt_opt, level_tag, write_json, Table};
use drdid_core::biv::{
    default_lattice_policy, observed_joint, pmf_clipped, rank_corr_pmf, rank_corr_treated, Arm, BivProblem,
    BivSpec, JointEstimate,
};
use drdid_core::infer::{band, bootstrap, bootstrap_rank_corr, scalar_interval, BootstrapOptions, Functional, RANK_LABELS};
use drdid_core::model::{build_grid, validate};
use drdid_core::simlab::{default_knots, generate, true_counterfactual, CoefficientPath, DgpSpec};
use drdid_core::uni::{dte, rearrange, DrProblem};
use drdid_core::{DistEstimate, GridPolicy, Link, ObservationTable, PanelMode, TermList};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::Path;

const TOOL: &str = "drdid";

#[derive(Debug, Serialize)]
struct BootstrapDiagnostics {
    replicates: usize,
    scheme: String,
    failed: usize,
    nonconverged: usize,
    heavy_clipping: usize,
    critical_values: Vec<[f64; 2]>,
    floored_points: usize,
    degenerate_scale: bool,
}

#[derive(Debug, Serialize)]
struct OutcomeDiagnostics {
    outcome: String,
    rows: usize,
    dropped_rows: usize,
    panel: bool,
    cell_sizes: [[usize; 2]; 2],
    grid_points: usize,
    nonconverged_points: usize,
    degenerate_points: usize,
    rearrangement_reordered: bool,
    bootstrap: Option<BootstrapDiagnostics>,
}

#[derive(Debug, Serialize)]
struct BivDiagnostics {
    outcome: String,
    outcome2: String,
    rows: usize,
    dropped_rows: usize,
    lattice: [usize; 2],
    nonconverged_points: usize,
    degenerate_quadrants: usize,
    probability_clamps: usize,
    quadrant_floor_hits: usize,
    surface_repair: f64,
    clipped_mass: f64,
    bootstrap: Option<BootstrapDiagnostics>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    seed: u64,
    config_hash: String,
    data_sha256: Option<String>,
    config: &'a C,
    files: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    outcomes: Vec<OutcomeDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bivariate: Option<BivDiagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    simulation: Option<SimDiagnostics>,
}

fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io { path: path.display().to_string(), message: e.to_string() })?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn interval_header(mut base: Vec<String>, alphas: &[f64], with_intervals: bool) -> Vec<String> {
    if with_intervals {
        for a in alphas {
            let tag = level_tag(*a);
            base.push(format!("lower_{tag}"));
            base.push(format!("upper_{tag}"));
        }
    }
    base
}

struct UniResult {
    counterfactual: DistEstimate,
    observed: DistEstimate,
    effects: Vec<(String, Option<f64>, Vec<Option<(f64, f64)>>)>,
    bands: Vec<(f64, drdid_core::Band, drdid_core::Band)>,
    diagnostics: OutcomeDiagnostics,
    raw_counterfactual: DistEstimate,
}

fn estimate_outcome(cfg: &RunConfig, ing: &Ingested, outcome: &str, grid_policy: &GridPolicy) -> CliResult<UniResult> {
    let table = &ing.table;
    let grid = build_grid(&table.y_values(), grid_policy)?;
    let spec = cfg.design();
    let mut functionals = vec![Functional::MeanEffect];
    functionals.extend(cfg.quantiles.iter().map(|&q| Functional::Qte(q)));
    let b = cfg.bootstrap.replicates;

    let problem = DrProblem::new(table, &spec, &grid)?;
    let (fit, counterfactual, observed, run) = if b > 0 {
        let opts = BootstrapOptions { replicates: b, seed: cfg.bootstrap.seed, scheme: cfg.scheme() };
        let (point, run) = bootstrap(table, &spec, &grid, &opts, &functionals)?;
        (point.fit, point.counterfactual, point.observed, Some(run))
    } else {
        let fit = problem.fit(None, None)?;
        let cf = rearrange(&problem.counterfactual(&fit, None)?);
        let obs = problem.observed(None)?;
        (fit, cf, obs, None)
    };
    let raw_counterfactual = problem.counterfactual(&fit, None)?;

    let mut effects = Vec::new();
    let mut bands = Vec::new();
    let mut boot_diag = None;
    match &run {
        Some(run) => {
            for (f, rep) in functionals.iter().zip(&run.scalars) {
                let ivs = cfg
                    .bootstrap
                    .alpha
                    .iter()
                    .map(|&a| scalar_interval(rep, a, cfg.interval()))
                    .collect::<drdid_core::Result<Vec<_>>>()?;
                effects.push((f.label(), rep.point, ivs));
            }
            let mut crit = Vec::new();
            let (mut floored, mut degenerate) = (0, false);
            for &a in &cfg.bootstrap.alpha {
                let (b0, b1) = band(run, &counterfactual, &observed, a)?;
                crit.push([a, b0.critical]);
                floored = b0.floored + b1.floored;
                degenerate = b0.degenerate_scale || b1.degenerate_scale;
                bands.push((a, b0, b1));
            }
            boot_diag = Some(BootstrapDiagnostics {
                replicates: run.replicates,
                scheme: run.scheme.to_string(),
                failed: run.failed.len(),
                nonconverged: run.nonconverged.len(),
                heavy_clipping: run.heavy_clipping.len(),
                critical_values: crit,
                floored_points: floored,
                degenerate_scale: degenerate,
            });
        }
        None => {
            for f in &functionals {
                effects.push((f.label(), f.evaluate(&observed, &counterfactual), Vec::new()));
            }
        }
    }
    let diagnostics = OutcomeDiagnostics {
        outcome: outcome.to_string(),
        rows: table.len(),
        dropped_rows: ing.dropped,
        panel: table.panel_mode() == PanelMode::Panel,
        cell_sizes: table.cell_sizes(),
        grid_points: grid.len(),
        nonconverged_points: fit.nonconverged(),
        degenerate_points: fit.degenerate_points(),
        rearrangement_reordered: counterfactual.reordered,
        bootstrap: boot_diag,
    };
    Ok(UniResult { counterfactual, observed, effects, bands, diagnostics, raw_counterfactual })
}

fn curves_table(res: &UniResult, alphas: &[f64]) -> CliResult<Table> {
    let mut header: Vec<String> = ["y", "f0", "f1", "tau", "f0_unrearranged"].iter().map(|s| s.to_string()).collect();
    for (a, _, _) in &res.bands {
        let tag = level_tag(*a);
        for c in ["f0_lower", "f0_upper", "f1_lower", "f1_upper"] {
            header.push(format!("{c}_{tag}"));
        }
    }
    debug_assert!(res.bands.is_empty() || res.bands.len() == alphas.len());
    let tau = dte(&res.observed, &res.counterfactual)?;
    let mut t = Table::new(header);
    for j in 0..res.counterfactual.points.len() {
        let mut row = vec![
            fmt_f(res.counterfactual.points[j]),
            fmt_f(res.counterfactual.cdf[j]),
            fmt_f(res.observed.cdf[j]),
            fmt_f(tau.tau[j]),
            fmt_f(res.raw_counterfactual.cdf[j]),
        ];
        for (_, b0, b1) in &res.bands {
            row.extend([fmt_f(b0.lower[j]), fmt_f(b0.upper[j]), fmt_f(b1.lower[j]), fmt_f(b1.upper[j])]);
        }
        t.push(row);
    }
    Ok(t)
}

/// Reads the counterfactual and observed estimates back from a curves file.
pub fn read_curves(path: &Path) -> CliResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let t = Table::read(path)?;
    let col = |name: &str| -> CliResult<Vec<f64>> {
        t.column(name)?.into_iter().map(|v| v.ok_or_else(|| CliError::Data(format!("null in `{name}`")))).collect()
    };
    Ok((col("y")?, col("f0")?, col("f1")?))
}

fn load(cfg: &RunConfig) -> CliResult<RawData> {
    read_raw(&cfg.data, cfg.delimiter)
}

/// Univariate estimation for each configured outcome.
pub fn fit(cfg: &RunConfig) -> CliResult<()> {
    let raw = load(cfg)?;
    let policy = cfg.grid_policy();
    let intervals = cfg.bootstrap.replicates > 0;
    let mut effects = Table::new(interval_header(
        vec!["outcome".into(), "functional".into(), "estimate".into()],
        &cfg.bootstrap.alpha,
        intervals,
    ));
    let mut outcomes = Vec::new();
    let mut curves = Vec::new();
    for outcome in &cfg.columns.outcomes {
        let ing = build_table(&raw, &cfg.columns, outcome, None, true)?;
        let res = estimate_outcome(cfg, &ing, outcome, &policy)?;
        for (label, point, ivs) in &res.effects {
            let mut row = vec![outcome.clone(), label.clone(), fmt_opt(*point)];
            for iv in ivs {
                row.push(fmt_opt(iv.map(|v| v.0)));
                row.push(fmt_opt(iv.map(|v| v.1)));
            }
            effects.push(row);
        }
        curves.push((format!("curves_{}.csv", file_stem(outcome)), curves_table(&res, &cfg.bootstrap.alpha)?));
        outcomes.push(res.diagnostics);
    }
    ensure_dir(&cfg.out_dir)?;
    let mut files = vec!["effects.csv".to_string()];
    effects.write(&cfg.out_dir.join("effects.csv"))?;
    for (name, t) in &curves {
        t.write(&cfg.out_dir.join(name))?;
        files.push(name.clone());
    }
    files.push("manifest.json".into());
    let manifest = Manifest {
        tool: TOOL,
        version: env!("CARGO_PKG_VERSION"),
        command: "fit",
        seed: cfg.bootstrap.seed,
        config_hash: cfg.hash(),
        data_sha256: Some(file_sha256(&cfg.data)?),
        config: cfg,
        files,
        outcomes,
        bivariate: None,
        simulation: None,
    };
    write_json(&cfg.out_dir.join("manifest.json"), &manifest)
}

fn lattice(values: &[f64], configured: Option<&String>) -> CliResult<drdid_core::ThresholdGrid> {
    let policy = match configured {
        Some(s) => s.parse::<GridPolicy>()?,
        None => default_lattice_policy(values),
    };
    Ok(build_grid(values, &policy)?)
}

fn joint_table(cf: &JointEstimate, obs: &JointEstimate) -> Table {
    let mut t = Table::new(vec!["y".into(), "z".into(), "counterfactual".into(), "observed".into()]);
    let mut ys = cf.ys.clone();
    ys.push(cf.support_max_y);
    let mut zs = cf.zs.clone();
    zs.push(cf.support_max_z);
    for (i, y) in ys.iter().enumerate() {
        for (j, z) in zs.iter().enumerate() {
            t.push(vec![fmt_f(*y), fmt_f(*z), fmt_f(cf.surface[i][j]), fmt_f(obs.surface[i][j])]);
        }
    }
    t
}

/// Bivariate estimation: joint surfaces and rank correlations.
pub fn fit2(cfg: &RunConfig) -> CliResult<()> {
    let raw = load(cfg)?;
    let bcfg = cfg.bivariate.as_ref().ok_or_else(|| CliError::Usage("missing bivariate settings".into()))?;
    let outcome = &cfg.columns.outcomes[0];
    let outcome2 = cfg.columns.outcome2.as_deref().ok_or_else(|| CliError::Usage("missing `--outcome2`".into()))?;
    let ing = build_table(&raw, &cfg.columns, outcome, Some(outcome2), true)?;
    let table = &ing.table;
    let zv = table.z_values().ok_or(drdid_core::Error::MissingSecondOutcome)?;
    let gy = lattice(&table.y_values(), bcfg.lattice_y.as_ref())?;
    let gz = lattice(&zv, bcfg.lattice_z.as_ref())?;
    let design = cfg.design();
    let r = |s: &str| s.parse::<TermList>().expect("validated at resolution");
    let spec = BivSpec {
        y: design.clone(),
        z: design,
        r_alpha: r(&bcfg.r_terms[0]),
        r_beta: r(&bcfg.r_terms[1]),
        r_gamma: r(&bcfg.r_terms[2]),
    };
    let method = cfg.rank_method();
    let problem = BivProblem::new(table, &spec, &gy, &gz)?;
    let fit = problem.fit(None, None)?;
    let cf = problem.counterfactual(&fit, None)?;
    let obs = observed_joint(table, &gy, &gz, None)?;
    let pmf = pmf_clipped(&cf)?;
    if pmf.clipped > bcfg.max_clipped {
        return Err(drdid_core::Error::ExcessiveClipping { clipped: pmf.clipped }.into());
    }
    let cf_rank = rank_corr_pmf(&pmf, Arm::Counterfactual, method)?;
    let tr_rank = rank_corr_treated(table, None)?;

    let intervals = cfg.bootstrap.replicates > 0;
    let run = if intervals {
        let opts = BootstrapOptions { replicates: cfg.bootstrap.replicates, seed: cfg.bootstrap.seed, scheme: cfg.scheme() };
        Some(bootstrap_rank_corr(table, &spec, &gy, &gz, &opts, method)?)
    } else {
        None
    };
    let mut ranks = Table::new(interval_header(
        vec!["measure".into(), "arm".into(), "estimate".into()],
        &cfg.bootstrap.alpha,
        intervals,
    ));
    let points = [
        tr_rank.kendall,
        cf_rank.kendall,
        tr_rank.kendall - cf_rank.kendall,
        tr_rank.spearman,
        cf_rank.spearman,
        tr_rank.spearman - cf_rank.spearman,
    ];
    for (k, label) in RANK_LABELS.iter().enumerate() {
        let (measure, arm) = label.split_once(':').expect("labels are measure:arm");
        let mut row = vec![measure.to_string(), arm.to_string(), fmt_f(points[k])];
        if let Some(run) = &run {
            let rep = &run.scalars[k];
            for &a in &cfg.bootstrap.alpha {
                let iv = scalar_interval(rep, a, cfg.interval())?;
                row.push(fmt_opt(iv.map(|v| v.0)));
                row.push(fmt_opt(iv.map(|v| v.1)));
            }
        }
        ranks.push(row);
    }
    let boot = run.as_ref().map(|run| BootstrapDiagnostics {
        replicates: run.replicates,
        scheme: run.scheme.to_string(),
        failed: run.failed.len(),
        nonconverged: run.nonconverged.len(),
        heavy_clipping: run.heavy_clipping.len(),
        critical_values: Vec::new(),
        floored_points: 0,
        degenerate_scale: false,
    });
    let diag = BivDiagnostics {
        outcome: outcome.clone(),
        outcome2: outcome2.to_string(),
        rows: table.len(),
        dropped_rows: ing.dropped,
        lattice: [gy.len(), gz.len()],
        nonconverged_points: fit.nonconverged() + fit.y_fit.nonconverged() + fit.z_fit.nonconverged(),
        degenerate_quadrants: fit.degenerate_quadrants(),
        probability_clamps: fit.clamp_events,
        quadrant_floor_hits: fit.diagnostics.iter().flatten().map(|d| d.floor_hits).sum(),
        surface_repair: cf.repair,
        clipped_mass: pmf.clipped,
        bootstrap: boot,
    };

    ensure_dir(&cfg.out_dir)?;
    let joint_name = format!("joint_{}_{}.csv", file_stem(outcome), file_stem(outcome2));
    joint_table(&cf, &obs).write(&cfg.out_dir.join(&joint_name))?;
    ranks.write(&cfg.out_dir.join("rankcorr.csv"))?;
    let manifest = Manifest {
        tool: TOOL,
        version: env!("CARGO_PKG_VERSION"),
        command: "fit2",
        seed: cfg.bootstrap.seed,
        config_hash: cfg.hash(),
        data_sha256: Some(file_sha256(&cfg.data)?),
        config: cfg,
        files: vec![joint_name, "rankcorr.csv".into(), "manifest.json".into()],
        outcomes: Vec::new(),
        bivariate: Some(diag),
        simulation: None,
    };
    write_json(&cfg.out_dir.join("manifest.json"), &manifest)
}

#[derive(Debug, Serialize)]
pub struct ValidationSummary {
    pub outcome: String,
    pub rows: usize,
    pub dropped_rows: usize,
    pub panel: bool,
    pub cell_sizes: [[usize; 2]; 2],
    pub violations: Vec<String>,
}

/// Data checks only; prints one summary per outcome and fails on any violation.
pub fn validate_data(cfg: &RunConfig) -> CliResult<Vec<ValidationSummary>> {
    let raw = load(cfg)?;
    let mut out = Vec::new();
    for outcome in &cfg.columns.outcomes {
        let ing = build_table(&raw, &cfg.columns, outcome, cfg.columns.outcome2.as_deref(), false)?;
        let report = validate(&ing.table);
        out.push(ValidationSummary {
            outcome: outcome.clone(),
            rows: ing.table.len(),
            dropped_rows: ing.dropped,
            panel: ing.table.panel_mode() == PanelMode::Panel,
            cell_sizes: ing.table.cell_sizes(),
            violations: report.violations.iter().map(|v| v.to_string()).collect(),
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct SimDiagnostics {
    rows: usize,
    assumption_violated: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    sup_error_counterfactual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_points: Option<usize>,
}

fn dgp(cfg: &SimConfig) -> CliResult<DgpSpec> {
    let mut spec = DgpSpec::default_logit(cfg.n_per_cell, cfg.seed);
    spec.link = cfg.link.parse::<Link>()?;
    spec.panel = cfg.panel;
    if let Some([a, b, c]) = cfg.copula {
        spec = spec.with_copula(a, b, c);
    }
    if cfg.delta != 0.0 {
        spec.y.delta = CoefficientPath::constant(&default_knots(), cfg.delta);
    }
    spec.validate()?;
    Ok(spec)
}

fn data_table(table: &ObservationTable) -> Table {
    let mut header: Vec<String> = ["id", "time", "group", "y"].iter().map(|s| s.to_string()).collect();
    if table.has_second_outcome() {
        header.push("z".into());
    }
    header.extend(table.covariate_names().iter().cloned());
    let mut t = Table::new(header);
    for r in table.rows() {
        let mut row = vec![r.id.to_string(), r.t.to_string(), r.g.to_string(), fmt_f(r.y)];
        if let Some(z) = r.z {
            row.push(fmt_f(z));
        }
        row.extend(r.x.iter().map(|v| fmt_f(*v)));
        t.push(row);
    }
    t
}

/// Generates a dataset from the configured design; optionally estimates on it.
pub fn simulate(cfg: &SimConfig) -> CliResult<()> {
    let spec = dgp(cfg)?;
    let table = generate(&spec)?;
    let violated = !spec.y.delta.is_zero();
    ensure_dir(&cfg.out_dir)?;
    data_table(&table).write(&cfg.out_dir.join("data.csv"))?;
    let mut files = vec!["data.csv".to_string()];
    let mut diag = SimDiagnostics { rows: table.len(), assumption_violated: violated, sup_error_counterfactual: None, grid_points: None };
    if cfg.estimate {
        let grid = build_grid(&table.y_values(), &cfg.grid.parse::<GridPolicy>()?)?;
        let problem = DrProblem::new(&table, &drdid_core::DesignSpec::intercepts(spec.link), &grid)?;
        let fit = problem.fit(None, None)?;
        let cf = rearrange(&problem.counterfactual(&fit, None)?);
        let obs = problem.observed(None)?;
        let truth = if violated { None } else { Some(true_counterfactual(&spec, grid.points())?) };
        let mut header: Vec<String> = ["y", "f0", "f1"].iter().map(|s| s.to_string()).collect();
        if truth.is_some() {
            header.push("f0_true".into());
        }
        let mut t = Table::new(header);
        for j in 0..grid.len() {
            let mut row = vec![fmt_f(grid.points()[j]), fmt_f(cf.cdf[j]), fmt_f(obs.cdf[j])];
            if let Some(tr) = &truth {
                row.push(fmt_f(tr.cdf[j]));
            }
            t.push(row);
        }
        t.write(&cfg.out_dir.join("curves_y.csv"))?;
        files.push("curves_y.csv".into());
        diag.grid_points = Some(grid.len());
        diag.sup_error_counterfactual = truth.map(|tr| {
            tr.cdf.iter().zip(&cf.cdf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        });
    }
    files.push("manifest.json".into());
    let manifest = Manifest {
        tool: TOOL,
        version: env!("CARGO_PKG_VERSION"),
        command: "simulate",
        seed: cfg.seed,
        config_hash: cfg.hash(),
        data_sha256: None,
        config: cfg,
        files,
        outcomes: Vec::new(),
        bivariate: None,
        simulation: Some(diag),
    };
    write_json(&cfg.out_dir.join("manifest.json"), &manifest)
}
