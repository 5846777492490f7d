//! Run configuration: TOML file merged with command-line flags.

use crate::error::{CliError, CliResult};
use clap::Args;
use drdid_core::biv::{RankMethod, MAX_CLIPPED_MASS};
use drdid_core::infer::{IntervalMethod, WeightScheme, DEFAULT_REPLICATES};
use drdid_core::{DesignSpec, GridPolicy, Link, TermList};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Seed used when none is configured.
pub const DEFAULT_SEED: u64 = 20_240_101;
pub const DEFAULT_QUANTILES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];
pub const DEFAULT_ALPHAS: [f64; 1] = [0.05];
pub const DEFAULT_DRAWS: usize = 200_000;

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Delimited data file with a header row.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Outcome column, or a comma-separated list for `fit`.
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub outcome2: Option<String>,
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long)]
    pub time: Option<String>,
    #[arg(long)]
    pub id: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long)]
    pub covariates: Option<String>,
    #[arg(long)]
    pub link: Option<String>,
    /// `all`, `quantile:K` or a comma-separated list of thresholds.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub quantiles: Option<String>,
    /// Bootstrap replicates; 0 disables inference.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated significance levels.
    #[arg(long)]
    pub alpha: Option<String>,
    /// `percentile` or `symmetric_t`.
    #[arg(long)]
    pub interval: Option<String>,
    /// `exponential` or `multinomial`.
    #[arg(long)]
    pub scheme: Option<String>,
    /// `pmf` or `sampled`.
    #[arg(long)]
    pub rank_method: Option<String>,
    /// Lattice policy for both outcomes in `fit2`.
    #[arg(long)]
    pub lattice: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_per_cell: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub link: Option<String>,
    /// Copula index coefficients `a,b,c`; adds a second outcome.
    #[arg(long)]
    pub copula: Option<String>,
    /// Constant interaction shift; nonzero violates the identifying assumption.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub panel: bool,
    /// Also estimate on the generated data.
    #[arg(long)]
    pub estimate: bool,
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnsFile {
    pub id: Option<String>,
    pub time: Option<String>,
    pub group: Option<String>,
    pub outcome: Option<OneOrMany>,
    pub outcome2: Option<String>,
    pub covariates: Option<Vec<String>>,
    /// `[pre, post]` labels of the time column.
    pub time_levels: Option<[String; 2]>,
    /// `[control, treated]` labels of the group column.
    pub group_levels: Option<[String; 2]>,
    pub panel: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub link: Option<String>,
    pub grid: Option<String>,
    pub quantiles: Option<Vec<f64>>,
    pub alpha_terms: Option<String>,
    pub beta_terms: Option<String>,
    pub gamma_terms: Option<String>,
    pub theta_terms: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapFile {
    pub replicates: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<Vec<f64>>,
    pub interval: Option<String>,
    pub scheme: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BivariateFile {
    pub lattice_y: Option<String>,
    pub lattice_z: Option<String>,
    pub rank_method: Option<String>,
    pub draws: Option<usize>,
    /// Largest clipped probability mass accepted in the joint surface.
    pub max_clipped: Option<f64>,
    pub r_alpha_terms: Option<String>,
    pub r_beta_terms: Option<String>,
    pub r_gamma_terms: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateFile {
    pub n_per_cell: Option<usize>,
    pub seed: Option<u64>,
    pub link: Option<String>,
    pub copula: Option<[f64; 3]>,
    pub delta: Option<f64>,
    pub panel: Option<bool>,
    pub estimate: Option<bool>,
    pub grid: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub delimiter: Option<char>,
    #[serde(default)]
    pub columns: ColumnsFile,
    #[serde(default)]
    pub model: ModelFile,
    #[serde(default)]
    pub bootstrap: BootstrapFile,
    #[serde(default)]
    pub bivariate: BivariateFile,
    #[serde(default)]
    pub simulate: SimulateFile,
}

impl ConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config `{}`: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config `{}`: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Columns {
    pub id: Option<String>,
    pub time: String,
    pub group: String,
    pub outcomes: Vec<String>,
    pub outcome2: Option<String>,
    pub covariates: Vec<String>,
    pub time_levels: Option<[String; 2]>,
    pub group_levels: Option<[String; 2]>,
    pub panel: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    pub alpha: Vec<f64>,
    pub interval: String,
    pub scheme: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BivariateConfig {
    pub lattice_y: Option<String>,
    pub lattice_z: Option<String>,
    pub rank_method: String,
    pub draws: usize,
    pub max_clipped: f64,
    pub r_terms: [String; 3],
}

/// Fully resolved settings of a `fit` or `fit2` run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: PathBuf,
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub delimiter: char,
    pub columns: Columns,
    pub link: String,
    pub grid: String,
    pub quantiles: Vec<f64>,
    pub terms: [String; 4],
    pub bootstrap: BootstrapConfig,
    pub bivariate: Option<BivariateConfig>,
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
}

fn parse_floats(s: &str, what: &str) -> CliResult<Vec<f64>> {
    split_list(s)
        .iter()
        .map(|v| v.parse::<f64>().map_err(|_| CliError::Usage(format!("invalid {what} value `{v}`"))))
        .collect()
}

fn required(v: Option<String>, flag: &str) -> CliResult<String> {
    v.ok_or_else(|| CliError::Usage(format!("missing required setting `{flag}`")))
}

fn core(e: drdid_core::Error) -> CliError {
    CliError::Usage(e.to_string())
}

impl RunConfig {
    /// Merges the optional config file with flags; `bivariate` selects `fit2` settings.
    pub fn resolve(args: &RunArgs, bivariate: bool) -> CliResult<Self> {
        let file = match &args.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let c = &file.columns;
        let data = args.data.clone().or(file.data.clone()).ok_or_else(|| CliError::Usage("missing `--data`".into()))?;
        let outcomes = match (&args.outcome, &c.outcome) {
            (Some(s), _) => split_list(s),
            (None, Some(OneOrMany::One(s))) => vec![s.clone()],
            (None, Some(OneOrMany::Many(v))) => v.clone(),
            (None, None) => Vec::new(),
        };
        if outcomes.is_empty() {
            return Err(CliError::Usage("missing `--outcome`".into()));
        }
        let outcome2 = args.outcome2.clone().or(c.outcome2.clone());
        if bivariate {
            if outcome2.is_none() {
                return Err(CliError::Usage("`fit2` needs `--outcome2`".into()));
            }
            if outcomes.len() != 1 {
                return Err(CliError::Usage("`fit2` takes a single `--outcome`".into()));
            }
        }
        let covariates = match &args.covariates {
            Some(s) => split_list(s),
            None => c.covariates.clone().unwrap_or_default(),
        };
        let columns = Columns {
            id: args.id.clone().or(c.id.clone()),
            time: required(args.time.clone().or(c.time.clone()), "--time")?,
            group: required(args.group.clone().or(c.group.clone()), "--group")?,
            outcomes,
            outcome2: if bivariate { outcome2 } else { None },
            covariates,
            time_levels: c.time_levels.clone(),
            group_levels: c.group_levels.clone(),
            panel: c.panel,
        };

        let link: Link = args
            .link
            .clone()
            .or(file.model.link.clone())
            .unwrap_or_else(|| "logit".into())
            .parse()
            .map_err(core)?;
        let grid: GridPolicy =
            args.grid.clone().or(file.model.grid.clone()).unwrap_or_else(|| "all".into()).parse().map_err(core)?;
        let quantiles = match &args.quantiles {
            Some(s) => parse_floats(s, "quantile")?,
            None => file.model.quantiles.clone().unwrap_or_else(|| DEFAULT_QUANTILES.to_vec()),
        };
        if quantiles.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return Err(CliError::Usage("quantiles must lie in (0, 1)".into()));
        }
        let default_terms = || {
            if columns.covariates.is_empty() {
                TermList::intercept_only()
            } else {
                TermList::linear(&columns.covariates)
            }
        };
        let term = |v: &Option<String>| -> CliResult<String> {
            Ok(match v {
                Some(s) => s.parse::<TermList>().map_err(core)?.to_string(),
                None => default_terms().to_string(),
            })
        };
        let m = &file.model;
        let terms = [term(&m.alpha_terms)?, term(&m.beta_terms)?, term(&m.gamma_terms)?, term(&m.theta_terms)?];

        let b = &file.bootstrap;
        let alpha = match &args.alpha {
            Some(s) => parse_floats(s, "alpha")?,
            None => b.alpha.clone().unwrap_or_else(|| DEFAULT_ALPHAS.to_vec()),
        };
        if alpha.is_empty() || alpha.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(CliError::Usage("alpha must lie in (0, 1)".into()));
        }
        let interval: IntervalMethod =
            args.interval.clone().or(b.interval.clone()).unwrap_or_else(|| "percentile".into()).parse().map_err(core)?;
        let scheme: WeightScheme =
            args.scheme.clone().or(b.scheme.clone()).unwrap_or_else(|| "exponential".into()).parse().map_err(core)?;
        let bootstrap = BootstrapConfig {
            replicates: args.bootstrap.or(b.replicates).unwrap_or(DEFAULT_REPLICATES),
            seed: args.seed.or(b.seed).unwrap_or(DEFAULT_SEED),
            alpha,
            interval: interval.to_string(),
            scheme: scheme.to_string(),
        };

        let bivariate = if bivariate {
            let v = &file.bivariate;
            let method = args.rank_method.clone().or(v.rank_method.clone()).unwrap_or_else(|| "pmf".into());
            if !matches!(method.as_str(), "pmf" | "sampled") {
                return Err(CliError::Usage(format!("unknown rank method `{method}`")));
            }
            let lattice = |s: &Option<String>| -> CliResult<Option<String>> {
                s.as_ref().map(|s| s.parse::<GridPolicy>().map(|g| g.to_string()).map_err(core)).transpose()
            };
            let r = |s: &Option<String>| -> CliResult<String> {
                Ok(match s {
                    Some(s) => s.parse::<TermList>().map_err(core)?.to_string(),
                    None => TermList::intercept_only().to_string(),
                })
            };
            let max_clipped = v.max_clipped.unwrap_or(MAX_CLIPPED_MASS);
            if !(0.0..=1.0).contains(&max_clipped) {
                return Err(CliError::Usage("max_clipped must lie in [0, 1]".into()));
            }
            Some(BivariateConfig {
                lattice_y: lattice(&args.lattice.clone().or(v.lattice_y.clone()))?,
                lattice_z: lattice(&args.lattice.clone().or(v.lattice_z.clone()))?,
                rank_method: method,
                draws: v.draws.unwrap_or(DEFAULT_DRAWS),
                max_clipped,
                r_terms: [r(&v.r_alpha_terms)?, r(&v.r_beta_terms)?, r(&v.r_gamma_terms)?],
            })
        } else {
            None
        };

        let delimiter = file.delimiter.unwrap_or_else(|| {
            if data.extension().is_some_and(|e| e == "tsv" || e == "tab") {
                '\t'
            } else {
                ','
            }
        });
        Ok(RunConfig {
            out_dir: args.out_dir.clone().or(file.out_dir.clone()).unwrap_or_else(|| PathBuf::from("drdid-out")),
            data,
            delimiter,
            columns,
            link: link.to_string(),
            grid: grid.to_string(),
            quantiles,
            terms,
            bootstrap,
            bivariate,
        })
    }

    /// SHA-256 of the canonical JSON form, output location excluded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn link(&self) -> Link {
        self.link.parse().expect("validated at resolution")
    }

    pub fn grid_policy(&self) -> GridPolicy {
        self.grid.parse().expect("validated at resolution")
    }

    pub fn design(&self) -> DesignSpec {
        let t = |s: &str| s.parse::<TermList>().expect("validated at resolution");
        DesignSpec {
            alpha: t(&self.terms[0]),
            beta: t(&self.terms[1]),
            gamma: t(&self.terms[2]),
            theta: t(&self.terms[3]),
            link: self.link(),
        }
    }

    pub fn interval(&self) -> IntervalMethod {
        self.bootstrap.interval.parse().expect("validated at resolution")
    }

    pub fn scheme(&self) -> WeightScheme {
        self.bootstrap.scheme.parse().expect("validated at resolution")
    }

    pub fn rank_method(&self) -> RankMethod {
        match self.bivariate.as_ref().map(|b| (b.rank_method.as_str(), b.draws)) {
            Some(("sampled", draws)) => RankMethod::Sampled { seed: self.bootstrap.seed, draws },
            _ => RankMethod::Pmf,
        }
    }
}

/// Resolved settings of a `simulate` run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub n_per_cell: usize,
    pub seed: u64,
    pub link: String,
    pub copula: Option<[f64; 3]>,
    pub delta: f64,
    pub panel: bool,
    pub estimate: bool,
    pub grid: String,
    #[serde(skip)]
    pub out_dir: PathBuf,
}

impl SimConfig {
    pub fn resolve(args: &SimArgs) -> CliResult<Self> {
        let file = match &args.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let s = &file.simulate;
        let link: Link = args.link.clone().or(s.link.clone()).unwrap_or_else(|| "logit".into()).parse().map_err(core)?;
        let grid: GridPolicy =
            args.grid.clone().or(s.grid.clone()).unwrap_or_else(|| "quantile:20".into()).parse().map_err(core)?;
        let copula = match &args.copula {
            Some(v) => {
                let c = parse_floats(v, "copula")?;
                let arr: [f64; 3] =
                    c.try_into().map_err(|_| CliError::Usage("`--copula` takes three values a,b,c".into()))?;
                Some(arr)
            }
            None => s.copula,
        };
        Ok(SimConfig {
            n_per_cell: args.n_per_cell.or(s.n_per_cell).unwrap_or(1000),
            seed: args.seed.or(s.seed).unwrap_or(DEFAULT_SEED),
            link: link.to_string(),
            copula,
            delta: args.delta.or(s.delta).unwrap_or(0.0),
            panel: args.panel || s.panel.unwrap_or(false),
            estimate: args.estimate || s.estimate.unwrap_or(false),
            grid: grid.to_string(),
            out_dir: args.out_dir.clone().or(file.out_dir.clone()).unwrap_or_else(|| PathBuf::from("drdid-out")),
        })
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}
