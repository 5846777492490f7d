//! Observations, validation, design vectors and threshold grids.

use crate::links::Link;
use crate::{Error, Result};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

/// One row of the sample: a unit observed in one period.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub id: u64,
    /// Period, 0 or 1.
    pub t: u8,
    /// Group, 0 (control) or 1 (treated).
    pub g: u8,
    pub y: f64,
    pub z: Option<f64>,
    pub x: Vec<f64>,
}

impl Observation {
    pub fn new(id: u64, t: u8, g: u8, y: f64) -> Self {
        Observation { id, t, g, y, z: None, x: Vec::new() }
    }

    pub fn with_z(mut self, z: f64) -> Self {
        self.z = Some(z);
        self
    }

    pub fn with_x(mut self, x: Vec<f64>) -> Self {
        self.x = x;
        self
    }

    /// Treated in the post period.
    pub fn is_treated(&self) -> bool {
        self.g == 1 && self.t == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PanelMode {
    Panel,
    RepeatedCrossSection,
}

/// Rectangular two-period, two-group sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    rows: Vec<Observation>,
    covariate_names: Vec<String>,
    has_second_outcome: bool,
    panel_mode: PanelMode,
}

impl ObservationTable {
    /// Builds and validates a table; fails with the first violation found.
    pub fn new(
        rows: Vec<Observation>,
        covariate_names: Vec<String>,
        panel_mode: PanelMode,
    ) -> Result<Self> {
        let table = Self::from_rows(rows, covariate_names, panel_mode);
        validate(&table).into_result()?;
        Ok(table)
    }

    /// Builds a table without validation. Use [`validate`] to inspect it.
    pub fn from_rows(
        rows: Vec<Observation>,
        covariate_names: Vec<String>,
        panel_mode: PanelMode,
    ) -> Self {
        let has_second_outcome = !rows.is_empty() && rows.iter().all(|r| r.z.is_some());
        ObservationTable { rows, covariate_names, has_second_outcome, panel_mode }
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn has_second_outcome(&self) -> bool {
        self.has_second_outcome
    }

    pub fn panel_mode(&self) -> PanelMode {
        self.panel_mode
    }

    pub fn y_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.y).collect()
    }

    /// Second outcome values, if every row has one.
    pub fn z_values(&self) -> Option<Vec<f64>> {
        self.has_second_outcome.then(|| self.rows.iter().map(|r| r.z.unwrap_or(f64::NAN)).collect())
    }

    /// Row counts indexed `[g][t]`.
    pub fn cell_sizes(&self) -> [[usize; 2]; 2] {
        let mut n = [[0; 2]; 2];
        for r in &self.rows {
            if r.g <= 1 && r.t <= 1 {
                n[r.g as usize][r.t as usize] += 1;
            }
        }
        n
    }

    /// Copy with the second outcome moved into the primary slot.
    pub fn second_as_primary(&self) -> Result<Self> {
        if !self.has_second_outcome {
            return Err(Error::MissingSecondOutcome);
        }
        let rows = self
            .rows
            .iter()
            .map(|r| Observation { z: Some(r.y), y: r.z.unwrap_or(f64::NAN), ..r.clone() })
            .collect();
        Ok(Self::from_rows(rows, self.covariate_names.clone(), self.panel_mode))
    }

    /// Copy with `f` applied to the primary outcome and `h` to the second.
    pub fn map_outcomes(&self, f: impl Fn(f64) -> f64, h: impl Fn(f64) -> f64) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| Observation { y: f(r.y), z: r.z.map(&h), ..r.clone() })
            .collect();
        Self::from_rows(rows, self.covariate_names.clone(), self.panel_mode)
    }
}

/// Violations of the table invariants; the table is acceptable iff empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Error>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        match self.violations.into_iter().next() {
            None => Ok(()),
            Some(e) => Err(e),
        }
    }
}

/// Checks cell coverage, panel uniqueness, covariate shape and finiteness.
pub fn validate(table: &ObservationTable) -> ValidationReport {
    let mut report = ValidationReport::default();
    let k = table.covariate_names.len();
    let mut bad_codes = 0usize;
    let mut non_finite = 0usize;
    let mut missing_z = 0usize;
    let any_z = table.rows.iter().any(|r| r.z.is_some());

    for (i, r) in table.rows.iter().enumerate() {
        if r.x.len() != k {
            report.violations.push(Error::RaggedCovariates { row: i, expected: k, found: r.x.len() });
        }
        if r.g > 1 || r.t > 1 {
            bad_codes += 1;
        }
        if !r.y.is_finite() || r.z.is_some_and(|z| !z.is_finite()) || r.x.iter().any(|v| !v.is_finite()) {
            non_finite += 1;
        }
        if any_z && r.z.is_none() {
            missing_z += 1;
        }
    }
    if bad_codes > 0 {
        report
            .violations
            .push(Error::InvalidTable(format!("{bad_codes} rows with group or time outside {{0,1}}")));
    }
    if non_finite > 0 {
        report.violations.push(Error::InvalidTable(format!("{non_finite} rows with non-finite values")));
    }
    if missing_z > 0 {
        report
            .violations
            .push(Error::InvalidTable(format!("second outcome missing on {missing_z} rows")));
    }

    let n = table.cell_sizes();
    for g in 0..2u8 {
        for t in 0..2u8 {
            if n[g as usize][t as usize] == 0 {
                report.violations.push(Error::EmptyCell { g, t });
            }
        }
    }

    if table.panel_mode == PanelMode::Panel {
        let mut seen = HashSet::new();
        let mut reported = HashSet::new();
        for r in &table.rows {
            if !seen.insert((r.id, r.t)) && reported.insert((r.id, r.t)) {
                report.violations.push(Error::DuplicatePanelRow { id: r.id, t: r.t });
            }
        }
    }
    report
}

/// One covariate transformation: the constant, or a product of powers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Term {
    Intercept,
    Monomial(Vec<(String, u32)>),
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Monomial(vec![(name.to_string(), 1)])
    }
}

impl FromStr for Term {
    type Err = Error;

    /// Accepts `1`, `a`, `a^2`, `a*b`, `a^2*b`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "1" {
            return Ok(Term::Intercept);
        }
        let mut factors = Vec::new();
        for part in s.split('*') {
            let part = part.trim();
            let (name, pow) = match part.split_once('^') {
                Some((n, p)) => {
                    let p: u32 = p.trim().parse().map_err(|_| Error::InvalidTerm(s.to_string()))?;
                    (n.trim(), p)
                }
                None => (part, 1),
            };
            let valid = !name.is_empty()
                && name.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.')
                && pow > 0;
            if !valid {
                return Err(Error::InvalidTerm(s.to_string()));
            }
            factors.push((name.to_string(), pow));
        }
        Ok(Term::Monomial(factors))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Intercept => f.write_str("1"),
            Term::Monomial(parts) => {
                for (i, (name, pow)) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str("*")?;
                    }
                    f.write_str(name)?;
                    if *pow != 1 {
                        write!(f, "^{pow}")?;
                    }
                }
                Ok(())
            }
        }
    }
}

/// Ordered term list whose first entry is the intercept.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TermList(Vec<Term>);

impl TermList {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        match terms.first() {
            Some(Term::Intercept) => Ok(TermList(terms)),
            _ => Err(Error::MissingIntercept),
        }
    }

    pub fn intercept_only() -> Self {
        TermList(vec![Term::Intercept])
    }

    /// Intercept followed by each named covariate entering linearly.
    pub fn linear(names: &[String]) -> Self {
        let mut terms = vec![Term::Intercept];
        terms.extend(names.iter().map(|n| Term::var(n)));
        TermList(terms)
    }

    pub fn terms(&self) -> &[Term] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Resolves covariate names to column positions.
    pub fn compile(&self, names: &[String]) -> Result<CompiledTerms> {
        let index: HashMap<&str, usize> =
            names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut factors = Vec::with_capacity(self.0.len());
        for term in &self.0 {
            match term {
                Term::Intercept => factors.push(Vec::new()),
                Term::Monomial(parts) => {
                    let mut f = Vec::with_capacity(parts.len());
                    for (name, pow) in parts {
                        let &col = index
                            .get(name.as_str())
                            .ok_or_else(|| Error::UnknownCovariate(name.clone()))?;
                        f.push((col, *pow));
                    }
                    factors.push(f);
                }
            }
        }
        Ok(CompiledTerms { factors })
    }
}

impl FromStr for TermList {
    type Err = Error;

    /// Comma-separated terms; the intercept is prepended when absent.
    fn from_str(s: &str) -> Result<Self> {
        let mut terms = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            terms.push(part.parse::<Term>()?);
        }
        if terms.first() != Some(&Term::Intercept) {
            terms.retain(|t| *t != Term::Intercept);
            terms.insert(0, Term::Intercept);
        }
        TermList::new(terms)
    }
}

impl fmt::Display for TermList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// Term list with covariates resolved to positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledTerms {
    factors: Vec<Vec<(usize, u32)>>,
}

impl CompiledTerms {
    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    /// Appends the evaluated terms for covariates `x`, each multiplied by `scale`.
    pub fn eval_into(&self, x: &[f64], scale: f64, out: &mut Vec<f64>) {
        for f in &self.factors {
            let mut v = scale;
            for &(col, pow) in f {
                v *= x[col].powi(pow as i32);
            }
            out.push(v);
        }
    }
}

/// Evaluates `terms` at one observation: a leading 1 and the transformations.
pub fn build_design(obs: &Observation, names: &[String], terms: &TermList) -> Result<Vec<f64>> {
    let compiled = terms.compile(names)?;
    if obs.x.len() != names.len() {
        return Err(Error::RaggedCovariates { row: 0, expected: names.len(), found: obs.x.len() });
    }
    let mut out = Vec::with_capacity(compiled.len());
    compiled.eval_into(&obs.x, 1.0, &mut out);
    Ok(out)
}

/// Term lists for the four coefficient functions and the link.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DesignSpec {
    pub alpha: TermList,
    pub beta: TermList,
    pub gamma: TermList,
    pub theta: TermList,
    pub link: Link,
}

impl DesignSpec {
    /// Saturated specification without covariates.
    pub fn intercepts(link: Link) -> Self {
        DesignSpec {
            alpha: TermList::intercept_only(),
            beta: TermList::intercept_only(),
            gamma: TermList::intercept_only(),
            theta: TermList::intercept_only(),
            link,
        }
    }

    /// Covariates enter α, β and γ linearly; θ is intercept-only.
    pub fn linear(names: &[String], link: Link) -> Self {
        DesignSpec {
            alpha: TermList::linear(names),
            beta: TermList::linear(names),
            gamma: TermList::linear(names),
            theta: TermList::intercept_only(),
            link,
        }
    }

    /// Block sizes (α, β, γ, θ).
    pub fn dims(&self) -> [usize; 4] {
        [self.alpha.len(), self.beta.len(), self.gamma.len(), self.theta.len()]
    }

    pub fn width(&self) -> usize {
        self.dims().iter().sum()
    }

    pub fn compile(&self, names: &[String]) -> Result<CompiledDesign> {
        Ok(CompiledDesign {
            alpha: self.alpha.compile(names)?,
            beta: self.beta.compile(names)?,
            gamma: self.gamma.compile(names)?,
            theta: self.theta.compile(names)?,
        })
    }
}

/// [`DesignSpec`] with covariate positions resolved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompiledDesign {
    pub alpha: CompiledTerms,
    pub beta: CompiledTerms,
    pub gamma: CompiledTerms,
    pub theta: CompiledTerms,
}

impl CompiledDesign {
    /// Full regression row `[p_α(x), t·p_β(x), g·p_γ(x), g·t·p_θ(x)]`.
    pub fn row(&self, x: &[f64], g: u8, t: u8) -> Vec<f64> {
        let (g, t) = (g as f64, t as f64);
        let mut out = Vec::new();
        self.alpha.eval_into(x, 1.0, &mut out);
        self.beta.eval_into(x, t, &mut out);
        self.gamma.eval_into(x, g, &mut out);
        self.theta.eval_into(x, g * t, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridPolicy {
    /// Sorted unique values without the sample maximum.
    AllUnique,
    /// The j/K sample quantiles, j = 1..K-1.
    Quantile(usize),
    Explicit(Vec<f64>),
}

impl FromStr for GridPolicy {
    type Err = Error;

    /// `all`, `quantile:K`, or a comma-separated list of points.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let lower = s.to_ascii_lowercase();
        if lower == "all" || lower == "all_unique" || lower == "unique" {
            return Ok(GridPolicy::AllUnique);
        }
        if let Some(k) = lower.strip_prefix("quantile:").or_else(|| lower.strip_prefix("q:")) {
            let k: usize = k
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad quantile grid `{s}`")))?;
            if k < 2 {
                return Err(Error::InvalidArgument("quantile grid needs K >= 2".into()));
            }
            return Ok(GridPolicy::Quantile(k));
        }
        let pts: std::result::Result<Vec<f64>, _> =
            s.split(',').map(|p| p.trim().parse::<f64>()).collect();
        match pts {
            Ok(p) if !p.is_empty() => Ok(GridPolicy::Explicit(p)),
            _ => Err(Error::InvalidArgument(format!("bad grid policy `{s}`"))),
        }
    }
}

impl fmt::Display for GridPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridPolicy::AllUnique => f.write_str("all"),
            GridPolicy::Quantile(k) => write!(f, "quantile:{k}"),
            GridPolicy::Explicit(p) => {
                let parts: Vec<String> = p.iter().map(|v| v.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

/// Strictly increasing outcome thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdGrid {
    points: Vec<f64>,
    policy: GridPolicy,
    support_max: f64,
}

impl ThresholdGrid {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn policy(&self) -> &GridPolicy {
        &self.policy
    }

    /// Largest value of the sample the grid was built from; the CDF is 1 there.
    pub fn support_max(&self) -> f64 {
        self.support_max
    }

    /// Image of the grid under a strictly increasing map.
    pub fn map(&self, h: impl Fn(f64) -> f64) -> Self {
        let points: Vec<f64> = self.points.iter().map(|&y| h(y)).collect();
        ThresholdGrid {
            policy: GridPolicy::Explicit(points.clone()),
            points,
            support_max: h(self.support_max),
        }
    }
}

/// Builds a grid on which every point splits the pooled sample.
pub fn build_grid(values: &[f64], policy: &GridPolicy) -> Result<ThresholdGrid> {
    if values.is_empty() {
        return Err(Error::EmptyValues);
    }
    let mut sorted: Vec<f64> = values.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite outcome value".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let (min, max) = (sorted[0], sorted[sorted.len() - 1]);
    if min == max {
        return Err(Error::DegenerateOutcome);
    }
    let mut points: Vec<f64> = match policy {
        GridPolicy::AllUnique => sorted.clone(),
        GridPolicy::Quantile(k) => {
            if *k < 2 {
                return Err(Error::InvalidArgument("quantile grid needs K >= 2".into()));
            }
            let n = sorted.len();
            (1..*k)
                .map(|j| {
                    let rank = ((n * j) as f64 / *k as f64).ceil() as usize;
                    sorted[rank.clamp(1, n) - 1]
                })
                .collect()
        }
        GridPolicy::Explicit(p) => {
            let mut p = p.clone();
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite grid point".into()));
            }
            p.sort_by(f64::total_cmp);
            p
        }
    };
    points.dedup();
    points.retain(|&y| y >= min && y < max);
    if points.is_empty() {
        return Err(Error::InvalidArgument("no grid point lies inside the outcome support".into()));
    }
    Ok(ThresholdGrid { points, policy: policy.clone(), support_max: max })
}
