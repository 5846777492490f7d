//! Univariate estimation: threshold fits, counterfactual and observed CDFs of
//! the treated in the post period, and their treatment-effect functionals.

use crate::mle::{check_rank, fit_grouped, BinaryGroups, SolverOptions};
use crate::model::{CompiledDesign, DesignSpec, ObservationTable, ThresholdGrid};
use crate::{Error, Link, Result};
use rayon::prelude::*;
use std::collections::HashMap;

/// Grid points fitted sequentially with warm starts before a new chain begins.
pub const CHAIN_LEN: usize = 8;

/// A fitted cell probability this close to 0 or 1, in a cell whose indicators
/// are all equal, is read as the separated limit and enters at the clamp bound.
pub const SEPARATION_TOL: f64 = 1e-6;

/// Per-threshold fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    /// Some (g, t) cell has a constant indicator at this threshold.
    pub degenerate_cell: bool,
}

/// Coefficient functions estimated on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DrFit {
    pub grid: ThresholdGrid,
    /// Stacked `(α, β, γ, θ)` per grid point.
    pub coefficients: Vec<Vec<f64>>,
    pub link: Link,
    pub spec: DesignSpec,
    pub diagnostics: Vec<PointDiagnostics>,
}

impl DrFit {
    fn block(&self, k: usize, which: usize) -> &[f64] {
        let d = self.spec.dims();
        let start: usize = d[..which].iter().sum();
        &self.coefficients[k][start..start + d[which]]
    }

    pub fn alpha(&self, k: usize) -> &[f64] {
        self.block(k, 0)
    }

    pub fn beta(&self, k: usize) -> &[f64] {
        self.block(k, 1)
    }

    pub fn gamma(&self, k: usize) -> &[f64] {
        self.block(k, 2)
    }

    pub fn theta(&self, k: usize) -> &[f64] {
        self.block(k, 3)
    }

    pub fn nonconverged(&self) -> usize {
        self.diagnostics.iter().filter(|d| !d.converged).count()
    }

    pub fn degenerate_points(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.degenerate_cell).count()
    }

    /// Length of the coefficient prefix that excludes θ.
    fn untreated_width(&self) -> usize {
        let d = self.spec.dims();
        d[0] + d[1] + d[2]
    }
}

/// Estimated CDF of the treated in the post period on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DistEstimate {
    pub points: Vec<f64>,
    pub cdf: Vec<f64>,
    /// Passed through [`rearrange`], hence nondecreasing.
    pub rearranged: bool,
    /// Rearrangement changed the order of the values.
    pub reordered: bool,
    /// Weighted count of treated post-period rows.
    pub n11: f64,
    /// Upper end of the outcome support; the CDF equals 1 there.
    pub support_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectCurve {
    pub points: Vec<f64>,
    pub tau: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QteResult {
    pub q: f64,
    /// `None` when a quantile lies above the estimated support of either arm.
    pub value: Option<f64>,
    pub interval: Option<(f64, f64)>,
}

fn resolve_weights(weights: Option<&[f64]>, n: usize) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0; n]),
        Some(w) if w.len() != n => {
            Err(Error::DimensionMismatch(format!("{} weights for {n} rows", w.len())))
        }
        Some(w) if w.iter().any(|v| !v.is_finite() || *v < 0.0) => {
            Err(Error::InvalidArgument("weights must be finite and nonnegative".into()))
        }
        Some(w) => Ok(w.to_vec()),
    }
}

fn x_key(x: &[f64], g: u8, t: u8) -> Vec<u64> {
    let mut k = Vec::with_capacity(x.len() + 1);
    k.push(u64::from(g) << 1 | u64::from(t));
    k.extend(x.iter().map(|v| if *v == 0.0 { 0 } else { v.to_bits() }));
    k
}

/// A table prepared for repeated weighted fits on one grid: rows collapsed to
/// distinct (g, t, x) patterns and sorted by outcome.
#[derive(Debug, Clone)]
pub struct DrProblem {
    spec: DesignSpec,
    grid: ThresholdGrid,
    p: usize,
    /// Row-major `patterns × p` full design rows.
    patterns: Vec<f64>,
    pattern_cell: Vec<(u8, u8)>,
    /// For each treated pattern, the design rows of cells (1,0), (0,1), (0,0)
    /// at its covariates and the matching sample pattern, if any.
    untreated_parts: Vec<Option<[(Vec<f64>, Option<usize>); 3]>>,
    row_pattern: Vec<usize>,
    /// Row positions ordered by outcome.
    order: Vec<usize>,
    y: Vec<f64>,
    n_rows: usize,
}

impl DrProblem {
    pub fn new(table: &ObservationTable, spec: &DesignSpec, grid: &ThresholdGrid) -> Result<Self> {
        Self::with_outcome(table, spec, grid, table.y_values())
    }

    pub(crate) fn with_outcome(
        table: &ObservationTable,
        spec: &DesignSpec,
        grid: &ThresholdGrid,
        y: Vec<f64>,
    ) -> Result<Self> {
        let compiled: CompiledDesign = spec.compile(table.covariate_names())?;
        let p = spec.width();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut patterns = Vec::new();
        let mut pattern_cell = Vec::new();
        let mut pattern_x: Vec<&[f64]> = Vec::new();
        let mut row_pattern = Vec::with_capacity(table.len());
        for r in table.rows() {
            let k = *index.entry(x_key(&r.x, r.g, r.t)).or_insert_with(|| {
                patterns.extend(compiled.row(&r.x, r.g, r.t));
                pattern_cell.push((r.g, r.t));
                pattern_x.push(&r.x);
                pattern_cell.len() - 1
            });
            row_pattern.push(k);
        }
        check_rank(&patterns, p, |_| true)?;
        let untreated_parts = pattern_cell
            .iter()
            .zip(&pattern_x)
            .map(|(&cell, x)| {
                (cell == (1, 1)).then(|| {
                    [(1, 0), (0, 1), (0, 0)]
                        .map(|(g, t)| (compiled.row(x, g, t), index.get(&x_key(x, g, t)).copied()))
                })
            })
            .collect();
        let mut order: Vec<usize> = (0..y.len()).collect();
        order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
        Ok(DrProblem {
            spec: spec.clone(),
            grid: grid.clone(),
            p,
            patterns,
            pattern_cell,
            untreated_parts,
            row_pattern,
            order,
            y,
            n_rows: table.len(),
        })
    }

    pub fn grid(&self) -> &ThresholdGrid {
        &self.grid
    }

    pub fn spec(&self) -> &DesignSpec {
        &self.spec
    }

    pub fn n_patterns(&self) -> usize {
        self.pattern_cell.len()
    }

    pub(crate) fn pattern_row(&self, k: usize) -> &[f64] {
        &self.patterns[k * self.p..(k + 1) * self.p]
    }

    pub(crate) fn row_pattern(&self) -> &[usize] {
        &self.row_pattern
    }

    pub(crate) fn pattern_cell(&self, k: usize) -> (u8, u8) {
        self.pattern_cell[k]
    }

    /// Per-pattern weight of `Y ≤ y` for every grid point, and total weights.
    fn sufficient_stats(&self, w: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n_pat = self.n_patterns();
        let mut total = vec![0.0; n_pat];
        for (i, &k) in self.row_pattern.iter().enumerate() {
            total[k] += w[i];
        }
        let mut below = vec![0.0; n_pat];
        let mut out = Vec::with_capacity(self.grid.len());
        let mut pos = 0;
        for &y in self.grid.points() {
            while pos < self.order.len() && self.y[self.order[pos]] <= y {
                let i = self.order[pos];
                below[self.row_pattern[i]] += w[i];
                pos += 1;
            }
            out.push(below.clone());
        }
        (out, total)
    }

    /// Weighted threshold fits on every grid point. `init` supplies per-point
    /// starting values, otherwise each chain of [`CHAIN_LEN`] points starts at
    /// zero and warm-starts along the grid.
    pub fn fit(&self, weights: Option<&[f64]>, init: Option<&DrFit>) -> Result<DrFit> {
        self.fit_with(weights, init, &SolverOptions::default())
    }

    pub fn fit_with(
        &self,
        weights: Option<&[f64]>,
        init: Option<&DrFit>,
        opts: &SolverOptions,
    ) -> Result<DrFit> {
        let w = resolve_weights(weights, self.n_rows)?;
        let n_eff = w.iter().filter(|&&v| v > 0.0).count() as f64;
        if n_eff == 0.0 {
            return Err(Error::InvalidArgument("weights must have a positive sum".into()));
        }
        if let Some(f) = init {
            if f.coefficients.len() != self.grid.len() {
                return Err(Error::GridMismatch);
            }
        }
        let (stats, total) = self.sufficient_stats(&w);
        let link = self.spec.link;
        let idx: Vec<usize> = (0..self.grid.len()).collect();
        let chains: Vec<Result<Vec<(Vec<f64>, PointDiagnostics)>>> = idx
            .par_chunks(CHAIN_LEN)
            .map(|chunk| {
                let mut out = Vec::with_capacity(chunk.len());
                let mut prev: Option<Vec<f64>> = None;
                for &k in chunk {
                    let s = &stats[k];
                    let f: Vec<f64> = total.iter().zip(s).map(|(t, s)| (t - s).max(0.0)).collect();
                    let groups = BinaryGroups { x: &self.patterns, p: self.p, s, f: &f, n_eff };
                    let start = init.map(|fit| fit.coefficients[k].as_slice()).or(prev.as_deref());
                    let location = format!("threshold y={}", self.grid.points()[k]);
                    let res = fit_grouped(&groups, link, start, opts, &location)?;
                    let degenerate_cell = self.degenerate_cell(s, &total);
                    prev = Some(res.coefficients.clone());
                    out.push((
                        res.coefficients,
                        PointDiagnostics {
                            converged: res.converged,
                            iterations: res.iterations,
                            gradient_norm: res.gradient_norm,
                            degenerate_cell,
                        },
                    ));
                }
                Ok(out)
            })
            .collect();
        let mut coefficients = Vec::with_capacity(self.grid.len());
        let mut diagnostics = Vec::with_capacity(self.grid.len());
        for chain in chains {
            for (c, d) in chain? {
                coefficients.push(c);
                diagnostics.push(d);
            }
        }
        Ok(DrFit {
            grid: self.grid.clone(),
            coefficients,
            link,
            spec: self.spec.clone(),
            diagnostics,
        })
    }

    fn degenerate_cell(&self, below: &[f64], total: &[f64]) -> bool {
        let mut s = [[0.0; 2]; 2];
        let mut t = [[0.0; 2]; 2];
        for (k, &(g, tt)) in self.pattern_cell.iter().enumerate() {
            s[g as usize][tt as usize] += below[k];
            t[g as usize][tt as usize] += total[k];
        }
        (0..2).any(|g| {
            (0..2).any(|tt| {
                let (s, t) = (s[g][tt], t[g][tt]);
                t > 0.0 && (s <= 0.0 || s >= t * (1.0 - 1e-12))
            })
        })
    }

    /// Counterfactual index of every treated pattern at every grid point,
    /// `[k][pattern]`, composed from the fitted untreated cell indices as
    /// `η₁₀ + η₀₁ − η₀₀` with each term clamped to the link range. Other
    /// patterns carry their own fitted index without θ.
    pub(crate) fn counterfactual_indices(&self, fit: &DrFit, w: &[f64]) -> Result<Vec<Vec<f64>>> {
        if fit.coefficients.len() != self.grid.len() {
            return Err(Error::GridMismatch);
        }
        let width = fit.untreated_width();
        let link = fit.link;
        let (lo, hi) = (link.inv(0.0), link.inv(1.0));
        let (stats, total) = self.sufficient_stats(w);
        let dot = |row: &[f64], c: &[f64]| -> f64 { row[..width].iter().zip(&c[..width]).map(|(a, b)| a * b).sum() };
        let part = |eta: f64, m: Option<usize>, below: &[f64]| -> f64 {
            if let Some(m) = m {
                let (b, t) = (below[m], total[m]);
                if t > 0.0 && b <= 0.0 && link.eval(eta) < SEPARATION_TOL {
                    return lo;
                }
                if t > 0.0 && b >= t * (1.0 - 1e-12) && link.eval(-eta) < SEPARATION_TOL {
                    return hi;
                }
            }
            eta.clamp(lo, hi)
        };
        Ok(fit
            .coefficients
            .iter()
            .zip(&stats)
            .map(|(c, below)| {
                (0..self.n_patterns())
                    .map(|k| match &self.untreated_parts[k] {
                        Some([(r10, m10), (r01, m01), (r00, m00)]) => {
                            part(dot(r10, c), *m10, below) + part(dot(r01, c), *m01, below)
                                - part(dot(r00, c), *m00, below)
                        }
                        None => dot(self.pattern_row(k), c),
                    })
                    .collect()
            })
            .collect())
    }

    /// Per-pattern total weight among treated post-period rows.
    fn treated_weights(&self, w: &[f64]) -> Result<(Vec<f64>, f64)> {
        let mut tw = vec![0.0; self.n_patterns()];
        for (i, &k) in self.row_pattern.iter().enumerate() {
            if self.pattern_cell[k] == (1, 1) {
                tw[k] += w[i];
            }
        }
        let n11: f64 = tw.iter().sum();
        if !(n11 > 0.0) {
            return Err(Error::NoTreatedRows);
        }
        Ok((tw, n11))
    }

    fn treated_average(&self, fit: &DrFit, w: &[f64]) -> Result<DistEstimate> {
        let width = self.p;
        if fit.coefficients.len() != self.grid.len() {
            return Err(Error::GridMismatch);
        }
        let (tw, n11) = self.treated_weights(w)?;
        let active: Vec<usize> = (0..tw.len()).filter(|&k| tw[k] > 0.0).collect();
        let cdf = fit
            .coefficients
            .iter()
            .map(|c| {
                let s: f64 = active
                    .iter()
                    .map(|&k| {
                        let row = self.pattern_row(k);
                        let eta: f64 = row[..width].iter().zip(&c[..width]).map(|(a, b)| a * b).sum();
                        tw[k] * fit.link.eval(eta)
                    })
                    .sum();
                (s / n11).clamp(0.0, 1.0)
            })
            .collect();
        Ok(DistEstimate {
            points: self.grid.points().to_vec(),
            cdf,
            rearranged: false,
            reordered: false,
            n11,
            support_max: self.grid.support_max(),
        })
    }

    /// Counterfactual CDF: treated rows evaluated without the θ block.
    pub fn counterfactual(&self, fit: &DrFit, weights: Option<&[f64]>) -> Result<DistEstimate> {
        let w = resolve_weights(weights, self.n_rows)?;
        let (tw, n11) = self.treated_weights(&w)?;
        let active: Vec<usize> = (0..tw.len()).filter(|&k| tw[k] > 0.0).collect();
        let cdf = self
            .counterfactual_indices(fit, &w)?
            .iter()
            .map(|eta| {
                let s: f64 = active.iter().map(|&k| tw[k] * fit.link.eval(eta[k])).sum();
                (s / n11).clamp(0.0, 1.0)
            })
            .collect();
        Ok(DistEstimate {
            points: self.grid.points().to_vec(),
            cdf,
            rearranged: false,
            reordered: false,
            n11,
            support_max: self.grid.support_max(),
        })
    }

    /// Plug-in treated CDF with the θ block included.
    pub fn fitted_treated(&self, fit: &DrFit, weights: Option<&[f64]>) -> Result<DistEstimate> {
        let w = resolve_weights(weights, self.n_rows)?;
        self.treated_average(fit, &w)
    }

    /// Weighted empirical CDF of treated post-period outcomes.
    pub fn observed(&self, weights: Option<&[f64]>) -> Result<DistEstimate> {
        let w = resolve_weights(weights, self.n_rows)?;
        let (_, n11) = self.treated_weights(&w)?;
        let mut cdf = Vec::with_capacity(self.grid.len());
        let mut acc = 0.0;
        let mut pos = 0;
        for &y in self.grid.points() {
            while pos < self.order.len() && self.y[self.order[pos]] <= y {
                let i = self.order[pos];
                if self.pattern_cell[self.row_pattern[i]] == (1, 1) {
                    acc += w[i];
                }
                pos += 1;
            }
            cdf.push((acc / n11).clamp(0.0, 1.0));
        }
        Ok(DistEstimate {
            points: self.grid.points().to_vec(),
            cdf,
            rearranged: false,
            reordered: false,
            n11,
            support_max: self.grid.support_max(),
        })
    }
}

/// Threshold regressions of `1(Y ≤ y)` on the pooled sample, one per grid point.
pub fn fit_dr(
    table: &ObservationTable,
    spec: &DesignSpec,
    grid: &ThresholdGrid,
    weights: Option<&[f64]>,
) -> Result<DrFit> {
    DrProblem::new(table, spec, grid)?.fit(weights, None)
}

/// Average over treated post-period rows of `Λ(p_α'α̂ + p_β'β̂ + p_γ'γ̂)`.
pub fn counterfactual_cdf(
    fit: &DrFit,
    table: &ObservationTable,
    weights: Option<&[f64]>,
) -> Result<DistEstimate> {
    DrProblem::new(table, &fit.spec, &fit.grid)?.counterfactual(fit, weights)
}

/// Plug-in treated CDF including θ; equals [`observed_cdf`] under the logit link.
pub fn fitted_treated_cdf(
    fit: &DrFit,
    table: &ObservationTable,
    weights: Option<&[f64]>,
) -> Result<DistEstimate> {
    DrProblem::new(table, &fit.spec, &fit.grid)?.fitted_treated(fit, weights)
}

/// Weighted empirical CDF of treated post-period outcomes on the grid.
pub fn observed_cdf(
    table: &ObservationTable,
    grid: &ThresholdGrid,
    weights: Option<&[f64]>,
) -> Result<DistEstimate> {
    let w = resolve_weights(weights, table.len())?;
    let mut n11 = 0.0;
    let mut treated: Vec<(f64, f64)> = Vec::new();
    for (r, &wi) in table.rows().iter().zip(&w) {
        if r.is_treated() {
            n11 += wi;
            treated.push((r.y, wi));
        }
    }
    if !(n11 > 0.0) {
        return Err(Error::NoTreatedRows);
    }
    treated.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cdf = Vec::with_capacity(grid.len());
    let (mut acc, mut pos) = (0.0, 0);
    for &y in grid.points() {
        while pos < treated.len() && treated[pos].0 <= y {
            acc += treated[pos].1;
            pos += 1;
        }
        cdf.push((acc / n11).clamp(0.0, 1.0));
    }
    Ok(DistEstimate {
        points: grid.points().to_vec(),
        cdf,
        rearranged: false,
        reordered: false,
        n11,
        support_max: grid.support_max(),
    })
}

/// Sorts the CDF values along the grid.
pub fn rearrange(est: &DistEstimate) -> DistEstimate {
    let mut cdf = est.cdf.clone();
    let monotone = cdf.windows(2).all(|w| w[0] <= w[1]);
    if !monotone {
        cdf.sort_by(f64::total_cmp);
    }
    DistEstimate { cdf, rearranged: true, reordered: est.reordered || !monotone, ..est.clone() }
}

/// Smallest grid point whose CDF value is at least `q`.
pub fn invert_cdf(est: &DistEstimate, q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level {q} outside (0,1)")));
    }
    let sorted;
    let est = if est.rearranged {
        est
    } else {
        sorted = rearrange(est);
        &sorted
    };
    let k = est.cdf.partition_point(|&f| f < q);
    est.points.get(k).copied().ok_or(Error::QuantileAboveSupport { q })
}

fn same_grid(a: &DistEstimate, b: &DistEstimate) -> Result<()> {
    if a.points != b.points || a.cdf.len() != b.cdf.len() {
        return Err(Error::GridMismatch);
    }
    Ok(())
}

/// τ(y) = F₁(y) − F₀(y).
pub fn dte(observed: &DistEstimate, counterfactual: &DistEstimate) -> Result<EffectCurve> {
    same_grid(observed, counterfactual)?;
    Ok(EffectCurve {
        points: observed.points.clone(),
        tau: observed.cdf.iter().zip(&counterfactual.cdf).map(|(a, b)| a - b).collect(),
        lower: None,
        upper: None,
    })
}

/// Differences of the generalized inverses at each level in `qs`.
pub fn qte(observed: &DistEstimate, counterfactual: &DistEstimate, qs: &[f64]) -> Result<Vec<QteResult>> {
    same_grid(observed, counterfactual)?;
    qs.iter()
        .map(|&q| {
            let value = match (invert_cdf(observed, q), invert_cdf(counterfactual, q)) {
                (Ok(a), Ok(b)) => Some(a - b),
                (Err(Error::QuantileAboveSupport { .. }), _)
                | (_, Err(Error::QuantileAboveSupport { .. })) => None,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            Ok(QteResult { q, value, interval: None })
        })
        .collect()
}

/// Mean implied by a CDF on the grid; mass above the last point sits at `support_max`.
pub fn distribution_mean(est: &DistEstimate) -> f64 {
    let mut prev = 0.0;
    let mut mean = 0.0;
    for (&y, &f) in est.points.iter().zip(&est.cdf) {
        mean += y * (f - prev);
        prev = f;
    }
    mean + est.support_max * (1.0 - prev)
}

/// Difference of the means implied by the two CDFs.
pub fn mean_effect(observed: &DistEstimate, counterfactual: &DistEstimate) -> Result<f64> {
    same_grid(observed, counterfactual)?;
    Ok(distribution_mean(observed) - distribution_mean(counterfactual))
}
