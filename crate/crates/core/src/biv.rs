//! Bivariate estimation: copula-index lattice fits, joint CDF surfaces of the
//! treated in the post period, cell probabilities and rank correlations.

use crate::links::{binorm_cdf, bound_corr, norm_cdf, norm_inv};
use crate::mle::{check_rank, fit_copula_grouped, CopulaGroups, SolverOptions};
use crate::model::{CompiledTerms, DesignSpec, GridPolicy, ObservationTable, TermList, ThresholdGrid};
use crate::uni::{DrFit, DrProblem};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Clipped probability mass above which a surface is rejected.
pub const MAX_CLIPPED_MASS: f64 = 0.05;

/// Marginal specifications and term lists of the correlation index.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BivSpec {
    pub y: DesignSpec,
    pub z: DesignSpec,
    pub r_alpha: TermList,
    pub r_beta: TermList,
    pub r_gamma: TermList,
}

impl BivSpec {
    /// Both marginals use `marginal`; the correlation index is intercept-only.
    pub fn new(marginal: DesignSpec) -> Self {
        BivSpec {
            y: marginal.clone(),
            z: marginal,
            r_alpha: TermList::intercept_only(),
            r_beta: TermList::intercept_only(),
            r_gamma: TermList::intercept_only(),
        }
    }

    pub fn r_width(&self) -> usize {
        self.r_alpha.len() + self.r_beta.len() + self.r_gamma.len()
    }
}

/// Per-axis lattice: full support for up to 40 unique values, else 20 quantile bins.
pub fn default_lattice_policy(values: &[f64]) -> GridPolicy {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    if v.len() > 40 {
        GridPolicy::Quantile(20)
    } else {
        GridPolicy::AllUnique
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeDiagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub degenerate_quadrant: bool,
    pub floor_hits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BivFit {
    pub y_fit: DrFit,
    pub z_fit: DrFit,
    pub spec: BivSpec,
    /// Stacked correlation-index coefficients `[i][j]` at `(y_i, z_j)`.
    pub copula: Vec<Vec<Vec<f64>>>,
    pub diagnostics: Vec<Vec<LatticeDiagnostics>>,
    /// Probabilities clamped before Φ⁻¹ when forming marginal indices.
    pub clamp_events: usize,
}

impl BivFit {
    pub fn nonconverged(&self) -> usize {
        self.diagnostics.iter().flatten().filter(|d| !d.converged).count()
    }

    pub fn degenerate_quadrants(&self) -> usize {
        self.diagnostics.iter().flatten().filter(|d| d.degenerate_quadrant).count()
    }

    /// Fitted correlation at lattice point `(i, j)` for the row `r`.
    pub fn rho(&self, i: usize, j: usize, r: &[f64]) -> f64 {
        bound_corr(r.iter().zip(&self.copula[i][j]).map(|(a, b)| a * b).sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JointSource {
    Counterfactual,
    Observed,
}

/// Joint CDF on `ys × zs` plus a closing row and column at the support maxima,
/// which hold the marginal CDFs. `surface[i][j] = F(y_i, z_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEstimate {
    pub ys: Vec<f64>,
    pub zs: Vec<f64>,
    pub support_max_y: f64,
    pub support_max_z: f64,
    pub surface: Vec<Vec<f64>>,
    pub source: JointSource,
    /// Largest change made by the monotone repair.
    pub repair: f64,
    pub n11: f64,
}

/// Cell probabilities on the closed lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct CellPmf {
    pub ys: Vec<f64>,
    pub zs: Vec<f64>,
    pub p: Vec<Vec<f64>>,
    /// Negative mass removed before renormalization.
    pub clipped: f64,
}

impl CellPmf {
    pub fn row_marginal(&self) -> Vec<f64> {
        self.p.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.zs.len()];
        for r in &self.p {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Treated,
    Counterfactual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankMethod {
    Empirical,
    /// Functionals of the cell probabilities.
    Pmf,
    /// Empirical formulas on draws from the cell probabilities.
    Sampled { seed: u64, draws: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankCorr {
    pub kendall: f64,
    pub spearman: f64,
    pub arm: Arm,
    pub method: RankMethod,
}

fn compile_r(spec: &BivSpec, names: &[String]) -> Result<[CompiledTerms; 3]> {
    Ok([spec.r_alpha.compile(names)?, spec.r_beta.compile(names)?, spec.r_gamma.compile(names)?])
}

/// Table prepared for repeated weighted bivariate fits on one lattice.
#[derive(Debug, Clone)]
pub struct BivProblem {
    spec: BivSpec,
    y: DrProblem,
    z: DrProblem,
    pr: usize,
    /// Correlation-index rows per pattern, row-major.
    r: Vec<f64>,
    /// First grid position at or above each row's outcome.
    ry: Vec<usize>,
    rz: Vec<usize>,
    n_rows: usize,
}

fn grid_rank(points: &[f64], v: f64) -> usize {
    points.partition_point(|&p| p < v)
}

impl BivProblem {
    pub fn new(
        table: &ObservationTable,
        spec: &BivSpec,
        grid_y: &ThresholdGrid,
        grid_z: &ThresholdGrid,
    ) -> Result<Self> {
        let zv = table.z_values().ok_or(Error::MissingSecondOutcome)?;
        let y = DrProblem::new(table, &spec.y, grid_y)?;
        let z = DrProblem::with_outcome(table, &spec.z, grid_z, zv.clone())?;
        let names = table.covariate_names();
        let comp = compile_r(spec, names)?;
        let pr = spec.r_width();
        // Patterns are keyed by (g, t, x) in row order, so both marginal problems agree.
        let mut r = vec![f64::NAN; y.n_patterns() * pr];
        for (row, &k) in table.rows().iter().zip(y.row_pattern()) {
            let mut v = Vec::with_capacity(pr);
            comp[0].eval_into(&row.x, 1.0, &mut v);
            comp[1].eval_into(&row.x, f64::from(row.t), &mut v);
            comp[2].eval_into(&row.x, f64::from(row.g), &mut v);
            r[k * pr..(k + 1) * pr].copy_from_slice(&v);
        }
        let untreated: Vec<bool> = (0..y.n_patterns()).map(|k| y.pattern_cell(k) != (1, 1)).collect();
        check_rank(&r, pr, |k| untreated[k])?;
        let ry = table.rows().iter().map(|row| grid_rank(grid_y.points(), row.y)).collect();
        let rz = zv.iter().map(|&v| grid_rank(grid_z.points(), v)).collect();
        Ok(BivProblem { spec: spec.clone(), y, z, pr, r, ry, rz, n_rows: table.len() })
    }

    fn r_row(&self, k: usize) -> &[f64] {
        &self.r[k * self.pr..(k + 1) * self.pr]
    }

    fn weights(&self, weights: Option<&[f64]>) -> Result<Vec<f64>> {
        match weights {
            None => Ok(vec![1.0; self.n_rows]),
            Some(w) if w.len() != self.n_rows => {
                Err(Error::DimensionMismatch(format!("{} weights for {} rows", w.len(), self.n_rows)))
            }
            Some(w) => Ok(w.to_vec()),
        }
    }

    /// Φ⁻¹ of the counterfactual marginal probability, `[grid point][pattern]`.
    fn normal_indices(prob: &DrProblem, fit: &DrFit, w: &[f64]) -> Result<(Vec<Vec<f64>>, usize)> {
        let mut clamps = 0;
        let m = prob
            .counterfactual_indices(fit, w)?
            .into_iter()
            .map(|etas| {
                etas.into_iter()
                    .map(|eta| {
                        let (p, clamped) = clamp_unit(fit.link.eval(eta));
                        clamps += usize::from(clamped);
                        norm_inv(p)
                    })
                    .collect()
            })
            .collect();
        Ok((m, clamps))
    }

    pub fn fit(&self, weights: Option<&[f64]>, init: Option<&BivFit>) -> Result<BivFit> {
        let opts = SolverOptions::default();
        let w = self.weights(weights)?;
        let y_fit = self.y.fit(Some(&w), init.map(|f| &f.y_fit))?;
        let z_fit = self.z.fit(Some(&w), init.map(|f| &f.z_fit))?;
        let (my, cy) = Self::normal_indices(&self.y, &y_fit, &w)?;
        let (mz, cz) = Self::normal_indices(&self.z, &z_fit, &w)?;

        let (kk, ll) = (y_fit.grid.len(), z_fit.grid.len());
        let n_pat = self.y.n_patterns();
        let stride = (kk + 1) * (ll + 1);
        // cumulative weight of rows with Y ≤ y_i and Z ≤ z_j, per untreated pattern
        let mut cum = vec![0.0; n_pat * stride];
        let mut n_eff = 0.0;
        for (i, &k) in self.y.row_pattern().iter().enumerate() {
            if self.y.pattern_cell(k) == (1, 1) || !(w[i] > 0.0) {
                continue;
            }
            n_eff += 1.0;
            cum[k * stride + self.ry[i] * (ll + 1) + self.rz[i]] += w[i];
        }
        for k in 0..n_pat {
            let c = &mut cum[k * stride..(k + 1) * stride];
            for i in 0..=kk {
                for j in 0..=ll {
                    let mut v = c[i * (ll + 1) + j];
                    if i > 0 {
                        v += c[(i - 1) * (ll + 1) + j];
                    }
                    if j > 0 {
                        v += c[i * (ll + 1) + j - 1];
                    }
                    if i > 0 && j > 0 {
                        v -= c[(i - 1) * (ll + 1) + j - 1];
                    }
                    c[i * (ll + 1) + j] = v;
                }
            }
        }
        if n_eff == 0.0 {
            return Err(Error::InvalidArgument("no untreated rows with positive weight".into()));
        }
        let active: Vec<usize> = (0..n_pat)
            .filter(|&k| self.y.pattern_cell(k) != (1, 1) && cum[k * stride + stride - 1] > 0.0)
            .collect();

        let rows: Vec<Result<Vec<(Vec<f64>, LatticeDiagnostics)>>> = (0..kk)
            .into_par_iter()
            .map(|i| {
                let mut prev: Option<Vec<f64>> = None;
                let mut out = Vec::with_capacity(ll);
                for j in 0..ll {
                    let mut g = CopulaGroups {
                        p: self.pr,
                        my: Vec::new(),
                        mz: Vec::new(),
                        sy: Vec::new(),
                        sz: Vec::new(),
                        r: Vec::new(),
                        w: Vec::new(),
                        n_eff,
                    };
                    for &k in &active {
                        let c = &cum[k * stride..(k + 1) * stride];
                        let at = |a: usize, b: usize| c[a * (ll + 1) + b];
                        let both = at(i, j);
                        let wy = at(i, ll);
                        let wz = at(kk, j);
                        let tot = at(kk, ll);
                        let quads = [
                            (1.0, 1.0, both),
                            (1.0, -1.0, wy - both),
                            (-1.0, 1.0, wz - both),
                            (-1.0, -1.0, tot - wy - wz + both),
                        ];
                        for (sy, sz, wq) in quads {
                            if wq > 1e-12 * tot {
                                g.my.push(my[i][k]);
                                g.mz.push(mz[j][k]);
                                g.sy.push(sy);
                                g.sz.push(sz);
                                g.r.extend_from_slice(self.r_row(k));
                                g.w.push(wq);
                            }
                        }
                    }
                    let start = init.map(|f| f.copula[i][j].as_slice()).or(prev.as_deref());
                    let location = format!(
                        "lattice point (y={}, z={})",
                        y_fit.grid.points()[i],
                        z_fit.grid.points()[j]
                    );
                    let res = fit_copula_grouped(&g, start, &opts, &location)?;
                    prev = Some(res.coefficients.clone());
                    out.push((
                        res.coefficients,
                        LatticeDiagnostics {
                            converged: res.converged,
                            iterations: res.iterations,
                            gradient_norm: res.gradient_norm,
                            degenerate_quadrant: res.degenerate_quadrant,
                            floor_hits: res.clamp_events,
                        },
                    ));
                }
                Ok(out)
            })
            .collect();
        let mut copula = Vec::with_capacity(kk);
        let mut diagnostics = Vec::with_capacity(kk);
        for row in rows {
            let (c, d): (Vec<_>, Vec<_>) = row?.into_iter().unzip();
            copula.push(c);
            diagnostics.push(d);
        }
        Ok(BivFit { y_fit, z_fit, spec: self.spec.clone(), copula, diagnostics, clamp_events: cy + cz })
    }

    /// Counterfactual joint CDF: treated rows evaluated without interaction terms.
    pub fn counterfactual(&self, fit: &BivFit, weights: Option<&[f64]>) -> Result<JointEstimate> {
        let w = self.weights(weights)?;
        let n_pat = self.y.n_patterns();
        let mut tw = vec![0.0; n_pat];
        for (i, &k) in self.y.row_pattern().iter().enumerate() {
            if self.y.pattern_cell(k) == (1, 1) {
                tw[k] += w[i];
            }
        }
        let n11: f64 = tw.iter().sum();
        if !(n11 > 0.0) {
            return Err(Error::NoTreatedRows);
        }
        let treated: Vec<usize> = (0..n_pat).filter(|&k| tw[k] > 0.0).collect();
        let (ny, _) = Self::normal_indices(&self.y, &fit.y_fit, &w)?;
        let (nz, _) = Self::normal_indices(&self.z, &fit.z_fit, &w)?;
        let (kk, ll) = (fit.y_fit.grid.len(), fit.z_fit.grid.len());
        if fit.copula.len() != kk || fit.copula.iter().any(|r| r.len() != ll) {
            return Err(Error::GridMismatch);
        }
        let mut surface: Vec<Vec<f64>> = (0..kk)
            .into_par_iter()
            .map(|i| {
                let mut row: Vec<f64> = (0..ll)
                    .map(|j| {
                        let s: f64 = treated
                            .iter()
                            .map(|&k| tw[k] * binorm_cdf(ny[i][k], nz[j][k], fit.rho(i, j, self.r_row(k))))
                            .sum();
                        s / n11
                    })
                    .collect();
                row.push(treated.iter().map(|&k| tw[k] * norm_cdf(ny[i][k])).sum::<f64>() / n11);
                row
            })
            .collect();
        let mut last: Vec<f64> = (0..ll)
            .map(|j| treated.iter().map(|&k| tw[k] * norm_cdf(nz[j][k])).sum::<f64>() / n11)
            .collect();
        last.push(1.0);
        surface.push(last);
        let repair = monotone_repair(&mut surface);
        Ok(JointEstimate {
            ys: fit.y_fit.grid.points().to_vec(),
            zs: fit.z_fit.grid.points().to_vec(),
            support_max_y: fit.y_fit.grid.support_max(),
            support_max_z: fit.z_fit.grid.support_max(),
            surface,
            source: JointSource::Counterfactual,
            repair,
            n11,
        })
    }
}

fn clamp_unit(p: f64) -> (f64, bool) {
    let eps = crate::links::PROB_CLAMP;
    if p < eps {
        (eps, true)
    } else if p > 1.0 - eps {
        (1.0 - eps, true)
    } else {
        (p, false)
    }
}

/// Least-squares nondecreasing fit (pool adjacent violators).
fn isotonic(v: &mut [f64]) -> f64 {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(v.len());
    for &x in v.iter() {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (b, nb) = blocks[blocks.len() - 1];
            let (a, na) = blocks[blocks.len() - 2];
            if a <= b {
                break;
            }
            blocks.pop();
            let last = blocks.len() - 1;
            blocks[last] = ((a * na as f64 + b * nb as f64) / (na + nb) as f64, na + nb);
        }
    }
    let mut change = 0.0f64;
    let mut pos = 0;
    for (val, n) in blocks {
        for x in &mut v[pos..pos + n] {
            change = change.max((*x - val).abs());
            *x = val;
        }
        pos += n;
    }
    change
}

/// Isotonic projection of every row, then every column. Returns the largest change.
fn monotone_repair(surface: &mut [Vec<f64>]) -> f64 {
    let mut change = 0.0f64;
    for row in surface.iter_mut() {
        change = change.max(isotonic(row));
    }
    let cols = surface.first().map_or(0, Vec::len);
    let mut col = vec![0.0; surface.len()];
    for j in 0..cols {
        for (c, row) in col.iter_mut().zip(surface.iter()) {
            *c = row[j];
        }
        change = change.max(isotonic(&mut col));
        for (c, row) in col.iter().zip(surface.iter_mut()) {
            row[j] = *c;
        }
    }
    for v in surface.iter_mut().flatten() {
        *v = v.clamp(0.0, 1.0);
    }
    change
}

/// Marginal fits on each outcome, then correlation-index regressions at every
/// lattice point on untreated rows.
pub fn fit_biv(
    table: &ObservationTable,
    spec: &BivSpec,
    grid_y: &ThresholdGrid,
    grid_z: &ThresholdGrid,
    weights: Option<&[f64]>,
) -> Result<BivFit> {
    BivProblem::new(table, spec, grid_y, grid_z)?.fit(weights, None)
}

/// Average of `Φ₂(n_Y, n_Z; ρ)` over treated post-period rows, monotone-repaired.
pub fn counterfactual_joint(
    fit: &BivFit,
    table: &ObservationTable,
    weights: Option<&[f64]>,
) -> Result<JointEstimate> {
    BivProblem::new(table, &fit.spec, &fit.y_fit.grid, &fit.z_fit.grid)?.counterfactual(fit, weights)
}

/// Weighted empirical joint CDF of treated post-period outcome pairs.
pub fn observed_joint(
    table: &ObservationTable,
    grid_y: &ThresholdGrid,
    grid_z: &ThresholdGrid,
    weights: Option<&[f64]>,
) -> Result<JointEstimate> {
    if !table.has_second_outcome() {
        return Err(Error::MissingSecondOutcome);
    }
    let (kk, ll) = (grid_y.len(), grid_z.len());
    if let Some(w) = weights {
        if w.len() != table.len() {
            return Err(Error::DimensionMismatch(format!("{} weights for {} rows", w.len(), table.len())));
        }
    }
    let mut cnt = vec![vec![0.0; ll + 1]; kk + 1];
    let mut n11 = 0.0;
    for (i, r) in table.rows().iter().enumerate() {
        if !r.is_treated() {
            continue;
        }
        let w = weights.map_or(1.0, |w| w[i]);
        n11 += w;
        let z = r.z.unwrap_or(f64::NAN);
        cnt[grid_rank(grid_y.points(), r.y)][grid_rank(grid_z.points(), z)] += w;
    }
    if !(n11 > 0.0) {
        return Err(Error::NoTreatedRows);
    }
    let mut surface = vec![vec![0.0; ll + 1]; kk + 1];
    for i in 0..=kk {
        for j in 0..=ll {
            let mut v = cnt[i][j];
            if i > 0 {
                v += surface[i - 1][j];
            }
            if j > 0 {
                v += surface[i][j - 1];
            }
            if i > 0 && j > 0 {
                v -= surface[i - 1][j - 1];
            }
            surface[i][j] = v;
        }
    }
    for v in surface.iter_mut().flatten() {
        *v = (*v / n11).clamp(0.0, 1.0);
    }
    surface[kk][ll] = 1.0;
    Ok(JointEstimate {
        ys: grid_y.points().to_vec(),
        zs: grid_z.points().to_vec(),
        support_max_y: grid_y.support_max(),
        support_max_z: grid_z.support_max(),
        surface,
        source: JointSource::Observed,
        repair: 0.0,
        n11,
    })
}

/// Rectangle differences of the closed surface; negatives clipped, then renormalized.
pub fn pmf_from_surface(est: &JointEstimate) -> Result<CellPmf> {
    let pmf = pmf_clipped(est)?;
    if pmf.clipped > MAX_CLIPPED_MASS {
        return Err(Error::ExcessiveClipping { clipped: pmf.clipped });
    }
    Ok(pmf)
}

/// As [`pmf_from_surface`] without the bound on clipped mass.
pub fn pmf_clipped(est: &JointEstimate) -> Result<CellPmf> {
    let f = &est.surface;
    let rows = f.len();
    let cols = f.first().map_or(0, Vec::len);
    let mut p = vec![vec![0.0; cols]; rows];
    let mut clipped = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let mut v = f[i][j];
            if i > 0 {
                v -= f[i - 1][j];
            }
            if j > 0 {
                v -= f[i][j - 1];
            }
            if i > 0 && j > 0 {
                v += f[i - 1][j - 1];
            }
            if v < 0.0 {
                clipped -= v;
                v = 0.0;
            }
            p[i][j] = v;
        }
    }
    let total: f64 = p.iter().flatten().sum();
    if !(total > 0.0) {
        return Err(Error::ExcessiveClipping { clipped });
    }
    for v in p.iter_mut().flatten() {
        *v /= total;
    }
    let mut ys = est.ys.clone();
    ys.push(est.support_max_y);
    let mut zs = est.zs.clone();
    zs.push(est.support_max_z);
    Ok(CellPmf { ys, zs, p, clipped })
}

/// Kendall's τ of a discrete joint law: `Σ p_ij [P(concordant) − P(discordant)]`.
pub fn kendall_pmf(pmf: &CellPmf) -> f64 {
    let rows = pmf.p.len();
    let cols = pmf.p.first().map_or(0, Vec::len);
    // m[i+1][j+1] = P(Y ≤ row i, Z ≤ col j)
    let mut m = vec![vec![0.0; cols + 1]; rows + 1];
    for i in 0..rows {
        for j in 0..cols {
            m[i + 1][j + 1] = pmf.p[i][j] + m[i][j + 1] + m[i + 1][j] - m[i][j];
        }
    }
    let (kk, ll) = (rows, cols);
    let mut tau = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            let pij = pmf.p[i][j];
            if pij == 0.0 {
                continue;
            }
            let lo_lo = m[i][j];
            let lo_hi = m[i][ll] - m[i][j + 1];
            let hi_lo = m[kk][j] - m[i + 1][j];
            let hi_hi = 1.0 - m[i + 1][ll] - m[kk][j + 1] + m[i + 1][j + 1];
            tau += pij * (lo_lo + hi_hi - lo_hi - hi_lo);
        }
    }
    tau.clamp(-1.0, 1.0)
}

/// Spearman's ρ of a discrete joint law from mid-distribution grades:
/// `12 Σ p_ij (F̄_Y(i) − ½)(F̄_Z(j) − ½)`.
pub fn spearman_pmf(pmf: &CellPmf) -> f64 {
    let grades = |marg: &[f64]| -> Vec<f64> {
        let mut acc = 0.0;
        marg.iter()
            .map(|&p| {
                let g = acc + p / 2.0;
                acc += p;
                g - 0.5
            })
            .collect()
    };
    let gy = grades(&pmf.row_marginal());
    let gz = grades(&pmf.col_marginal());
    let mut s = 0.0;
    for (i, row) in pmf.p.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            s += p * gy[i] * gz[j];
        }
    }
    (12.0 * s).clamp(-1.0, 1.0)
}

/// Draws `n` pairs: a row from the Y marginal, then a column from its conditional law.
pub fn sample_pmf(pmf: &CellPmf, n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rm = pmf.row_marginal();
    let cum = |v: &[f64]| -> Vec<f64> {
        let mut acc = 0.0;
        v.iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    };
    let row_cum = cum(&rm);
    let cond: Vec<Vec<f64>> = pmf.p.iter().map(|r| cum(r)).collect();
    let pick = |c: &[f64], u: f64| c.partition_point(|&x| x <= u).min(c.len() - 1);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * row_cum[row_cum.len() - 1];
            let i = pick(&row_cum, u);
            let c = &cond[i];
            let v: f64 = rng.random::<f64>() * c[c.len() - 1];
            let j = pick(c, v);
            (pmf.ys[i], pmf.zs[j])
        })
        .collect()
}

fn check_pairs(pairs: &[(f64, f64)]) -> Result<()> {
    if pairs.len() < 2 {
        return Err(Error::TooFewPairs);
    }
    if pairs.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in pairs".into()));
    }
    Ok(())
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

// Sorts `v` and returns the number of pairs i < j with v[i] > v[j].
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (a, b) = v.split_at_mut(mid);
        merge_count(a, &mut buf[..mid]) + merge_count(b, &mut buf[mid..])
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// `2/(n(n−1)) Σ_{i<j} sgn(Y_i − Y_j) sgn(Z_i − Z_j)`, in O(n log n).
pub fn kendall_empirical(pairs: &[(f64, f64)]) -> Result<f64> {
    check_pairs(pairs)?;
    let n = pairs.len() as u64;
    let mut v = pairs.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let xs: Vec<f64> = v.iter().map(|p| p.0).collect();
    let n1 = tie_pairs(&xs);
    let mut n3 = 0u64;
    let mut run = 1u64;
    for w in v.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            n3 += run * (run - 1) / 2;
            run = 1;
        }
    }
    n3 += run * (run - 1) / 2;
    let mut zs: Vec<f64> = v.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; zs.len()];
    let swaps = merge_count(&mut zs, &mut buf);
    let n2 = tie_pairs(&zs);
    let n0 = n * (n - 1) / 2;
    let s = n0 as i128 - n1 as i128 - n2 as i128 + n3 as i128 - 2 * swaps as i128;
    Ok(s as f64 / n0 as f64)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut s = 0;
    while s < idx.len() {
        let mut e = s + 1;
        while e < idx.len() && v[idx[e]] == v[idx[s]] {
            e += 1;
        }
        let r = (s + e + 1) as f64 / 2.0;
        for &i in &idx[s..e] {
            ranks[i] = r;
        }
        s = e;
    }
    ranks
}

/// `1 − 6 Σ D_i² / (n(n² − 1))` with average ranks.
pub fn spearman_empirical(pairs: &[(f64, f64)]) -> Result<f64> {
    check_pairs(pairs)?;
    let n = pairs.len() as f64;
    let ry = average_ranks(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let rz = average_ranks(&pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let d2: f64 = ry.iter().zip(&rz).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - 6.0 * d2 / (n * (n * n - 1.0)))
}

fn check_weighted(pairs: &[(f64, f64)], w: &[f64]) -> Result<()> {
    check_pairs(pairs)?;
    if w.len() != pairs.len() {
        return Err(Error::DimensionMismatch(format!("{} weights for {} pairs", w.len(), pairs.len())));
    }
    if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }
    Ok(())
}

/// `Σ_{i<j} w_i w_j sgn sgn / Σ_{i<j} w_i w_j`; equals [`kendall_empirical`] for equal weights.
pub fn kendall_weighted(pairs: &[(f64, f64)], w: &[f64]) -> Result<f64> {
    check_weighted(pairs, w)?;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..pairs.len() {
        let (yi, zi) = pairs[i];
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for j in i + 1..pairs.len() {
            let (yj, zj) = pairs[j];
            let s = sgn(yi - yj) * sgn(zi - zj);
            acc += w[j] * s;
            wsum += w[j];
        }
        num += w[i] * acc;
        den += w[i] * wsum;
    }
    if !(den > 0.0) {
        return Err(Error::TooFewPairs);
    }
    Ok(num / den)
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn weighted_ranks(v: &[f64], w: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let total: f64 = w.iter().sum();
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut below = 0.0;
    let mut s = 0;
    while s < idx.len() {
        let mut e = s + 1;
        while e < idx.len() && v[idx[e]] == v[idx[s]] {
            e += 1;
        }
        let tie: f64 = idx[s..e].iter().map(|&i| w[i]).sum();
        let r = n * (below + tie / 2.0) / total + 0.5;
        for &i in &idx[s..e] {
            ranks[i] = r;
        }
        below += tie;
        s = e;
    }
    ranks
}

/// Weighted rank-difference Spearman; equals [`spearman_empirical`] for equal weights.
pub fn spearman_weighted(pairs: &[(f64, f64)], w: &[f64]) -> Result<f64> {
    check_weighted(pairs, w)?;
    let n = pairs.len() as f64;
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::TooFewPairs);
    }
    let ry = weighted_ranks(&pairs.iter().map(|p| p.0).collect::<Vec<_>>(), w);
    let rz = weighted_ranks(&pairs.iter().map(|p| p.1).collect::<Vec<_>>(), w);
    let d2: f64 = ry.iter().zip(&rz).zip(w).map(|((a, b), w)| w * (a - b) * (a - b)).sum();
    Ok(1.0 - 6.0 * (d2 / total) / (n * n - 1.0))
}

/// Outcome pairs of treated post-period rows, with their weights.
pub fn treated_pairs(table: &ObservationTable, weights: Option<&[f64]>) -> Result<(Vec<(f64, f64)>, Vec<f64>)> {
    if !table.has_second_outcome() {
        return Err(Error::MissingSecondOutcome);
    }
    let mut pairs = Vec::new();
    let mut w = Vec::new();
    for (i, r) in table.rows().iter().enumerate() {
        if r.is_treated() {
            pairs.push((r.y, r.z.unwrap_or(f64::NAN)));
            w.push(weights.map_or(1.0, |v| v[i]));
        }
    }
    Ok((pairs, w))
}

/// Rank correlations of observed treated pairs; weighted forms when `weights` is given.
pub fn rank_corr_treated(table: &ObservationTable, weights: Option<&[f64]>) -> Result<RankCorr> {
    let (pairs, w) = treated_pairs(table, weights)?;
    let (kendall, spearman) = match weights {
        None => (kendall_empirical(&pairs)?, spearman_empirical(&pairs)?),
        Some(_) => (kendall_weighted(&pairs, &w)?, spearman_weighted(&pairs, &w)?),
    };
    Ok(RankCorr { kendall, spearman, arm: Arm::Treated, method: RankMethod::Empirical })
}

/// Rank correlations of a cell PMF by `method`.
pub fn rank_corr_pmf(pmf: &CellPmf, arm: Arm, method: RankMethod) -> Result<RankCorr> {
    let (kendall, spearman) = match method {
        RankMethod::Pmf | RankMethod::Empirical => (kendall_pmf(pmf), spearman_pmf(pmf)),
        RankMethod::Sampled { seed, draws } => {
            let pairs = sample_pmf(pmf, draws, seed);
            (kendall_empirical(&pairs)?, spearman_empirical(&pairs)?)
        }
    };
    Ok(RankCorr { kendall, spearman, arm, method })
}

/// Rank correlations of the counterfactual joint law of the treated.
pub fn rank_corr_counterfactual(
    fit: &BivFit,
    table: &ObservationTable,
    method: RankMethod,
) -> Result<RankCorr> {
    let joint = counterfactual_joint(fit, table, None)?;
    rank_corr_pmf(&pmf_from_surface(&joint)?, Arm::Counterfactual, method)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::links::Link;
    use crate::model::{build_grid, Observation, PanelMode};
    use crate::simlab::{generate, DgpSpec};
    use crate::uni::counterfactual_cdf;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn kendall_brute(p: &[(f64, f64)]) -> f64 {
        let n = p.len();
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += sgn(p[i].0 - p[j].0) * sgn(p[i].1 - p[j].1);
            }
        }
        2.0 * s / (n * (n - 1)) as f64
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn joint(surface: Vec<Vec<f64>>, ys: Vec<f64>, zs: Vec<f64>) -> JointEstimate {
        JointEstimate {
            support_max_y: ys.last().unwrap() + 1.0,
            support_max_z: zs.last().unwrap() + 1.0,
            ys,
            zs,
            surface,
            source: JointSource::Observed,
            repair: 0.0,
            n11: 1.0,
        }
    }

    #[test]
    fn rank_examples() {
        let up = [(1.0, 1.0), (2.0, 2.0), (3.0, 3.0)];
        let down = [(1.0, 3.0), (2.0, 2.0), (3.0, 1.0)];
        assert_eq!(kendall_empirical(&up).unwrap(), 1.0);
        assert_eq!(kendall_empirical(&down).unwrap(), -1.0);
        assert_eq!(spearman_empirical(&up).unwrap(), 1.0);
        assert_eq!(spearman_empirical(&down).unwrap(), -1.0);
        assert_eq!(kendall_empirical(&up[..1]), Err(Error::TooFewPairs));
        assert_eq!(spearman_empirical(&[]), Err(Error::TooFewPairs));
    }

    #[test]
    fn pmf_examples() {
        let prod = joint(vec![vec![0.25, 0.5], vec![0.5, 1.0]], vec![0.0], vec![0.0]);
        let pmf = pmf_from_surface(&prod).unwrap();
        assert_eq!(pmf.p, vec![vec![0.25, 0.25], vec![0.25, 0.25]]);
        assert_abs_diff_eq!(kendall_pmf(&pmf), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(spearman_pmf(&pmf), 0.0, epsilon = 1e-15);

        let co = joint(vec![vec![0.5, 0.5], vec![0.5, 1.0]], vec![0.0], vec![0.0]);
        let pmf = pmf_from_surface(&co).unwrap();
        assert_eq!(pmf.p, vec![vec![0.5, 0.0], vec![0.0, 0.5]]);
        // two atoms: half of all independent pairs tie
        assert_abs_diff_eq!(kendall_pmf(&pmf), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(spearman_pmf(&pmf), 0.75, epsilon = 1e-15);

        let bad = joint(vec![vec![0.5, 0.2], vec![0.1, 1.0]], vec![0.0], vec![0.0]);
        assert!(matches!(pmf_from_surface(&bad), Err(Error::ExcessiveClipping { .. })));
    }

    #[test]
    fn independent_pmf_has_zero_rank_correlation() {
        let py = [0.1, 0.3, 0.2, 0.4];
        let pz = [0.25, 0.05, 0.5, 0.2];
        let mut surface = vec![vec![0.0; 4]; 4];
        let (mut cy, mut cz) = (vec![0.0; 4], vec![0.0; 4]);
        let mut acc = 0.0;
        for i in 0..4 {
            acc += py[i];
            cy[i] = acc;
        }
        acc = 0.0;
        for j in 0..4 {
            acc += pz[j];
            cz[j] = acc;
        }
        for i in 0..4 {
            for j in 0..4 {
                surface[i][j] = cy[i] * cz[j];
            }
        }
        let pmf = pmf_from_surface(&joint(surface, vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0])).unwrap();
        assert!(kendall_pmf(&pmf).abs() < 1e-9);
        assert!(spearman_pmf(&pmf).abs() < 1e-9);
    }

    #[test]
    fn pmf_kendall_matches_empirical_on_atoms() {
        // all ordered pairs including i = j: n(n−1) off-diagonal terms over n²
        let pairs = [(1.0, 2.0), (2.0, 1.0), (3.0, 3.0), (4.0, 5.0), (5.0, 4.0)];
        let n = pairs.len() as f64;
        let mut rows = vec![
            Observation::new(0, 0, 0, 0.0).with_z(0.0),
            Observation::new(1, 1, 0, 0.0).with_z(0.0),
            Observation::new(2, 0, 1, 0.0).with_z(0.0),
        ];
        for (k, &(y, z)) in pairs.iter().enumerate() {
            rows.push(Observation::new(10 + k as u64, 1, 1, y).with_z(z));
        }
        let table = ObservationTable::new(rows, vec![], PanelMode::RepeatedCrossSection).unwrap();
        let g = build_grid(&[1.0, 2.0, 3.0, 4.0, 5.0], &GridPolicy::AllUnique).unwrap();
        let est = observed_joint(&table, &g, &g, None).unwrap();
        let pmf = pmf_from_surface(&est).unwrap();
        let emp = kendall_empirical(&pairs).unwrap();
        assert_abs_diff_eq!(kendall_pmf(&pmf), emp * (n - 1.0) / n, epsilon = 1e-12);
    }

    #[test]
    fn observed_joint_example() {
        let rows = vec![
            Observation::new(0, 0, 0, 1.0).with_z(2.0),
            Observation::new(1, 1, 0, 2.0).with_z(3.0),
            Observation::new(2, 0, 1, 3.0).with_z(4.0),
            Observation::new(3, 1, 1, 2.0).with_z(3.0),
        ];
        let table = ObservationTable::new(rows, vec![], PanelMode::RepeatedCrossSection).unwrap();
        let gy = build_grid(&table.y_values(), &GridPolicy::Explicit(vec![1.0, 2.0])).unwrap();
        let gz = build_grid(&table.z_values().unwrap(), &GridPolicy::Explicit(vec![2.0, 3.0])).unwrap();
        let est = observed_joint(&table, &gy, &gz, None).unwrap();
        assert_eq!(est.surface[0][..2], [0.0, 0.0]);
        assert_eq!(est.surface[1][..2], [0.0, 1.0]);
        assert_eq!(est.surface[2], vec![0.0, 1.0, 1.0]);
    }

    #[test]
    fn repair_restores_monotonicity() {
        let mut s = vec![vec![0.2, 0.1, 0.5], vec![0.15, 0.4, 0.45], vec![0.3, 0.6, 1.0]];
        let change = monotone_repair(&mut s);
        assert!(change > 0.0);
        for r in &s {
            assert!(r.windows(2).all(|w| w[0] <= w[1]));
        }
        for j in 0..3 {
            assert!((0..2).all(|i| s[i][j] <= s[i + 1][j]));
        }
    }

    fn small_biv(seed: u64, n: usize, a: f64) -> (ObservationTable, ThresholdGrid, ThresholdGrid) {
        lattice_biv(seed, n, a, 6)
    }

    fn lattice_biv(seed: u64, n: usize, a: f64, k: usize) -> (ObservationTable, ThresholdGrid, ThresholdGrid) {
        let spec = DgpSpec::default_logit(n, seed).with_copula(a, 0.0, 0.0);
        let table = generate(&spec).unwrap();
        let gy = build_grid(&table.y_values(), &GridPolicy::Quantile(k)).unwrap();
        let gz = build_grid(&table.z_values().unwrap(), &GridPolicy::Quantile(k)).unwrap();
        (table, gy, gz)
    }

    #[test]
    fn joint_marginals_match_univariate_counterfactual() {
        let (table, gy, gz) = small_biv(1, 600, 0.5);
        let spec = BivSpec::new(DesignSpec::intercepts(Link::Logit));
        let fit = fit_biv(&table, &spec, &gy, &gz, None).unwrap();
        assert_eq!(fit.nonconverged(), 0);
        let joint = counterfactual_joint(&fit, &table, None).unwrap();
        let uni = counterfactual_cdf(&fit.y_fit, &table, None).unwrap();
        let last = joint.surface[0].len() - 1;
        for (i, v) in uni.cdf.iter().enumerate() {
            assert!((joint.surface[i][last] - v).abs() < 1e-6);
        }
        let pmf = pmf_from_surface(&joint).unwrap();
        assert_abs_diff_eq!(pmf.p.iter().flatten().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert!(pmf.clipped <= 0.01);
    }

    #[test]
    fn zero_copula_gives_product_surface() {
        let (table, gy, gz) = small_biv(2, 200, 0.0);
        let spec = BivSpec::new(DesignSpec::intercepts(Link::Probit));
        let mut fit = fit_biv(&table, &spec, &gy, &gz, None).unwrap();
        for v in fit.copula.iter_mut().flatten().flatten() {
            *v = 0.0;
        }
        let joint = counterfactual_joint(&fit, &table, None).unwrap();
        let fy = counterfactual_cdf(&fit.y_fit, &table, None).unwrap();
        let fz = counterfactual_cdf(&fit.z_fit, &table.second_as_primary().unwrap(), None).unwrap();
        for i in 0..fy.cdf.len() {
            for j in 0..fz.cdf.len() {
                assert!((joint.surface[i][j] - fy.cdf[i] * fz.cdf[j]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn logit_composition_identity() {
        for &x in &[-3.0, -0.4, 0.0, 1.7] {
            assert_abs_diff_eq!(norm_cdf(norm_inv(Link::Logit.eval(x))), Link::Logit.eval(x), epsilon = 1e-14);
        }
    }

    #[test]
    fn sampled_and_pmf_methods_agree() {
        // ties inflate the sampled Spearman by (Σp_Y³ + Σp_Z³)/2, small on a 20-point lattice
        let (table, gy, gz) = lattice_biv(3, 4000, 0.7, 20);
        let spec = BivSpec::new(DesignSpec::intercepts(Link::Logit));
        let fit = fit_biv(&table, &spec, &gy, &gz, None).unwrap();
        let a = rank_corr_counterfactual(&fit, &table, RankMethod::Pmf).unwrap();
        let b = rank_corr_counterfactual(&fit, &table, RankMethod::Sampled { seed: 9, draws: 200_000 }).unwrap();
        assert!((a.kendall - b.kendall).abs() < 0.01, "{a:?} {b:?}");
        assert!((a.spearman - b.spearman).abs() < 0.01, "{a:?} {b:?}");
        let c = rank_corr_counterfactual(&fit, &table, RankMethod::Sampled { seed: 9, draws: 1000 }).unwrap();
        let d = rank_corr_counterfactual(&fit, &table, RankMethod::Sampled { seed: 9, draws: 1000 }).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn missing_second_outcome() {
        let spec = DgpSpec::default_logit(20, 1);
        let table = generate(&spec).unwrap();
        let g = build_grid(&table.y_values(), &GridPolicy::Quantile(4)).unwrap();
        let bs = BivSpec::new(DesignSpec::intercepts(Link::Logit));
        assert_eq!(fit_biv(&table, &bs, &g, &g, None).err(), Some(Error::MissingSecondOutcome));
    }

    proptest! {
        #[test]
        fn kendall_matches_brute_force(
            raw in prop::collection::vec((0i32..12, 0i32..12), 2..300),
            distinct in any::<bool>(),
        ) {
            let pairs: Vec<(f64, f64)> = raw.iter().enumerate().map(|(i, &(a, b))| {
                if distinct {
                    (f64::from(a) + i as f64 * 1e-3, f64::from(b) - i as f64 * 7e-4)
                } else {
                    (f64::from(a), f64::from(b))
                }
            }).collect();
            let fast = kendall_empirical(&pairs).unwrap();
            let slow = kendall_brute(&pairs);
            if distinct {
                prop_assert_eq!(fast, slow);
            } else {
                prop_assert!((fast - slow).abs() <= 1e-12);
            }
            let w = vec![1.0; pairs.len()];
            prop_assert!((kendall_weighted(&pairs, &w).unwrap() - slow).abs() <= 1e-12);
        }

        #[test]
        fn spearman_matches_pearson_of_ranks(
            raw in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..300),
        ) {
            let ys: Vec<f64> = raw.iter().map(|p| p.0).collect();
            let zs: Vec<f64> = raw.iter().map(|p| p.1).collect();
            let s = spearman_empirical(&raw).unwrap();
            let p = pearson(&average_ranks(&ys), &average_ranks(&zs));
            prop_assert!((s - p).abs() <= 1e-9);
            prop_assert!((-1.0..=1.0).contains(&s));
            let w = vec![2.5; raw.len()];
            prop_assert!((spearman_weighted(&raw, &w).unwrap() - s).abs() <= 1e-12);
        }

        #[test]
        fn rank_correlations_invariant_to_monotone_maps(
            raw in prop::collection::vec((0i32..20, -5i32..5), 2..200),
        ) {
            let pairs: Vec<(f64, f64)> = raw.iter().map(|&(a, b)| (f64::from(a), f64::from(b))).collect();
            let mapped: Vec<(f64, f64)> = pairs.iter().map(|&(a, b)| (a.powi(3) + a, (b / 3.0).exp())).collect();
            prop_assert_eq!(kendall_empirical(&pairs).unwrap(), kendall_empirical(&mapped).unwrap());
            prop_assert_eq!(spearman_empirical(&pairs).unwrap(), spearman_empirical(&mapped).unwrap());
        }
    }
}
