//! Weighted maximum likelihood for the threshold regressions and the copula
//! correlation index.

use crate::links::{binorm_cdf, binorm_density, binorm_density_drho, bound_corr, Link};
use crate::{Error, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use std::collections::HashMap;

/// Floor applied to quadrant probabilities before taking logs.
const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Bound on the sup-norm of the gradient of the mean log-likelihood.
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge weight λ in `ℓ(b) − λ‖b‖²`, on the scale where weights average one.
    pub ridge: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { tol: 1e-10, max_iter: 100, ridge: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub clamp_events: usize,
    /// Copula fits only: some quadrant has no positive-weight observation.
    pub degenerate_quadrant: bool,
}

struct Eval {
    obj: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
    // Positive definite curvature used when −hess is not.
    fallback: Option<DMatrix<f64>>,
}

/// Damped Newton ascent. `n_eff` converts the gradient to the mean scale.
fn maximize(
    mut eval: impl FnMut(&DVector<f64>) -> Option<Eval>,
    init: DVector<f64>,
    n_eff: f64,
    opts: &SolverOptions,
    location: &str,
) -> Result<FitResult> {
    let mut b = init;
    let mut cur = eval(&b).ok_or_else(|| Error::Solver {
        location: location.to_string(),
        message: "objective is not finite at the starting value".into(),
    })?;
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let gnorm = cur.grad.amax() / n_eff;
        if gnorm <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;

        let neg_h = -&cur.hess;
        let step = match neg_h.cholesky() {
            Some(ch) => ch.solve(&cur.grad),
            None => match cur.fallback.as_ref().and_then(|m| m.clone().cholesky()) {
                Some(ch) => ch.solve(&cur.grad),
                None => &cur.grad / n_eff.max(1.0),
            },
        };

        let scale = 1e-12 * (1.0 + cur.obj.abs());
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &b + &step * t;
            if let Some(next) = eval(&cand) {
                let better = next.obj >= cur.obj;
                let flat = next.obj >= cur.obj - scale && next.grad.amax() < cur.grad.amax();
                if better || flat {
                    accepted = Some((cand, next));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((nb, next)) => {
                b = nb;
                cur = next;
            }
            None => break,
        }
    }
    Ok(FitResult {
        gradient_norm: cur.grad.amax() / n_eff,
        coefficients: b.iter().copied().collect(),
        converged,
        iterations,
        clamp_events: 0,
        degenerate_quadrant: false,
    })
}

/// Binary-outcome data collapsed to distinct design rows.
pub(crate) struct BinaryGroups<'a> {
    /// Row-major `groups × p` design.
    pub x: &'a [f64],
    pub p: usize,
    /// Weight of observations with indicator 1 in each group.
    pub s: &'a [f64],
    /// Weight of observations with indicator 0 in each group.
    pub f: &'a [f64],
    /// Number of positive-weight observations behind the groups.
    pub n_eff: f64,
}

pub(crate) fn fit_grouped(
    data: &BinaryGroups<'_>,
    link: Link,
    init: Option<&[f64]>,
    opts: &SolverOptions,
    location: &str,
) -> Result<FitResult> {
    let p = data.p;
    let total: f64 = data.s.iter().chain(data.f).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::InvalidArgument("weights must have a positive finite sum".into()));
    }
    let c = data.n_eff / total;
    let ridge = opts.ridge;
    let eval = |b: &DVector<f64>| -> Option<Eval> {
        let mut obj = -ridge * b.norm_squared();
        let mut grad = b * (-2.0 * ridge);
        let mut hess = DMatrix::<f64>::identity(p, p) * (-2.0 * ridge);
        for (k, (&s, &f)) in data.s.iter().zip(data.f).enumerate() {
            if s == 0.0 && f == 0.0 {
                continue;
            }
            let row = &data.x[k * p..(k + 1) * p];
            let eta: f64 = row.iter().zip(b.iter()).map(|(a, b)| a * b).sum();
            let (ll, d1, d2) = link.binary_terms(eta, c * s, c * f);
            obj += ll;
            for i in 0..p {
                grad[i] += d1 * row[i];
                let hi = d2 * row[i];
                for j in 0..=i {
                    hess[(i, j)] += hi * row[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                hess[(j, i)] = hess[(i, j)];
            }
        }
        obj.is_finite().then_some(Eval { obj, grad, hess, fallback: None })
    };
    let start = match init {
        Some(v) if v.len() == p && v.iter().all(|x| x.is_finite()) => DVector::from_column_slice(v),
        _ => DVector::zeros(p),
    };
    maximize(eval, start, data.n_eff.max(1.0), opts, location)
}

/// Checks that the positive-weight rows of a row-major design have full column rank.
pub(crate) fn check_rank(x: &[f64], p: usize, active: impl Fn(usize) -> bool) -> Result<()> {
    let mut gram = DMatrix::<f64>::zeros(p, p);
    for (k, row) in x.chunks(p).enumerate() {
        if !active(k) {
            continue;
        }
        for i in 0..p {
            for j in 0..p {
                gram[(i, j)] += row[i] * row[j];
            }
        }
    }
    let d: Vec<f64> = (0..p).map(|i| gram[(i, i)].sqrt()).collect();
    if d.contains(&0.0) {
        return Err(Error::RankDeficient);
    }
    for i in 0..p {
        for j in 0..p {
            gram[(i, j)] /= d[i] * d[j];
        }
    }
    let eig = SymmetricEigen::new(gram);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min <= 1e-12 * max {
        return Err(Error::RankDeficient);
    }
    Ok(())
}

fn row_key(row: &[f64]) -> Vec<u64> {
    row.iter().map(|v| if *v == 0.0 { 0 } else { v.to_bits() }).collect()
}

/// Weighted binary regression of `indicators` on the rows of `designs`.
///
/// Maximizes `Σ wᵢ [Iᵢ ln Λ(xᵢ'b) + (1−Iᵢ) ln Λ(−xᵢ'b)] − λ‖b‖²` with weights
/// rescaled to average one over positive-weight rows. A fit that exhausts the
/// iteration budget is returned with `converged = false`.
pub fn fit_binary(
    designs: &DMatrix<f64>,
    indicators: &[bool],
    weights: &[f64],
    link: Link,
    init: Option<&[f64]>,
) -> Result<FitResult> {
    fit_binary_with(designs, indicators, weights, link, init, &SolverOptions::default())
}

pub fn fit_binary_with(
    designs: &DMatrix<f64>,
    indicators: &[bool],
    weights: &[f64],
    link: Link,
    init: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<FitResult> {
    let (n, p) = designs.shape();
    if indicators.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{n} design rows, {} indicators, {} weights",
            indicators.len(),
            weights.len()
        )));
    }
    if p == 0 {
        return Err(Error::RankDeficient);
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
    }

    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut x = Vec::new();
    let mut s = Vec::new();
    let mut f = Vec::new();
    let mut n_eff = 0.0;
    let mut row = vec![0.0; p];
    for i in 0..n {
        if weights[i] == 0.0 {
            continue;
        }
        n_eff += 1.0;
        for (j, r) in row.iter_mut().enumerate() {
            *r = designs[(i, j)];
        }
        let k = *index.entry(row_key(&row)).or_insert_with(|| {
            x.extend_from_slice(&row);
            s.push(0.0);
            f.push(0.0);
            s.len() - 1
        });
        if indicators[i] {
            s[k] += weights[i];
        } else {
            f[k] += weights[i];
        }
    }
    if n_eff == 0.0 {
        return Err(Error::InvalidArgument("weights must have a positive sum".into()));
    }
    check_rank(&x, p, |_| true)?;
    let groups = BinaryGroups { x: &x, p, s: &s, f: &f, n_eff };
    fit_grouped(&groups, link, init, opts, "binary regression")
}

/// Quadrant probabilities (++, +−, −+, −−) for indices `(my, mz)` and correlation ρ.
pub fn quadrant_probs(my: f64, mz: f64, rho: f64) -> [f64; 4] {
    [
        binorm_cdf(my, mz, rho),
        binorm_cdf(my, -mz, -rho),
        binorm_cdf(-my, mz, -rho),
        binorm_cdf(-my, -mz, rho),
    ]
}

/// Inputs of one lattice-point copula regression; all slices have one entry per row.
#[derive(Debug, Clone, Copy)]
pub struct CopulaSlice<'a> {
    /// Φ⁻¹ of the fitted marginal probability of `Y ≤ y`.
    pub m_y: &'a [f64],
    /// Φ⁻¹ of the fitted marginal probability of `Z ≤ z`.
    pub m_z: &'a [f64],
    pub iy: &'a [bool],
    pub jz: &'a [bool],
    /// Row-major correlation-index design, `rows × p`.
    pub designs_r: &'a DMatrix<f64>,
    pub t: &'a [u8],
    pub g: &'a [u8],
    pub weights: &'a [f64],
}

/// Grouped copula data: one entry per distinct (m_y, m_z, r, quadrant).
pub(crate) struct CopulaGroups {
    pub p: usize,
    pub my: Vec<f64>,
    pub mz: Vec<f64>,
    /// Signs applied to (m_y, m_z): +1 when the indicator is 1.
    pub sy: Vec<f64>,
    pub sz: Vec<f64>,
    pub r: Vec<f64>,
    pub w: Vec<f64>,
    pub n_eff: f64,
}

impl CopulaGroups {
    pub fn quadrant_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for k in 0..self.w.len() {
            if self.w[k] > 0.0 {
                c[quadrant_index(self.sy[k] > 0.0, self.sz[k] > 0.0)] += 1;
            }
        }
        c
    }
}

fn quadrant_index(iy: bool, jz: bool) -> usize {
    match (iy, jz) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    }
}

pub(crate) fn fit_copula_grouped(
    data: &CopulaGroups,
    init: Option<&[f64]>,
    opts: &SolverOptions,
    location: &str,
) -> Result<FitResult> {
    let p = data.p;
    let total: f64 = data.w.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::InvalidArgument("copula weights must have a positive finite sum".into()));
    }
    let c = data.n_eff / total;
    let ridge = opts.ridge;
    let mut floor_hits = 0usize;
    let mut eval = |b: &DVector<f64>| -> Option<Eval> {
        let mut obj = -ridge * b.norm_squared();
        let mut grad = b * (-2.0 * ridge);
        let mut hess = DMatrix::<f64>::identity(p, p) * (-2.0 * ridge);
        let mut info = DMatrix::<f64>::identity(p, p) * (2.0 * ridge);
        let mut floored = 0;
        for k in 0..data.w.len() {
            let w = c * data.w[k];
            if w == 0.0 {
                continue;
            }
            let row = &data.r[k * p..(k + 1) * p];
            let u: f64 = row.iter().zip(b.iter()).map(|(a, b)| a * b).sum();
            let rho = bound_corr(u);
            let (sy, sz) = (data.sy[k], data.sz[k]);
            let (my, mz) = (data.my[k], data.mz[k]);
            let s = sy * sz;
            let mut prob = binorm_cdf(sy * my, sz * mz, s * rho);
            if prob < PROB_FLOOR {
                prob = PROB_FLOOR;
                floored += 1;
            }
            let dens = binorm_density(my, mz, rho);
            let jac = 1.0 - rho * rho;
            let dp = s * dens * jac;
            let d2p = s * (binorm_density_drho(my, mz, rho) * jac * jac - 2.0 * rho * jac * dens);
            obj += w * prob.ln();
            let d1 = w * dp / prob;
            let d2 = w * (d2p / prob - (dp / prob).powi(2));
            let fisher = w * (dp / prob).powi(2);
            for i in 0..p {
                grad[i] += d1 * row[i];
                for j in 0..=i {
                    hess[(i, j)] += d2 * row[i] * row[j];
                    info[(i, j)] += fisher * row[i] * row[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                hess[(j, i)] = hess[(i, j)];
                info[(j, i)] = info[(i, j)];
            }
        }
        floor_hits = floor_hits.max(floored);
        obj.is_finite().then_some(Eval { obj, grad, hess, fallback: Some(info) })
    };
    let start = match init {
        Some(v) if v.len() == p && v.iter().all(|x| x.is_finite()) => DVector::from_column_slice(v),
        _ => DVector::zeros(p),
    };
    let mut fit = maximize(&mut eval, start, data.n_eff.max(1.0), opts, location)?;
    let counts = data.quadrant_counts();
    fit.degenerate_quadrant = counts.contains(&0);
    fit.clamp_events = floor_hits;
    Ok(fit)
}

/// Copula correlation-index regression on untreated observations.
///
/// Rows with `g·t = 1` are excluded. The correlation is `tanh(r'c)`; quadrant
/// probabilities use `+ρ` on the (+,+) and (−,−) quadrants and `−ρ` on the
/// mixed ones.
pub fn fit_copula_slice(input: &CopulaSlice<'_>, init: Option<&[f64]>) -> Result<FitResult> {
    fit_copula_slice_with(input, init, &SolverOptions::default())
}

pub fn fit_copula_slice_with(
    input: &CopulaSlice<'_>,
    init: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<FitResult> {
    let (n, p) = input.designs_r.shape();
    let lens = [
        input.m_y.len(),
        input.m_z.len(),
        input.iy.len(),
        input.jz.len(),
        input.t.len(),
        input.g.len(),
        input.weights.len(),
    ];
    if lens.iter().any(|&l| l != n) {
        return Err(Error::DimensionMismatch(format!("{n} design rows, slice lengths {lens:?}")));
    }
    if p == 0 {
        return Err(Error::RankDeficient);
    }
    let mut index: HashMap<(Vec<u64>, usize), usize> = HashMap::new();
    let mut groups = CopulaGroups {
        p,
        my: Vec::new(),
        mz: Vec::new(),
        sy: Vec::new(),
        sz: Vec::new(),
        r: Vec::new(),
        w: Vec::new(),
        n_eff: 0.0,
    };
    let mut row = vec![0.0; p];
    for i in 0..n {
        let w = input.weights[i] * (1.0 - f64::from(input.g[i] * input.t[i]));
        if !(w > 0.0) {
            continue;
        }
        groups.n_eff += 1.0;
        for (j, r) in row.iter_mut().enumerate() {
            *r = input.designs_r[(i, j)];
        }
        let mut key = row_key(&row);
        key.push(input.m_y[i].to_bits());
        key.push(input.m_z[i].to_bits());
        let q = quadrant_index(input.iy[i], input.jz[i]);
        let k = *index.entry((key, q)).or_insert_with(|| {
            groups.my.push(input.m_y[i]);
            groups.mz.push(input.m_z[i]);
            groups.sy.push(if input.iy[i] { 1.0 } else { -1.0 });
            groups.sz.push(if input.jz[i] { 1.0 } else { -1.0 });
            groups.r.extend_from_slice(&row);
            groups.w.push(0.0);
            groups.w.len() - 1
        });
        groups.w[k] += w;
    }
    if groups.n_eff == 0.0 {
        return Err(Error::InvalidArgument("no untreated rows with positive weight".into()));
    }
    check_rank(&groups.r, p, |_| true)?;
    fit_copula_grouped(&groups, init, opts, "copula regression")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::links::norm_inv;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn binary_loglik(x: &DMatrix<f64>, ind: &[bool], w: &[f64], link: Link, b: &[f64]) -> f64 {
        (0..x.nrows())
            .map(|i| {
                let eta: f64 = (0..x.ncols()).map(|j| x[(i, j)] * b[j]).sum();
                // both links are symmetric, 1 − Λ(η) = Λ(−η)
                w[i] * if ind[i] { link.eval(eta).ln() } else { link.eval(-eta).ln() }
            })
            .sum()
    }

    fn saturated(cells: &[(u8, u8, usize, usize)]) -> (DMatrix<f64>, Vec<bool>) {
        let mut rows = Vec::new();
        let mut ind = Vec::new();
        for &(g, t, ones, zeros) in cells {
            for k in 0..ones + zeros {
                let (g, t) = (g as f64, t as f64);
                rows.extend_from_slice(&[1.0, t, g, g * t]);
                ind.push(k < ones);
            }
        }
        (DMatrix::from_row_slice(ind.len(), 4, &rows), ind)
    }

    #[test]
    fn intercept_only_logit_closed_form() {
        let ind: Vec<bool> = (0..50).map(|i| i % 5 < 2).collect();
        let x = DMatrix::from_element(50, 1, 1.0);
        let w = vec![1.0; 50];
        let fit = fit_binary(&x, &ind, &w, Link::Logit, None).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.coefficients[0], (0.4f64 / 0.6).ln(), epsilon = 1e-9);
    }

    #[test]
    fn saturated_fit_reproduces_cell_frequencies() {
        let cells = [(0, 0, 3, 7), (0, 1, 5, 5), (1, 0, 8, 4), (1, 1, 2, 9)];
        let (x, ind) = saturated(&cells);
        let w: Vec<f64> = (0..ind.len()).map(|i| 0.5 + (i % 3) as f64).collect();
        for link in [Link::Logit, Link::Probit] {
            let fit = fit_binary(&x, &ind, &w, link, None).unwrap();
            assert!(fit.converged);
            let mut start = 0;
            for &(g, t, a, b) in &cells {
                let n = a + b;
                let (num, den) = (start..start + n).fold((0.0, 0.0), |(s, d), i| {
                    (s + if ind[i] { w[i] } else { 0.0 }, d + w[i])
                });
                let (g, t) = (g as f64, t as f64);
                let c = &fit.coefficients;
                let eta = c[0] + c[1] * t + c[2] * g + c[3] * g * t;
                assert_abs_diff_eq!(link.eval(eta), num / den, epsilon = 1e-9);
                start += n;
            }
        }
    }

    #[test]
    fn separation_matches_cell_frequencies() {
        let cells = [(0, 0, 0, 6), (0, 1, 0, 6), (1, 0, 6, 0), (1, 1, 6, 0)];
        let (x, ind) = saturated(&cells);
        let w = vec![1.0; ind.len()];
        for link in [Link::Logit, Link::Probit] {
            let fit = fit_binary(&x, &ind, &w, link, None).unwrap();
            let c = &fit.coefficients;
            assert!(c[2].abs() > 5.0);
            for &(g, t, ones, _) in &cells {
                let (g, t) = (g as f64, t as f64);
                let eta = c[0] + c[1] * t + c[2] * g + c[3] * g * t;
                let freq = if ones > 0 { 1.0 } else { 0.0 };
                assert!((link.eval(eta) - freq).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rank_deficiency_and_shape_errors() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let ind = [true, false, true];
        assert_eq!(fit_binary(&x, &ind, &[1.0; 3], Link::Logit, None), Err(Error::RankDeficient));
        assert!(matches!(
            fit_binary(&x, &ind[..2], &[1.0; 3], Link::Logit, None),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn iteration_budget_flags_nonconvergence() {
        let cells = [(0, 0, 3, 7), (0, 1, 5, 5), (1, 0, 8, 4), (1, 1, 2, 9)];
        let (x, ind) = saturated(&cells);
        let opts = SolverOptions { max_iter: 1, ..Default::default() };
        let fit = fit_binary_with(&x, &ind, &vec![1.0; ind.len()], Link::Probit, None, &opts).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 1);
    }

    #[test]
    fn quadrants_sum_to_one() {
        for &my in &[-2.0, -0.3, 0.0, 1.1] {
            for &mz in &[-1.5, 0.2, 2.4] {
                for &rho in &[-0.97, -0.4, 0.0, 0.6, 0.95] {
                    let total: f64 = quadrant_probs(my, mz, rho).iter().sum();
                    assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
                }
            }
        }
    }

    fn gaussian_pairs(n: usize, rho: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for _ in 0..n {
            let u: f64 = rng.sample(StandardNormal);
            let v: f64 = rng.sample(StandardNormal);
            a.push(u);
            b.push(rho * u + (1.0 - rho * rho).sqrt() * v);
        }
        (a, b)
    }

    struct SliceData {
        my: Vec<f64>,
        mz: Vec<f64>,
        iy: Vec<bool>,
        jz: Vec<bool>,
        r: DMatrix<f64>,
        t: Vec<u8>,
        g: Vec<u8>,
        w: Vec<f64>,
    }

    impl SliceData {
        // Thresholds at the (0.4, 0.55) marginal quantiles, untreated cells only.
        fn new(a: &[f64], b: &[f64]) -> Self {
            let n = a.len();
            let (qy, qz) = (norm_inv(0.4), norm_inv(0.55));
            SliceData {
                my: vec![qy; n],
                mz: vec![qz; n],
                iy: a.iter().map(|&v| v <= qy).collect(),
                jz: b.iter().map(|&v| v <= qz).collect(),
                r: DMatrix::from_element(n, 1, 1.0),
                t: (0..n).map(|i| (i % 2) as u8).collect(),
                g: vec![0; n],
                w: vec![1.0; n],
            }
        }

        fn slice(&self) -> CopulaSlice<'_> {
            CopulaSlice {
                m_y: &self.my,
                m_z: &self.mz,
                iy: &self.iy,
                jz: &self.jz,
                designs_r: &self.r,
                t: &self.t,
                g: &self.g,
                weights: &self.w,
            }
        }

        fn loglik(&self, c: &[f64]) -> f64 {
            (0..self.my.len())
                .map(|i| {
                    let u: f64 = (0..self.r.ncols()).map(|j| self.r[(i, j)] * c[j]).sum();
                    let q = quadrant_probs(self.my[i], self.mz[i], bound_corr(u));
                    self.w[i] * q[quadrant_index(self.iy[i], self.jz[i])].ln()
                })
                .sum()
        }
    }

    #[test]
    fn copula_independence_gives_zero_index() {
        let (a, b) = gaussian_pairs(5000, 0.0, 11);
        let data = SliceData::new(&a, &b);
        let fit = fit_copula_slice(&data.slice(), None).unwrap();
        assert!(fit.converged);
        // s.e. of the index near ρ = 0 at one threshold pair is roughly 2.5/√n
        let se = 2.5 / (5000f64).sqrt();
        assert!(fit.coefficients[0].abs() <= 3.0 * se, "{:?}", fit.coefficients);
        assert!(!fit.degenerate_quadrant);
    }

    #[test]
    fn copula_recovers_constant_correlation() {
        let (a, b) = gaussian_pairs(10_000, 0.6, 5);
        let data = SliceData::new(&a, &b);
        let fit = fit_copula_slice(&data.slice(), None).unwrap();
        assert!(fit.converged);
        assert!((bound_corr(fit.coefficients[0]) - 0.6).abs() < 0.05);
    }

    #[test]
    fn copula_optimum_beats_perturbations() {
        let (a, b) = gaussian_pairs(3000, -0.3, 17);
        let mut data = SliceData::new(&a, &b);
        let n = a.len();
        let mut rows = Vec::new();
        for i in 0..n {
            rows.extend_from_slice(&[1.0, data.t[i] as f64]);
        }
        data.r = DMatrix::from_row_slice(n, 2, &rows);
        let fit = fit_copula_slice(&data.slice(), None).unwrap();
        let best = data.loglik(&fit.coefficients);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..64 {
            let d0: f64 = rng.sample(StandardNormal);
            let d1: f64 = rng.sample(StandardNormal);
            let norm = (d0 * d0 + d1 * d1).sqrt();
            let c = [fit.coefficients[0] + 0.1 * d0 / norm, fit.coefficients[1] + 0.1 * d1 / norm];
            assert!(data.loglik(&c) <= best);
        }
    }

    #[test]
    fn copula_ignores_treated_rows_and_flags_empty_quadrants() {
        let (a, b) = gaussian_pairs(400, 0.2, 1);
        let mut data = SliceData::new(&a, &b);
        let base = fit_copula_slice(&data.slice(), None).unwrap();
        // treated rows with arbitrary content do not move the estimate
        for i in 0..50 {
            data.g[i] = 1;
            data.t[i] = 1;
        }
        let mut data2 = SliceData::new(&a, &b);
        data2.g = data.g.clone();
        data2.t = data.t.clone();
        for i in 0..50 {
            data2.iy[i] = !data2.iy[i];
        }
        let f1 = fit_copula_slice(&data.slice(), None).unwrap();
        let f2 = fit_copula_slice(&data2.slice(), None).unwrap();
        assert_eq!(f1.coefficients, f2.coefficients);
        assert!(base.coefficients[0] != f1.coefficients[0]);

        let mut data3 = SliceData::new(&a, &b);
        for v in data3.jz.iter_mut() {
            *v = true;
        }
        let f3 = fit_copula_slice(&data3.slice(), None).unwrap();
        assert!(f3.degenerate_quadrant);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn analytic_gradient_matches_differences(
            b0 in -1.5f64..1.5, b1 in -1.5f64..1.5, b2 in -1.5f64..1.5,
            seed in 0u64..1000, probit in any::<bool>(),
        ) {
            let link = if probit { Link::Probit } else { Link::Logit };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 40;
            let mut rows = Vec::new();
            let mut ind = Vec::new();
            let mut w = Vec::new();
            for _ in 0..n {
                let x1: f64 = rng.sample(StandardNormal);
                let x2: f64 = rng.random_range(0.0..2.0);
                rows.extend_from_slice(&[1.0, x1, x2]);
                ind.push(rng.random_bool(0.4));
                w.push(rng.random_range(0.1..2.0));
            }
            let x = DMatrix::from_row_slice(n, 3, &rows);
            let b = [b0, b1, b2];
            let h = 1e-6;
            for j in 0..3 {
                let mut bp = b;
                let mut bm = b;
                bp[j] += h;
                bm[j] -= h;
                let fd = (binary_loglik(&x, &ind, &w, link, &bp) - binary_loglik(&x, &ind, &w, link, &bm)) / (2.0 * h);
                let analytic: f64 = (0..n).map(|i| {
                    let eta: f64 = (0..3).map(|k| x[(i, k)] * b[k]).sum();
                    let (s, f) = if ind[i] { (w[i], 0.0) } else { (0.0, w[i]) };
                    link.binary_terms(eta, s, f).1 * x[(i, j)]
                }).sum();
                prop_assert!((fd - analytic).abs() <= 1e-6 * (1.0 + analytic.abs()));
            }
        }

        #[test]
        fn doubling_weights_leaves_argmax(seed in 0u64..1000, probit in any::<bool>()) {
            let link = if probit { Link::Probit } else { Link::Logit };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 60;
            let mut rows = Vec::new();
            let mut ind = Vec::new();
            let mut w = Vec::new();
            for _ in 0..n {
                let x1: f64 = rng.sample(StandardNormal);
                rows.extend_from_slice(&[1.0, x1]);
                ind.push(rng.random_bool(0.5));
                w.push(rng.random_range(0.1..2.0));
            }
            let x = DMatrix::from_row_slice(n, 2, &rows);
            let a = fit_binary(&x, &ind, &w, link, None).unwrap();
            let w2: Vec<f64> = w.iter().map(|v| 2.0 * v).collect();
            let b = fit_binary(&x, &ind, &w2, link, None).unwrap();
            for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
                prop_assert!((u - v).abs() < 1e-10);
            }
        }
    }
}
