//! Simulation designs with known counterfactuals, and brute-force oracles.

use crate::links::{binorm_cdf, bound_corr, norm_cdf, norm_inv};
use crate::model::{Observation, ObservationTable, PanelMode, ThresholdGrid};
use crate::uni::DistEstimate;
use crate::{Error, Link, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Piecewise-linear function through knots, extended linearly past both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPath {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl CoefficientPath {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 || knots.len() != values.len() {
            return Err(Error::InvalidSpec("a path needs at least two knots and one value per knot".into()));
        }
        if knots.windows(2).any(|w| !(w[0] < w[1])) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSpec("knots must increase strictly and values be finite".into()));
        }
        Ok(CoefficientPath { knots, values })
    }

    /// `a + b·y` sampled at the knots.
    pub fn affine(knots: &[f64], a: f64, b: f64) -> Self {
        CoefficientPath { knots: knots.to_vec(), values: knots.iter().map(|y| a + b * y).collect() }
    }

    pub fn constant(knots: &[f64], c: f64) -> Self {
        Self::affine(knots, c, 0.0)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub fn eval(&self, y: f64) -> f64 {
        let k = &self.knots;
        let v = &self.values;
        let n = k.len();
        let j = k.partition_point(|&x| x <= y).clamp(1, n - 1);
        let (x0, x1, v0, v1) = (k[j - 1], k[j], v[j - 1], v[j]);
        v0 + (v1 - v0) * (y - x0) / (x1 - x0)
    }
}

/// Coefficient functions of one outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalPaths {
    pub alpha: CoefficientPath,
    pub beta: CoefficientPath,
    pub gamma: CoefficientPath,
    /// Group-by-period interaction of the untreated outcome; zero under no-interaction.
    pub delta: CoefficientPath,
    /// Shift of the treated outcome's index relative to the untreated one.
    pub effect: CoefficientPath,
}

impl MarginalPaths {
    /// Paths on 21 knots `−4 + 0.4k`: α = 1.6y, β = 0.5 − 0.05y, γ = −0.3 + 0.08y.
    pub fn default_paths() -> Self {
        let knots = default_knots();
        MarginalPaths {
            alpha: CoefficientPath::affine(&knots, 0.0, 1.6),
            beta: CoefficientPath::affine(&knots, 0.5, -0.05),
            gamma: CoefficientPath::affine(&knots, -0.3, 0.08),
            delta: CoefficientPath::constant(&knots, 0.0),
            effect: CoefficientPath::constant(&knots, 0.0),
        }
    }

    fn paths(&self) -> [&CoefficientPath; 5] {
        [&self.alpha, &self.beta, &self.gamma, &self.delta, &self.effect]
    }

    /// Index of the untreated (`treated = false`) or treated outcome in cell (g, t).
    fn index(&self, g: u8, t: u8, treated: bool, shift: f64, y: f64) -> f64 {
        let (g, t) = (f64::from(g), f64::from(t));
        let mut v = self.alpha.eval(y) + t * self.beta.eval(y) + g * self.gamma.eval(y)
            + g * t * self.delta.eval(y)
            + shift;
        if treated {
            v += self.effect.eval(y);
        }
        v
    }

    fn all_knots(&self) -> Vec<f64> {
        let mut k: Vec<f64> = self.paths().iter().flat_map(|p| p.knots.iter().copied()).collect();
        k.sort_by(f64::total_cmp);
        k.dedup();
        k
    }

    fn end_slope(&self, g: u8, t: u8, treated: bool, upper: bool) -> f64 {
        let (g, t) = (f64::from(g), f64::from(t));
        let slope = |p: &CoefficientPath| {
            let n = p.knots.len();
            let (a, b) = if upper { (n - 2, n - 1) } else { (0, 1) };
            (p.values[b] - p.values[a]) / (p.knots[b] - p.knots[a])
        };
        let mut s = slope(&self.alpha) + t * slope(&self.beta) + g * slope(&self.gamma)
            + g * t * slope(&self.delta);
        if treated {
            s += slope(&self.effect);
        }
        s
    }

    fn check(&self, label: &str) -> Result<()> {
        let knots = self.all_knots();
        for g in 0..2u8 {
            for t in 0..2u8 {
                for treated in [false, true] {
                    if treated && g * t == 0 {
                        continue;
                    }
                    let vals: Vec<f64> = knots.iter().map(|&y| self.index(g, t, treated, 0.0, y)).collect();
                    let increasing = vals.windows(2).all(|w| w[0] < w[1]);
                    let ends = self.end_slope(g, t, treated, false) > 0.0
                        && self.end_slope(g, t, treated, true) > 0.0;
                    if !increasing || !ends {
                        return Err(Error::InvalidSpec(format!(
                            "{label} index of cell (g={g}, t={t}) is not strictly increasing"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves `index(y) = v` on the piecewise-linear index.
    fn invert(&self, g: u8, t: u8, treated: bool, shift: f64, v: f64) -> f64 {
        let knots = self.all_knots();
        let f = |y: f64| self.index(g, t, treated, shift, y);
        let n = knots.len();
        let first = f(knots[0]);
        if v <= first {
            let s = self.end_slope(g, t, treated, false);
            return knots[0] + (v - first) / s;
        }
        let last = f(knots[n - 1]);
        if v >= last {
            let s = self.end_slope(g, t, treated, true);
            return knots[n - 1] + (v - last) / s;
        }
        let j = knots.partition_point(|&y| f(y) <= v).clamp(1, n - 1);
        let (y0, y1) = (knots[j - 1], knots[j]);
        let (f0, f1) = (f(y0), f(y1));
        y0 + (y1 - y0) * (v - f0) / (f1 - f0)
    }
}

/// Binary covariate drawn per row, shifting the outcome indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateDgp {
    /// P(x = 1) per cell, indexed `[g][t]`.
    pub share: [[f64; 2]; 2],
    pub shift_y: f64,
    pub shift_z: f64,
}

/// Gaussian copula for a second outcome with correlation
/// `tanh(a + b·t + c·g + d·g·t)`, plus `effect` for the treated outcome pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CopulaDgp {
    pub z: MarginalPaths,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub effect: f64,
}

impl CopulaDgp {
    pub fn rho(&self, g: u8, t: u8, treated: bool) -> f64 {
        let (g, t) = (f64::from(g), f64::from(t));
        let mut u = self.a + self.b * t + self.c * g + self.d * g * t;
        if treated {
            u += self.effect;
        }
        bound_corr(u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub link: Link,
    pub y: MarginalPaths,
    pub covariate: Option<CovariateDgp>,
    pub copula: Option<CopulaDgp>,
    /// Rows per cell, indexed `[g][t]`.
    pub cell_sizes: [[usize; 2]; 2],
    /// Same units in both periods; requires equal sizes across periods per group.
    pub panel: bool,
    pub seed: u64,
}

/// Knots `−4 + 0.4k`, k = 0..20.
pub fn default_knots() -> Vec<f64> {
    (0..21).map(|k| -4.0 + 0.4 * k as f64).collect()
}

impl DgpSpec {
    /// Logit design without covariates, no interaction and no treatment effect.
    pub fn default_logit(n_per_cell: usize, seed: u64) -> Self {
        DgpSpec {
            link: Link::Logit,
            y: MarginalPaths::default_paths(),
            covariate: None,
            copula: None,
            cell_sizes: [[n_per_cell; 2]; 2],
            panel: false,
            seed,
        }
    }

    /// Adds a second outcome with the default paths and a Gaussian copula.
    pub fn with_copula(mut self, a: f64, b: f64, c: f64) -> Self {
        self.copula = Some(CopulaDgp { z: MarginalPaths::default_paths(), a, b, c, d: 0.0, effect: 0.0 });
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.y.check("outcome")?;
        if let Some(cop) = &self.copula {
            cop.z.check("second outcome")?;
            let vals = [cop.a, cop.b, cop.c, cop.d, cop.effect];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpec("copula coefficients must be finite".into()));
            }
        }
        if let Some(cov) = &self.covariate {
            let ok = cov.share.iter().flatten().all(|s| (0.0..=1.0).contains(s))
                && cov.shift_y.is_finite()
                && cov.shift_z.is_finite();
            if !ok {
                return Err(Error::InvalidSpec("covariate shares must lie in [0,1]".into()));
            }
        }
        if self.cell_sizes.iter().flatten().any(|&n| n == 0) {
            return Err(Error::InvalidSpec("every cell needs at least one row".into()));
        }
        if self.panel && (0..2).any(|g| self.cell_sizes[g][0] != self.cell_sizes[g][1]) {
            return Err(Error::InvalidSpec("panel designs need equal sizes in both periods".into()));
        }
        Ok(())
    }

    /// True CDF of the outcome in cell (g, t) for covariate value `x`.
    /// For g = t = 1, `treated` selects the treated or the untreated outcome.
    pub fn cell_cdf(&self, g: u8, t: u8, x: f64, treated: bool, y: f64) -> f64 {
        let shift = self.covariate.as_ref().map_or(0.0, |c| c.shift_y * x);
        self.link.eval(self.y.index(g, t, treated && g * t == 1, shift, y))
    }

    fn x_mix(&self, g: u8, t: u8) -> Vec<(f64, f64)> {
        match &self.covariate {
            None => vec![(0.0, 1.0)],
            Some(c) => {
                let s = c.share[g as usize][t as usize];
                vec![(0.0, 1.0 - s), (1.0, s)]
            }
        }
    }

    fn treated_mix_cdf(&self, y: f64, treated: bool) -> f64 {
        self.x_mix(1, 1).iter().map(|&(x, p)| p * self.cell_cdf(1, 1, x, treated, y)).sum()
    }

    /// Joint CDF of the (treated or untreated) outcome pair of the treated in period 1.
    pub fn joint_cdf_11(&self, y: f64, z: f64, treated: bool) -> Result<f64> {
        let cop = self.copula.as_ref().ok_or(Error::MissingSecondOutcome)?;
        let rho = cop.rho(1, 1, treated);
        Ok(self
            .x_mix(1, 1)
            .iter()
            .map(|&(x, p)| {
                let sz = self.covariate.as_ref().map_or(0.0, |c| c.shift_z * x);
                let fy = self.cell_cdf(1, 1, x, treated, y);
                let fz = self.link.eval(cop.z.index(1, 1, treated, sz, z));
                p * binorm_cdf(norm_inv(fy), norm_inv(fz), rho)
            })
            .sum())
    }
}

fn cell_stream(seed: u64, g: u8, t: u8) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + 2 * u64::from(g) + u64::from(t));
    rng
}

/// Draws a table by inverse-CDF sampling within each (g, t) cell.
pub fn generate(spec: &DgpSpec) -> Result<ObservationTable> {
    spec.validate()?;
    let mut rows = Vec::new();
    let names = if spec.covariate.is_some() { vec!["x".to_string()] } else { Vec::new() };
    // Panel units are numbered within group so both periods share ids.
    let first_id = [0u64, spec.cell_sizes[0][0].max(spec.cell_sizes[0][1]) as u64];
    let mut cross_id = 0u64;
    for g in 0..2u8 {
        for t in 0..2u8 {
            let mut rng = cell_stream(spec.seed, g, t);
            let treated = g * t == 1;
            for j in 0..spec.cell_sizes[g as usize][t as usize] {
                let x = match &spec.covariate {
                    Some(c) => f64::from(rng.random_bool(c.share[g as usize][t as usize]) as u8),
                    None => 0.0,
                };
                let n1: f64 = rng.sample(StandardNormal);
                let sy = spec.covariate.as_ref().map_or(0.0, |c| c.shift_y * x);
                let y = spec.y.invert(g, t, treated, sy, spec.link.inv(norm_cdf(n1)));
                let id = if spec.panel {
                    first_id[g as usize] + j as u64
                } else {
                    cross_id += 1;
                    cross_id - 1
                };
                let mut obs = Observation::new(id, t, g, y);
                if let Some(cop) = &spec.copula {
                    let n2: f64 = rng.sample(StandardNormal);
                    let rho = cop.rho(g, t, treated);
                    let u2 = rho * n1 + (1.0 - rho * rho).sqrt() * n2;
                    let sz = spec.covariate.as_ref().map_or(0.0, |c| c.shift_z * x);
                    let z = cop.z.invert(g, t, treated, sz, spec.link.inv(norm_cdf(u2)));
                    obs = obs.with_z(z);
                }
                if spec.covariate.is_some() {
                    obs = obs.with_x(vec![x]);
                }
                rows.push(obs);
            }
        }
    }
    let mode = if spec.panel { PanelMode::Panel } else { PanelMode::RepeatedCrossSection };
    ObservationTable::new(rows, names, mode)
}

fn dist(points: &[f64], cdf: Vec<f64>, n11: f64) -> DistEstimate {
    DistEstimate {
        points: points.to_vec(),
        cdf,
        rearranged: true,
        reordered: false,
        n11,
        support_max: f64::INFINITY,
    }
}

/// True counterfactual CDF of the treated in period 1: `Λ(α + β + γ)`, mixed
/// over the treated covariate distribution.
pub fn true_counterfactual(spec: &DgpSpec, points: &[f64]) -> Result<DistEstimate> {
    if !spec.y.delta.is_zero() {
        return Err(Error::AssumptionViolated("interaction path δ is not identically zero".into()));
    }
    let cdf = points.iter().map(|&y| spec.treated_mix_cdf(y, false)).collect();
    Ok(dist(points, cdf, spec.cell_sizes[1][1] as f64))
}

/// True CDF of the treated outcome of the treated in period 1.
pub fn true_treated_cdf(spec: &DgpSpec, points: &[f64]) -> DistEstimate {
    let cdf = points.iter().map(|&y| spec.treated_mix_cdf(y, true)).collect();
    dist(points, cdf, spec.cell_sizes[1][1] as f64)
}

/// True counterfactual joint CDF on a lattice, `[i][j]` for `(ys[i], zs[j])`.
pub fn true_counterfactual_joint(spec: &DgpSpec, ys: &[f64], zs: &[f64]) -> Result<Vec<Vec<f64>>> {
    if !spec.y.delta.is_zero() || spec.copula.as_ref().is_some_and(|c| !c.z.delta.is_zero() || c.d != 0.0) {
        return Err(Error::AssumptionViolated("interaction terms are not zero".into()));
    }
    ys.iter()
        .map(|&y| zs.iter().map(|&z| spec.joint_cdf_11(y, z, false)).collect())
        .collect()
}

/// Direct plug-in of cell empirical CDFs:
/// `Λ[Λ⁻¹(F₁₀(y)) + Λ⁻¹(F₀₁(y)) − Λ⁻¹(F₀₀(y))]`.
pub fn oracle_saturated(table: &ObservationTable, grid: &ThresholdGrid, link: Link) -> DistEstimate {
    let mut cells: [[Vec<f64>; 2]; 2] = Default::default();
    for r in table.rows() {
        cells[r.g as usize][r.t as usize].push(r.y);
    }
    let ecdf = |v: &Vec<f64>, y: f64| v.iter().filter(|&&u| u <= y).count() as f64 / v.len() as f64;
    let cdf = grid
        .points()
        .iter()
        .map(|&y| {
            link.eval(
                link.inv(ecdf(&cells[1][0], y)) + link.inv(ecdf(&cells[0][1], y))
                    - link.inv(ecdf(&cells[0][0], y)),
            )
        })
        .collect();
    DistEstimate {
        points: grid.points().to_vec(),
        cdf,
        rearranged: false,
        reordered: false,
        n11: cells[1][1].len() as f64,
        support_max: grid.support_max(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_grid, GridPolicy};
    use approx::assert_abs_diff_eq;

    fn cell(table: &ObservationTable, g: u8, t: u8) -> Vec<f64> {
        let mut v: Vec<f64> = table.rows().iter().filter(|r| r.g == g && r.t == t).map(|r| r.y).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    fn ks(a: &[f64], b: &[f64]) -> f64 {
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            let x = a[i].min(b[j]);
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn path_interpolates_and_extrapolates() {
        let p = CoefficientPath::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 3.0]).unwrap();
        assert_eq!(p.eval(0.5), 1.0);
        assert_eq!(p.eval(2.0), 2.5);
        assert_eq!(p.eval(-1.0), -2.0);
        assert_eq!(p.eval(5.0), 4.0);
        assert!(CoefficientPath::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn null_paths_give_identical_cells() {
        let mut spec = DgpSpec::default_logit(5000, 9);
        let k = default_knots();
        spec.y.beta = CoefficientPath::constant(&k, 0.0);
        spec.y.gamma = CoefficientPath::constant(&k, 0.0);
        let table = generate(&spec).unwrap();
        let base = cell(&table, 0, 0);
        // two-sample KS 5% critical value for equal n is 1.358·√(2/n)
        let crit = 1.358 * (2.0 / 5000f64).sqrt();
        for (g, t) in [(0, 1), (1, 0), (1, 1)] {
            assert!(ks(&base, &cell(&table, g, t)) <= 2.0 * crit);
        }
    }

    #[test]
    fn cell_ecdf_matches_spec_cdf() {
        let spec = DgpSpec::default_logit(4000, 2);
        let table = generate(&spec).unwrap();
        for (g, t) in [(0u8, 0u8), (0, 1), (1, 0), (1, 1)] {
            let v = cell(&table, g, t);
            let ymed = v[v.len() / 2];
            let emp = v.iter().filter(|&&u| u <= ymed).count() as f64 / v.len() as f64;
            let n = v.len() as f64;
            assert!((emp - spec.cell_cdf(g, t, 0.0, true, ymed)).abs() <= 3.0 / n.sqrt());
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = DgpSpec::default_logit(100, 77).with_copula(0.3, 0.1, -0.2);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = DgpSpec { seed: 78, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn panel_ids_repeat_across_periods() {
        let spec = DgpSpec { panel: true, ..DgpSpec::default_logit(20, 1) };
        let table = generate(&spec).unwrap();
        assert_eq!(table.panel_mode(), PanelMode::Panel);
        for g in 0..2u8 {
            let ids = |t: u8| {
                let mut v: Vec<u64> =
                    table.rows().iter().filter(|r| r.g == g && r.t == t).map(|r| r.id).collect();
                v.sort();
                v
            };
            assert_eq!(ids(0), ids(1));
        }
        let bad = DgpSpec { cell_sizes: [[20, 21], [20, 20]], ..spec };
        assert!(matches!(generate(&bad), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn non_increasing_index_rejected() {
        let mut spec = DgpSpec::default_logit(10, 1);
        spec.y.beta = CoefficientPath::affine(&default_knots(), 0.0, -2.0);
        assert!(matches!(generate(&spec), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn true_counterfactual_examples() {
        let k = default_knots();
        let mut spec = DgpSpec::default_logit(10, 1);
        spec.y.beta = CoefficientPath::constant(&k, 0.0);
        spec.y.gamma = CoefficientPath::constant(&k, 0.0);
        let pts = [-1.0, 0.0, 1.3];
        let cf = true_counterfactual(&spec, &pts).unwrap();
        for (i, &y) in pts.iter().enumerate() {
            assert_abs_diff_eq!(cf.cdf[i], spec.cell_cdf(0, 0, 0.0, false, y), epsilon = 1e-15);
        }

        spec.y.beta = CoefficientPath::constant(&k, 0.5);
        spec.y.gamma = CoefficientPath::constant(&k, -0.5);
        assert_abs_diff_eq!(true_counterfactual(&spec, &[0.0]).unwrap().cdf[0], 0.5, epsilon = 1e-15);

        spec.y.delta = CoefficientPath::constant(&k, 0.2);
        assert!(matches!(true_counterfactual(&spec, &[0.0]), Err(Error::AssumptionViolated(_))));
    }

    #[test]
    fn true_counterfactual_matches_direct_simulation() {
        // untreated law of the (1,1) cell, drawn with the effect path active
        // for the observed outcome but read from the untreated index
        let mut spec = DgpSpec::default_logit(1_000_000, 4);
        spec.y.effect = CoefficientPath::constant(&default_knots(), 0.7);
        let mut rng = cell_stream(99, 1, 1);
        let pts = [-1.5, -0.4, 0.0, 0.6, 1.8];
        let mut counts = [0usize; 5];
        let n = 1_000_000;
        for _ in 0..n {
            let u: f64 = rng.random();
            let y = spec.y.invert(1, 1, false, 0.0, spec.link.inv(u));
            for (c, &p) in counts.iter_mut().zip(&pts) {
                if y <= p {
                    *c += 1;
                }
            }
        }
        let cf = true_counterfactual(&spec, &pts).unwrap();
        for (c, v) in counts.iter().zip(&cf.cdf) {
            assert!((*c as f64 / n as f64 - v).abs() <= 0.003);
        }
    }

    #[test]
    fn oracle_examples() {
        // F10 = 0.6, F01 = 0.7, F00 = 0.5 at y = 0
        let mut rows = Vec::new();
        let mut push = |g: u8, t: u8, below: usize, n: usize| {
            for i in 0..n {
                let y = if i < below { 0.0 } else { 1.0 };
                rows.push(Observation::new(rows.len() as u64, t, g, y));
            }
        };
        push(1, 0, 6, 10);
        push(0, 1, 7, 10);
        push(0, 0, 5, 10);
        push(1, 1, 5, 10);
        let table = ObservationTable::new(rows, vec![], PanelMode::RepeatedCrossSection).unwrap();
        let grid = build_grid(&table.y_values(), &GridPolicy::AllUnique).unwrap();
        let est = oracle_saturated(&table, &grid, Link::Logit);
        assert_abs_diff_eq!(est.cdf[0], 7.0 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn oracle_cancellation() {
        let mut rows = Vec::new();
        for g in 0..2u8 {
            for t in 0..2u8 {
                for i in 0..4 {
                    rows.push(Observation::new(rows.len() as u64, t, g, f64::from(i)));
                }
            }
        }
        let table = ObservationTable::new(rows, vec![], PanelMode::RepeatedCrossSection).unwrap();
        let grid = build_grid(&table.y_values(), &GridPolicy::AllUnique).unwrap();
        for link in [Link::Logit, Link::Probit] {
            let est = oracle_saturated(&table, &grid, link);
            for (k, v) in est.cdf.iter().enumerate() {
                assert_abs_diff_eq!(*v, (k + 1) as f64 / 4.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn copula_draws_have_the_specified_correlation() {
        let spec = DgpSpec::default_logit(20_000, 5).with_copula(0.6f64.atanh(), 0.0, 0.0);
        let table = generate(&spec).unwrap();
        // fraction of (0,0)-cell pairs below both medians vs Φ₂(0,0;0.6)
        let cell: Vec<(f64, f64)> = table
            .rows()
            .iter()
            .filter(|r| r.g == 0 && r.t == 0)
            .map(|r| (r.y, r.z.unwrap()))
            .collect();
        let ymed = spec.y.invert(0, 0, false, 0.0, 0.0);
        let both = cell.iter().filter(|(y, z)| *y <= ymed && *z <= ymed).count() as f64;
        let want = binorm_cdf(0.0, 0.0, 0.6);
        assert!((both / cell.len() as f64 - want).abs() < 0.015);
    }
}
