//! Penalized least squares for one group: solve, smoothing selection,
//! posterior and sandwich covariances.
//!
//! The centered ω block has an exact null direction (all coefficients equal)
//! that lies in both the data and the penalty null spaces. The solver works
//! in reduced coordinates `β = T γ` with `T = diag(Z, I)`, where `Z` spans
//! the contrasts orthogonal to the constant vector; this pins the null
//! direction to zero without changing the fitted values.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::design::GroupDesign;
use super::TvcError;
use crate::linalg::{min_eigenvalue, spd_inverse, symmetrize};
use crate::splines::{penalty_matrix, PenaltyMatrix, SplineBasis};

/// Relative eigenvalue floor below which a penalized system is singular.
const SINGULAR_TOL: f64 = 1e-13;

/// Difference penalties for the ω and δ blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPenalties {
    pub omega: PenaltyMatrix,
    pub delta: PenaltyMatrix,
}

impl BlockPenalties {
    pub fn new(basis: &SplineBasis, order: usize) -> Result<Self, TvcError> {
        let p = penalty_matrix(basis, order)?;
        Ok(Self {
            omega: p.clone(),
            delta: p,
        })
    }

    /// `ψ₁ A₁ ⊕ ψ₂ A₂` as a `2J × 2J` matrix.
    pub fn embedded(&self, psi: [f64; 2]) -> DMatrix<f64> {
        let j = self.omega.dim();
        let mut m = DMatrix::zeros(2 * j, 2 * j);
        m.view_mut((0, 0), (j, j)).copy_from(&(&self.omega.coefficients * psi[0]));
        m.view_mut((j, j), (j, j)).copy_from(&(&self.delta.coefficients * psi[1]));
        m
    }
}

/// Orthonormal contrasts: `J × (J-1)`, columns orthogonal to the ones vector.
pub fn helmert_contrasts(j: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(j, j - 1);
    for k in 1..j {
        let norm = ((k * (k + 1)) as f64).sqrt();
        for r in 0..k {
            z[(r, k - 1)] = 1.0 / norm;
        }
        z[(k, k - 1)] = -(k as f64) / norm;
    }
    z
}

/// Map from reduced to full coefficients.
pub(crate) fn reduction(j: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(2 * j, 2 * j - 1);
    t.view_mut((0, 0), (j, j - 1)).copy_from(&helmert_contrasts(j));
    t.view_mut((j, j - 1), (j, j)).fill_with_identity();
    t
}

/// Reduced normal equations of one group.
pub(crate) struct PenalizedSystem<'a> {
    pub design: &'a GroupDesign,
    pub t: DMatrix<f64>,
    pub xr: DMatrix<f64>,
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub a_omega: DMatrix<f64>,
    pub a_delta: DMatrix<f64>,
}

/// Solution at one smoothing pair.
pub(crate) struct Solved {
    /// `(X̃'X̃ + Σψ_k A_k)⁻¹` in reduced coordinates.
    pub m_inv: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    pub rss: f64,
    pub edf: f64,
}

impl<'a> PenalizedSystem<'a> {
    pub fn new(design: &'a GroupDesign, penalties: &BlockPenalties) -> Self {
        let j = design.num_basis;
        let t = reduction(j);
        let xr = &design.x_tilde * &t;
        let xtx = symmetrize(&(xr.transpose() * &xr));
        let xty = xr.transpose() * &design.s_tilde;
        let reduce = |psi| symmetrize(&(t.transpose() * penalties.embedded(psi) * &t));
        Self {
            design,
            a_omega: reduce([1.0, 0.0]),
            a_delta: reduce([0.0, 1.0]),
            t,
            xr,
            xtx,
            xty,
        }
    }

    pub fn penalized(&self, psi: [f64; 2]) -> DMatrix<f64> {
        &self.xtx + &self.a_omega * psi[0] + &self.a_delta * psi[1]
    }

    pub fn solve(&self, psi: [f64; 2]) -> Result<Solved, TvcError> {
        if !(psi[0] >= 0.0 && psi[1] >= 0.0) {
            return Err(TvcError::NegativePenalty(psi));
        }
        let m = self.penalized(psi);
        let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
        let lam_min = min_eigenvalue(&m);
        if !(lam_min > SINGULAR_TOL * scale) {
            return Err(TvcError::Singular { min_eigenvalue: lam_min });
        }
        let m_inv = spd_inverse(&m).ok_or(TvcError::Singular { min_eigenvalue: lam_min })?;
        let gamma = &m_inv * &self.xty;
        let residuals = &self.design.s_tilde - &self.xr * &gamma;
        let rss = residuals.norm_squared();
        let edf = (&m_inv * &self.xtx).trace();
        Ok(Solved {
            beta: &self.t * &gamma,
            m_inv,
            residuals,
            rss,
            edf,
        })
    }

    /// Residual degrees of freedom: observations minus country shifts minus
    /// effective parameters.
    pub fn residual_dof(&self, edf: f64) -> f64 {
        (self.design.n_obs() - self.design.num_countries()) as f64 - edf
    }

    pub fn gcv(&self, s: &Solved) -> Option<f64> {
        let dof = self.residual_dof(s.edf);
        (dof > 0.0).then(|| self.design.n_obs() as f64 * s.rss / (dof * dof))
    }

    /// Full-space inverse `T M⁻¹ T'`.
    pub fn full(&self, reduced: &DMatrix<f64>) -> DMatrix<f64> {
        symmetrize(&(&self.t * reduced * self.t.transpose()))
    }
}

/// Point estimates at a given smoothing pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PlsSolution {
    pub psi: [f64; 2],
    /// Stacked `(β_ω, β_δ)`, length `2J`.
    pub beta: DVector<f64>,
    /// One shift per country of the group.
    pub mu_hat: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub rss: f64,
    pub edf: f64,
}

/// Solves the penalized normal equations for one group and recovers the
/// country shifts.
pub fn fit_pls(design: &GroupDesign, penalties: &BlockPenalties, psi: [f64; 2]) -> Result<PlsSolution, TvcError> {
    if design.n_obs() <= design.num_columns() {
        return Err(TvcError::TooFewObservations {
            group: design.group,
            rows: design.n_obs(),
            needed: design.num_columns() + 1,
        });
    }
    let sys = PenalizedSystem::new(design, penalties);
    let s = sys.solve(psi)?;
    Ok(finish(design, psi, &s))
}

pub(crate) fn finish(design: &GroupDesign, psi: [f64; 2], s: &Solved) -> PlsSolution {
    let xb = &design.x * &s.beta;
    let mu_hat: Vec<f64> = design
        .spans
        .iter()
        .map(|span| {
            let len = span.len() as f64;
            span.clone().map(|r| design.response[r] - xb[r]).sum::<f64>() / len
        })
        .collect();
    let mut fitted = vec![0.0; design.n_obs()];
    let mut residuals = vec![0.0; design.n_obs()];
    for (c, span) in design.spans.iter().enumerate() {
        for r in span.clone() {
            fitted[r] = xb[r] + mu_hat[c];
            residuals[r] = design.response[r] - fitted[r];
        }
    }
    PlsSolution {
        psi,
        beta: s.beta.clone(),
        mu_hat,
        residuals,
        fitted,
        rss: s.rss,
        edf: s.edf,
    }
}

/// One evaluated smoothing candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct GcvPoint {
    pub psi: [f64; 2],
    /// `None` when the candidate is singular or leaves no residual degrees of
    /// freedom.
    pub score: Option<f64>,
    pub edf: f64,
    pub rss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcvTrace {
    pub points: Vec<GcvPoint>,
    pub best: usize,
}

impl GcvTrace {
    pub fn psi(&self) -> [f64; 2] {
        self.points[self.best].psi
    }

    pub fn score(&self) -> f64 {
        self.points[self.best].score.unwrap_or(f64::NAN)
    }
}

/// `n·RSS / (n − N_g − edf)²` for every candidate; returns the argmin, ties
/// going to the larger `ψ₁ + ψ₂`.
pub fn gcv_select(design: &GroupDesign, penalties: &BlockPenalties, candidates: &[[f64; 2]]) -> Result<GcvTrace, TvcError> {
    if candidates.is_empty() {
        return Err(TvcError::EmptyGrid);
    }
    let sys = PenalizedSystem::new(design, penalties);
    let points = evaluate(&sys, candidates);
    let best = argmin(&points).ok_or(TvcError::AllCandidatesSingular)?;
    Ok(GcvTrace { points, best })
}

fn evaluate(sys: &PenalizedSystem<'_>, candidates: &[[f64; 2]]) -> Vec<GcvPoint> {
    candidates
        .par_iter()
        .map(|&psi| match sys.solve(psi) {
            Ok(s) => GcvPoint {
                psi,
                score: sys.gcv(&s),
                edf: s.edf,
                rss: s.rss,
            },
            Err(_) => GcvPoint {
                psi,
                score: None,
                edf: f64::NAN,
                rss: f64::NAN,
            },
        })
        .collect()
}

fn argmin(points: &[GcvPoint]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, p) in points.iter().enumerate() {
        let Some(score) = p.score else { continue };
        best = match best {
            None => Some(k),
            Some(b) => {
                let bs = points[b].score.expect("scored");
                let better = score < bs || (score == bs && p.psi[0] + p.psi[1] > points[b].psi[0] + points[b].psi[1]);
                Some(if better { k } else { b })
            }
        };
    }
    best
}

/// Log-spaced search grid for the two smoothing parameters, relative to the
/// data scale of each block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiGrid {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
    pub refine: bool,
}

impl Default for PsiGrid {
    fn default() -> Self {
        Self {
            lower: 1e-4,
            upper: 1e6,
            points: 13,
            refine: true,
        }
    }
}

impl PsiGrid {
    pub fn values(&self) -> Vec<f64> {
        log_space(self.lower.log10(), self.upper.log10(), self.points)
    }

    fn step(&self) -> f64 {
        if self.points > 1 {
            (self.upper.log10() - self.lower.log10()) / (self.points - 1) as f64
        } else {
            0.0
        }
    }
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![10f64.powf(lo)];
    }
    (0..n)
        .map(|k| 10f64.powf(lo + (hi - lo) * k as f64 / (n - 1) as f64))
        .collect()
}

/// Per-block multipliers `‖X̃_k'X̃_k‖_F / ‖A_k‖_F` that put the grid on the
/// scale of the data.
pub fn penalty_scales(design: &GroupDesign, penalties: &BlockPenalties) -> [f64; 2] {
    let j = design.num_basis;
    let xtx = design.x_tilde.transpose() * &design.x_tilde;
    let block = |off: usize, a: &PenaltyMatrix| {
        let num = xtx.view((off, off), (j, j)).norm();
        let den = a.coefficients.norm();
        if num > 0.0 && den > 0.0 {
            num / den
        } else {
            1.0
        }
    };
    [block(0, &penalties.omega), block(j, &penalties.delta)]
}

/// Grid search with one local refinement around the coarse winner.
pub fn select_smoothing(design: &GroupDesign, penalties: &BlockPenalties, grid: &PsiGrid) -> Result<GcvTrace, TvcError> {
    if grid.points == 0 || !(grid.lower > 0.0) || !(grid.upper >= grid.lower) {
        return Err(TvcError::EmptyGrid);
    }
    let scales = penalty_scales(design, penalties);
    let values = grid.values();
    let mut candidates = Vec::with_capacity(values.len() * values.len());
    for &a in &values {
        for &b in &values {
            candidates.push([a * scales[0], b * scales[1]]);
        }
    }
    let sys = PenalizedSystem::new(design, penalties);
    let mut points = evaluate(&sys, &candidates);
    let coarse = argmin(&points).ok_or(TvcError::AllCandidatesSingular)?;
    if grid.refine && grid.points > 1 {
        let step = grid.step();
        let centre = [
            (points[coarse].psi[0] / scales[0]).log10(),
            (points[coarse].psi[1] / scales[1]).log10(),
        ];
        let axis = |c: f64| log_space(c - step, c + step, 5);
        let mut fine = Vec::with_capacity(25);
        for &a in &axis(centre[0]) {
            for &b in &axis(centre[1]) {
                let psi = [a * scales[0], b * scales[1]];
                if !candidates.contains(&psi) {
                    fine.push(psi);
                }
            }
        }
        points.extend(evaluate(&sys, &fine));
    }
    let best = argmin(&points).ok_or(TvcError::AllCandidatesSingular)?;
    Ok(GcvTrace { points, best })
}

/// Bayesian posterior covariance of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    /// `(X̃'X̃ + Σψ_k A_k)⁻¹ v̂²`, full `2J × 2J`.
    pub covariance: DMatrix<f64>,
    /// `(X̃'X̃ + Σψ_k A_k)⁻¹` in full coordinates.
    pub bread_inverse: DMatrix<f64>,
    pub v2: f64,
    pub mu_variance: Vec<f64>,
}

pub fn posterior_covariance(design: &GroupDesign, penalties: &BlockPenalties, psi: [f64; 2]) -> Result<Posterior, TvcError> {
    let sys = PenalizedSystem::new(design, penalties);
    let s = sys.solve(psi)?;
    posterior_from(&sys, &s)
}

pub(crate) fn posterior_from(sys: &PenalizedSystem<'_>, s: &Solved) -> Result<Posterior, TvcError> {
    let dof = sys.residual_dof(s.edf);
    let v2 = s.rss / dof;
    if !(dof > 0.0) || !(v2 > 0.0) || !v2.is_finite() {
        return Err(TvcError::NonPositiveVariance { rss: s.rss, dof });
    }
    let bread_inverse = sys.full(&s.m_inv);
    let design = sys.design;
    let mu_variance = (0..design.num_countries())
        .map(|c| {
            let xbar = design.x_mean(c);
            let q = (xbar.transpose() * &bread_inverse * &xbar)[(0, 0)];
            (1.0 / design.spans[c].len() as f64 + q) * v2
        })
        .collect();
    Ok(Posterior {
        covariance: &bread_inverse * v2,
        bread_inverse,
        v2,
        mu_variance,
    })
}

/// Sandwich covariance flavors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobustFlavor {
    White,
    Hac,
}

/// Newey–West rule-of-thumb lag for a series of length `t`.
pub fn default_bandwidth(t: usize) -> usize {
    (4.0 * (t as f64 / 100.0).powf(2.0 / 9.0)).floor() as usize
}

/// `bread⁻¹ · meat · bread⁻¹` with `bread = X̃'X̃ + Σψ_k A_k`.
///
/// The HAC meat uses Bartlett weights `1 − |Δyear| / (L + 1)` on residual
/// cross-products within each country; `L = 0` gives the White meat.
pub fn robust_covariance(
    design: &GroupDesign,
    penalties: &BlockPenalties,
    psi: [f64; 2],
    flavor: RobustFlavor,
    bandwidth: Option<i64>,
) -> Result<DMatrix<f64>, TvcError> {
    let lag = match (flavor, bandwidth) {
        (_, Some(b)) if b < 0 => return Err(TvcError::NegativeBandwidth(b)),
        (RobustFlavor::White, _) => 0,
        (RobustFlavor::Hac, Some(b)) => b as usize,
        (RobustFlavor::Hac, None) => {
            default_bandwidth(design.spans.iter().map(|s| s.len()).max().unwrap_or(0))
        }
    };
    let sys = PenalizedSystem::new(design, penalties);
    let s = sys.solve(psi)?;
    Ok(sandwich(&sys, &s.m_inv, s.residuals.as_slice(), lag))
}

/// Sandwich with given residuals, mapped to full coordinates.
pub(crate) fn sandwich(sys: &PenalizedSystem<'_>, m_inv: &DMatrix<f64>, residuals: &[f64], lag: usize) -> DMatrix<f64> {
    let design = sys.design;
    let k = sys.xr.ncols();
    let mut meat = DMatrix::zeros(k, k);
    for span in &design.spans {
        let rows: Vec<usize> = span.clone().collect();
        let scores: Vec<DVector<f64>> = rows
            .iter()
            .map(|&r| sys.xr.row(r).transpose() * residuals[r])
            .collect();
        for (a, &ra) in rows.iter().enumerate() {
            for (b, &rb) in rows.iter().enumerate() {
                let gap = (design.years[ra] - design.years[rb]).unsigned_abs() as usize;
                if gap > lag {
                    continue;
                }
                let w = 1.0 - gap as f64 / (lag + 1) as f64;
                meat += &scores[a] * scores[b].transpose() * w;
            }
        }
    }
    let v = m_inv * symmetrize(&meat) * m_inv;
    sys.full(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::GroupAssignment;
    use crate::panel::{PanelDataset, PanelRow, Quantile};
    use crate::splines::{center_basis, make_basis, uniform_grid, CenteredBasis};
    use crate::tvc::design::assemble_design;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn centered(j: usize) -> CenteredBasis {
        center_basis(&make_basis(j, 3).unwrap(), &uniform_grid(1001)).unwrap()
    }

    fn random_panel(seed: u64, countries: usize, years: usize) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for c in 0..countries {
            for t in 0..years {
                let cs = 0.2 + 0.3 * rng.random::<f64>();
                let s = 0.1 + 0.5 * cs + 0.05 * rng.random::<f64>() + 0.01 * c as f64;
                rows.push(PanelRow {
                    country: c,
                    year: 1990 + t as i32,
                    top10: s + 0.1,
                    top5: s,
                    top1: s / 3.0,
                    capital_share: cs,
                    profit_tax_rate: None,
                });
            }
        }
        let ids = (0..countries).map(|c| format!("C{c}")).collect();
        PanelDataset::from_rows(ids, rows).unwrap()
    }

    fn group(ds: &PanelDataset, b: &CenteredBasis) -> GroupDesign {
        let a = GroupAssignment::single(ds.country_ids().to_vec());
        assemble_design(ds, b, &a, Quantile::Top5, 1).unwrap().groups.remove(0)
    }

    /// Lagrangian solve with `1'β_ω = 0` in full coordinates, using a
    /// generic LU factorization.
    fn kkt_oracle(g: &GroupDesign, p: &BlockPenalties, psi: [f64; 2]) -> DVector<f64> {
        let j = g.num_basis;
        let k = 2 * j;
        let mut m = DMatrix::zeros(k + 1, k + 1);
        let normal = g.x_tilde.transpose() * &g.x_tilde + p.embedded(psi);
        m.view_mut((0, 0), (k, k)).copy_from(&normal);
        for c in 0..j {
            m[(k, c)] = 1.0;
            m[(c, k)] = 1.0;
        }
        let mut rhs = DVector::zeros(k + 1);
        rhs.rows_mut(0, k).copy_from(&(g.x_tilde.transpose() * &g.s_tilde));
        let sol = m.lu().solve(&rhs).unwrap();
        sol.rows(0, k).into_owned()
    }

    #[test]
    fn contrasts_are_orthonormal_and_sum_to_zero() {
        let z = helmert_contrasts(6);
        let ztz = z.transpose() * &z;
        assert!((ztz - DMatrix::identity(5, 5)).amax() < 1e-15);
        for c in 0..5 {
            assert!(z.column(c).sum().abs() < 1e-15);
        }
    }

    #[test]
    fn zero_response_gives_zero_solution() {
        let ds = random_panel(1, 3, 10);
        let b = centered(5);
        let mut g = group(&ds, &b);
        g.response.iter_mut().for_each(|v| *v = 0.0);
        g.s_tilde.fill(0.0);
        let p = BlockPenalties::new(&b.basis, 2).unwrap();
        let fit = fit_pls(&g, &p, [1.0, 1.0]).unwrap();
        assert!(fit.beta.iter().all(|&v| v == 0.0));
        assert!(fit.mu_hat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tiny_instances_match_dense_oracle() {
        let b = centered(4);
        let p = BlockPenalties::new(&b.basis, 2).unwrap();
        for seed in 0..10 {
            let ds = random_panel(seed, 2, 8);
            let g = group(&ds, &b);
            let fit = fit_pls(&g, &p, [0.5, 2.0]).unwrap();
            let oracle = kkt_oracle(&g, &p, [0.5, 2.0]);
            assert!((&fit.beta - oracle).amax() < 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn unpenalized_fit_is_within_least_squares() {
        let b = centered(5);
        let p = BlockPenalties::new(&b.basis, 2).unwrap();
        let ds = random_panel(4, 4, 12);
        let g = group(&ds, &b);
        let fit = fit_pls(&g, &p, [0.0, 0.0]).unwrap();
        // Drop the redundant ω column and regress directly with SVD.
        let mut cols: Vec<usize> = (1..10).collect();
        cols.sort();
        let xs = g.x_tilde.select_columns(&cols);
        let coef = xs.clone().svd(true, true).solve(&g.s_tilde, 1e-14).unwrap();
        let fitted_ls = &xs * coef;
        let fitted = &g.x_tilde * &fit.beta;
        assert!((fitted - fitted_ls).amax() < 1e-9);
    }

    #[test]
    fn gcv_argmin_matches_exhaustive_reevaluation() {
        let b = centered(4);
        let p = BlockPenalties::new(&b.basis, 2).unwrap();
        let ds = random_panel(7, 2, 8);
        let g = group(&ds, &b);
        let grid: Vec<[f64; 2]> = log_space(-3.0, 3.0, 7)
            .iter()
            .flat_map(|&a| log_space(-3.0, 3.0, 7).into_iter().map(move |b| [a, b]))
            .collect();
        let trace = gcv_select(&g, &p, &grid).unwrap();
        let mut best = (f64::INFINITY, [0.0; 2]);
        for &psi in &grid {
            let fit = fit_pls(&g, &p, psi).unwrap();
            let n = g.n_obs() as f64;
            let dof = n - 2.0 - fit.edf;
            let rss: f64 = fit.residuals.iter().map(|e| e * e).sum();
            let score = n * rss / (dof * dof);
            if score < best.0 {
                best = (score, psi);
            }
        }
        assert_eq!(trace.psi(), best.1);
    }

    #[test]
    fn single_candidate_and_errors() {
        let b = centered(4);
        let p = BlockPenalties::new(&b.basis, 2).unwrap();
        let g = group(&random_panel(2, 2, 8), &b);
        assert_eq!(gcv_select(&g, &p, &[[3.0, 4.0]]).unwrap().psi(), [3.0, 4.0]);
        assert!(matches!(gcv_select(&g, &p, &[]), Err(TvcError::EmptyGrid)));
        assert!(matches!(fit_pls(&g, &p, [-1.0, 0.0]), Err(TvcError::NegativePenalty(_))));
    }

    #[test]
    fn singular_system_reports_eigenvalue() {
        let b = centered(4);
        let p = BlockPenalties::new(&b.basis, 2).unwrap();
        let mut g = group(&random_panel(3, 2, 8), &b);
        // A regressor that is constant within country leaves the δ block
        // with nothing but its demeaned zeros.
        for r in 0..g.n_obs() {
            for col in 4..8 {
                g.x_tilde[(r, col)] = 0.0;
            }
        }
        match fit_pls(&g, &p, [0.0, 0.0]) {
            Err(TvcError::Singular { min_eigenvalue }) => assert!(min_eigenvalue.abs() < 1e-10),
            other => panic!("expected singular system, got {other:?}"),
        }
    }

    #[test]
    fn posterior_matches_direct_inverse() {
        let b = centered(4);
        let p = BlockPenalties::new(&b.basis, 2).unwrap();
        let g = group(&random_panel(5, 2, 8), &b);
        let psi = [0.5, 2.0];
        let post = posterior_covariance(&g, &p, psi).unwrap();
        let fit = fit_pls(&g, &p, psi).unwrap();
        // Inverse of the reduced system computed by LU, mapped back.
        let t = reduction(4);
        let xr = &g.x_tilde * &t;
        let m = xr.transpose() * &xr + t.transpose() * p.embedded(psi) * &t;
        let inv = m.clone().lu().try_inverse().unwrap();
        let edf = (&inv * xr.transpose() * &xr).trace();
        let v2 = fit.rss / (16.0 - 2.0 - edf);
        let expected = &t * inv * t.transpose() * v2;
        assert!((&post.covariance - expected).amax() < 1e-10);
        assert!((post.v2 - v2).abs() < 1e-12);
        assert!((&post.covariance - post.covariance.transpose()).amax() == 0.0);
        assert!(min_eigenvalue(&post.covariance) > -1e-12);
    }

    #[test]
    fn orthonormal_design_gives_scaled_identity() {
        // Synthetic group whose reduced design has orthonormal columns.
        let b = centered(4);
        let p = BlockPenalties::new(&b.basis, 2).unwrap();
        let mut g = group(&random_panel(6, 4, 10), &b);
        let t = reduction(4);
        let xr = &g.x_tilde * &t;
        let q = xr.clone().qr().q();
        // x̃ = q T' keeps every column within-country demeaned because q's
        // columns are combinations of x̃'s columns.
        g.x_tilde = &q * t.transpose();
        let post = posterior_covariance(&g, &p, [0.0, 0.0]).unwrap();
        let expected = &t * t.transpose() * post.v2;
        assert!((&post.covariance - expected).amax() < 1e-12);
    }

    #[test]
    fn hac_with_zero_lag_equals_white() {
        let b = centered(4);
        let p = BlockPenalties::new(&b.basis, 2).unwrap();
        let g = group(&random_panel(8, 3, 12), &b);
        let white = robust_covariance(&g, &p, [1.0, 1.0], RobustFlavor::White, None).unwrap();
        let hac0 = robust_covariance(&g, &p, [1.0, 1.0], RobustFlavor::Hac, Some(0)).unwrap();
        assert!((white - hac0).amax() < 1e-12);
        assert!(matches!(
            robust_covariance(&g, &p, [1.0, 1.0], RobustFlavor::Hac, Some(-1)),
            Err(TvcError::NegativeBandwidth(-1))
        ));
    }

    #[test]
    fn constant_squared_residuals_factor_the_meat() {
        let b = centered(4);
        let p = BlockPenalties::new(&b.basis, 2).unwrap();
        let g = group(&random_panel(9, 3, 12), &b);
        let sys = PenalizedSystem::new(&g, &p);
        let solved = sys.solve([1.0, 1.0]).unwrap();
        let c: f64 = 0.04;
        let e: Vec<f64> = (0..g.n_obs()).map(|r| if r % 3 == 0 { c.sqrt() } else { -c.sqrt() }).collect();
        let robust = sandwich(&sys, &solved.m_inv, &e, 0);
        let direct = sys.full(&(&solved.m_inv * (sys.xr.transpose() * &sys.xr) * c * &solved.m_inv));
        assert!((robust - direct).amax() < 1e-12);
    }

    #[test]
    fn heavy_penalties_match_linear_coefficient_regression() {
        let b = centered(6);
        let p = BlockPenalties::new(&b.basis, 2).unwrap();
        let ds = random_panel(10, 5, 20);
        let g = group(&ds, &b);
        // ψ = 1e8 relative to the data scale of each block.
        let sc = penalty_scales(&g, &p);
        let fit = fit_pls(&g, &p, [1e8 * sc[0], 1e8 * sc[1]]).unwrap();
        let beta_d = fit.beta.rows(6, 6).into_owned();
        let d = crate::splines::difference_operator(6, 2);
        assert!((d * &beta_d).amax() < 1e-4);
        // Linear coefficient sequences reproduce g(τ) = Σ_j j·B_j(τ), so the
        // fit approaches the within regression of S on {g, CS, g·CS}. With
        // clamped knots g is not affine near the boundaries.
        let n = g.n_obs();
        let gtau: Vec<f64> = g
            .tau
            .iter()
            .map(|&t| b.basis.evaluate(t).unwrap().iter().enumerate().map(|(j, v)| j as f64 * v).sum())
            .collect();
        let mut z = DMatrix::from_fn(n, 3, |r, c| match c {
            0 => gtau[r],
            1 => g.regressor[r],
            _ => gtau[r] * g.regressor[r],
        });
        for span in &g.spans {
            for c in 0..3 {
                let m = span.clone().map(|r| z[(r, c)]).sum::<f64>() / span.len() as f64;
                span.clone().for_each(|r| z[(r, c)] -= m);
            }
        }
        let coef = z.clone().svd(true, true).solve(&g.s_tilde, 1e-14).unwrap();
        let ols = &z * coef;
        let pls = &g.x_tilde * &fit.beta;
        let diff = (ols - pls).amax();
        assert!(diff < 1e-4, "{diff:e}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn residuals_sum_to_zero_by_country(seed in 0u64..1000, psi0 in 1e-3f64..1e3, psi1 in 1e-3f64..1e3) {
            let b = centered(5);
            let p = BlockPenalties::new(&b.basis, 2).unwrap();
            let g = group(&random_panel(seed, 3, 9), &b);
            let fit = fit_pls(&g, &p, [psi0, psi1]).unwrap();
            for span in &g.spans {
                let s: f64 = fit.residuals[span.clone()].iter().sum();
                prop_assert!(s.abs() < 1e-8);
            }
            prop_assert!(b.grid_mean(&fit.beta.as_slice()[..5]).abs() < 1e-10);
        }
    }
}
