//! Step 2: per-group penalized spline estimation of the transmission
//! coefficient δ_g(τ) and the labor-inequality component ω_g(τ), with
//! country shifts, GCV smoothing selection, posterior bands, sandwich
//! covariances and an instrumented variant.

mod design;
mod iv;
mod pls;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::clustering::{GroupAssignment, DEFAULT_MIN_GROUP_SIZE};
use crate::linalg::{min_eigenvalue, quad_form};
use crate::panel::{PanelDataset, Quantile};
use crate::splines::{
    center_basis, make_basis, uniform_grid, CenteredBasis, SplineError, DEFAULT_DEGREE, DEFAULT_NUM_BASIS,
    DEFAULT_PENALTY_ORDER,
};

pub use design::{assemble_design, assemble_design_with, DesignSet, GroupDesign};
pub use iv::{first_stage, FirstStageFit, MIN_INSTRUMENT_OBS};
pub use pls::{
    default_bandwidth, fit_pls, gcv_select, helmert_contrasts, penalty_scales, posterior_covariance,
    robust_covariance, select_smoothing, BlockPenalties, GcvPoint, GcvTrace, PlsSolution, Posterior, PsiGrid,
    RobustFlavor,
};

/// Two-sided 95% normal quantile.
pub const BAND_Z: f64 = 1.959_963_984_540_054;
pub const DEFAULT_CURVE_POINTS: usize = 101;
pub const DEFAULT_CENTERING_POINTS: usize = 1001;

#[derive(Debug, Error)]
pub enum TvcError {
    #[error("country {0} has no group in the assignment")]
    MissingCountry(String),
    #[error("no group is large enough to estimate")]
    NoEstimableGroup,
    #[error("group {group} has {rows} observations, needs at least {needed}")]
    TooFewObservations { group: usize, rows: usize, needed: usize },
    #[error("smoothing parameters must be nonnegative, got {0:?}")]
    NegativePenalty([f64; 2]),
    #[error("penalized normal system is singular (smallest eigenvalue {min_eigenvalue:e})")]
    Singular { min_eigenvalue: f64 },
    #[error("smoothing grid is empty")]
    EmptyGrid,
    #[error("every smoothing candidate gave a singular system")]
    AllCandidatesSingular,
    #[error("error variance is not positive (rss {rss:e}, residual dof {dof})")]
    NonPositiveVariance { rss: f64, dof: f64 },
    #[error("HAC bandwidth must be nonnegative, got {0}")]
    NegativeBandwidth(i64),
    #[error("insufficient instrument coverage: {0}")]
    InsufficientInstrument(String),
    #[error("profit tax rate has no variation within country {0}")]
    ZeroInstrumentVariance(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("{0}")]
    Invalid(String),
}

/// Settings of the estimation step.
#[derive(Debug, Clone, PartialEq)]
pub struct TvcConfig {
    pub num_basis: usize,
    pub degree: usize,
    pub penalty_order: usize,
    pub psi_grid: PsiGrid,
    pub min_group_size: usize,
    pub curve_points: usize,
    pub centering_points: usize,
}

impl Default for TvcConfig {
    fn default() -> Self {
        Self {
            num_basis: DEFAULT_NUM_BASIS,
            degree: DEFAULT_DEGREE,
            penalty_order: DEFAULT_PENALTY_ORDER,
            psi_grid: PsiGrid::default(),
            min_group_size: DEFAULT_MIN_GROUP_SIZE,
            curve_points: DEFAULT_CURVE_POINTS,
            centering_points: DEFAULT_CENTERING_POINTS,
        }
    }
}

impl TvcConfig {
    pub fn basis(&self) -> Result<CenteredBasis, TvcError> {
        let b = make_basis(self.num_basis, self.degree)?;
        Ok(center_basis(&b, &uniform_grid(self.centering_points))?)
    }
}

/// Point estimates and pointwise 95% bands on an evaluation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub tau: Vec<f64>,
    pub delta: Vec<f64>,
    pub delta_se: Vec<f64>,
    pub omega: Vec<f64>,
    pub omega_se: Vec<f64>,
}

impl Curves {
    pub fn delta_band(&self, k: usize) -> (f64, f64) {
        (self.delta[k] - BAND_Z * self.delta_se[k], self.delta[k] + BAND_Z * self.delta_se[k])
    }

    pub fn omega_band(&self, k: usize) -> (f64, f64) {
        (self.omega[k] - BAND_Z * self.omega_se[k], self.omega[k] + BAND_Z * self.omega_se[k])
    }

    /// Writes `tau,delta,delta_lo,delta_hi,omega,omega_lo,omega_hi`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["tau", "delta", "delta_lo", "delta_hi", "omega", "omega_lo", "omega_hi"])?;
        for k in 0..self.tau.len() {
            let (dl, dh) = self.delta_band(k);
            let (ol, oh) = self.omega_band(k);
            out.write_record(
                [self.tau[k], self.delta[k], dl, dh, self.omega[k], ol, oh].map(|v| format!("{v:.10}")),
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Time average of δ̂ with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageEffect {
    pub estimate: f64,
    pub se: f64,
}

impl AverageEffect {
    pub fn t_stat(&self) -> f64 {
        self.estimate / self.se
    }
}

/// Deviations from the structural invariants of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InvariantReport {
    pub omega_grid_mean: f64,
    pub country_residual_sum: f64,
    pub reconstruction: f64,
    pub covariance_asymmetry: f64,
    pub covariance_min_eigenvalue: f64,
}

impl InvariantReport {
    pub fn holds(&self) -> bool {
        self.omega_grid_mean <= 1e-10
            && self.country_residual_sum <= 1e-8
            && self.reconstruction <= 1e-10
            && self.covariance_asymmetry <= 1e-12
            && self.covariance_min_eigenvalue >= -1e-12
    }

    fn merge(self, o: Self) -> Self {
        Self {
            omega_grid_mean: self.omega_grid_mean.max(o.omega_grid_mean),
            country_residual_sum: self.country_residual_sum.max(o.country_residual_sum),
            reconstruction: self.reconstruction.max(o.reconstruction),
            covariance_asymmetry: self.covariance_asymmetry.max(o.covariance_asymmetry),
            covariance_min_eigenvalue: self.covariance_min_eigenvalue.min(o.covariance_min_eigenvalue),
        }
    }
}

/// Estimates of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFit {
    pub design: GroupDesign,
    pub basis: CenteredBasis,
    pub psi: [f64; 2],
    pub gcv: Option<GcvTrace>,
    pub edf: f64,
    pub rss: f64,
    pub v2: f64,
    /// Stacked `(β_ω, β_δ)`.
    pub beta: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub bread_inverse: DMatrix<f64>,
    pub mu_hat: Vec<f64>,
    pub mu_se: Vec<f64>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    pub curves: Curves,
}

impl GroupFit {
    pub fn group(&self) -> usize {
        self.design.group
    }

    pub fn num_basis(&self) -> usize {
        self.design.num_basis
    }

    /// Coefficients as a `J × 2` array, columns `(ω, δ)`.
    pub fn coefficients(&self) -> DMatrix<f64> {
        let j = self.num_basis();
        DMatrix::from_fn(j, 2, |r, c| self.beta[c * j + r])
    }

    pub fn delta_coefficients(&self) -> &[f64] {
        &self.beta.as_slice()[self.num_basis()..]
    }

    pub fn omega_coefficients(&self) -> &[f64] {
        &self.beta.as_slice()[..self.num_basis()]
    }

    fn raw(&self, tau: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.num_basis()];
        self.basis.basis.evaluate_into(tau.clamp(0.0, 1.0), &mut v);
        v
    }

    fn centered(&self, tau: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.num_basis()];
        self.basis.evaluate_into(tau.clamp(0.0, 1.0), &mut v);
        v
    }

    pub fn delta(&self, tau: f64) -> f64 {
        dot(&self.raw(tau), self.delta_coefficients())
    }

    pub fn omega(&self, tau: f64) -> f64 {
        dot(&self.centered(tau), self.omega_coefficients())
    }

    pub fn delta_se(&self, tau: f64) -> f64 {
        let j = self.num_basis();
        let block = self.covariance.view((j, j), (j, j)).into_owned();
        quad_form(&block, &self.raw(tau)).max(0.0).sqrt()
    }

    pub fn omega_se(&self, tau: f64) -> f64 {
        let j = self.num_basis();
        let block = self.covariance.view((0, 0), (j, j)).into_owned();
        quad_form(&block, &self.centered(tau)).max(0.0).sqrt()
    }

    /// δ̂ at stacked observation `k`.
    pub fn delta_at(&self, k: usize) -> f64 {
        self.delta(self.design.tau[k])
    }

    pub fn omega_at(&self, k: usize) -> f64 {
        self.omega(self.design.tau[k])
    }

    /// Country shift of the country owning stacked observation `k`.
    pub fn mu_at(&self, k: usize) -> f64 {
        let c = self
            .design
            .spans
            .iter()
            .position(|s| s.contains(&k))
            .expect("row belongs to a country");
        self.mu_hat[c]
    }

    /// Capital income inequality κ̂ = δ̂ + μ̂ + ω̂ at stacked observation `k`.
    pub fn kappa_at(&self, k: usize) -> f64 {
        self.delta_at(k) + self.mu_at(k) + self.omega_at(k)
    }

    /// Weights on the evaluation grid: each grid point counts the
    /// observations in the sample year nearest to it.
    pub fn grid_weights(&self) -> Vec<f64> {
        let mut years: Vec<(f64, usize)> = Vec::new();
        for &t in &self.design.tau {
            match years.iter_mut().find(|(u, _)| *u == t) {
                Some(e) => e.1 += 1,
                None => years.push((t, 1)),
            }
        }
        self.curves
            .tau
            .iter()
            .map(|&g| {
                let mut best = (f64::INFINITY, 0usize);
                for &(u, n) in &years {
                    let d = (u - g).abs();
                    if d < best.0 {
                        best = (d, n);
                    }
                }
                best.1 as f64
            })
            .collect()
    }

    /// Observation-weighted grid average of δ̂ and its posterior standard
    /// error.
    pub fn average_effect(&self) -> AverageEffect {
        let w = self.grid_weights();
        let total: f64 = w.iter().sum();
        let j = self.num_basis();
        let mut a = vec![0.0; j];
        for (&t, &wk) in self.curves.tau.iter().zip(&w) {
            for (ai, bi) in a.iter_mut().zip(self.raw(t)) {
                *ai += wk * bi / total;
            }
        }
        let block = self.covariance.view((j, j), (j, j)).into_owned();
        AverageEffect {
            estimate: dot(&a, self.delta_coefficients()),
            se: quad_form(&block, &a).max(0.0).sqrt(),
        }
    }

    pub fn invariants(&self) -> InvariantReport {
        let mut residual_sum: f64 = 0.0;
        for span in &self.design.spans {
            residual_sum = residual_sum.max(self.residuals[span.clone()].iter().sum::<f64>().abs());
        }
        let mut recon: f64 = 0.0;
        for (c, span) in self.design.spans.iter().enumerate() {
            for k in span.clone() {
                let pred = self.delta_at(k) * self.design.regressor[k]
                    + self.mu_hat[c]
                    + self.omega_at(k)
                    + self.residuals[k];
                recon = recon.max((pred - self.design.response[k]).abs());
            }
        }
        InvariantReport {
            omega_grid_mean: self.basis.grid_mean(self.omega_coefficients()).abs(),
            country_residual_sum: residual_sum,
            reconstruction: recon,
            covariance_asymmetry: (&self.covariance - self.covariance.transpose()).amax(),
            covariance_min_eigenvalue: min_eigenvalue(&self.covariance),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// All group fits of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct TvcFit {
    pub quantile: Quantile,
    pub instrumented: bool,
    pub groups: Vec<GroupFit>,
    /// `(group, number of countries)` of groups too small to estimate.
    pub skipped: Vec<(usize, usize)>,
}

impl TvcFit {
    pub fn group(&self, label: usize) -> Option<&GroupFit> {
        self.groups.iter().find(|g| g.group() == label)
    }

    pub fn n_obs(&self) -> usize {
        self.groups.iter().map(|g| g.design.n_obs()).sum()
    }

    /// Observation-weighted combination of the group averages, treating the
    /// groups as independent.
    pub fn pooled_average_effect(&self) -> AverageEffect {
        let n = self.n_obs() as f64;
        let mut est = 0.0;
        let mut var = 0.0;
        for g in &self.groups {
            let w = g.design.n_obs() as f64 / n;
            let a = g.average_effect();
            est += w * a.estimate;
            var += w * w * a.se * a.se;
        }
        AverageEffect {
            estimate: est,
            se: var.sqrt(),
        }
    }

    pub fn rss(&self) -> f64 {
        self.groups.iter().map(|g| g.rss).sum()
    }

    /// Effective parameters including one shift per country.
    pub fn effective_parameters(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.edf + g.design.num_countries() as f64)
            .sum()
    }

    pub fn invariants(&self) -> InvariantReport {
        self.groups
            .iter()
            .map(GroupFit::invariants)
            .fold(
                InvariantReport {
                    covariance_min_eigenvalue: f64::INFINITY,
                    ..Default::default()
                },
                InvariantReport::merge,
            )
    }

    /// Writes `country,mu_hat,se` for every estimated country.
    pub fn write_shifts<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["country", "mu_hat", "se"])?;
        for g in &self.groups {
            for (c, id) in g.design.country_ids.iter().enumerate() {
                out.write_record([id.clone(), format!("{:.10}", g.mu_hat[c]), format!("{:.10}", g.mu_se[c])])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Estimates one group at a given smoothing pair.
pub fn estimate_group(
    design: GroupDesign,
    basis: &CenteredBasis,
    penalties: &BlockPenalties,
    psi: [f64; 2],
    gcv: Option<GcvTrace>,
    curve_points: usize,
) -> Result<GroupFit, TvcError> {
    let sol = fit_pls(&design, penalties, psi)?;
    let post = posterior_covariance(&design, penalties, psi)?;
    let mu_se = post.mu_variance.iter().map(|v| v.sqrt()).collect();
    let mut fit = GroupFit {
        basis: basis.clone(),
        psi,
        gcv,
        edf: sol.edf,
        rss: sol.rss,
        v2: post.v2,
        beta: sol.beta,
        covariance: post.covariance,
        bread_inverse: post.bread_inverse,
        mu_hat: sol.mu_hat,
        mu_se,
        residuals: sol.residuals,
        fitted: sol.fitted,
        curves: Curves {
            tau: Vec::new(),
            delta: Vec::new(),
            delta_se: Vec::new(),
            omega: Vec::new(),
            omega_se: Vec::new(),
        },
        design,
    };
    let tau = uniform_grid(curve_points);
    fit.curves = Curves {
        delta: tau.iter().map(|&t| fit.delta(t)).collect(),
        delta_se: tau.iter().map(|&t| fit.delta_se(t)).collect(),
        omega: tau.iter().map(|&t| fit.omega(t)).collect(),
        omega_se: tau.iter().map(|&t| fit.omega_se(t)).collect(),
        tau,
    };
    Ok(fit)
}

/// Selects the smoothing pair by GCV and estimates every group of a design
/// set.
pub fn fit_designs(set: DesignSet, basis: &CenteredBasis, cfg: &TvcConfig) -> Result<Vec<GroupFit>, TvcError> {
    let penalties = BlockPenalties::new(&basis.basis, cfg.penalty_order)?;
    set.groups
        .into_par_iter()
        .map(|design| {
            let trace = select_smoothing(&design, &penalties, &cfg.psi_grid)?;
            let psi = trace.psi();
            estimate_group(design, basis, &penalties, psi, Some(trace), cfg.curve_points)
        })
        .collect()
}

/// Full estimation step with the observed capital share.
pub fn fit_tvc(
    ds: &PanelDataset,
    assignment: &GroupAssignment,
    quantile: Quantile,
    cfg: &TvcConfig,
) -> Result<TvcFit, TvcError> {
    let basis = cfg.basis()?;
    let set = assemble_design(ds, &basis, assignment, quantile, cfg.min_group_size)?;
    let skipped = set.skipped.clone();
    Ok(TvcFit {
        quantile,
        instrumented: false,
        groups: fit_designs(set, &basis, cfg)?,
        skipped,
    })
}

/// Estimation step on the instrument sample with the first-stage projection
/// in place of the capital share.
pub fn fit_tvc_iv(
    ds: &PanelDataset,
    assignment: &GroupAssignment,
    quantile: Quantile,
    cfg: &TvcConfig,
) -> Result<(TvcFit, FirstStageFit), TvcError> {
    let fs = first_stage(ds)?;
    let basis = cfg.basis()?;
    let set = assemble_design_with(&fs.dataset, &fs.fitted, &basis, assignment, quantile, cfg.min_group_size)?;
    let skipped = set.skipped.clone();
    let fit = TvcFit {
        quantile,
        instrumented: true,
        groups: fit_designs(set, &basis, cfg)?,
        skipped,
    };
    Ok((fit, fs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::PanelRow;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn synthetic(seed: u64, countries: usize, years: usize, noise: f64) -> PanelDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = Normal::new(0.0, 1.0).unwrap();
        let mut rows = Vec::new();
        for c in 0..countries {
            let mu = 0.2 + 0.02 * c as f64;
            let mut cs = 0.35;
            for t in 0..years {
                cs = 0.35 + 0.8 * (cs - 0.35) + 0.02 * e.sample(&mut rng);
                let tau = t as f64 / (years - 1) as f64;
                let d = 0.3 - 0.15 * (std::f64::consts::PI * tau).sin();
                let w = 0.02 * (2.0 * std::f64::consts::PI * tau).sin();
                let s = d * cs + mu + w + noise * e.sample(&mut rng);
                rows.push(PanelRow {
                    country: c,
                    year: 1980 + t as i32,
                    top10: s * 1.35,
                    top5: s,
                    top1: s * 0.5,
                    capital_share: cs,
                    profit_tax_rate: Some(0.2 + (cs - 0.35) * 0.5 + 0.01 * e.sample(&mut rng)),
                });
            }
        }
        let ids = (0..countries).map(|c| format!("C{c:02}")).collect();
        PanelDataset::from_rows(ids, rows).unwrap()
    }

    #[test]
    fn fit_satisfies_invariants() {
        let ds = synthetic(1, 8, 30, 0.005);
        let a = GroupAssignment::single(ds.country_ids().to_vec());
        let fit = fit_tvc(&ds, &a, Quantile::Top5, &TvcConfig::default()).unwrap();
        let inv = fit.invariants();
        assert!(inv.holds(), "{inv:?}");
        let g = &fit.groups[0];
        assert_eq!(g.curves.tau.len(), 101);
        assert_eq!(g.coefficients().shape(), (8, 2));
        for k in 0..g.design.n_obs() {
            let lambda = g.mu_at(k) + g.omega_at(k);
            assert!((g.kappa_at(k) - g.delta_at(k) - lambda).abs() < 1e-15);
        }
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let ds = synthetic(2, 6, 25, 0.01);
        let a = GroupAssignment::single(ds.country_ids().to_vec());
        let cfg = TvcConfig::default();
        let f1 = fit_tvc(&ds, &a, Quantile::Top5, &cfg).unwrap();
        let f2 = fit_tvc(&ds, &a, Quantile::Top5, &cfg).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn t_stats_are_scale_invariant() {
        let ds = synthetic(3, 6, 25, 0.01);
        let scaled_rows: Vec<PanelRow> = ds
            .rows()
            .iter()
            .map(|r| PanelRow {
                top10: r.top10 * 1.5,
                top5: r.top5 * 1.5,
                top1: r.top1 * 1.5,
                ..r.clone()
            })
            .collect();
        let scaled = PanelDataset::from_rows(ds.country_ids().to_vec(), scaled_rows).unwrap();
        let a = GroupAssignment::single(ds.country_ids().to_vec());
        let cfg = TvcConfig::default();
        let f1 = fit_tvc(&ds, &a, Quantile::Top5, &cfg).unwrap();
        let f2 = fit_tvc(&scaled, &a, Quantile::Top5, &cfg).unwrap();
        let (a1, a2) = (f1.groups[0].average_effect(), f2.groups[0].average_effect());
        assert_eq!(f1.groups[0].psi, f2.groups[0].psi);
        assert!((a2.estimate - 1.5 * a1.estimate).abs() < 1e-9);
        assert!((a2.se - 1.5 * a1.se).abs() < 1e-9);
        assert!((a1.t_stat() - a2.t_stat()).abs() < 1e-6);
    }

    #[test]
    fn saturated_fit_reproduces_within_regression() {
        // J = T = 6, ψ = 0: spline columns span all year dummies.
        let ds = synthetic(4, 3, 6, 0.02);
        let basis = center_basis(&make_basis(6, 3).unwrap(), &uniform_grid(1001)).unwrap();
        let a = GroupAssignment::single(ds.country_ids().to_vec());
        let set = assemble_design(&ds, &basis, &a, Quantile::Top5, 1).unwrap();
        let g = &set.groups[0];
        let p = BlockPenalties::new(&basis.basis, 2).unwrap();
        let sol = fit_pls(g, &p, [0.0, 0.0]).unwrap();
        // Saturated within regression: year dummies and CS × year dummies.
        let n = g.n_obs();
        let mut z = DMatrix::zeros(n, 12);
        for r in 0..n {
            let t = (g.years[r] - 1980) as usize;
            z[(r, t)] = 1.0;
            z[(r, 6 + t)] = g.regressor[r];
        }
        for span in &g.spans {
            for c in 0..12 {
                let m = span.clone().map(|r| z[(r, c)]).sum::<f64>() / span.len() as f64;
                span.clone().for_each(|r| z[(r, c)] -= m);
            }
        }
        let coef = z.clone().svd(true, true).solve(&g.s_tilde, 1e-12).unwrap();
        let ols = &z * coef;
        let pls = &g.x_tilde * &sol.beta;
        let scale = ols.amax();
        assert!((ols - pls).amax() / scale < 1e-8);
    }

    #[test]
    fn average_of_constant_delta_is_that_constant() {
        let ds = synthetic(5, 6, 20, 0.01);
        let a = GroupAssignment::single(ds.country_ids().to_vec());
        let mut fit = fit_tvc(&ds, &a, Quantile::Top5, &TvcConfig::default()).unwrap();
        let g = &mut fit.groups[0];
        // Partition of unity: equal δ coefficients give a flat curve.
        let j = g.num_basis();
        for k in 0..j {
            g.beta[j + k] = 0.25;
        }
        assert!((g.average_effect().estimate - 0.25).abs() < 1e-12);
        let w = g.grid_weights();
        assert_eq!(w.len(), 101);
        assert!(w.iter().all(|&v| v == 6.0));
    }

    #[test]
    fn iv_fit_runs_on_instrument_sample() {
        let ds = synthetic(6, 8, 30, 0.005);
        let a = GroupAssignment::single(ds.country_ids().to_vec());
        let (fit, fs) = fit_tvc_iv(&ds, &a, Quantile::Top5, &TvcConfig::default()).unwrap();
        assert!(fit.instrumented);
        assert_eq!(fs.dataset.len(), fit.n_obs());
        assert!(fit.invariants().holds());
        let mut buf = Vec::new();
        fit.write_shifts(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("country,mu_hat,se\n"));
        assert_eq!(text.lines().count(), 9);
        let mut buf = Vec::new();
        fit.groups[0].curves.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("tau,delta,delta_lo,delta_hi,omega,omega_lo,omega_hi\n"));
        assert_eq!(text.lines().count(), 102);
    }
}
