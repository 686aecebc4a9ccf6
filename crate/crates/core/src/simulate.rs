//! Synthetic grouped panels with known curves, shifts and memberships, and a
//! Monte Carlo harness around the classification and estimation steps.
//!
//! Country moments `(mean top share, mean capital share)` are placed around
//! group centers on a circle so that the nearest two centers are `2s`
//! within-group standard deviations apart on each axis. The latent capital
//! share follows a logit-scale AR(1) that also loads on the instrument; its
//! level is solved per country so the time average hits the country's
//! moment exactly, and the shift `μ_i` is set so the noiseless top share
//! does too.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::clustering::{classify, label_accuracy, ClassifyConfig, GroupAssignment};
use crate::config::{invalid, ConfigError, KeyValues};
use crate::panel::{PanelDataset, PanelError, PanelRow, Quantile};
use crate::tvc::{fit_tvc, fit_tvc_iv, GroupFit, TvcConfig, TvcFit};

/// Ratio of the generated top-10 share to the modelled top-5 share.
pub const TOP10_RATIO: f64 = 1.35;
/// Ratio of the generated top-1 share to the modelled top-5 share.
pub const TOP1_RATIO: f64 = 0.5;
/// Largest tolerated share of out-of-range draws before generation fails.
pub const MAX_INVALID_SHARE: f64 = 0.001;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("invalid specification: {0}")]
    Invalid(String),
    #[error("{invalid} of {total} draws fall outside the admissible range")]
    OutOfRange { invalid: usize, total: usize },
    #[error(transparent)]
    Panel(#[from] PanelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Closed-form curve on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Curve {
    Zero,
    Constant(f64),
    /// `a + bτ`.
    Linear(f64, f64),
    /// `a + b sin(πτ)`.
    Sine(f64, f64),
    /// `a sin(2πτ)`.
    SinTwoPi(f64),
    /// `a cos(2πτ)`.
    CosTwoPi(f64),
    /// `a cos(πτ)`.
    CosPi(f64),
}

impl Curve {
    pub fn eval(&self, tau: f64) -> f64 {
        match *self {
            Curve::Zero => 0.0,
            Curve::Constant(c) => c,
            Curve::Linear(a, b) => a + b * tau,
            Curve::Sine(a, b) => a + b * (PI * tau).sin(),
            Curve::SinTwoPi(a) => a * (2.0 * PI * tau).sin(),
            Curve::CosTwoPi(a) => a * (2.0 * PI * tau).cos(),
            Curve::CosPi(a) => a * (PI * tau).cos(),
        }
    }

    /// Exact integral over `[0, 1]`.
    pub fn integral(&self) -> f64 {
        match *self {
            Curve::Constant(c) => c,
            Curve::Linear(a, b) => a + b / 2.0,
            Curve::Sine(a, b) => a + 2.0 * b / PI,
            Curve::Zero | Curve::SinTwoPi(_) | Curve::CosTwoPi(_) | Curve::CosPi(_) => 0.0,
        }
    }
}

impl fmt::Display for Curve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Curve::Zero => write!(f, "zero"),
            Curve::Constant(c) => write!(f, "const({c})"),
            Curve::Linear(a, b) => write!(f, "linear({a},{b})"),
            Curve::Sine(a, b) => write!(f, "sine({a},{b})"),
            Curve::SinTwoPi(a) => write!(f, "sin2pi({a})"),
            Curve::CosTwoPi(a) => write!(f, "cos2pi({a})"),
            Curve::CosPi(a) => write!(f, "cospi({a})"),
        }
    }
}

impl FromStr for Curve {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "zero" {
            return Ok(Curve::Zero);
        }
        let (name, rest) = s.split_once('(').ok_or_else(|| format!("expected name(args), got {s:?}"))?;
        let args = rest.strip_suffix(')').ok_or_else(|| format!("missing `)` in {s:?}"))?;
        let nums = args
            .split(',')
            .map(|a| a.trim().parse::<f64>().map_err(|e| format!("{a:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        let arity = |k: usize| {
            if nums.len() == k {
                Ok(())
            } else {
                Err(format!("{name} takes {k} argument(s), got {}", nums.len()))
            }
        };
        match name.trim() {
            "const" => arity(1).map(|_| Curve::Constant(nums[0])),
            "linear" => arity(2).map(|_| Curve::Linear(nums[0], nums[1])),
            "sine" => arity(2).map(|_| Curve::Sine(nums[0], nums[1])),
            "sin2pi" => arity(1).map(|_| Curve::SinTwoPi(nums[0])),
            "cos2pi" => arity(1).map(|_| Curve::CosTwoPi(nums[0])),
            "cospi" => arity(1).map(|_| Curve::CosPi(nums[0])),
            other => Err(format!("unknown curve `{other}`")),
        }
    }
}

/// Data-generating process.
#[derive(Debug, Clone, PartialEq)]
pub struct DgpSpec {
    pub countries: usize,
    pub years: usize,
    pub start_year: i32,
    /// Group proportions; the number of groups is their count.
    pub proportions: Vec<f64>,
    pub delta: Vec<Curve>,
    pub omega: Vec<Curve>,
    /// Half the distance between the nearest group centers, in within-group
    /// standard deviations.
    pub separation: f64,
    pub share_center: f64,
    pub cs_center: f64,
    /// Within-group standard deviation of country mean top shares.
    pub share_spread: f64,
    /// Within-group standard deviation of country mean capital shares.
    pub cs_spread: f64,
    pub cs_persistence: f64,
    /// Innovation scale of the idiosyncratic logit capital-share process.
    pub cs_innovation_sd: f64,
    /// Loading of the logit capital share on the standardized instrument.
    pub instrument_slope: f64,
    /// Relative cross-country dispersion of the loading.
    pub instrument_slope_sd: f64,
    pub ptr_mean: f64,
    pub ptr_sd: f64,
    /// Measurement error on the observed capital share.
    pub ex_sd: f64,
    /// Measurement error on the observed top share.
    pub ey_sd: f64,
    /// Structural error.
    pub eps_sd: f64,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self {
            countries: 60,
            years: 40,
            start_year: 1980,
            proportions: vec![1.0 / 3.0; 3],
            delta: vec![Curve::Constant(0.2), Curve::Linear(0.1, 0.2), Curve::Sine(0.3, -0.15)],
            omega: vec![Curve::SinTwoPi(0.01), Curve::CosTwoPi(0.01), Curve::CosPi(0.01)],
            separation: 3.0,
            share_center: 0.25,
            cs_center: 0.3,
            share_spread: 0.01,
            cs_spread: 0.015,
            cs_persistence: 0.8,
            cs_innovation_sd: 0.06,
            instrument_slope: 0.2,
            instrument_slope_sd: 0.0,
            ptr_mean: 0.3,
            ptr_sd: 0.05,
            ex_sd: 0.0,
            ey_sd: 0.0,
            eps_sd: 0.004,
            seed: 0,
        }
    }
}

impl DgpSpec {
    pub fn num_groups(&self) -> usize {
        self.proportions.len()
    }

    pub fn validate(&self) -> Result<(), DgpError> {
        let fail = |m: String| Err(DgpError::Invalid(m));
        let g = self.num_groups();
        if g == 0 {
            return fail("at least one group is required".into());
        }
        if self.countries < g {
            return fail(format!("{} countries cannot fill {g} groups", self.countries));
        }
        if self.years < 2 {
            return fail("at least 2 years are required".into());
        }
        if self.proportions.iter().any(|p| !(*p >= 0.0)) || (self.proportions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return fail(format!("proportions must be nonnegative and sum to 1 (got {:?})", self.proportions));
        }
        if self.delta.len() != g || self.omega.len() != g {
            return fail(format!("need {g} delta and omega curves"));
        }
        if let Some(w) = self.omega.iter().find(|w| w.integral().abs() > 1e-12) {
            return fail(format!("omega curve {w} does not integrate to 0"));
        }
        let scales = [
            ("separation", self.separation),
            ("share_spread", self.share_spread),
            ("cs_spread", self.cs_spread),
            ("cs_innovation_sd", self.cs_innovation_sd),
            ("instrument_slope_sd", self.instrument_slope_sd),
            ("ptr_sd", self.ptr_sd),
            ("ex_sd", self.ex_sd),
            ("ey_sd", self.ey_sd),
            ("eps_sd", self.eps_sd),
        ];
        if let Some((name, v)) = scales.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return fail(format!("{name} must be a finite nonnegative scale (got {v})"));
        }
        if !(0.0..1.0).contains(&self.cs_persistence) {
            return fail(format!("cs_persistence must lie in [0, 1) (got {})", self.cs_persistence));
        }
        if !(self.cs_center > 0.0 && self.cs_center < 1.0) {
            return fail(format!("cs_center must lie in (0, 1) (got {})", self.cs_center));
        }
        if !(self.share_center > 0.0 && self.share_center * TOP10_RATIO < 1.0) {
            return fail(format!("share_center {} leaves no room for valid top shares", self.share_center));
        }
        Ok(())
    }

    /// Group centers of the country moments `(top share, capital share)`.
    pub fn centers(&self) -> Vec<(f64, f64)> {
        let g = self.num_groups();
        let radius = if g == 1 { 0.0 } else { self.separation / (PI / g as f64).sin() };
        (0..g)
            .map(|k| {
                let theta = PI / 2.0 + 2.0 * PI * k as f64 / g as f64;
                (
                    self.share_center + radius * theta.cos() * self.share_spread,
                    self.cs_center + radius * theta.sin() * self.cs_spread,
                )
            })
            .collect()
    }

    /// Number of countries per group, by largest remainder.
    pub fn group_counts(&self) -> Vec<usize> {
        let n = self.countries as f64;
        let mut counts: Vec<usize> = self.proportions.iter().map(|p| (p * n).floor() as usize).collect();
        let mut rest: Vec<(usize, f64)> = self
            .proportions
            .iter()
            .enumerate()
            .map(|(g, p)| (g, p * n - (p * n).floor()))
            .collect();
        rest.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let missing = self.countries - counts.iter().sum::<usize>();
        for &(g, _) in rest.iter().take(missing) {
            counts[g] += 1;
        }
        counts
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self, DgpError> {
        let d = Self::default();
        let proportions = match kv.get_list::<f64>("proportions")? {
            Some(p) => p,
            None => match kv.get::<usize>("groups")? {
                Some(g) if g > 0 => vec![1.0 / g as f64; g],
                Some(_) => return Err(invalid("groups", "0", "must be positive").into()),
                None => d.proportions.clone(),
            },
        };
        let g = proportions.len();
        let curves = |key: &str, default: &[Curve]| -> Result<Vec<Curve>, DgpError> {
            match kv.get_list::<Curve>(key)? {
                Some(c) => Ok(c),
                None if default.len() >= g => Ok(default[..g].to_vec()),
                None => Err(DgpError::Invalid(format!("`{key}` must list {g} curves"))),
            }
        };
        let spec = Self {
            countries: kv.get_or("countries", d.countries)?,
            years: kv.get_or("years", d.years)?,
            start_year: kv.get_or("start_year", d.start_year)?,
            delta: curves("delta", &d.delta)?,
            omega: curves("omega", &d.omega)?,
            proportions,
            separation: kv.get_or("separation", d.separation)?,
            share_center: kv.get_or("share_center", d.share_center)?,
            cs_center: kv.get_or("cs_center", d.cs_center)?,
            share_spread: kv.get_or("share_spread", d.share_spread)?,
            cs_spread: kv.get_or("cs_spread", d.cs_spread)?,
            cs_persistence: kv.get_or("cs_persistence", d.cs_persistence)?,
            cs_innovation_sd: kv.get_or("cs_innovation_sd", d.cs_innovation_sd)?,
            instrument_slope: kv.get_or("instrument_slope", d.instrument_slope)?,
            instrument_slope_sd: kv.get_or("instrument_slope_sd", d.instrument_slope_sd)?,
            ptr_mean: kv.get_or("ptr_mean", d.ptr_mean)?,
            ptr_sd: kv.get_or("ptr_sd", d.ptr_sd)?,
            ex_sd: kv.get_or("ex_sd", d.ex_sd)?,
            ey_sd: kv.get_or("ey_sd", d.ey_sd)?,
            eps_sd: kv.get_or("eps_sd", d.eps_sd)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Key-value form accepted by [`DgpSpec::from_kv`].
    pub fn to_kv(&self) -> String {
        let join = |c: &[Curve]| c.iter().map(Curve::to_string).collect::<Vec<_>>().join(", ");
        let props = self.proportions.iter().map(f64::to_string).collect::<Vec<_>>().join(", ");
        let mut s = String::new();
        let mut put = |k: &str, v: String| s.push_str(&format!("{k} = {v}\n"));
        put("countries", self.countries.to_string());
        put("years", self.years.to_string());
        put("start_year", self.start_year.to_string());
        put("proportions", props);
        put("delta", join(&self.delta));
        put("omega", join(&self.omega));
        put("separation", self.separation.to_string());
        put("share_center", self.share_center.to_string());
        put("cs_center", self.cs_center.to_string());
        put("share_spread", self.share_spread.to_string());
        put("cs_spread", self.cs_spread.to_string());
        put("cs_persistence", self.cs_persistence.to_string());
        put("cs_innovation_sd", self.cs_innovation_sd.to_string());
        put("instrument_slope", self.instrument_slope.to_string());
        put("instrument_slope_sd", self.instrument_slope_sd.to_string());
        put("ptr_mean", self.ptr_mean.to_string());
        put("ptr_sd", self.ptr_sd.to_string());
        put("ex_sd", self.ex_sd.to_string());
        put("ey_sd", self.ey_sd.to_string());
        put("eps_sd", self.eps_sd.to_string());
        put("seed", self.seed.to_string());
        s
    }
}

/// Ground truth behind a generated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// True group per country, in dataset country order.
    pub labels: Vec<usize>,
    pub num_groups: usize,
    pub mu: Vec<f64>,
    /// Latent capital share per dataset row.
    pub latent_capital_share: Vec<f64>,
    pub delta: Vec<Curve>,
    pub omega: Vec<Curve>,
    /// Draws discarded for falling outside the admissible range.
    pub dropped_rows: usize,
}

impl Truth {
    pub fn assignment(&self, ds: &PanelDataset) -> GroupAssignment {
        GroupAssignment {
            labels: self.labels.clone(),
            num_groups: self.num_groups,
            ..GroupAssignment::single(ds.country_ids().to_vec())
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulated {
    pub dataset: PanelDataset,
    pub truth: Truth,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Level `ℓ` with `mean_t logistic(ℓ + z_t) = target`.
fn solve_level(z: &[f64], target: f64) -> f64 {
    let mean = |l: f64| z.iter().map(|&v| logistic(l + v)).sum::<f64>() / z.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draws one panel. Deterministic in `spec.seed`.
pub fn generate(spec: &DgpSpec) -> Result<Simulated, DgpError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let (n, t_len) = (spec.countries, spec.years);
    let centers = spec.centers();
    let counts = spec.group_counts();
    let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(g, &c)| std::iter::repeat_n(g, c)).collect();
    let tau: Vec<f64> = (0..t_len).map(|t| t as f64 / (t_len - 1) as f64).collect();
    let rho = spec.cs_persistence;
    let innovation = (1.0 - rho * rho).sqrt();

    let ids: Vec<String> = (0..n).map(|i| format!("C{:03}", i + 1)).collect();
    let mut rows = Vec::with_capacity(n * t_len);
    let mut latent = Vec::with_capacity(n * t_len);
    let mut mu = Vec::with_capacity(n);
    let mut kept_labels = Vec::with_capacity(n);
    let mut invalid = 0usize;
    for (i, &g) in labels.iter().enumerate() {
        let target_share = centers[g].0 + spec.share_spread * normal();
        let target_cs = centers[g].1 + spec.cs_spread * normal();
        if !(target_cs > 0.0 && target_cs < 1.0) {
            return Err(DgpError::Invalid(format!("country mean capital share {target_cs} outside (0, 1)")));
        }
        let slope = spec.instrument_slope * (1.0 + spec.instrument_slope_sd * normal());

        let mut xi = vec![0.0; t_len];
        let mut u = vec![0.0; t_len];
        for t in 0..t_len {
            let (a, b) = (normal(), normal());
            if t == 0 {
                xi[t] = a;
                u[t] = spec.cs_innovation_sd / innovation * b;
            } else {
                xi[t] = rho * xi[t - 1] + innovation * a;
                u[t] = rho * u[t - 1] + spec.cs_innovation_sd * b;
            }
        }
        let z: Vec<f64> = xi.iter().zip(&u).map(|(x, v)| slope * x + v).collect();
        let level = solve_level(&z, target_cs);
        let cs0: Vec<f64> = z.iter().map(|v| logistic(level + v)).collect();
        let delta = spec.delta[g];
        let omega = spec.omega[g];
        let structural = |t: usize| delta.eval(tau[t]) * cs0[t] + omega.eval(tau[t]);
        let mu_i = target_share - (0..t_len).map(structural).sum::<f64>() / t_len as f64;

        let mut any = false;
        for t in 0..t_len {
            let (ex, ey, eps) = (normal(), normal(), normal());
            let cs = cs0[t] + spec.ex_sd * ex;
            let s = structural(t) + mu_i + spec.eps_sd * eps + spec.ey_sd * ey;
            let ptr = spec.ptr_mean + spec.ptr_sd * xi[t];
            let row = PanelRow {
                country: i,
                year: spec.start_year + t as i32,
                top10: TOP10_RATIO * s,
                top5: s,
                top1: TOP1_RATIO * s,
                capital_share: cs,
                profit_tax_rate: Some(ptr),
            };
            let ok = s > 0.0 && row.top10 < 1.0 && cs > 0.0 && cs < 1.0 && (0.0..=1.0).contains(&ptr);
            if ok {
                rows.push(row);
                latent.push(cs0[t]);
                any = true;
            } else {
                invalid += 1;
            }
        }
        if any {
            mu.push(mu_i);
            kept_labels.push(g);
        }
    }
    let total = n * t_len;
    if invalid as f64 > MAX_INVALID_SHARE * total as f64 {
        return Err(DgpError::OutOfRange { invalid, total });
    }
    let dataset = PanelDataset::from_rows(ids, rows)?;
    Ok(Simulated {
        dataset,
        truth: Truth {
            labels: kept_labels,
            num_groups: spec.num_groups(),
            mu,
            latent_capital_share: latent,
            delta: spec.delta.clone(),
            omega: spec.omega.clone(),
            dropped_rows: invalid,
        },
    })
}

/// Seed of replication `r`: first draw of stream `r` of the master seed.
pub fn replication_seed(master: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r as u64);
    rng.next_u64()
}

/// What a Monte Carlo study runs on each generated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub replications: usize,
    pub seed: u64,
    pub quantile: Quantile,
    /// Run classification and record the selected number of groups.
    pub classify: Option<ClassifyConfig>,
    /// Estimate with the classified groups instead of the true ones.
    pub estimated_groups: bool,
    pub tvc: Option<TvcConfig>,
    /// Also fit the instrumented model.
    pub iv: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            replications: 100,
            seed: 0,
            quantile: Quantile::Top5,
            classify: None,
            estimated_groups: false,
            tvc: Some(TvcConfig::default()),
            iv: false,
        }
    }
}

/// Accuracy of one fitted group against the true curve it maps to.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveScore {
    pub true_group: usize,
    /// Mean squared error of δ̂ over the evaluation grid.
    pub ise: f64,
    /// Share of grid points whose band covers the true δ.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateScore {
    pub average_effect: f64,
    /// The same observation-weighted average applied to the true curves.
    pub true_average_effect: f64,
    pub groups: Vec<CurveScore>,
}

impl EstimateScore {
    pub fn bias(&self) -> f64 {
        self.average_effect - self.true_average_effect
    }
}

/// Majority true label of each fitted group.
fn majority_truth(assignment: &GroupAssignment, truth: &Truth) -> Vec<usize> {
    (0..assignment.num_groups)
        .map(|e| {
            let mut votes = vec![0usize; truth.num_groups];
            for (l, t) in assignment.labels.iter().zip(&truth.labels) {
                if *l == e {
                    votes[*t] += 1;
                }
            }
            let best = votes.iter().copied().max().unwrap_or(0);
            votes.iter().position(|&v| v == best).unwrap_or(0)
        })
        .collect()
}

/// Root mean squared error of δ̂ against `curve` over the evaluation grid.
pub fn delta_rmise(fit: &GroupFit, curve: &Curve) -> f64 {
    let c = &fit.curves;
    let mse = c.tau.iter().zip(&c.delta).map(|(&t, d)| (d - curve.eval(t)).powi(2)).sum::<f64>() / c.tau.len() as f64;
    mse.sqrt()
}

/// Scores a fit against the truth; `mapping[g]` is the true group of fitted
/// group `g`.
pub fn score_fit(fit: &TvcFit, truth: &Truth, mapping: &[usize]) -> EstimateScore {
    let n = fit.n_obs() as f64;
    let mut true_avg = 0.0;
    let mut groups = Vec::with_capacity(fit.groups.len());
    for g in &fit.groups {
        let tg = mapping[g.group()];
        let curve = truth.delta[tg];
        let c = &g.curves;
        let m = c.tau.len() as f64;
        let mut ise = 0.0;
        let mut covered = 0usize;
        for k in 0..c.tau.len() {
            let d = curve.eval(c.tau[k]);
            ise += (c.delta[k] - d).powi(2) / m;
            let (lo, hi) = c.delta_band(k);
            if lo <= d && d <= hi {
                covered += 1;
            }
        }
        let w = g.grid_weights();
        let wsum: f64 = w.iter().sum();
        let avg = c.tau.iter().zip(&w).map(|(&t, wk)| wk * curve.eval(t)).sum::<f64>() / wsum;
        true_avg += g.design.n_obs() as f64 / n * avg;
        groups.push(CurveScore {
            true_group: tg,
            ise,
            coverage: covered as f64 / m,
        });
    }
    EstimateScore {
        average_effect: fit.pooled_average_effect().estimate,
        true_average_effect: true_avg,
        groups,
    }
}

/// Result of one replication. Failures are recorded, not propagated.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub index: usize,
    pub seed: u64,
    pub selected_groups: Option<usize>,
    pub label_accuracy: Option<f64>,
    pub tvc: Option<EstimateScore>,
    pub iv: Option<EstimateScore>,
    pub failure: Option<String>,
}

/// Runs replication `index` of a study.
pub fn run_replication(spec: &DgpSpec, cfg: &StudyConfig, index: usize) -> ReplicationOutcome {
    let seed = replication_seed(cfg.seed, index);
    let mut out = ReplicationOutcome {
        index,
        seed,
        selected_groups: None,
        label_accuracy: None,
        tvc: None,
        iv: None,
        failure: None,
    };
    if let Err(e) = replication_body(spec, cfg, seed, &mut out) {
        out.failure = Some(e);
    }
    out
}

fn replication_body(spec: &DgpSpec, cfg: &StudyConfig, seed: u64, out: &mut ReplicationOutcome) -> Result<(), String> {
    let sim = generate(&DgpSpec { seed, ..spec.clone() }).map_err(|e| e.to_string())?;
    let ds = &sim.dataset;
    let truth_assignment = sim.truth.assignment(ds);
    let mut assignment = truth_assignment.clone();
    if let Some(ccfg) = &cfg.classify {
        let (est, _) = classify(ds, &ClassifyConfig { seed, ..ccfg.clone() }).map_err(|e| e.to_string())?;
        out.selected_groups = Some(est.num_groups);
        out.label_accuracy = Some(label_accuracy(&est.labels, &sim.truth.labels));
        if cfg.estimated_groups {
            assignment = est;
        }
    }
    let Some(tcfg) = &cfg.tvc else {
        return Ok(());
    };
    let mapping = if cfg.estimated_groups {
        majority_truth(&assignment, &sim.truth)
    } else {
        (0..sim.truth.num_groups).collect()
    };
    let fit = fit_tvc(ds, &assignment, cfg.quantile, tcfg).map_err(|e| e.to_string())?;
    out.tvc = Some(score_fit(&fit, &sim.truth, &mapping));
    if cfg.iv {
        let (fit, _) = fit_tvc_iv(ds, &assignment, cfg.quantile, tcfg).map_err(|e| format!("iv: {e}"))?;
        out.iv = Some(score_fit(&fit, &sim.truth, &mapping));
    }
    Ok(())
}

/// Aggregates over successful replications of one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub replications: usize,
    /// Mean of average effect minus its true value.
    pub bias: f64,
    /// `(true group, sqrt(mean ISE))`.
    pub rmise: Vec<(usize, f64)>,
    /// `(true group, mean pointwise coverage)`.
    pub coverage: Vec<(usize, f64)>,
}

fn summarize_estimator<'a>(scores: impl Iterator<Item = &'a EstimateScore>, groups: usize) -> Option<EstimatorSummary> {
    let mut count = 0usize;
    let mut bias = 0.0;
    let mut ise = vec![(0.0, 0usize); groups];
    let mut cov = vec![0.0; groups];
    for s in scores {
        count += 1;
        bias += s.bias();
        for c in &s.groups {
            ise[c.true_group].0 += c.ise;
            ise[c.true_group].1 += 1;
            cov[c.true_group] += c.coverage;
        }
    }
    if count == 0 {
        return None;
    }
    let present: Vec<usize> = (0..groups).filter(|&g| ise[g].1 > 0).collect();
    Some(EstimatorSummary {
        replications: count,
        bias: bias / count as f64,
        rmise: present.iter().map(|&g| (g, (ise[g].0 / ise[g].1 as f64).sqrt())).collect(),
        coverage: present.iter().map(|&g| (g, cov[g] / ise[g].1 as f64)).collect(),
    })
}

/// Outcomes of a study and their aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub num_groups: usize,
    pub outcomes: Vec<ReplicationOutcome>,
}

impl StudyReport {
    pub fn failure_rate(&self) -> f64 {
        self.outcomes.iter().filter(|o| o.failure.is_some()).count() as f64 / self.outcomes.len().max(1) as f64
    }

    /// `(G, count)` for every selected number of groups.
    pub fn selection_frequencies(&self) -> Vec<(usize, usize)> {
        let mut freq: std::collections::BTreeMap<usize, usize> = Default::default();
        for g in self.outcomes.iter().filter_map(|o| o.selected_groups) {
            *freq.entry(g).or_default() += 1;
        }
        freq.into_iter().collect()
    }

    /// Mean label accuracy over replications that selected the true number of
    /// groups.
    pub fn accuracy_when_correct(&self) -> Option<f64> {
        let acc: Vec<f64> = self
            .outcomes
            .iter()
            .filter(|o| o.selected_groups == Some(self.num_groups))
            .filter_map(|o| o.label_accuracy)
            .collect();
        (!acc.is_empty()).then(|| acc.iter().sum::<f64>() / acc.len() as f64)
    }

    pub fn tvc(&self) -> Option<EstimatorSummary> {
        summarize_estimator(self.outcomes.iter().filter_map(|o| o.tvc.as_ref()), self.num_groups)
    }

    pub fn iv(&self) -> Option<EstimatorSummary> {
        summarize_estimator(self.outcomes.iter().filter_map(|o| o.iv.as_ref()), self.num_groups)
    }

    /// Paired comparisons where both estimators succeeded: share with the
    /// least-squares average below the instrumented one, and share with a
    /// smaller absolute instrumented bias.
    pub fn iv_comparison(&self) -> Option<(f64, f64)> {
        let pairs: Vec<(&EstimateScore, &EstimateScore)> = self
            .outcomes
            .iter()
            .filter_map(|o| Some((o.tvc.as_ref()?, o.iv.as_ref()?)))
            .collect();
        if pairs.is_empty() {
            return None;
        }
        let n = pairs.len() as f64;
        let below = pairs.iter().filter(|(a, b)| a.average_effect < b.average_effect).count() as f64 / n;
        let closer = pairs.iter().filter(|(a, b)| b.bias().abs() < a.bias().abs()).count() as f64 / n;
        Some((below, closer))
    }

    /// Writes `metric,estimator,group,value` rows.
    pub fn write_summary<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "estimator", "group", "value"])?;
        let mut put = |m: &str, e: &str, g: String, v: f64| out.write_record([m, e, &g, &format!("{v:.8}")]);
        put("replications", "", String::new(), self.outcomes.len() as f64)?;
        put("failure_rate", "", String::new(), self.failure_rate())?;
        for (g, c) in self.selection_frequencies() {
            put("selected_groups", "bic", g.to_string(), c as f64)?;
        }
        if let Some(a) = self.accuracy_when_correct() {
            put("label_accuracy", "kmeans", String::new(), a)?;
        }
        for (name, s) in [("tvc", self.tvc()), ("tvc_iv", self.iv())] {
            let Some(s) = s else { continue };
            put("bias", name, String::new(), s.bias)?;
            for &(g, v) in &s.rmise {
                put("rmise", name, (g + 1).to_string(), v)?;
            }
            for &(g, v) in &s.coverage {
                put("coverage", name, (g + 1).to_string(), v)?;
            }
        }
        if let Some((below, closer)) = self.iv_comparison() {
            put("ls_below_iv", "", String::new(), below)?;
            put("iv_less_biased", "", String::new(), closer)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes one row per replication.
    pub fn write_outcomes<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "replication",
            "seed",
            "selected_groups",
            "label_accuracy",
            "tvc_average",
            "tvc_iv_average",
            "true_average",
            "failure",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.8}")).unwrap_or_default();
        for o in &self.outcomes {
            out.write_record([
                o.index.to_string(),
                o.seed.to_string(),
                o.selected_groups.map(|g| g.to_string()).unwrap_or_default(),
                opt(o.label_accuracy),
                opt(o.tvc.as_ref().map(|s| s.average_effect)),
                opt(o.iv.as_ref().map(|s| s.average_effect)),
                opt(o.tvc.as_ref().or(o.iv.as_ref()).map(|s| s.true_average_effect)),
                o.failure.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Runs `cfg.replications` independent replications in parallel. Results are
/// ordered by replication index and do not depend on the worker count.
pub fn replicate_study(spec: &DgpSpec, cfg: &StudyConfig) -> Result<StudyReport, DgpError> {
    if cfg.replications == 0 {
        return Err(DgpError::Invalid("at least one replication is required".into()));
    }
    spec.validate()?;
    let outcomes = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(spec, cfg, r))
        .collect();
    Ok(StudyReport {
        num_groups: spec.num_groups(),
        outcomes,
    })
}
