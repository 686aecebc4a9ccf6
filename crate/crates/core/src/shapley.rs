//! Shapley attribution of fitted top shares to three components: the
//! time-varying part of the transmission coefficient, the capital-share
//! level effect and the labor-inequality component.

use std::collections::BTreeMap;
use std::io::Write;

use thiserror::Error;

use crate::panel::PanelDataset;
use crate::tvc::TvcFit;

pub const COMPONENTS: [&str; 3] = ["delta", "cs", "omega"];

#[derive(Debug, Error, PartialEq)]
pub enum ShapleyError {
    #[error("fit and dataset disagree: {0}")]
    Mismatch(String),
    #[error("country {0} has fewer than 2 years in the fit")]
    TooFewYears(String),
}

/// Coalition weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ShapleyMode {
    /// `|S|!(n − |S| − 1)!/n!`.
    #[default]
    Exact,
    /// Every marginal contribution divided by the number of components.
    PaperLiteral,
}

/// How a country's per-year attributions become one contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContributionMode {
    /// Last observed year minus first observed year.
    #[default]
    Change,
    /// Mean over the observed years.
    PeriodAverage,
}

/// Shapley values of `n` players for a value function over subsets encoded
/// as bit masks.
pub fn shapley_values(n: usize, mode: ShapleyMode, f: impl Fn(u32) -> f64) -> Vec<f64> {
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let mut phi = vec![0.0; n];
    for (v, out) in phi.iter_mut().enumerate() {
        let bit = 1u32 << v;
        for mask in 0..(1u32 << n) {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = match mode {
                ShapleyMode::Exact => fact(s) * fact(n - s - 1) / fact(n),
                ShapleyMode::PaperLiteral => 1.0 / n as f64,
            };
            *out += w * (f(mask | bit) - f(mask));
        }
    }
    phi
}

/// Attributions at one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub country: String,
    pub group: usize,
    pub year: i32,
    pub mu_hat: f64,
    pub prediction: f64,
    /// Component values `((δ̂ − δ̄)·CS, δ̄·CS, ω̂)`.
    pub components: [f64; 3],
    pub phi: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyReport {
    pub mode: ShapleyMode,
    pub attributions: Vec<Attribution>,
}

impl ShapleyReport {
    /// Writes one row per observation.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["country", "group", "year", "mu_hat", "prediction", "phi_delta", "phi_cs", "phi_omega"])?;
        for a in &self.attributions {
            out.write_record([
                a.country.clone(),
                (a.group + 1).to_string(),
                a.year.to_string(),
                format!("{:.10}", a.mu_hat),
                format!("{:.10}", a.prediction),
                format!("{:.10}", a.phi[0]),
                format!("{:.10}", a.phi[1]),
                format!("{:.10}", a.phi[2]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Attributes every fitted observation. δ̄ of a group is its average effect.
pub fn decompose(fit: &TvcFit, ds: &PanelDataset, mode: ShapleyMode) -> Result<ShapleyReport, ShapleyError> {
    let mut attributions = Vec::new();
    for g in &fit.groups {
        let d = &g.design;
        let delta_bar = g.average_effect().estimate;
        for (c, span) in d.spans.iter().enumerate() {
            let id = &d.country_ids[c];
            let ci = ds
                .country_index(id)
                .ok_or_else(|| ShapleyError::Mismatch(format!("country {id} not in dataset")))?;
            for k in span.clone() {
                if ds.row_index(ci, d.years[k]).is_none() {
                    return Err(ShapleyError::Mismatch(format!("{id} {} not in dataset", d.years[k])));
                }
                let cs = d.regressor[k];
                let components = [(g.delta_at(k) - delta_bar) * cs, delta_bar * cs, g.omega_at(k)];
                let mu = g.mu_hat[c];
                let value = |mask: u32| {
                    mu + (0..3)
                        .filter(|v| mask & (1 << v) != 0)
                        .map(|v| components[v])
                        .sum::<f64>()
                };
                let phi = shapley_values(3, mode, value);
                attributions.push(Attribution {
                    country: id.clone(),
                    group: g.group(),
                    year: d.years[k],
                    mu_hat: mu,
                    prediction: g.fitted[k],
                    components,
                    phi: [phi[0], phi[1], phi[2]],
                });
            }
        }
    }
    Ok(ShapleyReport { mode, attributions })
}

/// Per-country contributions and proportions.
#[derive(Debug, Clone, PartialEq)]
pub struct ProportionRow {
    pub country: String,
    pub group: usize,
    pub contributions: [f64; 3],
    /// `None` when the contributions sum to (numerically) zero.
    pub proportions: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProportionSummary {
    pub rows: Vec<ProportionRow>,
    /// Mean proportions per group over countries with defined proportions.
    pub group_means: Vec<(usize, [f64; 3])>,
}

impl ProportionSummary {
    /// Writes `country,group,prop_delta,prop_cs,prop_omega`; undefined rows
    /// are written as `NA`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["country", "group", "prop_delta", "prop_cs", "prop_omega"])?;
        for r in &self.rows {
            let cells: [String; 3] = match r.proportions {
                Some(p) => p.map(|v| format!("{v:.6}")),
                None => ["NA".into(), "NA".into(), "NA".into()],
            };
            out.write_record([r.country.clone(), (r.group + 1).to_string(), cells[0].clone(), cells[1].clone(), cells[2].clone()])?;
        }
        for (g, m) in &self.group_means {
            out.write_record([
                "mean".to_string(),
                (g + 1).to_string(),
                format!("{:.6}", m[0]),
                format!("{:.6}", m[1]),
                format!("{:.6}", m[2]),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn summarize_proportions(report: &ShapleyReport, mode: ContributionMode) -> Result<ProportionSummary, ShapleyError> {
    // Preserve first-appearance order of countries.
    let mut order: Vec<(String, usize)> = Vec::new();
    let mut by_country: BTreeMap<String, Vec<&Attribution>> = BTreeMap::new();
    for a in &report.attributions {
        let entry = by_country.entry(a.country.clone()).or_default();
        if entry.is_empty() {
            order.push((a.country.clone(), a.group));
        }
        entry.push(a);
    }
    let mut rows = Vec::with_capacity(order.len());
    for (country, group) in order {
        let mut obs = by_country.remove(&country).unwrap_or_default();
        if obs.len() < 2 {
            return Err(ShapleyError::TooFewYears(country));
        }
        obs.sort_by_key(|a| a.year);
        let contributions: [f64; 3] = match mode {
            ContributionMode::Change => {
                let (first, last) = (obs[0], obs[obs.len() - 1]);
                [0, 1, 2].map(|v| last.phi[v] - first.phi[v])
            }
            ContributionMode::PeriodAverage => {
                [0, 1, 2].map(|v| obs.iter().map(|a| a.phi[v]).sum::<f64>() / obs.len() as f64)
            }
        };
        let total: f64 = contributions.iter().sum();
        let proportions = (total.abs() > 1e-12).then(|| contributions.map(|c| c / total));
        rows.push(ProportionRow {
            country,
            group,
            contributions,
            proportions,
        });
    }
    let mut acc: BTreeMap<usize, ([f64; 3], usize)> = BTreeMap::new();
    for r in &rows {
        if let Some(p) = r.proportions {
            let e = acc.entry(r.group).or_insert(([0.0; 3], 0));
            for v in 0..3 {
                e.0[v] += p[v];
            }
            e.1 += 1;
        }
    }
    let group_means = acc
        .into_iter()
        .map(|(g, (s, n))| (g, s.map(|v| v / n as f64)))
        .collect();
    Ok(ProportionSummary { rows, group_means })
}
