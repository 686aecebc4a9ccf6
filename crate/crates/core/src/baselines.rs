//! Reference estimators: mean-group OLS, CCE mean-group, and helpers for
//! comparing models.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::least_squares;
use crate::panel::{PanelDataset, Quantile};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("need N >= 2 for variance, got {0} usable countries")]
    TooFewCountries(usize),
    #[error("ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("residual sum of squares must be positive, got {0}")]
    ZeroResiduals(f64),
    #[error("sample size must be positive")]
    EmptySample,
}

/// Mean-group estimate built from per-country slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct MgResult {
    pub country_ids: Vec<String>,
    pub slopes: Vec<f64>,
    pub estimate: f64,
    pub variance: f64,
    pub t_stat: f64,
    pub bic: f64,
    pub rss: f64,
    pub n_obs: usize,
    pub n_params: usize,
    /// Countries left out, with the reason.
    pub dropped: Vec<(String, String)>,
    /// Countries whose augmentation terms were dropped for collinearity.
    pub reduced: Vec<String>,
}

struct UnitFit {
    slope: f64,
    rss: f64,
    params: usize,
    reduced: bool,
}

fn aggregate(fits: Vec<(String, UnitFit)>, dropped: Vec<(String, String)>, n_obs: usize) -> Result<MgResult, BaselineError> {
    let n = fits.len();
    if n < 2 {
        return Err(BaselineError::TooFewCountries(n));
    }
    let slopes: Vec<f64> = fits.iter().map(|(_, f)| f.slope).collect();
    let estimate = slopes.iter().sum::<f64>() / n as f64;
    let variance = slopes.iter().map(|d| (d - estimate).powi(2)).sum::<f64>() / (n * (n - 1)) as f64;
    let rss: f64 = fits.iter().map(|(_, f)| f.rss).sum();
    let n_params: usize = fits.iter().map(|(_, f)| f.params).sum();
    let bic = model_bic(rss, n_params as f64, n_obs).unwrap_or(f64::NEG_INFINITY);
    let reduced = fits.iter().filter(|(_, f)| f.reduced).map(|(c, _)| c.clone()).collect();
    Ok(MgResult {
        country_ids: fits.into_iter().map(|(c, _)| c).collect(),
        slopes,
        estimate,
        variance,
        t_stat: estimate / variance.sqrt(),
        bic,
        rss,
        n_obs,
        n_params,
        dropped,
        reduced,
    })
}

/// Per-country `S = δ_i CS + λ_i + ε`, aggregated by the mean-group rule.
pub fn mg_ols(ds: &PanelDataset, quantile: Quantile) -> Result<MgResult, BaselineError> {
    let mut fits = Vec::new();
    let mut dropped = Vec::new();
    let mut n_obs = 0;
    for c in 0..ds.num_countries() {
        let id = ds.country_ids()[c].clone();
        let rows = ds.country_rows(c);
        if rows.len() < 3 {
            dropped.push((id, format!("{} observations, need 3", rows.len())));
            continue;
        }
        let x: Vec<f64> = rows.iter().map(|r| r.capital_share).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.top_share(quantile)).collect();
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        if !(sxx > 0.0) {
            dropped.push((id, "capital share has no variation".into()));
            continue;
        }
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let slope = sxy / sxx;
        let rss = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
            .sum();
        n_obs += rows.len();
        fits.push((
            id,
            UnitFit {
                slope,
                rss,
                params: 2,
                reduced: false,
            },
        ));
    }
    aggregate(fits, dropped, n_obs)
}

/// Cross-sectional means of the top share and capital share by year, over
/// the countries observed in that year.
pub fn cross_section_means(ds: &PanelDataset, quantile: Quantile) -> Vec<(i32, f64, f64)> {
    let mut acc: std::collections::BTreeMap<i32, (f64, f64, usize)> = Default::default();
    for r in ds.rows() {
        let e = acc.entry(r.year).or_default();
        e.0 += r.top_share(quantile);
        e.1 += r.capital_share;
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(y, (s, c, n))| (y, s / n as f64, c / n as f64))
        .collect()
}

/// Per-country OLS of `S` on `{CS, 1, S̄_t, C̄S_t}`, aggregated by the
/// mean-group rule. Augmentation columns that are collinear with the
/// columns before them are dropped for that country.
pub fn cce_mg(ds: &PanelDataset, quantile: Quantile) -> Result<MgResult, BaselineError> {
    let means = cross_section_means(ds, quantile);
    let lookup = |year: i32| {
        let k = means.binary_search_by_key(&year, |m| m.0).expect("year present");
        (means[k].1, means[k].2)
    };
    let mut fits = Vec::new();
    let mut dropped = Vec::new();
    let mut n_obs = 0;
    for c in 0..ds.num_countries() {
        let id = ds.country_ids()[c].clone();
        let rows = ds.country_rows(c);
        if rows.len() < 4 {
            dropped.push((id, format!("{} observations, need 4", rows.len())));
            continue;
        }
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.top_share(quantile)));
        let candidates: [Vec<f64>; 4] = [
            rows.iter().map(|r| r.capital_share).collect(),
            vec![1.0; rows.len()],
            rows.iter().map(|r| lookup(r.year).0).collect(),
            rows.iter().map(|r| lookup(r.year).1).collect(),
        ];
        let mut kept: Vec<&Vec<f64>> = Vec::new();
        for (k, col) in candidates.iter().enumerate() {
            let mut trial = kept.clone();
            trial.push(col);
            if full_rank(&trial) {
                kept = trial;
            } else if k < 2 {
                break;
            }
        }
        if kept.len() < 2 || kept[0] != &candidates[0] {
            dropped.push((id, "capital share collinear with the intercept".into()));
            continue;
        }
        let x = DMatrix::from_fn(rows.len(), kept.len(), |r, k| kept[k][r]);
        let Some(beta) = least_squares(&x, &y) else {
            dropped.push((id, "rank-deficient regression".into()));
            continue;
        };
        let rss = (&y - &x * &beta).norm_squared();
        n_obs += rows.len();
        fits.push((
            id,
            UnitFit {
                slope: beta[0],
                rss,
                params: kept.len(),
                reduced: kept.len() < 4,
            },
        ));
    }
    aggregate(fits, dropped, n_obs)
}

fn full_rank(cols: &[&Vec<f64>]) -> bool {
    let n = cols[0].len();
    if n < cols.len() {
        return false;
    }
    // Scale columns to unit norm so the rank test is scale free.
    let x = DMatrix::from_fn(n, cols.len(), |r, k| {
        let norm = cols[k].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            cols[k][r] / norm
        } else {
            0.0
        }
    });
    let sv = x.singular_values();
    sv.min() > 1e-10 * sv.max().max(f64::MIN_POSITIVE)
}

/// `dx/dy = ε · (x / y)`.
pub fn elasticity_to_marginal(elasticity: f64, x_over_y: f64) -> Result<f64, BaselineError> {
    if !(x_over_y > 0.0) {
        return Err(BaselineError::NonPositiveRatio(x_over_y));
    }
    Ok(elasticity * x_over_y)
}

/// `log(RSS/n) + k log(n) / n`. Only comparisons within one dataset are
/// meaningful.
pub fn model_bic(rss: f64, k: f64, n: usize) -> Result<f64, BaselineError> {
    if n == 0 {
        return Err(BaselineError::EmptySample);
    }
    if !(rss > 0.0) {
        return Err(BaselineError::ZeroResiduals(rss));
    }
    let n = n as f64;
    Ok((rss / n).ln() + k * n.ln() / n)
}

/// One line of the estimator comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub estimator: String,
    /// `full` or `group<k>` (1-based).
    pub sample: String,
    pub quantile: Quantile,
    pub estimate: f64,
    pub t_stat: f64,
    pub bic: f64,
}

/// Writes `estimator,sample,quantile,estimate,t_stat,bic`.
pub fn write_summary<W: Write>(rows: &[SummaryRow], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["estimator", "sample", "quantile", "estimate", "t_stat", "bic"])?;
    for r in rows {
        out.write_record([
            r.estimator.clone(),
            r.sample.clone(),
            r.quantile.to_string(),
            format!("{:.6}", r.estimate),
            format!("{:.4}", r.t_stat),
            format!("{:.4}", r.bic),
        ])?;
    }
    out.flush()?;
    Ok(())
}
