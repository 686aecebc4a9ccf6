//! First-stage projection of the capital share on the profit tax rate with
//! country-specific slopes, country intercepts and year effects.
//!
//! Instead of alternating projections the year effects are obtained in one
//! step: profiling out each country's intercept and slope leaves a small
//! `years × years` system `Σ_i D_i' M_i D_i π₀ = Σ_i D_i' M_i CS_i`, where
//! `M_i` annihilates `[1, PTR_i]`. The year effects are normalized to have
//! zero observation-weighted mean.

use nalgebra::{DMatrix, DVector};

use super::TvcError;
use crate::panel::{PanelDataset, PanelRow};

/// Fewest instrument observations a country needs to enter the IV sample.
pub const MIN_INSTRUMENT_OBS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct FirstStageFit {
    /// Countries and years with an observed instrument.
    pub dataset: PanelDataset,
    /// Countries left out for having too few instrument observations.
    pub excluded: Vec<String>,
    pub slopes: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub years: Vec<i32>,
    pub year_effects: Vec<f64>,
    /// Projected capital share, aligned with `dataset.rows()`.
    pub fitted: Vec<f64>,
    pub r_squared: Vec<f64>,
    /// Joint test that all slopes are zero.
    pub f_stat: f64,
    pub f_df: (usize, usize),
}

impl FirstStageFit {
    pub fn year_effect(&self, year: i32) -> Option<f64> {
        self.years
            .binary_search(&year)
            .ok()
            .map(|k| self.year_effects[k])
    }
}

struct TwoWay {
    year_effects: Vec<f64>,
    intercepts: Vec<f64>,
    slopes: Vec<f64>,
    fitted: Vec<f64>,
}

pub fn first_stage(ds: &PanelDataset) -> Result<FirstStageFit, TvcError> {
    let mut rows: Vec<PanelRow> = Vec::new();
    let mut excluded = Vec::new();
    for c in 0..ds.num_countries() {
        let with_ptr: Vec<&PanelRow> = ds
            .country_rows(c)
            .iter()
            .filter(|r| r.profit_tax_rate.is_some())
            .collect();
        if with_ptr.len() < MIN_INSTRUMENT_OBS {
            excluded.push(ds.country_ids()[c].clone());
            continue;
        }
        rows.extend(with_ptr.into_iter().cloned());
    }
    if rows.is_empty() {
        return Err(TvcError::InsufficientInstrument(format!(
            "no country has {MIN_INSTRUMENT_OBS} or more profit tax observations"
        )));
    }
    let iv = PanelDataset::from_rows(ds.country_ids().to_vec(), rows)
        .map_err(|e| TvcError::Invalid(e.to_string()))?;
    for c in 0..iv.num_countries() {
        let p: Vec<f64> = iv.country_rows(c).iter().map(ptr).collect();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        if p.iter().all(|&v| (v - mean).abs() <= 1e-12 * mean.abs().max(1.0)) {
            return Err(TvcError::ZeroInstrumentVariance(iv.country_ids()[c].clone()));
        }
    }

    let mut years: Vec<i32> = iv.rows().iter().map(|r| r.year).collect();
    years.sort_unstable();
    years.dedup();
    let cs: Vec<f64> = iv.rows().iter().map(|r| r.capital_share).collect();
    let full = two_way(&iv, &years, &cs, true)?;
    let restricted = two_way(&iv, &years, &cs, false)?;

    let ssr = |fitted: &[f64]| -> f64 { cs.iter().zip(fitted).map(|(y, f)| (y - f).powi(2)).sum() };
    let r_squared = (0..iv.num_countries())
        .map(|c| {
            let span = iv.country_span(c);
            let y = &cs[span.clone()];
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            let sst: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
            let sse: f64 = span.map(|r| (cs[r] - full.fitted[r]).powi(2)).sum();
            if sst > 0.0 {
                1.0 - sse / sst
            } else {
                f64::NAN
            }
        })
        .collect();
    let n = iv.len();
    let n_c = iv.num_countries();
    let df1 = n_c;
    let df2 = n.saturating_sub(2 * n_c + years.len() - 1);
    let (ssr_f, ssr_r) = (ssr(&full.fitted), ssr(&restricted.fitted));
    let f_stat = if df2 > 0 && ssr_f > 0.0 {
        ((ssr_r - ssr_f) / df1 as f64) / (ssr_f / df2 as f64)
    } else {
        f64::INFINITY
    };

    Ok(FirstStageFit {
        dataset: iv,
        excluded,
        slopes: full.slopes,
        intercepts: full.intercepts,
        years,
        year_effects: full.year_effects,
        fitted: full.fitted,
        r_squared,
        f_stat,
        f_df: (df1, df2),
    })
}

fn ptr(r: &PanelRow) -> f64 {
    r.profit_tax_rate.unwrap_or(f64::NAN)
}

/// Country regressors: intercept, plus the instrument when `slopes` is set.
fn regressors(rows: &[PanelRow], slopes: bool) -> DMatrix<f64> {
    let k = if slopes { 2 } else { 1 };
    DMatrix::from_fn(rows.len(), k, |r, c| if c == 0 { 1.0 } else { ptr(&rows[r]) })
}

fn two_way(ds: &PanelDataset, years: &[i32], y: &[f64], slopes: bool) -> Result<TwoWay, TvcError> {
    let ny = years.len();
    let year_idx = |yr: i32| years.binary_search(&yr).expect("year collected from the same rows");
    let mut k = DMatrix::<f64>::zeros(ny, ny);
    let mut rhs = DVector::<f64>::zeros(ny);
    let mut counts = vec![0.0; ny];
    for c in 0..ds.num_countries() {
        let rows = ds.country_rows(c);
        let q = regressors(rows, slopes);
        let qtq_inv = (q.transpose() * &q)
            .try_inverse()
            .ok_or_else(|| TvcError::ZeroInstrumentVariance(ds.country_ids()[c].clone()))?;
        let m = DMatrix::identity(rows.len(), rows.len()) - &q * qtq_inv * q.transpose();
        let yi = DVector::from_iterator(rows.len(), ds.country_span(c).map(|r| y[r]));
        let my = &m * yi;
        let idx: Vec<usize> = rows.iter().map(|r| year_idx(r.year)).collect();
        for (a, &ya) in idx.iter().enumerate() {
            counts[ya] += 1.0;
            rhs[ya] += my[a];
            for (b, &yb) in idx.iter().enumerate() {
                k[(ya, yb)] += m[(a, b)];
            }
        }
    }
    let total: f64 = counts.iter().sum();
    let w = DVector::from_iterator(ny, counts.iter().map(|c| c / total));
    let system = &k + &w * w.transpose();
    let effects = match system.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => {
            let svd = system.svd(true, true);
            let tol = 1e-12 * svd.singular_values.max();
            svd.solve(&rhs, tol).map_err(|e| TvcError::Invalid(e.to_string()))?
        }
    };

    let mut intercepts = Vec::with_capacity(ds.num_countries());
    let mut slope_out = Vec::with_capacity(ds.num_countries());
    let mut fitted = vec![0.0; ds.len()];
    for c in 0..ds.num_countries() {
        let rows = ds.country_rows(c);
        let q = regressors(rows, slopes);
        let span = ds.country_span(c);
        let target = DVector::from_iterator(
            rows.len(),
            span.clone().zip(rows).map(|(r, row)| y[r] - effects[year_idx(row.year)]),
        );
        let coef = (q.transpose() * &q)
            .try_inverse()
            .map(|inv| inv * q.transpose() * target)
            .ok_or_else(|| TvcError::ZeroInstrumentVariance(ds.country_ids()[c].clone()))?;
        let b1 = if slopes { coef[1] } else { 0.0 };
        intercepts.push(coef[0]);
        slope_out.push(b1);
        for (r, row) in span.zip(rows) {
            fitted[r] = coef[0] + b1 * ptr(row) + effects[year_idx(row.year)];
        }
    }
    Ok(TwoWay {
        year_effects: effects.iter().copied().collect(),
        intercepts,
        slopes: slope_out,
        fitted,
    })
}
