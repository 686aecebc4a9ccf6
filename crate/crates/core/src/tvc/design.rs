//! Stacked per-group regression tables.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::TvcError;
use crate::clustering::GroupAssignment;
use crate::panel::{PanelDataset, Quantile};
use crate::splines::CenteredBasis;

/// Regression table of one group.
///
/// Rows are stacked country-major, year-ascending in the order the countries
/// appear in the dataset. Columns `0..J` hold the centered basis (the ω
/// block) and columns `J..2J` hold `x · B(τ)` (the δ block), where `x` is the
/// capital share or its first-stage projection.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDesign {
    /// 0-based group label.
    pub group: usize,
    pub country_ids: Vec<String>,
    /// Ranges of stacked rows belonging to each country.
    pub spans: Vec<Range<usize>>,
    /// Dataset row index of every stacked row.
    pub source_rows: Vec<usize>,
    pub years: Vec<i32>,
    pub tau: Vec<f64>,
    pub regressor: Vec<f64>,
    pub response: Vec<f64>,
    pub num_basis: usize,
    /// Raw regressor rows.
    pub x: DMatrix<f64>,
    /// Within-country demeaned regressor rows.
    pub x_tilde: DMatrix<f64>,
    /// Within-country demeaned response.
    pub s_tilde: DVector<f64>,
}

impl GroupDesign {
    pub fn n_obs(&self) -> usize {
        self.response.len()
    }

    pub fn num_countries(&self) -> usize {
        self.spans.len()
    }

    pub fn num_columns(&self) -> usize {
        2 * self.num_basis
    }

    /// Column means of the raw regressor rows of country `c`.
    pub fn x_mean(&self, c: usize) -> DVector<f64> {
        let span = self.spans[c].clone();
        let len = span.len() as f64;
        let mut m = DVector::zeros(self.num_columns());
        for r in span {
            for j in 0..self.num_columns() {
                m[j] += self.x[(r, j)];
            }
        }
        m / len
    }

    pub fn response_mean(&self, c: usize) -> f64 {
        let span = self.spans[c].clone();
        let len = span.len() as f64;
        self.response[span].iter().sum::<f64>() / len
    }
}

/// All estimable groups of a panel plus the groups left out for being too
/// small.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSet {
    pub groups: Vec<GroupDesign>,
    /// `(group, number of countries)` of skipped groups.
    pub skipped: Vec<(usize, usize)>,
}

/// Builds the design with the observed capital share as regressor.
pub fn assemble_design(
    ds: &PanelDataset,
    basis: &CenteredBasis,
    assignment: &GroupAssignment,
    quantile: Quantile,
    min_group_size: usize,
) -> Result<DesignSet, TvcError> {
    let cs: Vec<f64> = ds.rows().iter().map(|r| r.capital_share).collect();
    assemble_design_with(ds, &cs, basis, assignment, quantile, min_group_size)
}

/// Builds the design with an arbitrary regressor aligned with `ds.rows()`.
pub fn assemble_design_with(
    ds: &PanelDataset,
    regressor: &[f64],
    basis: &CenteredBasis,
    assignment: &GroupAssignment,
    quantile: Quantile,
    min_group_size: usize,
) -> Result<DesignSet, TvcError> {
    if regressor.len() != ds.len() {
        return Err(TvcError::Invalid(format!(
            "regressor has {} values for {} rows",
            regressor.len(),
            ds.len()
        )));
    }
    let mut labels = Vec::with_capacity(ds.num_countries());
    for id in ds.country_ids() {
        labels.push(
            assignment
                .label_of(id)
                .ok_or_else(|| TvcError::MissingCountry(id.clone()))?,
        );
    }
    let num_groups = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups = Vec::new();
    let mut skipped = Vec::new();
    for g in 0..num_groups {
        let members: Vec<usize> = (0..labels.len()).filter(|&c| labels[c] == g).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < min_group_size {
            skipped.push((g, members.len()));
            continue;
        }
        groups.push(build_group(ds, regressor, basis, quantile, g, &members));
    }
    if groups.is_empty() {
        return Err(TvcError::NoEstimableGroup);
    }
    Ok(DesignSet { groups, skipped })
}

fn build_group(
    ds: &PanelDataset,
    regressor: &[f64],
    basis: &CenteredBasis,
    quantile: Quantile,
    group: usize,
    members: &[usize],
) -> GroupDesign {
    let j = basis.basis.num_basis();
    let n: usize = members.iter().map(|&c| ds.country_span(c).len()).sum();
    let mut x = DMatrix::zeros(n, 2 * j);
    let mut spans = Vec::with_capacity(members.len());
    let mut source_rows = Vec::with_capacity(n);
    let (mut years, mut tau, mut reg, mut resp) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    let mut raw = vec![0.0; j];
    let mut k = 0;
    for &c in members {
        let start = k;
        for idx in ds.country_span(c) {
            let row = &ds.rows()[idx];
            let t = ds.tau(row);
            basis.basis.evaluate_into(t, &mut raw);
            for b in 0..j {
                x[(k, b)] = raw[b] - basis.offsets[b];
                x[(k, j + b)] = regressor[idx] * raw[b];
            }
            source_rows.push(idx);
            years.push(row.year);
            tau.push(t);
            reg.push(regressor[idx]);
            resp.push(row.top_share(quantile));
            k += 1;
        }
        spans.push(start..k);
    }
    let mut x_tilde = x.clone();
    let mut s_tilde = DVector::from_vec(resp.clone());
    for span in &spans {
        let len = span.len() as f64;
        for col in 0..2 * j {
            let mean = span.clone().map(|r| x[(r, col)]).sum::<f64>() / len;
            for r in span.clone() {
                x_tilde[(r, col)] -= mean;
            }
        }
        let mean = resp[span.clone()].iter().sum::<f64>() / len;
        for r in span.clone() {
            s_tilde[r] -= mean;
        }
    }
    GroupDesign {
        group,
        country_ids: members.iter().map(|&c| ds.country_ids()[c].clone()).collect(),
        spans,
        source_rows,
        years,
        tau,
        regressor: reg,
        response: resp,
        num_basis: j,
        x,
        x_tilde,
        s_tilde,
    }
}
