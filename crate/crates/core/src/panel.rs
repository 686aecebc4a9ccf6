//! Unbalanced country-year panel of top income shares, capital shares and the
//! profit tax rate instrument.
//!
//! Rows are stored country-major (countries in order of first appearance in the
//! input) and year-ascending within each country. That order is relied on by
//! every estimator downstream.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Read;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

/// Default minimum number of yearly observations a country needs to be kept.
pub const DEFAULT_MIN_OBS: usize = 10;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header is missing column `{0}`")]
    MissingColumn(String),
    #[error("no parsable rows")]
    NoParsableRows,
    #[error("row {row}: malformed value {value:?} in column `{column}`")]
    Malformed {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: duplicate (country, year) = ({country}, {year}), first seen at row {first_row}")]
    Duplicate {
        row: usize,
        first_row: usize,
        country: String,
        year: i32,
    },
    #[error("dataset is empty after filtering ({rejected} rows rejected, {dropped} countries below min_obs)")]
    EmptyAfterFiltering { rejected: usize, dropped: usize },
    #[error("year {year} outside window ({min}, {max})")]
    YearOutsideWindow { year: i32, min: i32, max: i32 },
    #[error("degenerate window ({0}, {1})")]
    DegenerateWindow(i32, i32),
    #[error("unknown quantile `{0}` (expected top10, top5 or top1)")]
    UnknownQuantile(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

/// Top income share quantile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantile {
    Top10,
    Top5,
    Top1,
}

impl Quantile {
    pub const ALL: [Quantile; 3] = [Quantile::Top10, Quantile::Top5, Quantile::Top1];

    pub fn as_str(self) -> &'static str {
        match self {
            Quantile::Top10 => "top10",
            Quantile::Top5 => "top5",
            Quantile::Top1 => "top1",
        }
    }
}

impl fmt::Display for Quantile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Quantile {
    type Err = PanelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "top10" | "10" => Ok(Quantile::Top10),
            "top5" | "5" => Ok(Quantile::Top5),
            "top1" | "1" => Ok(Quantile::Top1),
            other => Err(PanelError::UnknownQuantile(other.to_string())),
        }
    }
}

/// One country-year record.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    /// Index into [`PanelDataset::country_ids`].
    pub country: usize,
    pub year: i32,
    pub top10: f64,
    pub top5: f64,
    pub top1: f64,
    pub capital_share: f64,
    pub profit_tax_rate: Option<f64>,
}

impl PanelRow {
    pub fn top_share(&self, q: Quantile) -> f64 {
        match q {
            Quantile::Top10 => self.top10,
            Quantile::Top5 => self.top5,
            Quantile::Top1 => self.top1,
        }
    }

    /// Returns the reason the row violates a row-level invariant, if any.
    fn violation(&self) -> Option<String> {
        let (t10, t5, t1) = (self.top10, self.top5, self.top1);
        if !(t1 > 0.0 && t1 <= t5 && t5 <= t10 && t10 < 1.0) {
            return Some(format!(
                "top shares must satisfy 0 < top1 <= top5 <= top10 < 1 (got {t1}, {t5}, {t10})"
            ));
        }
        if !(self.capital_share > 0.0 && self.capital_share < 1.0) {
            return Some(format!(
                "capital_share must lie in (0, 1) (got {})",
                self.capital_share
            ));
        }
        if let Some(p) = self.profit_tax_rate {
            if !(0.0..=1.0).contains(&p) {
                return Some(format!("profit_tax_rate must lie in [0, 1] (got {p})"));
            }
        }
        None
    }
}

/// Validated, immutable panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    country_ids: Vec<String>,
    rows: Vec<PanelRow>,
    spans: Vec<Range<usize>>,
    window: (i32, i32),
}

impl PanelDataset {
    /// Builds a dataset from rows whose `country` fields index `country_ids`.
    ///
    /// Rows are re-sorted into country-major, year-ascending order. Countries
    /// without rows are removed and the remaining indices are compacted.
    pub fn from_rows(country_ids: Vec<String>, mut rows: Vec<PanelRow>) -> Result<Self, PanelError> {
        if rows.is_empty() {
            return Err(PanelError::NoParsableRows);
        }
        for r in &rows {
            if r.country >= country_ids.len() {
                return Err(PanelError::Invalid(format!(
                    "row references unknown country index {}",
                    r.country
                )));
            }
            if let Some(reason) = r.violation() {
                return Err(PanelError::Invalid(format!(
                    "{} {}: {reason}",
                    country_ids[r.country], r.year
                )));
            }
        }
        rows.sort_by_key(|r| (r.country, r.year));
        for w in rows.windows(2) {
            if w[0].country == w[1].country && w[0].year == w[1].year {
                return Err(PanelError::Invalid(format!(
                    "duplicate (country, year) = ({}, {})",
                    country_ids[w[0].country], w[0].year
                )));
            }
        }

        // Compact country indices to those that actually have rows.
        let mut remap = vec![usize::MAX; country_ids.len()];
        let mut kept = Vec::new();
        for r in &rows {
            if remap[r.country] == usize::MAX {
                remap[r.country] = kept.len();
                kept.push(country_ids[r.country].clone());
            }
        }
        for r in &mut rows {
            r.country = remap[r.country];
        }

        let mut spans = Vec::with_capacity(kept.len());
        let mut start = 0;
        for i in 1..=rows.len() {
            if i == rows.len() || rows[i].country != rows[start].country {
                spans.push(start..i);
                start = i;
            }
        }
        let year_min = rows.iter().map(|r| r.year).min().unwrap_or(0);
        let year_max = rows.iter().map(|r| r.year).max().unwrap_or(0);

        Ok(Self {
            country_ids: kept,
            rows,
            spans,
            window: (year_min, year_max),
        })
    }

    pub fn country_ids(&self) -> &[String] {
        &self.country_ids
    }

    pub fn num_countries(&self) -> usize {
        self.country_ids.len()
    }

    pub fn rows(&self) -> &[PanelRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Global sample window `(year_min, year_max)`.
    pub fn window(&self) -> (i32, i32) {
        self.window
    }

    /// Row range of country `i`.
    pub fn country_span(&self, i: usize) -> Range<usize> {
        self.spans[i].clone()
    }

    pub fn country_rows(&self, i: usize) -> &[PanelRow] {
        &self.rows[self.spans[i].clone()]
    }

    pub fn country_index(&self, id: &str) -> Option<usize> {
        self.country_ids.iter().position(|c| c == id)
    }

    pub fn row_index(&self, country: usize, year: i32) -> Option<usize> {
        let span = self.spans.get(country)?.clone();
        let start = span.start;
        self.rows[span]
            .binary_search_by_key(&year, |r| r.year)
            .ok()
            .map(|k| start + k)
    }

    /// Normalized time of a row on the global window.
    pub fn tau(&self, row: &PanelRow) -> f64 {
        normalize_time(row.year, self.window)
            .map(|t| t.value())
            .unwrap_or(0.0)
    }

    /// Sub-panel restricted to the given countries (by index), preserving
    /// their relative order.
    pub fn subset_countries(&self, countries: &[usize]) -> Result<Self, PanelError> {
        let ids: Vec<String> = countries.iter().map(|&c| self.country_ids[c].clone()).collect();
        let mut rows = Vec::new();
        for (new, &c) in countries.iter().enumerate() {
            for r in self.country_rows(c) {
                rows.push(PanelRow { country: new, ..r.clone() });
            }
        }
        let mut sub = Self::from_rows(ids, rows)?;
        sub.window = self.window;
        Ok(sub)
    }
}

/// Column mapping and filtering rules for CSV ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaConfig {
    pub country: String,
    pub year: String,
    pub top10: String,
    pub top5: String,
    pub top1: String,
    pub capital_share: String,
    pub profit_tax_rate: String,
    pub min_obs: usize,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            country: "country".into(),
            year: "year".into(),
            top10: "top10".into(),
            top5: "top5".into(),
            top1: "top1".into(),
            capital_share: "capital_share".into(),
            profit_tax_rate: "profit_tax_rate".into(),
            min_obs: DEFAULT_MIN_OBS,
        }
    }
}

/// Why a data row was not retained. `row` is the 1-based data row number
/// (the header is not counted).
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub row: usize,
    pub kind: RejectionKind,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectionKind {
    /// Unparsable field. Fatal for [`load_csv`].
    Malformed { column: String, value: String },
    /// Repeated (country, year). Fatal for [`load_csv`].
    Duplicate {
        first_row: usize,
        country: String,
        year: i32,
    },
    /// Row-level invariant violated; the row is skipped.
    Invariant,
    /// Country fell below `min_obs`; its rows are skipped.
    BelowMinObs,
}

impl RejectionKind {
    pub fn is_fatal(&self) -> bool {
        matches!(self, RejectionKind::Malformed { .. } | RejectionKind::Duplicate { .. })
    }
}

/// Outcome of scanning a CSV: every data row ends up either in `rows` or in
/// `rejections`.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub total_rows: usize,
    pub country_ids: Vec<String>,
    pub rows: Vec<PanelRow>,
    pub rejections: Vec<Rejection>,
    /// Countries removed for having fewer than `min_obs` valid rows, with
    /// their row counts.
    pub dropped_countries: Vec<(String, usize)>,
}

impl ValidationReport {
    pub fn fatal(&self) -> Option<&Rejection> {
        self.rejections.iter().find(|r| r.kind.is_fatal())
    }

    /// Writes the rejection report as `row,reason`.
    pub fn write_rejections<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["row", "reason"])?;
        for r in &self.rejections {
            out.write_record([r.row.to_string(), r.reason.clone()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Result of a successful load.
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub dataset: PanelDataset,
    pub rejections: Vec<Rejection>,
    pub dropped_countries: Vec<(String, usize)>,
}

fn col_index(headers: &csv::StringRecord, name: &str) -> Result<usize, PanelError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| PanelError::MissingColumn(name.to_string()))
}

/// Scans CSV input without failing on data problems. Only I/O and header
/// errors are returned as `Err`.
pub fn validate_reader<R: Read>(reader: R, schema: &SchemaConfig) -> Result<ValidationReport, PanelError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.clone(),
        Ok(_) => return Err(PanelError::NoParsableRows),
        Err(e) => return Err(PanelError::Csv(e)),
    };
    let idx = [
        col_index(&headers, &schema.country)?,
        col_index(&headers, &schema.year)?,
        col_index(&headers, &schema.top10)?,
        col_index(&headers, &schema.top5)?,
        col_index(&headers, &schema.top1)?,
        col_index(&headers, &schema.capital_share)?,
        col_index(&headers, &schema.profit_tax_rate)?,
    ];
    let names = [
        &schema.country,
        &schema.year,
        &schema.top10,
        &schema.top5,
        &schema.top1,
        &schema.capital_share,
        &schema.profit_tax_rate,
    ];

    let mut country_ids: Vec<String> = Vec::new();
    let mut country_lookup: HashMap<String, usize> = HashMap::new();
    let mut seen: HashMap<(usize, i32), usize> = HashMap::new();
    let mut accepted: Vec<(usize, PanelRow)> = Vec::new();
    let mut rejections = Vec::new();
    let mut total_rows = 0;

    for (k, record) in rdr.records().enumerate() {
        let row_no = k + 1;
        total_rows += 1;
        let record = record?;
        let field = |j: usize| record.get(idx[j]).unwrap_or("").trim().to_string();
        let malformed = |j: usize, value: String| Rejection {
            row: row_no,
            reason: format!("malformed value {value:?} in column `{}`", names[j]),
            kind: RejectionKind::Malformed {
                column: names[j].to_string(),
                value,
            },
        };

        let country = field(0);
        if country.is_empty() {
            rejections.push(malformed(0, country));
            continue;
        }
        let year = match field(1).parse::<i32>() {
            Ok(y) => y,
            Err(_) => {
                rejections.push(malformed(1, field(1)));
                continue;
            }
        };
        let mut values = [0.0f64; 4];
        let mut bad = None;
        for (slot, j) in (2..6).enumerate() {
            match field(j).parse::<f64>() {
                Ok(v) if v.is_finite() => values[slot] = v,
                _ => {
                    bad = Some(j);
                    break;
                }
            }
        }
        if let Some(j) = bad {
            rejections.push(malformed(j, field(j)));
            continue;
        }
        let ptr_raw = field(6);
        let profit_tax_rate = if ptr_raw.is_empty() {
            None
        } else {
            match ptr_raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Some(v),
                _ => {
                    rejections.push(malformed(6, ptr_raw));
                    continue;
                }
            }
        };

        let c = *country_lookup.entry(country.clone()).or_insert_with(|| {
            country_ids.push(country.clone());
            country_ids.len() - 1
        });
        if let Some(&first_row) = seen.get(&(c, year)) {
            rejections.push(Rejection {
                row: row_no,
                reason: format!(
                    "duplicate (country, year) = ({country}, {year}), first seen at row {first_row}"
                ),
                kind: RejectionKind::Duplicate {
                    first_row,
                    country: country.clone(),
                    year,
                },
            });
            continue;
        }
        seen.insert((c, year), row_no);

        let row = PanelRow {
            country: c,
            year,
            top10: values[0],
            top5: values[1],
            top1: values[2],
            capital_share: values[3],
            profit_tax_rate,
        };
        if let Some(reason) = row.violation() {
            rejections.push(Rejection {
                row: row_no,
                kind: RejectionKind::Invariant,
                reason,
            });
            continue;
        }
        accepted.push((row_no, row));
    }

    // min_obs filter
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, r) in &accepted {
        *counts.entry(r.country).or_default() += 1;
    }
    let mut dropped_countries = Vec::new();
    for (c, id) in country_ids.iter().enumerate() {
        let n = counts.get(&c).copied().unwrap_or(0);
        if n > 0 && n < schema.min_obs {
            dropped_countries.push((id.clone(), n));
        }
    }
    let mut rows = Vec::with_capacity(accepted.len());
    for (row_no, r) in accepted {
        let n = counts[&r.country];
        if n < schema.min_obs {
            rejections.push(Rejection {
                row: row_no,
                kind: RejectionKind::BelowMinObs,
                reason: format!(
                    "country {} has {n} valid rows, below min_obs = {}",
                    country_ids[r.country], schema.min_obs
                ),
            });
        } else {
            rows.push(r);
        }
    }
    rejections.sort_by_key(|r| r.row);

    Ok(ValidationReport {
        total_rows,
        country_ids,
        rows,
        rejections,
        dropped_countries,
    })
}

pub fn validate_csv(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<ValidationReport, PanelError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| PanelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    validate_reader(file, schema)
}

/// Turns a validation report into a dataset, failing on the first fatal row.
pub fn finish_load(report: ValidationReport) -> Result<LoadReport, PanelError> {
    if report.total_rows == 0 {
        return Err(PanelError::NoParsableRows);
    }
    if let Some(fatal) = report.fatal() {
        return Err(match &fatal.kind {
            RejectionKind::Duplicate {
                first_row,
                country,
                year,
            } => PanelError::Duplicate {
                row: fatal.row,
                first_row: *first_row,
                country: country.clone(),
                year: *year,
            },
            RejectionKind::Malformed { column, value } => PanelError::Malformed {
                row: fatal.row,
                column: column.clone(),
                value: value.clone(),
            },
            _ => unreachable!("only malformed and duplicate rows are fatal"),
        });
    }
    if report.rows.is_empty() {
        let rejected = report.rejections.len();
        if report.rejections.iter().all(|r| r.kind == RejectionKind::Invariant) && rejected == report.total_rows {
            return Err(PanelError::NoParsableRows);
        }
        return Err(PanelError::EmptyAfterFiltering {
            rejected,
            dropped: report.dropped_countries.len(),
        });
    }
    let dataset = PanelDataset::from_rows(report.country_ids, report.rows)?;
    Ok(LoadReport {
        dataset,
        rejections: report.rejections,
        dropped_countries: report.dropped_countries,
    })
}

/// Loads and validates a panel CSV.
pub fn load_csv(path: impl AsRef<Path>, schema: &SchemaConfig) -> Result<LoadReport, PanelError> {
    finish_load(validate_csv(path, schema)?)
}

pub fn load_reader<R: Read>(reader: R, schema: &SchemaConfig) -> Result<LoadReport, PanelError> {
    finish_load(validate_reader(reader, schema)?)
}

/// Writes a dataset in the default column layout.
pub fn write_csv<W: std::io::Write>(ds: &PanelDataset, w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["country", "year", "top10", "top5", "top1", "capital_share", "profit_tax_rate"])?;
    for r in ds.rows() {
        out.write_record([
            ds.country_ids()[r.country].clone(),
            r.year.to_string(),
            r.top10.to_string(),
            r.top5.to_string(),
            r.top1.to_string(),
            r.capital_share.to_string(),
            r.profit_tax_rate.map(|p| p.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Calendar year mapped onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct NormalizedTime(f64);

impl NormalizedTime {
    pub fn new(tau: f64) -> Option<Self> {
        (0.0..=1.0).contains(&tau).then_some(Self(tau))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn normalize_time(year: i32, window: (i32, i32)) -> Result<NormalizedTime, PanelError> {
    let (lo, hi) = window;
    if lo >= hi {
        return Err(PanelError::DegenerateWindow(lo, hi));
    }
    if year < lo || year > hi {
        return Err(PanelError::YearOutsideWindow { year, min: lo, max: hi });
    }
    Ok(NormalizedTime(f64::from(year - lo) / f64::from(hi - lo)))
}

/// Per-country time averages `(mean top share, mean capital share)`, in
/// `country_ids` order.
pub fn time_averages(ds: &PanelDataset, quantile: Quantile) -> Vec<(f64, f64)> {
    (0..ds.num_countries())
        .map(|i| {
            let rows = ds.country_rows(i);
            let n = rows.len() as f64;
            let s: f64 = rows.iter().map(|r| r.top_share(quantile)).sum();
            let c: f64 = rows.iter().map(|r| r.capital_share).sum();
            (s / n, c / n)
        })
        .collect()
}

/// Series demeaned within each unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Demeaned {
    pub values: Vec<Vec<f64>>,
    pub means: Vec<f64>,
}

impl Demeaned {
    pub fn restore(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .zip(&self.means)
            .map(|(v, m)| v.iter().map(|x| x + m).collect())
            .collect()
    }
}

/// Subtracts each unit's mean from its series. Every series must be non-empty.
pub fn within_demean(series: &[Vec<f64>]) -> Result<Demeaned, PanelError> {
    let mut values = Vec::with_capacity(series.len());
    let mut means = Vec::with_capacity(series.len());
    for (i, s) in series.iter().enumerate() {
        if s.is_empty() {
            return Err(PanelError::Invalid(format!("unit {i} has no observations")));
        }
        let m = s.iter().sum::<f64>() / s.len() as f64;
        values.push(s.iter().map(|x| x - m).collect());
        means.push(m);
    }
    Ok(Demeaned { values, means })
}
