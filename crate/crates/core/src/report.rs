//! Static SVG charts of estimated curves with their pointwise bands.
//!
//! Output depends only on the input numbers and the style, so identical
//! inputs give byte-identical files.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing curve file {0}")]
    MissingFile(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("curve file: {0}")]
    Csv(#[from] csv::Error),
    #[error("curve file has no column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: cannot parse {value:?}")]
    Malformed { row: usize, value: String },
    #[error("curve needs at least 2 points, got {0}")]
    TooShort(usize),
}

/// One curve with lower and upper band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSeries {
    pub name: String,
    pub x: Vec<f64>,
    pub estimate: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Reads the `name`, `name_lo`, `name_hi` columns of a curve table written
/// by [`crate::tvc::Curves::write_csv`].
pub fn read_band<R: Read>(r: R, name: &str) -> Result<BandSeries, ReportError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |c: &str| {
        headers
            .iter()
            .position(|h| h == c)
            .ok_or_else(|| ReportError::MissingColumn(c.to_string()))
    };
    let idx = [col("tau")?, col(name)?, col(&format!("{name}_lo"))?, col(&format!("{name}_hi"))?];
    let mut cols: [Vec<f64>; 4] = Default::default();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (k, &i) in idx.iter().enumerate() {
            let v = rec.get(i).unwrap_or("");
            cols[k].push(v.trim().parse().map_err(|_| ReportError::Malformed {
                row: row + 1,
                value: v.to_string(),
            })?);
        }
    }
    let [x, estimate, lower, upper] = cols;
    if x.len() < 2 {
        return Err(ReportError::TooShort(x.len()));
    }
    Ok(BandSeries {
        name: name.to_string(),
        x,
        estimate,
        lower,
        upper,
    })
}

pub fn read_band_file(path: impl AsRef<Path>, name: &str) -> Result<BandSeries, ReportError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(ReportError::MissingFile(path.display().to_string()));
    }
    let file = std::fs::File::open(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_band(file, name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub width: f64,
    pub height: f64,
    pub margin: f64,
    pub title: String,
    /// Calendar window used to label the horizontal axis; `τ` when absent.
    pub years: Option<(i32, i32)>,
    pub line_color: String,
    pub band_color: String,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            width: 640.0,
            height: 400.0,
            margin: 56.0,
            title: String::new(),
            years: None,
            line_color: "#1f4e79".into(),
            band_color: "#9dc3e6".into(),
        }
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders one band chart.
pub fn render_svg(series: &BandSeries, style: &PlotStyle) -> String {
    let (w, h, m) = (style.width, style.height, style.margin);
    let (x0, x1) = (series.x[0], series.x[series.x.len() - 1]);
    let (y0, y1) = range(series.lower.iter().chain(&series.upper).chain(&series.estimate).copied().chain([0.0]));
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);
    let pt = |x: f64, y: f64| format!("{:.3},{:.3}", px(x), py(y));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    if !style.title.is_empty() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
            w / 2.0,
            m / 2.0,
            escape(&style.title)
        );
    }

    let band: Vec<String> = series
        .x
        .iter()
        .zip(&series.upper)
        .map(|(&x, &y)| pt(x, y))
        .chain(series.x.iter().zip(&series.lower).rev().map(|(&x, &y)| pt(x, y)))
        .collect();
    let _ = writeln!(
        svg,
        r#"<polygon class="band" fill="{}" fill-opacity="0.6" stroke="none" points="{}"/>"#,
        style.band_color,
        band.join(" ")
    );
    let line: Vec<String> = series.x.iter().zip(&series.estimate).map(|(&x, &y)| pt(x, y)).collect();
    let _ = writeln!(
        svg,
        r#"<polyline class="estimate" fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
        style.line_color,
        line.join(" ")
    );
    if y0 < 0.0 && y1 > 0.0 {
        let _ = writeln!(
            svg,
            r##"<line class="zero" x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="#808080" stroke-dasharray="4 3"/>"##,
            px(x0),
            py(0.0),
            px(x1),
            py(0.0)
        );
    }

    // Axes and ticks.
    let _ = writeln!(
        svg,
        r#"<path class="axes" fill="none" stroke="black" d="M{:.3},{:.3} V{:.3} H{:.3}"/>"#,
        m,
        m,
        h - m,
        w - m
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let label = match style.years {
            Some((a, b)) => format!("{}", (f64::from(a) + xv * f64::from(b - a)).round()),
            None => format!("{xv:.2}"),
        };
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="middle" font-family="sans-serif" font-size="11">{label}</text>"#,
            px(xv),
            h - m + 16.0
        );
        let yv = y0 + f * (y1 - y0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" text-anchor="end" font-family="sans-serif" font-size="11">{yv:.3}</text>"#,
            m - 6.0,
            py(yv) + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders and writes one chart.
pub fn write_svg(path: impl AsRef<Path>, series: &BandSeries, style: &PlotStyle) -> Result<(), ReportError> {
    let path = path.as_ref();
    std::fs::write(path, render_svg(series, style)).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}
