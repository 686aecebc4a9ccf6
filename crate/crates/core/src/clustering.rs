//! Country classification: Lloyd KMeans on standardized time-averaged
//! `(top share, capital share)` pairs, with the number of groups chosen by an
//! information criterion.
//!
//! Group labels are 0-based in memory and 1-based in CSV files.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::panel::{time_averages, PanelDataset, Quantile};

pub type Point = [f64; 2];

pub const DEFAULT_N_INIT: usize = 100;
pub const DEFAULT_G_MAX: usize = 5;
pub const DEFAULT_ZETA: f64 = 3.0;
/// Groups with fewer countries are treated as outliers and not estimated.
pub const DEFAULT_MIN_GROUP_SIZE: usize = 4;

const MAX_LLOYD_ITERATIONS: usize = 1000;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },
    #[error("feature {0} has zero variance across countries")]
    ZeroVariance(usize),
    #[error("cannot form {groups} groups from {points} points")]
    TooManyGroups { groups: usize, points: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("assignment file: {0}")]
    Csv(#[from] csv::Error),
}

/// Standard deviation convention used when standardizing features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SdConvention {
    /// Divide by `n - 1`.
    #[default]
    Sample,
    /// Divide by `n`.
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScaling {
    pub means: Point,
    pub sds: Point,
    pub convention: SdConvention,
}

impl FeatureScaling {
    pub fn apply(&self, p: Point) -> Point {
        [
            (p[0] - self.means[0]) / self.sds[0],
            (p[1] - self.means[1]) / self.sds[1],
        ]
    }
}

/// Centers and scales each feature to mean 0 and unit standard deviation.
pub fn standardize_features(
    moments: &[Point],
    convention: SdConvention,
) -> Result<(Vec<Point>, FeatureScaling), ClusterError> {
    let n = moments.len();
    if n < 2 {
        return Err(ClusterError::TooFewPoints { got: n, need: 2 });
    }
    let mut means = [0.0; 2];
    let mut sds = [0.0; 2];
    for k in 0..2 {
        let m = moments.iter().map(|p| p[k]).sum::<f64>() / n as f64;
        let ss: f64 = moments.iter().map(|p| (p[k] - m).powi(2)).sum();
        let denom = match convention {
            SdConvention::Sample => (n - 1) as f64,
            SdConvention::Population => n as f64,
        };
        let sd = (ss / denom).sqrt();
        if !(sd > f64::EPSILON * m.abs().max(1.0)) {
            return Err(ClusterError::ZeroVariance(k));
        }
        means[k] = m;
        sds[k] = sd;
    }
    let scaling = FeatureScaling {
        means,
        sds,
        convention,
    };
    Ok((moments.iter().map(|&p| scaling.apply(p)).collect(), scaling))
}

fn sq_dist(a: &Point, b: &Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// KMeans partition of a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub centers: Vec<Point>,
    /// `(1/N) Σ ||p_i - center(label_i)||²`.
    pub objective: f64,
    /// Objective after each Lloyd iteration of the winning restart.
    pub trace: Vec<f64>,
    /// Restart index that produced this partition.
    pub restart: usize,
}

impl Clustering {
    pub fn num_groups(&self) -> usize {
        self.centers.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centers.len()];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

pub fn objective(points: &[Point], labels: &[usize], centers: &[Point]) -> f64 {
    let total: f64 = points
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centers[l]))
        .sum();
    total / points.len() as f64
}

fn nearest(p: &Point, centers: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (g, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best_d {
            best_d = d;
            best = g;
        }
    }
    best
}

fn means(points: &[Point], labels: &[usize], g: usize) -> (Vec<Point>, Vec<usize>) {
    let mut sums = vec![[0.0; 2]; g];
    let mut counts = vec![0usize; g];
    for (p, &l) in points.iter().zip(labels) {
        sums[l][0] += p[0];
        sums[l][1] += p[1];
        counts[l] += 1;
    }
    let centers = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { [f64::NAN; 2] } else { [s[0] / c as f64, s[1] / c as f64] })
        .collect();
    (centers, counts)
}

/// One Lloyd run from the given starting centers.
fn lloyd_run(points: &[Point], mut centers: Vec<Point>) -> (Vec<usize>, Vec<Point>, Vec<f64>) {
    let g = centers.len();
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
    let mut trace = Vec::new();
    let mut prev_obj = f64::INFINITY;
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let (mut new_centers, mut counts) = means(points, &labels, g);
        // Reseed empty groups at the point farthest from its own center.
        while let Some(empty) = counts.iter().position(|&c| c == 0) {
            let (far, _) = points
                .iter()
                .enumerate()
                .filter(|(i, _)| counts[labels[*i]] > 1)
                .map(|(i, p)| (i, sq_dist(p, &new_centers[labels[i]])))
                .fold((usize::MAX, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if far == usize::MAX {
                break;
            }
            labels[far] = empty;
            let recomputed = means(points, &labels, g);
            new_centers = recomputed.0;
            counts = recomputed.1;
        }
        centers = new_centers;
        let obj = objective(points, &labels, &centers);
        trace.push(obj);
        // Require strict decrease so tied reassignments cannot cycle.
        if !(obj < prev_obj) {
            break;
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centers)).collect();
        if next == labels {
            break;
        }
        prev_obj = obj;
        labels = next;
    }
    (labels, centers, trace)
}

/// Relabels groups in order of their first member.
fn canonicalize(labels: &[usize], centers: &[Point]) -> (Vec<usize>, Vec<Point>) {
    let g = centers.len();
    let mut map = vec![usize::MAX; g];
    let mut next = 0;
    for &l in labels {
        if map[l] == usize::MAX {
            map[l] = next;
            next += 1;
        }
    }
    for m in map.iter_mut() {
        if *m == usize::MAX {
            *m = next;
            next += 1;
        }
    }
    let mut new_centers = vec![[0.0; 2]; g];
    for (old, &new) in map.iter().enumerate() {
        new_centers[new] = centers[old];
    }
    (labels.iter().map(|&l| map[l]).collect(), new_centers)
}

/// Lloyd KMeans with `n_init` random starts (each start samples `g` distinct
/// points as initial centers). Returns the lowest-objective run; ties go to
/// the earliest restart.
pub fn lloyd_kmeans(points: &[Point], g: usize, n_init: usize, seed: u64) -> Result<Clustering, ClusterError> {
    if points.is_empty() {
        return Err(ClusterError::TooFewPoints { got: 0, need: 1 });
    }
    if g == 0 || g > points.len() {
        return Err(ClusterError::TooManyGroups {
            groups: g,
            points: points.len(),
        });
    }
    if n_init == 0 {
        return Err(ClusterError::Invalid("n_init must be at least 1".into()));
    }
    let mut best: Option<Clustering> = None;
    for restart in 0..n_init {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let start: Vec<Point> = sample(&mut rng, points.len(), g)
            .into_iter()
            .map(|i| points[i])
            .collect();
        let (labels, centers, trace) = lloyd_run(points, start);
        let obj = objective(points, &labels, &centers);
        if best.as_ref().is_none_or(|b| obj < b.objective) {
            best = Some(Clustering {
                labels,
                centers,
                objective: obj,
                trace,
                restart,
            });
        }
    }
    let mut best = best.expect("n_init >= 1");
    let (labels, centers) = canonicalize(&best.labels, &best.centers);
    best.labels = labels;
    best.centers = centers;
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BicRow {
    pub groups: usize,
    pub fit: f64,
    pub penalty: f64,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BicTable {
    pub rows: Vec<BicRow>,
    pub selected: usize,
    pub sigma2: f64,
    pub zeta: f64,
    pub g_max: usize,
}

impl BicTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["groups", "fit", "penalty", "bic", "selected"])?;
        for r in &self.rows {
            out.write_record([
                r.groups.to_string(),
                format!("{:.12e}", r.fit),
                format!("{:.12e}", r.penalty),
                format!("{:.12e}", r.bic),
                u8::from(r.groups == self.selected).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Chooses the number of groups in `2..=g_max` by
/// `fit(G) + σ̂² · 2G · ζ · log(N) / N`, where σ̂² is taken from the `g_max`
/// solution. Ties go to the smaller `G`.
pub fn bic_select(
    points: &[Point],
    g_max: usize,
    zeta: f64,
    n_init: usize,
    seed: u64,
) -> Result<(BicTable, Clustering), ClusterError> {
    let n = points.len();
    if g_max < 2 {
        return Err(ClusterError::Invalid("g_max must be at least 2".into()));
    }
    if n <= g_max {
        return Err(ClusterError::TooFewPoints { got: n, need: g_max + 1 });
    }
    let fits: Vec<Clustering> = (2..=g_max)
        .map(|g| lloyd_kmeans(points, g, n_init, seed.wrapping_add(g as u64)))
        .collect::<Result<_, _>>()?;
    let top = fits.last().expect("g_max >= 2");
    let sigma2 = top.objective * n as f64 / (2.0 * (n - g_max) as f64);
    let log_term = zeta * (n as f64).ln() / n as f64;
    let rows: Vec<BicRow> = fits
        .iter()
        .map(|f| {
            let g = f.num_groups();
            let penalty = sigma2 * 2.0 * g as f64 * log_term;
            BicRow {
                groups: g,
                fit: f.objective,
                penalty,
                bic: f.objective + penalty,
            }
        })
        .collect();
    let mut best = 0;
    for (k, r) in rows.iter().enumerate() {
        if r.bic < rows[best].bic {
            best = k;
        }
    }
    let selected = rows[best].groups;
    Ok((
        BicTable {
            rows,
            selected,
            sigma2,
            zeta,
            g_max,
        },
        fits.into_iter().nth(best).expect("index in range"),
    ))
}

/// Country-level group membership, the hand-off between classification and
/// estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    pub country_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub num_groups: usize,
    /// Centers in standardized feature space (empty when read from a file).
    pub centers: Vec<Point>,
    pub objective: f64,
    pub feature_scaling: Option<FeatureScaling>,
}

impl GroupAssignment {
    /// Every country in one group.
    pub fn single(country_ids: Vec<String>) -> Self {
        let n = country_ids.len();
        Self {
            country_ids,
            labels: vec![0; n],
            num_groups: 1,
            centers: Vec::new(),
            objective: f64::NAN,
            feature_scaling: None,
        }
    }

    pub fn from_clustering(country_ids: Vec<String>, c: &Clustering, scaling: Option<FeatureScaling>) -> Self {
        Self {
            country_ids,
            labels: c.labels.clone(),
            num_groups: c.num_groups(),
            centers: c.centers.clone(),
            objective: c.objective,
            feature_scaling: scaling,
        }
    }

    pub fn label_of(&self, country: &str) -> Option<usize> {
        self.country_ids
            .iter()
            .position(|c| c == country)
            .map(|i| self.labels[i])
    }

    pub fn members(&self, group: usize) -> Vec<&str> {
        self.country_ids
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == group)
            .map(|(c, _)| c.as_str())
            .collect()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_groups];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Groups large enough to estimate.
    pub fn estimation_groups(&self, min_size: usize) -> Vec<usize> {
        self.group_sizes()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= min_size)
            .map(|(g, _)| g)
            .collect()
    }

    /// Writes `country,group` with 1-based groups.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["country", "group"])?;
        for (c, l) in self.country_ids.iter().zip(&self.labels) {
            out.write_record([c.clone(), (l + 1).to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, ClusterError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let mut pairs = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let country = rec.get(0).unwrap_or("").to_string();
            let group: usize = rec
                .get(1)
                .and_then(|g| g.parse().ok())
                .filter(|&g| g >= 1)
                .ok_or_else(|| ClusterError::Invalid(format!("bad group for country {country}")))?;
            pairs.push((country, group - 1));
        }
        if pairs.is_empty() {
            return Err(ClusterError::Invalid("assignment file has no rows".into()));
        }
        let num_groups = pairs.iter().map(|p| p.1).max().unwrap_or(0) + 1;
        let (country_ids, labels) = pairs.into_iter().unzip();
        Ok(Self {
            country_ids,
            labels,
            num_groups,
            centers: Vec::new(),
            objective: f64::NAN,
            feature_scaling: None,
        })
    }
}

/// Settings for the classification step.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifyConfig {
    pub quantile: Quantile,
    pub g_max: usize,
    pub zeta: f64,
    pub n_init: usize,
    pub seed: u64,
    pub sd_convention: SdConvention,
    /// Skip the criterion and use this many groups.
    pub fixed_groups: Option<usize>,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        Self {
            quantile: Quantile::Top10,
            g_max: DEFAULT_G_MAX,
            zeta: DEFAULT_ZETA,
            n_init: DEFAULT_N_INIT,
            seed: 0,
            sd_convention: SdConvention::Sample,
            fixed_groups: None,
        }
    }
}

/// Time-average, standardize and cluster the countries of a panel.
pub fn classify(ds: &PanelDataset, cfg: &ClassifyConfig) -> Result<(GroupAssignment, Option<BicTable>), ClusterError> {
    let moments: Vec<Point> = time_averages(ds, cfg.quantile)
        .into_iter()
        .map(|(s, c)| [s, c])
        .collect();
    let (points, scaling) = standardize_features(&moments, cfg.sd_convention)?;
    let ids = ds.country_ids().to_vec();
    match cfg.fixed_groups {
        Some(g) => {
            let c = lloyd_kmeans(&points, g, cfg.n_init, cfg.seed)?;
            Ok((GroupAssignment::from_clustering(ids, &c, Some(scaling)), None))
        }
        None => {
            let (table, c) = bic_select(&points, cfg.g_max, cfg.zeta, cfg.n_init, cfg.seed)?;
            Ok((GroupAssignment::from_clustering(ids, &c, Some(scaling)), Some(table)))
        }
    }
}

/// Share of units whose estimated label maps to their true label under the
/// best majority matching of estimated to true groups.
pub fn label_accuracy(estimated: &[usize], truth: &[usize]) -> f64 {
    let mut table: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&e, &t) in estimated.iter().zip(truth) {
        *table.entry((e, t)).or_default() += 1;
    }
    let mut best_per_est: BTreeMap<usize, usize> = BTreeMap::new();
    for (&(e, _), &n) in &table {
        let cur = best_per_est.entry(e).or_default();
        *cur = (*cur).max(n);
    }
    best_per_est.values().sum::<usize>() as f64 / estimated.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    /// Exhaustive optimum over all 2-partitions (first point fixed in group 0).
    fn brute_force_two(points: &[Point]) -> f64 {
        let n = points.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << (n - 1)) {
            let labels: Vec<usize> = (0..n)
                .map(|i| if i == 0 { 0 } else { ((mask >> (i - 1)) & 1) as usize })
                .collect();
            if labels.iter().all(|&l| l == 0) {
                continue;
            }
            let (centers, _) = means(points, &labels, 2);
            best = best.min(objective(points, &labels, &centers));
        }
        best
    }

    #[test]
    fn standardize_population_example() {
        let (z, s) = standardize_features(&[[0.0, 0.0], [2.0, 2.0]], SdConvention::Population).unwrap();
        assert_eq!(z, vec![[-1.0, -1.0], [1.0, 1.0]]);
        assert_eq!(s.sds, [1.0, 1.0]);
        let (z, _) = standardize_features(&[[0.0, 0.0], [2.0, 2.0]], SdConvention::Sample).unwrap();
        assert!((z[1][0] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn standardize_is_idempotent() {
        let pts = [[0.3, 1.0], [0.1, -2.0], [0.9, 0.4], [0.5, 0.5], [-0.2, 0.8]];
        let (z, _) = standardize_features(&pts, SdConvention::Sample).unwrap();
        let (zz, _) = standardize_features(&z, SdConvention::Sample).unwrap();
        for (a, b) in z.iter().zip(&zz) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn standardize_rejects_zero_variance() {
        assert!(matches!(
            standardize_features(&[[1.0, 2.0]; 4], SdConvention::Sample),
            Err(ClusterError::ZeroVariance(0))
        ));
    }

    #[test]
    fn single_group_is_the_mean() {
        let pts = [[1.0, 2.0], [3.0, 0.0], [-1.0, 1.0]];
        let c = lloyd_kmeans(&pts, 1, 5, 1).unwrap();
        assert!((c.centers[0][0] - 1.0).abs() < 1e-15);
        assert!((c.centers[0][1] - 1.0).abs() < 1e-15);
        let msd = (1.0 + 5.0 + 4.0) / 3.0;
        assert!((c.objective - msd).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(lloyd_kmeans(&[], 1, 1, 0).is_err());
        assert!(matches!(
            lloyd_kmeans(&[[0.0, 0.0]], 2, 1, 0),
            Err(ClusterError::TooManyGroups { .. })
        ));
        assert!(bic_select(&[[0.0, 0.0]; 5], 5, 3.0, 1, 0).is_err());
    }

    #[test]
    fn two_triples_match_brute_force() {
        let pts = [
            [0.0, 0.0],
            [0.1, 0.2],
            [-0.1, 0.1],
            [5.0, 5.0],
            [5.2, 4.9],
            [4.9, 5.1],
        ];
        let c = lloyd_kmeans(&pts, 2, 100, 7).unwrap();
        assert!((c.objective - brute_force_two(&pts)).abs() < 1e-12);
        assert_eq!(c.labels, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn fixed_point_invariants_and_monotone_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point> = (0..40).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        for g in 1..=5 {
            let c = lloyd_kmeans(&pts, g, 20, 11).unwrap();
            assert!(c.trace.windows(2).all(|w| w[1] <= w[0] + 1e-15));
            assert!((objective(&pts, &c.labels, &c.centers) - c.objective).abs() < 1e-12);
            let (m, counts) = means(&pts, &c.labels, g);
            assert!(counts.iter().all(|&n| n > 0));
            for (a, b) in m.iter().zip(&c.centers) {
                assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
            }
            for (p, &l) in pts.iter().zip(&c.labels) {
                assert!(sq_dist(p, &c.centers[l]) <= sq_dist(p, &c.centers[nearest(p, &c.centers)]) + 1e-15);
            }
            // canonical order: first appearance of each group label is increasing
            let mut seen = Vec::new();
            for &l in &c.labels {
                if !seen.contains(&l) {
                    seen.push(l);
                }
            }
            assert_eq!(seen, (0..g).collect::<Vec<_>>());
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Point> = (0..30).map(|_| [rng.random::<f64>(), rng.random::<f64>()]).collect();
        let a = lloyd_kmeans(&pts, 3, 50, 42).unwrap();
        let b = lloyd_kmeans(&pts, 3, 50, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn relabeling_leaves_objective_unchanged() {
        let pts = [[0.0, 0.0], [0.1, 0.0], [3.0, 3.0], [3.1, 2.9], [6.0, 0.0]];
        let c = lloyd_kmeans(&pts, 3, 30, 1).unwrap();
        let perm = [2, 0, 1];
        let labels: Vec<usize> = c.labels.iter().map(|&l| perm[l]).collect();
        let mut centers = vec![[0.0; 2]; 3];
        for g in 0..3 {
            centers[perm[g]] = c.centers[g];
        }
        assert!((objective(&pts, &labels, &centers) - c.objective).abs() < 1e-15);
    }

    #[test]
    fn identical_points_select_two_groups() {
        let pts = vec![[1.0, 2.0]; 20];
        let (table, _) = bic_select(&pts, 5, 3.0, 10, 0).unwrap();
        assert_eq!(table.selected, 2);
        assert!(table.rows.iter().all(|r| r.fit == 0.0));
        assert!(table.rows.windows(2).all(|w| w[1].penalty >= w[0].penalty));
        for r in &table.rows {
            let n = 20.0f64;
            let expected = table.sigma2 * 2.0 * r.groups as f64 * 3.0 * n.ln() / n;
            assert_eq!(r.penalty, expected);
        }
    }

    #[test]
    fn strong_penalty_recovers_three_clusters() {
        let noise = Normal::new(0.0, 1.0).unwrap();
        let centers = [[0.0, 0.0], [8.0, 0.0], [4.0, 7.0]];
        let mut correct = 0;
        for draw in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + draw);
            let pts: Vec<Point> = (0..60)
                .map(|i| {
                    let c = centers[i % 3];
                    [c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]
                })
                .collect();
            let (table, _) = bic_select(&pts, 5, 8.0, 20, draw).unwrap();
            correct += usize::from(table.selected == 3);
        }
        assert!(correct >= 95, "selected G = 3 in {correct}/100 draws");
    }

    #[test]
    fn assignment_csv_round_trip() {
        let a = GroupAssignment {
            country_ids: vec!["AT".into(), "BE".into(), "CL".into()],
            labels: vec![0, 0, 1],
            num_groups: 2,
            centers: Vec::new(),
            objective: f64::NAN,
            feature_scaling: None,
        };
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "country,group\nAT,1\nBE,1\nCL,2\n");
        let b = GroupAssignment::read_csv(buf.as_slice()).unwrap();
        assert_eq!(b.labels, a.labels);
        assert_eq!(b.country_ids, a.country_ids);
        assert_eq!(b.estimation_groups(2), vec![0]);
    }

    #[test]
    fn accuracy_under_label_permutation() {
        assert_eq!(label_accuracy(&[1, 1, 0, 0], &[0, 0, 1, 1]), 1.0);
        assert_eq!(label_accuracy(&[0, 0, 0, 1], &[0, 0, 1, 1]), 0.75);
    }
}
