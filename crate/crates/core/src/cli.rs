//! Command-line driver: ingest, classify, estimate, decompose and report.
//!
//! Every run writes `manifest_<command>.txt` into the output directory. The
//! manifest is itself a valid `--config` file, so a run can be repeated
//! exactly from it.

use std::ffi::OsString;
use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::baselines::{cce_mg, mg_ols, model_bic, write_summary, BaselineError, MgResult, SummaryRow};
use crate::clustering::{
    classify, ClassifyConfig, ClusterError, GroupAssignment, SdConvention, DEFAULT_G_MAX, DEFAULT_MIN_GROUP_SIZE,
    DEFAULT_N_INIT, DEFAULT_ZETA,
};
use crate::config::{invalid, ConfigError, KeyValues};
use crate::panel::{finish_load, validate_csv, write_csv, PanelDataset, PanelError, Quantile, SchemaConfig, DEFAULT_MIN_OBS};
use crate::report::{read_band_file, write_svg, PlotStyle, ReportError};
use crate::shapley::{decompose, summarize_proportions, ContributionMode, ShapleyError, ShapleyMode};
use crate::simulate::{delta_rmise, generate, replicate_study, DgpError, DgpSpec, StudyConfig};
use crate::splines::{DEFAULT_DEGREE, DEFAULT_NUM_BASIS, DEFAULT_PENALTY_ORDER};
use crate::tvc::{
    fit_tvc, fit_tvc_iv, AverageEffect, PsiGrid, TvcConfig, TvcError, TvcFit, DEFAULT_CENTERING_POINTS,
    DEFAULT_CURVE_POINTS,
};

/// Error category, printed on the first line of a failed run and mapped to
/// the exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Data,
    Config,
    Numeric,
    Io,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Data => 2,
            Category::Config => 3,
            Category::Numeric => 4,
            Category::Io => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Data => "data-error",
            Category::Config => "config-error",
            Category::Numeric => "numeric-error",
            Category::Io => "io-error",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
#[error("{category}: {message}")]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    pub fn new(category: Category, message: impl fmt::Display) -> Self {
        Self {
            category,
            message: message.to_string(),
        }
    }
}

impl From<PanelError> for CliError {
    fn from(e: PanelError) -> Self {
        let c = match e {
            PanelError::Io { .. } => Category::Io,
            PanelError::UnknownQuantile(_) => Category::Config,
            _ => Category::Data,
        };
        Self::new(c, e)
    }
}

impl From<ClusterError> for CliError {
    fn from(e: ClusterError) -> Self {
        let c = match e {
            ClusterError::TooManyGroups { .. } | ClusterError::Invalid(_) => Category::Config,
            _ => Category::Data,
        };
        Self::new(c, e)
    }
}

impl From<TvcError> for CliError {
    fn from(e: TvcError) -> Self {
        use TvcError::*;
        let c = match e {
            MissingCountry(_)
            | NoEstimableGroup
            | TooFewObservations { .. }
            | InsufficientInstrument(_)
            | ZeroInstrumentVariance(_) => Category::Data,
            NegativePenalty(_) | EmptyGrid | NegativeBandwidth(_) | Spline(_) | Invalid(_) => Category::Config,
            Singular { .. } | AllCandidatesSingular | NonPositiveVariance { .. } => Category::Numeric,
        };
        Self::new(c, e)
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        let c = match e {
            BaselineError::TooFewCountries(_) | BaselineError::EmptySample => Category::Data,
            _ => Category::Numeric,
        };
        Self::new(c, e)
    }
}

impl From<ShapleyError> for CliError {
    fn from(e: ShapleyError) -> Self {
        Self::new(Category::Data, e)
    }
}

impl From<DgpError> for CliError {
    fn from(e: DgpError) -> Self {
        match e {
            DgpError::Config(c) => c.into(),
            DgpError::Panel(p) => p.into(),
            DgpError::OutOfRange { .. } => Self::new(Category::Numeric, e),
            DgpError::Invalid(_) => Self::new(Category::Config, e),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        let c = match e {
            ConfigError::Io { .. } => Category::Io,
            _ => Category::Config,
        };
        Self::new(c, e)
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        let c = match e {
            ReportError::MissingFile(_) | ReportError::Io { .. } => Category::Io,
            _ => Category::Data,
        };
        Self::new(c, e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        let c = if e.is_io_error() { Category::Io } else { Category::Data };
        Self::new(c, e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(Category::Io, e)
    }
}

/// Every setting of a run. Defaults match the library defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub quantile: Quantile,
    pub num_basis: usize,
    pub degree: usize,
    pub penalty_order: usize,
    pub psi_lower: f64,
    pub psi_upper: f64,
    pub psi_points: usize,
    pub psi_refine: bool,
    pub g_max: usize,
    pub zeta: f64,
    pub n_init: usize,
    /// Fixed number of groups; `None` selects it by the information criterion.
    pub groups: Option<usize>,
    pub sd: SdConvention,
    pub seed: u64,
    pub min_group_size: usize,
    pub min_obs: usize,
    pub iv: bool,
    pub shapley_mode: ShapleyMode,
    pub contribution: ContributionMode,
    pub curve_points: usize,
    pub centering_points: usize,
    pub out: PathBuf,
    /// Group assignment CSV (`country,group`) used by the estimation commands.
    pub groups_file: Option<PathBuf>,
    /// Data-generating specification used as ground truth by `fit`.
    pub truth: Option<PathBuf>,
    /// Data-generating specification read by `simulate`.
    pub dgp: Option<PathBuf>,
    /// Monte Carlo replications run by `simulate` (0 = generate one panel).
    pub replications: usize,
    /// Curve tables read by `plot`.
    pub curves: Vec<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = PsiGrid::default();
        Self {
            input: None,
            quantile: Quantile::Top5,
            num_basis: DEFAULT_NUM_BASIS,
            degree: DEFAULT_DEGREE,
            penalty_order: DEFAULT_PENALTY_ORDER,
            psi_lower: grid.lower,
            psi_upper: grid.upper,
            psi_points: grid.points,
            psi_refine: grid.refine,
            g_max: DEFAULT_G_MAX,
            zeta: DEFAULT_ZETA,
            n_init: DEFAULT_N_INIT,
            groups: None,
            sd: SdConvention::Sample,
            seed: 0,
            min_group_size: DEFAULT_MIN_GROUP_SIZE,
            min_obs: DEFAULT_MIN_OBS,
            iv: true,
            shapley_mode: ShapleyMode::Exact,
            contribution: ContributionMode::Change,
            curve_points: DEFAULT_CURVE_POINTS,
            centering_points: DEFAULT_CENTERING_POINTS,
            out: PathBuf::from("out"),
            groups_file: None,
            truth: None,
            dgp: None,
            replications: 0,
            curves: Vec::new(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(invalid(key, v, "expected true or false")),
    }
}

impl RunConfig {
    /// Reads a config or manifest. Manifest-only keys (`command`, `result.*`,
    /// `artifact.*`) are ignored; any other unknown key is an error.
    pub fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        let d = Self::default();
        let path = |k: &str| kv.raw(k).filter(|v| !v.is_empty()).map(PathBuf::from);
        let flag = |k: &str, default: bool| kv.raw(k).map_or(Ok(default), |v| parse_bool(k, v));
        let groups = match kv.raw("groups") {
            None | Some("auto") | Some("") => None,
            Some(v) => Some(v.parse().map_err(|e| invalid("groups", v, e))?),
        };
        let sd = match kv.raw("sd") {
            None | Some("sample") => SdConvention::Sample,
            Some("population") => SdConvention::Population,
            Some(v) => return Err(invalid("sd", v, "expected sample or population")),
        };
        let shapley_mode = match kv.raw("shapley_mode") {
            None | Some("exact") => ShapleyMode::Exact,
            Some("paper_literal") => ShapleyMode::PaperLiteral,
            Some(v) => return Err(invalid("shapley_mode", v, "expected exact or paper_literal")),
        };
        let contribution = match kv.raw("contribution") {
            None | Some("change") => ContributionMode::Change,
            Some("average") => ContributionMode::PeriodAverage,
            Some(v) => return Err(invalid("contribution", v, "expected change or average")),
        };
        let cfg = Self {
            input: path("input"),
            quantile: kv.get_or("quantile", d.quantile)?,
            num_basis: kv.get_or("num_basis", d.num_basis)?,
            degree: kv.get_or("degree", d.degree)?,
            penalty_order: kv.get_or("penalty_order", d.penalty_order)?,
            psi_lower: kv.get_or("psi_lower", d.psi_lower)?,
            psi_upper: kv.get_or("psi_upper", d.psi_upper)?,
            psi_points: kv.get_or("psi_points", d.psi_points)?,
            psi_refine: flag("psi_refine", d.psi_refine)?,
            g_max: kv.get_or("g_max", d.g_max)?,
            zeta: kv.get_or("zeta", d.zeta)?,
            n_init: kv.get_or("n_init", d.n_init)?,
            groups,
            sd,
            seed: kv.get_or("seed", d.seed)?,
            min_group_size: kv.get_or("min_group_size", d.min_group_size)?,
            min_obs: kv.get_or("min_obs", d.min_obs)?,
            iv: flag("iv", d.iv)?,
            shapley_mode,
            contribution,
            curve_points: kv.get_or("curve_points", d.curve_points)?,
            centering_points: kv.get_or("centering_points", d.centering_points)?,
            out: path("out").unwrap_or(d.out),
            groups_file: path("groups_file"),
            truth: path("truth"),
            dgp: path("dgp"),
            replications: kv.get_or("replications", d.replications)?,
            curves: kv.get_list::<String>("curves")?.unwrap_or_default().into_iter().filter(|s| !s.is_empty()).map(PathBuf::from).collect(),
        };
        let _ = kv.raw("command");
        for k in kv.entries().keys() {
            if k.starts_with("result.") || k.starts_with("artifact.") {
                let _ = kv.raw(k);
            }
        }
        kv.reject_unused()?;
        Ok(cfg)
    }

    /// Key-value form accepted by [`RunConfig::from_kv`].
    pub fn to_kv(&self) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let entries = [
            ("input", p(&self.input)),
            ("quantile", self.quantile.to_string()),
            ("num_basis", self.num_basis.to_string()),
            ("degree", self.degree.to_string()),
            ("penalty_order", self.penalty_order.to_string()),
            ("psi_lower", self.psi_lower.to_string()),
            ("psi_upper", self.psi_upper.to_string()),
            ("psi_points", self.psi_points.to_string()),
            ("psi_refine", self.psi_refine.to_string()),
            ("g_max", self.g_max.to_string()),
            ("zeta", self.zeta.to_string()),
            ("n_init", self.n_init.to_string()),
            ("groups", self.groups.map_or("auto".into(), |g| g.to_string())),
            (
                "sd",
                match self.sd {
                    SdConvention::Sample => "sample".into(),
                    SdConvention::Population => "population".into(),
                },
            ),
            ("seed", self.seed.to_string()),
            ("min_group_size", self.min_group_size.to_string()),
            ("min_obs", self.min_obs.to_string()),
            ("iv", self.iv.to_string()),
            (
                "shapley_mode",
                match self.shapley_mode {
                    ShapleyMode::Exact => "exact".into(),
                    ShapleyMode::PaperLiteral => "paper_literal".into(),
                },
            ),
            (
                "contribution",
                match self.contribution {
                    ContributionMode::Change => "change".into(),
                    ContributionMode::PeriodAverage => "average".into(),
                },
            ),
            ("curve_points", self.curve_points.to_string()),
            ("centering_points", self.centering_points.to_string()),
            ("out", self.out.display().to_string()),
            ("groups_file", p(&self.groups_file)),
            ("truth", p(&self.truth)),
            ("dgp", p(&self.dgp)),
            ("replications", self.replications.to_string()),
            (
                "curves",
                self.curves.iter().map(|c| c.display().to_string()).collect::<Vec<_>>().join(", "),
            ),
        ];
        entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn tvc(&self) -> TvcConfig {
        TvcConfig {
            num_basis: self.num_basis,
            degree: self.degree,
            penalty_order: self.penalty_order,
            psi_grid: PsiGrid {
                lower: self.psi_lower,
                upper: self.psi_upper,
                points: self.psi_points,
                refine: self.psi_refine,
            },
            min_group_size: self.min_group_size,
            curve_points: self.curve_points,
            centering_points: self.centering_points,
        }
    }

    pub fn classify(&self) -> ClassifyConfig {
        ClassifyConfig {
            quantile: self.quantile,
            g_max: self.g_max,
            zeta: self.zeta,
            n_init: self.n_init,
            seed: self.seed,
            sd_convention: self.sd,
            fixed_groups: self.groups,
        }
    }

    pub fn schema(&self) -> SchemaConfig {
        SchemaConfig {
            min_obs: self.min_obs,
            ..SchemaConfig::default()
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tvc", version, about = "Grouped time-varying coefficient estimation of the capital-share transmission")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check a panel CSV and write the rejection report.
    Validate(CommonArgs),
    /// Classify countries into groups.
    Cluster(CommonArgs),
    /// Estimate the model by penalized least squares.
    Fit(CommonArgs),
    /// Estimate the model with the instrumented capital share.
    IvFit(CommonArgs),
    /// Attribute fitted top shares to the time-varying components.
    Shapley(CommonArgs),
    /// Generate a synthetic panel or run a Monte Carlo study.
    Simulate(CommonArgs),
    /// Run the full pipeline and write the summary tables and figures.
    Replicate(CommonArgs),
    /// Render curve tables as SVG charts.
    Plot(CommonArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Validate(_) => "validate",
            Command::Cluster(_) => "cluster",
            Command::Fit(_) => "fit",
            Command::IvFit(_) => "iv-fit",
            Command::Shapley(_) => "shapley",
            Command::Simulate(_) => "simulate",
            Command::Replicate(_) => "replicate",
            Command::Plot(_) => "plot",
        }
    }

    fn args(&self) -> &CommonArgs {
        match self {
            Command::Validate(a)
            | Command::Cluster(a)
            | Command::Fit(a)
            | Command::IvFit(a)
            | Command::Shapley(a)
            | Command::Simulate(a)
            | Command::Replicate(a)
            | Command::Plot(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Key-value config file (a previous manifest works too).
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    /// Panel CSV.
    #[arg(long, short)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// top10, top5 or top1.
    #[arg(long, short)]
    pub quantile: Option<String>,
    /// Group assignment CSV written by `cluster`.
    #[arg(long)]
    pub groups_file: Option<PathBuf>,
    /// Data-generating specification used as ground truth.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Data-generating specification for `simulate`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Monte Carlo replications for `simulate`.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Curve tables for `plot`.
    #[arg(long)]
    pub curves: Vec<PathBuf>,
}

/// Merges the config file with command-line overrides.
pub fn resolve_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_kv(&KeyValues::load(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &args.input {
        cfg.input = Some(v.clone());
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = &args.out {
        cfg.out = v.clone();
    }
    if let Some(q) = &args.quantile {
        cfg.quantile = match q.as_str() {
            "top10" | "top5" | "top1" => q.parse()?,
            other => return Err(CliError::new(Category::Config, format!("unknown quantile `{other}` (expected top10, top5 or top1)"))),
        };
    }
    if let Some(v) = &args.groups_file {
        cfg.groups_file = Some(v.clone());
    }
    if let Some(v) = &args.truth {
        cfg.truth = Some(v.clone());
    }
    if let Some(v) = &args.spec {
        cfg.dgp = Some(v.clone());
    }
    if let Some(v) = args.replications {
        cfg.replications = v;
    }
    if !args.curves.is_empty() {
        cfg.curves = args.curves.clone();
    }
    Ok(cfg)
}

/// Record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub results: Vec<(String, String)>,
    pub artifacts: Vec<String>,
}

impl Manifest {
    fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            config: config.clone(),
            results: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn result(&mut self, key: impl Into<String>, value: impl fmt::Display) {
        self.results.push((key.into(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.results.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut s = format!("# tvc {} run manifest\ncommand = {}\n", env!("CARGO_PKG_VERSION"), self.command);
        s.push_str(&self.config.to_kv());
        for (k, v) in &self.results {
            s.push_str(&format!("result.{k} = {}\n", v.replace('\n', " ")));
        }
        for (i, a) in self.artifacts.iter().enumerate() {
            s.push_str(&format!("artifact.{} = {a}\n", i + 1));
        }
        s
    }

    pub fn path(&self) -> PathBuf {
        self.config.out.join(format!("manifest_{}.txt", self.command))
    }
}

/// Output directory handle that records what it writes.
struct Outputs<'a> {
    dir: &'a Path,
    manifest: &'a mut Manifest,
}

impl Outputs<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::new(Category::Io, format!("cannot create {}: {e}", path.display())))?;
        self.manifest.artifacts.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn svg(&mut self, name: &str, curve_file: &str, column: &str, title: String) -> Result<(), CliError> {
        let series = read_band_file(self.dir.join(curve_file), column)?;
        let style = PlotStyle {
            title,
            ..PlotStyle::default()
        };
        write_svg(self.dir.join(name), &series, &style)?;
        self.manifest.artifacts.push(name.to_string());
        Ok(())
    }
}

fn load(cfg: &RunConfig) -> Result<PanelDataset, CliError> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::new(Category::Config, "no input panel given (use --input or `input =`)"))?;
    Ok(finish_load(validate_csv(input, &cfg.schema())?)?.dataset)
}

fn assignment(cfg: &RunConfig, ds: &PanelDataset) -> Result<GroupAssignment, CliError> {
    match &cfg.groups_file {
        Some(p) => {
            let f = File::open(p).map_err(|e| CliError::new(Category::Io, format!("cannot read {}: {e}", p.display())))?;
            Ok(GroupAssignment::read_csv(f)?)
        }
        None => Ok(GroupAssignment::single(ds.country_ids().to_vec())),
    }
}

fn tvc_row(name: &str, sample: String, q: Quantile, a: AverageEffect, rss: f64, k: f64, n: usize) -> SummaryRow {
    SummaryRow {
        estimator: name.to_string(),
        sample,
        quantile: q,
        estimate: a.estimate,
        t_stat: a.t_stat(),
        bic: model_bic(rss, k, n).unwrap_or(f64::NAN),
    }
}

fn mg_row(name: &str, sample: String, q: Quantile, r: &MgResult) -> SummaryRow {
    SummaryRow {
        estimator: name.to_string(),
        sample,
        quantile: q,
        estimate: r.estimate,
        t_stat: r.t_stat,
        bic: r.bic,
    }
}

/// Summary rows: one per group when `grouped`, else one pooled row.
fn tvc_rows(name: &str, fit: &TvcFit, grouped: bool) -> Vec<SummaryRow> {
    let q = fit.quantile;
    if !grouped {
        return vec![tvc_row(
            name,
            "full".into(),
            q,
            fit.pooled_average_effect(),
            fit.rss(),
            fit.effective_parameters(),
            fit.n_obs(),
        )];
    }
    fit.groups
        .iter()
        .map(|g| {
            tvc_row(
                name,
                format!("group{}", g.group() + 1),
                q,
                g.average_effect(),
                g.rss,
                g.edf + g.design.num_countries() as f64,
                g.design.n_obs(),
            )
        })
        .collect()
}

fn record_fit(m: &mut Manifest, prefix: &str, fit: &TvcFit) {
    let inv = fit.invariants();
    m.result(format!("{prefix}invariants_hold"), inv.holds());
    m.result(format!("{prefix}omega_grid_mean"), format!("{:e}", inv.omega_grid_mean));
    m.result(format!("{prefix}reconstruction"), format!("{:e}", inv.reconstruction));
    let pooled = fit.pooled_average_effect();
    m.result(format!("{prefix}average_effect"), pooled.estimate);
    m.result(format!("{prefix}average_effect_se"), pooled.se);
    for g in &fit.groups {
        let k = g.group() + 1;
        let a = g.average_effect();
        m.result(format!("{prefix}group{k}.average_effect"), a.estimate);
        m.result(format!("{prefix}group{k}.t_stat"), a.t_stat());
        m.result(format!("{prefix}group{k}.psi"), format!("{:e},{:e}", g.psi[0], g.psi[1]));
        m.result(format!("{prefix}group{k}.edf"), g.edf);
    }
    for (g, n) in &fit.skipped {
        m.result(format!("{prefix}skipped_group{}", g + 1), format!("{n} countries"));
    }
}

fn write_curves(o: &mut Outputs, fit: &TvcFit, stem: &str) -> Result<Vec<String>, CliError> {
    let mut names = Vec::new();
    for g in &fit.groups {
        let name = format!("{stem}_group{}.csv", g.group() + 1);
        g.curves.write_csv(o.create(&name)?)?;
        names.push(name);
    }
    Ok(names)
}

fn cmd_validate(cfg: &RunConfig, m: &mut Manifest) -> Result<(), CliError> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::new(Category::Config, "no input panel given (use --input or `input =`)"))?;
    let report = validate_csv(input, &cfg.schema())?;
    let mut o = Outputs {
        dir: &cfg.out,
        manifest: m,
    };
    report.write_rejections(o.create("rejections.csv")?)?;
    m.result("rows", report.total_rows);
    m.result("rejected", report.rejections.len());
    m.result("dropped_countries", report.dropped_countries.len());
    let loaded = finish_load(report)?;
    let ds = &loaded.dataset;
    m.result("countries", ds.num_countries());
    m.result("observations", ds.len());
    m.result("window", format!("{}-{}", ds.window().0, ds.window().1));
    Ok(())
}

fn cmd_cluster(cfg: &RunConfig, m: &mut Manifest) -> Result<(), CliError> {
    let ds = load(cfg)?;
    let (assignment, table) = classify(&ds, &cfg.classify())?;
    let mut o = Outputs {
        dir: &cfg.out,
        manifest: m,
    };
    assignment.write_csv(o.create("groups.csv")?)?;
    if let Some(t) = &table {
        t.write_csv(o.create("bic.csv")?)?;
    }
    m.result("groups", assignment.num_groups);
    m.result(
        "group_sizes",
        assignment.group_sizes().iter().map(usize::to_string).collect::<Vec<_>>().join(","),
    );
    m.result("objective", assignment.objective);
    Ok(())
}

fn truth_spec(cfg: &RunConfig) -> Result<Option<DgpSpec>, CliError> {
    match &cfg.truth {
        Some(p) => Ok(Some(DgpSpec::from_kv(&KeyValues::load(p)?)?)),
        None => Ok(None),
    }
}

fn cmd_fit(cfg: &RunConfig, m: &mut Manifest, instrumented: bool) -> Result<(), CliError> {
    let ds = load(cfg)?;
    let groups = assignment(cfg, &ds)?;
    let q = cfg.quantile;
    let (fit, first) = if instrumented {
        let (f, fs) = fit_tvc_iv(&ds, &groups, q, &cfg.tvc())?;
        (f, Some(fs))
    } else {
        (fit_tvc(&ds, &groups, q, &cfg.tvc())?, None)
    };
    let tag = if instrumented { "tvc_iv" } else { "tvc" };
    let mut o = Outputs {
        dir: &cfg.out,
        manifest: m,
    };
    write_curves(&mut o, &fit, &format!("curves_{q}_{tag}"))?;
    fit.write_shifts(o.create(&format!("shifts_{q}_{tag}.csv"))?)?;
    let name = if instrumented { "TVC-IV" } else { "TVC" };
    let mut rows = tvc_rows(name, &fit, false);
    if groups.num_groups > 1 {
        rows.extend(tvc_rows(name, &fit, true));
    }
    write_summary(&rows, o.create(&format!("estimates_{q}_{tag}.csv"))?)?;
    if let Some(fs) = &first {
        let mut w = csv::Writer::from_writer(o.create("first_stage.csv")?);
        w.write_record(["country", "slope", "intercept", "r_squared"])?;
        for (i, id) in fs.dataset.country_ids().iter().enumerate() {
            w.write_record([
                id.clone(),
                format!("{:.8}", fs.slopes[i]),
                format!("{:.8}", fs.intercepts[i]),
                format!("{:.6}", fs.r_squared[i]),
            ])?;
        }
        w.flush()?;
        m.result("first_stage_f", fs.f_stat);
        m.result("first_stage_df", format!("{},{}", fs.f_df.0, fs.f_df.1));
        m.result("iv_excluded", fs.excluded.join(","));
        m.result("iv_window", format!("{}-{}", fs.dataset.window().0, fs.dataset.window().1));
    }
    record_fit(m, "", &fit);
    if let Some(spec) = truth_spec(cfg)? {
        for g in &fit.groups {
            let curve = spec.delta.get(g.group()).ok_or_else(|| {
                CliError::new(Category::Config, format!("truth has no curve for group {}", g.group() + 1))
            })?;
            m.result(format!("group{}.rmise", g.group() + 1), format!("{:e}", delta_rmise(g, curve)));
        }
    }
    Ok(())
}

fn cmd_shapley(cfg: &RunConfig, m: &mut Manifest) -> Result<(), CliError> {
    let ds = load(cfg)?;
    let groups = assignment(cfg, &ds)?;
    let q = cfg.quantile;
    let fit = fit_tvc(&ds, &groups, q, &cfg.tvc())?;
    let report = decompose(&fit, &ds, cfg.shapley_mode)?;
    let summary = summarize_proportions(&report, cfg.contribution)?;
    let mut o = Outputs {
        dir: &cfg.out,
        manifest: m,
    };
    summary.write_csv(o.create(&format!("shapley_{q}.csv"))?)?;
    report.write_csv(o.create(&format!("shapley_obs_{q}.csv"))?)?;
    for (g, p) in &summary.group_means {
        m.result(format!("group{}.prop_delta", g + 1), p[0]);
        m.result(format!("group{}.prop_cs", g + 1), p[1]);
        m.result(format!("group{}.prop_omega", g + 1), p[2]);
    }
    let flagged: Vec<&str> = summary.rows.iter().filter(|r| r.proportions.is_none()).map(|r| r.country.as_str()).collect();
    m.result("flagged", flagged.join(","));
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, m: &mut Manifest) -> Result<(), CliError> {
    let mut spec = match &cfg.dgp {
        Some(p) => DgpSpec::from_kv(&KeyValues::load(p)?)?,
        None => DgpSpec::default(),
    };
    spec.seed = cfg.seed;
    let mut o = Outputs {
        dir: &cfg.out,
        manifest: m,
    };
    let sim = generate(&spec)?;
    write_csv(&sim.dataset, o.create("panel.csv")?)?;
    std::fs::write(cfg.out.join("dgp.txt"), spec.to_kv())?;
    o.manifest.artifacts.push("dgp.txt".into());
    sim.truth.assignment(&sim.dataset).write_csv(o.create("groups.csv")?)?;
    let mut w = csv::Writer::from_writer(o.create("truth.csv")?);
    w.write_record(["country", "group", "mu"])?;
    for (i, id) in sim.dataset.country_ids().iter().enumerate() {
        w.write_record([id.clone(), (sim.truth.labels[i] + 1).to_string(), format!("{:.10}", sim.truth.mu[i])])?;
    }
    w.flush()?;
    m.result("observations", sim.dataset.len());
    m.result("dropped_rows", sim.truth.dropped_rows);
    if cfg.replications > 0 {
        let study = StudyConfig {
            replications: cfg.replications,
            seed: cfg.seed,
            quantile: cfg.quantile,
            classify: Some(ClassifyConfig {
                fixed_groups: None,
                ..cfg.classify()
            }),
            estimated_groups: false,
            tvc: Some(cfg.tvc()),
            iv: cfg.iv,
        };
        let report = replicate_study(&spec, &study)?;
        let mut o = Outputs {
            dir: &cfg.out,
            manifest: m,
        };
        report.write_summary(o.create("study_summary.csv")?)?;
        report.write_outcomes(o.create("study_outcomes.csv")?)?;
        m.result("failure_rate", report.failure_rate());
        if let Some(s) = report.tvc() {
            m.result("tvc.bias", s.bias);
            for (g, v) in s.rmise {
                m.result(format!("tvc.group{}.rmise", g + 1), v);
            }
        }
    }
    Ok(())
}

fn cmd_replicate(cfg: &RunConfig, m: &mut Manifest) -> Result<(), CliError> {
    let ds = load(cfg)?;
    let tcfg = cfg.tvc();
    let single = GroupAssignment::single(ds.country_ids().to_vec());
    let mut notes: Vec<(String, String)> = Vec::new();
    let mut o = Outputs {
        dir: &cfg.out,
        manifest: m,
    };

    // Full-panel comparison across quantiles.
    let mut full = Vec::new();
    let mut full_fits = Vec::new();
    for q in Quantile::ALL {
        match mg_ols(&ds, q) {
            Ok(r) => full.push(mg_row("OLS", "full".into(), q, &r)),
            Err(e) => notes.push((format!("ols.{q}"), e.to_string())),
        }
        match cce_mg(&ds, q) {
            Ok(r) => full.push(mg_row("CCE", "full".into(), q, &r)),
            Err(e) => notes.push((format!("cce.{q}"), e.to_string())),
        }
        let fit = fit_tvc(&ds, &single, q, &tcfg)?;
        full.extend(tvc_rows("TVC", &fit, false));
        full_fits.push(("tvc", q, fit));
        if cfg.iv {
            match fit_tvc_iv(&ds, &single, q, &tcfg) {
                Ok((fit, _)) => {
                    full.extend(tvc_rows("TVC-IV", &fit, false));
                    full_fits.push(("tvc_iv", q, fit));
                }
                Err(e) => notes.push((format!("tvc_iv.{q}"), e.to_string())),
            }
        }
    }
    write_summary(&full, o.create("table_full_panel.csv")?)?;
    for (tag, q, fit) in &full_fits {
        let stem = format!("fig_full_{q}_{tag}");
        let names = write_curves(&mut o, fit, &stem)?;
        for n in names {
            let base = n.trim_end_matches(".csv").to_string();
            o.svg(&format!("{base}_delta.svg"), &n, "delta", format!("δ, full panel, {q}, {tag}"))?;
            o.svg(&format!("{base}_omega.svg"), &n, "omega", format!("ω, full panel, {q}, {tag}"))?;
        }
    }

    // Grouped estimates for the configured quantile.
    let q = cfg.quantile;
    let (groups, table) = classify(&ds, &cfg.classify())?;
    groups.write_csv(o.create("groups.csv")?)?;
    if let Some(t) = &table {
        t.write_csv(o.create("bic.csv")?)?;
    }
    let mut grouped = Vec::new();
    for g in groups.estimation_groups(cfg.min_group_size) {
        let members: Vec<usize> = groups
            .members(g)
            .iter()
            .filter_map(|id| ds.country_index(id))
            .collect();
        let sub = ds.subset_countries(&members)?;
        let sample = format!("group{}", g + 1);
        match mg_ols(&sub, q) {
            Ok(r) => grouped.push(mg_row("OLS", sample.clone(), q, &r)),
            Err(e) => notes.push((format!("ols.{sample}"), e.to_string())),
        }
        match cce_mg(&sub, q) {
            Ok(r) => grouped.push(mg_row("CCE", sample.clone(), q, &r)),
            Err(e) => notes.push((format!("cce.{sample}"), e.to_string())),
        }
    }
    let fit = fit_tvc(&ds, &groups, q, &tcfg)?;
    grouped.extend(tvc_rows("TVC", &fit, true));
    let mut group_fits = vec![("tvc", fit)];
    if cfg.iv {
        match fit_tvc_iv(&ds, &groups, q, &tcfg) {
            Ok((f, _)) => {
                grouped.extend(tvc_rows("TVC-IV", &f, true));
                group_fits.push(("tvc_iv", f));
            }
            Err(e) => notes.push(("tvc_iv.grouped".into(), e.to_string())),
        }
    }
    write_summary(&grouped, o.create("table_grouped.csv")?)?;
    for (tag, fit) in &group_fits {
        let names = write_curves(&mut o, fit, &format!("fig_{q}_{tag}"))?;
        for n in names {
            let base = n.trim_end_matches(".csv").to_string();
            o.svg(&format!("{base}_delta.svg"), &n, "delta", format!("δ, {q}, {tag}"))?;
            o.svg(&format!("{base}_omega.svg"), &n, "omega", format!("ω, {q}, {tag}"))?;
        }
    }

    // Shapley proportions on the grouped least-squares fit.
    let report = decompose(&group_fits[0].1, &ds, cfg.shapley_mode)?;
    let summary = summarize_proportions(&report, cfg.contribution)?;
    summary.write_csv(o.create("table_shapley.csv")?)?;

    m.result("groups", groups.num_groups);
    for r in full.iter().chain(&grouped) {
        m.result(
            format!("{}.{}.{}", r.estimator.to_lowercase(), r.sample, r.quantile),
            format!("{:.6} (t {:.3}, bic {:.4})", r.estimate, r.t_stat, r.bic),
        );
    }
    for (g, p) in &summary.group_means {
        m.result(format!("shapley.group{}", g + 1), format!("{:.4},{:.4},{:.4}", p[0], p[1], p[2]));
    }
    for (k, v) in notes {
        m.result(format!("skipped.{k}"), v);
    }
    Ok(())
}

fn cmd_plot(cfg: &RunConfig, m: &mut Manifest) -> Result<(), CliError> {
    let files: Vec<PathBuf> = if cfg.curves.is_empty() {
        let mut found: Vec<PathBuf> = std::fs::read_dir(&cfg.out)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                (name.starts_with("curves_") || name.starts_with("fig_")) && name.ends_with(".csv")
            })
            .collect();
        found.sort();
        found
    } else {
        cfg.curves.clone()
    };
    if files.is_empty() {
        return Err(CliError::new(Category::Io, format!("no curve files found in {}", cfg.out.display())));
    }
    for f in &files {
        let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or("curve").to_string();
        for column in ["delta", "omega"] {
            let series = read_band_file(f, column)?;
            let name = format!("{stem}_{column}.svg");
            let style = PlotStyle {
                title: format!("{column}: {stem}"),
                ..PlotStyle::default()
            };
            write_svg(cfg.out.join(&name), &series, &style)?;
            m.artifacts.push(name);
        }
    }
    m.result("charts", m.artifacts.len());
    Ok(())
}

/// Executes one command and writes its manifest, whether or not it failed.
pub fn execute(command: &Command) -> Result<Manifest, (Option<Manifest>, CliError)> {
    let cfg = resolve_config(command.args()).map_err(|e| (None, e))?;
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| (None, CliError::new(Category::Io, format!("cannot create {}: {e}", cfg.out.display()))))?;
    let mut m = Manifest::new(command.name(), &cfg);
    let outcome = match command {
        Command::Validate(_) => cmd_validate(&cfg, &mut m),
        Command::Cluster(_) => cmd_cluster(&cfg, &mut m),
        Command::Fit(_) => cmd_fit(&cfg, &mut m, false),
        Command::IvFit(_) => cmd_fit(&cfg, &mut m, true),
        Command::Shapley(_) => cmd_shapley(&cfg, &mut m),
        Command::Simulate(_) => cmd_simulate(&cfg, &mut m),
        Command::Replicate(_) => cmd_replicate(&cfg, &mut m),
        Command::Plot(_) => cmd_plot(&cfg, &mut m),
    };
    m.result("status", outcome.as_ref().map_or_else(|e| e.category.as_str(), |_| "ok"));
    if let Err(e) = &outcome {
        m.result("error", &e.message);
    }
    let written = std::fs::write(m.path(), m.render());
    match (outcome, written) {
        (Ok(()), Ok(())) => Ok(m),
        (Ok(()), Err(e)) => Err((Some(m), CliError::new(Category::Io, format!("cannot write manifest: {e}")))),
        (Err(e), _) => Err((Some(m), e)),
    }
}

/// Parses arguments, runs, reports errors on stderr and returns the exit
/// status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            eprintln!("{}", Category::Config);
            eprintln!("{e}");
            return Category::Config.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(m) => {
            println!("{}", m.path().display());
            0
        }
        Err((manifest, e)) => {
            eprintln!("{}", e.category);
            eprintln!("tvc {}: {}", cli.command.name(), e.message);
            if let Some(m) = manifest {
                eprintln!("manifest: {}", m.path().display());
            }
            e.category.exit_code()
        }
    }
}
