//! Command-line driver: `analyze`, `simulate` and `report`.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.

use crate::competing::{competitor_from_set, CompetitorMethod};
use crate::dataset::{load_csv, CsvSchema, Dataset, MediatorColumns, Standardization};
use crate::nuisance::{AnalysisContext, NuisanceOptions, NuisanceScope, NuisanceSet, RiskSetMoments};
use crate::records::{
    analysis_table, coverage_rows, coverage_table, read_coverage_csv, read_records, write_coverage_csv,
    write_coverage_svgs, write_qq_csv, write_records, AnalysisRecord, ConfigEcho, CoverageRow, SelectedMediator,
};
use crate::simulation::{run_coverage_study, Method, Model, SimulationSpec, StudyConfig};
use crate::stabilized::{multi_ordering_with_context, qn_from_fraction, StabilizedConfig};
use crate::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "hdmed", version, about = "Stabilized inference for the maximal indirect effect among many mediators")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyse a CSV dataset.
    Analyze(AnalyzeArgs),
    /// Run a coverage study on simulated data.
    Simulate(SimulateArgs),
    /// Summarise record and coverage files.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StandardizeArg {
    Raw,
    Zscore,
    NormalScore,
}

impl From<StandardizeArg> for Standardization {
    fn from(s: StandardizeArg) -> Self {
        match s {
            StandardizeArg::Raw => Standardization::Raw,
            StandardizeArg::Zscore => Standardization::Zscore,
            StandardizeArg::NormalScore => Standardization::NormalScore,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Appendix,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MomentsArg {
    Masked,
    Subsample,
}

#[derive(Debug, Clone, Args)]
pub struct NuisanceArgs {
    /// Adjust for the confounders (extended estimator).
    #[arg(long)]
    pub extended: bool,
    #[arg(long, value_enum, default_value = "normal-score")]
    pub standardize: StandardizeArg,
    #[arg(long, value_enum, default_value = "appendix")]
    pub nuisance_scope: ScopeArg,
    /// Normalisation of the risk-set regressions.
    #[arg(long, value_enum, default_value = "masked")]
    pub risk_set_moments: MomentsArg,
}

impl NuisanceArgs {
    fn options(&self) -> NuisanceOptions {
        NuisanceOptions {
            scope: match self.nuisance_scope {
                ScopeArg::Appendix => NuisanceScope::Appendix,
                ScopeArg::Full => NuisanceScope::Full,
            },
            adjust_for_z: self.extended,
            moments: match self.risk_set_moments {
                MomentsArg::Masked => RiskSetMoments::Masked,
                MomentsArg::Subsample => RiskSetMoments::Subsample,
            },
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub time: String,
    #[arg(long)]
    pub status: String,
    #[arg(long)]
    pub exposure: String,
    /// Column-name prefix, or a comma-separated list of columns (default: all other columns).
    #[arg(long)]
    pub mediators: Option<String>,
    /// Comma-separated confounder columns.
    #[arg(long, value_delimiter = ',')]
    pub confounders: Vec<String>,
    /// Times in the file are raw and are logged on ingestion.
    #[arg(long)]
    pub log_time: bool,
    /// Burn-in as a fraction of n.
    #[arg(long, conflicts_with = "qn_list")]
    pub qn_fraction: Option<f64>,
    /// Comma-separated burn-in lengths (one record each).
    #[arg(long, value_delimiter = ',')]
    pub qn_list: Vec<usize>,
    #[arg(long, default_value_t = 1)]
    pub orderings: usize,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// stabilized, bonferroni, naive or oracle:K (K a 1-based index or a label).
    #[arg(long, default_value = "stabilized")]
    pub method: String,
    #[command(flatten)]
    pub nuisance: NuisanceArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 800)]
    pub n: usize,
    /// Comma-separated mediator counts.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub p: Vec<usize>,
    #[arg(long, default_value_t = 500)]
    pub reps: usize,
    /// Comma-separated methods: stabilized, bonferroni, naive, oracle.
    #[arg(long, value_delimiter = ',', default_value = "stabilized")]
    pub methods: Vec<String>,
    #[arg(long, default_value_t = 0.8)]
    pub qn_fraction: f64,
    #[arg(long)]
    pub qn: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub censor_target: f64,
    /// Confounder coefficient for primed models.
    #[arg(long, default_value_t = crate::simulation::DEFAULT_Z_COEF, allow_hyphen_values = true)]
    pub z_coef: f64,
    /// Mediator handed to the oracle (1-based).
    #[arg(long, default_value_t = 1)]
    pub oracle_k: usize,
    #[command(flatten)]
    pub nuisance: NuisanceArgs,
    /// Directory for coverage.csv, qq.csv and report.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write SVG panels.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Analysis record (.json) or coverage (.csv) files.
    pub inputs: Vec<PathBuf>,
    /// Write SVG panels for coverage inputs here.
    #[arg(long)]
    pub svg_dir: Option<PathBuf>,
}

/// Parse `args` (including the program name) and run, writing to the given sinks.
pub fn run_with_io<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    let mut buf = Vec::new();
    let result = match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command, &mut buf)),
            Err(e) => Err(Error::Usage(format!("cannot start thread pool: {e}"))),
        },
        None => dispatch(&cli.command, &mut buf),
    };
    let _ = out.write_all(&buf);
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_numeric() {
                EXIT_NUMERIC
            } else {
                EXIT_VALIDATION
            }
        }
    }
}

/// Entry point used by the binary.
pub fn run() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with_io(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

fn dispatch(cmd: &Command, out: &mut dyn Write) -> Result<(), Error> {
    match cmd {
        Command::Analyze(a) => cmd_analyze(a, out),
        Command::Simulate(s) => cmd_simulate(s, out),
        Command::Report(r) => cmd_report(r, out),
    }
}

enum MethodChoice {
    Stabilized,
    Competitor(CompetitorMethod, usize),
}

fn parse_method(s: &str, d: &Dataset) -> Result<MethodChoice, Error> {
    let lower = s.trim().to_ascii_lowercase();
    Ok(match lower.as_str() {
        "stabilized" => MethodChoice::Stabilized,
        "bonferroni" => MethodChoice::Competitor(CompetitorMethod::Bonferroni, 0),
        "naive" => MethodChoice::Competitor(CompetitorMethod::Naive, 0),
        _ => {
            let Some(spec) = s.trim().strip_prefix("oracle:") else {
                return Err(Error::Usage(format!(
                    "unknown method `{s}` (expected stabilized, bonferroni, naive or oracle:K)"
                )));
            };
            let k = match spec.parse::<usize>() {
                Ok(k) if (1..=d.p()).contains(&k) => k - 1,
                Ok(k) => {
                    return Err(Error::Usage(format!(
                        "nuisance: mediator index {k} out of range 1..={} (labels are 1-based)",
                        d.p()
                    )))
                }
                Err(_) => d
                    .mediator_labels()
                    .iter()
                    .position(|l| l == spec)
                    .ok_or_else(|| Error::Usage(format!("oracle mediator `{spec}` not found")))?,
            };
            MethodChoice::Competitor(CompetitorMethod::Oracle, k)
        }
    })
}

fn scope_name(s: NuisanceScope) -> &'static str {
    match s {
        NuisanceScope::Appendix => "appendix",
        NuisanceScope::Full => "full",
    }
}

fn standardization_name(s: Standardization) -> &'static str {
    match s {
        Standardization::Raw => "raw",
        Standardization::Zscore => "zscore",
        Standardization::NormalScore => "normal_score",
    }
}

pub fn cmd_analyze(args: &AnalyzeArgs, out: &mut dyn Write) -> Result<(), Error> {
    if !(args.alpha > 0.0 && args.alpha < 1.0) {
        return Err(Error::Usage(format!("--alpha must lie in (0, 1), got {}", args.alpha)));
    }
    if args.orderings == 0 {
        return Err(Error::Usage("--orderings must be at least 1".into()));
    }
    let mut schema = CsvSchema::new(&args.time, &args.status, &args.exposure);
    schema.log_time = args.log_time;
    schema.confounders = args.confounders.clone();
    schema.mediators = match &args.mediators {
        None => MediatorColumns::Remaining,
        Some(m) if m.contains(',') => {
            MediatorColumns::List(m.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect())
        }
        Some(m) => MediatorColumns::Prefix(m.clone()),
    };
    let standardize: Standardization = args.nuisance.standardize.into();
    let d = load_csv(&args.data, &schema)?.standardize_mediators(standardize)?;
    let options = args.nuisance.options();
    if options.adjust_for_z && d.q() == 0 {
        log::warn!("--extended without --confounders: the extended estimator reduces to the unextended one");
    }
    let method = parse_method(&args.method, &d)?;
    let n = d.n();
    let qns: Vec<usize> = if args.qn_list.is_empty() {
        vec![qn_from_fraction(n, args.qn_fraction.unwrap_or(0.8))]
    } else {
        args.qn_list.clone()
    };
    if let Some(f) = args.qn_fraction {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::Usage(format!("--qn-fraction must lie in (0, 1), got {f}")));
        }
    }
    let echo = ConfigEcho {
        data: args.data.display().to_string(),
        time: args.time.clone(),
        status: args.status.clone(),
        exposure: args.exposure.clone(),
        mediators: args.mediators.clone().unwrap_or_default(),
        confounders: args.confounders.clone(),
        log_time: args.log_time,
        standardize: standardization_name(standardize).into(),
        nuisance_scope: scope_name(options.scope).into(),
        risk_set_moments: match options.moments {
            RiskSetMoments::Masked => "masked".into(),
            RiskSetMoments::Subsample => "subsample".into(),
        },
        extended: options.adjust_for_z,
    };
    let labels = d.mediator_labels();
    let base = |method: &str, qn: Option<usize>| AnalysisRecord {
        method: method.into(),
        qn,
        orderings: 0,
        alpha: args.alpha,
        ci_alpha: args.alpha,
        n,
        p: d.p(),
        estimate: f64::NAN,
        se: f64::NAN,
        ci_low: f64::NAN,
        ci_high: f64::NAN,
        p_value: f64::NAN,
        combined_p: f64::NAN,
        failed_orderings: 0,
        selected: Vec::new(),
        seed: args.seed,
        version: env!("CARGO_PKG_VERSION").into(),
        config: echo.clone(),
    };
    let ctx = AnalysisContext::new(&d)?;
    let mut records = Vec::new();
    match method {
        MethodChoice::Stabilized => {
            let cfg = StabilizedConfig {
                nuisance: options,
                alpha: args.alpha,
            };
            for &qn in &qns {
                let ens = multi_ordering_with_context(&ctx, args.orderings, qn, args.seed, &cfg)?;
                let best = &ens.reported().estimate;
                let mut rec = base("stabilized", Some(qn));
                rec.orderings = ens.orderings;
                rec.ci_alpha = args.alpha / ens.orderings as f64;
                rec.estimate = best.s_star;
                rec.se = best.standard_error();
                rec.ci_low = ens.combined_ci.0;
                rec.ci_high = ens.combined_ci.1;
                rec.p_value = best.p_value;
                rec.combined_p = ens.combined_p;
                rec.failed_orderings = ens.failures.len();
                rec.selected = ens
                    .selection_frequency()
                    .into_iter()
                    .map(|(k, count)| SelectedMediator {
                        label: labels[k].clone(),
                        index: k + 1,
                        count,
                    })
                    .collect();
                records.push(rec);
            }
        }
        MethodChoice::Competitor(cm, k) => {
            let ns = NuisanceSet::full_sample(&ctx, options)?;
            let r = competitor_from_set(&ns, cm, k, args.alpha)?;
            let mut rec = base(&cm.to_string(), None);
            rec.ci_alpha = r.ci_alpha;
            rec.estimate = r.estimate;
            rec.se = r.se;
            rec.ci_low = r.ci_low;
            rec.ci_high = r.ci_high;
            rec.p_value = r.p_value;
            rec.combined_p = r.p_value;
            rec.selected = vec![SelectedMediator {
                label: labels[r.k_used].clone(),
                index: r.k_used + 1,
                count: 1,
            }];
            records.push(rec);
        }
    }
    write_records(&args.out, &records)?;
    let _ = write!(out, "{}", analysis_table(&records));
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<(), Error> {
    let model: Model = args.model.parse()?;
    let methods = args
        .methods
        .iter()
        .map(|m| m.parse::<Method>().map_err(Error::Usage))
        .collect::<Result<Vec<_>, _>>()?;
    if args.oracle_k == 0 {
        return Err(Error::Usage("--oracle-k is 1-based".into()));
    }
    let config = StudyConfig {
        reps: args.reps,
        methods,
        qn_fraction: args.qn_fraction,
        q_n: args.qn,
        alpha: args.alpha,
        seed: args.seed,
        standardize: args.nuisance.standardize.into(),
        nuisance: args.nuisance.options(),
        oracle_k: args.oracle_k - 1,
    };
    let mut reports = Vec::new();
    for &p in &args.p {
        let mut spec = SimulationSpec::new(model, args.n, p);
        spec.censor_target = args.censor_target;
        spec.z_coef = args.z_coef;
        let report = run_coverage_study(&spec, &config)?;
        for f in &report.failures {
            log::warn!("p = {p}, replication {}: {}", f.rep, f.reason);
        }
        reports.push(report);
    }
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::Usage(format!("{}: {e}", args.out_dir.display())))?;
    write_coverage_csv(&args.out_dir.join("coverage.csv"), &reports)?;
    write_qq_csv(&args.out_dir.join("qq.csv"), &reports)?;
    let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
    let report_path = args.out_dir.join("report.json");
    std::fs::write(&report_path, json + "\n").map_err(|e| Error::Usage(format!("{}: {e}", report_path.display())))?;
    let rows = coverage_rows(&reports);
    if args.svg {
        write_coverage_svgs(&args.out_dir, &rows, &reports)?;
    }
    let _ = write!(out, "{}", coverage_table(&rows));
    Ok(())
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn cmd_report(args: &ReportArgs, out: &mut dyn Write) -> Result<(), Error> {
    if args.inputs.is_empty() {
        return Err(Error::Usage("report needs at least one input file".into()));
    }
    let mut records = Vec::new();
    let mut rows: Vec<CoverageRow> = Vec::new();
    for path in &args.inputs {
        if is_csv(path) {
            rows.extend(read_coverage_csv(path)?);
        } else {
            records.extend(read_records(path)?);
        }
    }
    if !records.is_empty() {
        let _ = write!(out, "{}", analysis_table(&records));
    }
    if !rows.is_empty() {
        if !records.is_empty() {
            let _ = writeln!(out);
        }
        let _ = write!(out, "{}", coverage_table(&rows));
        if let Some(dir) = &args.svg_dir {
            write_coverage_svgs(dir, &rows, &[])?;
        }
    }
    Ok(())
}
