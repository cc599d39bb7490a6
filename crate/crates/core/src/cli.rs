//! Command-line front end: argument parsing, config files and the
//! subcommands behind the `examiner-irt` binary.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::answer_key::{
    consensus_key, disagreement_matrix, irtree_key, modal_key, AnswerKey, PointEstimate,
};
use crate::data::{
    conclusiveness_data, parse_table, summarize, write_table, ParsedTable, ResponseRecord, ScoringScheme,
    TableFormat, TableSummary,
};
use crate::engine::{ChainStats, DrawSet, ParamSummary, SamplerConfig};
use crate::error::{Error, Result};
use crate::evaluation::{error_rates, posterior_predictive_scores, prediction_error, waic_difference, waic_streaming, ErrorRates, Waic};
use crate::fit::{build_model, fit_model, BuiltModel, Fit, FitOptions, ModelKind};
use crate::models::irtree::{
    coefficient_table, flag_unexpected, write_flags_csv, IRTreeConfig, DEFAULT_FLAG_THRESHOLD,
};
use crate::models::joint::{predicted_vs_observed, reporting_bias_report};
use crate::models::rasch::{proficiency_report, write_rows_csv};
use crate::models::tree::TreeSpec;
use crate::simulate::{Assignment, DesignSpec, TruthParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "examiner-irt", version, about = "Item response models for forensic examiner decisions")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Flat key=value file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    #[arg(long, global = true)]
    pub target_accept: Option<f64>,
    /// How inconclusive and no-value responses are scored.
    #[arg(long, global = true, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Gaussian approximation at the posterior mode instead of NUTS.
    #[arg(long, global = true)]
    pub map: bool,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Mcar,
    Incorrect,
    Correct,
}

impl From<SchemeArg> for ScoringScheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::Mcar => Self::InconclusiveMcar,
            SchemeArg::Incorrect => Self::InconclusiveIncorrect,
            SchemeArg::Correct => Self::InconclusiveCorrect,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DelimiterArg {
    Comma,
    Tab,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Response table, one row per examiner x item.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub delimiter: Option<DelimiterArg>,
    /// Header override, `field=Header` (e.g. `item_id=Pair`). Repeatable.
    #[arg(long = "column", value_name = "FIELD=HEADER")]
    pub columns: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and normalize a response table.
    Ingest(DataArgs),
    /// Fit one model and write summaries, draws and diagnostics.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: String,
    },
    /// Re-check convergence of a stored fit.
    Diagnose {
        #[arg(long)]
        fit: PathBuf,
    },
    /// Rank fits of the same data by WAIC.
    Compare {
        #[arg(required = true)]
        fits: Vec<PathBuf>,
    },
    /// Build answer keys from the modal rule and stored fits, and tabulate
    /// where they disagree.
    Answerkey {
        #[command(flatten)]
        data: DataArgs,
        #[arg(required = true)]
        fits: Vec<PathBuf>,
    },
    /// Generate a synthetic response table with known parameters.
    Simulate {
        #[arg(long)]
        model: String,
        #[arg(long, default_value_t = 50)]
        examiners: usize,
        #[arg(long, default_value_t = 100)]
        items: usize,
        /// Items per examiner; every examiner sees every item when absent.
        #[arg(long)]
        per_examiner: Option<usize>,
        #[arg(long, default_value_t = 0.5)]
        mates_fraction: f64,
    },
}

/// Run settings after merging defaults, the config file and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub sampler: SamplerConfig,
    pub scheme: ScoringScheme,
    pub map: bool,
    pub out: PathBuf,
    pub format: OutputFormat,
    /// Rhat above this is a convergence warning.
    pub rhat_threshold: f64,
    pub beta_sd: f64,
    pub flag_threshold: f64,
    pub laplace_draws: usize,
    pub delimiter: u8,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            scheme: ScoringScheme::default(),
            map: false,
            out: PathBuf::from("out"),
            format: OutputFormat::Csv,
            rhat_threshold: 1.05,
            beta_sd: IRTreeConfig::default().beta_sd,
            flag_threshold: DEFAULT_FLAG_THRESHOLD,
            laplace_draws: 1000,
            delimiter: b',',
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("config line {}: expected key=value", n + 1)))?;
        out.insert(k.trim().replace('-', "_"), v.trim().to_string());
    }
    Ok(out)
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Usage(format!("config key {key}: cannot parse {v:?}")))
}

fn parse_delimiter(v: &str) -> Result<u8> {
    match v {
        "comma" | "," => Ok(b','),
        "tab" | "\\t" => Ok(b'\t'),
        _ => Err(Error::Usage(format!("delimiter must be comma or tab, got {v:?}"))),
    }
}

impl Settings {
    pub fn resolve(flags: &GlobalArgs, config: &BTreeMap<String, String>) -> Result<Self> {
        let mut s = Self::default();
        for (k, v) in config {
            match k.as_str() {
                "seed" => s.sampler.seed = value(k, v)?,
                "chains" => s.sampler.chains = value(k, v)?,
                "warmup" => s.sampler.warmup = value(k, v)?,
                "samples" => s.sampler.samples = value(k, v)?,
                "target_accept" => s.sampler.target_accept = value(k, v)?,
                "max_tree_depth" => s.sampler.max_tree_depth = value(k, v)?,
                "scheme" => {
                    s.scheme = ScoringScheme::parse(v)
                        .ok_or_else(|| Error::Usage(format!("unknown scheme {v:?}")))?
                }
                "map" => s.map = value(k, v)?,
                "out" => s.out = PathBuf::from(v),
                "format" => {
                    s.format = OutputFormat::from_str(v, true)
                        .map_err(|_| Error::Usage(format!("format must be csv or json, got {v:?}")))?
                }
                "rhat_threshold" => s.rhat_threshold = value(k, v)?,
                "beta_sd" => s.beta_sd = value(k, v)?,
                "flag_threshold" => s.flag_threshold = value(k, v)?,
                "laplace_draws" => s.laplace_draws = value(k, v)?,
                "delimiter" => s.delimiter = parse_delimiter(v)?,
                _ => return Err(Error::Usage(format!("unknown config key {k:?}"))),
            }
        }
        if let Some(v) = flags.seed {
            s.sampler.seed = v;
        }
        if let Some(v) = flags.chains {
            s.sampler.chains = v;
        }
        if let Some(v) = flags.warmup {
            s.sampler.warmup = v;
        }
        if let Some(v) = flags.samples {
            s.sampler.samples = v;
        }
        if let Some(v) = flags.target_accept {
            s.sampler.target_accept = v;
        }
        if let Some(v) = flags.scheme {
            s.scheme = v.into();
        }
        if flags.map {
            s.map = true;
        }
        if let Some(v) = &flags.out {
            s.out = v.clone();
        }
        if let Some(v) = flags.format {
            s.format = v;
        }
        s.sampler.validate()?;
        if !(s.beta_sd > 0.0) {
            return Err(Error::Usage("beta_sd must be positive".into()));
        }
        if !(0.0..=1.0).contains(&s.flag_threshold) {
            return Err(Error::Usage("flag_threshold must lie in [0, 1]".into()));
        }
        Ok(s)
    }

    fn fit_options(&self) -> FitOptions {
        FitOptions {
            sampler: self.sampler.clone(),
            map: self.map,
            laplace_draws: self.laplace_draws,
            scheme: self.scheme,
            irtree: IRTreeConfig { beta_sd: self.beta_sd },
            ..FitOptions::default()
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<i32> {
    let config = match &cli.global.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None => BTreeMap::new(),
    };
    let settings = Settings::resolve(&cli.global, &config)?;
    match &cli.command {
        Command::Ingest(data) => ingest(data, &settings),
        Command::Fit { data, model } => fit_command(data, model, &settings),
        Command::Diagnose { fit } => diagnose(fit, &settings),
        Command::Compare { fits } => compare(fits, &settings),
        Command::Answerkey { data, fits } => answerkey(data, fits, &settings),
        Command::Simulate {
            model,
            examiners,
            items,
            per_examiner,
            mates_fraction,
        } => simulate_command(model, *examiners, *items, *per_examiner, *mates_fraction, &settings),
    }
}

fn table_format(data: &DataArgs, settings: &Settings) -> Result<TableFormat> {
    let mut fmt = TableFormat {
        delimiter: match data.delimiter {
            Some(DelimiterArg::Comma) => b',',
            Some(DelimiterArg::Tab) => b'\t',
            None => settings.delimiter,
        },
        ..TableFormat::default()
    };
    for c in &data.columns {
        let (field, header) = c
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--column expects FIELD=HEADER, got {c:?}")))?;
        fmt.columns.set(field.trim(), header.trim())?;
    }
    Ok(fmt)
}

/// SHA-256 of the normalized table, so reformatting the input does not
/// change the identity of the data.
pub fn dataset_hash(records: &[ResponseRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_table(records, &mut buf, &TableFormat::default())?;
    Ok(hex::encode(Sha256::digest(&buf)))
}

fn load(data: &DataArgs, settings: &Settings) -> Result<(ParsedTable, String)> {
    let fmt = table_format(data, settings)?;
    let file = File::open(&data.input)?;
    let table = parse_table(std::io::BufReader::new(file), &fmt)?;
    if table.records.is_empty() {
        return Err(Error::EmptyData(format!(
            "{} has no valid rows ({} quarantined)",
            data.input.display(),
            table.quarantined.len()
        )));
    }
    let hash = dataset_hash(&table.records)?;
    Ok((table, hash))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize + ?Sized>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let file = File::open(&path).map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

fn write_rows<T: Serialize>(dir: &Path, stem: &str, rows: &[T], format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = create(dir, &format!("{stem}.csv"))?;
            write_rows_csv(rows, &mut w)?;
            w.flush()?;
            Ok(())
        }
        OutputFormat::Json => write_json(dir, &format!("{stem}.json"), rows),
    }
}

fn write_key(dir: &Path, stem: &str, key: &AnswerKey, format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Csv => {
            let mut w = create(dir, &format!("{stem}.csv"))?;
            key.write_csv(&mut w)?;
            w.flush()?;
            Ok(())
        }
        OutputFormat::Json => write_json(dir, &format!("{stem}.json"), key),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub dataset_hash: String,
    pub total_rows: usize,
    pub quarantined: usize,
    pub notes: Vec<crate::data::RowIssue>,
    pub summary: TableSummary,
    pub error_rates: ErrorRates,
}

fn ingest(data: &DataArgs, settings: &Settings) -> Result<i32> {
    let (table, hash) = load(data, settings)?;
    fs::create_dir_all(&settings.out)?;
    let mut w = create(&settings.out, "dataset.csv")?;
    write_table(&table.records, &mut w, &TableFormat::default())?;
    w.flush()?;
    let mut q = create(&settings.out, "quarantine.jsonl")?;
    table.write_quarantine_jsonl(&mut q)?;
    q.flush()?;
    let summary = summarize(&table.records);
    println!(
        "{} examiners, {} items, {} records ({} rows quarantined)",
        summary.examiners,
        summary.items,
        summary.records,
        table.quarantined.len()
    );
    let rates = error_rates(&table.records);
    let pct = |r: Option<f64>| r.map_or("n/a".to_string(), |v| format!("{:.2}%", 100.0 * v));
    println!(
        "false positive rate {} ({}/{}), false negative rate {} ({}/{})",
        pct(rates.fpr),
        rates.false_positives,
        rates.nonmate_conclusive,
        pct(rates.fnr),
        rates.false_negatives,
        rates.mate_conclusive
    );
    let report = IngestReport {
        dataset_hash: hash,
        total_rows: table.total_rows,
        quarantined: table.quarantined.len(),
        notes: table.notes,
        summary,
        error_rates: rates,
    };
    write_json(&settings.out, "ingest.json", &report)?;
    Ok(EXIT_OK)
}

/// Provenance of a stored fit, used to refuse mixing fits of different data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub model: String,
    pub dataset_hash: String,
    /// Observation grouping the pointwise likelihood refers to.
    pub grouping: String,
    pub scheme: Option<String>,
    pub method: String,
    pub sampler: SamplerConfig,
    pub beta_sd: f64,
    pub n_obs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaicReport {
    #[serde(flatten)]
    pub waic: Waic,
    pub prediction_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub divergences: usize,
    pub step_size: f64,
    pub mean_accept: f64,
    pub n_leapfrog: u64,
}

impl From<&ChainStats> for ChainReport {
    fn from(s: &ChainStats) -> Self {
        Self {
            divergences: s.divergences,
            step_size: s.step_size,
            mean_accept: s.mean_accept,
            n_leapfrog: s.n_leapfrog,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub max_rhat: Option<f64>,
    pub worst_parameter: Option<String>,
    pub min_ess: Option<f64>,
    pub divergences: usize,
    pub divergence_flag: bool,
    pub rhat_threshold: f64,
    pub chains: Vec<ChainReport>,
    pub warnings: Vec<String>,
}

impl DiagnosticsReport {
    pub fn new(summaries: &[ParamSummary], stats: &[ChainStats], divergence_flag: bool, rhat_threshold: f64) -> Self {
        let worst = summaries
            .iter()
            .filter_map(|s| s.rhat.map(|r| (r, &s.name)))
            .max_by(|a, b| a.0.total_cmp(&b.0));
        let min_ess = summaries
            .iter()
            .filter_map(|s| s.ess)
            .min_by(f64::total_cmp);
        let divergences = stats.iter().map(|s| s.divergences).sum();
        let mut warnings = Vec::new();
        if let Some((r, name)) = worst {
            if !(r <= rhat_threshold) {
                warnings.push(format!("max Rhat {r:.3} for {name} exceeds {rhat_threshold}"));
            }
        }
        if divergence_flag {
            warnings.push(format!("{divergences} divergent transitions"));
        }
        Self {
            max_rhat: worst.map(|w| w.0),
            worst_parameter: worst.map(|w| w.1.clone()),
            min_ess,
            divergences,
            divergence_flag,
            rhat_threshold,
            chains: stats.iter().map(ChainReport::from).collect(),
            warnings,
        }
    }
}

fn grouping(kind: ModelKind, model: &BuiltModel, scheme: ScoringScheme) -> String {
    let g = model.observations().grouping();
    if kind.uses_scheme() {
        format!("{g}:{}", scheme.name())
    } else {
        g
    }
}

fn parse_kind(s: &str) -> Result<ModelKind> {
    ModelKind::parse(s).ok_or_else(|| {
        let names: Vec<_> = ModelKind::ALL.iter().map(|k| k.name()).collect();
        Error::Usage(format!("unknown model {s:?}; expected one of {}", names.join(", ")))
    })
}

/// Writes everything a fit produces into `dir` and returns the convergence
/// report.
pub fn write_fit(
    dir: &Path,
    fit: &Fit,
    records: &[ResponseRecord],
    dataset_hash: &str,
    settings: &Settings,
) -> Result<DiagnosticsReport> {
    fs::create_dir_all(dir)?;
    let obs = fit.model.observations();
    let meta = FitMeta {
        model: fit.kind.name().into(),
        dataset_hash: dataset_hash.into(),
        grouping: grouping(fit.kind, &fit.model, settings.scheme),
        scheme: fit.kind.uses_scheme().then(|| settings.scheme.name().to_string()),
        method: if fit.laplace.is_some() { "laplace" } else { "nuts" }.into(),
        sampler: settings.sampler.clone(),
        beta_sd: settings.beta_sd,
        n_obs: obs.n_obs(),
    };
    write_json(dir, "meta.json", &meta)?;

    let d = &fit.draws;
    let summaries = d.summarize();
    write_rows(dir, "summary", &summaries, settings.format)?;
    if let Some(lap) = &fit.laplace {
        let mode = lap.mode_draw(fit.model.density())?;
        let point: BTreeMap<&str, f64> = mode
            .names()
            .iter()
            .map(String::as_str)
            .zip(mode.draw(0, 0).iter().copied())
            .collect();
        write_json(dir, "mode.json", &point)?;
    }
    let mut w = create(dir, "draws.csv")?;
    d.write_csv(&mut w)?;
    w.flush()?;

    let report = DiagnosticsReport::new(&summaries, &d.stats, d.divergence_flag(), settings.rhat_threshold);
    write_json(dir, "diagnostics.json", &report)?;

    let waic = WaicReport {
        waic: waic_streaming(obs, d)?,
        prediction_error: prediction_error(obs, d)?,
    };
    write_json(dir, "waic.json", &waic)?;

    let fmt = settings.format;
    match &fit.model {
        BuiltModel::Rasch(m) => {
            write_rows(dir, "proficiency", &proficiency_report(d, m.matrix(), records)?, fmt)?;
            write_rows(dir, "predictive_scores", &posterior_predictive_scores(d, m.matrix())?, fmt)?;
        }
        BuiltModel::Joint(m) => {
            write_rows(dir, "reporting_bias", &reporting_bias_report(d, m)?, fmt)?;
            write_rows(dir, "predicted_vs_observed", &predicted_vs_observed(d, m)?, fmt)?;
        }
        BuiltModel::IRTree(m) => {
            write_rows(dir, "coefficients", &coefficient_table(d, m.tree().n_nodes())?, fmt)?;
            if fit.kind == ModelKind::IRTreeKey {
                write_key(dir, "key", &irtree_key(d, m, PointEstimate::Median)?, fmt)?;
            } else {
                let flags = flag_unexpected(d, m, settings.flag_threshold)?;
                match fmt {
                    OutputFormat::Csv => {
                        let mut w = create(dir, "flags.csv")?;
                        write_flags_csv(&flags, m.tree(), &mut w)?;
                        w.flush()?;
                    }
                    OutputFormat::Json => write_json(dir, "flags.json", &flags)?,
                }
            }
        }
        BuiltModel::Consensus(m) => {
            write_key(dir, "key", &consensus_key(d, m, PointEstimate::Median)?, fmt)?;
        }
    }
    Ok(report)
}

fn fit_command(data: &DataArgs, model: &str, settings: &Settings) -> Result<i32> {
    let kind = parse_kind(model)?;
    let (table, hash) = load(data, settings)?;
    let built = build_model(kind, &table.records, settings.scheme, IRTreeConfig { beta_sd: settings.beta_sd })?;
    let fit = fit_model(kind, built, &settings.fit_options())?;
    let report = write_fit(&settings.out, &fit, &table.records, &hash, settings)?;
    println!(
        "{}: {} draws of {} parameters written to {}",
        kind.name(),
        fit.draws.n_draws(),
        fit.draws.n_params(),
        settings.out.display()
    );
    Ok(print_warnings(&report))
}

fn print_warnings(report: &DiagnosticsReport) -> i32 {
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if report.warnings.is_empty() {
        EXIT_OK
    } else {
        EXIT_CONVERGENCE
    }
}

fn read_draws(dir: &Path) -> Result<DrawSet> {
    let path = dir.join("draws.csv");
    let file = File::open(&path).map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
    DrawSet::read_csv(std::io::BufReader::new(file))
}

fn diagnose(dir: &Path, settings: &Settings) -> Result<i32> {
    let mut d = read_draws(dir)?;
    let stored: Option<DiagnosticsReport> = read_json(dir, "diagnostics.json").ok();
    let summaries = d.summarize();
    let (stats, flag) = match &stored {
        Some(r) => {
            // chain statistics do not survive the draws file
            d.stats = r
                .chains
                .iter()
                .map(|c| ChainStats {
                    divergences: c.divergences,
                    step_size: c.step_size,
                    mean_accept: c.mean_accept,
                    n_leapfrog: c.n_leapfrog,
                    ..ChainStats::default()
                })
                .collect();
            (d.stats.clone(), r.divergence_flag)
        }
        None => (Vec::new(), false),
    };
    let report = DiagnosticsReport::new(&summaries, &stats, flag, settings.rhat_threshold);
    let mut worst: Vec<&ParamSummary> = summaries.iter().filter(|s| s.rhat.is_some()).collect();
    worst.sort_by(|a, b| b.rhat.unwrap().total_cmp(&a.rhat.unwrap()));
    println!("{:<24} {:>8} {:>10}", "parameter", "rhat", "ess");
    for s in worst.iter().take(10) {
        println!(
            "{:<24} {:>8.4} {:>10.1}",
            s.name,
            s.rhat.unwrap(),
            s.ess.unwrap_or(f64::NAN)
        );
    }
    println!(
        "{} chains x {} draws, {} divergences",
        d.n_chains(),
        d.n_iter(),
        report.divergences
    );
    Ok(print_warnings(&report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub model: String,
    pub fit: String,
    pub waic: f64,
    pub se: f64,
    pub p_waic: f64,
    pub prediction_error: f64,
    /// WAIC minus the best WAIC, with the standard error of that difference.
    pub delta_waic: f64,
    pub delta_se: f64,
}

fn compare(dirs: &[PathBuf], settings: &Settings) -> Result<i32> {
    let mut fits = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let meta: FitMeta = read_json(dir, "meta.json")?;
        let waic: WaicReport = read_json(dir, "waic.json")?;
        fits.push((dir, meta, waic));
    }
    let (_, first, _) = &fits[0];
    for (dir, meta, _) in &fits[1..] {
        if meta.dataset_hash != first.dataset_hash {
            return Err(Error::Mismatch(format!("{} was fitted to different data", dir.display())));
        }
        if meta.grouping != first.grouping || meta.n_obs != first.n_obs {
            return Err(Error::Mismatch(format!(
                "{} scores observations as {} ({} obs), expected {} ({} obs)",
                dir.display(),
                meta.grouping,
                meta.n_obs,
                first.grouping,
                first.n_obs
            )));
        }
    }
    fits.sort_by(|a, b| a.2.waic.waic.total_cmp(&b.2.waic.waic));
    let best = fits[0].2.waic.clone();
    let rows = fits
        .iter()
        .map(|(dir, meta, w)| {
            let (delta, se) = waic_difference(&w.waic, &best)?;
            Ok(CompareRow {
                model: meta.model.clone(),
                fit: dir.display().to_string(),
                waic: w.waic.waic,
                se: w.waic.se,
                p_waic: w.waic.p_waic,
                prediction_error: w.prediction_error,
                delta_waic: delta,
                delta_se: se,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&settings.out)?;
    write_rows(&settings.out, "comparison", &rows, settings.format)?;
    println!(
        "{:<12} {:>12} {:>9} {:>9} {:>10} {:>9}",
        "model", "waic", "se", "p_waic", "delta", "pred_err"
    );
    for r in &rows {
        println!(
            "{:<12} {:>12.2} {:>9.2} {:>9.2} {:>10.2} {:>9.4}",
            r.model, r.waic, r.se, r.p_waic, r.delta_waic, r.prediction_error
        );
    }
    Ok(EXIT_OK)
}

fn answerkey(data: &DataArgs, dirs: &[PathBuf], settings: &Settings) -> Result<i32> {
    let (table, hash) = load(data, settings)?;
    let records = &table.records;
    let mut found: BTreeMap<&'static str, AnswerKey> = BTreeMap::new();
    for dir in dirs {
        let meta: FitMeta = read_json(dir, "meta.json")?;
        let kind = parse_kind(&meta.model)?;
        if !matches!(kind, ModelKind::Ltrm | ModelKind::Cltrm | ModelKind::Altrm | ModelKind::IRTreeKey) {
            return Err(Error::Usage(format!(
                "{} holds a {} fit, which does not produce an answer key",
                dir.display(),
                meta.model
            )));
        }
        if meta.dataset_hash != hash {
            return Err(Error::Mismatch(format!("{} was fitted to different data", dir.display())));
        }
        let model = build_model(kind, records, settings.scheme, IRTreeConfig { beta_sd: meta.beta_sd })?;
        let d = read_draws(dir)?;
        if d.names() != model.density().output_names().as_slice() {
            return Err(Error::Mismatch(format!("{} draws do not match the {} model", dir.display(), meta.model)));
        }
        let key = match &model {
            BuiltModel::Consensus(m) => consensus_key(&d, m, PointEstimate::Median)?,
            BuiltModel::IRTree(m) => irtree_key(&d, m, PointEstimate::Median)?,
            _ => unreachable!(),
        };
        found.insert(kind.name(), key);
    }
    let required = [ModelKind::Ltrm, ModelKind::Cltrm, ModelKind::Altrm, ModelKind::IRTreeKey];
    let missing: Vec<&str> = required
        .iter()
        .map(|k| k.name())
        .filter(|n| !found.contains_key(n))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Usage(format!("missing fits for: {}", missing.join(", "))));
    }
    let mut keys = vec![modal_key(&conclusiveness_data(records)?)?];
    keys.extend(required.iter().map(|k| found.remove(k.name()).unwrap()));

    fs::create_dir_all(&settings.out)?;
    for key in &keys {
        let stem = format!("key_{}", key.source.name().to_ascii_lowercase().replace('-', ""));
        write_key(&settings.out, &stem, key, settings.format)?;
    }
    let dis = disagreement_matrix(&keys)?;
    let mut w = create(&settings.out, "disagreement.csv")?;
    dis.write_matrix_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&settings.out, "disagreement_detail.csv")?;
    dis.write_detail_csv(&mut w)?;
    w.flush()?;
    let names: Vec<&str> = keys.iter().map(|k| k.source.name()).collect();
    println!("{:>8} {}", "", names.iter().map(|n| format!("{n:>8}")).collect::<String>());
    for (i, n) in names.iter().enumerate() {
        let row: String = dis.counts[i].iter().map(|c| format!("{c:>8}")).collect();
        println!("{n:>8} {row}");
    }
    Ok(EXIT_OK)
}

fn simulate_command(
    model: &str,
    examiners: usize,
    items: usize,
    per_examiner: Option<usize>,
    mates_fraction: f64,
    settings: &Settings,
) -> Result<i32> {
    let kind = parse_kind(model)?;
    let design = DesignSpec {
        n_examiners: examiners,
        n_items: items,
        assignment: per_examiner.map_or(Assignment::Complete, Assignment::RandomSubset),
        mates_fraction,
        seed: settings.sampler.seed,
    }
    .build()
    .map_err(|e| Error::Usage(e.to_string()))?;
    let params = match kind {
        ModelKind::Rasch => TruthParams::rasch(&design, 1.0, 0.0, 1.5),
        ModelKind::Joint => TruthParams::joint(&design, 1.0, 1.5, 0.5, 0.5),
        ModelKind::IRTree => TruthParams::irtree_default(&design, &TreeSpec::decision_process())?,
        ModelKind::IRTreeKey => TruthParams::irtree_default(&design, &TreeSpec::answer_key())?,
        _ => TruthParams::consensus(&design, kind.consensus_variant().unwrap()),
    };
    let sim = crate::simulate::simulate(&params, &design)?;
    fs::create_dir_all(&settings.out)?;
    let mut w = create(&settings.out, "data.csv")?;
    write_table(&sim.records, &mut w, &TableFormat::default())?;
    w.flush()?;
    write_json(&settings.out, "truth.json", &sim.truth)?;
    println!(
        "{} responses from {} examiners on {} items",
        sim.records.len(),
        examiners,
        items
    );
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing() {
        let c = parse_config("# comment\nseed = 7\n\ntarget-accept=0.9\n").unwrap();
        assert_eq!(c["seed"], "7");
        assert_eq!(c["target_accept"], "0.9");
        assert!(matches!(parse_config("seed 7"), Err(Error::Usage(_))));
    }

    #[test]
    fn flags_beat_config_beat_defaults() {
        let config = parse_config("seed=7\nchains=2\nformat=json").unwrap();
        let flags = GlobalArgs {
            seed: Some(9),
            ..GlobalArgs::default()
        };
        let s = Settings::resolve(&flags, &config).unwrap();
        assert_eq!(s.sampler.seed, 9);
        assert_eq!(s.sampler.chains, 2);
        assert_eq!(s.format, OutputFormat::Json);
        assert_eq!(s.sampler.warmup, SamplerConfig::default().warmup);
    }

    #[test]
    fn bad_config_is_usage_error() {
        let flags = GlobalArgs::default();
        for text in ["colour=red", "seed=abc", "target_accept=1.5", "scheme=maybe"] {
            let c = parse_config(text).unwrap();
            assert!(matches!(Settings::resolve(&flags, &c), Err(Error::Usage(_))), "{text}");
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Usage("x".into())), EXIT_USAGE);
        assert_eq!(exit_code(&Error::EmptyData("x".into())), EXIT_DATA);
        assert_eq!(run(["examiner-irt", "fit"]), EXIT_USAGE);
        assert_eq!(run(["examiner-irt", "--help"]), EXIT_OK);
    }
}
