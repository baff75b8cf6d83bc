//! The `specmargin` command line: `train`, `bounds`, `verify` and `report`.
//!
//! Exit status: 0 on success, 1 on a usage or input error, 2 when `verify`
//! finds a violation of the perturbation bound or its layer recursion.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{self, BoundConfig, BoundError, BoundMode, BoundReport, BOUND_REPORT_SCHEMA};
use crate::formats::{self, to_canonical_json, FormatError};
use crate::linalg::RngSeed;
use crate::manifest::{sha256_hex, RunManifest};
use crate::network::{self, LabeledDataset, NetworkError, ReluNetwork};
use crate::pacbayes::{self, PacBayesError, PacBayesEstimate, PerturbationMode, TailPoint};
use crate::trainer::{self, LossKind, TaskKind, TaskSpec, TrainConfig, TrainError};

pub const PACBAYES_REPORT_SCHEMA: &str = "pacbayes_report_v1";
pub const TRAIN_META_SCHEMA: &str = "train_meta_v1";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERIFY_FAILED: i32 = 2;

const MARGIN_PERCENTILES: [f64; 7] = [5.0, 10.0, 25.0, 50.0, 75.0, 90.0, 95.0];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    PacBayes(#[from] PacBayesError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: schema version '{found}' is not supported, expected '{expected}'")]
    SchemaVersion {
        path: String,
        found: String,
        expected: String,
    },
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "specmargin", version, about = "Norm-based generalization bounds for ReLU networks")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Master seed; every random stream is derived from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (train) or file (other commands; stdout if absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel trials.
    #[arg(long, global = true, env = "SPECMARGIN_THREADS")]
    pub threads: Option<usize>,
    /// Output format; `report` defaults to text, everything else to json.
    #[arg(long, global = true, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset and train a network on it.
    Train(TrainArgs),
    /// Compute every bound for a network, dataset and margin.
    Bounds(BoundsArgs),
    /// Check the perturbation bound and estimate the PAC-Bayes quantities.
    Verify(VerifyArgs),
    /// Tabulate one or more bound reports.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Blobs,
    RandomLabels,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    CrossEntropy,
    Hinge,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = TaskArg::Blobs)]
    pub task: TaskArg,
    /// Input dimension.
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    /// Number of classes.
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    /// Number of samples.
    #[arg(long, default_value_t = 500)]
    pub m: usize,
    /// Minimum distance between cluster centers before rescaling.
    #[arg(long, default_value_t = 8.0)]
    pub separation: f64,
    /// Layer sizes, e.g. `2,16,16,2`. Defaults to `n,16,16,k`.
    #[arg(long, value_delimiter = ',')]
    pub arch: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, value_enum, default_value_t = LossArg::CrossEntropy)]
    pub loss: LossArg,
    #[arg(long, default_value_t = 1.0)]
    pub init_scale: f64,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("margin").required(true).args(["gamma", "gamma_percentile"])))]
pub struct MarginArgs {
    /// Margin γ.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Set γ to this percentile (nearest rank) of the positive training margins.
    #[arg(long)]
    pub gamma_percentile: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Capacity,
    Traceable,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub margin: MarginArgs,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, value_enum, default_value_t = ModeArg::Capacity)]
    pub mode: ModeArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PerturbationArg {
    Raw,
    Clipped,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("noise").required(true).args(["sigma", "proof_sigma"])))]
pub struct VerifyArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub margin: MarginArgs,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Standard deviation of the Gaussian weight perturbation.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Rebalance the network and use the σ of the margin-bound argument at β̃ = β.
    #[arg(long)]
    pub proof_sigma: bool,
    #[arg(long, value_enum, default_value_t = PerturbationArg::Clipped)]
    pub perturbation: PerturbationArg,
    /// Samples for the spectral tail check (at least 100).
    #[arg(long, default_value_t = 1000)]
    pub tail_trials: usize,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Bound report files.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
}

/// Runs the tool on `std::env::args` and returns the exit status.
pub fn run() -> i32 {
    run_with_args(std::env::args_os())
}

pub fn run_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let raw: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match execute(&cli, raw) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn execute(cli: &Cli, raw: Vec<String>) -> Result<i32, CliError> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        // fails only if a pool already exists, e.g. on a second in-process run
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Train(a) => cmd_train(&cli.common, a, raw),
        Command::Bounds(a) => cmd_bounds(&cli.common, a, raw),
        Command::Verify(a) => cmd_verify(&cli.common, a, raw),
        Command::Report(a) => cmd_report(&cli.common, a),
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn json(value: &impl Serialize) -> String {
    to_canonical_json(value).expect("report serializes")
}

/// Nearest-rank percentile of an ascending slice, `p` in `(0, 100]`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// γ as the `p`-th percentile of the strictly positive margins.
pub fn gamma_from_percentile(margins: &[f64], p: f64) -> Result<f64, CliError> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(usage(format!("--gamma-percentile must lie in (0, 100], got {p}")));
    }
    let mut positive: Vec<f64> = margins.iter().copied().filter(|&m| m > 0.0).collect();
    if positive.is_empty() {
        return Err(usage(
            "no training margin is positive, so no percentile gives γ > 0; pass --gamma explicitly",
        ));
    }
    positive.sort_by(f64::total_cmp);
    Ok(nearest_rank(&positive, p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSource {
    Explicit,
    Percentile,
}

fn resolve_gamma(
    args: &MarginArgs,
    net: &ReluNetwork,
    data: &LabeledDataset,
) -> Result<(f64, GammaSource), CliError> {
    match (args.gamma, args.gamma_percentile) {
        (Some(g), _) => {
            if !(g.is_finite() && g > 0.0) {
                return Err(usage(format!("--gamma must be positive, got {g}")));
            }
            Ok((g, GammaSource::Explicit))
        }
        (None, Some(p)) => {
            let g = gamma_from_percentile(&network::margins(net, data)?, p)?;
            Ok((g, GammaSource::Percentile))
        }
        (None, None) => Err(usage("one of --gamma or --gamma-percentile is required")),
    }
}

fn load_inputs(
    weights: &Path,
    data: &Path,
    manifest: &mut RunManifest,
) -> Result<(ReluNetwork, LabeledDataset), CliError> {
    let net = formats::load_weights(weights)?;
    let ds = formats::load_dataset(data)?;
    ds.check_compatible(&net)?;
    manifest.add_input(weights)?;
    manifest.add_input(data)?;
    Ok((net, ds))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginPercentile {
    pub percentile: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub schema: String,
    pub task: TaskSpec,
    pub config: TrainConfig,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `L̂_0` on the training set.
    pub train_error: f64,
    pub margin_percentiles: Vec<MarginPercentile>,
    pub weights_sha256: String,
    pub dataset_sha256: String,
    pub manifest: RunManifest,
}

fn cmd_train(common: &CommonArgs, a: &TrainArgs, raw: Vec<String>) -> Result<i32, CliError> {
    let out = common
        .out
        .as_deref()
        .ok_or_else(|| usage("train needs --out <directory>"))?;
    let seed = RngSeed(common.seed);
    let task = TaskSpec {
        kind: match a.task {
            TaskArg::Blobs => TaskKind::GaussianBlobs,
            TaskArg::RandomLabels => TaskKind::RandomLabels,
        },
        n: a.n,
        k: a.k,
        m: a.m,
        separation: a.separation,
        seed: seed.derive(0),
    };
    let config = TrainConfig {
        architecture: a.arch.clone().unwrap_or_else(|| vec![a.n, 16, 16, a.k]),
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        loss: match a.loss {
            LossArg::CrossEntropy => LossKind::CrossEntropy,
            LossArg::Hinge => LossKind::MulticlassHinge,
        },
        init_scale: a.init_scale,
        seed: seed.derive(1),
    };
    let data = trainer::generate_dataset(&task)?;
    let outcome = trainer::train_sgd_with_history(&data, &config)?;
    let net = &outcome.network;

    let mut margins = network::margins(net, &data)?;
    margins.sort_by(f64::total_cmp);
    let margin_percentiles = MARGIN_PERCENTILES
        .iter()
        .map(|&p| MarginPercentile {
            percentile: p,
            margin: nearest_rank(&margins, p),
        })
        .collect();
    let weights_text = formats::weights_to_json(net);
    let data_text = formats::dataset_to_json(&data);

    fs::create_dir_all(out).map_err(|source| CliError::Io {
        path: out.display().to_string(),
        source,
    })?;
    write_file(&out.join("weights.json"), &weights_text)?;
    write_file(&out.join("dataset.json"), &data_text)?;

    let meta = TrainMeta {
        schema: TRAIN_META_SCHEMA.to_string(),
        initial_loss: outcome.initial_loss,
        final_loss: trainer::dataset_loss(net, &data, config.loss)?,
        train_error: network::margin_loss(net, &data, 0.0)?,
        margin_percentiles,
        weights_sha256: sha256_hex(weights_text.as_bytes()),
        dataset_sha256: sha256_hex(data_text.as_bytes()),
        manifest: RunManifest::new("train", raw)
            .with_seed("seed", common.seed)
            .with_seed("data", task.seed.0)
            .with_seed("train", config.seed.0),
        task,
        config,
    };
    write_file(&out.join("train_meta.json"), &json(&meta))?;

    match common.format.unwrap_or(OutputFormat::Json) {
        OutputFormat::Json => print!("{}", json(&meta)),
        OutputFormat::Text => {
            println!("train error (L0): {}", meta.train_error);
            println!("final loss: {}", meta.final_loss);
            for p in &meta.margin_percentiles {
                println!("margin p{}: {}", p.percentile, p.margin);
            }
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(vec![]);
            w.write_record(["percentile", "margin"])?;
            for p in &meta.margin_percentiles {
                w.write_record([p.percentile.to_string(), p.margin.to_string()])?;
            }
            print!("{}", String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8"));
        }
    }
    Ok(EXIT_OK)
}

fn cmd_bounds(common: &CommonArgs, a: &BoundsArgs, raw: Vec<String>) -> Result<i32, CliError> {
    let mut manifest = RunManifest::new("bounds", raw).with_seed("seed", common.seed);
    let (net, data) = load_inputs(&a.weights, &a.data, &mut manifest)?;
    let (gamma, _) = resolve_gamma(&a.margin, &net, &data)?;
    let mode = match a.mode {
        ModeArg::Capacity => BoundMode::Capacity,
        ModeArg::Traceable => BoundMode::Traceable,
    };
    let cfg = BoundConfig::for_data(gamma, a.delta, &data, mode)?;
    let mut report = bounds::bound_report(&net, &data, &cfg)?;
    report.manifest = Some(manifest);

    let out = common.out.as_deref();
    match common.format.unwrap_or(OutputFormat::Json) {
        OutputFormat::Json => emit(out, &json(&report))?,
        OutputFormat::Csv => emit(out, &rows_to_csv(&[ReportRow::from_report("-", &report)])?)?,
        OutputFormat::Text => emit(out, &bounds_text(&report))?,
    }
    Ok(EXIT_OK)
}

fn bounds_text(r: &BoundReport) -> String {
    let mut s = String::new();
    let mode = match r.config.mode {
        BoundMode::Capacity => "capacity",
        BoundMode::Traceable => "traceable",
    };
    s += &format!(
        "gamma {}  delta {}  m {}  B {}  d {}  h {}  mode {mode}\n",
        r.config.gamma, r.config.delta, r.config.m, r.data.radius, r.network.depth, r.network.width
    );
    s += &format!("margin loss {}  error {}\n", r.empirical.margin_loss, r.empirical.error);
    s += &format!("theorem1      {}\n", r.bounds.theorem1);
    s += &format!("bartlett_l1   {}\n", r.bounds.bartlett_l1);
    s += &format!("bartlett_l21  {}\n", r.bounds.bartlett_l21);
    s += &format!("vc            {}\n", r.bounds.vc);
    s += &format!(
        "regime {} (comp_our {}, comp_bar {})\n",
        r.regime.label.as_str(),
        r.regime.comp_our,
        r.regime.comp_bar
    );
    s += &format!("r_our {}  r_bar {}\n", r.vc_conditions.r_our, r.vc_conditions.r_bar);
    if let Some(t) = &r.traceable {
        s += &format!(
            "beta {}  beta_tilde {}  sigma {}  kl {}  cover {}\n",
            t.beta, t.beta_tilde, t.sigma, t.kl, t.cover_size
        );
    }
    for c in &r.caveats {
        s += &format!("note: {c}\n");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaTrialRecord {
    pub index: usize,
    pub seed: RngSeed,
    pub all_admissible: bool,
    pub clipped_layers: usize,
    pub observed_max_change: f64,
    pub observed_max_change_linf: f64,
    pub bound: f64,
    pub holds: bool,
    pub recursion_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Summary {
    pub trials: usize,
    pub perturbation: PerturbationMode,
    pub admissible_trials: usize,
    /// Inadmissible raw samples; the bound is not asserted on them.
    pub skipped_inadmissible: usize,
    pub violations: usize,
    /// Largest observed change divided by the bound over admissible trials.
    pub max_ratio: f64,
    pub per_trial: Vec<LemmaTrialRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionSummary {
    pub inputs_per_trial: usize,
    pub steps_checked: usize,
    pub step_failures: usize,
    pub closed_form_checked: usize,
    pub closed_form_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailSummary {
    pub h: usize,
    pub sigma: f64,
    pub trials: usize,
    pub points: Vec<TailPoint>,
    pub all_within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub gamma: f64,
    pub gamma_source: GammaSource,
    pub sigma: f64,
    pub proof_sigma: bool,
    /// `β` of the network when `proof_sigma` is set.
    pub beta: Option<f64>,
    pub trials: usize,
    pub delta: f64,
    pub tail_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub ok: bool,
    pub lemma2_violations: usize,
    pub recursion_failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacBayesReport {
    pub schema: String,
    pub config: VerifyConfig,
    pub network: bounds::NetworkSummary,
    /// Whether the checks ran on the rebalanced network.
    pub rebalanced: bool,
    pub data: bounds::DataSummary,
    pub lemma2: Lemma2Summary,
    pub recursion: RecursionSummary,
    pub tail: TailSummary,
    pub monte_carlo: PacBayesEstimate,
    pub verdict: Verdict,
    pub manifest: RunManifest,
}

struct TrialOutcome {
    record: LemmaTrialRecord,
    steps: usize,
    step_failures: usize,
    closed_checked: usize,
    closed_failures: usize,
}

fn lemma_trial(
    net: &ReluNetwork,
    data: &LabeledDataset,
    sigma: f64,
    mode: PerturbationMode,
    index: usize,
    seed: RngSeed,
) -> Result<TrialOutcome, PacBayesError> {
    let sample = pacbayes::sample_perturbation(net, sigma, seed, mode)?;
    let analysis = pacbayes::PerturbationAnalysis::new(net, &sample.perturbation)?;
    let trial = analysis.check_inputs(data.inputs())?;
    let (mut steps, mut step_failures, mut closed_checked, mut closed_failures) = (0, 0, 0, 0);
    for x in data.inputs() {
        for s in analysis.recursion(x)? {
            steps += 1;
            step_failures += usize::from(!s.step_holds);
            if let Some(ok) = s.closed_form_holds {
                closed_checked += 1;
                closed_failures += usize::from(!ok);
            }
        }
    }
    Ok(TrialOutcome {
        record: LemmaTrialRecord {
            index,
            seed,
            all_admissible: trial.all_admissible,
            clipped_layers: sample.clip_factors.iter().flatten().count(),
            observed_max_change: trial.observed_max_change,
            observed_max_change_linf: trial.observed_max_change_linf,
            bound: trial.bound,
            holds: trial.holds,
            recursion_ok: step_failures == 0 && closed_failures == 0,
        },
        steps,
        step_failures,
        closed_checked,
        closed_failures,
    })
}

fn cmd_verify(common: &CommonArgs, a: &VerifyArgs, raw: Vec<String>) -> Result<i32, CliError> {
    if a.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    if a.tail_trials < 100 {
        return Err(usage(format!("--tail-trials must be at least 100, got {}", a.tail_trials)));
    }
    let seed = RngSeed(common.seed);
    let mut manifest = RunManifest::new("verify", raw)
        .with_seed("seed", common.seed)
        .with_seed("lemma2", seed.derive(0).0)
        .with_seed("tail", seed.derive(1).0)
        .with_seed("monte_carlo", seed.derive(2).0);
    let (net, data) = load_inputs(&a.weights, &a.data, &mut manifest)?;
    let (gamma, gamma_source) = resolve_gamma(&a.margin, &net, &data)?;

    let (net, sigma, beta) = if a.proof_sigma {
        let p = pacbayes::proof_sigma(&net, data.radius(), gamma)?;
        (p.rebalanced, p.sigma, Some(p.beta))
    } else {
        let s = a.sigma.expect("clap enforces the group");
        if !(s.is_finite() && s >= 0.0) {
            return Err(usage(format!("--sigma must be non-negative, got {s}")));
        }
        (net, s, None)
    };
    let mode = match a.perturbation {
        PerturbationArg::Raw => PerturbationMode::Raw,
        PerturbationArg::Clipped => PerturbationMode::Clipped,
    };

    let lemma_seed = seed.derive(0);
    let outcomes = (0..a.trials)
        .into_par_iter()
        .map(|i| lemma_trial(&net, &data, sigma, mode, i, lemma_seed.derive(i as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let admissible: Vec<&LemmaTrialRecord> = outcomes
        .iter()
        .map(|o| &o.record)
        .filter(|r| r.all_admissible)
        .collect();
    let violations = admissible.iter().filter(|r| !r.holds).count();
    let max_ratio = admissible
        .iter()
        .filter(|r| r.bound > 0.0)
        .map(|r| r.observed_max_change / r.bound)
        .fold(0.0, f64::max);
    let recursion = RecursionSummary {
        inputs_per_trial: data.len(),
        steps_checked: outcomes.iter().map(|o| o.steps).sum(),
        step_failures: outcomes.iter().map(|o| o.step_failures).sum(),
        closed_form_checked: outcomes.iter().map(|o| o.closed_checked).sum(),
        closed_form_failures: outcomes.iter().map(|o| o.closed_failures).sum(),
    };
    let lemma2 = Lemma2Summary {
        trials: a.trials,
        perturbation: mode,
        admissible_trials: admissible.len(),
        skipped_inadmissible: a.trials - admissible.len(),
        violations,
        max_ratio,
        per_trial: outcomes.into_iter().map(|o| o.record).collect(),
    };

    let h = net.width();
    let points = pacbayes::spectral_tail_check(
        h,
        sigma,
        &pacbayes::default_tail_grid(h, sigma),
        a.tail_trials,
        seed.derive(1),
    )?;
    let tail = TailSummary {
        h,
        sigma,
        trials: a.tail_trials,
        all_within: points.iter().all(|p| p.within),
        points,
    };
    let monte_carlo = pacbayes::mc_pacbayes(&net, &data, gamma, sigma, a.trials, seed.derive(2), a.delta)?;

    let recursion_failures = recursion.step_failures + recursion.closed_form_failures;
    let verdict = Verdict {
        ok: violations == 0 && recursion_failures == 0,
        lemma2_violations: violations,
        recursion_failures,
    };
    let ok = verdict.ok;
    let report = PacBayesReport {
        schema: PACBAYES_REPORT_SCHEMA.to_string(),
        config: VerifyConfig {
            gamma,
            gamma_source,
            sigma,
            proof_sigma: a.proof_sigma,
            beta,
            trials: a.trials,
            delta: a.delta,
            tail_trials: a.tail_trials,
        },
        network: bounds::NetworkSummary {
            depth: net.depth(),
            width: net.width(),
            architecture: net.architecture(),
        },
        rebalanced: a.proof_sigma,
        data: bounds::DataSummary {
            m: data.len(),
            radius: data.radius(),
            input_dim: data.input_dim(),
            num_classes: data.num_classes(),
        },
        lemma2,
        recursion,
        tail,
        monte_carlo,
        verdict,
        manifest,
    };

    let out = common.out.as_deref();
    match common.format.unwrap_or(OutputFormat::Json) {
        OutputFormat::Json => emit(out, &json(&report))?,
        OutputFormat::Text | OutputFormat::Csv => emit(out, &verify_text(&report))?,
    }
    if !ok {
        eprintln!(
            "verification failed: {} perturbation-bound violations, {} recursion failures",
            report.verdict.lemma2_violations, report.verdict.recursion_failures
        );
        return Ok(EXIT_VERIFY_FAILED);
    }
    Ok(EXIT_OK)
}

fn verify_text(r: &PacBayesReport) -> String {
    let mc = &r.monte_carlo;
    let mut s = format!(
        "gamma {}  sigma {}  trials {}\n",
        r.config.gamma, r.config.sigma, r.config.trials
    );
    s += &format!(
        "perturbation bound: {} admissible trials, {} violations, max observed/bound {}\n",
        r.lemma2.admissible_trials, r.lemma2.violations, r.lemma2.max_ratio
    );
    s += &format!(
        "recursion: {} steps, {} failures\n",
        r.recursion.steps_checked, r.verdict.recursion_failures
    );
    s += &format!("tail check within 3 stderr everywhere: {}\n", r.tail.all_within);
    s += &format!(
        "survival {} ± {} ({}), mean perturbed margin loss {}\n",
        mc.survival_probability, mc.survival_stderr, mc.survival_basis, mc.mean_perturbed_margin_loss
    );
    match (mc.kl, mc.bound) {
        (Some(kl), Some(b)) => s += &format!("kl {kl}  bound {b}\n"),
        _ => s += "kl and bound undefined at sigma 0\n",
    }
    s
}

/// One line of the comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub report: String,
    pub mode: String,
    pub gamma: f64,
    pub m: usize,
    pub depth: usize,
    pub width: usize,
    pub margin_loss: f64,
    pub error: f64,
    pub theorem1: f64,
    pub bartlett_l1: f64,
    pub bartlett_l21: f64,
    pub vc: f64,
    pub comp_our: f64,
    pub comp_bar: f64,
    pub regime: String,
    pub sparsity: String,
    pub r_our: f64,
    pub r_bar: f64,
    pub theorem1_may_beat_vc: bool,
    pub l1_may_beat_vc: bool,
}

impl ReportRow {
    pub fn from_report(name: &str, r: &BoundReport) -> Self {
        Self {
            report: name.to_string(),
            mode: match r.config.mode {
                BoundMode::Capacity => "capacity".into(),
                BoundMode::Traceable => "traceable".into(),
            },
            gamma: r.config.gamma,
            m: r.config.m,
            depth: r.network.depth,
            width: r.network.width,
            margin_loss: r.empirical.margin_loss,
            error: r.empirical.error,
            theorem1: r.bounds.theorem1,
            bartlett_l1: r.bounds.bartlett_l1,
            bartlett_l21: r.bounds.bartlett_l21,
            vc: r.bounds.vc,
            comp_our: r.regime.comp_our,
            comp_bar: r.regime.comp_bar,
            regime: r.regime.label.as_str().into(),
            sparsity: r.regime.sparsity.clone(),
            r_our: r.vc_conditions.r_our,
            r_bar: r.vc_conditions.r_bar,
            theorem1_may_beat_vc: r.vc_conditions.theorem1_may_beat_vc,
            l1_may_beat_vc: r.vc_conditions.l1_may_beat_vc,
        }
    }
}

/// Reads a bound report, rejecting any other schema version by name.
pub fn read_bound_report(path: &Path) -> Result<BoundReport, CliError> {
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(FormatError::from)?;
    let found = value
        .get("schema")
        .and_then(|s| s.as_str())
        .unwrap_or("<missing>");
    if found != BOUND_REPORT_SCHEMA {
        return Err(CliError::SchemaVersion {
            path: path.display().to_string(),
            found: found.to_string(),
            expected: BOUND_REPORT_SCHEMA.to_string(),
        });
    }
    serde_json::from_value(value).map_err(|e| {
        FormatError::Schema {
            field: path.display().to_string(),
            message: e.to_string(),
        }
        .into()
    })
}

pub fn rows_to_csv(rows: &[ReportRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn rows_to_table(rows: &[ReportRow]) -> String {
    let header = [
        "report", "mode", "gamma", "theorem1", "bartlett_l1", "bartlett_l21", "vc", "regime",
        "r_our", "r_bar", "vc_verdict",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let verdict = match (r.theorem1_may_beat_vc, r.l1_may_beat_vc) {
                (true, true) => "both may beat vc",
                (true, false) => "theorem1 may beat vc",
                (false, true) => "l1 may beat vc",
                (false, false) => "neither beats vc",
            };
            vec![
                r.report.clone(),
                r.mode.clone(),
                format!("{:.6}", r.gamma),
                format!("{:.6}", r.theorem1),
                format!("{:.6}", r.bartlett_l1),
                format!("{:.6}", r.bartlett_l21),
                format!("{:.6}", r.vc),
                r.regime.clone(),
                format!("{:.4}", r.r_our),
                format!("{:.4}", r.r_bar),
                verdict.to_string(),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|j| body.iter().map(|row| row[j].len()).chain([header[j].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| -> String {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut s = line(header.to_vec());
    for row in &body {
        s += &line(row.iter().map(String::as_str).collect());
    }
    s
}

fn cmd_report(common: &CommonArgs, a: &ReportArgs) -> Result<i32, CliError> {
    let rows = a
        .reports
        .iter()
        .map(|p| Ok(ReportRow::from_report(&p.display().to_string(), &read_bound_report(p)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let text = match common.format.unwrap_or(OutputFormat::Text) {
        OutputFormat::Text => rows_to_table(&rows),
        OutputFormat::Csv => rows_to_csv(&rows)?,
        OutputFormat::Json => json(&rows),
    };
    emit(common.out.as_deref(), &text)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_rules() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(nearest_rank(&sorted, 50.0), 2.0);
        assert_eq!(nearest_rank(&sorted, 51.0), 3.0);
        assert_eq!(nearest_rank(&sorted, 100.0), 4.0);
        assert_eq!(nearest_rank(&sorted, 1.0), 1.0);
        assert_eq!(gamma_from_percentile(&[-1.0, 0.0, 0.5, 0.25], 50.0).unwrap(), 0.25);
        assert!(gamma_from_percentile(&[-1.0, 0.0], 50.0).is_err());
        assert!(gamma_from_percentile(&[1.0], 0.0).is_err());
        assert!(gamma_from_percentile(&[1.0], 101.0).is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn help_and_usage_exit_codes() {
        assert_eq!(run_with_args(["specmargin", "--help"]), EXIT_OK);
        assert_eq!(run_with_args(["specmargin", "--version"]), EXIT_OK);
        assert_eq!(run_with_args(["specmargin", "bogus"]), EXIT_USAGE);
        assert_eq!(run_with_args(["specmargin", "bounds", "--weights", "w.json"]), EXIT_USAGE);
    }
}
