//! Command-line front end. The binary only forwards its arguments to [`run`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{split_dataset, ClientGroupDataset};
use crate::error::{Error, Result};
use crate::eval::{
    closed_form_report, evaluate, evaluate_base, sweep, FairnessReport, GridSpec, SeedRun,
    SweepOptions,
};
use crate::lp::{build_lp, solve, LpStatus, RegionForm, SolverConfig};
use crate::oracle::{run_suite, Suite};
use crate::protocol::{run_postprocess, run_scoring, ScoreSource};
use crate::rng::RngStream;
use crate::score::{
    generate_synthetic, train_fedavg_softmax, FedAvgConfig, SharedModel, SoftmaxModel,
    SyntheticSpec, SCENARIO_PROPORTIONS,
};
use crate::spec::{FairnessSpec, Metric};
use crate::stats::{laplace_scale, DpConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED_CHECK: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "fedfair",
    version,
    about = "Locally and globally fair post-processing for federated classifiers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a softmax score model with FedAvg and write a checkpoint.
    Train(TrainArgs),
    /// Compute statistics, solve the fairness LP and write a predictor bundle and report.
    Postprocess(PostprocessArgs),
    /// Re-solve over a grid of global and local tolerances and write CSV matrices.
    Sweep(SweepArgs),
    /// Run a built-in battery of exhaustive checks.
    Oracle(OracleArgs),
    /// Write a synthetic five-client dataset.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for every random stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, validation and test fractions per client.
    #[arg(long, default_value = "0.6,0.2,0.2")]
    pub split: String,
    /// JSON configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Optional JSON file for the per-round loss log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct FairnessArgs {
    /// eo, eop or sp.
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub eps_global: Option<f64>,
    /// A single value for every client or a comma list with one value per client.
    #[arg(long)]
    pub eps_local: Option<String>,
    /// Laplace privacy budget per statistic; omit for exact statistics.
    #[arg(long)]
    pub dp_epsilon: Option<f64>,
    /// half_space or barycentric.
    #[arg(long, default_value = "half_space")]
    pub region_form: String,
    /// Evaluation passes over the test part.
    #[arg(long, default_value_t = 5)]
    pub passes: usize,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Predictor bundle output.
    #[arg(long)]
    pub out: PathBuf,
    /// Report output; defaults to the bundle path with a `.report.json` suffix.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Optional newline-delimited message transcript.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[command(flatten)]
    pub fairness: FairnessArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Score model shared by all seeds; without it each seed trains its own.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `G1,G2,...:L1,L2,...` or one list for both axes.
    #[arg(long)]
    pub grid: String,
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub fairness: FairnessArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// region, frontier or lp.
    #[arg(long)]
    pub suite: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Heterogeneity scenario 1, 2 or 3.
    #[arg(long, default_value_t = 1)]
    pub scenario: usize,
    #[arg(long, default_value_t = 2000)]
    pub samples_per_client: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// JSON configuration file; every section is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub fedavg: FedAvgConfig,
    pub fairness: Option<FairnessSpec>,
    pub dp: DpConfig,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Config::default()),
            Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
                .map_err(|e| Error::Input(format!("config: {e}"))),
        }
    }
}

/// Report written by `postprocess`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostprocessReport {
    pub spec: FairnessSpec,
    pub dp: DpConfig,
    /// Laplace scale per client, when noise was added.
    pub dp_scale: Option<Vec<f64>>,
    pub region_form: RegionForm,
    pub lp_objective: f64,
    /// Accuracy of the unmodified predictor implied by the statistics.
    pub stats_base_accuracy: f64,
    pub base: FairnessReport,
    pub report: FairnessReport,
    pub expected: FairnessReport,
    pub warnings: Vec<String>,
}

fn parse_split(text: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("bad split value `{s}`")))
        })
        .collect::<Result<_>>()?;
    let arr: [f64; 3] = v
        .try_into()
        .map_err(|_| Error::Input("split needs three fractions".into()))?;
    if (arr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Input("split fractions must sum to 1".into()));
    }
    Ok(arr)
}

fn parse_region_form(text: &str) -> Result<RegionForm> {
    match text {
        "half_space" | "halfspace" => Ok(RegionForm::HalfSpace),
        "barycentric" => Ok(RegionForm::Barycentric),
        other => Err(Error::Input(format!("unknown region form `{other}`"))),
    }
}

fn fairness_spec(
    args: &FairnessArgs,
    cfg: &Config,
    num_clients: usize,
    grid: bool,
) -> Result<FairnessSpec> {
    let base = cfg.fairness.clone();
    let metric = match (&args.metric, &base) {
        (Some(m), _) => Metric::from_tag(m)?,
        (None, Some(b)) => b.metric,
        (None, None) => return Err(Error::Input("--metric is required".into())),
    };
    if grid {
        return Ok(FairnessSpec::uniform(metric, 1.0, 1.0, num_clients));
    }
    let eps_global = args
        .eps_global
        .or(base.as_ref().map(|b| b.eps_global))
        .ok_or_else(|| Error::Input("--eps-global is required".into()))?;
    let eps_local = match (&args.eps_local, &base) {
        (Some(text), _) => {
            let v: Vec<f64> = text
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Input(format!("bad eps-local value `{s}`")))
                })
                .collect::<Result<_>>()?;
            if v.len() == 1 {
                vec![v[0]; num_clients]
            } else {
                v
            }
        }
        (None, Some(b)) => b.eps_local.clone(),
        (None, None) => return Err(Error::Input("--eps-local is required".into())),
    };
    let spec = FairnessSpec::new(metric, eps_global, eps_local);
    spec.validate(num_clients)?;
    Ok(spec)
}

fn dp_config(args: &FairnessArgs, cfg: &Config) -> Result<DpConfig> {
    let dp = match args.dp_epsilon {
        Some(e) => DpConfig::with_epsilon(e),
        None => cfg.dp,
    };
    dp.validate()?;
    Ok(dp)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Maps an error to the documented exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Infeasible { .. } => EXIT_INFEASIBLE,
        Error::Divergence { .. }
        | Error::DegenerateSimplex { .. }
        | Error::Numerical(_)
        | Error::SingularLae
        | Error::TargetOutsideHull { .. }
        | Error::MissingWeights { .. } => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, out),
        Command::Postprocess(a) => cmd_postprocess(a, out, err),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Oracle(a) => cmd_oracle(a, out),
        Command::Generate(a) => cmd_generate(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = Config::load(a.common.config.as_deref())?;
    let mut fedavg = cfg.fedavg;
    if let Some(r) = a.rounds {
        fedavg.rounds = r;
    }
    if let Some(lr) = a.learning_rate {
        fedavg.learning_rate = lr;
    }
    let data = ClientGroupDataset::load_csv(&a.data)?;
    let rng = RngStream::new(a.common.seed, "pipeline");
    let (train, _, _) = split_dataset(&data, parse_split(&a.common.split)?, &rng.derive("split"))?;
    let (model, logs) = train_fedavg_softmax(&train, &fedavg, &rng.derive("fedavg"))?;
    model.save(&a.out)?;
    for l in &logs {
        writeln!(out, "round {} loss {:.6}", l.round, l.loss)?;
    }
    if let Some(p) = &a.log {
        write_json(p, &logs)?;
    }
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(EXIT_OK)
}

fn cmd_postprocess(a: &PostprocessArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let cfg = Config::load(a.common.config.as_deref())?;
    let data = ClientGroupDataset::load_csv(&a.data)?;
    let model = SoftmaxModel::load(&a.model)?;
    if model.dim() != data.dim() {
        return Err(Error::Input(format!(
            "model expects {} features, data has {}",
            model.dim(),
            data.dim()
        )));
    }
    let classes = crate::score::ScoreModel::num_classes(&model).max(data.num_classes());
    let data = data.with_num_classes(classes)?;
    let k = data.num_clients();
    let spec = fairness_spec(&a.fairness, &cfg, k, false)?;
    let dp = dp_config(&a.fairness, &cfg)?;
    let form = parse_region_form(&a.fairness.region_form)?;
    let rng = RngStream::new(a.common.seed, "pipeline");
    let (train, val, test) =
        split_dataset(&data, parse_split(&a.common.split)?, &rng.derive("split"))?;
    let shared: SharedModel = Arc::new(model);
    let scored = run_scoring(
        &train,
        &val,
        &ScoreSource::Pretrained(shared.clone()),
        &dp,
        &rng,
    )?;
    let solver = SolverConfig::default();
    let mut post = match run_postprocess(&scored, &spec, &solver, form) {
        Ok(p) => p,
        Err(Error::Infeasible { residual }) => {
            writeln!(err, "LP infeasible (phase-one residual {residual:.3e})")?;
            if let Ok(lp) = build_lp(&scored.params, &spec, form) {
                if let Ok(sol) = solve(&lp, &solver) {
                    if let (LpStatus::Infeasible, Some(cert)) = (sol.status, sol.certificate) {
                        let program = lp.to_program();
                        let labels = row_labels(&lp);
                        writeln!(err, "certificate verified: {}", cert.verify(&program, 1e-9))?;
                        for (i, m) in cert
                            .multipliers
                            .iter()
                            .enumerate()
                            .filter(|(_, m)| m.abs() > 1e-12)
                            .take(12)
                        {
                            writeln!(
                                err,
                                "  {:>12.4e}  {}",
                                m,
                                labels.get(i).map_or("bound", String::as_str)
                            )?;
                        }
                    }
                }
            }
            return Err(Error::Infeasible { residual });
        }
        Err(e) => return Err(e),
    };
    post.predictor
        .set_model_checkpoint(Some(a.model.display().to_string()));
    post.predictor.save(&a.out)?;
    if let Some(t) = &a.transcript {
        let mut transcript = scored.transcript.clone();
        transcript
            .messages
            .extend(post.transcript.messages.iter().cloned());
        for (i, m) in transcript.messages.iter_mut().enumerate() {
            m.seq = i as u64;
        }
        transcript.write_ndjson(fs::File::create(t)?)?;
    }
    let mut report = evaluate(
        &post.predictor,
        &test,
        &rng.derive("eval"),
        a.fairness.passes,
    )?;
    report.lp_objective = Some(post.solution.accuracy_estimate);
    let dp_scale = dp.is_noisy().then(|| {
        (0..k)
            .map(|c| laplace_scale(scored.sent_stats[c].num_samples, dp.epsilon))
            .collect::<Vec<f64>>()
    });
    if let Some(s) = &dp_scale {
        report.notes.push(format!(
            "Laplace noise at epsilon {} with per-client scale {}",
            dp.epsilon,
            s.iter()
                .map(|v| format!("{v:.3e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    let full = PostprocessReport {
        spec,
        dp,
        dp_scale,
        region_form: post.region_form,
        lp_objective: post.solution.accuracy_estimate,
        stats_base_accuracy: scored.params.base_accuracy(),
        base: evaluate_base(&shared, &test, report.metric)?,
        expected: closed_form_report(&post.predictor, &scored.params)?,
        report,
        warnings: post.lp.warnings.clone(),
    };
    let report_path = a.report.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".report.json");
        PathBuf::from(p)
    });
    write_json(&report_path, &full)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&full)?)?;
    Ok(EXIT_OK)
}

fn row_labels(lp: &crate::lp::LpInstance) -> Vec<String> {
    let mut labels = Vec::new();
    for r in &lp.fairness {
        labels.push(format!("{} (upper)", r.label));
        labels.push(format!("{} (lower)", r.label));
    }
    for b in &lp.region {
        for i in 0..b.l.len() {
            labels.push(format!("region a{} c{} row {}", b.group, b.client + 1, i));
        }
    }
    labels.extend(lp.equalities.iter().map(|e| e.label.clone()));
    labels
}

fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = Config::load(a.common.config.as_deref())?;
    let data = ClientGroupDataset::load_csv(&a.data)?;
    let grid = GridSpec::parse(&a.grid)?;
    if a.seeds == 0 {
        return Err(Error::Input("--seeds must be at least 1".into()));
    }
    let spec = fairness_spec(&a.fairness, &cfg, data.num_clients(), true)?;
    let dp = dp_config(&a.fairness, &cfg)?;
    let split = parse_split(&a.common.split)?;
    let pretrained: Option<SharedModel> = match &a.model {
        Some(p) => Some(Arc::new(SoftmaxModel::load(p)?)),
        None => None,
    };
    let data = match &pretrained {
        Some(m) => {
            let classes = m.num_classes().max(data.num_classes());
            data.with_num_classes(classes)?
        }
        None => data,
    };
    let mut runs = Vec::with_capacity(a.seeds);
    for s in 0..a.seeds {
        let rng = RngStream::new(a.common.seed.wrapping_add(s as u64), "pipeline");
        let (train, val, test) = split_dataset(&data, split, &rng.derive("split"))?;
        let source = match &pretrained {
            Some(m) => ScoreSource::Pretrained(m.clone()),
            None => ScoreSource::FedAvg(cfg.fedavg.clone()),
        };
        let scored = run_scoring(&train, &val, &source, &dp, &rng)?;
        runs.push(SeedRun {
            scored,
            test,
            rng: rng.derive("eval"),
        });
    }
    let opts = SweepOptions {
        metric: spec.metric,
        solver: SolverConfig::default(),
        region_form: parse_region_form(&a.fairness.region_form)?,
        eval_passes: a.fairness.passes,
    };
    let result = sweep(&runs, &grid, &opts)?;
    fs::create_dir_all(&a.out)?;
    result.write_matrix_csv(fs::File::create(a.out.join("accuracy.csv"))?, |c| {
        c.mean_accuracy
    })?;
    result.write_matrix_csv(fs::File::create(a.out.join("lp_objective.csv"))?, |c| {
        c.mean_lp_objective
    })?;
    result.write_matrix_csv(fs::File::create(a.out.join("global_disparity.csv"))?, |c| {
        c.mean_global_disparity
    })?;
    result.write_matrix_csv(fs::File::create(a.out.join("local_disparity.csv"))?, |c| {
        c.mean_local_disparity
    })?;
    result.write_cells_csv(fs::File::create(a.out.join("cells.csv"))?)?;
    write_json(&a.out.join("sweep.json"), &result)?;
    let infeasible: usize = result.cells.iter().flatten().map(|c| c.infeasible).sum();
    writeln!(
        out,
        "{} x {} grid, {} seeds, {} infeasible runs; wrote {}",
        grid.eps_global.len(),
        grid.eps_local.len(),
        a.seeds,
        infeasible,
        a.out.display()
    )?;
    Ok(EXIT_OK)
}

fn cmd_oracle(a: &OracleArgs, out: &mut dyn Write) -> Result<i32> {
    let suite = Suite::parse(&a.suite)?;
    let lines = run_suite(suite, a.seed)?;
    let mut ok = true;
    for l in &lines {
        writeln!(
            out,
            "{} {}: {}",
            if l.pass { "PASS" } else { "FAIL" },
            l.name,
            l.detail
        )?;
        ok &= l.pass;
    }
    writeln!(
        out,
        "{} of {} checks passed",
        lines.iter().filter(|l| l.pass).count(),
        lines.len()
    )?;
    Ok(if ok { EXIT_OK } else { EXIT_FAILED_CHECK })
}

fn cmd_generate(a: &GenerateArgs, out: &mut dyn Write) -> Result<i32> {
    let fracs = SCENARIO_PROPORTIONS
        .get(a.scenario.wrapping_sub(1))
        .ok_or_else(|| Error::Input(format!("scenario must be 1, 2 or 3, got {}", a.scenario)))?;
    let spec = SyntheticSpec::five_client_scenario(fracs, a.samples_per_client);
    let (data, _) = generate_synthetic(&spec, &RngStream::new(a.seed, "generate"))?;
    data.save_csv(&a.out)?;
    writeln!(out, "wrote {} records to {}", data.len(), a.out.display())?;
    Ok(EXIT_OK)
}
