use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use comgnn::comgnn::AblationConfig;
use comgnn::datagen::{self, TaskData, TaskSpec};
use comgnn::params::ParamStore;
use comgnn::training::{
    self, gradient_suite, write_atomic, ForecastModel, PreparedForecast, PreparedRanking,
    RankingModel, Report, Task, TrainConfig, TrainOutcome, BEST_CHECKPOINT, GRADCHECK_TOL,
    METRICS_FILE,
};
use comgnn::Error;

/// Like `println!`, but a closed stdout is not an error.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

const RESULTS_FILE: &str = "results.txt";
const EVAL_FILE: &str = "eval.txt";
const PREDICTIONS_FILE: &str = "predictions.csv";
const GRADCHECK_FILE: &str = "gradcheck.txt";
const PARAMS_FILE: &str = "params.txt";
const GENERATE_FILE: &str = "generate.txt";
const CONFIG_FILE: &str = "config.txt";
const DEFAULT_RUN_DIR: &str = "run";

#[derive(Parser)]
#[command(
    name = "comgnn",
    version,
    about = "Co-evolved meta graph neural networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic dataset bundle.
    Generate {
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        /// Generator spec (JSON). Its `task` field selects the task.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a bundle, writing the metric log, checkpoints and results.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory [default: <data>/run].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint on the valid and test splits.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        ckpt: CheckpointArgs,
    },
    /// Write per-candidate scores or per-node forecasts of one split.
    Predict {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        ckpt: CheckpointArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// Check analytic gradients against central differences.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List parameter names and shapes of a model.
    DescribeParams {
        #[arg(long, value_enum)]
        task: Option<TaskArg>,
        /// Bundle whose schema the model is built for [default: a generated one].
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        ablation: AblationArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    /// Training config (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Expected task; checked against the bundle.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[command(flatten)]
    ablation: AblationArgs,
}

#[derive(Args)]
struct CheckpointArgs {
    /// Parameters to load [default: <data>/run/best.ckpt].
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output directory [default: the checkpoint's directory].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Copy)]
struct AblationArgs {
    /// Collapse node and edge types.
    #[arg(long)]
    no_het: bool,
    /// Drop edge attributes and edge states.
    #[arg(long)]
    no_edge_info: bool,
    /// Replace meta attention with mean aggregation.
    #[arg(long)]
    no_meta_att: bool,
}

impl AblationArgs {
    fn apply(self, a: &mut AblationConfig) {
        if self.no_het {
            a.collapse_types = true;
        }
        if self.no_edge_info {
            a.use_edge_states = false;
        }
        if self.no_meta_att {
            a.use_meta_attention = false;
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Ranking,
    Forecast,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Ranking => Task::Ranking,
            TaskArg::Forecast => Task::Forecast,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            msg: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } => 4,
            Error::Config(_) => 2,
            Error::Schema { .. }
            | Error::Csv { .. }
            | Error::Json { .. }
            | Error::Io { .. }
            | Error::InsufficientHistory(_) => 3,
            _ => 1,
        };
        Self {
            code,
            msg: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn run(cmd: Command) -> CliResult<u8> {
    match cmd {
        Command::Generate {
            task,
            config,
            seed,
            out,
        } => generate(task, config.as_deref(), seed, &out).map(|_| 0),
        Command::Train { run, out } => {
            let out = out.unwrap_or_else(|| run.data.join(DEFAULT_RUN_DIR));
            train(&run, &out).map(|_| 0)
        }
        Command::Eval { run, ckpt } => eval(&run, &ckpt).map(|_| 0),
        Command::Predict { run, ckpt, split } => predict(&run, &ckpt, split).map(|_| 0),
        Command::Gradcheck { seed, out } => gradcheck(seed, out.as_deref()),
        Command::DescribeParams {
            task,
            data,
            config,
            ablation,
            out,
        } => describe_params(
            task,
            data.as_deref(),
            config.as_deref(),
            ablation,
            out.as_deref(),
        )
        .map(|_| 0),
    }
}

/// Removes a stale results file so a failed run leaves none behind.
fn clear(path: &Path) -> CliResult<()> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::Io {
            path: path.to_path_buf(),
            source: e,
        }
        .into()),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| {
        Error::Io {
            path: dir.to_path_buf(),
            source,
        }
        .into()
    })
}

fn generate(
    task: Option<TaskArg>,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> CliResult<()> {
    let results = out.join(GENERATE_FILE);
    clear(&results)?;
    let mut spec = match (config, task) {
        (Some(path), t) => {
            let spec = TaskSpec::load(path)?;
            if let Some(t) = t {
                if Task::from(t) != spec.task() {
                    return Err(Failure::usage("--task disagrees with the spec file"));
                }
            }
            spec
        }
        (None, Some(t)) => TaskSpec::default_for(t.into(), 0),
        (None, None) => return Err(Failure::usage("generate needs --task or --config")),
    };
    if let Some(s) = seed {
        match &mut spec {
            TaskSpec::Ranking(r) => r.seed = s,
            TaskSpec::Forecast(f) => f.seed = s,
        }
    }
    let data = datagen::generate(&spec)?;
    datagen::write_bundle(out, &spec, &data)?;
    let mut r = Report::default();
    r.push("task", spec.task().as_str());
    match &data {
        TaskData::Ranking(d) => {
            for (name, split) in training::SPLITS.iter().zip(d.splits()) {
                r.push(format!("{name}.instances"), split.instances.len());
                r.push(format!("{name}.nodes"), split.graph.num_nodes());
                r.push(format!("{name}.edges"), split.graph.num_edges());
            }
        }
        TaskData::Forecast(d) => {
            r.push("nodes", d.graph.num_nodes());
            r.push("edges", d.graph.num_edges());
            r.push("steps", d.series.len());
            for (name, split) in training::SPLITS.iter().zip(&d.splits) {
                r.push(
                    format!("{name}.steps"),
                    format!("{}..{}", split.start, split.end),
                );
            }
        }
    }
    say!("{}", r.to_text().trim_end());
    write_atomic(results, &r.to_text())?;
    Ok(())
}

/// Bundle task, checked against `--task`.
fn data_task(run: &RunArgs) -> CliResult<Task> {
    let task = datagen::bundle_task(&run.data)?;
    if let Some(t) = run.task {
        if Task::from(t) != task {
            return Err(Failure::usage(format!(
                "--task {} but the bundle holds {}",
                Task::from(t).as_str(),
                task.as_str()
            )));
        }
    }
    Ok(task)
}

/// Config from `path` or defaults, with the seed and ablation flags applied.
fn load_config(
    path: Option<&Path>,
    task: Task,
    seed: Option<u64>,
    ablation: AblationArgs,
) -> CliResult<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p, task)?,
        None => TrainConfig::new(task),
    };
    if cfg.task != task {
        return Err(Failure::usage(format!(
            "config task {} but the data is {}",
            cfg.task.as_str(),
            task.as_str()
        )));
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    ablation.apply(&mut cfg.ablation);
    cfg.validate()?;
    Ok(cfg)
}

fn train(run: &RunArgs, out: &Path) -> CliResult<()> {
    let results = out.join(RESULTS_FILE);
    clear(&results)?;
    let task = data_task(run)?;
    let cfg = load_config(run.config.as_deref(), task, run.seed, run.ablation)?;
    let data = datagen::load_bundle(&run.data, task)?;
    create_dir(out)?;
    write_atomic(out.join(CONFIG_FILE), &cfg.to_text())?;
    let start = Instant::now();
    let outcome: TrainOutcome = match &data {
        TaskData::Ranking(d) => training::train_ranking(d, &cfg, Some(out))?,
        TaskData::Forecast(d) => training::train_forecast(d, &cfg, Some(out))?,
    };
    say!(
        "trained {} ({}) for {} epochs in {:.1}s; best epoch {}",
        task.as_str(),
        cfg.ablation.label(),
        cfg.epochs,
        start.elapsed().as_secs_f64(),
        outcome.best_epoch
    );
    print_summary(&outcome.report);
    say!("metric log: {}", out.join(METRICS_FILE).display());
    write_atomic(results, &outcome.report.to_text())?;
    Ok(())
}

fn print_summary(r: &Report) {
    for (k, v) in r.entries() {
        if k.starts_with("test") || k.starts_with("valid") || k == "final_train_loss" {
            say!("  {k:<28} {v}");
        }
    }
}

/// Bundle, config and parameters named by a checkpoint invocation.
fn load_trained(
    run: &RunArgs,
    ckpt: &CheckpointArgs,
) -> CliResult<(TaskData, TrainConfig, ParamStore, PathBuf)> {
    let task = data_task(run)?;
    let path = ckpt
        .checkpoint
        .clone()
        .unwrap_or_else(|| run.data.join(DEFAULT_RUN_DIR).join(BEST_CHECKPOINT));
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let beside = dir.join(CONFIG_FILE);
    let config = run
        .config
        .clone()
        .or_else(|| beside.exists().then_some(beside));
    let cfg = load_config(config.as_deref(), task, run.seed, run.ablation)?;
    let store = ParamStore::load(&path)?;
    let data = datagen::load_bundle(&run.data, task)?;
    let out = ckpt.out.clone().unwrap_or(dir);
    Ok((data, cfg, store, out))
}

fn eval(run: &RunArgs, ckpt: &CheckpointArgs) -> CliResult<()> {
    let (data, cfg, store, out) = load_trained(run, ckpt)?;
    let results = out.join(EVAL_FILE);
    clear(&results)?;
    let report = match &data {
        TaskData::Ranking(d) => training::evaluate_ranking(d, &cfg, &store)?,
        TaskData::Forecast(d) => training::evaluate_forecast(d, &cfg, &store)?,
    };
    print_summary(&report);
    create_dir(&out)?;
    write_atomic(results, &report.to_text())?;
    Ok(())
}

fn predict(run: &RunArgs, ckpt: &CheckpointArgs, split: SplitArg) -> CliResult<()> {
    let (data, cfg, store, out) = load_trained(run, ckpt)?;
    let results = out.join(PREDICTIONS_FILE);
    clear(&results)?;
    let s = split as usize;
    let mut text = String::new();
    match &data {
        TaskData::Ranking(d) => {
            let ev = training::predict_ranking(d, &cfg, &store, s)?;
            text.push_str("instance,target,candidate,score,label\n");
            for (i, (inst, scored)) in d.splits()[s]
                .instances
                .iter()
                .zip(&ev.instances)
                .enumerate()
            {
                for ((c, sc), l) in scored.ids.iter().zip(&scored.scores).zip(&scored.labels) {
                    let _ = writeln!(text, "{i},{},{c},{sc:?},{}", inst.target, u8::from(*l));
                }
            }
            say!(
                "{} instances scored, MAP {:.4}",
                ev.instances.len(),
                ev.map()
            );
        }
        TaskData::Forecast(d) => {
            let rows = training::predict_forecast(d, &cfg, &store, s)?;
            text.push_str("step,node,horizon,prediction,target\n");
            for r in &rows {
                let _ = writeln!(
                    text,
                    "{},{},{},{:?},{:?}",
                    r.step, r.node, r.horizon, r.prediction, r.target
                );
            }
            say!("{} forecasts written", rows.len());
        }
    }
    create_dir(&out)?;
    write_atomic(&results, &text)?;
    say!("predictions: {}", results.display());
    Ok(())
}

fn gradcheck(seed: u64, out: Option<&Path>) -> CliResult<u8> {
    if let Some(dir) = out {
        clear(&dir.join(GRADCHECK_FILE))?;
    }
    let groups = gradient_suite(seed)?;
    let mut r = Report::default();
    for g in &groups {
        say!(
            "{:<32} {:>4} tensors  max rel err {:.3e}  {}",
            g.group,
            g.tensors,
            g.max_rel_err,
            if g.passed() { "ok" } else { "FAIL" }
        );
        r.push_f64(&g.group, g.max_rel_err);
    }
    let ok = groups.iter().all(|g| g.passed());
    say!(
        "{} groups, worst {:.3e}, tolerance {GRADCHECK_TOL:e}: {}",
        groups.len(),
        groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max),
        if ok { "pass" } else { "fail" }
    );
    if let Some(dir) = out {
        create_dir(dir)?;
        write_atomic(dir.join(GRADCHECK_FILE), &r.to_text())?;
    }
    Ok(if ok { 0 } else { 1 })
}

fn describe_params(
    task: Option<TaskArg>,
    data: Option<&Path>,
    config: Option<&Path>,
    ablation: AblationArgs,
    out: Option<&Path>,
) -> CliResult<()> {
    if let Some(dir) = out {
        clear(&dir.join(PARAMS_FILE))?;
    }
    let task = match (data, task) {
        (Some(d), t) => {
            let found = datagen::bundle_task(d)?;
            if t.is_some_and(|t| Task::from(t) != found) {
                return Err(Failure::usage("--task disagrees with the bundle"));
            }
            found
        }
        (None, Some(t)) => t.into(),
        (None, None) => Task::Ranking,
    };
    let cfg = load_config(config, task, None, ablation)?;
    let bundle = match data {
        Some(d) => datagen::load_bundle(d, task)?,
        None => datagen::generate(&TaskSpec::default_for(task, 0))?,
    };
    let store = match &bundle {
        TaskData::Ranking(d) => {
            let prep = PreparedRanking::new(&d.train, cfg.ablation)?;
            RankingModel::for_data(&prep, &cfg.dims, cfg.ablation, cfg.seed)?.0
        }
        TaskData::Forecast(d) => {
            let prep = PreparedForecast::new(d, &cfg.st, cfg.ablation)?;
            ForecastModel::for_data(&prep, &cfg)?.0
        }
    };
    let text = store.describe();
    say!("{}", text.trim_end());
    say!("{} tensors, {} scalars", store.len(), store.num_scalars());
    if let Some(dir) = out {
        create_dir(dir)?;
        write_atomic(dir.join(PARAMS_FILE), &text)?;
    }
    Ok(())
}
