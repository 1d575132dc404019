//! `cfgtune`: command-line front end for sampling, ranking, tuning and
//! comparing runs.
//!
//! Exit codes: 0 success, 1 usage error, 2 schema or environment document
//! error, 3 failure while executing the environment.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use cfgtune_core::qlearning::replay;
use cfgtune_core::*;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "cfgtune",
    version,
    about = "Configuration performance auto-tuning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a t-way covering array over the schema and write it as CSV.
    Sample(SampleArgs),
    /// Sample, measure and rank options by influence.
    Rank(RankArgs),
    /// Run one tuning strategy end to end.
    Tune(TuneArgs),
    /// Rebuild a Q-table from a recorded trace.
    Replay(ReplayArgs),
    /// Aggregate run reports per strategy against a baseline.
    Compare(CompareArgs),
    /// Generate a random schema and synthetic environment.
    SynthGen(SynthGenArgs),
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Interaction strength t.
    #[arg(long, default_value_t = 3)]
    strength: usize,
    /// Sampling levels per numerical option.
    #[arg(long, default_value_t = 4)]
    levels: usize,
    #[arg(long, default_value_t = 50)]
    candidates: usize,
    /// CSV destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    schema: PathBuf,
    #[arg(long)]
    env: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of k-means clusters.
    #[arg(long, default_value_t = 5)]
    clusters: usize,
    /// Size of the influential set.
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Exploration weight given to influential options.
    #[arg(long, default_value_t = 10.0)]
    weight: f64,
    /// Option names known to matter: a JSON array or one name per line.
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Args)]
struct RankArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// JSON ranking destination.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    stage: StageArgs,
    #[arg(long, default_value = "confrl")]
    strategy: Strategy,
    #[arg(long)]
    episodes: Option<u64>,
    #[arg(long)]
    seconds: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
    #[arg(long, default_value_t = 0.3)]
    epsilon0: f64,
    #[arg(long, default_value_t = 0.99)]
    epsilon_decay: f64,
    #[arg(long, default_value_t = 0.01)]
    epsilon_floor: f64,
    #[arg(long, default_value_t = 10)]
    steps_per_episode: u32,
    #[arg(long, default_value = "double-then-ceil")]
    increase_policy: IncreasePolicy,
    /// `default`, `random` or `file:<path>` (JSON object of option values).
    #[arg(long, default_value = "default")]
    initial_state: String,
    /// Decimal places kept when grouping measurements for state merging.
    #[arg(long, default_value_t = 0)]
    key_decimals: u32,
    /// Target measurement for convergence; computed exactly for synthetic
    /// environments when omitted.
    #[arg(long)]
    goal: Option<f64>,
    /// JSON run report destination.
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long)]
    qtable_out: Option<PathBuf>,
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// CSV learning curve destination, one row per episode.
    #[arg(long)]
    plot_data: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    schema: PathBuf,
    /// Trace written by `tune --trace-out`.
    #[arg(long)]
    trace: PathBuf,
    /// Q-table document to check the replay against.
    #[arg(long)]
    qtable: Option<PathBuf>,
    /// Destination for the rebuilt table rows (JSON).
    #[arg(long)]
    qtable_out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Run reports written by `tune --report-out`.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Strategy the deltas are expressed against (first report's by default).
    #[arg(long)]
    baseline: Option<Strategy>,
    /// CSV destination (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthGenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    options: usize,
    #[arg(long, default_value_t = 5)]
    influential: usize,
    #[arg(long, default_value_t = 0.3)]
    binary_fraction: f64,
    #[arg(long, default_value_t = 100.0)]
    base: f64,
    #[arg(long)]
    schema_out: PathBuf,
    #[arg(long)]
    env_out: PathBuf,
    /// Writes the planted influential option names as a JSON array.
    #[arg(long)]
    ground_truth_out: Option<PathBuf>,
}

/// Failure classes, one per non-zero exit code.
enum Failure {
    Usage(anyhow::Error),
    Input(anyhow::Error),
    Execution(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Input(_) => 2,
            Failure::Execution(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Input(e) | Failure::Execution(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        if e.is_environment_failure() {
            Failure::Execution(e.into())
        } else {
            Failure::Input(e.into())
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Sample(a) => sample(a),
        Command::Rank(a) => rank(a),
        Command::Tune(a) => tune(a),
        Command::Replay(a) => replay_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::SynthGen(a) => synth_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_schema(path: &Path) -> anyhow::Result<Schema> {
    parse_schema(&read(path)?).with_context(|| format!("schema {}", path.display()))
}

fn load_env(path: &Path) -> anyhow::Result<EnvSpec> {
    EnvSpec::parse(&read(path)?).with_context(|| format!("environment {}", path.display()))
}

fn load_ground_truth(path: &Path, schema: &Schema) -> anyhow::Result<Vec<String>> {
    let text = read(path)?;
    let names: Vec<String> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).with_context(|| format!("ground truth {}", path.display()))?
    } else {
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    };
    if let Some(unknown) = names.iter().find(|n| schema.index_of(n).is_none()) {
        return Err(anyhow!("ground truth names unknown option `{unknown}`"));
    }
    Ok(names)
}

/// Writes CSV to `path`, or to stdout when no path is given.
fn csv_writer(path: Option<&Path>) -> anyhow::Result<csv::Writer<Box<dyn Write>>> {
    let sink: Box<dyn Write> = match path {
        Some(p) => {
            Box::new(fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?)
        }
        None => Box::new(io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn sample(a: SampleArgs) -> CmdResult {
    let schema = load_schema(&a.schema)?;
    let params = SamplerParams {
        strength: a.strength,
        levels: a.levels,
        candidates: a.candidates,
        seed: a.seed,
    };
    let plan = build_covering_array(&schema, &params).map_err(|e| Failure::Input(e.into()))?;
    let mut w = csv_writer(a.out.as_deref())?;
    w.write_record(schema.names().iter())
        .map_err(anyhow::Error::from)?;
    for row in &plan.rows {
        w.write_record(row.values().iter().map(|v| v.to_string()))
            .map_err(anyhow::Error::from)?;
    }
    w.flush().map_err(anyhow::Error::from)?;
    eprintln!(
        "{} rows cover all feasible {}-way tuples",
        plan.rows.len(),
        plan.strength
    );
    Ok(())
}

fn ranker_params(s: &StageArgs) -> RankerParams {
    RankerParams {
        clusters: s.clusters,
        top: s.top,
        weight: s.weight,
        seed: s.seed,
    }
}

fn rank(a: RankArgs) -> CmdResult {
    let schema = load_schema(&a.stage.schema)?;
    let env = load_env(&a.stage.env)?
        .instantiate(&schema)
        .map_err(|e| Failure::Input(e.into()))?;
    let truth = match &a.stage.ground_truth {
        Some(p) => Some(load_ground_truth(p, &schema)?),
        None => None,
    };
    let sampler = SamplerParams {
        seed: a.stage.seed,
        ..SamplerParams::default()
    };
    let stage = cfgtune_core::runner::stage_one(&schema, &env, &sampler, &ranker_params(&a.stage))?;
    for (i, e) in stage.ranking.entries.iter().enumerate() {
        let mark = if i < stage.ranking.influential.len() {
            "*"
        } else {
            " "
        };
        println!("{:>3} {mark} {:<24} {:.6}", i + 1, e.option, e.score);
    }
    let map = match &truth {
        Some(t) => {
            let m =
                map_score(&stage.ranking.influential, t).map_err(|e| Failure::Input(e.into()))?;
            println!("MAP {m:.4}");
            Some(m)
        }
        None => None,
    };
    if let Some(p) = &a.report_out {
        let doc = serde_json::json!({
            "rows": stage.plan.rows.len(),
            "ranking": stage.ranking,
            "map": map,
        });
        write(
            p,
            &serde_json::to_string_pretty(&doc).map_err(anyhow::Error::from)?,
        )?;
    }
    Ok(())
}

fn parse_initial(spec: &str, schema: &Schema) -> Result<InitialState, Failure> {
    match spec {
        "default" => Ok(InitialState::Default),
        "random" => Ok(InitialState::Random),
        other => match other.strip_prefix("file:") {
            Some(path) => {
                let text = read(Path::new(path))?;
                let config = schema
                    .parse_configuration(&text)
                    .with_context(|| format!("initial state {path}"))?;
                Ok(InitialState::Config(config))
            }
            None => Err(Failure::Usage(anyhow!(
                "--initial-state must be default, random or file:<path>, got `{other}`"
            ))),
        },
    }
}

fn tune(a: TuneArgs) -> CmdResult {
    let schema = load_schema(&a.stage.schema)?;
    let spec = load_env(&a.stage.env)?;
    let env = spec
        .instantiate(&schema)
        .map_err(|e| Failure::Input(e.into()))?;
    let ground_truth = match &a.stage.ground_truth {
        Some(p) => Some(load_ground_truth(p, &schema)?),
        None => None,
    };
    let goal = match (a.goal, &env) {
        (Some(g), _) => Some(g),
        (None, AnyEnv::Synthetic(s)) => synth_optimum(s, &schema).ok().map(|(g, _)| g),
        (None, AnyEnv::External(_)) => None,
    };
    let episodes = match (a.episodes, a.seconds) {
        (None, None) => LearnerParams::default().episodes,
        (e, _) => e,
    };
    let learner = LearnerParams {
        alpha: a.alpha,
        gamma: a.gamma,
        epsilon0: a.epsilon0,
        epsilon_decay: a.epsilon_decay,
        epsilon_floor: a.epsilon_floor,
        steps_per_episode: a.steps_per_episode,
        episodes,
        seconds: a.seconds,
    };
    learner.validate().map_err(|e| Failure::Usage(e.into()))?;
    let config = RunConfig {
        strategy: a.strategy,
        seed: a.stage.seed,
        learner,
        increase_policy: a.increase_policy,
        initial: parse_initial(&a.initial_state, &schema)?,
        ranker: ranker_params(&a.stage),
        key_decimals: a.key_decimals,
        ground_truth,
        goal,
        env_digest: spec.digest(),
        trace: a.trace_out.is_some(),
        ..RunConfig::default()
    };
    let out = run_strategy(&schema, &env, &config)?;
    let r = &out.report;

    let last = r.episodes.last();
    println!("strategy            {}", r.strategy);
    println!("episodes            {}", r.episodes.len());
    if let Some(m) = r.final_window_mean {
        println!("final window mean   {m:.4}");
    }
    if let Some(b) = r.best_measurement {
        println!("best measurement    {b:.4}");
    }
    if let Some(g) = r.goal {
        println!("goal                {g:.4}");
        match r.convergence_episode {
            Some(e) => println!("converged at        episode {e}"),
            None => println!("converged at        never"),
        }
    }
    if let Some(e) = last {
        println!("distinct states     {}", e.distinct_states);
        println!("merged states       {}", e.merged_states);
        println!("evaluations         {}", e.evaluations);
    }
    if let Some(m) = r.map {
        println!("MAP                 {m:.4}");
    }
    if let Some(c) = &r.best_configuration {
        let pairs: Vec<String> = c.iter().map(|(k, v)| format!("{k}={v}")).collect();
        println!("best configuration  {}", pairs.join(" "));
    }

    if let Some(p) = &a.report_out {
        write(
            p,
            &serde_json::to_string_pretty(r).map_err(anyhow::Error::from)?,
        )?;
    }
    if let Some(p) = &a.plot_data {
        let mut w = csv_writer(Some(p))?;
        for e in &r.episodes {
            w.serialize(e).map_err(anyhow::Error::from)?;
        }
        w.flush().map_err(anyhow::Error::from)?;
    }
    match (&a.qtable_out, &out.qtable) {
        (Some(p), Some(doc)) => write(
            p,
            &serde_json::to_string_pretty(doc).map_err(anyhow::Error::from)?,
        )?,
        (Some(_), None) => eprintln!("note: {} keeps no Q-table; nothing written", r.strategy),
        _ => {}
    }
    match (&a.trace_out, &out.trace) {
        (Some(p), Some(doc)) => write(
            p,
            &serde_json::to_string_pretty(doc).map_err(anyhow::Error::from)?,
        )?,
        (Some(_), None) => eprintln!("note: {} records no trace; nothing written", r.strategy),
        _ => {}
    }
    Ok(())
}

fn replay_cmd(a: ReplayArgs) -> CmdResult {
    let schema = load_schema(&a.schema)?;
    let trace: TraceDocument = serde_json::from_str(&read(&a.trace)?)
        .with_context(|| format!("trace {}", a.trace.display()))?;
    if trace.schema_digest != schema.digest() {
        return Err(Failure::Input(anyhow!(
            "trace was recorded against schema {}, not {}",
            trace.schema_digest,
            schema.digest()
        )));
    }
    let rebuilt = replay(&trace);
    println!(
        "{} events replayed into {} rows",
        trace.events.len(),
        rebuilt.len()
    );
    if let Some(p) = &a.qtable {
        let doc: QTableDocument =
            serde_json::from_str(&read(p)?).with_context(|| format!("Q-table {}", p.display()))?;
        let (recorded, _) = doc.load(&schema).map_err(|e| Failure::Input(e.into()))?;
        if recorded.to_sorted() != rebuilt.to_sorted() {
            return Err(Failure::Input(anyhow!(
                "replayed table differs from {}",
                p.display()
            )));
        }
        println!("matches {}", p.display());
    }
    if let Some(p) = &a.qtable_out {
        let doc = serde_json::json!({
            "n_actions": rebuilt.n_actions(),
            "qtable": rebuilt.to_sorted(),
        });
        write(
            p,
            &serde_json::to_string_pretty(&doc).map_err(anyhow::Error::from)?,
        )?;
    }
    Ok(())
}

fn compare_cmd(a: CompareArgs) -> CmdResult {
    let mut reports = Vec::with_capacity(a.reports.len());
    for p in &a.reports {
        let r: RunReport =
            serde_json::from_str(&read(p)?).with_context(|| format!("report {}", p.display()))?;
        reports.push(r);
    }
    let cmp = compare(&reports, a.baseline).map_err(|e| Failure::Input(e.into()))?;
    let mut w = csv_writer(a.out.as_deref())?;
    for row in &cmp.rows {
        w.serialize(row).map_err(anyhow::Error::from)?;
    }
    w.flush().map_err(anyhow::Error::from)?;
    Ok(())
}

fn synth_gen(a: SynthGenArgs) -> CmdResult {
    if a.influential > a.options {
        return Err(Failure::Usage(anyhow!(
            "--influential ({}) exceeds --options ({})",
            a.influential,
            a.options
        )));
    }
    let (schema, spec) = generate_synthetic(&SynthGenParams {
        options: a.options,
        influential: a.influential,
        binary_fraction: a.binary_fraction,
        base: a.base,
        seed: a.seed,
    });
    write(&a.schema_out, &render_schema(&schema))?;
    let truth: Vec<String> = spec
        .influential_options()
        .iter()
        .map(|s| s.to_string())
        .collect();
    write(&a.env_out, &EnvSpec::Synthetic(spec).render())?;
    if let Some(p) = &a.ground_truth_out {
        write(
            p,
            &serde_json::to_string_pretty(&truth).map_err(anyhow::Error::from)?,
        )?;
    }
    Ok(())
}
