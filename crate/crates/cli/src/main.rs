use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use activellm_core::clock::{Clock, FixedClock, SystemClock};
use activellm_core::corpus::{Manifest, Pool};
use activellm_core::harness::{
    load_report, render_summary, run_experiment, write_outputs, ExperimentPlan, SimulatedOracle,
};
use activellm_core::oracle_llm::EndpointDescriptor;
use activellm_core::promptkit::{build_prompt, name_config, PromptConfig};
use activellm_core::selection_parser::Diagnostic;
use activellm_core::session::{
    labeled_records, Annotator, PendingIteration, Session, SessionConfig, SessionError, SessionEvent, SessionStatus,
    SessionStore, SubmitOutcome,
};
use activellm_core::strategies::{build_strategy, QueryStrategy, StrategyResources, StrategySpec};
use activellm_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "activellm", version, about = "LLM-driven batch selection for active learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Interactive or simulated annotation sessions backed by a state file.
    #[command(subcommand)]
    Session(SessionCommand),
    /// Simulated experiments.
    #[command(subcommand)]
    Exp(ExpCommand),
    /// Prompt inspection.
    #[command(subcommand)]
    Prompt(PromptCommand),
    /// Runs the HTTP annotation service.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Creates a session state file.
    New(NewArgs),
    /// Opens the next annotation task, or submits labels for the open one.
    Step(StepArgs),
    /// Labels with the pool's gold labels until `--budget` labels are collected.
    Run(RunArgs),
    /// Prints the session's progress.
    Status(StateArg),
    /// Writes the labeled set as JSON lines (index, text, label).
    ExportLabels(ExportArgs),
}

#[derive(Args)]
struct StateArg {
    #[arg(long)]
    state: PathBuf,
}

#[derive(Args)]
struct PromptArgs {
    /// Taxonomy code such as `B2` or `C3+index_recap`.
    #[arg(long, default_value = "B2")]
    prompt: String,
    #[arg(long)]
    selection_size: Option<usize>,
    #[arg(long)]
    presented_batch_size: Option<usize>,
}

impl PromptArgs {
    fn config(&self) -> Result<PromptConfig> {
        let mut config = PromptConfig::from_code(&self.prompt)?;
        if let Some(n) = self.selection_size {
            config.selection_size = n;
        }
        if let Some(n) = self.presented_batch_size {
            config.presented_batch_size = n;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct NewArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// `random`, `pe`, `bald`, `kmeans`, `active_llm`, `hybrid:50:pe`, ...
    #[arg(long)]
    strategy: String,
    #[arg(long)]
    budget: usize,
    #[arg(long)]
    step: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    prompt: PromptArgs,
    /// Endpoint descriptor; its generation settings are stored with the session.
    #[arg(long)]
    llm: Option<PathBuf>,
    /// Replace an existing state file.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct StepArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    llm: Option<PathBuf>,
    /// JSON lines of `{"index": i, "label": "..."}` for the open task.
    #[arg(long, conflicts_with = "simulate")]
    labels: Option<PathBuf>,
    /// Answer the new task with gold labels right away.
    #[arg(long)]
    simulate: bool,
    /// Freeze timestamps and durations, for reproducible state files.
    #[arg(long)]
    fixed_clock: bool,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    state: PathBuf,
    #[arg(long)]
    llm: Option<PathBuf>,
    /// Stop once this many labels are collected (capped by the session budget).
    #[arg(long)]
    budget: Option<usize>,
    /// Freeze timestamps and durations, for reproducible state files.
    #[arg(long)]
    fixed_clock: bool,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    state: PathBuf,
    /// Defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExpCommand {
    /// Runs every cell of a plan and writes report.json, curves.csv and labels/.
    Run {
        plan: PathBuf,
        /// Overrides the plan's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Freeze timestamps so repeated runs write identical reports.
        #[arg(long)]
        fixed_clock: bool,
    },
    /// Prints the summary table of a finished run.
    Report { dir: PathBuf },
}

#[derive(Subcommand)]
enum PromptCommand {
    /// Prints the prompt for the first instances of a pool.
    Render {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        prompt: PromptArgs,
        /// Pool index the presented window starts at.
        #[arg(long, default_value_t = 0)]
        offset: usize,
    },
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Persist sessions here.
    #[arg(long)]
    state_dir: Option<PathBuf>,
    /// Default endpoint descriptor for sessions that name none.
    #[arg(long)]
    llm: Option<PathBuf>,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value = "ACTIVELLM_TOKEN")]
    token_env: String,
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Session(cmd) => session_command(cmd),
        Command::Exp(cmd) => exp_command(cmd),
        Command::Prompt(PromptCommand::Render { manifest, prompt, offset }) => {
            render_prompt(&manifest, &prompt, offset)
        }
        Command::Serve(args) => serve(args),
    }
}

fn load_endpoint(path: Option<&Path>) -> Result<Option<EndpointDescriptor>> {
    path.map(|p| EndpointDescriptor::load(p).with_context(|| format!("loading {}", p.display()))).transpose()
}

/// A loaded session with the pool and strategy it runs on.
struct Loaded {
    store: SessionStore,
    session: Session,
    pool: Pool,
    strategy: Box<dyn QueryStrategy>,
}

fn open(state: &Path, llm: Option<&Path>, clock: Arc<dyn Clock>) -> Result<Loaded> {
    let store = SessionStore::new(state);
    let session = store.load().with_context(|| format!("loading {}", state.display()))?;
    let manifest_path =
        session.config.manifest.clone().ok_or_else(|| anyhow!("session {} records no manifest", session.id))?;
    let manifest = Manifest::load(&manifest_path)?;
    let pool = manifest.load_pool()?;
    let endpoint = load_endpoint(llm)?;
    let resources = StrategyResources::for_pool(
        &session.config.strategy,
        &manifest,
        &pool,
        &session.config.prompt,
        endpoint.as_ref(),
        clock,
    )?;
    let resources = StrategyResources { settings: session.config.settings.clone(), ..resources };
    let strategy = build_strategy(&session.config.strategy, &resources)?;
    Ok(Loaded { store, session, pool, strategy })
}

fn session_command(cmd: SessionCommand) -> Result<()> {
    match cmd {
        SessionCommand::New(args) => new_session(args),
        SessionCommand::Step(args) => step(args),
        SessionCommand::Run(args) => run(args),
        SessionCommand::Status(StateArg { state }) => {
            let session = SessionStore::new(&state).load()?;
            print_status(&session);
            Ok(())
        }
        SessionCommand::ExportLabels(args) => export_labels(args),
    }
}

fn new_session(args: NewArgs) -> Result<()> {
    if args.state.exists() && !args.force {
        bail!("{} exists; pass --force to replace it", args.state.display());
    }
    let manifest_path =
        std::fs::canonicalize(&args.manifest).with_context(|| format!("{}", args.manifest.display()))?;
    let manifest = Manifest::load(&manifest_path)?;
    manifest.load_pool()?;
    let strategy: StrategySpec = args.strategy.parse()?;
    let endpoint = load_endpoint(args.llm.as_deref())?;
    if strategy.needs_llm() && endpoint.is_none() {
        bail!("{} needs --llm", strategy.label());
    }
    let config = SessionConfig {
        manifest: Some(manifest_path),
        prompt: args.prompt.config()?,
        settings: endpoint.map(|e| e.settings).unwrap_or_default(),
        strategy,
        budget: args.budget,
        step: args.step,
        seed: args.seed,
    };
    let stem = args.state.file_stem().and_then(|s| s.to_str()).unwrap_or("session").to_string();
    let session = Session::new(stem, config)?;
    let store = SessionStore::new(&args.state);
    store.save(&session)?;
    store.record(
        SystemClock.now(),
        &SessionEvent::Created { session_id: session.id.clone(), strategy: session.config.strategy.label() },
    )?;
    println!("created session {} at {}", session.id, args.state.display());
    Ok(())
}

fn print_status(session: &Session) {
    let status = match session.status() {
        SessionStatus::AwaitingIteration => "awaiting iteration",
        SessionStatus::AwaitingLabels => "awaiting labels",
        SessionStatus::Complete => "complete",
    };
    println!(
        "{}: {} | {} | {}/{} labeled over {} iterations",
        session.id,
        session.config.strategy.label(),
        status,
        session.history.labeled_count(),
        session.config.budget,
        session.history.iterations.len()
    );
}

fn print_task(pending: &PendingIteration, pool: &Pool) {
    println!("iteration {} ({:?})", pending.iteration_number, pending.selection.status);
    for diagnostic in &pending.selection.diagnostics {
        println!("  note: {diagnostic}");
    }
    for &index in &pending.unlabeled_items() {
        println!("{index}\t{}", pool.instances()[index].display_text(pool.pair_separator()));
    }
}

fn begin(loaded: &mut Loaded, clock: &dyn Clock) -> Result<bool, SessionError> {
    match loaded.session.begin_iteration(&loaded.pool, loaded.strategy.as_mut(), clock) {
        Ok(pending) => {
            let event = SessionEvent::BatchSelected {
                iteration: pending.iteration_number,
                indices: pending.selection.indices.clone(),
                status: pending.selection.status,
                diagnostics: pending.selection.diagnostics.iter().map(Diagnostic::to_string).collect(),
            };
            let _ = loaded.store.record(clock.now(), &event);
            Ok(true)
        }
        Err(SessionError::BudgetExhausted(_) | SessionError::PoolExhausted) => Ok(false),
        Err(e) => Err(e),
    }
}

fn submit(loaded: &mut Loaded, labels: &BTreeMap<usize, String>, clock: &dyn Clock) -> Result<SubmitOutcome> {
    let iteration = loaded.session.pending.as_ref().map_or(0, |p| p.iteration_number);
    let outcome = loaded.session.submit_labels(&loaded.pool, labels)?;
    loaded
        .store
        .record(clock.now(), &SessionEvent::LabelsSubmitted { iteration, indices: labels.keys().copied().collect() })?;
    if let SubmitOutcome::Completed { iteration_number } = outcome {
        loaded.store.record(
            clock.now(),
            &SessionEvent::IterationCommitted {
                iteration: iteration_number,
                labeled_count: loaded.session.history.labeled_count(),
            },
        )?;
    }
    Ok(outcome)
}

fn gold_labels(loaded: &Loaded) -> Result<BTreeMap<usize, String>> {
    let pending = loaded.session.pending.as_ref().ok_or_else(|| anyhow!("no open task"))?;
    let indices = pending.unlabeled_items();
    let labels = SimulatedOracle.annotate(&loaded.pool, &indices)?;
    Ok(indices.into_iter().zip(labels).collect())
}

fn read_labels(path: &Path) -> Result<BTreeMap<usize, String>> {
    let raw = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut labels = BTreeMap::new();
    for (n, line) in raw.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let value: serde_json::Value = serde_json::from_str(line).with_context(|| format!("line {}", n + 1))?;
        let index = value["index"].as_u64().ok_or_else(|| anyhow!("line {}: missing index", n + 1))?;
        let label = value["label"].as_str().ok_or_else(|| anyhow!("line {}: missing label", n + 1))?;
        labels.insert(index as usize, label.to_string());
    }
    Ok(labels)
}

fn session_clock(fixed: bool) -> Arc<dyn Clock> {
    if fixed {
        Arc::new(FixedClock::default())
    } else {
        Arc::new(SystemClock)
    }
}

fn step(args: StepArgs) -> Result<()> {
    let clock = session_clock(args.fixed_clock);
    let mut loaded = open(&args.state, args.llm.as_deref(), clock.clone())?;
    if loaded.session.pending.is_none() {
        if args.labels.is_some() {
            bail!("no open task; run `session step` without --labels first");
        }
        let opened = begin(&mut loaded, clock.as_ref());
        loaded.store.save(&loaded.session)?;
        if !opened? {
            print_status(&loaded.session);
            return Ok(());
        }
        if !args.simulate {
            print_task(loaded.session.pending.as_ref().expect("task opened"), &loaded.pool);
            return Ok(());
        }
    }
    let labels = match (&args.labels, args.simulate) {
        (Some(path), _) => read_labels(path)?,
        (None, true) => gold_labels(&loaded)?,
        (None, false) => {
            print_task(loaded.session.pending.as_ref().expect("task open"), &loaded.pool);
            return Ok(());
        }
    };
    let outcome = submit(&mut loaded, &labels, clock.as_ref())?;
    loaded.store.save(&loaded.session)?;
    match outcome {
        SubmitOutcome::Partial { remaining } => println!("{} items still unlabeled: {remaining:?}", remaining.len()),
        SubmitOutcome::Completed { iteration_number } => println!("iteration {iteration_number} committed"),
    }
    print_status(&loaded.session);
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let clock = session_clock(args.fixed_clock);
    let mut loaded = open(&args.state, args.llm.as_deref(), clock.clone())?;
    let target = args.budget.unwrap_or(loaded.session.config.budget).min(loaded.session.config.budget);
    if loaded.session.pending.is_some() {
        let labels = gold_labels(&loaded)?;
        submit(&mut loaded, &labels, clock.as_ref())?;
        loaded.store.save(&loaded.session)?;
    }
    while loaded.session.history.labeled_count() < target {
        let opened = begin(&mut loaded, clock.as_ref());
        loaded.store.save(&loaded.session)?;
        if !opened? {
            break;
        }
        let labels = gold_labels(&loaded)?;
        submit(&mut loaded, &labels, clock.as_ref())?;
        loaded.store.save(&loaded.session)?;
    }
    if loaded.session.exhausted {
        let _ = loaded.store.record(clock.now(), &SessionEvent::Exhausted { reason: "pool exhausted".into() });
    }
    print_status(&loaded.session);
    Ok(())
}

fn export_labels(args: ExportArgs) -> Result<()> {
    let session = SessionStore::new(&args.state).load()?;
    let manifest =
        session.config.manifest.clone().ok_or_else(|| anyhow!("session {} records no manifest", session.id))?;
    let pool = Manifest::load(&manifest)?.load_pool()?;
    let mut out: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?),
        None => Box::new(std::io::stdout().lock()),
    };
    for record in labeled_records(&pool, &session.history) {
        writeln!(out, "{}", serde_json::to_string(&record)?)?;
    }
    Ok(())
}

fn exp_command(cmd: ExpCommand) -> Result<()> {
    match cmd {
        ExpCommand::Run { plan, out, fixed_clock } => {
            let plan = ExperimentPlan::load(&plan)?;
            let dir = out
                .or_else(|| plan.output_dir.as_ref().map(|d| plan.resolve(d)))
                .ok_or_else(|| anyhow!("plan has no output_dir; pass --out"))?;
            let clock = session_clock(fixed_clock);
            let output = run_experiment(&plan, clock)?;
            let written = write_outputs(&output, &dir)?;
            print!("{}", render_summary(&output.report));
            eprintln!("wrote {} files to {}", written.len(), dir.display());
            Ok(())
        }
        ExpCommand::Report { dir } => {
            print!("{}", render_summary(&load_report(&dir)?));
            Ok(())
        }
    }
}

fn render_prompt(manifest: &Path, args: &PromptArgs, offset: usize) -> Result<()> {
    let config = args.config()?;
    let pool = Manifest::load(manifest)?.load_pool()?;
    let end = (offset + config.presented_batch_size).min(pool.len());
    if offset >= end {
        bail!("offset {offset} is past the end of a pool of {}", pool.len());
    }
    let presented: Vec<usize> = (offset..end).collect();
    let artifact = build_prompt(&pool, &config, &presented, None)?;
    println!("{}", artifact.text);
    eprintln!(
        "{} | fingerprint {} | ~{} tokens",
        name_config(&config),
        artifact.config_fingerprint,
        artifact.estimated_token_count
    );
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let config = ServiceConfig {
        state_dir: args.state_dir,
        auth_token: std::env::var(&args.token_env).ok().filter(|t| !t.is_empty()),
        default_endpoint: load_endpoint(args.llm.as_deref())?,
        ..ServiceConfig::default()
    };
    if let Some(dir) = &config.state_dir {
        std::fs::create_dir_all(dir)?;
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(args.addr).await?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        activellm_service::serve(listener, AppState::new(config)).await?;
        Ok(())
    })
}
