//! The `ossa` command line: dataset generation and validation, evaluation
//! runs, report rendering and the interactive session service.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ossa_core::backends::{build_backend, BackendSettings, OutputSchema, PromptMode};
use ossa_core::eval::{render_report, run_eval, write_run_dir, Columns, EvalError, EvalOutcome, EvalSpec, MetricsReport, ReportFormat, Weighting};
use ossa_core::gen::{generate_dataset, GenConfig};
use ossa_core::oracle::{Oracle, TaskId};
use ossa_core::scene::{load_dataset, Dataset};

/// Exit status: success.
pub const EXIT_OK: i32 = 0;
/// Exit status: a backend failed during a run.
pub const EXIT_BACKEND: i32 = 1;
/// Exit status: bad configuration or unreadable input.
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Backend(_) => EXIT_BACKEND,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Backend(m) => write!(f, "backend error: {m}"),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Backend { .. } => CliError::Backend(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

/// A complete, reproducible description of one evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset file; when absent the dataset is generated from `gen`.
    pub dataset: Option<PathBuf>,
    pub gen: GenConfig,
    pub tasks: Vec<TaskId>,
    pub backend: String,
    pub modes: Vec<PromptMode>,
    pub runs: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub concurrency: usize,
    pub weighting: Weighting,
    pub backend_settings: BackendSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = EvalSpec::default();
        RunConfig {
            dataset: None,
            gen: GenConfig::default(),
            tasks: spec.tasks,
            backend: "oracle".into(),
            modes: spec.modes,
            runs: spec.runs,
            seed: spec.seed,
            out: None,
            concurrency: spec.concurrency,
            weighting: spec.weighting,
            backend_settings: BackendSettings::default(),
        }
    }
}

impl RunConfig {
    /// Read a run config, or the `config` member of a run manifest.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let inner = match value.get("config") {
            Some(c) if value.get("tool").is_some() => c.clone(),
            _ => value,
        };
        serde_json::from_value(inner).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    fn spec(&self) -> EvalSpec {
        EvalSpec {
            tasks: self.tasks.clone(),
            modes: self.modes.clone(),
            runs: self.runs,
            seed: self.seed,
            concurrency: self.concurrency,
            weighting: self.weighting,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ossa", version, about = "Object-state-sensitive table clearing: planning, evaluation and sessions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    #[command(subcommand)]
    Dataset(DatasetCommand),
    #[command(subcommand)]
    Eval(EvalCommand),
    #[command(subcommand)]
    Report(ReportCommand),
    /// Serve interactive sessions over HTTP on loopback.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Check a dataset file against the schema and catalog.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator config (JSON); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Evaluate one backend over tasks, modes and runs.
    Run(EvalArgs),
}

#[derive(Debug, Args, Default)]
pub struct EvalArgs {
    /// Run config or a previous run's manifest.json; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// t1, t2, t3 or all; repeatable.
    #[arg(long, value_delimiter = ',')]
    pub task: Vec<String>,
    #[arg(long)]
    pub backend: Option<String>,
    /// zero-shot or few-shot; repeatable.
    #[arg(long, value_delimiter = ',')]
    pub mode: Vec<String>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub p_state_omit: Option<f64>,
    #[arg(long)]
    pub p_object_miss: Option<f64>,
    /// full or state.
    #[arg(long)]
    pub schema: Option<String>,
    #[arg(long)]
    pub concurrency: Option<usize>,
    /// object or scene.
    #[arg(long)]
    pub weighting: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum ReportCommand {
    /// Render a stored report.json as a table.
    Render {
        /// A report.json file or a run directory containing one.
        #[arg(long)]
        input: PathBuf,
        /// plain, csv or markdown.
        #[arg(long, default_value = "plain")]
        format: String,
        /// all or state.
        #[arg(long, default_value = "all")]
        columns: String,
    },
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Backend used when a session does not name one.
    #[arg(long, default_value = "oracle")]
    pub backend: String,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Finished episodes are written here.
    #[arg(long)]
    pub results_dir: Option<PathBuf>,
}

fn parse_tasks(raw: &[String]) -> Result<Vec<TaskId>, CliError> {
    let mut tasks = Vec::new();
    for t in raw {
        if t.eq_ignore_ascii_case("all") {
            tasks.extend(TaskId::ALL);
        } else {
            tasks.push(t.parse().map_err(config_err)?);
        }
    }
    tasks.sort();
    tasks.dedup();
    Ok(tasks)
}

/// Defaults, then the config file, then flags.
pub fn resolve_run_config(args: &EvalArgs) -> Result<RunConfig, CliError> {
    let mut c = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(d) = &args.dataset {
        c.dataset = Some(d.clone());
    }
    if !args.task.is_empty() {
        c.tasks = parse_tasks(&args.task)?;
    }
    if let Some(b) = &args.backend {
        c.backend = b.clone();
    }
    if !args.mode.is_empty() {
        c.modes = args.mode.iter().map(|m| m.parse()).collect::<Result<_, String>>().map_err(config_err)?;
    }
    if let Some(r) = args.runs {
        c.runs = r;
    }
    if let Some(s) = args.seed {
        c.seed = s;
        c.gen.seed = s;
        c.backend_settings.seed = s;
    }
    if let Some(o) = &args.out {
        c.out = Some(o.clone());
    }
    if let Some(u) = &args.base_url {
        c.backend_settings.base_url = Some(u.clone());
    }
    if let Some(m) = &args.model {
        c.backend_settings.model = m.clone();
    }
    if let Some(p) = args.p_state_omit {
        c.backend_settings.p_state_omit = p;
    }
    if let Some(p) = args.p_object_miss {
        c.backend_settings.p_object_miss = p;
    }
    if let Some(s) = &args.schema {
        c.backend_settings.schema = s.parse::<OutputSchema>().map_err(config_err)?;
    }
    if let Some(n) = args.concurrency {
        c.concurrency = n;
    }
    if let Some(w) = &args.weighting {
        c.weighting = match w.as_str() {
            "object" => Weighting::Object,
            "scene" => Weighting::Scene,
            other => return Err(config_err(format!("unknown weighting '{other}'"))),
        };
    }
    if c.runs == 0 {
        return Err(config_err("--runs must be at least 1"));
    }
    if c.backend.ends_with("-remote") && c.backend_settings.base_url.is_none() {
        return Err(config_err(format!("backend '{}' needs --base-url", c.backend)));
    }
    Ok(c)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn obtain_dataset(oracle: &Oracle, config: &RunConfig) -> Result<Dataset, CliError> {
    match &config.dataset {
        Some(path) => load_dataset(path).map_err(config_err),
        None => generate_dataset(oracle, &config.gen).map_err(config_err),
    }
}

/// Run the evaluation described by `config` and, if `out` is set, write the
/// run directory.
pub fn cmd_eval(config: &RunConfig) -> Result<EvalOutcome, CliError> {
    let oracle = Oracle::default();
    let dataset = obtain_dataset(&oracle, config)?;
    // fail on bad backend settings before any work
    build_backend(&oracle, &config.backend, &config.backend_settings, 0).map_err(config_err)?;
    let make = |run: usize| build_backend(&oracle, &config.backend, &config.backend_settings, run);
    let outcome = run_eval(&dataset, &oracle, &config.spec(), &make)?;
    if let Some(out) = &config.out {
        let manifest = serde_json::json!({
            "tool": "ossa",
            "tool_version": env!("CARGO_PKG_VERSION"),
            "config": config,
            "dataset_sha256": sha256_hex(dataset.to_json_string().as_bytes()),
            "objects": dataset.object_count(),
            "scenes": dataset.scenes.len(),
        });
        write_run_dir(out, &outcome, &manifest)?;
    }
    Ok(outcome)
}

fn cmd_dataset_gen(args: &GenArgs) -> Result<String, CliError> {
    let mut config = match &args.config {
        Some(path) => GenConfig::load(path).map_err(config_err)?,
        None => GenConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(n) = args.scenes {
        config.scene_count = n;
    }
    let dataset = generate_dataset(&Oracle::default(), &config).map_err(config_err)?;
    dataset.save(&args.out).map_err(config_err)?;
    Ok(format!(
        "wrote {} scenes, {} objects to {}",
        dataset.scenes.len(),
        dataset.object_count(),
        args.out.display()
    ))
}

fn cmd_dataset_validate(path: &Path) -> Result<String, CliError> {
    let dataset = load_dataset(path).map_err(config_err)?;
    Ok(format!("ok: {} scenes, {} objects", dataset.scenes.len(), dataset.object_count()))
}

pub fn cmd_report_render(input: &Path, format: &str, columns: &str) -> Result<String, CliError> {
    let file = if input.is_dir() { input.join("report.json") } else { input.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| config_err(format!("{}: {e}", file.display())))?;
    let report = MetricsReport::from_json(&text).map_err(|e| config_err(format!("{}: {e}", file.display())))?;
    let format: ReportFormat = format.parse().map_err(config_err)?;
    let columns = match columns {
        "all" => Columns::All,
        "state" | "state-only" => Columns::StateOnly,
        other => return Err(config_err(format!("unknown columns '{other}' (expected all or state)"))),
    };
    render_report(&report, format, columns).map_err(config_err)
}

fn cmd_serve(args: &ServeArgs) -> Result<(), CliError> {
    let oracle = Oracle::default();
    let dataset = match &args.dataset {
        Some(p) => Some(Arc::new(load_dataset(p).map_err(config_err)?)),
        None => None,
    };
    let mut settings = BackendSettings { base_url: args.base_url.clone(), ..BackendSettings::default() };
    if let Some(m) = &args.model {
        settings.model = m.clone();
    }
    build_backend(&oracle, &args.backend, &settings, 0).map_err(config_err)?;
    let backends: ossa_service::BackendFactory =
        Arc::new(move |id: &str| build_backend(&oracle, id, &settings, 0).map(Arc::from));
    let state = ossa_service::AppState::new(ossa_service::ServiceConfig {
        dataset,
        backends,
        default_backend: args.backend.clone(),
        results_dir: args.results_dir.clone(),
    });
    let runtime = tokio::runtime::Runtime::new().map_err(config_err)?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", args.port))
            .await
            .map_err(|e| config_err(format!("cannot bind port {}: {e}", args.port)))?;
        let addr = listener.local_addr().map_err(config_err)?;
        println!("listening on http://{addr}/api");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        ossa_service::serve(listener, state, shutdown).await.map_err(config_err)
    })
}

/// Parse `args` and run; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Dataset(DatasetCommand::Gen(a)) => cmd_dataset_gen(a).map(Some),
        Command::Dataset(DatasetCommand::Validate { dataset }) => cmd_dataset_validate(dataset).map(Some),
        Command::Eval(EvalCommand::Run(a)) => resolve_run_config(a).and_then(|c| {
            let outcome = cmd_eval(&c)?;
            let table = render_report(&outcome.report, ReportFormat::Plain, Columns::All).map_err(config_err)?;
            Ok(Some(match &c.out {
                Some(out) => format!("{table}\nrun directory: {}", out.display()),
                None => table,
            }))
        }),
        Command::Report(ReportCommand::Render { input, format, columns }) => cmd_report_render(input, format, columns).map(Some),
        Command::Serve(a) => cmd_serve(a).map(|_| None),
    };
    match result {
        Ok(text) => {
            if let Some(text) = text {
                let mut out = std::io::stdout().lock();
                let _ = write!(out, "{text}");
                if !text.ends_with('\n') {
                    let _ = writeln!(out);
                }
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("ossa: {e}");
            e.exit_code()
        }
    }
}
