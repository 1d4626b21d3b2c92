use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use candor_core::config::{load_case, load_case_library, Config, LoadError};
use candor_core::provider::{FixtureScript, ProviderFactory, ScriptedFactory};
use candor_core::replay::{artifact_lines, diff_artifacts, reexecute};
use candor_core::report::session_markdown;
use candor_core::store::{replay_bytes, SessionStore};
use candor_core::transcript::{evaluate_dialog, DialogLine, TranscriptError};
use clap::{Parser, Subcommand, ValueEnum};

/// Exit codes.
const USAGE: u8 = 1;
const INVALID: u8 = 2;
const PROVIDER: u8 = 3;
const DIVERGED: u8 = 4;

#[derive(Parser)]
#[command(name = "candor", version, about = "Error-disclosure conversation practice")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured data directory.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        /// Overrides the configured listen address.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Check case files, case directories and fixture scripts.
    Validate {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Re-run a session log against a fixture script and compare artifacts.
    Replay {
        log: PathBuf,
        #[arg(long)]
        fixtures: PathBuf,
    },
    /// Score a recorded dialog without a simulated patient.
    EvalTranscript {
        dialog: PathBuf,
        #[arg(long)]
        case: PathBuf,
        /// Scripted responses; the configured providers are used otherwise.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Markdown,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

impl From<LoadError> for Failure {
    fn from(e: LoadError) -> Self {
        Failure {
            code: INVALID,
            error: e.into(),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        Failure { code: USAGE, error }
    }
}

type Outcome = Result<(), Failure>;

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut c = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(d) = &cli.data_dir {
        c.data_dir = d.clone();
    }
    Ok(c)
}

fn scripted(path: &Path) -> Result<Arc<dyn ProviderFactory>, Failure> {
    let script = FixtureScript::load(path)
        .and_then(|s| s.validate().map(|_| s))
        .with_context(|| format!("fixture script {}", path.display()))
        .map_err(fail(INVALID))?;
    Ok(Arc::new(ScriptedFactory::new(script)))
}

fn validate_file(path: &Path) -> Result<String, String> {
    let src = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let v: serde_json::Value = serde_json::from_str(&src).map_err(|e| e.to_string())?;
    if v.get("entries").is_some() {
        let s = FixtureScript::parse(&src).map_err(|e| e.to_string())?;
        s.validate().map_err(|e| e.to_string())?;
        let n = s.entries.len() + s.contexts.values().map(Vec::len).sum::<usize>();
        return Ok(format!("fixture script, {n} entries"));
    }
    let case = load_case(path).map_err(|e| match e {
        LoadError::Parse { message, .. } | LoadError::Invalid { message, .. } => message,
        other => other.to_string(),
    })?;
    Ok(format!("case {}", case.case_id.0))
}

fn validate(paths: &[PathBuf]) -> Outcome {
    let mut bad = 0;
    for p in paths {
        let result = if p.is_dir() {
            load_case_library(p)
                .map(|cs| format!("{} cases", cs.len()))
                .map_err(|e| e.to_string())
        } else {
            validate_file(p)
        };
        match result {
            Ok(what) => println!("ok      {}: {what}", p.display()),
            Err(e) => {
                bad += 1;
                println!("invalid {}: {e}", p.display());
            }
        }
    }
    if bad > 0 {
        return Err(fail(INVALID)(anyhow::anyhow!("{bad} of {} inputs invalid", paths.len())));
    }
    Ok(())
}

fn replay(config: &Config, log: &Path, fixtures: &Path) -> Outcome {
    let bytes = std::fs::read(log).with_context(|| format!("reading {}", log.display()))?;
    let original = replay_bytes(&bytes)
        .with_context(|| format!("verifying {}", log.display()))
        .map_err(fail(INVALID))?
        .entries;
    let factory = scripted(fixtures)?;
    let blobs = SessionStore::open(&config.data_dir).context("opening data directory")?;
    let work = tempfile::tempdir().context("creating work directory")?;
    let replayed = reexecute(
        &original,
        &blobs,
        factory,
        &config.templates()?,
        &config.stopwords()?,
        work.path(),
    )
    .context("re-executing session")?;
    let diffs = diff_artifacts(&artifact_lines(&original), &artifact_lines(&replayed));
    if diffs.is_empty() {
        println!("identical: {} artifacts", artifact_lines(&original).len());
        return Ok(());
    }
    for d in &diffs {
        println!("artifact {}:", d.index);
        println!("  - {}", d.expected.as_deref().unwrap_or("(none)"));
        println!("  + {}", d.actual.as_deref().unwrap_or("(none)"));
    }
    Err(fail(DIVERGED)(anyhow::anyhow!("{} artifacts differ", diffs.len())))
}

fn eval_transcript(
    config: &Config,
    dialog: &Path,
    case: &Path,
    fixtures: Option<&Path>,
    format: Format,
    out: Option<&Path>,
) -> Outcome {
    let case = load_case(case).map_err(|e| fail(INVALID)(e.into()))?;
    let src = std::fs::read_to_string(dialog).with_context(|| format!("reading {}", dialog.display()))?;
    let lines: Vec<DialogLine> = serde_json::from_str(&src)
        .with_context(|| format!("parsing {}", dialog.display()))
        .map_err(fail(INVALID))?;
    let factory = match fixtures {
        Some(p) => scripted(p)?,
        None => config.provider.build().context("configuring providers")?,
    };
    let providers = factory.session("eval-transcript");
    let templates = config.templates()?;
    let eval = evaluate_dialog(providers.chat.as_ref(), &templates, &case, &lines).map_err(|e| {
        let code = match e {
            TranscriptError::Provider(_) => PROVIDER,
            TranscriptError::Evaluation(_) => USAGE,
            _ => INVALID,
        };
        fail(code)(e.into())
    })?;
    let text = match format {
        Format::Json => serde_json::to_string_pretty(&eval).context("serializing")? + "\n",
        Format::Markdown => session_markdown(&eval.turns, &eval.feedback, Some(&eval.overall)),
    };
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    let config = load_config(&cli).map_err(fail(INVALID))?;
    match cli.command {
        Command::Serve { bind } => {
            let mut config = config;
            if let Some(b) = bind {
                config.bind = b;
            }
            let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
            rt.block_on(candor_api::serve(&config)).map_err(|e| {
                let code = match e {
                    candor_api::StartError::Provider(_) | candor_api::StartError::Load(_) => INVALID,
                    _ => USAGE,
                };
                fail(code)(e.into())
            })
        }
        Command::Validate { paths } => validate(&paths),
        Command::Replay { log, fixtures } => replay(&config, &log, &fixtures),
        Command::EvalTranscript {
            dialog,
            case,
            fixtures,
            format,
            out,
        } => eval_transcript(&config, &dialog, &case, fixtures.as_deref(), format, out.as_deref()),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .with_ansi(std::io::stderr().is_terminal())
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
