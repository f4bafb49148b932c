use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fogspeech::{bench, export, fixtures};
use fogspeech_core::gateway::{CrashPlan, Gateway, GatewayConfig, Pipeline, ProcessOutcome};
use fogspeech_core::ingest::InboxEvent;
use fogspeech_core::record::FeatureRecord;
use fogspeech_core::store::{RecordStore, RECORDS_FILE};
use tokio::sync::watch;

/// Speech feature gateway: ingest WAV recordings, extract acoustic
/// features, store and sync them.
#[derive(Debug, Parser)]
#[command(name = "fogspeech", version)]
struct Cli {
    /// TOML config file. FIT_* environment variables override it, and the
    /// flags below override both.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory watched for new recordings.
    #[arg(long, global = true)]
    inbox: Option<PathBuf>,
    /// Record store, sync state and rejects live here.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    /// Upload endpoint; empty disables sync.
    #[arg(long, global = true)]
    cloud_url: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Process the given WAV files (or directories of them) once.
    Process {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
    /// Watch the inbox and sync records until interrupted.
    Watch,
    /// Like watch, plus the admin HTTP endpoint.
    Serve {
        /// host:port for the admin endpoint.
        #[arg(long)]
        admin_bind: Option<String>,
    },
    /// Time feature extraction per file.
    Bench {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Timed runs per file; the median is reported.
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Where to write the JSON report [default: <data-dir>/bench.json].
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write plot-ready CSV for files or stored records.
    Export {
        #[arg(long, value_enum, default_value_t = Mode::Series)]
        mode: Mode,
        /// Output file [default: stdout].
        #[arg(long)]
        out: Option<PathBuf>,
        /// WAV paths or record ids (a unique prefix is enough).
        #[arg(required = true)]
        targets: Vec<String>,
    },
    /// Synthesize the five benchmark recordings.
    MakeFixtures {
        #[arg(long, default_value = "fixtures")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// One row per frame.
    Series,
    /// One row per file.
    Summary,
}

fn load_config(cli: &Cli) -> Result<GatewayConfig> {
    let mut cfg = GatewayConfig::layered(cli.config.as_deref(), std::env::vars())?;
    if let Some(p) = &cli.inbox {
        cfg.inbox_dir = p.clone();
    }
    if let Some(p) = &cli.data_dir {
        cfg.data_dir = p.clone();
    }
    if let Some(u) = &cli.cloud_url {
        cfg.cloud_url = u.clone();
    }
    if let Command::Serve { admin_bind: Some(a) } = &cli.command {
        cfg.admin_bind = a.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Files as given, directories expanded to their `.wav` files, all sorted.
fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            for entry in std::fs::read_dir(p).with_context(|| format!("reading {}", p.display()))? {
                let path = entry?.path();
                let is_wav = path
                    .extension()
                    .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
                if is_wav && path.is_file() {
                    out.push(path);
                }
            }
        } else {
            out.push(p.clone());
        }
    }
    out.sort();
    Ok(out)
}

fn summary_line(
    out: &mut impl Write,
    name: &dyn std::fmt::Display,
    status: &str,
    r: &FeatureRecord,
) -> std::io::Result<()> {
    writeln!(
        out,
        "{name}\t{status}\t{}\tduration_s={:.3}\tprocessing_time_s={:.4}\tmean_zcr={:.4}\tmean_sc_hz={:.1}\tmean_loudness_phon={:.2}",
        &r.record_id[..12],
        r.duration_s,
        r.processing_time_s,
        r.summary.mean_zcr,
        r.summary.mean_sc_hz,
        r.summary.mean_loudness_phon,
    )
}

fn cmd_process(cfg: &GatewayConfig, paths: &[PathBuf]) -> Result<ExitCode> {
    let paths = expand(paths)?;
    if paths.is_empty() {
        bail!("no input files");
    }
    let store = Arc::new(RecordStore::open(&cfg.data_dir)?);
    let pipeline = Pipeline::new(store);
    let mut ok = true;
    let mut stdout = std::io::stdout().lock();
    for path in &paths {
        let name = path.display();
        let event = match InboxEvent::from_path(path) {
            Ok(e) => e,
            Err(e) => {
                eprintln!("{name}: {e}");
                ok = false;
                continue;
            }
        };
        match pipeline.process(&event, cfg) {
            Ok(ProcessOutcome::Persisted(r)) => summary_line(&mut stdout, &name, "persisted", &r)?,
            Ok(ProcessOutcome::Duplicate(r)) => summary_line(&mut stdout, &name, "duplicate", &r)?,
            Ok(ProcessOutcome::Rejected { reason, moved_to }) => {
                eprintln!("{name}: rejected ({reason}); moved to {}", moved_to.display());
                ok = false;
            }
            Err(e) => {
                eprintln!("{name}: {e}");
                ok = false;
            }
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

async fn run_daemon(cfg: GatewayConfig, admin: bool) -> Result<ExitCode> {
    let gw = Gateway::open(cfg, CrashPlan::from_env())?;
    let (tx, rx) = watch::channel(false);
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            tracing::info!("shutting down");
            let _ = tx.send(true);
        }
    });
    if admin {
        gw.serve(rx).await?;
    } else {
        gw.run(rx).await?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(cfg: &GatewayConfig, paths: &[PathBuf], repeats: usize, json: Option<&Path>) -> Result<ExitCode> {
    let paths = expand(paths)?;
    let report = bench::cmd_bench(&paths, &cfg.frame, &cfg.loudness, repeats)?;
    for s in &report.skipped {
        eprintln!("{}: skipped ({})", s.path.display(), s.reason);
    }
    print!("{}", bench::render_table(&report.rows));
    let json = match json {
        Some(p) => p.to_path_buf(),
        None => {
            std::fs::create_dir_all(&cfg.data_dir)?;
            cfg.data_dir.join("bench.json")
        }
    };
    bench::write_json(&report, &json)?;
    eprintln!("wrote {}", json.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(cfg: &GatewayConfig, mode: Mode, out: Option<&Path>, targets: &[String]) -> Result<ExitCode> {
    if mode == Mode::Series && targets.len() != 1 {
        bail!("series export takes exactly one target");
    }
    let store = if cfg.data_dir.join(RECORDS_FILE).exists() {
        Some(RecordStore::open(&cfg.data_dir)?)
    } else {
        None
    };
    let items = targets
        .iter()
        .map(|t| export::resolve(t, cfg, store.as_ref()).with_context(|| format!("exporting {t}")))
        .collect::<Result<Vec<_>>>()?;
    let csv = match mode {
        Mode::Series => export::series_csv(&items[0].series),
        Mode::Summary => export::summary_csv(&items),
    };
    match out {
        Some(p) => std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => std::io::stdout().lock().write_all(csv.as_bytes())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_make_fixtures(out: &Path, seed: u64) -> Result<ExitCode> {
    for path in fixtures::make_fixtures(out, seed)? {
        let size = std::fs::metadata(&path)?.len();
        println!("{}\t{size} bytes", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Command::MakeFixtures { out, seed } = &cli.command {
        return cmd_make_fixtures(out, *seed);
    }
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Process { paths } => cmd_process(&cfg, paths),
        Command::Watch | Command::Serve { .. } => {
            let admin = matches!(cli.command, Command::Serve { .. });
            tokio::runtime::Runtime::new()?.block_on(run_daemon(cfg, admin))
        }
        Command::Bench { paths, repeats, json } => cmd_bench(&cfg, paths, *repeats, json.as_deref()),
        Command::Export { mode, out, targets } => cmd_export(&cfg, *mode, out.as_deref(), targets),
        Command::MakeFixtures { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
