//! `evoforge`: run, resume and inspect temporal self-play runs.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use evoforge_core::{PipelineConfig, RewardWeights, VideoRef};
use evoforge_engine::mock::{MockBackend, MockEngine, MockScript};
use evoforge_engine::modelclient::{Endpoint, EndpointConfig};
use evoforge_engine::pipeline::metrics::{compute_iteration_metrics, write_report};
use evoforge_engine::pipeline::store::{
    parse_jsonl, read_dataset, read_json, read_videos, write_videos, RunLayout,
};
use evoforge_engine::pipeline::{Phase, RunState};
use evoforge_engine::score::{score_solver_outputs, ScoreInput};
use evoforge_engine::{serve_mock, Clients, Runner};

const API_KEY_VAR: &str = "EVOFORGE_API_KEY";

#[derive(Parser)]
#[command(name = "evoforge", version, about = "Temporal self-play between a Questioner and a Solver video model")]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Source {
    /// Pipeline config (TOML). Relative paths inside it resolve against its directory.
    #[arg(long)]
    config: PathBuf,
    /// Use only the first N videos.
    #[arg(long)]
    max_videos: Option<usize>,
    /// Serve both roles from this mock script in-process instead of the configured endpoints.
    #[arg(long)]
    mock_script: Option<PathBuf>,
    /// Seed for the in-process mock.
    #[arg(long, default_value_t = 0)]
    mock_seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Start a run, or continue one with --resume.
    Run {
        #[command(flatten)]
        source: Source,
        /// Continue the run with this id from its last finished step.
        #[arg(long, value_name = "RUN_ID")]
        resume: Option<String>,
        /// Stop after this many steps (the run stays resumable).
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Phase 2 only: build a curated dataset for one iteration.
    Curate {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 1)]
        iteration: u32,
        /// Write under this run id instead of the configured one.
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Recompute Solver rewards for stored outputs against a curated dataset.
    Score {
        /// JSONL of solver batch records or {video_id, question, completion} lines.
        #[arg(long)]
        input: PathBuf,
        /// Curated dataset (JSONL).
        #[arg(long)]
        dataset: PathBuf,
        /// Take reward weights from this config instead of the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a scripted OpenAI-compatible chat endpoint.
    MockServe {
        #[arg(long)]
        script: PathBuf,
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Write per-step, curation and histogram tables as CSV.
    Report {
        /// Run id (resolved through --config) or a run directory.
        #[arg(long)]
        run: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory; defaults to <run>/report.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a JSONL list of synthetic videos (frames/<id>/<index>.jpg).
    MakeVideos {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 2.0)]
        fps: f64,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::INFO,
        1 => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(dispatch(cli.command))
}

async fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            source,
            resume,
            max_steps,
        } => run(source, resume, max_steps).await,
        Command::Curate {
            source,
            iteration,
            run_id,
        } => curate(source, iteration, run_id).await,
        Command::Score {
            input,
            dataset,
            config,
            out,
        } => score(&input, &dataset, config.as_deref(), out.as_deref()),
        Command::MockServe {
            script,
            port,
            seed,
            host,
        } => mock_serve(&script, &host, port, seed).await,
        Command::Report { run, config, out } => report(&run, config.as_deref(), out.as_deref()),
        Command::MakeVideos {
            out,
            count,
            frames,
            fps,
        } => {
            let videos: Vec<VideoRef> = (0..count)
                .map(|i| VideoRef::synthetic(format!("vid{i:04}"), frames, fps))
                .collect();
            write_videos(&out, &videos)?;
            println!("wrote {count} videos to {}", out.display());
            Ok(())
        }
    }
}

/// A loaded config plus the directory its relative paths resolve against.
struct Loaded {
    cfg: PipelineConfig,
    base: PathBuf,
}

impl Loaded {
    fn load(path: &Path) -> Result<Self> {
        let cfg = PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { cfg, base })
    }

    fn resolve(&self, path: impl AsRef<Path>) -> PathBuf {
        let path = path.as_ref();
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }

    fn run_dir(&self) -> PathBuf {
        self.resolve(&self.cfg.run_root).join(self.cfg.run_id())
    }
}

fn clients(cfg: &PipelineConfig, mock: Option<(&Path, u64)>) -> Result<Clients> {
    let api_key = std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty());
    let questioner = EndpointConfig::questioner(cfg, api_key.clone());
    let solver = EndpointConfig::solver(cfg, api_key);
    Ok(match mock {
        Some((script, seed)) => {
            let script = MockScript::load(script).with_context(|| format!("loading {}", script.display()))?;
            let backend = Arc::new(MockBackend::new(Arc::new(MockEngine::new(script, seed))));
            Clients::new(Endpoint::new(questioner, backend.clone()), Endpoint::new(solver, backend))
        }
        None => Clients::new(Endpoint::http(questioner)?, Endpoint::http(solver)?),
    })
}

fn prepare(source: &Source, run_id: Option<String>) -> Result<(Loaded, Runner)> {
    let mut loaded = Loaded::load(&source.config)?;
    if source.max_videos.is_some() {
        loaded.cfg.max_videos = source.max_videos;
    }
    // pin the id so the stored config does not depend on how it was chosen
    loaded.cfg.run_id = Some(run_id.unwrap_or_else(|| loaded.cfg.run_id()));
    let videos_path = loaded.resolve(&loaded.cfg.videos);
    let videos = read_videos(&videos_path)?;
    let mock_script = source.mock_script.as_deref().map(|p| (p, source.mock_seed));
    let clients = clients(&loaded.cfg, mock_script)?;
    let runner = Runner::new(loaded.cfg.clone(), clients, videos, loaded.run_dir())?;
    Ok((loaded, runner))
}

async fn run(source: Source, resume: Option<String>, max_steps: Option<usize>) -> Result<()> {
    let resuming = resume.is_some();
    let (loaded, runner) = prepare(&source, resume)?;
    let state = runner.run_until(resuming, max_steps).await?;
    let dir = loaded.run_dir();
    match state.completed {
        Some(_) if state.finished => println!("run {} finished in {}", state.run_id, dir.display()),
        Some(last) => println!(
            "run {} stopped after iteration {} {} step {}; continue with --resume {}",
            state.run_id, last.iteration, last.phase, last.step, state.run_id
        ),
        None => println!("run {} has not finished a step yet", state.run_id),
    }
    println!("{} batches emitted", state.batches.len());
    Ok(())
}

async fn curate(source: Source, iteration: u32, run_id: Option<String>) -> Result<()> {
    let (_, runner) = prepare(&source, run_id)?;
    let outcome = runner.curate(iteration).await?;
    let s = &outcome.stats;
    println!(
        "iteration {iteration}: kept {} of {} videos ({} too short, {} malformed questions, {} without answers, {} out of band)",
        s.kept, s.videos, s.skipped_short, s.format_rejected, s.no_valid_answers, s.out_of_band
    );
    if let Some(rate) = s.yield_rate() {
        println!("yield {:.1}%", 100.0 * rate);
    }
    println!("dataset: {}", runner.layout().curated(iteration).display());
    Ok(())
}

fn score(input: &Path, dataset: &Path, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let weights = match config {
        Some(path) => RewardWeights::from(&Loaded::load(path)?.cfg),
        None => RewardWeights::from(&PipelineConfig::default()),
    };
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let inputs: Vec<ScoreInput> = parse_jsonl(input, &text)?;
    let examples = read_dataset(dataset)?;
    let scored = score_solver_outputs(&inputs, &examples, &weights)?;

    let mut sink: Box<dyn Write> = match out {
        Some(path) => Box::new(std::io::BufWriter::new(
            std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(std::io::stdout().lock()),
    };
    for row in &scored {
        serde_json::to_writer(&mut sink, row)?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    if !scored.is_empty() {
        let mean = scored.iter().map(|s| s.reward.total).sum::<f64>() / scored.len() as f64;
        let correct = scored.iter().filter(|s| s.reward.accuracy == 1).count();
        eprintln!("{} outputs, {correct} correct, mean reward {mean:.4}", scored.len());
    }
    Ok(())
}

async fn mock_serve(script: &Path, host: &str, port: u16, seed: u64) -> Result<()> {
    let script = MockScript::load(script).with_context(|| format!("loading {}", script.display()))?;
    let addr: SocketAddr = format!("{host}:{port}").parse().context("host and port")?;
    let server = serve_mock(script, seed, addr).await?;
    println!("listening on {}", server.base_url());
    tokio::signal::ctrl_c().await?;
    server.shutdown().await?;
    Ok(())
}

fn report(run: &str, config: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let dir = match config {
        Some(path) if !Path::new(run).is_dir() => {
            let mut loaded = Loaded::load(path)?;
            loaded.cfg.run_id = Some(run.to_string());
            loaded.run_dir()
        }
        _ => PathBuf::from(run),
    };
    let layout = RunLayout::new(&dir);
    if !layout.state().exists() {
        bail!("{} is not a run directory (pass --config to resolve a run id)", dir.display());
    }
    let cfg: PipelineConfig = read_json(&layout.config())?;
    let state: RunState = read_json(&layout.state())?;
    let finished_iterations = match state.completed {
        Some(last) if last.phase == Phase::Solver && last.step == cfg.steps_per_phase => last.iteration,
        Some(last) => last.iteration - 1,
        None => 0,
    };
    let metrics = (1..=finished_iterations)
        .map(|i| compute_iteration_metrics(&layout, i, cfg.steps_per_phase))
        .collect::<Result<Vec<_>, _>>()?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| dir.join("report"));
    for path in write_report(&metrics, &out)? {
        println!("{}", path.display());
    }
    for m in &metrics {
        let mean = |steps: &[evoforge_engine::pipeline::metrics::StepMetrics]| {
            let values: Vec<f64> = steps.iter().filter_map(|s| s.mean_total).collect();
            (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
        };
        println!(
            "iteration {}: questioner mean reward {}, solver mean reward {}, curation yield {}",
            m.iteration,
            fmt_opt(mean(&m.questioner_steps)),
            fmt_opt(mean(&m.solver_steps)),
            fmt_opt(m.curation_yield),
        );
    }
    Ok(())
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"))
}
