//! Command-line front door. Every command prints machine-readable JSON on
//! stdout; failures print a JSON error object on stderr and exit nonzero
//! (1 usage/config, 2 runtime, 3 data integrity).

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use scorestream::broker::Broker;
use scorestream::config::PipelineConfig;
use scorestream::error::{Error, Result};
use scorestream::pipeline;
use scorestream::stream::EngineControl;
use scorestream::synth::generate_synthetic_corpus;
use scorestream::tsdb::Tsdb;
use scorestream_core::alerts::AlertRule;
use scorestream_core::series::{rolling_bands, Aggregator};

#[derive(Parser)]
#[command(
    name = "scorestream",
    about = "Document-score learning and real-time prediction pipeline",
    version
)]
struct Cli {
    /// Pipeline config file (TOML).
    #[arg(long, global = true, env = "SCORESTREAM_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train embeddings and regressors from the labeled corpus, persist
    /// artifacts, and print the run report.
    Train,
    /// Serve real-time predictions until interrupted or the stop file
    /// appears.
    Serve,
    /// Publish JSON-line documents to the broker topic ("-" reads stdin).
    Publish { file: String },
    /// Range-query stored points, optionally downsampled.
    Query(QueryArgs),
    /// Rolling mean/sigma bands over stored points.
    Bands(BandsArgs),
    /// Re-score a labeled corpus with the saved models and report R².
    Evaluate { corpus: PathBuf },
    /// Generate a seeded synthetic labeled corpus.
    Synth(SynthArgs),
    /// Replay the configured alert rules over stored data.
    AlertsTest(AlertsTestArgs),
}

#[derive(Args)]
struct QueryArgs {
    metric: String,
    start: i64,
    end: i64,
    /// Tag filters, k=v, conjunctive.
    #[arg(long = "tag", value_name = "K=V")]
    tags: Vec<String>,
    /// Downsample into buckets of this width.
    #[arg(long, env = "SCORESTREAM_BUCKET_MS")]
    bucket_ms: Option<i64>,
    /// Bucket aggregator: avg|min|max|count.
    #[arg(long, default_value = "avg", env = "SCORESTREAM_AGG")]
    agg: String,
}

#[derive(Args)]
struct BandsArgs {
    metric: String,
    start: i64,
    end: i64,
    /// Rolling window length in points.
    #[arg(long, default_value_t = 20, env = "SCORESTREAM_BAND_WINDOW")]
    window: usize,
    /// Band width in standard deviations.
    #[arg(long, default_value_t = 2.0, env = "SCORESTREAM_BAND_K")]
    k: f64,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000, env = "SCORESTREAM_SYNTH_N")]
    n: usize,
    #[arg(long, default_value_t = 42, env = "SCORESTREAM_SYNTH_SEED")]
    seed: u64,
    #[arg(long, env = "SCORESTREAM_SYNTH_OUT")]
    out: PathBuf,
}

#[derive(Args)]
struct AlertsTestArgs {
    /// Evaluation cadence during the replay; defaults to a quarter of the
    /// smallest rule window.
    #[arg(long, env = "SCORESTREAM_ALERT_STEP_MS")]
    step_ms: Option<i64>,
}

static SIGNAL_STOP: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_: libc::c_int) {
    SIGNAL_STOP.store(true, Ordering::SeqCst);
}

fn install_signal_handlers() {
    unsafe {
        libc::signal(libc::SIGINT, on_signal as *const () as libc::sighandler_t);
        libc::signal(libc::SIGTERM, on_signal as *const () as libc::sighandler_t);
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            print_error(&Error::Config(e.to_string()));
            std::process::exit(1);
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            let code = e.exit_code();
            print_error(&e);
            std::process::exit(code);
        }
    }
}

fn print_error(e: &Error) {
    let obj = serde_json::json!({
        "error": e.to_string(),
        "exit_code": e.exit_code(),
    });
    eprintln!("{obj}");
}

fn emit<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Err(Error::Config(
            "no config file: pass --config or set SCORESTREAM_CONFIG".to_string(),
        )),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train => {
            let cfg = load_config(&cli.config)?;
            let stdout = std::io::stdout();
            let report = pipeline::run_offline(&cfg, |epoch| {
                let mut out = stdout.lock();
                writeln!(out, "{}", serde_json::to_string(epoch).expect("epoch line")).ok();
            })?;
            emit(&report);
            Ok(())
        }
        Command::Serve => {
            let cfg = load_config(&cli.config)?;
            install_signal_handlers();
            let control = EngineControl::new();
            let watcher = control.clone();
            std::thread::spawn(move || loop {
                if SIGNAL_STOP.load(Ordering::SeqCst) {
                    watcher.request_stop();
                    break;
                }
                std::thread::sleep(std::time::Duration::from_millis(50));
            });
            let mut stdout = std::io::stdout();
            let summary = pipeline::run_online(&cfg, &control, &mut stdout)?;
            emit(&summary);
            Ok(())
        }
        Command::Publish { file } => {
            let cfg = load_config(&cli.config)?;
            let broker = Broker::open(&cfg.broker.data_dir)?;
            let topic = &cfg.broker.topic;
            let stdin = std::io::stdin();
            let reader: Box<dyn BufRead> = if file == "-" {
                Box::new(stdin.lock())
            } else {
                let f = std::fs::File::open(&file)
                    .map_err(|e| Error::Config(format!("cannot open {file}: {e}")))?;
                Box::new(std::io::BufReader::new(f))
            };
            let mut published = 0u64;
            let mut out = std::io::stdout();
            for line in reader.lines() {
                let line = line.map_err(|e| Error::Runtime(format!("read failure: {e}")))?;
                if line.trim().is_empty() {
                    continue;
                }
                let offset = broker.publish(topic, line.as_bytes())?;
                // acked offsets go out immediately so a harness can tell
                // exactly which publishes survived a crash
                writeln!(out, "{}", serde_json::json!({"offset": offset}))
                    .and_then(|_| out.flush())
                    .map_err(|e| Error::Runtime(format!("stdout failure: {e}")))?;
                published += 1;
            }
            emit(&serde_json::json!({"published": published, "topic": topic}));
            Ok(())
        }
        Command::Query(args) => {
            let cfg = load_config(&cli.config)?;
            if args.start > args.end {
                return Err(Error::Config("start must be <= end".to_string()));
            }
            let tsdb = Tsdb::open(&cfg.tsdb.dir)?;
            let tags = parse_tags(&args.tags)?;
            match args.bucket_ms {
                Some(b) => {
                    if b < 1 {
                        return Err(Error::Config("bucket-ms must be >= 1".to_string()));
                    }
                    let agg = parse_agg(&args.agg)?;
                    let buckets =
                        tsdb.downsample_range(&args.metric, args.start, args.end, &tags, b, agg);
                    let arr: Vec<serde_json::Value> = buckets
                        .iter()
                        .map(|b| serde_json::json!({"start": b.start, "value": b.value}))
                        .collect();
                    emit(&arr);
                }
                None => {
                    let points = tsdb.query_range(&args.metric, args.start, args.end, &tags);
                    emit(&points);
                }
            }
            Ok(())
        }
        Command::Bands(args) => {
            let cfg = load_config(&cli.config)?;
            if args.window < 2 {
                return Err(Error::Config("band window must be >= 2".to_string()));
            }
            let tsdb = Tsdb::open(&cfg.tsdb.dir)?;
            let points = tsdb.query_range(&args.metric, args.start, args.end, &BTreeMap::new());
            let values: Vec<f64> = points.iter().map(|p| p.value).collect();
            let bands = rolling_bands(&values, args.window, args.k);
            let arr: Vec<serde_json::Value> = bands
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    serde_json::json!({
                        "timestamp": points[i + args.window - 1].timestamp,
                        "mean": b.mean,
                        "sigma": b.sigma,
                        "upper": b.upper,
                        "lower": b.lower,
                    })
                })
                .collect();
            emit(&arr);
            Ok(())
        }
        Command::Evaluate { corpus } => {
            let cfg = load_config(&cli.config)?;
            let evals = pipeline::evaluate_corpus(&cfg, &corpus)?;
            emit(&evals);
            Ok(())
        }
        Command::Synth(args) => {
            let summary = generate_synthetic_corpus(args.n, args.seed, &args.out)?;
            emit(&summary);
            Ok(())
        }
        Command::AlertsTest(args) => {
            let cfg = load_config(&cli.config)?;
            let rules = cfg.alert_rules()?;
            if rules.is_empty() {
                return Err(Error::Config("no alert rules configured".to_string()));
            }
            let tsdb = Tsdb::open(&cfg.tsdb.dir)?;
            let events = replay_alerts(&rules, &tsdb, args.step_ms)?;
            emit(&serde_json::json!({
                "count": events.len(),
                "events": events,
            }));
            Ok(())
        }
    }
}

fn parse_tags(raw: &[String]) -> Result<BTreeMap<String, String>> {
    let mut tags = BTreeMap::new();
    for t in raw {
        let (k, v) = t
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("tag filter {t:?} is not k=v")))?;
        tags.insert(k.to_string(), v.to_string());
    }
    Ok(tags)
}

fn parse_agg(s: &str) -> Result<Aggregator> {
    Ok(match s {
        "avg" => Aggregator::Avg,
        "min" => Aggregator::Min,
        "max" => Aggregator::Max,
        "count" => Aggregator::Count,
        other => {
            return Err(Error::Config(format!(
                "unknown aggregator {other:?} (use avg|min|max|count)"
            )))
        }
    })
}

/// Walk stored time from the earliest to the latest relevant point,
/// evaluating the rules at a fixed cadence with fresh state — a dry run of
/// the alerting surface over historical data.
fn replay_alerts(
    rules: &[AlertRule],
    tsdb: &Tsdb,
    step_ms: Option<i64>,
) -> Result<Vec<scorestream::alerts::AlertEvent>> {
    use scorestream::alerts::AlertEvaluator;

    let mut t_min = i64::MAX;
    let mut t_max = i64::MIN;
    for rule in rules {
        let pts = tsdb.query_range(&rule.metric, 0, i64::MAX, &BTreeMap::new());
        if let (Some(first), Some(last)) = (pts.first(), pts.last()) {
            t_min = t_min.min(first.timestamp);
            t_max = t_max.max(last.timestamp);
        }
    }
    if t_min > t_max {
        return Ok(Vec::new());
    }
    let min_window = rules.iter().map(|r| r.window_ms).min().unwrap_or(60_000);
    let step = step_ms.unwrap_or((min_window / 4).max(1));
    if step < 1 {
        return Err(Error::Config("step-ms must be >= 1".to_string()));
    }
    let max_window = rules.iter().map(|r| r.window_ms).max().unwrap_or(0);

    let mut evaluator = AlertEvaluator::new(rules.to_vec(), Vec::new())?;
    let mut events = Vec::new();
    let mut now = t_min + 1;
    let horizon = t_max + max_window + 1;
    while now <= horizon {
        events.extend(evaluator.evaluate(tsdb, now));
        now += step;
    }
    Ok(events)
}
