use std::fs::{self, File};
use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pricelab::analysis::{self, AnalysisError, AnalysisOptions, Grouping, Metric, RoundTable, Weighting};
use pricelab::export::{write_table, Table};
use pricelab::market::{self, DiscountFactor};
use pricelab::qlearning::{train_batch, train_selfplay, TrainerConfig};
use pricelab::service::{self, run_bot_runtime, BotSeat, ExportFormat, Lab, LabConfig};
use pricelab::session::SessionConfig;
use pricelab::strategy::{simulate_supergame, BotSpec, Player};
use pricelab::{MarketParams, Policy, PriceState};

#[derive(Parser)]
#[command(name = "pricelab", version, about = "Algorithmic pricing delegation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the stage game's equilibria, thresholds and best-response values.
    Theory {
        /// Market parameters as a JSON file.
        #[arg(long)]
        market: Option<PathBuf>,
        #[arg(long, default_value_t = 0.95)]
        delta: f64,
    },
    /// Play one supergame between two scripted strategies and print the trace CSV.
    Simulate {
        /// Bot name (e.g. wsls, cyclic_undercut) or a JSON bot spec.
        #[arg(long, default_value = "wsls")]
        a: String,
        #[arg(long, default_value = "wsls")]
        b: String,
        #[arg(long, default_value_t = 20)]
        length: usize,
    },
    /// Train Q-learning agents by self-play.
    Train(TrainArgs),
    /// Run a headless session with scripted seats and export its tables.
    BotSession {
        /// Session configuration as JSON; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSON array with one seat per participant; defaults to adopting WSLS seats.
        #[arg(long)]
        roster: Option<PathBuf>,
        /// Directory for the CSV tables and the event log.
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute descriptive metrics from exported tables.
    Analyze(AnalyzeArgs),
    /// Serve the HTTP and WebSocket API.
    Serve {
        #[arg(long, env = "PRICELAB_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long, env = "PRICELAB_DATA_DIR")]
        data_dir: Option<PathBuf>,
        #[arg(long, env = "PRICELAB_ADMIN_SECRET", hide_env_values = true)]
        admin_secret: Option<String>,
    },
}

#[derive(Args)]
struct TrainArgs {
    /// Trainer configuration as JSON; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Train this many seeds starting at `--seed` (or 0) and summarize.
    #[arg(long)]
    batch: Option<u64>,
    /// Write the full diagnostics as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the limiting policies of a single run as CSV.
    #[arg(long)]
    policy_csv: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Export directory (with rounds.csv) or a rounds CSV file.
    path: PathBuf,
    /// Metric name, or `all`.
    #[arg(long, default_value = "all")]
    metric: String,
    #[arg(long, default_value = "treatment,supergame")]
    group_by: String,
    /// none, by-length or market-means.
    #[arg(long, default_value = "none")]
    weighting: String,
    /// table or csv.
    #[arg(long, default_value = "table")]
    format: String,
    /// Write one file per metric here instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Beliefs CSV; defaults to beliefs.csv next to the rounds table.
    #[arg(long)]
    beliefs: Option<PathBuf>,
    /// Cycles required by the cyclic-undercut classifier.
    #[arg(long, default_value_t = 2)]
    cycle_threshold: u32,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn parse_bot(s: &str) -> Result<BotSpec> {
    let json = if s.trim_start().starts_with('{') { s.to_string() } else { format!(r#"{{"kind":"{s}"}}"#) };
    serde_json::from_str(&json).with_context(|| format!("bot spec {s}"))
}

fn theory(params: &MarketParams, delta: f64) -> Result<()> {
    let nash: Vec<String> = market::enumerate_pure_nash(params).iter().map(|(a, b)| format!("({a},{b})")).collect();
    println!("pure Nash equilibria: {}", nash.join(" "));
    for c in params.grid().rev() {
        if let Ok(t) = market::grim_trigger_delta_min(c, params) {
            println!("grim trigger at {c}: delta >= {t}");
        }
    }
    println!("one-period punishment (WSLS): delta >= {}", market::wsls_ic_delta_min(params)?);
    let d = DiscountFactor::new(delta)?;
    let wsls = Policy::wsls(params);
    let br = market::best_response_value(&wsls, d, PriceState::INITIAL, params)?;
    println!("best response to WSLS at delta {delta}: {:.4}", br.value);
    let cyclic = BotSpec::CyclicUndercut.to_policy(params).context("cyclic undercut has a policy form")?;
    let v = market::policy_value(&cyclic, &wsls, d, PriceState::INITIAL, params)?;
    println!("cyclic undercut against WSLS: {v:.4}");
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let mut cfg: TrainerConfig = match &args.config {
        Some(p) => read_json(p)?,
        None => TrainerConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.batch {
        let started = std::time::Instant::now();
        let report = train_batch(&cfg, cfg.seed..cfg.seed + n)?;
        println!(
            "runs {} converged {} wsls_pairs {} high_price {} share {:.3} mean_limit_price {:.3} seconds {:.1}",
            report.runs,
            report.converged,
            report.wsls_pairs,
            report.high_price_converged,
            report.high_price_share(),
            report.mean_limit_price,
            started.elapsed().as_secs_f64()
        );
        if let Some(p) = &args.report {
            fs::write(p, serde_json::to_string_pretty(&report)?)?;
        }
        return Ok(());
    }
    let d = train_selfplay(&cfg)?;
    println!(
        "seed {} converged {} periods {} wsls {:?} limit_price {:.3} limit_profits {:.2}/{:.2}",
        d.seed, d.converged, d.periods_to_convergence, d.wsls, d.average_limit_price, d.average_limit_profit[0], d.average_limit_profit[1]
    );
    if let Some(p) = &args.policy_csv {
        d.write_policy_csv(File::create(p)?, &cfg.market)?;
    }
    if let Some(p) = &args.report {
        fs::write(p, serde_json::to_string_pretty(&d)?)?;
    }
    Ok(())
}

fn bot_session(config: Option<PathBuf>, roster: Option<PathBuf>, out: &Path) -> Result<()> {
    let cfg: SessionConfig = match &config {
        Some(p) => read_json(p)?,
        None => SessionConfig::default(),
    };
    let roster: Vec<BotSeat> = match &roster {
        Some(p) => read_json(p)?,
        None => vec![BotSeat::new(BotSpec::Wsls, true); cfg.participants as usize],
    };
    let rt = run_bot_runtime(cfg, None, &roster)?;
    fs::create_dir_all(out)?;
    for table in Table::ALL {
        let f = File::create(out.join(format!("{}.csv", table.name())))?;
        write_table(rt.session(), table, f)?;
    }
    fs::write(out.join("events.jsonl"), service::export_runtime(&rt, ExportFormat::Jsonl)?)?;
    println!("{} complete: {} events written to {}", rt.id(), rt.events().len(), out.display());
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let opts = AnalysisOptions {
        grouping: Grouping::parse(&args.group_by).map_err(anyhow::Error::msg)?,
        weighting: Weighting::parse(&args.weighting).with_context(|| format!("unknown weighting {}", args.weighting))?,
        cycle_threshold: args.cycle_threshold,
        params: MarketParams::default(),
    };
    let metrics: Vec<Metric> = if args.metric == "all" {
        Metric::ALL.to_vec()
    } else {
        args.metric
            .split(',')
            .map(|m| Metric::parse(m.trim()).with_context(|| format!("unknown metric {m}")))
            .collect::<Result<_>>()?
    };
    let csv = match args.format.as_str() {
        "csv" => true,
        "table" => false,
        other => bail!("unknown format {other}"),
    };
    let table = RoundTable::load(&args.path, &opts.params)?;
    let beliefs_path = args.beliefs.clone().or_else(|| {
        let dir = if args.path.is_dir() { args.path.clone() } else { args.path.parent()?.to_path_buf() };
        Some(dir.join("beliefs.csv")).filter(|p| p.is_file())
    });
    let beliefs = match &beliefs_path {
        Some(p) => Some(analysis::read_beliefs(File::open(p)?)?),
        None => None,
    };
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
    }
    let stdout = io::stdout();
    for m in metrics {
        let report = analysis::run_metric(m, &table, beliefs.as_deref(), &opts);
        let mut body = Vec::new();
        if csv {
            analysis::write_csv(&report, &mut body)?;
        } else {
            writeln!(body, "== {} ==", report.metric)?;
            body.extend(analysis::render_table(&report).into_bytes());
        }
        match &args.out {
            Some(dir) => fs::write(dir.join(format!("{}.{}", report.metric, if csv { "csv" } else { "txt" })), body)?,
            None => {
                let mut lock = stdout.lock();
                lock.write_all(&body)?;
                if !csv {
                    writeln!(lock)?;
                }
            }
        }
    }
    Ok(())
}

async fn serve(bind: SocketAddr, data_dir: Option<PathBuf>, admin_secret: Option<String>) -> Result<()> {
    let lab = Lab::open(LabConfig { data_dir, admin_secret })?;
    service::http::serve(Arc::new(lab), bind).await?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Theory { market, delta } => {
            let params: MarketParams = match &market {
                Some(p) => read_json(p)?,
                None => MarketParams::default(),
            };
            params.validate()?;
            theory(&params, delta)
        }
        Command::Simulate { a, b, length } => {
            let params = MarketParams::default();
            let (a, b) = (parse_bot(&a)?, parse_bot(&b)?);
            a.validate(&params)?;
            b.validate(&params)?;
            let trace = simulate_supergame(&Player::Bot(a), &Player::Bot(b), length, &params)?;
            trace.write_csv(io::stdout().lock(), 1)?;
            Ok(())
        }
        Command::Train(args) => train(args),
        Command::BotSession { config, roster, out } => bot_session(config, roster, &out),
        Command::Analyze(args) => analyze(args),
        Command::Serve { bind, data_dir, admin_secret } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(serve(bind, data_dir, admin_secret))
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<AnalysisError>().is_some_and(|a| matches!(a, AnalysisError::Schema(_))) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
