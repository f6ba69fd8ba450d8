use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use loopdrive::campaign::{dual_system_controller, load_aggregate, render_full_report, render_report, run_campaign, CampaignError, RunConfig};
use loopdrive::hil::{
    completion_rate, serve, sim_vehicle_client, ClientOptions, PhysicalRoute, PlatformParams, RunSummary, ServeOptions,
    DEFAULT_CYCLE_S,
};
use loopdrive::scengen::{generate_suite, save_suite, GenerationOptions, REPAIR_BUDGET};

#[derive(Parser)]
#[command(name = "loopdrive", version, about = "Closed-loop driving evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags that override fields of the JSON run config.
#[derive(clap::Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<u32>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long)]
    max_frames: Option<u64>,
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    scenarios: Option<PathBuf>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.repetitions {
            cfg.repetitions = v;
        }
        if let Some(v) = &self.output {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.parallelism {
            cfg.parallelism = v;
        }
        if let Some(v) = self.max_frames {
            cfg.max_frames = v;
        }
        if let Some(v) = &self.label {
            cfg.label = v.clone();
        }
        if let Some(v) = &self.scenarios {
            cfg.scenarios = Some(v.clone());
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Platform {
    Jetbot,
    Limo,
}

impl Platform {
    fn params(self) -> PlatformParams {
        match self {
            Platform::Jetbot => PlatformParams::jetbot(),
            Platform::Limo => PlatformParams::limo(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run an evaluation campaign.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Render aggregates (files or campaign directories) as one table.
    Report {
        #[arg(required = true)]
        aggregates: Vec<PathBuf>,
        /// Include the per-route breakdown (single aggregate only).
        #[arg(long)]
        full: bool,
    },
    /// Generate a threat scenario suite for the configured routes.
    ScenGen {
        #[arg(long)]
        config: PathBuf,
        /// Suite directory; defaults to <output_dir>/scenarios.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long, default_value_t = REPAIR_BUDGET)]
        repair_budget: u32,
    },
    /// Serve the configured dual system to physical or simulated vehicles.
    HilServe {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7878")]
        bind: String,
        #[arg(long, default_value_t = DEFAULT_CYCLE_S)]
        cycle_s: f64,
        /// Controller budget per cycle in seconds; defaults to cycle_s.
        #[arg(long)]
        budget_s: Option<f64>,
        #[arg(long)]
        max_sessions: Option<usize>,
        /// Write each session log as JSON into this directory.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Drive a simulated desk-scale vehicle against a HIL server.
    HilSimclient {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long, value_enum, default_value = "jetbot")]
        platform: Platform,
        /// Physical route JSON; defaults to a straight 2 m track.
        #[arg(long)]
        route: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        runs: usize,
        #[arg(long, default_value_t = DEFAULT_CYCLE_S)]
        cycle_s: f64,
        #[arg(long, default_value_t = 1000)]
        max_cycles: u64,
        #[arg(long)]
        realtime: bool,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Check a run config without running anything.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, CampaignError> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, overrides } => cmd_run(&config, &overrides),
        Command::ValidateConfig { config, overrides } => match load_config(&config, &overrides) {
            Ok(cfg) => {
                println!("ok: {} routes from {}", cfg.load_routes().map(|r| r.len()).unwrap_or(0), cfg.routes.display());
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        other => match dispatch(other) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e:#}");
                if e.downcast_ref::<CampaignError>().is_some_and(|c| matches!(c, CampaignError::Config(_))) {
                    1
                } else {
                    3
                }
            }
        },
    };
    ExitCode::from(code as u8)
}

fn cmd_run(config: &Path, overrides: &Overrides) -> i32 {
    let cfg = match load_config(config, overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match run_campaign(&cfg) {
        Ok(outcome) => {
            print!("{}", render_full_report(&outcome.report));
            println!("artifacts: {}", outcome.output_dir.display());
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Report { aggregates, full } => {
            let loaded = aggregates.iter().map(|p| load_aggregate(p)).collect::<Result<Vec<_>, _>>()?;
            if full && loaded.len() == 1 {
                print!("{}", render_full_report(&loaded[0]));
            } else {
                print!("{}", render_report(&loaded));
            }
        }
        Command::ScenGen {
            config,
            output,
            repair_budget,
        } => {
            let cfg = load_config(&config, &Overrides::default())?;
            let routes = cfg.load_routes()?;
            let opts = GenerationOptions {
                repair_budget,
                sim: cfg.sim.clone(),
                deadline: Duration::from_secs_f64(cfg.slow_deadline_s),
                ..GenerationOptions::default()
            };
            let suite = generate_suite(&routes, &cfg.fast.build()?, &cfg.slow.build()?, &opts);
            let dir = output.unwrap_or_else(|| cfg.output_dir.join("scenarios"));
            save_suite(&dir, &suite)?;
            for entry in &suite.log {
                match (&entry.scenario_id, &entry.error) {
                    (Some(id), _) => println!("{}: {id} ({} repairs)", entry.route_id, entry.repairs),
                    (None, err) => println!("{}: skipped: {}", entry.route_id, err.as_deref().unwrap_or("unknown")),
                }
            }
            println!("{} of {} routes have a scenario; suite in {}", suite.scenarios.len(), routes.len(), dir.display());
        }
        Command::HilServe {
            config,
            bind,
            cycle_s,
            budget_s,
            max_sessions,
            log_dir,
        } => {
            let cfg = load_config(&config, &Overrides::default())?;
            if !(cycle_s > 0.0 && cycle_s.is_finite()) {
                bail!("cycle_s must be > 0");
            }
            if let Some(dir) = &log_dir {
                std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
            }
            let opts = ServeOptions {
                cycle_s,
                budget: Duration::from_secs_f64(budget_s.unwrap_or(cycle_s)),
                ..ServeOptions::default()
            };
            let listener = TcpListener::bind(&bind).with_context(|| format!("bind {bind}"))?;
            eprintln!("serving on {}", listener.local_addr()?);
            let counter = std::sync::atomic::AtomicUsize::new(0);
            let factory = || -> loopdrive::hil::Controller {
                match cfg.build_dual_system() {
                    Ok(system) => dual_system_controller(Arc::new(system)),
                    Err(e) => {
                        eprintln!("controller setup failed, sending fallback: {e}");
                        Arc::new(|_: &loopdrive::domain::Observation| loopdrive::dualsys::fallback_action())
                    }
                }
            };
            let on_done = |log: &loopdrive::hil::SessionLog| {
                let n = counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                eprintln!(
                    "session {n} from {} ended: bye={:?} error={:?} overruns={}",
                    log.peer,
                    log.bye,
                    log.error,
                    log.overruns.len()
                );
                if let Some(dir) = &log_dir {
                    let path = dir.join(format!("session_{n:04}.json"));
                    if let Ok(text) = serde_json::to_string_pretty(log) {
                        let _ = std::fs::write(path, text);
                    }
                }
            };
            serve(&listener, &factory, &opts, max_sessions, &on_done)?;
        }
        Command::HilSimclient {
            addr,
            platform,
            route,
            runs,
            cycle_s,
            max_cycles,
            realtime,
            log,
        } => {
            let route = match route {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| p.display().to_string())?;
                    serde_json::from_str::<PhysicalRoute>(&text).with_context(|| p.display().to_string())?
                }
                None => PhysicalRoute::straight("desk_straight", 2.0, 0.15),
            };
            let opts = ClientOptions {
                cycle_s,
                max_cycles,
                realtime,
                ..ClientOptions::default()
            };
            let params = platform.params();
            let mut logs = Vec::new();
            for i in 0..runs {
                let l = sim_vehicle_client(addr.as_str(), &params, &route, &opts)?;
                println!(
                    "run {i}: {:?} after {} cycles, completed {:.3}{}",
                    l.bye,
                    l.frames.len(),
                    l.completed_fraction,
                    l.diagnostic.as_deref().map(|d| format!(" ({d})")).unwrap_or_default()
                );
                logs.push(l);
            }
            let groups = BTreeMap::from([(route.route.route_id.clone(), logs.iter().map(RunSummary::from).collect())]);
            print!("{}", completion_rate(&groups, runs)?.render());
            if let Some(path) = log {
                std::fs::write(&path, serde_json::to_string_pretty(&logs)?).with_context(|| path.display().to_string())?;
            }
        }
        Command::Run { .. } | Command::ValidateConfig { .. } => unreachable!("handled in main"),
    }
    Ok(())
}
