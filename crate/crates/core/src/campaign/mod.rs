//! Closed-loop episodes and seeded evaluation campaigns.

mod config;
mod drivers;

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ControlVector, EpisodeTrace, FrameRecord, Infraction, InfractionKind, Observation, Termination};
use crate::dualsys::DualSystem;
use crate::hil::Controller;
use crate::metrics::{render_table, skill_score, AggregateMetrics, MetricsReport, Stat};
use crate::scengen::ScenarioSpec;
use crate::sim::{load_route, RouteSpec, SimConfig, SimError};

pub use config::{AdapterConfig, PromptPaths, RunConfig};
pub use drivers::{AlwaysStraight, BuiltinDriver, CommandTranslator, RuleFollowing};

pub const AGGREGATE_FILE: &str = "aggregate.json";
pub const REPORT_FILE: &str = "report.txt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_DIR: &str = "traces";

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Fatal(String),
}

impl CampaignError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CampaignError::Config(_) => 1,
            CampaignError::Fatal(_) => 3,
        }
    }
}

/// Per-episode loop settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOptions {
    pub sim: SimConfig,
    pub max_frames: u64,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            max_frames: 3000,
        }
    }
}

/// Drive one route (optionally with a scenario) in closed loop until it ends.
pub fn run_episode(
    system: &DualSystem,
    route: &RouteSpec,
    scenario: Option<&ScenarioSpec>,
    seed: u64,
    opts: &EpisodeOptions,
) -> Result<EpisodeTrace, SimError> {
    let mut world = load_route(route, scenario, seed, &opts.sim)?;
    let mut trace = EpisodeTrace::new(route.route_id.clone(), scenario.map(|s| s.scenario_id.clone()));
    let keep = system.config.history_len + 1;
    let mut history: VecDeque<Observation> = VecDeque::with_capacity(keep + 1);
    let mut obs = world.render(opts.sim.observation);
    let dt = opts.sim.dt;
    loop {
        history.push_back(obs);
        while history.len() > keep {
            history.pop_front();
        }
        let decision = system.decide(history.make_contiguous());
        let frame_index = trace.next_frame_index();
        let outcome = world.step(decision.control, dt);
        trace
            .push_frame(FrameRecord {
                frame_index,
                timestamp: world.time(),
                ego: world.ego,
                route_progress: world.route_progress(),
                nearby: world.nearby_actors(),
                commands: decision.commands,
                control: decision.control,
                dt,
                failures: decision.failures,
            })
            .map_err(|e| SimError::Parse(format!("trace: {e}")))?;
        for inf in outcome.infractions {
            trace.push_infraction(inf);
        }
        let end = if world.is_fatal() {
            Some(Termination::InfractionFatal)
        } else if world.is_finished() {
            Some(Termination::Finished)
        } else if world.is_blocked() {
            Some(Termination::Blocked)
        } else if frame_index + 1 >= opts.max_frames {
            trace.push_infraction(Infraction {
                kind: InfractionKind::Timeout,
                frame_index,
                detail: format!("route not finished within {} frames", opts.max_frames),
            });
            Some(Termination::Timeout)
        } else {
            None
        };
        if let Some(t) = end {
            trace.finish(t);
            return Ok(trace);
        }
        obs = outcome.observation;
    }
}

/// Adapter from the dual system to a HIL controller; the controller keeps its
/// own observation window.
pub fn dual_system_controller(system: Arc<DualSystem>) -> Controller {
    let keep = system.config.history_len + 1;
    let history = Arc::new(std::sync::Mutex::new(VecDeque::<Observation>::new()));
    Arc::new(move |obs: &Observation| -> ControlVector {
        let mut h = history.lock().unwrap_or_else(|p| p.into_inner());
        if obs.frame_index == 0 {
            h.clear();
        }
        h.push_back(obs.clone());
        while h.len() > keep {
            h.pop_front();
        }
        system.decide(h.make_contiguous()).control
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFailure {
    pub route_id: String,
    pub scenario_id: Option<String>,
    pub repetition: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeEntry {
    pub route_id: String,
    pub scenario_id: Option<String>,
    pub repetition: u32,
    pub seed: u64,
    /// Relative to the output directory.
    pub trace_file: String,
    pub terminated_by: Option<Termination>,
    pub metrics: MetricsReport,
}

/// Campaign result: the headline row is mean ± std over repetitions of the
/// per-repetition means; per-route rows are mean ± std over that route's runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub label: String,
    pub repetitions: u32,
    pub seed: u64,
    pub episodes: usize,
    pub summary: AggregateMetrics,
    pub per_route: BTreeMap<String, AggregateMetrics>,
    pub terminations: BTreeMap<String, usize>,
    pub failures: Vec<EpisodeFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignManifest {
    pub label: String,
    pub config: RunConfig,
    pub episodes: Vec<EpisodeEntry>,
    pub failures: Vec<EpisodeFailure>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub report: AggregateReport,
    pub manifest: CampaignManifest,
    pub output_dir: PathBuf,
}

impl CampaignOutcome {
    /// 0 when every episode ran, 2 when some failed.
    pub fn exit_code(&self) -> i32 {
        if self.report.failures.is_empty() {
            0
        } else {
            2
        }
    }
}

fn file_key(route_id: &str, scenario_id: Option<&str>, rep: u32) -> String {
    let key = scenario_id.unwrap_or(route_id);
    let clean: String = key
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect();
    format!("{clean}__rep{rep:03}.json")
}

struct Job<'a> {
    route: &'a RouteSpec,
    scenario: Option<&'a ScenarioSpec>,
    repetition: u32,
}

fn fatal(path: &Path, e: impl std::fmt::Display) -> CampaignError {
    CampaignError::Fatal(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<(), CampaignError> {
    std::fs::write(path, text).map_err(|e| fatal(path, e))
}

/// Run every route (or its scenario, when the suite has one) `repetitions`
/// times with seeds `seed + rep`, persist traces, and aggregate.
pub fn run_campaign(config: &RunConfig) -> Result<CampaignOutcome, CampaignError> {
    config.validate()?;
    let routes = config.load_routes()?;
    let scenarios = config.load_scenarios()?;
    let system = config.build_dual_system()?;
    let by_route: BTreeMap<&str, &ScenarioSpec> = scenarios.iter().map(|s| (s.base_route_id.as_str(), s)).collect();

    let out = &config.output_dir;
    let trace_dir = out.join(TRACE_DIR);
    std::fs::create_dir_all(&trace_dir).map_err(|e| fatal(&trace_dir, e))?;

    let jobs: Vec<Job> = (0..config.repetitions)
        .flat_map(|repetition| {
            routes.iter().map(move |route| (route, repetition))
        })
        .map(|(route, repetition)| Job {
            route,
            scenario: by_route.get(route.route_id.as_str()).copied(),
            repetition,
        })
        .collect();

    let opts = EpisodeOptions {
        sim: config.sim.clone(),
        max_frames: config.max_frames,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| CampaignError::Fatal(format!("thread pool: {e}")))?;
    let results: Vec<Result<EpisodeEntry, EpisodeFailure>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| run_job(job, config, &system, &opts, &trace_dir))
            .collect()
    });

    let mut episodes = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(e) => episodes.push(e),
            Err(f) => failures.push(f),
        }
    }
    // Disk trouble with the traces is not a per-route failure.
    if let Some(f) = failures.iter().find(|f| f.error.starts_with(WRITE_FAILURE)) {
        return Err(CampaignError::Fatal(f.error.clone()));
    }
    let report = aggregate_campaign(config, &episodes, failures.clone())?;

    let aggregate_json = serde_json::to_string_pretty(&report).map_err(|e| CampaignError::Fatal(e.to_string()))?;
    write_file(&out.join(AGGREGATE_FILE), &format!("{aggregate_json}\n"))?;
    write_file(&out.join(REPORT_FILE), &render_full_report(&report))?;
    let mut files: Vec<String> = episodes.iter().map(|e| e.trace_file.clone()).collect();
    files.extend([AGGREGATE_FILE.to_string(), REPORT_FILE.to_string()]);
    let manifest = CampaignManifest {
        label: config.label.clone(),
        config: config.clone(),
        episodes,
        failures,
        files,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest).map_err(|e| CampaignError::Fatal(e.to_string()))?;
    write_file(&out.join(MANIFEST_FILE), &format!("{manifest_json}\n"))?;
    Ok(CampaignOutcome {
        report,
        manifest,
        output_dir: out.clone(),
    })
}

const WRITE_FAILURE: &str = "writing trace";

fn run_job(job: &Job, config: &RunConfig, system: &DualSystem, opts: &EpisodeOptions, trace_dir: &Path) -> Result<EpisodeEntry, EpisodeFailure> {
    let seed = config.seed.wrapping_add(job.repetition as u64);
    let fail = |error: String| EpisodeFailure {
        route_id: job.route.route_id.clone(),
        scenario_id: job.scenario.map(|s| s.scenario_id.clone()),
        repetition: job.repetition,
        error,
    };
    let trace = run_episode(system, job.route, job.scenario, seed, opts).map_err(|e| fail(e.to_string()))?;
    let name = file_key(&job.route.route_id, job.scenario.map(|s| s.scenario_id.as_str()), job.repetition);
    let path = trace_dir.join(&name);
    std::fs::write(&path, trace.to_json()).map_err(|e| fail(format!("{WRITE_FAILURE} {}: {e}", path.display())))?;
    Ok(EpisodeEntry {
        route_id: job.route.route_id.clone(),
        scenario_id: trace.scenario_id.clone(),
        repetition: job.repetition,
        seed,
        trace_file: format!("{TRACE_DIR}/{name}"),
        terminated_by: trace.terminated_by,
        metrics: MetricsReport::evaluate(&trace, job.route, &config.penalties, &config.comfort),
    })
}

fn stat(values: &[f64]) -> Option<Stat> {
    Stat::of(values)
}

/// Mean metrics of one group of episodes.
struct GroupMeans {
    success_rate: f64,
    driving_score: f64,
    efficiency: f64,
    comfort: Option<f64>,
    skill_score: Option<f64>,
}

fn group_means(reports: &[&MetricsReport]) -> GroupMeans {
    let n = reports.len() as f64;
    let comforts: Vec<f64> = reports.iter().filter_map(|r| r.comfort).collect();
    let tags: Vec<_> = reports.iter().map(|r| (r.skill_tags(), r.success)).collect();
    GroupMeans {
        success_rate: 100.0 * reports.iter().filter(|r| r.success).count() as f64 / n,
        driving_score: reports.iter().map(|r| r.driving_score).sum::<f64>() / n,
        efficiency: reports.iter().map(|r| r.efficiency).sum::<f64>() / n,
        comfort: (!comforts.is_empty()).then(|| comforts.iter().sum::<f64>() / comforts.len() as f64),
        skill_score: skill_score(tags.iter().map(|(t, ok)| (t, *ok))),
    }
}

fn stats_over(groups: &[GroupMeans], runs: usize) -> AggregateMetrics {
    let col = |f: &dyn Fn(&GroupMeans) -> Option<f64>| -> Vec<f64> { groups.iter().filter_map(f).collect() };
    AggregateMetrics {
        runs,
        success_rate: stat(&col(&|g| Some(g.success_rate))).expect("non-empty"),
        driving_score: stat(&col(&|g| Some(g.driving_score))).expect("non-empty"),
        efficiency: stat(&col(&|g| Some(g.efficiency))).expect("non-empty"),
        comfort: stat(&col(&|g| g.comfort)),
        skill_score: stat(&col(&|g| g.skill_score)),
    }
}

fn aggregate_campaign(config: &RunConfig, episodes: &[EpisodeEntry], failures: Vec<EpisodeFailure>) -> Result<AggregateReport, CampaignError> {
    if episodes.is_empty() {
        let first = failures.first().map(|f| f.error.as_str()).unwrap_or("no routes");
        return Err(CampaignError::Fatal(format!("no episode completed; first error: {first}")));
    }
    let mut by_rep: BTreeMap<u32, Vec<&MetricsReport>> = BTreeMap::new();
    let mut by_route: BTreeMap<String, Vec<&MetricsReport>> = BTreeMap::new();
    let mut terminations: BTreeMap<String, usize> = BTreeMap::new();
    for e in episodes {
        by_rep.entry(e.repetition).or_default().push(&e.metrics);
        let key = e.scenario_id.clone().unwrap_or_else(|| e.route_id.clone());
        by_route.entry(key).or_default().push(&e.metrics);
        let t = e
            .terminated_by
            .map(|t| serde_json::to_value(t).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
            .unwrap_or_else(|| "unterminated".into());
        *terminations.entry(t).or_default() += 1;
    }
    let rep_means: Vec<GroupMeans> = by_rep.values().map(|r| group_means(r)).collect();
    let per_route = by_route
        .into_iter()
        .map(|(k, reports)| {
            let singles: Vec<GroupMeans> = reports.iter().map(|r| group_means(&[*r])).collect();
            (k, stats_over(&singles, reports.len()))
        })
        .collect();
    Ok(AggregateReport {
        label: config.label.clone(),
        repetitions: config.repetitions,
        seed: config.seed,
        episodes: episodes.len(),
        summary: stats_over(&rep_means, episodes.len()),
        per_route,
        terminations,
        failures,
    })
}

/// Metrics table with one row per aggregate, in the given order.
pub fn render_report(aggregates: &[AggregateReport]) -> String {
    let rows: Vec<(String, AggregateMetrics)> = aggregates.iter().map(|a| (a.label.clone(), a.summary.clone())).collect();
    render_table(&rows)
}

/// Headline table followed by a per-route breakdown and failure list.
pub fn render_full_report(report: &AggregateReport) -> String {
    let mut out = render_report(std::slice::from_ref(report));
    out.push_str("\nPer route\n");
    let rows: Vec<(String, AggregateMetrics)> = report.per_route.iter().map(|(k, a)| (k.clone(), a.clone())).collect();
    out.push_str(&render_table(&rows));
    if !report.terminations.is_empty() {
        out.push_str("\nTerminations\n");
        for (k, n) in &report.terminations {
            out.push_str(&format!("  {k}: {n}\n"));
        }
    }
    if !report.failures.is_empty() {
        out.push_str("\nFailed episodes\n");
        for f in &report.failures {
            out.push_str(&format!(
                "  {} rep {}: {}\n",
                f.scenario_id.as_deref().unwrap_or(&f.route_id),
                f.repetition,
                f.error
            ));
        }
    }
    out
}

/// Read an aggregate written by [`run_campaign`].
pub fn load_aggregate(path: &Path) -> Result<AggregateReport, CampaignError> {
    let path = if path.is_dir() { path.join(AGGREGATE_FILE) } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&path).map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dualsys::{DualSystemConfig, ParsingMode};

    fn system(fast: BuiltinDriver) -> DualSystem {
        DualSystem::new(
            DualSystemConfig::defaults(ParsingMode::Cng),
            Arc::from(fast.adapter()),
            Arc::from(BuiltinDriver::CommandTranslator.adapter()),
        )
    }

    #[test]
    fn straight_driver_finishes_a_straight_route() {
        let route = RouteSpec::straight("r", 40.0, 1.75, 8.0);
        let t = run_episode(&system(BuiltinDriver::AlwaysStraight), &route, None, 0, &EpisodeOptions::default()).unwrap();
        assert_eq!(t.terminated_by, Some(Termination::Finished));
        assert_eq!(t.completed_fraction, 1.0);
        t.validate().unwrap();
    }

    #[test]
    fn max_frames_times_out() {
        let route = RouteSpec::straight("r", 400.0, 1.75, 8.0);
        let opts = EpisodeOptions {
            max_frames: 5,
            ..Default::default()
        };
        let t = run_episode(&system(BuiltinDriver::AlwaysStraight), &route, None, 0, &opts).unwrap();
        assert_eq!(t.frames.len(), 5);
        assert_eq!(t.terminated_by, Some(Termination::Timeout));
        assert_eq!(t.infractions.last().unwrap().kind, InfractionKind::Timeout);
    }

    #[test]
    fn rule_following_keeps_lane_on_a_bend() {
        use crate::sim::Waypoint;
        let mut route = RouteSpec::straight("bend", 1.0, 1.75, 8.0);
        route.waypoints = (0..=30)
            .map(|i| {
                let a = i as f64 * 0.05;
                Waypoint {
                    x: 60.0 * a.sin(),
                    y: 60.0 * (1.0 - a.cos()),
                }
            })
            .collect();
        let t = run_episode(&system(BuiltinDriver::RuleFollowing), &route, None, 0, &EpisodeOptions::default()).unwrap();
        assert_eq!(t.terminated_by, Some(Termination::Finished));
        assert!(t.infractions.is_empty(), "{:?}", t.infractions);
    }

    #[test]
    fn file_keys_are_safe() {
        assert_eq!(file_key("a/b", None, 3), "a_b__rep003.json");
        assert_eq!(file_key("r", Some("r__threat"), 0), "r__threat__rep000.json");
    }
}
