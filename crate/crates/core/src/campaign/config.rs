use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::drivers::BuiltinDriver;
use super::CampaignError;
use crate::adapters::{EndpointAdapter, EndpointSpec, RecordReplayAdapter, ResponseStatus, ScriptRule, ScriptedAdapter, SharedAdapter};
use crate::domain::TaskSet;
use crate::dualsys::{
    default_suffix_table, CandidateSet, DualSystem, DualSystemConfig, HybridConfig, ParsingMode, PromptTemplate,
    SuffixTable,
};
use crate::metrics::{ComfortThresholds, PenaltyTable};
use crate::sim::{load_route_set, RouteSpec, SimConfig};
use crate::scengen::{load_suite, ScenarioSpec};

/// Where a model's answers come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AdapterConfig {
    Endpoint(EndpointSpec),
    /// Inline scripted rules.
    Scripted { rules: Vec<ScriptRule> },
    /// Scripted rules read from a JSON file.
    ScriptFile { path: PathBuf },
    Builtin { driver: BuiltinDriver },
    /// Every call fails with `status`.
    Failing {
        #[serde(default = "timeout_status")]
        status: ResponseStatus,
    },
    Replay { path: PathBuf },
    Record { path: PathBuf, inner: Box<AdapterConfig> },
}

fn timeout_status() -> ResponseStatus {
    ResponseStatus::Timeout
}

impl AdapterConfig {
    pub fn build(&self) -> Result<SharedAdapter, CampaignError> {
        let cfg = |e: crate::adapters::AdapterError| CampaignError::Config(e.to_string());
        Ok(match self {
            AdapterConfig::Endpoint(spec) => Arc::new(EndpointAdapter::new(spec.clone()).map_err(cfg)?),
            AdapterConfig::Scripted { rules } => Arc::new(ScriptedAdapter::new(rules.clone()).map_err(cfg)?),
            AdapterConfig::ScriptFile { path } => {
                let text = read(path)?;
                Arc::new(ScriptedAdapter::from_json(&text).map_err(cfg)?)
            }
            AdapterConfig::Builtin { driver } => Arc::from(driver.adapter()),
            AdapterConfig::Failing { status } => Arc::new(ScriptedAdapter::always_failing(*status)),
            AdapterConfig::Replay { path } => Arc::new(RecordReplayAdapter::replay(path).map_err(cfg)?),
            AdapterConfig::Record { path, inner } => Arc::new(RecordReplayAdapter::record(inner.build()?, path).map_err(cfg)?),
        })
    }

    fn paths_mut(&mut self) -> Vec<&mut PathBuf> {
        match self {
            AdapterConfig::ScriptFile { path } | AdapterConfig::Replay { path } => vec![path],
            AdapterConfig::Record { path, inner } => {
                let mut v = inner.paths_mut();
                v.push(path);
                v
            }
            _ => Vec::new(),
        }
    }

    fn required_paths(&self) -> Vec<&Path> {
        match self {
            AdapterConfig::ScriptFile { path } | AdapterConfig::Replay { path } => vec![path.as_path()],
            AdapterConfig::Record { inner, .. } => inner.required_paths(),
            _ => Vec::new(),
        }
    }
}

/// Optional replacements for the bundled prompt assets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptPaths {
    pub tasks: Option<PathBuf>,
    pub cng_template: Option<PathBuf>,
    pub dcs_template: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub threat_query: Option<PathBuf>,
}

/// One JSON document describing a whole evaluation campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Row label in reports.
    #[serde(default = "default_label")]
    pub label: String,
    /// Route file, array file, or directory of route files.
    pub routes: PathBuf,
    /// Scenario suite directory; each route with a scenario runs it.
    #[serde(default)]
    pub scenarios: Option<PathBuf>,
    pub fast: AdapterConfig,
    pub slow: AdapterConfig,
    /// Slow adapter for risk mode; defaults to `slow`.
    #[serde(default)]
    pub risk_slow: Option<AdapterConfig>,
    #[serde(default = "default_mode")]
    pub parsing_mode: ParsingMode,
    #[serde(default)]
    pub hybrid: bool,
    #[serde(default = "default_risk_mode")]
    pub risk_mode: ParsingMode,
    /// Suffix table JSON; `"bundled"` selects the shipped table.
    #[serde(default)]
    pub suffix_table: Option<PathBuf>,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_frames")]
    pub max_frames: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_history_len")]
    pub history_len: usize,
    #[serde(default = "default_deadline")]
    pub fast_deadline_s: f64,
    #[serde(default = "default_deadline")]
    pub slow_deadline_s: f64,
    #[serde(default)]
    pub prompts: PromptPaths,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub penalties: PenaltyTable,
    #[serde(default)]
    pub comfort: ComfortThresholds,
}

fn default_label() -> String {
    "run".into()
}
fn default_mode() -> ParsingMode {
    ParsingMode::Cng
}
fn default_risk_mode() -> ParsingMode {
    ParsingMode::Dcs
}
fn default_repetitions() -> u32 {
    10
}
fn default_max_frames() -> u64 {
    3000
}
fn default_parallelism() -> usize {
    1
}
fn default_history_len() -> usize {
    crate::dualsys::DEFAULT_HISTORY_LEN
}
fn default_deadline() -> f64 {
    crate::dualsys::DEFAULT_DEADLINE.as_secs_f64()
}

const BUNDLED: &str = "bundled";

fn read(path: &Path) -> Result<String, CampaignError> {
    std::fs::read_to_string(path).map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CampaignError> {
    serde_json::from_str(&read(path)?).map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// A config with defaults for everything but the essentials.
    pub fn new(routes: impl Into<PathBuf>, fast: AdapterConfig, slow: AdapterConfig, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            label: default_label(),
            routes: routes.into(),
            scenarios: None,
            fast,
            slow,
            risk_slow: None,
            parsing_mode: default_mode(),
            hybrid: false,
            risk_mode: default_risk_mode(),
            suffix_table: None,
            repetitions: default_repetitions(),
            seed: 0,
            max_frames: default_max_frames(),
            output_dir: output_dir.into(),
            parallelism: default_parallelism(),
            history_len: default_history_len(),
            fast_deadline_s: default_deadline(),
            slow_deadline_s: default_deadline(),
            prompts: PromptPaths::default(),
            sim: SimConfig::default(),
            penalties: PenaltyTable::default(),
            comfort: ComfortThresholds::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CampaignError> {
        serde_json::from_str(text).map_err(|e| CampaignError::Config(e.to_string()))
    }

    /// Read a config file; relative paths inside it are taken relative to the file.
    pub fn load(path: &Path) -> Result<Self, CampaignError> {
        let mut cfg = Self::from_json(&read(path)?).map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && p.as_os_str() != BUNDLED {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.routes);
        fix(&mut self.output_dir);
        let p = &mut self.prompts;
        for slot in [&mut self.scenarios, &mut self.suffix_table, &mut p.tasks, &mut p.cng_template, &mut p.dcs_template, &mut p.candidates, &mut p.threat_query] {
            if let Some(path) = slot {
                fix(path);
            }
        }
        for a in [Some(&mut self.fast), Some(&mut self.slow), self.risk_slow.as_mut()].into_iter().flatten() {
            for path in a.paths_mut() {
                fix(path);
            }
        }
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: String| Err(CampaignError::Config(m));
        if self.repetitions < 1 {
            return bad("repetitions must be ≥ 1".into());
        }
        if self.parallelism < 1 {
            return bad("parallelism must be ≥ 1".into());
        }
        if self.max_frames < 1 {
            return bad("max_frames must be ≥ 1".into());
        }
        for (name, v) in [("fast_deadline_s", self.fast_deadline_s), ("slow_deadline_s", self.slow_deadline_s)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.sim.dt > 0.0 && self.sim.dt.is_finite()) {
            return bad(format!("sim.dt must be > 0, got {}", self.sim.dt));
        }
        if self.label.trim().is_empty() {
            return bad("label must not be empty".into());
        }
        self.comfort.validate().map_err(|e| CampaignError::Config(e.to_string()))?;
        let p = &self.prompts;
        let mut required: Vec<(&str, &Path)> = vec![("routes", &self.routes)];
        for (name, slot) in [
            ("scenarios", &self.scenarios),
            ("prompts.tasks", &p.tasks),
            ("prompts.cng_template", &p.cng_template),
            ("prompts.dcs_template", &p.dcs_template),
            ("prompts.candidates", &p.candidates),
            ("prompts.threat_query", &p.threat_query),
        ] {
            if let Some(path) = slot {
                required.push((name, path));
            }
        }
        if let Some(path) = self.suffix_table.as_ref().filter(|p| p.as_os_str() != BUNDLED) {
            required.push(("suffix_table", path));
        }
        for (name, a) in [("fast", Some(&self.fast)), ("slow", Some(&self.slow)), ("risk_slow", self.risk_slow.as_ref())] {
            if let Some(a) = a {
                if let AdapterConfig::Endpoint(spec) = a {
                    spec.validate().map_err(|e| CampaignError::Config(format!("{name}: {e}")))?;
                }
                required.extend(a.required_paths().into_iter().map(|p| (name, p)));
            }
        }
        for (name, path) in required {
            if !path.exists() {
                return bad(format!("{name}: {} does not exist", path.display()));
            }
        }
        Ok(())
    }

    pub fn load_routes(&self) -> Result<Vec<RouteSpec>, CampaignError> {
        let routes = load_route_set(&self.routes).map_err(|e| CampaignError::Config(e.to_string()))?;
        if routes.is_empty() {
            return Err(CampaignError::Config(format!("{}: no routes", self.routes.display())));
        }
        let mut ids: Vec<&str> = routes.iter().map(|r| r.route_id.as_str()).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(CampaignError::Config(format!("duplicate route_id {}", w[0])));
        }
        Ok(routes)
    }

    pub fn load_scenarios(&self) -> Result<Vec<ScenarioSpec>, CampaignError> {
        match &self.scenarios {
            None => Ok(Vec::new()),
            Some(dir) => load_suite(dir).map_err(|e| CampaignError::Config(e.to_string())),
        }
    }

    pub fn dual_system_config(&self) -> Result<DualSystemConfig, CampaignError> {
        let mut cfg = DualSystemConfig::defaults(self.parsing_mode);
        let p = &self.prompts;
        if let Some(path) = &p.tasks {
            cfg.tasks = read_json::<TaskSet>(path)?;
        }
        if let Some(path) = &p.cng_template {
            cfg.slow.cng_template = read_json::<PromptTemplate>(path)?;
        }
        if let Some(path) = &p.dcs_template {
            cfg.slow.dcs_template = read_json::<PromptTemplate>(path)?;
        }
        if let Some(path) = &p.candidates {
            cfg.slow.candidates = read_json::<CandidateSet>(path)?;
        }
        cfg.history_len = self.history_len;
        cfg.fast_deadline = Duration::from_secs_f64(self.fast_deadline_s);
        cfg.slow.deadline = Duration::from_secs_f64(self.slow_deadline_s);
        cfg.suffixes = match &self.suffix_table {
            None => None,
            Some(p) if p.as_os_str() == BUNDLED => Some(default_suffix_table()),
            Some(p) => Some(read_json::<SuffixTable>(p)?),
        };
        if self.hybrid {
            let mut h = HybridConfig {
                risk_mode: self.risk_mode,
                ..HybridConfig::default()
            };
            if let Some(path) = &p.threat_query {
                h.question = read(path)?.trim().to_string();
            }
            cfg.hybrid = Some(h);
        }
        cfg.validate().map_err(|e| CampaignError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn build_dual_system(&self) -> Result<DualSystem, CampaignError> {
        let mut system = DualSystem::new(self.dual_system_config()?, self.fast.build()?, self.slow.build()?);
        if let Some(risk) = &self.risk_slow {
            system = system.with_risk_adapter(risk.build()?);
        }
        Ok(system)
    }
}
