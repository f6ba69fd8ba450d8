//! Threat-scenario generation: three-stage elicitation from the fast system,
//! fusion into the scenario DSL by the slow system, then compilation.

mod dsl;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{call_with_deadline, ModelRequest, SharedAdapter};
use crate::domain::Observation;
use crate::dualsys::{format_history, DEFAULT_DEADLINE};
use crate::sim::{load_route, ActorSpec, ObservationMode, RouteSpec, SimConfig};

pub use dsl::{format_dsl, implicit_id, parse_dsl, DslError, GRAMMAR};

pub const REPAIR_BUDGET: u32 = 3;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum ScenGenError {
    #[error("scenario {0}: {1}")]
    Invalid(String, String),
    #[error("slow system failed: {0}")]
    Fusion(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

/// A compiled, simulator-loadable threat scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario_id: String,
    pub base_route_id: String,
    pub actors: Vec<ActorSpec>,
    #[serde(default)]
    pub description: String,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), ScenGenError> {
        let bad = |reason: String| ScenGenError::Invalid(self.scenario_id.clone(), reason);
        if self.actors.is_empty() {
            return Err(bad("no actors".into()));
        }
        for (i, a) in self.actors.iter().enumerate() {
            if a.actor_id.is_empty() || a.actor_id.chars().any(char::is_whitespace) {
                return Err(bad(format!("actor id {:?} must be a non-empty word", a.actor_id)));
            }
            if self.actors[..i].iter().any(|o| o.actor_id == a.actor_id) {
                return Err(bad(format!("duplicate actor id {}", a.actor_id)));
            }
            a.validate().map_err(|e| bad(format!("actor {}: {e}", a.actor_id)))?;
        }
        if self.description.contains(['\n', '\r']) || self.description.trim() != self.description {
            return Err(bad("description must be a single trimmed line".into()));
        }
        Ok(())
    }
}

pub fn scenario_id_for(route_id: &str) -> String {
    format!("{route_id}__threat")
}

/// Stage queries for the three-stage elicitation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct P3Prompts {
    pub perception: String,
    pub prediction: String,
    pub planning: String,
}

impl Default for P3Prompts {
    fn default() -> Self {
        serde_json::from_str(include_str!("../../assets/prompts/v1/p3.json")).expect("bundled stage prompts are valid")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct P3Answers {
    pub perception: String,
    pub prediction: String,
    pub planning: String,
    /// Set when any stage failed and was left empty.
    pub degraded: bool,
}

pub fn elicit_p3(fast: &SharedAdapter, history: &[Observation], prompts: &P3Prompts, deadline: Duration) -> P3Answers {
    let (scene, images) = format_history(history);
    let ask = |question: &str| {
        let req = ModelRequest {
            prompt: format!("{question}\n\nObservations (oldest first):\n{scene}"),
            images: images.clone(),
        };
        let resp = call_with_deadline(fast, &req, deadline);
        resp.is_ok().then_some(resp.text)
    };
    let answers = [
        ask(&prompts.perception),
        ask(&prompts.prediction),
        ask(&prompts.planning),
    ];
    let degraded = history.is_empty() || answers.iter().any(Option::is_none);
    let [perception, prediction, planning] = answers.map(Option::unwrap_or_default);
    P3Answers {
        perception,
        prediction,
        planning,
        degraded,
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("static regex"))
}

/// The fusion prompt: all three answers verbatim plus the DSL grammar.
pub fn fusion_prompt(answers: &P3Answers) -> String {
    let template = include_str!("../../assets/prompts/v1/fusion.txt");
    placeholder_re()
        .replace_all(template, |c: &regex::Captures<'_>| match &c[1] {
            "perception" => answers.perception.clone(),
            "prediction" => answers.prediction.clone(),
            "planning" => answers.planning.clone(),
            "grammar" => GRAMMAR.to_string(),
            other => format!("{{{other}}}"),
        })
        .into_owned()
}

pub fn fuse(answers: &P3Answers, slow: &SharedAdapter, deadline: Duration) -> Result<String, ScenGenError> {
    fuse_prompt(&fusion_prompt(answers), slow, deadline)
}

fn fuse_prompt(prompt: &str, slow: &SharedAdapter, deadline: Duration) -> Result<String, ScenGenError> {
    let resp = call_with_deadline(slow, &ModelRequest::text(prompt), deadline);
    if resp.is_ok() {
        Ok(resp.text)
    } else {
        Err(ScenGenError::Fusion(resp.describe_failure()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub route_id: String,
    pub scenario_id: Option<String>,
    /// Re-prompts spent after the first fusion attempt.
    pub repairs: u32,
    pub degraded_p3: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub scenarios: Vec<ScenarioSpec>,
    pub log: Vec<GenerationOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOptions {
    pub prompts: P3Prompts,
    pub deadline: Duration,
    pub repair_budget: u32,
    pub sim: SimConfig,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        Self {
            prompts: P3Prompts::default(),
            deadline: DEFAULT_DEADLINE,
            repair_budget: REPAIR_BUDGET,
            sim: SimConfig::default(),
        }
    }
}

fn generate_one(route: &RouteSpec, fast: &SharedAdapter, slow: &SharedAdapter, opts: &GenerationOptions) -> (Option<ScenarioSpec>, GenerationOutcome) {
    let mut outcome = GenerationOutcome {
        route_id: route.route_id.clone(),
        scenario_id: None,
        repairs: 0,
        degraded_p3: false,
        error: None,
    };
    let world = match load_route(route, None, 0, &opts.sim) {
        Ok(w) => w,
        Err(e) => {
            outcome.error = Some(format!("route: {e}"));
            return (None, outcome);
        }
    };
    let history = [world.render(ObservationMode::Text)];
    let answers = elicit_p3(fast, &history, &opts.prompts, opts.deadline);
    outcome.degraded_p3 = answers.degraded;
    let base_prompt = fusion_prompt(&answers);
    let scenario_id = scenario_id_for(&route.route_id);
    let mut prompt = base_prompt.clone();
    for attempt in 0..=opts.repair_budget {
        outcome.repairs = attempt;
        let text = match fuse_prompt(&prompt, slow, opts.deadline) {
            Ok(t) => t,
            Err(e) => {
                outcome.error = Some(e.to_string());
                return (None, outcome);
            }
        };
        let checked = parse_dsl(&text, &scenario_id, &route.route_id)
            .map_err(|e| e.to_string())
            .and_then(|spec| spec.validate().map(|_| spec).map_err(|e| e.to_string()))
            .and_then(|spec| {
                load_route(route, Some(&spec), 0, &opts.sim)
                    .map(|_| spec)
                    .map_err(|e| format!("simulator rejected scenario: {e}"))
            });
        match checked {
            Ok(spec) => {
                outcome.scenario_id = Some(scenario_id);
                outcome.error = None;
                return (Some(spec), outcome);
            }
            Err(e) => {
                prompt = format!(
                    "{base_prompt}\n\nYour previous answer was rejected: {e}\nReply again with a corrected scenario in the DSL."
                );
                outcome.error = Some(e);
            }
        }
    }
    (None, outcome)
}

/// One threat scenario attempted per route; failures are logged, not raised.
pub fn generate_suite(routes: &[RouteSpec], fast: &SharedAdapter, slow: &SharedAdapter, opts: &GenerationOptions) -> SuiteResult {
    let results: Vec<_> = routes.par_iter().map(|r| generate_one(r, fast, slow, opts)).collect();
    let mut scenarios = Vec::new();
    let mut log = Vec::new();
    for (spec, outcome) in results {
        scenarios.extend(spec);
        log.push(outcome);
    }
    SuiteResult { scenarios, log }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteManifest {
    /// route_id → scenario_id
    pub scenarios: BTreeMap<String, String>,
    #[serde(default)]
    pub log: Vec<GenerationOutcome>,
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> ScenGenError {
    ScenGenError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// Write one JSON file per scenario plus the manifest.
pub fn save_suite(dir: &Path, suite: &SuiteResult) -> Result<(), ScenGenError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut manifest = SuiteManifest {
        log: suite.log.clone(),
        ..Default::default()
    };
    for spec in &suite.scenarios {
        let path = dir.join(format!("{}.json", spec.scenario_id));
        let text = serde_json::to_string_pretty(spec).expect("scenario serialization is infallible");
        std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        manifest.scenarios.insert(spec.base_route_id.clone(), spec.scenario_id.clone());
    }
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialization is infallible");
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))
}

/// Load every scenario listed in a suite manifest, validated.
pub fn load_suite(dir: &Path) -> Result<Vec<ScenarioSpec>, ScenGenError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let manifest: SuiteManifest = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
    let mut out = Vec::new();
    for (route_id, scenario_id) in &manifest.scenarios {
        let path = dir.join(format!("{scenario_id}.json"));
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let spec: ScenarioSpec = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
        if &spec.base_route_id != route_id {
            return Err(io_err(&path, format!("manifest pairs it with route {route_id}")));
        }
        spec.validate()?;
        out.push(spec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::{ResponseStatus, ScriptRule, ScriptedAdapter};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    const BLOCK: &str = "ACTOR vehicle AT progress=0.5 offset=3.5 BEHAVIOR cut_in speed=6 trigger=15\nDESC merge";

    fn scripted(rules: Vec<ScriptRule>) -> SharedAdapter {
        Arc::new(ScriptedAdapter::new(rules).unwrap())
    }

    fn fast() -> SharedAdapter {
        scripted(vec![
            ScriptRule::reply("happening", "A straight empty road."),
            ScriptRule::reply("influence", "Nothing nearby."),
            ScriptRule::reply("next action", "Keep going."),
        ])
    }

    fn history() -> Vec<Observation> {
        let route = RouteSpec::straight("r", 100.0, 1.75, 8.0);
        vec![load_route(&route, None, 0, &SimConfig::default()).unwrap().render(ObservationMode::Text)]
    }

    #[test]
    fn p3_stages() {
        let p = P3Prompts::default();
        let a = elicit_p3(&fast(), &history(), &p, DEFAULT_DEADLINE);
        assert_eq!(
            (a.perception.as_str(), a.prediction.as_str(), a.planning.as_str(), a.degraded),
            ("A straight empty road.", "Nothing nearby.", "Keep going.", false)
        );
        let partial = scripted(vec![
            ScriptRule::fail(Some("influence".into()), ResponseStatus::Timeout),
            ScriptRule::always("ok"),
        ]);
        let a = elicit_p3(&partial, &history(), &p, DEFAULT_DEADLINE);
        assert_eq!(a.prediction, "");
        assert!(a.degraded);
        let dead: SharedAdapter = Arc::new(ScriptedAdapter::always_failing(ResponseStatus::TransportError));
        let a = elicit_p3(&dead, &history(), &p, DEFAULT_DEADLINE);
        assert_eq!(a, P3Answers { degraded: true, ..Default::default() });
    }

    #[test]
    fn fusion_embeds_answers() {
        let a = P3Answers {
            perception: "PERC {grammar}".into(),
            prediction: "PRED".into(),
            planning: "PLAN".into(),
            degraded: false,
        };
        let prompt = fusion_prompt(&a);
        for t in ["PERC {grammar}", "PRED", "PLAN", "BEHAVIOR"] {
            assert!(prompt.contains(t));
        }
        assert_eq!(fuse(&a, &scripted(vec![ScriptRule::always(BLOCK)]), DEFAULT_DEADLINE).unwrap(), BLOCK);
        let dead: SharedAdapter = Arc::new(ScriptedAdapter::always_failing(ResponseStatus::Timeout));
        assert!(fuse(&a, &dead, DEFAULT_DEADLINE).is_err());
    }

    fn routes(n: usize) -> Vec<RouteSpec> {
        (0..n).map(|i| RouteSpec::straight(format!("r{i}"), 100.0, 1.75, 8.0)).collect()
    }

    #[test]
    fn suite_pairs_ids() {
        let out = generate_suite(&routes(5), &fast(), &scripted(vec![ScriptRule::always(BLOCK)]), &GenerationOptions::default());
        assert_eq!(out.scenarios.len(), 5);
        for (i, s) in out.scenarios.iter().enumerate() {
            assert_eq!(s.base_route_id, format!("r{i}"));
            assert_eq!(s.scenario_id, format!("r{i}__threat"));
        }
    }

    /// Invalid on the first call, valid afterwards.
    struct FlakyOnce(AtomicUsize);

    impl crate::adapters::ModelAdapter for FlakyOnce {
        fn complete(&self, req: &ModelRequest) -> crate::adapters::ModelResponse {
            let n = self.0.fetch_add(1, Ordering::SeqCst);
            if n == 0 {
                assert!(!req.prompt.contains("rejected"));
                crate::adapters::ModelResponse::ok("ACTOR vehicle AT progress=7 offset=0 BEHAVIOR stationary", 0.0)
            } else {
                assert!(req.prompt.contains("invalid progress"));
                crate::adapters::ModelResponse::ok(BLOCK, 0.0)
            }
        }
    }

    #[test]
    fn repair_loop() {
        let slow: SharedAdapter = Arc::new(FlakyOnce(AtomicUsize::new(0)));
        let out = generate_suite(&routes(1), &fast(), &slow, &GenerationOptions::default());
        assert_eq!(out.scenarios.len(), 1);
        assert_eq!(out.log[0].repairs, 1);

        let never = scripted(vec![ScriptRule::always("I cannot do that.")]);
        let out = generate_suite(&routes(2), &fast(), &never, &GenerationOptions::default());
        assert!(out.scenarios.is_empty());
        assert_eq!(out.log.len(), 2);
        assert_eq!(out.log[0].repairs, REPAIR_BUDGET);
        assert!(out.log[0].error.is_some());
    }

    #[test]
    fn suite_persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = generate_suite(&routes(3), &fast(), &scripted(vec![ScriptRule::always(BLOCK)]), &GenerationOptions::default());
        save_suite(dir.path(), &out).unwrap();
        assert_eq!(load_suite(dir.path()).unwrap(), out.scenarios);
    }
}
