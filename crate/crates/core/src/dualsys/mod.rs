//! Dual-system command-to-control translation.
//!
//! The fast system (the driving model under test) answers task prompts over
//! the recent observation history with free-form text. The slow system (a
//! general model) turns the action-oriented text into a [`ControlVector`],
//! either by writing numbers (CNG) or by picking a candidate (DCS). Every
//! failure path degrades to [`fallback_action`].

mod parse;
mod pipeline;
mod template;

use std::collections::BTreeMap;
use std::fmt::Write;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adapters::{call_with_deadline, ImagePayload, ModelRequest, SharedAdapter};
use crate::domain::{CommandSet, ControlVector, Observation, ScenePayload, Task, TaskSet};

pub use parse::{format_cng, parse_cng, select_dcs, Candidate, CandidateSet};
pub use pipeline::{Decision, DualSystem, DualSystemConfig, HybridConfig};
pub use template::PromptTemplate;

pub const DEFAULT_HISTORY_LEN: usize = 4;
pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(10);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DualSysError {
    #[error("observation history is empty")]
    EmptyHistory,
    #[error("observation history has {got} frames, limit is {limit}")]
    HistoryTooLong { got: usize, limit: usize },
    #[error("template: {0}")]
    Template(String),
    #[error("unresolved placeholder {{{0}}}")]
    UnresolvedPlaceholder(String),
    #[error("{0:?} template used with mismatched candidates")]
    ModeMismatch(ParsingMode),
    #[error("candidates: {0}")]
    Candidates(String),
    #[error("cng parse failure: {0}")]
    CngParse(String),
    #[error("dcs selection failure: {0}")]
    DcsSelect(String),
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParsingMode {
    /// Continuous numerical generation.
    Cng,
    /// Discrete classification selection.
    Dcs,
}

/// Full brake, zero steer: what the loop executes whenever translation fails.
pub fn fallback_action() -> ControlVector {
    ControlVector::FULL_BRAKE
}

/// History rendered for a prompt, plus the image payloads it references.
pub fn format_history(history: &[Observation]) -> (String, Vec<ImagePayload>) {
    let mut text = String::new();
    let mut images = Vec::new();
    for obs in history {
        let _ = write!(text, "[frame {} | t={:.2} s] ", obs.frame_index, obs.timestamp);
        match &obs.scene {
            ScenePayload::Text { description } => {
                text.push('\n');
                text.push_str(description.trim_end());
                text.push('\n');
            }
            ScenePayload::Image { encoding, data } => {
                images.push(ImagePayload {
                    encoding: encoding.clone(),
                    data: data.clone(),
                });
                let _ = writeln!(text, "<image {} attached>", images.len());
            }
        }
    }
    (text, images)
}

/// One request per task, each carrying the task prompt and the whole history.
pub fn build_fast_prompts(
    history: &[Observation],
    tasks: &TaskSet,
    max_history: usize,
) -> Result<Vec<(Task, ModelRequest)>, DualSysError> {
    if history.is_empty() {
        return Err(DualSysError::EmptyHistory);
    }
    if history.len() > max_history + 1 {
        return Err(DualSysError::HistoryTooLong {
            got: history.len(),
            limit: max_history + 1,
        });
    }
    let (scene, images) = format_history(history);
    Ok(tasks
        .tasks()
        .iter()
        .map(|task| {
            let prompt = format!(
                "{}\n\nObservations (oldest first):\n{}",
                tasks.prompt(*task).expect("task set has a prompt per task"),
                scene
            );
            (*task, ModelRequest { prompt, images: images.clone() })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFailure {
    pub task: Task,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FastOutcome {
    pub commands: CommandSet,
    pub failures: Vec<TaskFailure>,
}

/// Query the fast system once per prompt under `deadline`; failed tasks are
/// listed rather than raised.
pub fn query_fast(adapter: &SharedAdapter, prompts: &[(Task, ModelRequest)], deadline: Duration) -> FastOutcome {
    let mut out = FastOutcome::default();
    for (task, request) in prompts {
        let resp = call_with_deadline(adapter, request, deadline);
        if resp.is_ok() {
            out.commands.per_task_text.insert(*task, resp.text);
        } else {
            out.failures.push(TaskFailure {
                task: *task,
                reason: resp.describe_failure(),
            });
        }
    }
    out
}

pub fn build_slow_prompt(
    command: &str,
    history: &[Observation],
    template: &PromptTemplate,
    candidates: Option<&CandidateSet>,
) -> Result<String, DualSysError> {
    let mut values = BTreeMap::new();
    values.insert(template::COMMAND_TEXT, command.to_string());
    values.insert(template::SCENE, format_history(history).0);
    match (template.mode(), candidates) {
        (ParsingMode::Dcs, Some(c)) => {
            values.insert(template::CANDIDATES, c.prompt_listing());
        }
        (ParsingMode::Cng, None) => {}
        (mode, _) => return Err(DualSysError::ModeMismatch(mode)),
    }
    template.render(&values)
}

/// Slow-system settings for one parsing mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SlowConfig {
    pub mode: ParsingMode,
    pub cng_template: PromptTemplate,
    pub dcs_template: PromptTemplate,
    pub candidates: CandidateSet,
    pub deadline: Duration,
}

impl SlowConfig {
    pub fn defaults(mode: ParsingMode) -> Self {
        Self {
            mode,
            cng_template: default_cng_template(),
            dcs_template: default_dcs_template(),
            candidates: CandidateSet::default_set(),
            deadline: DEFAULT_DEADLINE,
        }
    }
}

pub fn default_cng_template() -> PromptTemplate {
    serde_json::from_str(include_str!("../../assets/prompts/v1/cng.json")).expect("bundled CNG template is valid")
}

pub fn default_dcs_template() -> PromptTemplate {
    serde_json::from_str(include_str!("../../assets/prompts/v1/dcs.json")).expect("bundled DCS template is valid")
}

pub fn default_task_set() -> TaskSet {
    serde_json::from_str(include_str!("../../assets/prompts/v1/fast_tasks.json")).expect("bundled task set is valid")
}

pub fn default_threat_query() -> String {
    include_str!("../../assets/prompts/v1/threat_query.txt").trim().to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub control: ControlVector,
    pub response: Option<String>,
    /// Why the fallback was used, if it was.
    pub failure: Option<String>,
}

impl Translation {
    fn fallback(reason: String, response: Option<String>) -> Self {
        Self {
            control: fallback_action(),
            response,
            failure: Some(reason),
        }
    }
}

/// Command text to control vector through the slow system. Never fails:
/// every error becomes the fallback action with the reason attached.
pub fn translate(command: &str, history: &[Observation], config: &SlowConfig, slow: &SharedAdapter) -> Translation {
    if command.trim().is_empty() {
        return Translation::fallback("empty command".into(), None);
    }
    let (template, candidates) = match config.mode {
        ParsingMode::Cng => (&config.cng_template, None),
        ParsingMode::Dcs => (&config.dcs_template, Some(&config.candidates)),
    };
    let prompt = match build_slow_prompt(command, history, template, candidates) {
        Ok(p) => p,
        Err(e) => return Translation::fallback(format!("slow prompt: {e}"), None),
    };
    let (_, images) = format_history(history);
    let resp = call_with_deadline(slow, &ModelRequest { prompt, images }, config.deadline);
    if !resp.is_ok() {
        return Translation::fallback(format!("slow system: {}", resp.describe_failure()), None);
    }
    let parsed = match config.mode {
        ParsingMode::Cng => parse_cng(&resp.text),
        ParsingMode::Dcs => select_dcs(&resp.text, &config.candidates).map(|c| c.control),
    };
    match parsed {
        Ok(control) => Translation {
            control,
            response: Some(resp.text),
            failure: None,
        },
        Err(e) => Translation::fallback(e.to_string(), Some(resp.text)),
    }
}

/// Literal command prefix → suffix appended before translation.
pub type SuffixTable = BTreeMap<String, String>;

pub fn default_suffix_table() -> SuffixTable {
    serde_json::from_str(include_str!("../../assets/prompts/v1/suffixes.json")).expect("bundled suffix table is valid")
}

/// Append the configured suffix when the command starts with a table pattern;
/// the longest matching pattern wins.
pub fn apply_suffix_control(command: &str, table: &SuffixTable) -> String {
    table
        .iter()
        .filter(|(pattern, _)| !pattern.is_empty() && command.starts_with(pattern.as_str()))
        .max_by_key(|(pattern, _)| pattern.len())
        .map(|(_, suffix)| format!("{command}{suffix}"))
        .unwrap_or_else(|| command.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlowChoice {
    Default,
    Risk,
}

/// Leading yes/no token of a reply, case-insensitive; anything else is `None`.
pub fn classify_yes_no(reply: &str) -> Option<bool> {
    let word: String = reply
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Ask the fast system whether the scene ahead is threatening and pick the
/// slow adapter accordingly. Unparseable or failed replies select the default.
pub fn hybrid_mode_select(
    fast: &SharedAdapter,
    history: &[Observation],
    question: &str,
    deadline: Duration,
) -> SlowChoice {
    let (scene, images) = format_history(history);
    let request = ModelRequest {
        prompt: format!("{question}\n\nObservations (oldest first):\n{scene}"),
        images,
    };
    let resp = call_with_deadline(fast, &request, deadline);
    match resp.is_ok().then(|| classify_yes_no(&resp.text)).flatten() {
        Some(true) => SlowChoice::Risk,
        _ => SlowChoice::Default,
    }
}
