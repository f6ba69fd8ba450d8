use std::time::Duration;

use super::{
    apply_suffix_control, build_fast_prompts, default_task_set, default_threat_query, fallback_action,
    hybrid_mode_select, query_fast, translate, DualSysError, ParsingMode, SlowChoice, SlowConfig, SuffixTable,
    DEFAULT_DEADLINE, DEFAULT_HISTORY_LEN,
};
use crate::adapters::SharedAdapter;
use crate::domain::{CommandSet, ControlVector, Observation, TaskSet};

#[derive(Debug, Clone, PartialEq)]
pub struct HybridConfig {
    pub question: String,
    /// Parsing mode used when the threat query answers yes.
    pub risk_mode: ParsingMode,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            question: default_threat_query(),
            risk_mode: ParsingMode::Dcs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSystemConfig {
    pub tasks: TaskSet,
    /// Number of past frames kept besides the current one.
    pub history_len: usize,
    pub fast_deadline: Duration,
    pub slow: SlowConfig,
    pub suffixes: Option<SuffixTable>,
    pub hybrid: Option<HybridConfig>,
}

impl DualSystemConfig {
    pub fn defaults(mode: ParsingMode) -> Self {
        Self {
            tasks: default_task_set(),
            history_len: DEFAULT_HISTORY_LEN,
            fast_deadline: DEFAULT_DEADLINE,
            slow: SlowConfig::defaults(mode),
            suffixes: None,
            hybrid: None,
        }
    }
}

/// Everything one decision produced, for the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub commands: CommandSet,
    pub control: ControlVector,
    pub failures: Vec<String>,
    pub slow_choice: Option<SlowChoice>,
}

/// Fast system, slow system(s) and their settings, wired for per-frame use
/// by both the simulator loop and the HIL server.
pub struct DualSystem {
    pub config: DualSystemConfig,
    fast: SharedAdapter,
    slow: SharedAdapter,
    risk_slow: Option<SharedAdapter>,
}

impl DualSystem {
    pub fn new(config: DualSystemConfig, fast: SharedAdapter, slow: SharedAdapter) -> Self {
        Self {
            config,
            fast,
            slow,
            risk_slow: None,
        }
    }

    /// Slow adapter used when hybrid selection picks risk mode; defaults to the main slow adapter.
    pub fn with_risk_adapter(mut self, adapter: SharedAdapter) -> Self {
        self.risk_slow = Some(adapter);
        self
    }

    /// Trim `history` to the configured window, newest last.
    pub fn window<'a>(&self, history: &'a [Observation]) -> &'a [Observation] {
        let keep = self.config.history_len + 1;
        &history[history.len().saturating_sub(keep)..]
    }

    pub fn decide(&self, history: &[Observation]) -> Decision {
        let history = self.window(history);
        let mut failures = Vec::new();
        let prompts = match build_fast_prompts(history, &self.config.tasks, self.config.history_len) {
            Ok(p) => p,
            Err(e) => {
                return Decision {
                    commands: CommandSet::default(),
                    control: fallback_action(),
                    failures: vec![format!("fast prompt: {e}")],
                    slow_choice: None,
                }
            }
        };
        let fast = query_fast(&self.fast, &prompts, self.config.fast_deadline);
        failures.extend(fast.failures.iter().map(|f| format!("fast {}: {}", f.task, f.reason)));
        let commands = fast.commands;

        let action = self
            .config
            .tasks
            .tasks()
            .iter()
            .filter(|t| t.is_action())
            .find_map(|t| commands.get(*t));
        let Some(action) = action else {
            failures.push("no action command from fast system".into());
            return Decision {
                commands,
                control: fallback_action(),
                failures,
                slow_choice: None,
            };
        };
        let command = match &self.config.suffixes {
            Some(table) => apply_suffix_control(action, table),
            None => action.to_string(),
        };

        let (slow_choice, slow, slow_cfg) = match &self.config.hybrid {
            Some(h) => {
                let choice = hybrid_mode_select(&self.fast, history, &h.question, self.config.fast_deadline);
                match choice {
                    SlowChoice::Risk => {
                        let cfg = SlowConfig {
                            mode: h.risk_mode,
                            ..self.config.slow.clone()
                        };
                        (Some(choice), self.risk_slow.as_ref().unwrap_or(&self.slow), cfg)
                    }
                    SlowChoice::Default => (Some(choice), &self.slow, self.config.slow.clone()),
                }
            }
            None => (None, &self.slow, self.config.slow.clone()),
        };
        let t = translate(&command, history, &slow_cfg, slow);
        failures.extend(t.failure);
        Decision {
            commands,
            control: t.control,
            failures,
            slow_choice,
        }
    }
}

impl DualSystemConfig {
    pub fn validate(&self) -> Result<(), DualSysError> {
        if !self.tasks.tasks().iter().any(|t| t.is_action()) {
            return Err(DualSysError::Config("task set has no action-oriented task".into()));
        }
        if self.fast_deadline.is_zero() || self.slow.deadline.is_zero() {
            return Err(DualSysError::Config("deadlines must be positive".into()));
        }
        Ok(())
    }
}
