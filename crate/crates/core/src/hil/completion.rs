use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{ByeReason, ClientLog, HilError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Fraction of the planned trajectory covered before the run ended.
    pub completed_fraction: f64,
    pub full_traversal: bool,
}

impl From<&ClientLog> for RunSummary {
    fn from(log: &ClientLog) -> Self {
        Self {
            completed_fraction: log.completed_fraction,
            full_traversal: log.bye == ByeReason::Finished,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteCompletion {
    pub successes: usize,
    pub attempts: usize,
    pub rate_percent: f64,
    pub mean_completed_fraction: f64,
}

impl fmt::Display for RouteCompletion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.successes, self.attempts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub per_route: BTreeMap<String, RouteCompletion>,
    pub average_percent: f64,
}

impl CompletionReport {
    pub fn render(&self) -> String {
        let width = self.per_route.keys().map(|k| k.chars().count()).max().unwrap_or(0).max("Average".len());
        let mut out = String::new();
        for (route, c) in &self.per_route {
            out.push_str(&format!("{route:<width$}  {c}\n"));
        }
        out.push_str(&format!("{:<width$}  {:.2}%\n", "Average", self.average_percent));
        out
    }
}

/// Per-route full-traversal counts and their mean success percentage.
pub fn completion_rate(groups: &BTreeMap<String, Vec<RunSummary>>, n_runs: usize) -> Result<CompletionReport, HilError> {
    if groups.is_empty() {
        return Err(HilError::Completion("no routes".into()));
    }
    if n_runs == 0 {
        return Err(HilError::Completion("n_runs must be ≥ 1".into()));
    }
    let mut per_route = BTreeMap::new();
    for (route, runs) in groups {
        if runs.is_empty() {
            return Err(HilError::Completion(format!("route {route} has no runs")));
        }
        if runs.len() != n_runs {
            return Err(HilError::Completion(format!(
                "route {route} has {} runs, expected {n_runs}",
                runs.len()
            )));
        }
        let successes = runs.iter().filter(|r| r.full_traversal).count();
        per_route.insert(
            route.clone(),
            RouteCompletion {
                successes,
                attempts: runs.len(),
                rate_percent: 100.0 * successes as f64 / runs.len() as f64,
                mean_completed_fraction: runs.iter().map(|r| r.completed_fraction).sum::<f64>() / runs.len() as f64,
            },
        );
    }
    let average_percent = per_route.values().map(|c: &RouteCompletion| c.rate_percent).sum::<f64>() / per_route.len() as f64;
    Ok(CompletionReport {
        per_route,
        average_percent,
    })
}
