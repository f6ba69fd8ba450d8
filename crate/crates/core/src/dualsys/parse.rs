//! Extraction of control vectors from free-form slow-system replies.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::DualSysError;
use crate::domain::{clamp_control, ControlVector};

const NUMBER: &str = r"[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?";

fn labeled_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(&format!(
            r"(?i)\b(steer(?:ing)?|throttle|brake)\b(?:\s+(?:angle|value|command))?\s*(?:[:=]|\bis\b)?\s*({NUMBER})"
        ))
        .expect("static regex")
    })
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(NUMBER).expect("static regex"))
}

/// Continuous-mode parse: labeled fields first (order-insensitive), otherwise
/// exactly three bare numbers read as steer, throttle, brake. Anything else is
/// a parse failure rather than a guess.
pub fn parse_cng(response: &str) -> Result<ControlVector, DualSysError> {
    let mut values: [Option<f64>; 3] = [None; 3];
    let mut labeled = 0;
    for cap in labeled_re().captures_iter(response) {
        let label = cap[1].to_ascii_lowercase();
        let slot = if label.starts_with("steer") {
            0
        } else if label == "throttle" {
            1
        } else {
            2
        };
        let value: f64 = cap[2]
            .parse()
            .map_err(|_| DualSysError::CngParse(format!("unreadable number {}", &cap[2])))?;
        if values[slot].is_some() {
            return Err(DualSysError::CngParse(format!("label {label} given more than once")));
        }
        values[slot] = Some(value);
        labeled += 1;
    }
    let (steer, throttle, brake) = match (labeled, values) {
        (3, [Some(s), Some(t), Some(b)]) => (s, t, b),
        (0, _) => {
            let numbers: Vec<f64> = number_re()
                .find_iter(response)
                .filter_map(|m| m.as_str().parse().ok())
                .collect();
            match numbers.as_slice() {
                [s, t, b] => (*s, *t, *b),
                [] => return Err(DualSysError::CngParse("no numeric values".into())),
                other => {
                    return Err(DualSysError::CngParse(format!(
                        "expected 3 unlabeled values, found {}",
                        other.len()
                    )))
                }
            }
        }
        _ => {
            return Err(DualSysError::CngParse(format!("only {labeled} of 3 labeled values present")));
        }
    };
    clamp_control(steer, throttle, brake).map_err(|e| DualSysError::CngParse(e.to_string()))
}

/// Canonical CNG text for a control; `parse_cng` inverts it exactly.
pub fn format_cng(u: &ControlVector) -> String {
    u.to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub label: String,
    pub control: ControlVector,
}

/// Discrete control options for DCS mode; labels unique ignoring case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Candidate>", into = "Vec<Candidate>")]
pub struct CandidateSet {
    entries: Vec<Candidate>,
}

impl TryFrom<Vec<Candidate>> for CandidateSet {
    type Error = DualSysError;
    fn try_from(entries: Vec<Candidate>) -> Result<Self, Self::Error> {
        CandidateSet::new(entries)
    }
}

impl From<CandidateSet> for Vec<Candidate> {
    fn from(set: CandidateSet) -> Self {
        set.entries
    }
}

/// Lower-case ASCII and treat `_`/`-` as spaces so "HARD_LEFT" matches "hard left".
fn normalize(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '_' | '-' => ' ',
            c => c.to_ascii_lowercase(),
        })
        .collect()
}

impl CandidateSet {
    pub fn new(entries: Vec<Candidate>) -> Result<Self, DualSysError> {
        if entries.len() < 2 {
            return Err(DualSysError::Candidates(format!("need at least 2 candidates, got {}", entries.len())));
        }
        for (i, c) in entries.iter().enumerate() {
            let norm = normalize(c.label.trim());
            if norm.trim().is_empty() {
                return Err(DualSysError::Candidates(format!("candidate {i} has an empty label")));
            }
            if entries[..i].iter().any(|o| normalize(o.label.trim()) == norm) {
                return Err(DualSysError::Candidates(format!("duplicate label {}", c.label)));
            }
            if !c.control.is_valid() {
                return Err(DualSysError::Candidates(format!("candidate {} has an invalid control", c.label)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Candidate] {
        &self.entries
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|c| c.label.as_str())
    }

    pub fn default_set() -> Self {
        serde_json::from_str(include_str!("../../assets/prompts/v1/candidates.json")).expect("bundled candidate set is valid")
    }

    /// Render the candidate list for a DCS prompt: one `- LABEL` line each.
    pub fn prompt_listing(&self) -> String {
        self.entries
            .iter()
            .map(|c| format!("- {}", c.label))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Discrete-mode selection: the earliest label occurrence in the response
/// wins, the longest label breaking ties at the same position. Occurrences
/// must sit on word boundaries.
pub fn select_dcs<'a>(response: &str, candidates: &'a CandidateSet) -> Result<&'a Candidate, DualSysError> {
    let hay = normalize(response);
    let bytes = hay.as_bytes();
    let is_word = |b: u8| b.is_ascii_alphanumeric();
    let mut best: Option<(usize, usize, usize)> = None;
    for (idx, cand) in candidates.entries.iter().enumerate() {
        let needle = normalize(cand.label.trim());
        for (start, _) in hay.match_indices(&needle) {
            let end = start + needle.len();
            let left_ok = start == 0 || !is_word(bytes[start - 1]);
            let right_ok = end == bytes.len() || !is_word(bytes[end]);
            if !(left_ok && right_ok) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bs, blen, _)) => start < bs || (start == bs && needle.len() > blen),
            };
            if better {
                best = Some((start, needle.len(), idx));
            }
            break;
        }
    }
    match best {
        Some((_, _, idx)) => Ok(&candidates.entries[idx]),
        None => Err(DualSysError::DcsSelect(format!(
            "no candidate label found in {:?}",
            response.chars().take(80).collect::<String>()
        ))),
    }
}
