//! Line-oriented threat-scenario DSL.
//!
//! ```text
//! ACTOR <kind> AT progress=<f> offset=<m> BEHAVIOR <name> [key=value ...]
//! ACTOR <kind> AT x=<m> y=<m> BEHAVIOR <name> [key=value ...]
//! DESC <free text>
//! ```
//!
//! Keywords are case-insensitive. A block is a run of consecutive ACTOR/DESC
//! lines; anything else (prose, code fences) separates blocks.

use std::collections::BTreeMap;
use std::fmt::Write;

use thiserror::Error;

use super::ScenarioSpec;
use crate::sim::{ActorKind, ActorSpec, Behavior, LightPhases, Spawn, DEFAULT_TRIGGER_DISTANCE};

pub const DEFAULT_LATERAL_SPEED: f64 = 1.0;
pub const DEFAULT_BRAKE_DELAY: f64 = 2.0;
pub const DEFAULT_BRAKE_DECEL: f64 = 6.0;
pub const DEFAULT_LIGHT_PHASE: f64 = 10.0;

pub const GRAMMAR: &str = include_str!("../../assets/dsl/grammar.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("line {line}, column {col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("line {line}: invalid {field}: {reason}")]
    Validation { line: usize, field: String, reason: String },
}

impl DslError {
    pub fn line(&self) -> usize {
        match self {
            DslError::Syntax { line, .. } | DslError::Validation { line, .. } => *line,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LineKind {
    Actor,
    Desc,
}

/// Whitespace-separated token with its 1-based column.
struct Token<'a> {
    text: &'a str,
    col: usize,
}

fn tokens(line: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in line.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push(Token {
                    text: &line[s..i],
                    col: line[..s].chars().count() + 1,
                });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &line[s..],
            col: line[..s].chars().count() + 1,
        });
    }
    out
}

fn classify(line: &str) -> Option<LineKind> {
    let first = line.split_whitespace().next()?;
    if first.eq_ignore_ascii_case("ACTOR") {
        Some(LineKind::Actor)
    } else if first.eq_ignore_ascii_case("DESC") {
        Some(LineKind::Desc)
    } else {
        None
    }
}

/// Parse the first well-formed block in `text`. When no block parses, the
/// error of the first block tried is returned.
pub fn parse_dsl(text: &str, scenario_id: &str, base_route_id: &str) -> Result<ScenarioSpec, DslError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut first_err = None;
    let mut i = 0;
    while i < lines.len() {
        if classify(lines[i]).is_none() {
            i += 1;
            continue;
        }
        let start = i;
        while i < lines.len() && classify(lines[i]).is_some() {
            i += 1;
        }
        match parse_block(&lines[start..i], start + 1, scenario_id, base_route_id) {
            Ok(spec) => return Ok(spec),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    Err(first_err.unwrap_or(DslError::Syntax {
        line: 1,
        col: 1,
        message: "no ACTOR line found".into(),
    }))
}

fn parse_block(lines: &[&str], first_line: usize, scenario_id: &str, base_route_id: &str) -> Result<ScenarioSpec, DslError> {
    let mut actors = Vec::new();
    let mut description: Option<String> = None;
    for (k, line) in lines.iter().enumerate() {
        let n = first_line + k;
        match classify(line) {
            Some(LineKind::Actor) => {
                let actor = parse_actor(line, n, actors.len())?;
                if actors.iter().any(|a: &ActorSpec| a.actor_id == actor.actor_id) {
                    return Err(DslError::Validation {
                        line: n,
                        field: "id".into(),
                        reason: format!("duplicate actor id {}", actor.actor_id),
                    });
                }
                actors.push(actor);
            }
            Some(LineKind::Desc) => {
                if description.is_some() {
                    return Err(DslError::Syntax {
                        line: n,
                        col: 1,
                        message: "more than one DESC line".into(),
                    });
                }
                let trimmed = line.trim_start();
                description = Some(trimmed[4..].trim().to_string());
            }
            None => unreachable!("blocks only contain DSL lines"),
        }
    }
    if actors.is_empty() {
        return Err(DslError::Syntax {
            line: first_line,
            col: 1,
            message: "block has no ACTOR line".into(),
        });
    }
    Ok(ScenarioSpec {
        scenario_id: scenario_id.to_string(),
        base_route_id: base_route_id.to_string(),
        actors,
        description: description.unwrap_or_default(),
    })
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> DslError {
    DslError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

fn key_value<'a>(tok: &Token<'a>, line: usize) -> Result<(&'a str, &'a str), DslError> {
    match tok.text.split_once('=') {
        Some((k, v)) if !k.is_empty() && !v.is_empty() => Ok((k, v)),
        _ => Err(syntax(line, tok.col, format!("expected key=value, found {:?}", tok.text))),
    }
}

fn number(tok: &Token<'_>, value: &str, line: usize) -> Result<f64, DslError> {
    match value.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(syntax(line, tok.col, format!("expected a number, found {value:?}"))),
    }
}

fn expect_keyword(toks: &[Token<'_>], idx: usize, word: &str, line: usize, end_col: usize) -> Result<(), DslError> {
    match toks.get(idx) {
        Some(t) if t.text.eq_ignore_ascii_case(word) => Ok(()),
        Some(t) => Err(syntax(line, t.col, format!("expected {word}, found {:?}", t.text))),
        None => Err(syntax(line, end_col, format!("expected {word}, found end of line"))),
    }
}

fn parse_actor(line: &str, n: usize, index: usize) -> Result<ActorSpec, DslError> {
    let toks = tokens(line);
    let end_col = line.chars().count() + 1;
    let kind_tok = toks.get(1).ok_or_else(|| syntax(n, end_col, "expected actor kind"))?;
    let kind = ActorKind::parse(&kind_tok.text.to_ascii_lowercase())
        .ok_or_else(|| syntax(n, kind_tok.col, format!("unknown actor kind {:?}", kind_tok.text)))?;
    expect_keyword(&toks, 2, "AT", n, end_col)?;

    let (a, b) = match (toks.get(3), toks.get(4)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(syntax(n, end_col, "expected two spawn coordinates")),
    };
    let (ka, va) = key_value(a, n)?;
    let (kb, vb) = key_value(b, n)?;
    let spawn = match (ka.to_ascii_lowercase().as_str(), kb.to_ascii_lowercase().as_str()) {
        ("progress", "offset") => Spawn::Route {
            progress: number(a, va, n)?,
            offset: number(b, vb, n)?,
        },
        ("x", "y") => Spawn::Absolute {
            x: number(a, va, n)?,
            y: number(b, vb, n)?,
        },
        _ => return Err(syntax(n, a.col, "expected progress=<f> offset=<m> or x=<m> y=<m>")),
    };

    expect_keyword(&toks, 5, "BEHAVIOR", n, end_col)?;
    let name_tok = toks.get(6).ok_or_else(|| syntax(n, end_col, "expected behavior name"))?;
    let name = name_tok.text.to_ascii_lowercase();

    let mut params: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut actor_id = None;
    for tok in &toks[7..] {
        let (k, v) = key_value(tok, n)?;
        let key = k.to_ascii_lowercase();
        if key == "id" {
            if actor_id.replace(v.to_string()).is_some() {
                return Err(syntax(n, tok.col, "id given more than once"));
            }
            continue;
        }
        if !["speed", "trigger", "lateral_speed", "delay", "decel", "red", "green"].contains(&key.as_str()) {
            return Err(syntax(n, tok.col, format!("unknown parameter {k:?}")));
        }
        let value = number(tok, v, n)?;
        if params.insert(key, (value, tok.col)).is_some() {
            return Err(syntax(n, tok.col, format!("parameter {k} given more than once")));
        }
    }

    let mut take = |key: &str| params.remove(key).map(|(v, _)| v);
    let missing = |field: &str| DslError::Validation {
        line: n,
        field: field.into(),
        reason: format!("required by behavior {name}"),
    };
    let trigger = take("trigger").unwrap_or(DEFAULT_TRIGGER_DISTANCE);
    let behavior = match name.as_str() {
        "stationary" => Behavior::Stationary,
        "constant_velocity" => Behavior::ConstantVelocity {
            speed: take("speed").ok_or_else(|| missing("speed"))?,
        },
        "cut_in" => Behavior::CutIn {
            speed: take("speed").ok_or_else(|| missing("speed"))?,
            lateral_speed: take("lateral_speed").unwrap_or(DEFAULT_LATERAL_SPEED),
        },
        "sudden_brake" => Behavior::SuddenBrake {
            speed: take("speed").ok_or_else(|| missing("speed"))?,
            delay: take("delay").unwrap_or(DEFAULT_BRAKE_DELAY),
            decel: take("decel").unwrap_or(DEFAULT_BRAKE_DECEL),
        },
        "crossing" => Behavior::Crossing {
            speed: take("speed").ok_or_else(|| missing("speed"))?,
        },
        _ => {
            return Err(DslError::Validation {
                line: n,
                field: "behavior".into(),
                reason: format!("unknown behavior {:?}", name_tok.text),
            })
        }
    };
    let phases = match (take("red"), take("green")) {
        (None, None) => None,
        (red, green) => Some(LightPhases {
            red_s: red.unwrap_or(DEFAULT_LIGHT_PHASE),
            green_s: green.unwrap_or(DEFAULT_LIGHT_PHASE),
        }),
    };
    if let Some((key, (_, col))) = params.into_iter().next() {
        return Err(syntax(n, col, format!("parameter {key} does not apply to behavior {name}")));
    }
    let spec = ActorSpec {
        actor_id: actor_id.unwrap_or_else(|| implicit_id(index)),
        kind,
        spawn,
        behavior,
        trigger_distance: trigger,
        phases,
    };
    spec.validate().map_err(|e| DslError::Validation {
        line: n,
        field: e.field.to_string(),
        reason: e.reason,
    })?;
    Ok(spec)
}

pub fn implicit_id(index: usize) -> String {
    format!("a{index}")
}

/// Canonical DSL text for a scenario; `parse_dsl` inverts it exactly.
pub fn format_dsl(spec: &ScenarioSpec) -> String {
    let mut out = String::new();
    for (i, a) in spec.actors.iter().enumerate() {
        let _ = write!(out, "ACTOR {} AT ", a.kind);
        let _ = match a.spawn {
            Spawn::Route { progress, offset } => write!(out, "progress={progress} offset={offset}"),
            Spawn::Absolute { x, y } => write!(out, "x={x} y={y}"),
        };
        let _ = write!(out, " BEHAVIOR {}", a.behavior.name());
        let _ = match a.behavior {
            Behavior::Stationary => Ok(()),
            Behavior::ConstantVelocity { speed } | Behavior::Crossing { speed } => write!(out, " speed={speed}"),
            Behavior::CutIn { speed, lateral_speed } => write!(out, " speed={speed} lateral_speed={lateral_speed}"),
            Behavior::SuddenBrake { speed, delay, decel } => write!(out, " speed={speed} delay={delay} decel={decel}"),
        };
        let _ = write!(out, " trigger={}", a.trigger_distance);
        if let Some(p) = a.phases {
            let _ = write!(out, " red={} green={}", p.red_s, p.green_s);
        }
        if a.actor_id != implicit_id(i) {
            let _ = write!(out, " id={}", a.actor_id);
        }
        out.push('\n');
    }
    if !spec.description.is_empty() {
        let _ = writeln!(out, "DESC {}", spec.description);
    }
    out
}
