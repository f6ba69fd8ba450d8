use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DualSysError, ParsingMode};

pub const COMMAND_TEXT: &str = "command_text";
pub const SCENE: &str = "scene";
pub const CANDIDATES: &str = "candidates";

/// Control prompt template with `{command_text}`, `{scene}` and (DCS only)
/// `{candidates}` placeholders. A `{` not followed by `identifier}` is literal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TemplateRaw", into = "TemplateRaw")]
pub struct PromptTemplate {
    template_id: String,
    body: String,
    mode: ParsingMode,
}

#[derive(Serialize, Deserialize)]
struct TemplateRaw {
    template_id: String,
    body: String,
    mode: ParsingMode,
}

impl TryFrom<TemplateRaw> for PromptTemplate {
    type Error = DualSysError;
    fn try_from(raw: TemplateRaw) -> Result<Self, Self::Error> {
        PromptTemplate::new(raw.template_id, raw.body, raw.mode)
    }
}

impl From<PromptTemplate> for TemplateRaw {
    fn from(t: PromptTemplate) -> Self {
        TemplateRaw {
            template_id: t.template_id,
            body: t.body,
            mode: t.mode,
        }
    }
}

/// Segments of a template body: literal text or a named placeholder.
#[derive(Debug, PartialEq)]
enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

fn pieces(body: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut literal_start = 0;
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            let name_len = bytes[i + 1..]
                .iter()
                .take_while(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || **b == b'_')
                .count();
            let close = i + 1 + name_len;
            if name_len > 0 && bytes.get(close) == Some(&b'}') {
                if literal_start < i {
                    out.push(Piece::Literal(&body[literal_start..i]));
                }
                out.push(Piece::Slot(&body[i + 1..close]));
                i = close + 1;
                literal_start = i;
                continue;
            }
        }
        i += 1;
    }
    if literal_start < body.len() {
        out.push(Piece::Literal(&body[literal_start..]));
    }
    out
}

impl PromptTemplate {
    pub fn new(template_id: impl Into<String>, body: impl Into<String>, mode: ParsingMode) -> Result<Self, DualSysError> {
        let t = Self {
            template_id: template_id.into(),
            body: body.into(),
            mode,
        };
        let slots: Vec<&str> = t.placeholders();
        let has_candidates = slots.contains(&CANDIDATES);
        match mode {
            ParsingMode::Cng if has_candidates => {
                return Err(DualSysError::Template(format!("{}: CNG template must not use {{candidates}}", t.template_id)))
            }
            ParsingMode::Dcs if !has_candidates => {
                return Err(DualSysError::Template(format!("{}: DCS template requires {{candidates}}", t.template_id)))
            }
            _ => {}
        }
        if !slots.contains(&COMMAND_TEXT) {
            return Err(DualSysError::Template(format!("{}: template lacks {{command_text}}", t.template_id)));
        }
        Ok(t)
    }

    pub fn template_id(&self) -> &str {
        &self.template_id
    }

    pub fn mode(&self) -> ParsingMode {
        self.mode
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn placeholders(&self) -> Vec<&str> {
        pieces(&self.body)
            .into_iter()
            .filter_map(|p| match p {
                Piece::Slot(name) => Some(name),
                Piece::Literal(_) => None,
            })
            .collect()
    }

    /// Single-pass substitution; substituted values are never re-scanned.
    pub fn render(&self, values: &BTreeMap<&str, String>) -> Result<String, DualSysError> {
        let mut out = String::with_capacity(self.body.len());
        for piece in pieces(&self.body) {
            match piece {
                Piece::Literal(text) => out.push_str(text),
                Piece::Slot(name) => match values.get(name) {
                    Some(v) => out.push_str(v),
                    None => return Err(DualSysError::UnresolvedPlaceholder(name.to_string())),
                },
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholder_scan_skips_json_braces() {
        let t = PromptTemplate::new("t", r#"Say {"steer": x} for {command_text} {scene}"#, ParsingMode::Cng).unwrap();
        assert_eq!(t.placeholders(), vec!["command_text", "scene"]);
    }

    #[test]
    fn mode_rules() {
        assert!(PromptTemplate::new("t", "{command_text} {candidates}", ParsingMode::Cng).is_err());
        assert!(PromptTemplate::new("t", "{command_text}", ParsingMode::Dcs).is_err());
        assert!(PromptTemplate::new("t", "{command_text} {candidates}", ParsingMode::Dcs).is_ok());
    }

    #[test]
    fn unresolved_placeholder_rejected() {
        let t = PromptTemplate::new("t", "{command_text} {weather}", ParsingMode::Cng).unwrap();
        let mut v = BTreeMap::new();
        v.insert(COMMAND_TEXT, "go {scene}".to_string());
        assert_eq!(t.render(&v).unwrap_err(), DualSysError::UnresolvedPlaceholder("weather".into()));
        let t = PromptTemplate::new("t", "<{command_text}>", ParsingMode::Cng).unwrap();
        assert_eq!(t.render(&v).unwrap(), "<go {scene}>");
    }
}
