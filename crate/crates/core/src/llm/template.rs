use std::collections::{BTreeSet, HashMap};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemplateError {
    #[error("missing binding for placeholder `{0}`")]
    MissingKey(String),
    #[error("malformed template at byte {offset}: {reason}")]
    Malformed { offset: usize, reason: &'static str },
    #[error("cannot read template {path}: {detail}")]
    Io { path: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Placeholder(String),
}

/// Prompt text with `{name}` placeholders. `{{` and `}}` produce literal
/// braces; any other brace is rejected at parse time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    body: String,
    segments: Vec<Segment>,
    required_keys: BTreeSet<String>,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

impl PromptTemplate {
    pub fn parse(body: impl Into<String>) -> Result<Self, TemplateError> {
        let body = body.into();
        let mut segments = Vec::new();
        let mut text = String::new();
        let mut chars = body.char_indices().peekable();

        while let Some((offset, c)) = chars.next() {
            match c {
                '{' if matches!(chars.peek(), Some((_, '{'))) => {
                    chars.next();
                    text.push('{');
                }
                '}' if matches!(chars.peek(), Some((_, '}'))) => {
                    chars.next();
                    text.push('}');
                }
                '}' => {
                    return Err(TemplateError::Malformed { offset, reason: "unmatched `}`" });
                }
                '{' => {
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some((_, '}')) => break,
                            Some((_, c)) if name.is_empty() && is_ident_start(c) => name.push(c),
                            Some((_, c)) if !name.is_empty() && is_ident_char(c) => name.push(c),
                            _ => {
                                return Err(TemplateError::Malformed {
                                    offset,
                                    reason: "expected `{identifier}`",
                                })
                            }
                        }
                    }
                    if name.is_empty() {
                        return Err(TemplateError::Malformed { offset, reason: "empty placeholder" });
                    }
                    if !text.is_empty() {
                        segments.push(Segment::Text(std::mem::take(&mut text)));
                    }
                    segments.push(Segment::Placeholder(name));
                }
                c => text.push(c),
            }
        }
        if !text.is_empty() {
            segments.push(Segment::Text(text));
        }

        let required_keys = segments
            .iter()
            .filter_map(|s| match s {
                Segment::Placeholder(n) => Some(n.clone()),
                Segment::Text(_) => None,
            })
            .collect();
        Ok(Self { body, segments, required_keys })
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let body = std::fs::read_to_string(path).map_err(|e| TemplateError::Io {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        Self::parse(body)
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn required_keys(&self) -> &BTreeSet<String> {
        &self.required_keys
    }

    /// Substitutes every placeholder. Fails on the first unbound placeholder
    /// in reading order. Bound values are inserted verbatim.
    pub fn render<K, V>(&self, bindings: &HashMap<K, V>) -> Result<String, TemplateError>
    where
        K: std::borrow::Borrow<str> + std::hash::Hash + Eq,
        V: AsRef<str>,
    {
        let mut out = String::with_capacity(self.body.len());
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Placeholder(name) => {
                    let value = bindings
                        .get(name.as_str())
                        .ok_or_else(|| TemplateError::MissingKey(name.clone()))?;
                    out.push_str(value.as_ref());
                }
            }
        }
        Ok(out)
    }

    pub fn render_pairs(&self, pairs: &[(&str, &str)]) -> Result<String, TemplateError> {
        let map: HashMap<&str, &str> = pairs.iter().copied().collect();
        self.render(&map)
    }
}
