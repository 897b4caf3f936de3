use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::LlmError;

/// Identifier of a chat model as listed in the model registry, e.g. `gpt-4o`
/// or `anthropic/claude-3-haiku`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ModelId(String);

impl ModelId {
    pub fn new(id: impl Into<String>) -> Result<Self, LlmError> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(LlmError::InvalidRequest("model id must not be empty".into()));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ModelId {
    type Error = LlmError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<ModelId> for String {
    fn from(value: ModelId) -> Self {
        value.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Which upstream serves a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderRoute {
    /// The vendor's own chat-completions API.
    #[serde(rename = "openai_direct")]
    OpenAiDirect,
    /// A multi-vendor gateway speaking the same wire format.
    Aggregator,
    /// In-process deterministic provider for tests and offline demos.
    Mock,
}

impl ProviderRoute {
    pub const ALL: [ProviderRoute; 3] = [Self::OpenAiDirect, Self::Aggregator, Self::Mock];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::OpenAiDirect => "openai_direct",
            Self::Aggregator => "aggregator",
            Self::Mock => "mock",
        }
    }
}

impl fmt::Display for ProviderRoute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub id: ModelId,
    pub display_name: String,
    pub route: ProviderRoute,
}

#[derive(Deserialize)]
struct RegistryFile {
    #[serde(default, rename = "model")]
    models: Vec<ModelEntry>,
}

/// Declarative list of selectable models. Order of the source file is kept
/// for display; lookups are by id.
#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    entries: Vec<ModelEntry>,
    index: BTreeMap<ModelId, usize>,
}

impl ModelRegistry {
    pub fn new(entries: Vec<ModelEntry>) -> Result<Self, LlmError> {
        let mut index = BTreeMap::new();
        for (i, entry) in entries.iter().enumerate() {
            if index.insert(entry.id.clone(), i).is_some() {
                return Err(LlmError::Registry(format!("duplicate model id `{}`", entry.id)));
            }
        }
        Ok(Self { entries, index })
    }

    /// Parses the TOML registry format:
    ///
    /// ```toml
    /// [[model]]
    /// id = "gpt-4o"
    /// display_name = "GPT-4o"
    /// route = "openai_direct"
    /// ```
    pub fn from_toml_str(text: &str) -> Result<Self, LlmError> {
        let file: RegistryFile =
            toml::from_str(text).map_err(|e| LlmError::Registry(e.to_string()))?;
        Self::new(file.models)
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Registry(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn get(&self, id: &ModelId) -> Option<&ModelEntry> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    pub fn lookup(&self, id: &str) -> Result<&ModelEntry, LlmError> {
        ModelId::new(id)
            .ok()
            .and_then(|id| self.get(&id))
            .ok_or_else(|| LlmError::UnknownModel(id.to_string()))
    }

    pub fn route_model(&self, id: &ModelId) -> Result<ProviderRoute, LlmError> {
        self.get(id)
            .map(|e| e.route)
            .ok_or_else(|| LlmError::UnknownModel(id.to_string()))
    }

    pub fn entries(&self) -> &[ModelEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[[model]]
id = "gpt-4o"
display_name = "GPT-4o"
route = "openai_direct"

[[model]]
id = "anthropic/claude-3-haiku"
display_name = "Claude 3 Haiku"
route = "aggregator"

[[model]]
id = "meta-llama/llama-3-8b-instruct"
display_name = "Llama 3 8B Instruct"
route = "aggregator"
"#;

    fn id(s: &str) -> ModelId {
        ModelId::new(s).unwrap()
    }

    #[test]
    fn routes_registered_models() {
        let reg = ModelRegistry::from_toml_str(SAMPLE).unwrap();
        assert_eq!(reg.route_model(&id("gpt-4o")).unwrap(), ProviderRoute::OpenAiDirect);
        assert_eq!(
            reg.route_model(&id("anthropic/claude-3-haiku")).unwrap(),
            ProviderRoute::Aggregator
        );
        assert!(matches!(
            reg.route_model(&id("not-a-model")),
            Err(LlmError::UnknownModel(m)) if m == "not-a-model"
        ));
    }

    #[test]
    fn route_comes_from_registry_not_prefix() {
        let reg = ModelRegistry::from_toml_str(
            "[[model]]\nid = \"gpt-4o\"\ndisplay_name = \"x\"\nroute = \"aggregator\"\n",
        )
        .unwrap();
        assert_eq!(reg.route_model(&id("gpt-4o")).unwrap(), ProviderRoute::Aggregator);
        assert!(reg.route_model(&id("gpt-4o-mini")).is_err());
    }

    #[test]
    fn keeps_file_order() {
        let reg = ModelRegistry::from_toml_str(SAMPLE).unwrap();
        let ids: Vec<_> = reg.entries().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["gpt-4o", "anthropic/claude-3-haiku", "meta-llama/llama-3-8b-instruct"]);
    }

    #[test]
    fn rejects_duplicates_and_bad_routes() {
        let dup = format!("{SAMPLE}\n[[model]]\nid = \"gpt-4o\"\ndisplay_name = \"again\"\nroute = \"mock\"\n");
        assert!(matches!(ModelRegistry::from_toml_str(&dup), Err(LlmError::Registry(_))));
        let bad = "[[model]]\nid = \"x\"\ndisplay_name = \"x\"\nroute = \"carrier-pigeon\"\n";
        assert!(ModelRegistry::from_toml_str(bad).is_err());
        let empty_id = "[[model]]\nid = \"  \"\ndisplay_name = \"x\"\nroute = \"mock\"\n";
        assert!(ModelRegistry::from_toml_str(empty_id).is_err());
    }
}
