//! Name-keyed registry of interchangeable strategy implementations.
//!
//! Chat providers, content extractors, news search backends and mailers are
//! all trait objects. Each is registered under a short name and selected at
//! runtime from configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no {kind} strategy registered under `{name}` (known: {known})")]
pub struct UnknownStrategy {
    pub kind: &'static str,
    pub name: String,
    pub known: String,
}

pub struct StrategyRegistry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized> StrategyRegistry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Registers `strategy` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: impl Into<String>, strategy: Arc<T>) -> &mut Self {
        self.entries.insert(name.into(), strategy);
        self
    }

    pub fn with(mut self, name: impl Into<String>, strategy: Arc<T>) -> Self {
        self.register(name, strategy);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>, UnknownStrategy> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                known: self.names().collect::<Vec<_>>().join(", "),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl<T: ?Sized> Clone for StrategyRegistry<T> {
    fn clone(&self) -> Self {
        Self {
            kind: self.kind,
            entries: self.entries.clone(),
        }
    }
}

impl<T: ?Sized> fmt::Debug for StrategyRegistry<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StrategyRegistry")
            .field("kind", &self.kind)
            .field("names", &self.entries.keys().collect::<Vec<_>>())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter: Send + Sync {
        fn greet(&self) -> String;
    }

    struct Hello;
    impl Greeter for Hello {
        fn greet(&self) -> String {
            "hello".into()
        }
    }

    struct Hi;
    impl Greeter for Hi {
        fn greet(&self) -> String {
            "hi".into()
        }
    }

    #[test]
    fn selects_by_name() {
        let reg: StrategyRegistry<dyn Greeter> = StrategyRegistry::new("greeter")
            .with("hello", Arc::new(Hello) as Arc<dyn Greeter>)
            .with("hi", Arc::new(Hi) as Arc<dyn Greeter>);
        assert_eq!(reg.get("hi").unwrap().greet(), "hi");
        assert_eq!(reg.names().collect::<Vec<_>>(), vec!["hello", "hi"]);
    }

    #[test]
    fn unknown_name_lists_known() {
        let reg: StrategyRegistry<dyn Greeter> =
            StrategyRegistry::new("greeter").with("hello", Arc::new(Hello) as Arc<dyn Greeter>);
        let err = reg.get("bonjour").err().unwrap();
        assert_eq!(err.name, "bonjour");
        assert!(err.to_string().contains("hello"));
    }
}
