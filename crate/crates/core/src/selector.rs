//! Obfuscation-url selection strategies behind one trait, registered by name.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::envgen::{UrlId, UrlUniverse};
use crate::error::{CoreError, Result};
use crate::persona::Visit;
use crate::rng::SimRng;

/// Per-persona selection state. A fresh session is opened for every persona.
pub trait ObfuscationSession {
    /// Picks the next obfuscation url given the visits so far.
    fn select(&mut self, universe: &UrlUniverse, history: &[Visit], rng: &mut SimRng) -> Result<UrlId>;
}

pub trait Obfuscator: Send + Sync {
    fn name(&self) -> &str;

    /// Budget override; `Some(0.0)` for a selector that never obfuscates.
    fn forced_alpha(&self) -> Option<f64> {
        None
    }

    /// Whether selections are intent subcategories (needed for adaptiveness).
    fn selects_intents(&self) -> bool {
        false
    }

    fn session(&self) -> Box<dyn ObfuscationSession + '_>;
}

#[derive(Default, Clone)]
pub struct SelectorRegistry {
    entries: BTreeMap<String, Arc<dyn Obfuscator>>,
}

impl SelectorRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, selector: Arc<dyn Obfuscator>) -> Result<()> {
        let name = selector.name().to_string();
        if self.entries.contains_key(&name) {
            return Err(CoreError::Config(format!("selector `{name}` registered twice")));
        }
        self.entries.insert(name, selector);
        Ok(())
    }

    /// Registers or replaces.
    pub fn insert(&mut self, selector: Arc<dyn Obfuscator>) {
        self.entries.insert(selector.name().to_string(), selector);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Obfuscator>> {
        self.entries.get(name).cloned().ok_or_else(|| CoreError::UnknownSelector {
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }
}
