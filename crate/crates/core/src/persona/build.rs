use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mc::{McModel, UserWalker};
use crate::envgen::{UrlId, UrlUniverse};
use crate::error::{CoreError, Result};
use crate::rng::{derive_seed, SimRng};
use crate::selector::ObfuscationSession;
use rand::SeedableRng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    User,
    Obfuscation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub url: UrlId,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub user_type: usize,
    pub alpha: f64,
    pub visits: Vec<Visit>,
}

impl Persona {
    pub fn ids(&self) -> Vec<UrlId> {
        self.visits.iter().map(|v| v.url).collect()
    }

    /// The base persona: user visits only, in order.
    pub fn user_ids(&self) -> Vec<UrlId> {
        user_ids(&self.visits)
    }

    pub fn obfuscation_count(&self) -> usize {
        self.visits.iter().filter(|v| v.source == Source::Obfuscation).count()
    }

    pub fn obfuscation_ids(&self) -> Vec<UrlId> {
        self.visits.iter().filter(|v| v.source == Source::Obfuscation).map(|v| v.url).collect()
    }
}

pub fn user_ids(visits: &[Visit]) -> Vec<UrlId> {
    visits.iter().filter(|v| v.source == Source::User).map(|v| v.url).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonaSpec {
    pub alpha: f64,
    pub length: usize,
    pub init_len: usize,
}

impl PersonaSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(CoreError::Config(format!("alpha must lie in [0, 1), got {}", self.alpha)));
        }
        if self.length == 0 || self.init_len >= self.length {
            return Err(CoreError::Config(format!("need init_len < length, got {} and {}", self.init_len, self.length)));
        }
        Ok(())
    }
}

/// Independent random streams for one persona: the user walk, the
/// obfuscation-slot coin flips and the selector. Keeping them apart means the
/// base persona depends only on the persona seed, whatever selector is used.
pub struct PersonaRngs {
    pub user: SimRng,
    pub slots: SimRng,
    pub selector: SimRng,
}

impl PersonaRngs {
    pub fn new(persona_seed: u64) -> Self {
        Self {
            user: SimRng::seed_from_u64(derive_seed(persona_seed, "persona/user", 0)),
            slots: SimRng::seed_from_u64(derive_seed(persona_seed, "persona/slots", 0)),
            selector: SimRng::seed_from_u64(derive_seed(persona_seed, "persona/selector", 0)),
        }
    }
}

/// Picks a user type uniformly, as every persona does.
pub fn sample_user_type(model: &McModel, persona_seed: u64) -> usize {
    SimRng::seed_from_u64(derive_seed(persona_seed, "persona/type", 0)).random_range(0..model.user_types.len())
}

/// The first `init_len` visits come from the user; every later slot is an
/// obfuscation visit with probability α, picked by `session`.
pub fn build_persona(
    model: &McModel,
    universe: &UrlUniverse,
    spec: &PersonaSpec,
    user_type: usize,
    session: &mut dyn ObfuscationSession,
    persona_seed: u64,
) -> Result<Persona> {
    spec.validate()?;
    let ty = *model
        .user_types
        .get(user_type)
        .ok_or_else(|| CoreError::InvalidInput(format!("user type {user_type} out of range")))?;
    let mut rngs = PersonaRngs::new(persona_seed);
    let mut walker = UserWalker::new(model, ty);
    let mut visits = Vec::with_capacity(spec.length);
    for slot in 0..spec.length {
        let obfuscate = slot >= spec.init_len && spec.alpha > 0.0 && rngs.slots.random_bool(spec.alpha);
        if obfuscate {
            let url = session.select(universe, &visits, &mut rngs.selector)?;
            visits.push(Visit { url, source: Source::Obfuscation });
        } else {
            let (url, _) = walker.sample_user_url(universe, &mut rngs.user);
            visits.push(Visit { url, source: Source::User });
        }
    }
    Ok(Persona { user_type, alpha: spec.alpha, visits })
}

pub fn write_personas_jsonl<W: Write>(mut writer: W, personas: &[Persona]) -> Result<()> {
    for p in personas {
        serde_json::to_writer(&mut writer, p)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_personas_jsonl<R: BufRead>(reader: R) -> Result<Vec<Persona>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}
