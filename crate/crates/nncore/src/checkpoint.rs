//! JSON checkpoints: `{format_version, kind, model}`. Floats are written
//! with shortest round-trip formatting and parsed exactly, so a save/load
//! cycle is bit-exact.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format_version: u32,
    kind: String,
    model: T,
}

pub fn to_checkpoint_string<T: Serialize>(kind: &str, model: &T) -> Result<String> {
    Ok(serde_json::to_string(&Envelope {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        model,
    })?)
}

pub fn from_checkpoint_str<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let env: Envelope<T> = serde_json::from_str(text)?;
    if env.format_version != FORMAT_VERSION {
        return Err(NnError::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            env.format_version
        )));
    }
    if env.kind != kind {
        return Err(NnError::Checkpoint(format!("expected a `{kind}` checkpoint, found `{}`", env.kind)));
    }
    Ok(env.model)
}

pub fn save_checkpoint<T: Serialize>(path: &Path, kind: &str, model: &T) -> Result<()> {
    fs::write(path, to_checkpoint_string(kind, model)?)?;
    Ok(())
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    from_checkpoint_str(kind, &fs::read_to_string(path)?)
}
