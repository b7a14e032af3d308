//! Versioned JSON container shared by model, codebook and encoder files.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "codedit-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    kind: String,
    payload: T,
}

/// Writes `payload` under a header naming its `kind`. Floats are written in
/// shortest round-trip form, so loading reproduces every bit.
pub fn save<T: Serialize>(path: impl AsRef<Path>, kind: &str, payload: &T) -> Result<()> {
    let env = Envelope {
        format: CHECKPOINT_FORMAT.to_string(),
        version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        payload,
    };
    fs::write(path, serde_json::to_vec(&env)?)?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: impl AsRef<Path>, kind: &str) -> Result<T> {
    let bytes = fs::read(path)?;
    let env: Envelope<T> = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
    if env.format != CHECKPOINT_FORMAT || env.version != CHECKPOINT_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported checkpoint {} v{}", env.format, env.version),
        });
    }
    if env.kind != kind {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected a {kind} checkpoint, found {}", env.kind),
        });
    }
    Ok(env.payload)
}
