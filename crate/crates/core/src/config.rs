//! Scenario files: TOML with a strict schema.
//!
//! ```toml
//! name = "hover"
//! seeds = [1, 2]
//! duration = 10.5
//!
//! [trajectory]
//! kind = "hover"
//! start = [0.0, 0.0, 1.0]
//!
//! [[vehicles]]
//! variant = "l1_knode_dw_mpc"
//! rate_hz = 400
//! weights = "knode.txt"   # relative to this file
//! ```
//!
//! Unknown keys anywhere are errors. Weight files are resolved and loaded at
//! parse time.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::knode::load_weights;
use crate::sim::Scenario;

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Parse scenario text; relative weight paths resolve against `base_dir`.
pub fn parse_scenario(text: &str, base_dir: &Path) -> Result<Scenario> {
    let mut scenario: Scenario = toml::from_str(text).map_err(|e| {
        let msg = e.message().to_string();
        match e.span() {
            Some(span) => {
                let (line, col) = line_col(text, span.start);
                Error::Config(format!("line {line}, column {col}: {msg}"))
            }
            None => Error::Config(msg),
        }
    })?;
    for (i, v) in scenario.vehicles.iter_mut().enumerate() {
        match &v.weights {
            Some(rel) => {
                let path = if rel.is_absolute() {
                    rel.clone()
                } else {
                    base_dir.join(rel)
                };
                if !path.is_file() {
                    return Err(Error::Config(format!(
                        "vehicle {i}: weights file {} not found",
                        path.display()
                    )));
                }
                let mlp =
                    load_weights(&path).map_err(|e| Error::Config(format!("vehicle {i}: {e}")))?;
                v.weights = Some(path);
                v.mlp = Some(Arc::new(mlp));
            }
            None if v.variant.needs_weights() => {
                return Err(Error::Config(format!(
                    "vehicle {i} ({}) requires a weights path",
                    v.variant.as_str()
                )));
            }
            None => {}
        }
    }
    scenario.validate()?;
    Ok(scenario)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_scenario(&text, base)
}
