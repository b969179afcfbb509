//! Config files: a JSON object or flat `key = value` lines, overlaid on the
//! defaults. Dotted keys (`split.train`) reach nested fields.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::{Map, Value};
use unidyg::train::TrainConfig;

pub fn load(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&text).with_context(|| format!("in config {}", path.display()))
}

pub fn parse(text: &str) -> Result<TrainConfig> {
    let mut base = serde_json::to_value(TrainConfig::default())?;
    let pairs: Vec<(String, Value)> = if text.trim_start().starts_with('{') {
        let obj: Map<String, Value> = serde_json::from_str(text)?;
        flatten("", obj)
    } else {
        key_values(text)?
    };
    for (key, value) in pairs {
        let mut slot = &mut base;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(part))
                .ok_or_else(|| anyhow!("unknown config key `{key}`"))?;
        }
        *slot = value;
    }
    Ok(serde_json::from_value(base)?)
}

fn flatten(prefix: &str, obj: Map<String, Value>) -> Vec<(String, Value)> {
    let mut out = Vec::new();
    for (k, v) in obj {
        let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(inner) => out.extend(flatten(&key, inner)),
            other => out.push((key, other)),
        }
    }
    out
}

fn key_values(text: &str) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key = value", i + 1);
        };
        let v = v.trim();
        // bare words such as `dtdg` are strings; numbers, bools and null parse as JSON
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        out.push((k.trim().to_string(), value));
    }
    Ok(out)
}
