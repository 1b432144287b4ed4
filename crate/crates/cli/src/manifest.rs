//! Run manifests: the subcommand and flags that produced an artifact.
//!
//! Every file the CLI writes embeds its manifest. The worker count is not
//! recorded because it never changes the output.

use anyhow::{anyhow, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const TOOL: &str = "lexcag";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Flag name (without dashes) to value, exactly as parsed.
    pub args: Map<String, Value>,
}

impl RunManifest {
    pub fn new<A: Serialize>(subcommand: &str, args: &A) -> Self {
        let args = match serde_json::to_value(args).expect("arguments serialize") {
            Value::Object(map) => map,
            other => panic!("arguments must serialize to an object, got {other}"),
        };
        Self {
            tool: TOOL.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: subcommand.to_string(),
            args,
        }
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("manifest serializes")
    }

    #[allow(dead_code)] // exercised by the replay tests
    /// Command line (after the program name) that reproduces the run.
    pub fn to_argv(&self) -> Vec<String> {
        let mut argv = vec![self.subcommand.clone()];
        for (flag, value) in &self.args {
            let text = match value {
                Value::Null | Value::Bool(false) => continue,
                Value::Bool(true) => {
                    argv.push(format!("--{flag}"));
                    continue;
                }
                Value::String(s) => s.clone(),
                Value::Array(items) => items
                    .iter()
                    .map(|v| match v {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect::<Vec<_>>()
                    .join(","),
                other => other.to_string(),
            };
            argv.push(format!("--{flag}"));
            argv.push(text);
        }
        argv
    }

    #[allow(dead_code)]
    /// Reads a manifest back from any artifact the CLI writes: a JSON
    /// document with a `manifest` field, or a text file with a
    /// `# manifest: ` or `// manifest: ` header line.
    pub fn extract(artifact: &str) -> Result<Self> {
        for line in artifact.lines() {
            for prefix in ["# manifest: ", "// manifest: "] {
                if let Some(json) = line.strip_prefix(prefix) {
                    return Ok(serde_json::from_str(json)?);
                }
            }
        }
        let doc: Value = serde_json::from_str(artifact).map_err(|_| anyhow!("artifact carries no manifest"))?;
        let manifest = doc
            .get("manifest")
            .cloned()
            .ok_or_else(|| anyhow!("artifact carries no manifest"))?;
        Ok(serde_json::from_value(manifest)?)
    }
}
