use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

/// Plain `key=value` report with a one-line JSON summary at the end.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub success: bool,
    pub facts: BTreeMap<String, String>,
    /// Wall-clock measurements; kept apart so that reruns compare equal
    /// on everything else.
    pub timings: BTreeMap<String, String>,
    pub config: BTreeMap<String, String>,
}

impl Report {
    pub fn new(command: &str, config: BTreeMap<String, String>) -> Self {
        Self {
            command: command.to_string(),
            success: true,
            facts: BTreeMap::new(),
            timings: BTreeMap::new(),
            config,
        }
    }

    pub fn fact(&mut self, key: impl Into<String>, value: impl ToString) {
        self.facts.insert(key.into(), value.to_string());
    }

    pub fn seconds(&mut self, key: &str, seconds: f64) {
        self.timings
            .insert(format!("{key}_seconds"), format!("{seconds:.3}"));
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string(self).expect("report is plain strings")
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command={}", self.command);
        for (k, v) in &self.facts {
            let _ = writeln!(s, "{k}={v}");
        }
        for (k, v) in &self.timings {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "success={}", self.success);
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}={v}");
        }
        let _ = writeln!(s, "summary={}", self.summary_json());
        s
    }

    /// Prints the report and writes it to `<out>/<command>-report.txt`.
    pub fn emit(&self, out: &Path) -> Result<()> {
        let text = self.render();
        print!("{text}");
        let path = out.join(format!("{}-report.txt", self.command));
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}
