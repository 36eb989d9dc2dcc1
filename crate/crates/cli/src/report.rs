//! Emitted documents. JSON reports are written with a fixed field order and
//! no timestamps, so identical configs and seeds produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use delta_consensus::analysis::BoundReport;
use delta_consensus::verify::EnsembleStats;
use serde::Serialize;

/// `bounds.json`: the expected dwell transition, its stationary vector, the
/// predicted consensus value, and every computed deviation bound.
#[derive(Serialize)]
pub struct BoundsDocument {
    pub config_digest: String,
    pub seed: u64,
    pub n: usize,
    /// "sampled" or "continuous-limit".
    pub mode: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_bar: Option<u64>,
    /// Dwell interval length.
    pub dwell: f64,
    /// Row-major expected transition matrix.
    pub expected_transition: Vec<Vec<f64>>,
    pub stationary: Vec<f64>,
    /// `||pi' W - pi'||_2` of the returned stationary vector.
    pub stationary_residual: f64,
    /// `pi' x0`.
    pub predicted_consensus: f64,
    pub bounds: Vec<BoundReport>,
}

/// `montecarlo.json`: the ensemble statistics under provenance fields.
#[derive(Serialize)]
pub struct MonteCarloDocument {
    pub config_digest: String,
    pub seed: u64,
    pub stats: EnsembleStats,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing report")?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Accumulates the human-readable run report and the list of failed checks.
/// The summary is plain deterministic text: no timestamps, no machine state.
pub struct Summary {
    text: String,
    failures: Vec<String>,
    written: Vec<PathBuf>,
}

impl Summary {
    pub fn new(config_digest: &str, seed: u64) -> Summary {
        let mut s = Summary {
            text: String::new(),
            failures: Vec::new(),
            written: Vec::new(),
        };
        s.line(&format!("config digest: {config_digest}"));
        s.line(&format!("master seed: {seed}"));
        s
    }

    pub fn section(&mut self, title: &str) {
        self.line("");
        self.line(&format!("== {title} =="));
    }

    pub fn line(&mut self, line: &str) {
        self.text.push_str(line);
        self.text.push('\n');
    }

    /// Records a named check. Failed checks drive the nonzero exit status.
    pub fn check(&mut self, name: &str, passed: bool, detail: &str) {
        let verdict = if passed { "ok" } else { "FAILED" };
        self.line(&format!("check {name}: {verdict} ({detail})"));
        if !passed {
            self.failures.push(name.to_string());
        }
    }

    pub fn wrote(&mut self, path: &Path) {
        // File names only: the summary must not depend on where the output
        // directory happens to live.
        if let Some(name) = path.file_name() {
            self.written.push(PathBuf::from(name));
        }
    }

    pub fn finish(mut self, path: &Path) -> Result<Vec<String>> {
        let mut tail = String::new();
        self.written.sort();
        for file in &self.written {
            let _ = writeln!(tail, "wrote {}", file.display());
        }
        if self.failures.is_empty() {
            tail.push_str("all checks passed\n");
        } else {
            let _ = writeln!(tail, "failed checks: {}", self.failures.join(", "));
        }
        self.section("files");
        self.text.push_str(&tail);
        fs::write(path, &self.text).with_context(|| format!("writing {}", path.display()))?;
        Ok(self.failures)
    }
}
