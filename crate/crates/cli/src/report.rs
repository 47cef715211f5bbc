//! Benchmark report emission. One row per decoding mode, fixed column
//! order, three output formats. Speedups are ratios against the vanilla
//! row: forward invocations (the primary "Speed Up" figure), token
//! positions processed, and wall clock.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub mode: String,
    /// decode-loop iterations summed over prompts
    pub steps: u64,
    /// tokens committed: base ids, except the expansion baseline where
    /// whole-word ids count as one
    pub tokens: u64,
    /// base-model forward invocations
    pub invocations: u64,
    /// token positions pushed through the model
    pub positions: u64,
    /// bytes of generated text
    pub bytes: u64,
    pub steps_per_byte: f64,
    /// vanilla invocations / this mode's invocations
    pub speed_up: f64,
    /// vanilla positions / this mode's positions
    pub speed_up_positions: f64,
    /// vanilla wall seconds / this mode's wall seconds
    pub speed_up_wall: f64,
    /// base-model perplexity of the generated text, averaged over prompts
    pub perplexity: f64,
    /// character-level longest-common-subsequence F1 against the reference
    pub lcs_f1: f64,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub prompts: usize,
    pub new_tokens: usize,
    pub rows: Vec<BenchRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(CliError::Config(format!(
                "unknown report format {other:?}, expected csv, json or markdown"
            ))),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Markdown => "md",
        }
    }
}

const COLUMNS: [&str; 13] = [
    "mode",
    "steps",
    "tokens",
    "invocations",
    "positions",
    "bytes",
    "steps_per_byte",
    "speed_up",
    "speed_up_positions",
    "speed_up_wall",
    "perplexity",
    "lcs_f1",
    "wall_secs",
];

pub fn emit(report: &BenchReport, format: ReportFormat) -> Result<String, CliError> {
    if report.rows.is_empty() {
        return Err(CliError::Config("refusing to emit an empty report".into()));
    }
    Ok(match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)
                .map_err(|e| CliError::Config(format!("report not serializable: {e}")))?;
            s.push('\n');
            s
        }
        ReportFormat::Markdown => to_markdown(report),
    })
}

pub fn parse_json(text: &str) -> Result<BenchReport, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("bad report JSON: {e}")))
}

fn to_csv(report: &BenchReport) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for r in &report.rows {
        // floats printed with Display: shortest round-trippable form
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.mode,
            r.steps,
            r.tokens,
            r.invocations,
            r.positions,
            r.bytes,
            r.steps_per_byte,
            r.speed_up,
            r.speed_up_positions,
            r.speed_up_wall,
            r.perplexity,
            r.lcs_f1,
            r.wall_secs
        ));
    }
    out
}

fn to_markdown(report: &BenchReport) -> String {
    let mut out = format!(
        "Benchmark over {} prompts, {} new tokens each.\n\n",
        report.prompts, report.new_tokens
    );
    out.push_str(
        "| Mode | Steps | Tokens | Invocations | Positions | Bytes | Steps/Byte \
         | Speed Up | Speed Up (pos) | Speed Up (wall) | Perplexity | LCS F1 |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    for r in &report.rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {:.4} | {:.3} | {:.3} | {:.3} | {:.3} | {:.3} |\n",
            r.mode,
            r.steps,
            r.tokens,
            r.invocations,
            r.positions,
            r.bytes,
            r.steps_per_byte,
            r.speed_up,
            r.speed_up_positions,
            r.speed_up_wall,
            r.perplexity,
            r.lcs_f1
        ));
    }
    out
}
