use std::fmt::Write as _;
use std::path::Path;

use crate::error::{LabError, Result};

/// First line of every CSV this crate writes.
pub const CSV_HEADER: &str = "# emo-lab csv v1";

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub condition: String,
    pub metric: String,
    pub mean: f64,
    pub ci95: f64,
    pub n_episodes: usize,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunReport {
    pub experiment: String,
    pub config_hash: String,
    pub rows: Vec<ReportRow>,
}

impl RunReport {
    /// Wall time is the last column so it can be dropped when comparing runs.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CSV_HEADER}\ncondition,metric,mean,ci95,n_episodes,config_hash,wall_seconds\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{},{},{:.3}",
                r.condition, r.metric, r.mean, r.ci95, r.n_episodes, self.config_hash, r.wall_seconds
            );
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("# {}\n\nconfig hash `{}`\n\n", self.experiment, self.config_hash);
        out.push_str("| condition | metric | mean | 95% CI | episodes | wall (s) |\n|---|---|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {:.4} | ± {:.4} | {} | {:.1} |",
                r.condition, r.metric, r.mean, r.ci95, r.n_episodes, r.wall_seconds
            );
        }
        out
    }
}

/// Prefixes `body` with the versioned header line.
pub fn versioned(body: &str) -> String {
    format!("{CSV_HEADER}\n{body}")
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| LabError::io(path, e))
}

/// Drops the trailing `wall_seconds` column from a CSV written here.
pub fn strip_wall_time(csv: &str) -> String {
    let header = csv.lines().nth(1).unwrap_or("");
    if !header.ends_with(",wall_seconds") {
        return csv.to_string();
    }
    csv.lines()
        .map(|l| if l.starts_with('#') { l } else { l.rsplit_once(',').map_or(l, |(head, _)| head) })
        .collect::<Vec<_>>()
        .join("\n")
}
