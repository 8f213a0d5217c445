use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adaptiveness::AdaptivenessMatrix;
use super::detector::StealthResult;
use super::sweep::SweepRow;
use super::transfer::MetricSummary;
use crate::error::Result;

/// One evaluated configuration: which selector, trained on which reward,
/// scored against which tracker.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyEntry {
    pub approach: String,
    /// Reward loss the agent was trained on; empty for baselines.
    pub trained_on: String,
    pub alpha: f64,
    pub summary: MetricSummary,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub privacy: Vec<PrivacyEntry>,
    pub sweep: Vec<SweepRow>,
    pub stealth: Vec<StealthResult>,
    pub adaptiveness: Vec<AdaptivenessMatrix>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn summary_fields(s: &MetricSummary) -> Vec<String> {
    vec![
        s.personas.to_string(),
        s.l1_mean.to_string(),
        s.l1_se.to_string(),
        s.l1_excluded.to_string(),
        s.l2_mean.to_string(),
        s.l2_new_mean.to_string(),
        s.l2_removed_mean.to_string(),
        s.l3_mean.to_string(),
        s.l3_se.to_string(),
        opt(s.l4_mean),
        s.l4_excluded.to_string(),
    ]
}

const SUMMARY_HEADER: [&str; 11] =
    ["personas", "l1_mean", "l1_se", "l1_excluded", "l2_mean", "l2_new_mean", "l2_removed_mean", "l3_mean", "l3_se", "l4_mean", "l4_excluded"];

/// Privacy table: one row per approach and training reward.
pub fn write_privacy_csv(path: &Path, entries: &[PrivacyEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["approach", "trained_on", "alpha"];
    header.extend(SUMMARY_HEADER);
    w.write_record(&header)?;
    for e in entries {
        let mut rec = vec![e.approach.clone(), e.trained_on.clone(), e.alpha.to_string()];
        rec.extend(summary_fields(&e.summary));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Allowed/disallowed segment changes, for entries that carry them.
pub fn write_personalization_csv(path: &Path, entries: &[PrivacyEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["approach", "trained_on", "alpha", "allowed_l2_mean", "disallowed_l2_mean"])?;
    for e in entries.iter().filter(|e| e.summary.allowed_l2_mean.is_some()) {
        w.write_record([
            e.approach.clone(),
            e.trained_on.clone(),
            e.alpha.to_string(),
            opt(e.summary.allowed_l2_mean),
            opt(e.summary.disallowed_l2_mean),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["approach", "alpha"];
    header.extend(SUMMARY_HEADER);
    header.push("detection_error");
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.approach.clone(), r.alpha.to_string()];
        rec.extend(summary_fields(&r.summary));
        rec.push(opt(r.detection_error));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stealth_csv(path: &Path, rows: &[StealthResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["approach", "alpha", "detection_error", "personas_per_class"])?;
    for r in rows {
        w.write_record([r.approach.clone(), r.alpha.to_string(), r.detection_error.to_string(), r.personas_per_class.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Square grid with the persona-type ids as header row and first column.
pub fn write_adaptiveness_csv(path: &Path, m: &AdaptivenessMatrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["type".to_string()];
    header.extend(m.types.iter().map(|t| t.to_string()));
    w.write_record(&header)?;
    for (t, row) in m.types.iter().zip(&m.matrix) {
        let mut rec = vec![t.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

impl Report {
    /// Writes every table into `dir` plus `summary.json`; returns the file names.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<String>> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        if !self.privacy.is_empty() {
            write_privacy_csv(&dir.join("privacy.csv"), &self.privacy)?;
            files.push("privacy.csv".to_string());
            if self.privacy.iter().any(|e| e.summary.allowed_l2_mean.is_some()) {
                write_personalization_csv(&dir.join("personalization.csv"), &self.privacy)?;
                files.push("personalization.csv".to_string());
            }
        }
        if !self.sweep.is_empty() {
            write_sweep_csv(&dir.join("sweep.csv"), &self.sweep)?;
            files.push("sweep.csv".to_string());
        }
        if !self.stealth.is_empty() {
            write_stealth_csv(&dir.join("stealth.csv"), &self.stealth)?;
            files.push("stealth.csv".to_string());
        }
        for m in &self.adaptiveness {
            let name = format!("adaptiveness-{}.csv", m.approach);
            write_adaptiveness_csv(&dir.join(&name), m)?;
            files.push(name);
        }
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(self)?)?;
        files.push("summary.json".to_string());
        Ok(files)
    }
}
