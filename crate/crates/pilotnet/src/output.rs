//! Result files: CSV tables, JSON reports and the run manifest.
//!
//! Every CSV starts with a comment line carrying the manifest hash of the
//! resolved settings, then a header row. Numbers are printed with nine
//! significant digits. Nothing here depends on the clock, so rerunning a
//! command with identical settings reproduces every output byte for byte.

use crate::cmat::CMat;
use crate::mimo::fmt_sig;
use crate::trainer::{SweepPoint, TrainReport};
use crate::Result;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

/// Hex SHA-256 of the canonical settings text plus any per-command extras.
/// Timestamps are never part of the hash input.
pub fn config_hash(canonical: &str, extras: &[(&str, String)]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    for (k, v) in extras {
        hasher.update(k.as_bytes());
        hasher.update(b"=");
        hasher.update(v.as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineRow {
    pub snr_db: f64,
    pub mse_closed_form: f64,
    pub mse_monte_carlo: f64,
    pub normalized: bool,
    pub samples: usize,
}

pub fn baseline_csv(hash: &str, rows: &[BaselineRow]) -> String {
    let mut out = format!("# config {hash}\n");
    out.push_str("snr_db,mse_closed_form,mse_monte_carlo,normalized,samples\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            fmt_sig(r.snr_db),
            fmt_sig(r.mse_closed_form),
            fmt_sig(r.mse_monte_carlo),
            r.normalized,
            r.samples
        );
    }
    out
}

pub fn curves_csv(hash: &str, report: &TrainReport) -> String {
    let mut out = format!("# config {hash}\n");
    out.push_str("epoch,train_mse,test_mse\n");
    for (i, (tr, te)) in report.train_mse.iter().zip(&report.test_mse).enumerate() {
        let _ = writeln!(out, "{},{},{}", i + 1, fmt_sig(*tr), fmt_sig(*te));
    }
    out
}

pub fn pilots_csv(hash: &str, pilots: &[CMat]) -> String {
    let mut out = format!("# config {hash}\n");
    out.push_str("user,row,col,re,im\n");
    for (k, pilot) in pilots.iter().enumerate() {
        for c in 0..pilot.cols() {
            for r in 0..pilot.rows() {
                let v = pilot.get(r, c);
                let _ = writeln!(out, "{k},{r},{c},{},{}", fmt_sig(v.re), fmt_sig(v.im));
            }
        }
    }
    out
}

pub fn sweep_csv(hash: &str, points: &[SweepPoint]) -> String {
    let mut out = format!("# config {hash}\n");
    out.push_str("snr_db,mse_proposed,mse_lmmse_literal,mse_lmmse_fair\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_sig(p.snr_db),
            fmt_sig(p.mse_proposed),
            fmt_sig(p.mse_lmmse_literal),
            fmt_sig(p.mse_lmmse_fair)
        );
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub settings: String,
    pub extras: Vec<(String, String)>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(
        command: &str,
        canonical: &str,
        extras: &[(&str, String)],
        outputs: &[&str],
    ) -> Self {
        Manifest {
            command: command.into(),
            config_sha256: config_hash(canonical, extras),
            settings: canonical.into(),
            extras: extras
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    write_text(path, &(text + "\n"))
}
