//! Per-frame adaptation traces: JSON-lines with a header line, plus the
//! offline replay verifier.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evopsf::{validate_record, AdaptationConfig, AdaptationStepRecord, Strategy};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub strategy: Strategy,
    pub tau: f64,
    pub tau_tilde: f64,
    pub k: usize,
}

impl TraceHeader {
    pub fn new(strategy: Strategy, cfg: &AdaptationConfig) -> Self {
        TraceHeader {
            schema_version: TRACE_SCHEMA_VERSION,
            strategy,
            tau: cfg.tau,
            tau_tilde: cfg.tau_tilde,
            k: cfg.k,
        }
    }

    fn to_config(&self) -> AdaptationConfig {
        AdaptationConfig {
            tau: self.tau,
            tau_tilde: self.tau_tilde,
            k: self.k,
            ..Default::default()
        }
    }
}

pub fn trace_to_string(header: &TraceHeader, records: &[AdaptationStepRecord]) -> String {
    let mut out = serde_json::to_string(header).expect("header serialization cannot fail");
    out.push('\n');
    for rec in records {
        out.push_str(&serde_json::to_string(rec).expect("record serialization cannot fail"));
        out.push('\n');
    }
    out
}

pub fn write_trace(
    path: &Path,
    header: &TraceHeader,
    records: &[AdaptationStepRecord],
) -> Result<()> {
    std::fs::write(path, trace_to_string(header, records))?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<(TraceHeader, Vec<AdaptationStepRecord>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header_line = lines
        .next()
        .ok_or_else(|| Error::Config(format!("empty trace {}", path.display())))?;
    let header: TraceHeader = serde_json::from_str(header_line)?;
    if header.schema_version != TRACE_SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "unsupported trace schema_version {}",
            header.schema_version
        )));
    }
    let records: Vec<AdaptationStepRecord> = lines
        .map(serde_json::from_str)
        .collect::<std::result::Result<_, _>>()?;
    Ok((header, records))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReplaySummary {
    pub records: usize,
    pub updates: usize,
    pub fired: usize,
}

/// Re-verify every record invariant of a written trace.
pub fn replay_verify(path: &Path) -> Result<ReplaySummary> {
    let (header, records) = read_trace(path)?;
    let cfg = header.to_config();
    for rec in &records {
        validate_record(rec, header.strategy, &cfg)?;
    }
    Ok(ReplaySummary {
        records: records.len(),
        updates: records.iter().filter(|r| r.params_updated).count(),
        fired: records.iter().filter(|r| r.trigger.fired).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evopsf::{SelectionResult, TriggerDecision};

    fn record(t: usize, fired: bool, updated: bool) -> AdaptationStepRecord {
        AdaptationStepRecord {
            scene_id: 1,
            t,
            trigger: TriggerDecision { entropy_value: if fired { 1.9 } else { 0.2 }, fired },
            selection: SelectionResult {
                selected_ids: vec![4, 2],
                attention_weights: vec![0.7, 0.2],
            },
            contributing_ids: if updated { vec![4] } else { vec![] },
            loss_value: 0.3,
            grad_norm: 0.01,
            params_updated: updated,
        }
    }

    #[test]
    fn trace_round_trip_and_replay() {
        let cfg = AdaptationConfig { tau: 1.0, ..Default::default() };
        let header = TraceHeader::new(Strategy::Evopsf, &cfg);
        let records = vec![record(3, true, true), record(4, false, false)];
        let dir = std::env::temp_dir().join("evopsf_trace_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trace.jsonl");
        write_trace(&path, &header, &records).unwrap();
        let (h2, r2) = read_trace(&path).unwrap();
        assert_eq!(header, h2);
        assert_eq!(records, r2);
        let summary = replay_verify(&path).unwrap();
        assert_eq!(summary, ReplaySummary { records: 2, updates: 1, fired: 1 });
    }

    #[test]
    fn replay_rejects_corrupt_trace() {
        let cfg = AdaptationConfig { tau: 1.0, ..Default::default() };
        let header = TraceHeader::new(Strategy::Evopsf, &cfg);
        // Update without a fired trigger.
        let bad = record(5, false, true);
        let dir = std::env::temp_dir().join("evopsf_trace_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.jsonl");
        write_trace(&path, &header, &[bad]).unwrap();
        let err = replay_verify(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("frame 5"), "{msg}");
        assert!(msg.contains("fired"), "{msg}");
    }
}
