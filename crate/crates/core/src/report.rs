//! Per-run and comparative reports, computed from traces alone.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{IntentId, UserId};
use crate::handover::HandoverResult;
use crate::scenario::Mode;
use crate::trace::{events, DropReason, EventBody, TraceLine, TtlPurpose};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("trace has no start line")]
    MissingStart,
    #[error("trace has no end line (run did not finish)")]
    MissingEnd,
    #[error("record for unknown {0}")]
    UnknownIntent(IntentId),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentReport {
    pub scenario: String,
    pub seed: u64,
    pub mode: Mode,
    pub intent: IntentId,
    pub user: UserId,
    pub submitted_at: u64,
    pub work_units: u64,
    pub executed_units: u64,
    pub recomputed_units: u64,
    pub handovers: u32,
    pub successes: u32,
    pub fallback_successes: u32,
    pub aborts: u32,
    pub recoveries: u32,
    /// Sessions dropped because the host link or node went away.
    pub link_drops: u32,
    pub stale_discards: u32,
    pub delivered: bool,
    pub discarded: bool,
    pub completion_time: Option<u64>,
    pub qoe_met: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub intents: Vec<IntentReport>,
}

impl RunReport {
    pub fn executed_units(&self) -> u64 {
        self.intents.iter().map(|i| i.executed_units).sum()
    }

    pub fn recomputed_units(&self) -> u64 {
        self.intents.iter().map(|i| i.recomputed_units).sum()
    }
}

pub fn report_from_trace(lines: &[TraceLine]) -> Result<RunReport, ReportError> {
    let start = lines
        .iter()
        .find_map(|l| match l {
            TraceLine::Start(s) => Some(s),
            _ => None,
        })
        .ok_or(ReportError::MissingStart)?;
    if !lines.iter().any(|l| matches!(l, TraceLine::End(_))) {
        return Err(ReportError::MissingEnd);
    }
    let mut by_id: BTreeMap<IntentId, IntentReport> = BTreeMap::new();
    for e in events(lines) {
        if let EventBody::IntentSubmitted { user, intent } = &e.body {
            by_id.insert(
                intent.intent_id,
                IntentReport {
                    scenario: start.scenario.name.clone(),
                    seed: start.seed,
                    mode: start.mode,
                    intent: intent.intent_id,
                    user: *user,
                    submitted_at: intent.submitted_at,
                    work_units: intent.total_work(),
                    executed_units: 0,
                    recomputed_units: 0,
                    handovers: 0,
                    successes: 0,
                    fallback_successes: 0,
                    aborts: 0,
                    recoveries: 0,
                    link_drops: 0,
                    stale_discards: 0,
                    delivered: false,
                    discarded: false,
                    completion_time: None,
                    qoe_met: false,
                },
            );
            continue;
        }
        let id = match &e.body {
            EventBody::ComputeQuantumDone { intent, .. }
            | EventBody::SessionDropped { intent, .. }
            | EventBody::TtlVerdict { intent, .. }
            | EventBody::ResultDelivered { intent, .. }
            | EventBody::ResultDiscarded { intent, .. } => *intent,
            EventBody::HandoverOutcome { outcome } => outcome.intent_id,
            _ => continue,
        };
        let r = by_id.get_mut(&id).ok_or(ReportError::UnknownIntent(id))?;
        match &e.body {
            EventBody::ComputeQuantumDone { .. } => r.executed_units += 1,
            EventBody::SessionDropped {
                lost_units, reason, ..
            } => {
                r.recomputed_units += lost_units;
                if matches!(reason, DropReason::LinkLost | DropReason::NodeDown) {
                    r.link_drops += 1;
                }
            }
            EventBody::TtlVerdict { valid, purpose, .. } => {
                if !valid && matches!(purpose, TtlPurpose::Resume | TtlPurpose::Result) {
                    r.stale_discards += 1;
                }
            }
            EventBody::HandoverOutcome { outcome } => {
                r.handovers += 1;
                match outcome.result {
                    HandoverResult::Success => r.successes += 1,
                    HandoverResult::FallbackSuccess => r.fallback_successes += 1,
                    HandoverResult::Abort => r.aborts += 1,
                }
                if outcome.transfer_kind == crate::handover::TransferKind::RendezvousRecovery {
                    r.recoveries += 1;
                }
            }
            EventBody::ResultDelivered {
                completion_time,
                qoe_met,
                ..
            } => {
                r.delivered = true;
                r.completion_time = Some(*completion_time);
                r.qoe_met = *qoe_met;
            }
            EventBody::ResultDiscarded { .. } => r.discarded = true,
            _ => unreachable!("filtered above"),
        }
    }
    Ok(RunReport {
        scenario: start.scenario.name.clone(),
        scenario_hash: start.scenario_hash.clone(),
        seed: start.seed,
        mode: start.mode,
        intents: by_id.into_values().collect(),
    })
}

/// One row per (scenario, seed, intent) holding both modes side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparativeRow {
    pub scenario: String,
    pub seed: u64,
    pub intent: IntentId,
    pub waan_executed: u64,
    pub baseline_executed: u64,
    pub waan_recomputed: u64,
    pub baseline_recomputed: u64,
    pub waan_completion: Option<u64>,
    pub baseline_completion: Option<u64>,
    /// baseline minus WAAN completion time, when both delivered.
    pub completion_gain: Option<i64>,
}

pub fn comparative(reports: &[RunReport]) -> Vec<ComparativeRow> {
    let mut cells: BTreeMap<(String, u64, IntentId), [Option<&IntentReport>; 2]> = BTreeMap::new();
    for r in reports {
        for i in &r.intents {
            let slot = match r.mode {
                Mode::Waan => 0,
                Mode::Baseline => 1,
            };
            cells
                .entry((r.scenario.clone(), r.seed, i.intent))
                .or_default()[slot] = Some(i);
        }
    }
    cells
        .into_iter()
        .filter_map(|((scenario, seed, intent), [w, b])| {
            let (w, b) = (w?, b?);
            Some(ComparativeRow {
                scenario,
                seed,
                intent,
                waan_executed: w.executed_units,
                baseline_executed: b.executed_units,
                waan_recomputed: w.recomputed_units,
                baseline_recomputed: b.recomputed_units,
                waan_completion: w.completion_time,
                baseline_completion: b.completion_time,
                completion_gain: w
                    .completion_time
                    .zip(b.completion_time)
                    .map(|(w, b)| b as i64 - w as i64),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub runs: usize,
    pub intents: usize,
    pub delivered: usize,
    pub executed_units: u64,
    pub recomputed_units: u64,
    pub handovers: u32,
    pub successes: u32,
    pub fallback_successes: u32,
    pub aborts: u32,
    pub stale_discards: u32,
    pub mean_completion_time: Option<f64>,
}

pub fn summarize(reports: &[RunReport]) -> BTreeMap<Mode, ModeSummary> {
    let mut out = BTreeMap::new();
    for mode in [Mode::Waan, Mode::Baseline] {
        let runs: Vec<&RunReport> = reports.iter().filter(|r| r.mode == mode).collect();
        if runs.is_empty() {
            continue;
        }
        let intents: Vec<&IntentReport> = runs.iter().flat_map(|r| &r.intents).collect();
        let times: Vec<u64> = intents.iter().filter_map(|i| i.completion_time).collect();
        out.insert(
            mode,
            ModeSummary {
                runs: runs.len(),
                intents: intents.len(),
                delivered: intents.iter().filter(|i| i.delivered).count(),
                executed_units: intents.iter().map(|i| i.executed_units).sum(),
                recomputed_units: intents.iter().map(|i| i.recomputed_units).sum(),
                handovers: intents.iter().map(|i| i.handovers).sum(),
                successes: intents.iter().map(|i| i.successes).sum(),
                fallback_successes: intents.iter().map(|i| i.fallback_successes).sum(),
                aborts: intents.iter().map(|i| i.aborts).sum(),
                stale_discards: intents.iter().map(|i| i.stale_discards).sum(),
                mean_completion_time: (!times.is_empty())
                    .then(|| times.iter().sum::<u64>() as f64 / times.len() as f64),
            },
        );
    }
    out
}

pub fn runs_csv(reports: &[RunReport]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in reports {
        for i in &r.intents {
            w.serialize(i)?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is UTF-8"))
}

pub fn comparative_csv(rows: &[ComparativeRow]) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("csv is UTF-8"))
}

/// Writes `runs.csv`, `comparative.csv` and `summary.json` into `dir`.
pub fn write_reports(reports: &[RunReport], dir: &Path) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("runs.csv"), runs_csv(reports)?)?;
    std::fs::write(
        dir.join("comparative.csv"),
        comparative_csv(&comparative(reports))?,
    )?;
    let summary = serde_json::to_string_pretty(&summarize(reports))?;
    std::fs::write(dir.join("summary.json"), summary + "\n")?;
    Ok(())
}
