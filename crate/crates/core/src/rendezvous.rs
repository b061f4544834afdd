//! Rendezvous points: bounded checkpoint cache of handover packages plus an
//! append-only audit log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::domain::{ContextTag, HandoverPackage, IntentId, NodeId, SimTime};
use crate::handover::ttl_valid;

pub const AUDIT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_CAPACITY: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    Cache,
    Fetch,
    Evict,
    HandoverDecision,
    TtlVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub at: SimTime,
    pub actor: NodeId,
    pub action: AuditAction,
    pub intent_id: IntentId,
    pub detail: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub package: HandoverPackage,
    pub cached_at: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RendezvousStore {
    pub node_id: NodeId,
    entries: BTreeMap<IntentId, CacheEntry>,
    capacity: usize,
    audit: Vec<AuditRecord>,
}

impl RendezvousStore {
    pub fn new(node_id: NodeId, capacity: usize) -> Self {
        Self {
            node_id,
            entries: BTreeMap::new(),
            capacity: capacity.max(1),
            audit: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entry(&self, intent: IntentId) -> Option<&CacheEntry> {
        self.entries.get(&intent)
    }

    /// Appends an audit record. Timestamps never go backwards.
    pub fn log(
        &mut self,
        at: SimTime,
        actor: NodeId,
        action: AuditAction,
        intent_id: IntentId,
        detail: Value,
    ) {
        let at = self.audit.last().map_or(at, |r| at.max(r.at));
        self.audit.push(AuditRecord {
            at,
            actor,
            action,
            intent_id,
            detail,
        });
    }

    /// Stores (or replaces) the package for its intent, evicting the entry with
    /// the least remaining time budget when full.
    pub fn checkpoint(&mut self, pkg: HandoverPackage, now: SimTime) {
        let intent = pkg.intent_id;
        if !self.entries.contains_key(&intent) && self.entries.len() >= self.capacity {
            if let Some(victim) = self.stalest(now) {
                self.entries.remove(&victim);
                self.log(
                    now,
                    self.node_id,
                    AuditAction::Evict,
                    victim,
                    json!({"reason": "capacity"}),
                );
            }
        }
        let detail = json!({
            "package_id": pkg.package_id,
            "subtask_id": pkg.task_state.subtask_id,
            "progress": pkg.task_state.progress,
            "executed_units": pkg.task_state.executed_units,
        });
        let actor = pkg.task_state.host_agent;
        self.entries.insert(
            intent,
            CacheEntry {
                package: pkg,
                cached_at: now,
            },
        );
        self.log(now, actor, AuditAction::Cache, intent, detail);
    }

    /// Remaining time budget (negative when expired); smaller is staler.
    fn remaining_budget(entry: &CacheEntry, now: SimTime) -> i128 {
        let ttl = &entry.package.ttl;
        i128::from(ttl.created_at) + i128::from(ttl.time_budget) - i128::from(now)
    }

    fn stalest(&self, now: SimTime) -> Option<IntentId> {
        self.entries
            .iter()
            .min_by_key(|(id, e)| (Self::remaining_budget(e, now), e.cached_at, **id))
            .map(|(id, _)| *id)
    }

    /// Returns the cached package if its TTL is still valid. Time-expired
    /// entries are evicted on access.
    pub fn recover(
        &mut self,
        intent: IntentId,
        requester: NodeId,
        now: SimTime,
        ctx_now: &ContextTag,
    ) -> Option<HandoverPackage> {
        let entry = self.entries.get(&intent)?;
        if ttl_valid(&entry.package.ttl, now, ctx_now) {
            let pkg = entry.package.clone();
            self.log(
                now,
                requester,
                AuditAction::Fetch,
                intent,
                json!({"package_id": pkg.package_id, "progress": pkg.task_state.progress}),
            );
            return Some(pkg);
        }
        if Self::remaining_budget(entry, now) < 0 {
            self.entries.remove(&intent);
            self.log(
                now,
                self.node_id,
                AuditAction::Evict,
                intent,
                json!({"reason": "expired"}),
            );
        }
        None
    }

    pub fn audit_export(&self) -> &[AuditRecord] {
        &self.audit
    }

    /// Schema header line followed by one JSON record per audit entry.
    pub fn export_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&json!({
            "schema_version": AUDIT_SCHEMA_VERSION,
            "node_id": self.node_id,
        }))
        .expect("header serializes");
        out.push('\n');
        for r in &self.audit {
            out.push_str(&serde_json::to_string(r).expect("audit record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Broken audit invariants: non-monotone timestamps, or a Fetch without a
/// prior Cache of the same intent.
pub fn audit_violations(records: &[AuditRecord]) -> Vec<String> {
    let mut v = Vec::new();
    let mut cached = BTreeSet::new();
    for (i, r) in records.iter().enumerate() {
        if i > 0 && r.at < records[i - 1].at {
            v.push(format!("audit[{i}]: timestamp goes backwards"));
        }
        match r.action {
            AuditAction::Cache => {
                cached.insert(r.intent_id);
            }
            AuditAction::Fetch if !cached.contains(&r.intent_id) => {
                v.push(format!(
                    "audit[{i}]: fetch of {} without prior cache",
                    r.intent_id
                ));
            }
            _ => {}
        }
    }
    v
}
