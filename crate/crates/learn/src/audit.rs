//! Record of which buildings each training stage consumed, checked against
//! the evaluation set.

use std::collections::{BTreeMap, BTreeSet};

use feeder_core::ingest::IdSet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Building ids consumed per stage. Only stages that must never see
/// evaluation buildings are recorded.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionLog {
    stages: BTreeMap<String, BTreeSet<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HygieneViolation {
    pub stage: String,
    pub building: u32,
}

impl ConsumptionLog {
    pub fn record(&mut self, stage: &str, buildings: impl IntoIterator<Item = u32>) {
        self.stages.entry(stage.to_string()).or_default().extend(buildings);
    }

    pub fn merge(&mut self, other: ConsumptionLog) {
        for (stage, ids) in other.stages {
            self.record(&stage, ids);
        }
    }

    pub fn stages(&self) -> impl Iterator<Item = (&String, &BTreeSet<u32>)> {
        self.stages.iter()
    }

    /// SHA-256 over every stage name and consumed id.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (stage, ids) in &self.stages {
            h.update(stage.as_bytes());
            h.update([0]);
            for id in ids {
                h.update(id.to_le_bytes());
            }
        }
        format!("{:x}", h.finalize())
    }

    /// Every recorded (stage, building) pair that falls in `eval`.
    pub fn violations(&self, eval: &IdSet) -> Vec<HygieneViolation> {
        self.stages
            .iter()
            .flat_map(|(stage, ids)| {
                ids.iter().filter(|id| eval.contains(**id)).map(move |&building| HygieneViolation {
                    stage: stage.clone(),
                    building,
                })
            })
            .collect()
    }
}
