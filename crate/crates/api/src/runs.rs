use std::collections::HashMap;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pillars,
    Clusters,
    Ranking,
    Evaluation,
    Story,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunDescriptor {
    pub run_id: String,
    pub dataset_id: String,
    pub stage: Stage,
    pub status: RunStatus,
    pub progress: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunDescriptor {
    fn new(run_id: &str, dataset_id: &str, stage: Stage, status: RunStatus) -> Self {
        let progress = if status == RunStatus::Done { 1.0 } else { 0.0 };
        Self { run_id: run_id.to_string(), dataset_id: dataset_id.to_string(), stage, status, progress, error: None }
    }
}

pub enum Admission {
    /// A new run was registered as Pending and should be started.
    Started(RunDescriptor),
    /// Another run of this stage is in flight on the dataset.
    Conflict(String),
}

#[derive(Default)]
struct Inner {
    runs: HashMap<String, RunDescriptor>,
    in_flight: HashMap<(String, Stage), String>,
}

/// In-memory run table. Status only moves Pending, Running, then Done or
/// Failed; progress never decreases.
#[derive(Default)]
pub struct RunRegistry {
    inner: Mutex<Inner>,
}

impl RunRegistry {
    pub fn get(&self, run_id: &str) -> Option<RunDescriptor> {
        self.inner.lock().runs.get(run_id).cloned()
    }

    /// Records a run whose artifact already exists.
    pub fn cached(&self, run_id: &str, dataset_id: &str, stage: Stage) -> RunDescriptor {
        let mut inner = self.inner.lock();
        let entry = inner
            .runs
            .entry(run_id.to_string())
            .or_insert_with(|| RunDescriptor::new(run_id, dataset_id, stage, RunStatus::Done));
        if entry.status == RunStatus::Failed {
            *entry = RunDescriptor::new(run_id, dataset_id, stage, RunStatus::Done);
        }
        entry.clone()
    }

    pub fn admit(&self, run_id: &str, dataset_id: &str, stage: Stage) -> Admission {
        let mut inner = self.inner.lock();
        let slot = (dataset_id.to_string(), stage);
        if let Some(existing) = inner.in_flight.get(&slot) {
            return Admission::Conflict(existing.clone());
        }
        inner.in_flight.insert(slot, run_id.to_string());
        let descriptor = RunDescriptor::new(run_id, dataset_id, stage, RunStatus::Pending);
        inner.runs.insert(run_id.to_string(), descriptor.clone());
        Admission::Started(descriptor)
    }

    pub fn start(&self, run_id: &str) {
        if let Some(run) = self.inner.lock().runs.get_mut(run_id) {
            if run.status == RunStatus::Pending {
                run.status = RunStatus::Running;
            }
        }
    }

    pub fn progress(&self, run_id: &str, fraction: f64) {
        if let Some(run) = self.inner.lock().runs.get_mut(run_id) {
            if run.status == RunStatus::Running && fraction.is_finite() {
                run.progress = run.progress.max(fraction.clamp(0.0, 1.0));
            }
        }
    }

    pub fn finish(&self, run_id: &str, outcome: Result<(), String>) {
        let mut inner = self.inner.lock();
        let Some(run) = inner.runs.get_mut(run_id) else { return };
        match outcome {
            Ok(()) => {
                run.status = RunStatus::Done;
                run.progress = 1.0;
            }
            Err(e) => {
                run.status = RunStatus::Failed;
                run.error = Some(e);
            }
        }
        let slot = (run.dataset_id.clone(), run.stage);
        inner.in_flight.remove(&slot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lifecycle_and_conflicts() {
        let reg = RunRegistry::default();
        let Admission::Started(d) = reg.admit("r1", "ds", Stage::Pillars) else { panic!() };
        assert_eq!(d.status, RunStatus::Pending);
        assert!(matches!(reg.admit("r2", "ds", Stage::Pillars), Admission::Conflict(id) if id == "r1"));
        assert!(matches!(reg.admit("r3", "ds", Stage::Clusters), Admission::Started(_)));

        reg.progress("r1", 0.5);
        assert_eq!(reg.get("r1").unwrap().progress, 0.0, "no progress before running");
        reg.start("r1");
        reg.progress("r1", 0.5);
        reg.progress("r1", 0.3);
        assert_eq!(reg.get("r1").unwrap().progress, 0.5);
        reg.finish("r1", Err("boom".into()));
        let r1 = reg.get("r1").unwrap();
        assert_eq!((r1.status, r1.error.as_deref()), (RunStatus::Failed, Some("boom")));
        reg.start("r1");
        assert_eq!(reg.get("r1").unwrap().status, RunStatus::Failed);
        assert!(matches!(reg.admit("r4", "ds", Stage::Pillars), Admission::Started(_)));
    }
}
