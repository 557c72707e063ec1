//! The extracted task: keypoints with their constraints, local frames and
//! movement primitives, plus the objects' reference geometry.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constraint::{Constraint, ConstraintKind, Thresholds};
use crate::error::{KvilError, Result};
use crate::ingest::{CanonicalShape, LocalFrameSpec};
use crate::pme::Chart;
use crate::vmp::VmpModel;

pub const TASK_FORMAT: &str = "kvil-task/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSummary {
    pub name: String,
    pub descriptor_ids: Vec<u64>,
    pub canonical: CanonicalShape,
}

impl ObjectSummary {
    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.descriptor_ids.iter().position(|&d| d == id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskKeypoint {
    pub slave: String,
    pub descriptor_id: u64,
    pub candidate: usize,
    pub constraint: Constraint,
    pub frame: LocalFrameSpec,
    /// Movement primitive in frame coordinates (p2p) or of the distance to
    /// the constraint manifold (other kinds).
    pub vmp: VmpModel,
    /// Demonstrated keypoint positions at the constraint time, in chart
    /// coordinates of the constraint manifold.
    pub targets: Vec<Chart>,
    pub score: f64,
}

impl TaskKeypoint {
    pub fn kind(&self) -> ConstraintKind {
        self.constraint.kind()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRepresentation {
    pub format: String,
    pub demo_count: usize,
    pub time_steps: usize,
    pub thresholds: Thresholds,
    pub master: ObjectSummary,
    pub slaves: Vec<ObjectSummary>,
    pub keypoints: Vec<TaskKeypoint>,
}

impl TaskRepresentation {
    pub fn slave(&self, name: &str) -> Option<&ObjectSummary> {
        self.slaves.iter().find(|s| s.name == name)
    }

    /// Index of the first point-to-point keypoint, which takes priority.
    pub fn priority_keypoint(&self) -> Option<usize> {
        self.keypoints.iter().position(|k| k.kind() == ConstraintKind::PointToPoint)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != TASK_FORMAT {
            return Err(KvilError::SchemaError(format!("unsupported task format `{}`", self.format)));
        }
        if self.keypoints.is_empty() {
            return Err(KvilError::SchemaError("task has no keypoints".into()));
        }
        for k in &self.keypoints {
            let slave = self
                .slave(&k.slave)
                .ok_or_else(|| KvilError::SchemaError(format!("unknown slave `{}`", k.slave)))?;
            if slave.descriptor_ids.get(k.candidate) != Some(&k.descriptor_id) {
                return Err(KvilError::SchemaError(format!("keypoint {} does not match its slave", k.descriptor_id)));
            }
            if let Constraint::Nonlinear(c) = &k.constraint {
                if c.manifold.dim() != c.kind.dim() {
                    return Err(KvilError::SchemaError("manifold dimension does not match constraint".into()));
                }
            }
        }
        Ok(())
    }
}

pub fn task_to_string(task: &TaskRepresentation) -> Result<String> {
    Ok(serde_json::to_string_pretty(task)?)
}

pub fn parse_task(text: &str) -> Result<TaskRepresentation> {
    let task: TaskRepresentation = serde_json::from_str(text)?;
    task.validate()?;
    Ok(task)
}

pub fn write_task(task: &TaskRepresentation, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, task_to_string(task)?)?;
    Ok(())
}

pub fn load_task(path: impl AsRef<Path>) -> Result<TaskRepresentation> {
    parse_task(&std::fs::read_to_string(path)?)
}
