use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Idle,
    AcquireFrame,
    Segment,
    EstimatePoses,
    AutoFilter,
    OperatorReview,
    SequenceTargets,
    PlanMotion,
    Execute,
    Spray,
    UpdateTargets,
    Complete,
}

impl PhaseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Idle => "idle",
            Self::AcquireFrame => "acquire_frame",
            Self::Segment => "segment",
            Self::EstimatePoses => "estimate_poses",
            Self::AutoFilter => "auto_filter",
            Self::OperatorReview => "operator_review",
            Self::SequenceTargets => "sequence_targets",
            Self::PlanMotion => "plan_motion",
            Self::Execute => "execute",
            Self::Spray => "spray",
            Self::UpdateTargets => "update_targets",
            Self::Complete => "complete",
        }
    }
}

impl fmt::Display for PhaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mission phase; per-cluster phases carry the cluster id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    AcquireFrame,
    Segment,
    EstimatePoses,
    AutoFilter,
    OperatorReview,
    SequenceTargets,
    PlanMotion(u32),
    Execute(u32),
    Spray(u32),
    UpdateTargets,
    Complete,
}

impl Phase {
    pub fn kind(self) -> PhaseKind {
        match self {
            Self::Idle => PhaseKind::Idle,
            Self::AcquireFrame => PhaseKind::AcquireFrame,
            Self::Segment => PhaseKind::Segment,
            Self::EstimatePoses => PhaseKind::EstimatePoses,
            Self::AutoFilter => PhaseKind::AutoFilter,
            Self::OperatorReview => PhaseKind::OperatorReview,
            Self::SequenceTargets => PhaseKind::SequenceTargets,
            Self::PlanMotion(_) => PhaseKind::PlanMotion,
            Self::Execute(_) => PhaseKind::Execute,
            Self::Spray(_) => PhaseKind::Spray,
            Self::UpdateTargets => PhaseKind::UpdateTargets,
            Self::Complete => PhaseKind::Complete,
        }
    }

    pub fn cluster(self) -> Option<u32> {
        match self {
            Self::PlanMotion(c) | Self::Execute(c) | Self::Spray(c) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.cluster() {
            Some(c) => write!(f, "{}({c})", self.kind()),
            None => write!(f, "{}", self.kind()),
        }
    }
}

/// Every legal `(from, to)` edge of the mission state machine.
pub const TRANSITIONS: &[(PhaseKind, PhaseKind)] = {
    use PhaseKind::*;
    &[
        (Idle, AcquireFrame),
        (AcquireFrame, Segment),
        (Segment, EstimatePoses),
        (EstimatePoses, AutoFilter),
        (AutoFilter, OperatorReview),
        (OperatorReview, SequenceTargets),
        (SequenceTargets, PlanMotion),
        (SequenceTargets, Complete),
        (PlanMotion, Execute),
        (PlanMotion, UpdateTargets),
        (Execute, Spray),
        (Spray, UpdateTargets),
        (UpdateTargets, PlanMotion),
        (UpdateTargets, SequenceTargets),
        (UpdateTargets, Complete),
    ]
};

/// Whether `from -> to` is in the table, with the cluster carried unchanged
/// from planning through execution and spraying.
pub fn is_legal(from: Phase, to: Phase) -> bool {
    if !TRANSITIONS.contains(&(from.kind(), to.kind())) {
        return false;
    }
    match (from, to) {
        (Phase::PlanMotion(a), Phase::Execute(b)) | (Phase::Execute(a), Phase::Spray(b)) => a == b,
        _ => true,
    }
}

/// One recorded phase change. `cluster_id` belongs to whichever side is a
/// per-cluster phase, preferring `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub t: f64,
    pub from: PhaseKind,
    pub to: PhaseKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_id: Option<u32>,
}

impl Transition {
    pub fn new(t: f64, from: Phase, to: Phase) -> Self {
        Self {
            t,
            from: from.kind(),
            to: to.kind(),
            cluster_id: to.cluster().or(from.cluster()),
        }
    }
}

/// Checks table membership, chaining, clock monotonicity, and the final state.
pub fn validate_trace(trace: &[Transition]) -> Result<(), String> {
    let Some(first) = trace.first() else {
        return Err("empty trace".into());
    };
    if first.from != PhaseKind::Idle {
        return Err(format!("trace starts in {}", first.from));
    }
    for (i, tr) in trace.iter().enumerate() {
        if !TRANSITIONS.contains(&(tr.from, tr.to)) {
            return Err(format!("step {i}: illegal edge {} -> {}", tr.from, tr.to));
        }
        if let Some(prev) = i.checked_sub(1).map(|j| &trace[j]) {
            if prev.to != tr.from {
                return Err(format!(
                    "step {i}: starts in {} but the previous step ended in {}",
                    tr.from, prev.to
                ));
            }
            if tr.t < prev.t {
                return Err(format!(
                    "step {i}: clock went back from {} to {}",
                    prev.t, tr.t
                ));
            }
        }
    }
    match trace.last() {
        Some(last) if last.to == PhaseKind::Complete => Ok(()),
        Some(last) => Err(format!("trace ends in {}", last.to)),
        None => unreachable!(),
    }
}

pub fn write_trace<W: Write>(trace: &[Transition], mut out: W) -> std::io::Result<()> {
    for tr in trace {
        let line = serde_json::to_string(tr).map_err(std::io::Error::other)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}
