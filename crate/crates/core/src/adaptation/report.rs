use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AdaptError;
use crate::nn::{Checkpoint, FreezeSet, GroupName};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDelta {
    pub frozen: bool,
    pub changed: bool,
    pub max_abs_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptReport {
    pub freeze: FreezeSet,
    pub groups: BTreeMap<GroupName, GroupDelta>,
    pub selected_step: u64,
    pub best_valid_loss: Option<f64>,
    /// Validation loss of the starting parameters on the new data.
    pub zero_shot_valid_loss: Option<f64>,
    pub train_curve: Vec<(u64, f64)>,
    pub valid_curve: Vec<(u64, f64)>,
}

impl AdaptReport {
    pub fn changed_groups(&self) -> Vec<GroupName> {
        self.groups.iter().filter(|(_, d)| d.changed).map(|(g, _)| *g).collect()
    }

    pub fn unchanged_groups(&self) -> Vec<GroupName> {
        self.groups.iter().filter(|(_, d)| !d.changed).map(|(g, _)| *g).collect()
    }
}

/// Byte-compares every tensor of `before` and `after`. Frozen groups must be
/// identical; the first differing frozen tensor is named in the error.
pub fn verify_freeze(before: &Checkpoint, after: &Checkpoint, freeze: &FreezeSet) -> Result<AdaptReport, AdaptError> {
    if before.config != after.config {
        return Err(AdaptError::Config("checkpoints were produced from different model configs".into()));
    }
    let (a, b) = (&before.params, &after.params);
    if a.len() != b.len() {
        return Err(AdaptError::Config("checkpoints hold different tensor sets".into()));
    }
    let mut groups: BTreeMap<GroupName, GroupDelta> = BTreeMap::new();
    for ((_, pa), (_, pb)) in a.iter().zip(b.iter()) {
        if pa.name != pb.name || pa.group != pb.group || pa.value.dim() != pb.value.dim() {
            return Err(AdaptError::Config(format!("tensor {} differs in name, group or shape", pa.name)));
        }
        let bytes_equal = pa.value.iter().zip(pb.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits());
        let frozen = freeze.contains(pa.group);
        if frozen && !bytes_equal {
            return Err(AdaptError::FreezeViolation { tensor: pa.name.clone(), group: pa.group });
        }
        let delta = pa.value.iter().zip(pb.value.iter()).map(|(x, y)| (x - y).abs() as f64).fold(0.0, f64::max);
        let entry = groups.entry(pa.group).or_insert(GroupDelta { frozen, changed: false, max_abs_delta: 0.0 });
        entry.changed |= !bytes_equal;
        entry.max_abs_delta = entry.max_abs_delta.max(delta);
    }
    Ok(AdaptReport {
        freeze: freeze.clone(),
        groups,
        selected_step: after.meta.step,
        best_valid_loss: after.meta.valid_loss,
        zero_shot_valid_loss: None,
        train_curve: Vec::new(),
        valid_curve: Vec::new(),
    })
}
