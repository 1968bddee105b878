//! JSON model and policy files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CtmdpModel, DetPolicy, Policy, RandStationaryPolicy};

/// Row residuals up to this size are absorbed into the diagonal on load.
pub const LOAD_ROW_SUM_TOL: f64 = 1e-9;

/// A parsed model together with the warnings produced while loading it.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub model: CtmdpModel,
    pub warnings: Vec<String>,
}

pub fn parse_model(text: &str) -> Result<LoadedModel> {
    let mut model: CtmdpModel = serde_json::from_str(text)?;
    let mut warnings = recenter_rows(&mut model);
    warnings.extend(model.warnings());
    Ok(LoadedModel { model, warnings })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text)
}

pub fn model_to_json(model: &CtmdpModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(model)?)
}

/// Subtracts small row-sum residuals from the diagonal so rows sum to zero.
fn recenter_rows(model: &mut CtmdpModel) -> Vec<String> {
    let mut warnings = Vec::new();
    for (i, block) in model.rates.iter_mut().enumerate() {
        for (a, row) in block.iter_mut().enumerate() {
            if i >= row.len() || row.iter().any(|v| !v.is_finite()) {
                continue;
            }
            let sum: f64 = row.iter().sum();
            if sum.abs() > crate::model::ROW_SUM_TOL && sum.abs() <= LOAD_ROW_SUM_TOL {
                row[i] -= sum;
                warnings.push(format!(
                    "rate row (state {i}, action {a}) re-centered by {sum:e}"
                ));
            }
        }
    }
    warnings
}

/// Policy file entry: an action label, or a map of action label to weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PolicyEntry {
    Action(String),
    Weights(BTreeMap<String, f64>),
}

/// Policy file: state label → entry.
pub type PolicyFile = BTreeMap<String, PolicyEntry>;

/// Resolves a label-keyed policy file against a model. If every entry is a
/// plain action label the result is deterministic.
pub fn policy_from_file(model: &CtmdpModel, file: &PolicyFile) -> Result<Policy> {
    for label in file.keys() {
        if model.state_index(label).is_none() {
            return Err(Error::PolicyIncompatible(format!(
                "unknown state '{label}'"
            )));
        }
    }
    let n = model.n_states();
    let all_plain = file.values().all(|e| matches!(e, PolicyEntry::Action(_)));
    let mut choice = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let label = &model.states[i];
        let entry = file
            .get(label)
            .ok_or_else(|| Error::PolicyIncompatible(format!("no entry for state '{label}'")))?;
        let m = model.n_actions(i);
        let mut row = vec![0.0; m];
        match entry {
            PolicyEntry::Action(a) => {
                let idx = lookup_action(model, i, a)?;
                choice.push(idx);
                row[idx] = 1.0;
            }
            PolicyEntry::Weights(map) => {
                for (a, &w) in map {
                    row[lookup_action(model, i, a)?] = w;
                }
            }
        }
        weights.push(row);
    }
    let policy = if all_plain {
        Policy::Deterministic(DetPolicy(choice))
    } else {
        Policy::Randomized(RandStationaryPolicy { weights })
    };
    policy.check(model)?;
    Ok(policy)
}

fn lookup_action(model: &CtmdpModel, state: usize, label: &str) -> Result<usize> {
    model.action_index(state, label).ok_or_else(|| {
        Error::PolicyIncompatible(format!(
            "unknown action '{label}' at state '{}'",
            model.states[state]
        ))
    })
}

pub fn parse_policy(model: &CtmdpModel, text: &str) -> Result<Policy> {
    let file: PolicyFile = serde_json::from_str(text)?;
    policy_from_file(model, &file)
}

pub fn load_policy(model: &CtmdpModel, path: impl AsRef<Path>) -> Result<Policy> {
    let text = std::fs::read_to_string(path)?;
    parse_policy(model, &text)
}

/// Label map for a deterministic policy, the inverse of [`policy_from_file`].
pub fn det_policy_to_file(model: &CtmdpModel, f: &DetPolicy) -> PolicyFile {
    f.labels(model)
        .into_iter()
        .map(|(s, a)| (s, PolicyEntry::Action(a)))
        .collect()
}
