//! Mixture-state transition models with Witten-Bell smoothing.
//!
//! Raw n-gram counts over state sequences; the smoothed successor
//! distribution reserves T/(n+T) mass for unseen successors, where T is
//! the number of distinct successors observed after a context and n the
//! total transitions from it. Unseen contexts back off to uniform.
//! Models are ergodic: every state can follow every context.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AmtError, Result};
use crate::postprocess::states::{PitchSet, StateInventory};

/// n-gram transition model over mixture states (order 1 or 2).
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    pub order: usize,
    pub inventory: StateInventory,
    /// context (length = order) -> successor -> count
    counts: BTreeMap<Vec<usize>, BTreeMap<usize, u64>>,
}

impl TransitionModel {
    pub fn new(order: usize) -> Result<Self> {
        if !matches!(order, 1 | 2) {
            return Err(AmtError::InvalidConfig(format!("transition order {order} (must be 1 or 2)")));
        }
        Ok(TransitionModel {
            order,
            inventory: StateInventory::new(),
            counts: BTreeMap::new(),
        })
    }

    pub fn n_states(&self) -> usize {
        self.inventory.len()
    }

    /// Accumulate n-gram counts from one state sequence. State ids must
    /// come from this model's inventory.
    pub fn add_sequence(&mut self, sequence: &[usize]) -> Result<()> {
        for &s in sequence {
            if s >= self.inventory.len() {
                return Err(AmtError::ModelStateMismatch(s));
            }
        }
        for window in sequence.windows(self.order + 1) {
            let (context, successor) = window.split_at(self.order);
            *self
                .counts
                .entry(context.to_vec())
                .or_default()
                .entry(successor[0])
                .or_insert(0) += 1;
        }
        Ok(())
    }

    pub fn raw_count(&self, context: &[usize], successor: usize) -> u64 {
        self.counts
            .get(context)
            .and_then(|row| row.get(&successor))
            .copied()
            .unwrap_or(0)
    }

    pub fn has_counts(&self) -> bool {
        !self.counts.is_empty()
    }

    pub fn contexts(&self) -> impl Iterator<Item = &Vec<usize>> {
        self.counts.keys()
    }

    /// Make every pitch set in `sets` a known state. States first seen
    /// here carry no counts and receive only smoothing mass.
    pub fn absorb_states(&mut self, sets: impl IntoIterator<Item = PitchSet>) {
        for set in sets {
            self.inventory.intern(set);
        }
    }

    /// Witten-Bell smoothed successor distribution over all states.
    ///
    /// With n total transitions from `context` over T distinct
    /// successors and Z = N - T unseen states: seen successors keep
    /// count/(n+T), unseen ones share T/(n+T) evenly. A context with no
    /// counts backs off to the uniform distribution; when every state
    /// has been seen as a successor the raw frequencies are used.
    pub fn witten_bell(&self, context: &[usize]) -> Vec<f64> {
        let n_states = self.inventory.len();
        let uniform = vec![1.0 / n_states as f64; n_states];
        let Some(row) = self.counts.get(context) else {
            return uniform;
        };
        let n: u64 = row.values().sum();
        if n == 0 {
            return uniform;
        }
        let t = row.len() as u64;
        let z = n_states as u64 - t;
        let mut dist = vec![0.0; n_states];
        if z == 0 {
            for (&s, &c) in row {
                dist[s] = c as f64 / n as f64;
            }
        } else {
            let unseen_each = t as f64 / (z as f64 * (n + t) as f64);
            dist.iter_mut().for_each(|p| *p = unseen_each);
            for (&s, &c) in row {
                dist[s] = c as f64 / (n + t) as f64;
            }
        }
        dist
    }
}

// On-disk form: JSON-friendly layout with explicit n-gram entries.
#[derive(Debug, Serialize, Deserialize)]
struct PersistedModel {
    order: usize,
    states: Vec<PitchSet>,
    ngrams: Vec<NgramEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct NgramEntry {
    context: Vec<usize>,
    successors: Vec<(usize, u64)>,
}

impl TransitionModel {
    pub fn to_json(&self) -> serde_json::Value {
        let persisted = PersistedModel {
            order: self.order,
            states: self.inventory.to_vec(),
            ngrams: self
                .counts
                .iter()
                .map(|(context, row)| NgramEntry {
                    context: context.clone(),
                    successors: row.iter().map(|(&s, &c)| (s, c)).collect(),
                })
                .collect(),
        };
        serde_json::to_value(persisted).expect("model serialization cannot fail")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let persisted: PersistedModel =
            serde_json::from_value(value).map_err(|e| AmtError::MalformedFile(e.to_string()))?;
        if persisted.states.first().map(|s| s.is_silence()) != Some(true) {
            return Err(AmtError::MalformedFile("state 0 must be silence".into()));
        }
        let mut model = TransitionModel::new(persisted.order)?;
        model.inventory = StateInventory::from_sets(persisted.states);
        for entry in persisted.ngrams {
            let row: BTreeMap<usize, u64> = entry.successors.into_iter().collect();
            model.counts.insert(entry.context, row);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.to_json())
            .map_err(|e| AmtError::InvalidConfig(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AmtError::UnreadableFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let value = serde_json::from_str(&text).map_err(|e| AmtError::MalformedFile(e.to_string()))?;
        Self::from_json(value)
    }
}

/// 24 key-conditioned first-order models, one per (tonic, mode).
#[derive(Debug, Clone)]
pub struct KeyConditionedModel {
    pub models: Vec<TransitionModel>,
}

impl KeyConditionedModel {
    pub fn new() -> Self {
        KeyConditionedModel {
            models: (0..24).map(|_| TransitionModel::new(1).unwrap()).collect(),
        }
    }

    pub fn model(&self, key_index: usize) -> &TransitionModel {
        &self.models[key_index]
    }

    pub fn model_mut(&mut self, key_index: usize) -> &mut TransitionModel {
        &mut self.models[key_index]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let values: Vec<serde_json::Value> = self.models.iter().map(|m| m.to_json()).collect();
        let json = serde_json::to_string_pretty(&values)
            .map_err(|e| AmtError::InvalidConfig(e.to_string()))?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AmtError::UnreadableFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let values: Vec<serde_json::Value> =
            serde_json::from_str(&text).map_err(|e| AmtError::MalformedFile(e.to_string()))?;
        if values.len() != 24 {
            return Err(AmtError::MalformedFile(format!("expected 24 key models, got {}", values.len())));
        }
        Ok(KeyConditionedModel {
            models: values
                .into_iter()
                .map(TransitionModel::from_json)
                .collect::<Result<Vec<_>>>()?,
        })
    }
}

impl Default for KeyConditionedModel {
    fn default() -> Self {
        Self::new()
    }
}
