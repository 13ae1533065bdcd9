//! Probabilistic note candidates and mixture-state generation.
//!
//! Segmented events become candidates scored by the median of their
//! interval's salience. Candidates are pruned, clustered by onset and
//! collapsed into chords; each distinct pitch set becomes one HMM state.

use indexmap::IndexMap;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::segment::{min_frames, NoteEvent};

/// Onsets closer than this to a cluster's median onset join the cluster.
pub const DEFAULT_ONSET_MERGE_TOL: f64 = 0.020;

/// A segmented note interval with its activation-score likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilisticCandidate {
    pub pitch: u8,
    pub start_frame: usize,
    /// Exclusive.
    pub end_frame: usize,
    pub likelihood: f64,
}

impl ProbabilisticCandidate {
    pub fn frames(&self) -> usize {
        self.end_frame - self.start_frame
    }
}

/// A sorted set of simultaneously sounding pitches; empty means silence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PitchSet(Vec<u8>);

impl PitchSet {
    pub fn new(mut pitches: Vec<u8>) -> Self {
        pitches.sort_unstable();
        pitches.dedup();
        PitchSet(pitches)
    }

    pub fn silence() -> Self {
        PitchSet(Vec::new())
    }

    pub fn pitches(&self) -> &[u8] {
        &self.0
    }

    pub fn is_silence(&self) -> bool {
        self.0.is_empty()
    }
}

/// Interned mixture states; the silence state is always id 0.
#[derive(Debug, Clone, PartialEq)]
pub struct StateInventory {
    states: IndexMap<PitchSet, usize>,
}

impl Default for StateInventory {
    fn default() -> Self {
        Self::new()
    }
}

impl StateInventory {
    pub fn new() -> Self {
        let mut states = IndexMap::new();
        states.insert(PitchSet::silence(), 0);
        StateInventory { states }
    }

    /// Number of states; at least 1 because silence is always present.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn intern(&mut self, set: PitchSet) -> usize {
        let next = self.states.len();
        *self.states.entry(set).or_insert(next)
    }

    pub fn id_of(&self, set: &PitchSet) -> Option<usize> {
        self.states.get(set).copied()
    }

    pub fn set_of(&self, id: usize) -> Option<&PitchSet> {
        self.states.get_index(id).map(|(set, _)| set)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PitchSet, usize)> {
        self.states.iter().map(|(set, &id)| (set, id))
    }

    pub fn to_vec(&self) -> Vec<PitchSet> {
        self.states.keys().cloned().collect()
    }

    pub fn from_sets(sets: Vec<PitchSet>) -> Self {
        let mut inv = Self::new();
        for set in sets {
            inv.intern(set);
        }
        inv
    }
}

/// One onset cluster: a mixture state with its timing and the mean
/// candidate likelihood as observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub state: usize,
    pub onset: f64,
    pub duration: f64,
    pub observation: f64,
}

/// Median of a sorted slice; even lengths take the mean of the central
/// pair.
fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn median_of(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    median_sorted(values)
}

/// Score each event with the median salience over its interval.
pub fn make_candidates(
    salience: &Array2<f64>,
    pitches: &[u8],
    hop: f64,
    events: &[NoteEvent],
) -> Vec<ProbabilisticCandidate> {
    events
        .iter()
        .filter_map(|e| {
            let row = pitches.iter().position(|&p| p == e.pitch)?;
            let start = ((e.onset / hop) - 1e-9).ceil().max(0.0) as usize;
            let end = ((((e.offset / hop) - 1e-9).ceil().max(0.0)) as usize).min(salience.ncols());
            if start >= end {
                return None;
            }
            let mut values: Vec<f64> = (start..end).map(|t| salience[(row, t)]).collect();
            Some(ProbabilisticCandidate {
                pitch: e.pitch,
                start_frame: start,
                end_frame: end,
                likelihood: median_of(&mut values),
            })
        })
        .collect()
}

/// Perfect candidates (likelihood 1) from reference events, used to
/// build training state sequences from ground-truth scores.
pub fn candidates_from_events(events: &[NoteEvent], hop: f64) -> Vec<ProbabilisticCandidate> {
    events
        .iter()
        .filter_map(|e| {
            let start = ((e.onset / hop) - 1e-9).ceil().max(0.0) as usize;
            let end = (((e.offset / hop) - 1e-9).ceil().max(0.0)) as usize;
            if start >= end {
                return None;
            }
            Some(ProbabilisticCandidate {
                pitch: e.pitch,
                start_frame: start,
                end_frame: end,
                likelihood: 1.0,
            })
        })
        .collect()
}

/// Reduce candidates to a cluster sequence over interned mixture states.
///
/// Candidates shorter than `min_dur` are pruned; the rest are swept in
/// onset order, joining the current cluster while their onset stays
/// within `merge_tol` of its median onset. Each cluster takes the median
/// onset and median duration of its members, the union of their pitches
/// as its state, and their mean likelihood as observation.
pub fn generate_states(
    candidates: &[ProbabilisticCandidate],
    hop: f64,
    min_dur: f64,
    merge_tol: f64,
    inventory: &mut StateInventory,
) -> Vec<Cluster> {
    let min_run = min_frames(min_dur, hop);
    let mut kept: Vec<&ProbabilisticCandidate> =
        candidates.iter().filter(|c| c.frames() >= min_run.max(1)).collect();
    kept.sort_by(|a, b| a.start_frame.cmp(&b.start_frame).then(a.pitch.cmp(&b.pitch)));

    let mut clusters = Vec::new();
    let mut member_onsets: Vec<f64> = Vec::new();
    let mut members: Vec<&ProbabilisticCandidate> = Vec::new();

    let flush = |member_onsets: &mut Vec<f64>, members: &mut Vec<&ProbabilisticCandidate>,
                     clusters: &mut Vec<Cluster>, inventory: &mut StateInventory| {
        if members.is_empty() {
            return;
        }
        let onset = median_sorted(member_onsets);
        let mut durations: Vec<f64> = members.iter().map(|c| c.frames() as f64 * hop).collect();
        let duration = median_of(&mut durations);
        let observation =
            members.iter().map(|c| c.likelihood).sum::<f64>() / members.len() as f64;
        let set = PitchSet::new(members.iter().map(|c| c.pitch).collect());
        clusters.push(Cluster {
            state: inventory.intern(set),
            onset,
            duration,
            observation,
        });
        member_onsets.clear();
        members.clear();
    };

    for c in kept {
        let onset = c.start_frame as f64 * hop;
        if !members.is_empty() {
            let current_median = median_sorted(&member_onsets);
            if (onset - current_median).abs() > merge_tol {
                flush(&mut member_onsets, &mut members, &mut clusters, inventory);
            }
        }
        // onsets arrive sorted, so pushing keeps the vector sorted
        member_onsets.push(onset);
        members.push(c);
    }
    flush(&mut member_onsets, &mut members, &mut clusters, inventory);
    clusters
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn median_of_odd_interval() {
        let salience = arr2(&[[0.1, 0.5, 0.9]]);
        let events = vec![NoteEvent::new(60, 0.0, 0.03)];
        let cands = make_candidates(&salience, &[60], 0.01, &events);
        assert_eq!(cands.len(), 1);
        assert_eq!(cands[0].likelihood, 0.5);
    }

    #[test]
    fn even_interval_takes_mean_of_central_pair() {
        let salience = arr2(&[[0.2, 0.8]]);
        let events = vec![NoteEvent::new(60, 0.0, 0.02)];
        let cands = make_candidates(&salience, &[60], 0.01, &events);
        assert_eq!(cands[0].likelihood, 0.5);
    }

    #[test]
    fn constant_interval_keeps_its_value() {
        let salience = arr2(&[[0.3, 0.3, 0.3, 0.3]]);
        let events = vec![NoteEvent::new(60, 0.0, 0.04)];
        let cands = make_candidates(&salience, &[60], 0.01, &events);
        assert_eq!(cands[0].likelihood, 0.3);
    }

    fn cand(pitch: u8, start: usize, end: usize, likelihood: f64) -> ProbabilisticCandidate {
        ProbabilisticCandidate { pitch, start_frame: start, end_frame: end, likelihood }
    }

    #[test]
    fn close_onsets_fuse_into_one_state() {
        let mut inv = StateInventory::new();
        // onsets 0.100 and 0.115 s at 5 ms hop
        let cands = vec![cand(60, 20, 40, 0.8), cand(64, 23, 43, 0.6)];
        let clusters = generate_states(&cands, 0.005, 0.05, DEFAULT_ONSET_MERGE_TOL, &mut inv);
        assert_eq!(clusters.len(), 1);
        let set = inv.set_of(clusters[0].state).unwrap();
        assert_eq!(set.pitches(), &[60, 64]);
        assert!((clusters[0].observation - 0.7).abs() < 1e-12);
    }

    #[test]
    fn distant_onsets_stay_separate() {
        let mut inv = StateInventory::new();
        // onsets 0.100 and 0.130 s
        let cands = vec![cand(60, 20, 40, 0.8), cand(64, 26, 46, 0.6)];
        let clusters = generate_states(&cands, 0.005, 0.05, DEFAULT_ONSET_MERGE_TOL, &mut inv);
        assert_eq!(clusters.len(), 2);
    }

    #[test]
    fn short_candidates_are_pruned_before_clustering() {
        let mut inv = StateInventory::new();
        // 40 ms at 10 ms hop = 4 frames, below the 50 ms minimum
        let cands = vec![cand(60, 0, 4, 0.9)];
        let clusters = generate_states(&cands, 0.01, 0.05, DEFAULT_ONSET_MERGE_TOL, &mut inv);
        assert!(clusters.is_empty());
    }

    #[test]
    fn chord_duration_is_the_median_member_duration() {
        let mut inv = StateInventory::new();
        let cands = vec![cand(60, 0, 10, 1.0), cand(64, 0, 20, 1.0), cand(67, 0, 40, 1.0)];
        let clusters = generate_states(&cands, 0.01, 0.0, DEFAULT_ONSET_MERGE_TOL, &mut inv);
        assert_eq!(clusters.len(), 1);
        assert!((clusters[0].duration - 0.2).abs() < 1e-12);
    }

    #[test]
    fn silence_state_is_always_id_zero() {
        let inv = StateInventory::new();
        assert_eq!(inv.len(), 1);
        assert!(inv.set_of(0).unwrap().is_silence());
    }

    #[test]
    fn repeated_pitch_sets_reuse_state_ids() {
        let mut inv = StateInventory::new();
        let cands = vec![
            cand(60, 0, 20, 1.0),
            cand(64, 0, 20, 1.0),
            cand(60, 100, 120, 1.0),
            cand(64, 100, 120, 1.0),
        ];
        let clusters = generate_states(&cands, 0.01, 0.0, DEFAULT_ONSET_MERGE_TOL, &mut inv);
        assert_eq!(clusters.len(), 2);
        assert_eq!(clusters[0].state, clusters[1].state);
        assert_eq!(inv.len(), 2); // silence + one chord
    }

    #[test]
    fn regenerating_from_own_output_changes_nothing() {
        let mut inv = StateInventory::new();
        // odd-size clusters keep their median onsets on the frame grid,
        // so the rebuilt candidates are exact
        let cands = vec![
            cand(60, 10, 40, 0.5),
            cand(64, 11, 45, 0.7),
            cand(72, 12, 45, 0.6),
            cand(67, 30, 80, 0.9),
            cand(60, 90, 130, 0.4),
        ];
        let first = generate_states(&cands, 0.01, 0.05, DEFAULT_ONSET_MERGE_TOL, &mut inv);

        // rebuild candidates from the clusters' own notes
        let mut rebuilt = Vec::new();
        for c in &first {
            let set = inv.set_of(c.state).unwrap().clone();
            for &p in set.pitches() {
                let start = (c.onset / 0.01).round() as usize;
                let frames = (c.duration / 0.01).round() as usize;
                rebuilt.push(cand(p, start, start + frames, c.observation));
            }
        }
        let second = generate_states(&rebuilt, 0.01, 0.05, DEFAULT_ONSET_MERGE_TOL, &mut inv);
        assert_eq!(first.len(), second.len());
        for (a, b) in first.iter().zip(&second) {
            assert_eq!(a.state, b.state);
            assert!((a.onset - b.onset).abs() < 1e-9);
            assert!((a.duration - b.duration).abs() < 1e-9);
            assert!((a.observation - b.observation).abs() < 1e-9);
        }
    }
}
