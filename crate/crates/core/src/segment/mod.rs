//! Note segmentation: turning the salience matrix into on/off decisions.
//!
//! Three interchangeable strategies: plain thresholding, per-pitch
//! two-state on/off HMM decoding, and duration-modeling on/off HMM
//! decoding where the self-transition probability depends on how long
//! the state has persisted.

mod onoff;
mod duration;

pub use duration::{train_duration, viterbi_duration, DurationHmm};
pub use onoff::{train_on_off, viterbi_on_off, OnOffHmm};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Emission floor shared by both HMM decoders.
pub(crate) const EMISSION_FLOOR: f64 = 1e-6;

/// A pitched interval in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub pitch: u8,
    pub onset: f64,
    pub offset: f64,
    /// Assigned by post-processing; absent straight out of segmentation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihood: Option<f64>,
}

impl NoteEvent {
    pub fn new(pitch: u8, onset: f64, offset: f64) -> Self {
        NoteEvent { pitch, onset, offset, likelihood: None }
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

/// Minimum run length in frames for a duration threshold, robust to
/// float rounding in `min_dur / hop`.
pub(crate) fn min_frames(min_dur: f64, hop: f64) -> usize {
    if min_dur <= 0.0 {
        return 0;
    }
    (min_dur / hop - 1e-9).ceil().max(0.0) as usize
}

fn runs_to_events(active: impl Iterator<Item = bool>, pitch: u8, hop: f64, min_run: usize) -> Vec<NoteEvent> {
    let mut events = Vec::new();
    let mut run_start: Option<usize> = None;
    let mut t = 0usize;
    for on in active {
        if on && run_start.is_none() {
            run_start = Some(t);
        }
        if !on {
            if let Some(start) = run_start.take() {
                if t - start >= min_run {
                    events.push(NoteEvent::new(pitch, start as f64 * hop, t as f64 * hop));
                }
            }
        }
        t += 1;
    }
    if let Some(start) = run_start {
        if t - start >= min_run {
            events.push(NoteEvent::new(pitch, start as f64 * hop, t as f64 * hop));
        }
    }
    events
}

/// Threshold-based detection: per pitch, maximal runs of frames with
/// salience strictly above `threshold` become events; runs shorter than
/// `min_dur` are pruned.
pub fn threshold_segment(
    salience: &Array2<f64>,
    pitches: &[u8],
    threshold: f64,
    min_dur: f64,
    hop: f64,
) -> Vec<NoteEvent> {
    let min_run = min_frames(min_dur, hop);
    let mut events = Vec::new();
    for (row, &pitch) in salience.rows().into_iter().zip(pitches) {
        events.extend(runs_to_events(row.iter().map(|&v| v > threshold), pitch, hop, min_run));
    }
    events.sort_by(|a, b| a.onset.partial_cmp(&b.onset).unwrap().then(a.pitch.cmp(&b.pitch)));
    events
}

/// Convert a decoded binary path into events, applying the same
/// minimum-duration pruning as `threshold_segment` for parity across
/// segmentation strategies.
pub fn path_to_events(path: &[bool], pitch: u8, hop: f64, min_dur: f64) -> Vec<NoteEvent> {
    runs_to_events(path.iter().copied(), pitch, hop, min_frames(min_dur, hop))
}
