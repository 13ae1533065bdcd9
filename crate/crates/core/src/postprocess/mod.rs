//! Harmonic post-processing: probabilistic note candidates, mixture
//! states over simultaneous pitches, smoothed transition models and
//! sequence re-decoding.

mod decode;
mod key;
mod states;
mod transitions;

pub use decode::{decode_sequence, decoded_to_events};
pub use key::{detect_key, Key, KeyMode};
pub use states::{
    candidates_from_events, generate_states, make_candidates, Cluster, PitchSet,
    ProbabilisticCandidate, StateInventory, DEFAULT_ONSET_MERGE_TOL,
};
pub use transitions::{KeyConditionedModel, TransitionModel};
