//! Offline music transcription toolkit: PLCA spectrogram factorization
//! with HMM-based note segmentation and harmonic post-processing.
//!
//! The pipeline decodes audio into a normalized log-frequency
//! spectrogram, factorizes it against fixed per-pitch spectral
//! templates, segments per-pitch activations into note events
//! (thresholding or on/off HMMs, optionally duration-modeling), and can
//! re-decode the note stream with mixture-state harmonic-transition
//! models. Transcriptions are scored against reference MIDI with
//! onset-based note metrics.

pub mod audio;
pub mod error;
pub mod eval;
pub mod midi;
pub mod pipeline;
pub mod plca;
pub mod postprocess;
pub mod segment;
pub mod spectrogram;
pub mod synth;
pub mod templates;

pub use error::{AmtError, Result};
