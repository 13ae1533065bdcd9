//! Chroma-based key detection.
//!
//! Bin energies fold into a 12-dimensional pitch-class profile which is
//! correlated against the 24 Krumhansl-Schmuckler key profiles.

use serde::{Deserialize, Serialize};

use crate::error::{AmtError, Result};
use crate::spectrogram::Spectrogram;

/// Krumhansl-Schmuckler major profile, tonic first.
const MAJOR_PROFILE: [f64; 12] = [
    6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88,
];
/// Krumhansl-Schmuckler minor profile, tonic first.
const MINOR_PROFILE: [f64; 12] = [
    6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17,
];

const NOTE_NAMES: [&str; 12] = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KeyMode {
    Major,
    Minor,
}

/// A tonality: tonic pitch class (0 = C) plus mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Key {
    pub tonic: u8,
    pub mode: KeyMode,
}

impl Key {
    /// Index into the 24-model table: majors first, then minors.
    pub fn index(&self) -> usize {
        self.tonic as usize + if self.mode == KeyMode::Minor { 12 } else { 0 }
    }

    pub fn name(&self) -> String {
        format!(
            "{} {}",
            NOTE_NAMES[self.tonic as usize % 12],
            if self.mode == KeyMode::Major { "major" } else { "minor" }
        )
    }
}

fn pearson(x: &[f64; 12], y: &[f64; 12]) -> f64 {
    let mean = |v: &[f64; 12]| v.iter().sum::<f64>() / 12.0;
    let (mx, my) = (mean(x), mean(y));
    let mut num = 0.0;
    let mut dx2 = 0.0;
    let mut dy2 = 0.0;
    for k in 0..12 {
        let dx = x[k] - mx;
        let dy = y[k] - my;
        num += dx * dy;
        dx2 += dx * dx;
        dy2 += dy * dy;
    }
    let denom = (dx2 * dy2).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        num / denom
    }
}

/// Fold the spectrogram into a chroma vector (energy per pitch class
/// over the whole sequence).
pub fn chroma_profile(spec: &Spectrogram) -> Result<[f64; 12]> {
    let mut chroma = [0.0f64; 12];
    let mut total = 0.0;
    for (k, &freq) in spec.bin_frequencies.iter().enumerate() {
        if freq <= 0.0 {
            continue;
        }
        let midi = 69.0 + 12.0 * (freq / 440.0).log2();
        let pc = (midi.round() as i64).rem_euclid(12) as usize;
        let mut energy = 0.0;
        for (t, &e) in spec.frame_energy.iter().enumerate() {
            if e > 0.0 {
                energy += spec.magnitudes[(k, t)] * e;
            }
        }
        chroma[pc] += energy;
        total += energy;
    }
    if total == 0.0 {
        return Err(AmtError::AllSilent);
    }
    Ok(chroma)
}

/// Detect the most likely key of a sequence.
///
/// Ties break toward the lower tonic index, major before minor.
pub fn detect_key(spec: &Spectrogram) -> Result<Key> {
    let chroma = chroma_profile(spec)?;
    let mut best = Key { tonic: 0, mode: KeyMode::Major };
    let mut best_score = f64::NEG_INFINITY;
    for tonic in 0..12u8 {
        for mode in [KeyMode::Major, KeyMode::Minor] {
            let profile = match mode {
                KeyMode::Major => &MAJOR_PROFILE,
                KeyMode::Minor => &MINOR_PROFILE,
            };
            let mut rotated = [0.0f64; 12];
            for (pc, slot) in rotated.iter_mut().enumerate() {
                *slot = profile[(pc + 12 - tonic as usize) % 12];
            }
            let score = pearson(&chroma, &rotated);
            if score > best_score {
                best_score = score;
                best = Key { tonic, mode };
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    /// Spectrogram whose bins sit exactly on the given MIDI pitches with
    /// the given energies.
    fn spec_with_pitches(pitches: &[(u8, f64)]) -> Spectrogram {
        let n_bins = pitches.len();
        let mut magnitudes = Array2::zeros((n_bins, 1));
        let total: f64 = pitches.iter().map(|&(_, e)| e).sum();
        for (k, &(_, e)) in pitches.iter().enumerate() {
            magnitudes[(k, 0)] = e / total;
        }
        Spectrogram {
            magnitudes,
            bin_frequencies: pitches
                .iter()
                .map(|&(p, _)| 440.0 * (2.0f64).powf((p as f64 - 69.0) / 12.0))
                .collect(),
            hop: 0.01,
            frame_energy: vec![total],
        }
    }

    #[test]
    fn single_repeated_note_sets_the_tonic() {
        let spec = spec_with_pitches(&[(69, 1.0)]); // A4
        let key = detect_key(&spec).unwrap();
        assert_eq!(key.tonic, 9);
    }

    #[test]
    fn c_major_scale_detects_c_major() {
        // one octave of C major with a strong tonic
        let spec = spec_with_pitches(&[
            (60, 3.0),
            (62, 1.0),
            (64, 1.5),
            (65, 1.0),
            (67, 2.0),
            (69, 1.0),
            (71, 1.0),
            (72, 1.5),
        ]);
        let key = detect_key(&spec).unwrap();
        assert_eq!(key.tonic, 0);
        assert_eq!(key.mode, KeyMode::Major);
    }

    #[test]
    fn a_natural_minor_scale_detects_a_minor() {
        let spec = spec_with_pitches(&[
            (57, 3.0), // A3
            (59, 1.0),
            (60, 1.5),
            (62, 1.0),
            (64, 2.0),
            (65, 1.0),
            (67, 1.0),
            (69, 1.5),
        ]);
        let key = detect_key(&spec).unwrap();
        assert_eq!(key.tonic, 9);
        assert_eq!(key.mode, KeyMode::Minor);
    }

    #[test]
    fn silence_is_rejected() {
        let spec = Spectrogram {
            magnitudes: Array2::zeros((4, 3)),
            bin_frequencies: vec![100.0, 200.0, 300.0, 400.0],
            hop: 0.01,
            frame_energy: vec![0.0; 3],
        };
        assert!(matches!(detect_key(&spec), Err(AmtError::AllSilent)));
    }

    #[test]
    fn key_index_layout() {
        assert_eq!(Key { tonic: 0, mode: KeyMode::Major }.index(), 0);
        assert_eq!(Key { tonic: 11, mode: KeyMode::Major }.index(), 11);
        assert_eq!(Key { tonic: 0, mode: KeyMode::Minor }.index(), 12);
        assert_eq!(Key { tonic: 9, mode: KeyMode::Minor }.index(), 21);
        assert_eq!(Key { tonic: 9, mode: KeyMode::Minor }.name(), "A minor");
    }
}
