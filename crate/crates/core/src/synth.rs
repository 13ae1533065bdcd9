//! Deterministic synthetic instrument and corpus generation.
//!
//! Additive synthesis of decaying partials stands in for a real note
//! library, and seeded pseudo-random diatonic sequences provide
//! polyphonic material with learnable harmonic transitions, so the full
//! pipeline can be exercised end to end without external datasets.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{write_wav, AudioBuffer};
use crate::error::{AmtError, Result};
use crate::midi::{write_midi, ScoreTrack};
use crate::segment::NoteEvent;

const N_PARTIALS: usize = 12;
/// Release ramp applied inside the note tail to avoid offset clicks.
const RELEASE_S: f64 = 0.005;

/// Additive instrument with per-pitch partial amplitudes, exponential
/// decay and string-style inharmonicity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthInstrument {
    pub pitch_min: u8,
    pub pitch_max: u8,
    /// Amplitudes of the first 12 partials per pitch, indexed
    /// `pitch - pitch_min`.
    pub partial_amps: Vec<[f64; N_PARTIALS]>,
    /// (label, gain) per playing mode.
    pub mode_gains: Vec<(String, f64)>,
    /// Exponential amplitude decay, 1/s.
    pub decay_rate: f64,
    /// Inharmonicity coefficient B in f_k = f0 k sqrt(1 + B k^2).
    pub inharmonicity: f64,
}

impl SynthInstrument {
    /// Two octaves above middle C with a gently pitch-dependent
    /// spectral tilt.
    pub fn default_piano_like() -> Self {
        let (pitch_min, pitch_max) = (60u8, 84u8);
        let partial_amps = (pitch_min..=pitch_max)
            .map(|p| {
                let tilt = 1.25 + 0.01 * (p - pitch_min) as f64;
                let mut amps = [0.0; N_PARTIALS];
                for (k, a) in amps.iter_mut().enumerate() {
                    *a = 1.0 / ((k + 1) as f64).powf(tilt);
                }
                let total: f64 = amps.iter().sum();
                amps.iter_mut().for_each(|a| *a /= total);
                amps
            })
            .collect();
        SynthInstrument {
            pitch_min,
            pitch_max,
            partial_amps,
            mode_gains: vec![("mf".into(), 0.8)],
            decay_rate: 2.5,
            inharmonicity: 4e-4,
        }
    }

    pub fn pitches(&self) -> Vec<u8> {
        (self.pitch_min..=self.pitch_max).collect()
    }

    pub fn mode_labels(&self) -> Vec<String> {
        self.mode_gains.iter().map(|(label, _)| label.clone()).collect()
    }
}

fn midi_to_hz(pitch: u8) -> f64 {
    440.0 * (2.0f64).powf((pitch as f64 - 69.0) / 12.0)
}

/// Render one note: decaying partials at f0 k sqrt(1 + B k^2) with a
/// short linear release at the tail.
pub fn render_note(
    instr: &SynthInstrument,
    pitch: u8,
    mode: usize,
    duration: f64,
    sample_rate: u32,
) -> Result<AudioBuffer> {
    if pitch < instr.pitch_min || pitch > instr.pitch_max {
        return Err(AmtError::OutOfRange(format!(
            "pitch {pitch} outside instrument range {}..={}",
            instr.pitch_min, instr.pitch_max
        )));
    }
    let gain = instr
        .mode_gains
        .get(mode)
        .ok_or_else(|| AmtError::OutOfRange(format!("mode index {mode}")))?
        .1;
    if !(duration > 0.0) {
        return Err(AmtError::OutOfRange(format!("duration {duration}")));
    }

    let amps = &instr.partial_amps[(pitch - instr.pitch_min) as usize];
    let f0 = midi_to_hz(pitch);
    let nyquist = sample_rate as f64 / 2.0;
    let n = (duration * sample_rate as f64).ceil() as usize;
    let mut samples = vec![0.0f64; n];
    for (k, &a) in amps.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let order = (k + 1) as f64;
        let fk = f0 * order * (1.0 + instr.inharmonicity * order * order).sqrt();
        if fk >= nyquist {
            continue;
        }
        for (i, s) in samples.iter_mut().enumerate() {
            let t = i as f64 / sample_rate as f64;
            *s += gain * a * (-instr.decay_rate * t).exp() * (TAU * fk * t).sin();
        }
    }
    // linear release over the final few milliseconds
    let release = RELEASE_S.min(duration / 2.0);
    for (i, s) in samples.iter_mut().enumerate() {
        let t = i as f64 / sample_rate as f64;
        let remaining = duration - t;
        if remaining < release {
            *s *= (remaining / release).max(0.0);
        }
    }
    Ok(AudioBuffer { samples, sample_rate })
}

/// Render a score by summing rendered notes at their onsets. The output
/// spans the track duration and is rescaled only if it would clip.
pub fn render_sequence(instr: &SynthInstrument, track: &ScoreTrack, sample_rate: u32) -> Result<AudioBuffer> {
    let total = (track.duration() * sample_rate as f64).ceil() as usize;
    let mut samples = vec![0.0f64; total];
    for e in &track.events {
        let note = render_note(instr, e.pitch, 0, e.duration(), sample_rate)?;
        let at = (e.onset * sample_rate as f64).round() as usize;
        for (i, &s) in note.samples.iter().enumerate() {
            if at + i < samples.len() {
                samples[at + i] += s;
            }
        }
    }
    let peak = samples.iter().fold(0.0f64, |m, &s| m.max(s.abs()));
    if peak > 0.999 {
        let scale = 0.999 / peak;
        samples.iter_mut().for_each(|s| *s *= scale);
    }
    Ok(AudioBuffer { samples, sample_rate })
}

/// Corpus generation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_sequences: usize,
    /// Maximum simultaneous notes per chord.
    pub polyphony: usize,
    pub seed: u64,
    pub sample_rate: u32,
    /// Length of each generated sequence, seconds.
    pub sequence_duration: f64,
    /// Length of each isolated template note, seconds.
    pub note_duration: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_sequences: 10,
            polyphony: 3,
            seed: 42,
            sample_rate: 44100,
            sequence_duration: 30.0,
            note_duration: 1.0,
        }
    }
}

/// Corpus directory manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub sample_rate: u32,
    pub polyphony: usize,
    pub train: Vec<String>,
    pub test: Vec<String>,
    /// Ground-truth key per sequence id, e.g. "C major".
    pub keys: BTreeMap<String, String>,
    pub instrument: SynthInstrument,
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AmtError::UnreadableFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| AmtError::MalformedFile(e.to_string()))
    }

    pub fn wav_path(&self, dir: &Path, id: &str) -> PathBuf {
        dir.join("seq").join(format!("{id}.wav"))
    }

    pub fn midi_path(&self, dir: &Path, id: &str) -> PathBuf {
        dir.join("seq").join(format!("{id}.mid"))
    }
}

const MAJOR_SCALE: [u8; 7] = [0, 2, 4, 5, 7, 9, 11];
const MINOR_SCALE: [u8; 7] = [0, 2, 3, 5, 7, 8, 10];

/// Diatonic triad on a scale degree, realized inside the instrument
/// range starting from a base octave.
fn triad(tonic_pc: u8, minor: bool, degree: usize, base_octave: u8, instr: &SynthInstrument) -> Vec<u8> {
    let scale = if minor { MINOR_SCALE } else { MAJOR_SCALE };
    let mut pitches = Vec::with_capacity(3);
    for step in [0usize, 2, 4] {
        let idx = degree + step;
        let pc = scale[idx % 7] as i32 + tonic_pc as i32;
        let octave_lift = (idx / 7) as i32;
        let mut pitch = 12 * (base_octave as i32 + 1) + pc + 12 * octave_lift;
        while pitch > instr.pitch_max as i32 {
            pitch -= 12;
        }
        while pitch < instr.pitch_min as i32 {
            pitch += 12;
        }
        pitches.push(pitch as u8);
    }
    pitches.sort_unstable();
    pitches.dedup();
    pitches
}

/// Weighted random walk over scale degrees favouring root motion by
/// fourths and fifths with a pull back to the tonic.
fn next_degree(rng: &mut ChaCha8Rng, current: usize) -> usize {
    let roll: f64 = rng.random_range(0.0..1.0);
    if roll < 0.3 {
        (current + 3) % 7
    } else if roll < 0.6 {
        (current + 4) % 7
    } else if roll < 0.8 {
        0
    } else {
        rng.random_range(0..7)
    }
}

fn generate_sequence(
    instr: &SynthInstrument,
    cfg: &CorpusConfig,
    rng: &mut ChaCha8Rng,
) -> (ScoreTrack, String) {
    let tonic: u8 = rng.random_range(0..12);
    let minor = rng.random_range(0..2) == 1;
    let key_name = format!(
        "{} {}",
        ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"][tonic as usize],
        if minor { "minor" } else { "major" }
    );

    let mut events = Vec::new();
    let mut t = 0.15;
    let mut degree = 0usize;
    let end = cfg.sequence_duration - 1.0;
    while t < end {
        let chord_size = rng.random_range(1..=cfg.polyphony.max(1));
        let duration: f64 = rng.random_range(0.1..1.5);
        let duration = duration.min(end - t).max(0.1);
        let base_octave: u8 = rng.random_range(3..5);
        let chord = triad(tonic, minor, degree, base_octave, instr);
        for &pitch in chord.iter().take(chord_size) {
            events.push(NoteEvent::new(pitch, t, t + duration));
        }
        let gap: f64 = rng.random_range(0.05..0.35);
        t += duration + gap;
        degree = next_degree(rng, degree);
    }
    (ScoreTrack::new(events), key_name)
}

/// Generate the full corpus: isolated note library, rendered sequences
/// with ground-truth MIDI, and a train/test split manifest.
pub fn make_corpus(instr: &SynthInstrument, cfg: &CorpusConfig, out_dir: &Path) -> Result<CorpusManifest> {
    if cfg.n_sequences < 2 {
        return Err(AmtError::InvalidConfig("n_sequences must be >= 2".into()));
    }
    if cfg.polyphony == 0 {
        return Err(AmtError::InvalidConfig("polyphony must be >= 1".into()));
    }
    if !(cfg.sequence_duration >= 2.0) {
        return Err(AmtError::InvalidConfig("sequence_duration must be >= 2 s".into()));
    }

    let notes_dir = out_dir.join("notes");
    let seq_dir = out_dir.join("seq");
    fs::create_dir_all(&notes_dir)?;
    fs::create_dir_all(&seq_dir)?;

    for pitch in instr.pitches() {
        for (mode, (label, _)) in instr.mode_gains.iter().enumerate() {
            let note = render_note(instr, pitch, mode, cfg.note_duration, cfg.sample_rate)?;
            write_wav(&notes_dir.join(format!("{pitch}_{label}.wav")), &note)?;
        }
    }

    let mut keys = BTreeMap::new();
    let ids: Vec<String> = (0..cfg.n_sequences).map(|i| format!("seq{i:03}")).collect();
    for (i, id) in ids.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let (track, key_name) = generate_sequence(instr, cfg, &mut rng);
        write_midi(&seq_dir.join(format!("{id}.mid")), &track)?;
        let audio = render_sequence(instr, &track, cfg.sample_rate)?;
        write_wav(&seq_dir.join(format!("{id}.wav")), &audio)?;
        keys.insert(id.clone(), key_name);
    }

    // seeded shuffle, then 30% (rounded, at least 1) goes to test
    let mut order: Vec<usize> = (0..cfg.n_sequences).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5_5A5A);
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_test = ((cfg.n_sequences as f64 * 0.3).round() as usize).clamp(1, cfg.n_sequences - 1);
    let mut test: Vec<String> = order[..n_test].iter().map(|&i| ids[i].clone()).collect();
    let mut train: Vec<String> = order[n_test..].iter().map(|&i| ids[i].clone()).collect();
    test.sort();
    train.sort();

    let manifest = CorpusManifest {
        seed: cfg.seed,
        sample_rate: cfg.sample_rate,
        polyphony: cfg.polyphony,
        train,
        test,
        keys,
        instrument: instr.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| AmtError::InvalidConfig(e.to_string()))?;
    fs::write(out_dir.join("manifest.json"), json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::midi::read_midi;
    use crate::spectrogram::{compute_spectrogram, FrontendConfig};

    fn single_partial_instrument() -> SynthInstrument {
        let mut instr = SynthInstrument::default_piano_like();
        for amps in &mut instr.partial_amps {
            *amps = [0.0; N_PARTIALS];
            amps[0] = 1.0;
        }
        instr.inharmonicity = 0.0;
        instr.mode_gains = vec![("mf".into(), 0.8), ("ff".into(), 1.0)];
        instr
    }

    #[test]
    fn single_partial_note_is_a_decaying_sine() {
        let instr = single_partial_instrument();
        let note = render_note(&instr, 69, 0, 0.5, 44100).unwrap();
        let sr = 44100.0;
        let release = RELEASE_S.min(0.25);
        for (i, &s) in note.samples.iter().enumerate() {
            let t = i as f64 / sr;
            let mut expected = 0.8 * (-instr.decay_rate * t).exp() * (TAU * 440.0 * t).sin();
            let remaining = 0.5 - t;
            if remaining < release {
                expected *= (remaining / release).max(0.0);
            }
            assert!((s - expected).abs() < 1e-12, "sample {i}");
        }
    }

    #[test]
    fn mode_gain_cancels_in_normalized_spectrogram() {
        let instr = single_partial_instrument();
        let soft = render_note(&instr, 69, 0, 0.4, 44100).unwrap();
        let loud = render_note(&instr, 69, 1, 0.4, 44100).unwrap();
        let cfg = FrontendConfig::default();
        let a = compute_spectrogram(&soft, &cfg).unwrap();
        let b = compute_spectrogram(&loud, &cfg).unwrap();
        for (x, y) in a.magnitudes.iter().zip(b.magnitudes.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn inharmonicity_shifts_the_second_partial_up() {
        let mut instr = single_partial_instrument();
        for amps in &mut instr.partial_amps {
            amps[1] = 1.0; // partials 1 and 2
        }
        let mut locate_second_partial = |b: f64| {
            instr.inharmonicity = b;
            let note = render_note(&instr, 69, 0, 0.6, 44100).unwrap();
            let cfg = FrontendConfig::default();
            let spec = compute_spectrogram(&note, &cfg).unwrap();
            // search around the nominal 880 Hz second partial
            let lo = spec.bin_frequencies.iter().position(|&f| f > 700.0).unwrap();
            let hi = spec.bin_frequencies.iter().position(|&f| f > 1100.0).unwrap();
            let mean: Vec<f64> = (lo..hi).map(|k| spec.magnitudes.row(k).sum()).collect();
            lo + mean
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        let flat = locate_second_partial(0.0);
        let stretched = locate_second_partial(0.01);
        assert!(stretched > flat, "expected {stretched} > {flat}");
    }

    #[test]
    fn out_of_range_pitch_is_rejected() {
        let instr = SynthInstrument::default_piano_like();
        assert!(matches!(
            render_note(&instr, 21, 0, 0.5, 44100),
            Err(AmtError::OutOfRange(_))
        ));
    }

    #[test]
    fn sequence_of_one_note_equals_the_shifted_note() {
        let instr = SynthInstrument::default_piano_like();
        let track = ScoreTrack::new(vec![NoteEvent::new(64, 0.5, 1.1)]);
        let seq = render_sequence(&instr, &track, 44100).unwrap();
        let note = render_note(&instr, 64, 0, track.events[0].duration(), 44100).unwrap();
        let at = (0.5 * 44100.0) as usize;
        for i in 0..at {
            assert_eq!(seq.samples[i], 0.0);
        }
        for (i, &s) in note.samples.iter().enumerate() {
            if at + i < seq.samples.len() {
                assert_eq!(seq.samples[at + i], s);
            }
        }
    }

    #[test]
    fn empty_track_renders_empty_silence() {
        let instr = SynthInstrument::default_piano_like();
        let seq = render_sequence(&instr, &ScoreTrack::new(vec![]), 44100).unwrap();
        assert!(seq.samples.is_empty());
    }

    #[test]
    fn disjoint_notes_do_not_interact() {
        let instr = SynthInstrument::default_piano_like();
        let track = ScoreTrack::new(vec![
            NoteEvent::new(60, 0.0, 0.3),
            NoteEvent::new(67, 1.0, 1.3),
        ]);
        let both = render_sequence(&instr, &track, 44100).unwrap();
        let first = render_sequence(&instr, &ScoreTrack::new(vec![NoteEvent::new(60, 0.0, 0.3)]), 44100).unwrap();
        for (i, &s) in first.samples.iter().enumerate() {
            assert_eq!(both.samples[i], s);
        }
    }

    #[test]
    fn corpus_is_deterministic_and_split_correctly() {
        let instr = SynthInstrument::default_piano_like();
        let cfg = CorpusConfig {
            n_sequences: 10,
            sequence_duration: 2.0,
            note_duration: 0.2,
            ..CorpusConfig::default()
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let ma = make_corpus(&instr, &cfg, dir_a.path()).unwrap();
        let mb = make_corpus(&instr, &cfg, dir_b.path()).unwrap();

        assert_eq!(ma.train.len(), 7);
        assert_eq!(ma.test.len(), 3);
        assert_eq!(ma.train, mb.train);

        // byte-identical output across runs
        for sub in ["seq", "notes"] {
            let mut names: Vec<String> = fs::read_dir(dir_a.path().join(sub))
                .unwrap()
                .map(|e| e.unwrap().file_name().into_string().unwrap())
                .collect();
            names.sort();
            assert!(!names.is_empty());
            for name in names {
                let a = fs::read(dir_a.path().join(sub).join(&name)).unwrap();
                let b = fs::read(dir_b.path().join(sub).join(&name)).unwrap();
                assert_eq!(a, b, "{sub}/{name} differs between runs");
            }
        }
    }

    #[test]
    fn polyphony_one_never_overlaps() {
        let instr = SynthInstrument::default_piano_like();
        let cfg = CorpusConfig {
            n_sequences: 4,
            polyphony: 1,
            sequence_duration: 3.0,
            note_duration: 0.2,
            ..CorpusConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let manifest = make_corpus(&instr, &cfg, dir.path()).unwrap();
        for id in manifest.train.iter().chain(&manifest.test) {
            let track = read_midi(&manifest.midi_path(dir.path(), id)).unwrap();
            let mut sorted = track.events.clone();
            sorted.sort_by(|a, b| a.onset.partial_cmp(&b.onset).unwrap());
            for w in sorted.windows(2) {
                assert!(w[1].onset >= w[0].offset - 1e-9, "overlap in {id}");
            }
        }
    }

    #[test]
    fn different_seeds_differ() {
        let instr = SynthInstrument::default_piano_like();
        let cfg_a = CorpusConfig { n_sequences: 2, sequence_duration: 2.0, note_duration: 0.2, ..CorpusConfig::default() };
        let cfg_b = CorpusConfig { seed: 43, ..cfg_a.clone() };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        make_corpus(&instr, &cfg_a, dir_a.path()).unwrap();
        make_corpus(&instr, &cfg_b, dir_b.path()).unwrap();
        let a = fs::read(dir_a.path().join("seq/seq000.mid")).unwrap();
        let b = fs::read(dir_b.path().join("seq/seq000.mid")).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn invalid_configs_rejected() {
        let instr = SynthInstrument::default_piano_like();
        let dir = tempfile::tempdir().unwrap();
        let bad_n = CorpusConfig { n_sequences: 1, ..CorpusConfig::default() };
        assert!(matches!(make_corpus(&instr, &bad_n, dir.path()), Err(AmtError::InvalidConfig(_))));
        let bad_poly = CorpusConfig { polyphony: 0, ..CorpusConfig::default() };
        assert!(matches!(make_corpus(&instr, &bad_poly, dir.path()), Err(AmtError::InvalidConfig(_))));
    }

    #[test]
    fn roll_round_trip_reproduces_events_within_one_hop() {
        use crate::midi::sample_roll;
        let instr = SynthInstrument::default_piano_like();
        let cfg = CorpusConfig { n_sequences: 3, sequence_duration: 4.0, note_duration: 0.2, ..CorpusConfig::default() };
        let dir = tempfile::tempdir().unwrap();
        let manifest = make_corpus(&instr, &cfg, dir.path()).unwrap();
        let hop = 0.01;
        for id in manifest.train.iter().chain(&manifest.test) {
            let track = read_midi(&manifest.midi_path(dir.path(), id)).unwrap();
            let n_frames = (track.duration() / hop).ceil() as usize + 2;
            let roll = sample_roll(&track, hop, n_frames, (instr.pitch_min, instr.pitch_max));
            // every event must reappear as a run within one hop
            for e in &track.events {
                let row = (e.pitch - instr.pitch_min) as usize;
                let found = (0..n_frames).any(|t| {
                    roll[(row, t)] == 1 && ((t as f64 * hop) - e.onset).abs() <= hop + 1e-9
                });
                assert!(found, "event {e:?} lost in roll for {id}");
            }
        }
    }
}
