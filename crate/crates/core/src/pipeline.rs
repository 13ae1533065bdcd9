//! End-to-end pipeline orchestration: configuration, the named system
//! presets, model training from a corpus, and transcription.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::{load_audio, AudioBuffer};
use crate::error::{AmtError, Result};
use crate::eval::DEFAULT_ONSET_TOLERANCE;
use crate::midi::{read_midi, sample_roll, ScoreTrack};
use crate::plca::run_plca;
use crate::postprocess::{
    candidates_from_events, decode_sequence, decoded_to_events, detect_key, generate_states,
    make_candidates, KeyConditionedModel, TransitionModel,
    DEFAULT_ONSET_MERGE_TOL,
};
use crate::segment::{
    path_to_events, threshold_segment, train_duration, train_on_off, viterbi_duration,
    viterbi_on_off, DurationHmm, NoteEvent, OnOffHmm,
};
use crate::spectrogram::{compute_spectrogram, FrontendConfig};
use crate::synth::CorpusManifest;
use crate::templates::TemplateBank;

/// The named system presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemId {
    /// Thresholding only.
    M1,
    /// On/off HMM segmentation.
    M2,
    /// Duration-modeling on/off HMM segmentation.
    M3,
    /// Thresholding + first-order harmonic transitions.
    M4,
    /// Thresholding + key-conditioned first-order transitions.
    M4K,
    /// Thresholding + second-order harmonic transitions.
    M5,
}

impl SystemId {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "m1" => Ok(SystemId::M1),
            "m2" => Ok(SystemId::M2),
            "m3" => Ok(SystemId::M3),
            "m4" => Ok(SystemId::M4),
            "m4k" => Ok(SystemId::M4K),
            "m5" => Ok(SystemId::M5),
            other => Err(AmtError::InvalidConfig(format!("unknown system '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SystemId::M1 => "m1",
            SystemId::M2 => "m2",
            SystemId::M3 => "m3",
            SystemId::M4 => "m4",
            SystemId::M4K => "m4k",
            SystemId::M5 => "m5",
        }
    }

    pub fn all() -> [SystemId; 6] {
        [SystemId::M1, SystemId::M2, SystemId::M3, SystemId::M4, SystemId::M4K, SystemId::M5]
    }

    pub fn segmentation(&self) -> SegmentMethod {
        match self {
            SystemId::M2 => SegmentMethod::OnOffHmm,
            SystemId::M3 => SegmentMethod::DurationHmm,
            _ => SegmentMethod::Threshold,
        }
    }

    pub fn postprocess(&self) -> PostMethod {
        match self {
            SystemId::M4 => PostMethod::Order1,
            SystemId::M4K => PostMethod::Order1Key,
            SystemId::M5 => PostMethod::Order2,
            _ => PostMethod::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentMethod {
    Threshold,
    OnOffHmm,
    DurationHmm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PostMethod {
    None,
    Order1,
    Order1Key,
    Order2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlcaConfig {
    pub n_iter: usize,
    pub tol: f64,
}

impl Default for PlcaConfig {
    fn default() -> Self {
        PlcaConfig { n_iter: 50, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentConfig {
    pub method: SegmentMethod,
    /// Detection threshold on the max-normalized salience.
    pub threshold: f64,
    /// Minimum note duration, seconds.
    pub min_dur: f64,
    /// Maximum modeled stay duration for the duration HMM, frames.
    pub max_order: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            method: SegmentMethod::Threshold,
            threshold: 0.02,
            min_dur: 0.05,
            max_order: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PostConfig {
    pub method: PostMethod,
    /// Candidate onsets within this window merge into one chord, seconds.
    pub onset_merge_tol: f64,
}

impl Default for PostConfig {
    fn default() -> Self {
        PostConfig { method: PostMethod::None, onset_merge_tol: DEFAULT_ONSET_MERGE_TOL }
    }
}

/// Full pipeline configuration; a JSON config file deserializes into
/// this and CLI flags override individual fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub frontend: FrontendConfig,
    pub plca: PlcaConfig,
    pub segment: SegmentConfig,
    pub post: PostConfig,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AmtError::UnreadableFile {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| AmtError::MalformedFile(e.to_string()))
    }

    /// Apply a named system preset to the method fields.
    pub fn with_system(mut self, system: SystemId) -> Self {
        self.segment.method = system.segmentation();
        self.post.method = system.postprocess();
        self
    }
}

/// Trained models required by the HMM-based systems.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    pub onoff: Option<Vec<OnOffHmm>>,
    pub duration: Option<Vec<DurationHmm>>,
    pub order1: Option<TransitionModel>,
    pub order2: Option<TransitionModel>,
    pub key_conditioned: Option<KeyConditionedModel>,
    /// Sequence ids the models were trained on.
    pub train_ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentModelsFile<T> {
    train_ids: Vec<String>,
    per_pitch: Vec<T>,
}

impl ModelSet {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let write_json = |name: &str, value: serde_json::Value| -> Result<()> {
            let text = serde_json::to_string_pretty(&value)
                .map_err(|e| AmtError::InvalidConfig(e.to_string()))?;
            fs::write(dir.join(name), text)?;
            Ok(())
        };
        if let Some(onoff) = &self.onoff {
            let file = SegmentModelsFile { train_ids: self.train_ids.clone(), per_pitch: onoff.clone() };
            write_json("onoff.json", serde_json::to_value(file).unwrap())?;
        }
        if let Some(duration) = &self.duration {
            let file = SegmentModelsFile { train_ids: self.train_ids.clone(), per_pitch: duration.clone() };
            write_json("duration.json", serde_json::to_value(file).unwrap())?;
        }
        if let Some(order1) = &self.order1 {
            order1.save(&dir.join("transitions_order1.json"))?;
        }
        if let Some(order2) = &self.order2 {
            order2.save(&dir.join("transitions_order2.json"))?;
        }
        if let Some(kc) = &self.key_conditioned {
            kc.save(&dir.join("transitions_key.json"))?;
        }
        fs::write(
            dir.join("provenance.json"),
            serde_json::to_string_pretty(&self.train_ids).unwrap(),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut set = ModelSet::default();
        let read_json = |name: &str| -> Result<Option<String>> {
            let path = dir.join(name);
            if path.exists() {
                Ok(Some(fs::read_to_string(&path)?))
            } else {
                Ok(None)
            }
        };
        if let Some(text) = read_json("onoff.json")? {
            let file: SegmentModelsFile<OnOffHmm> =
                serde_json::from_str(&text).map_err(|e| AmtError::MalformedFile(e.to_string()))?;
            set.train_ids = file.train_ids;
            set.onoff = Some(file.per_pitch);
        }
        if let Some(text) = read_json("duration.json")? {
            let file: SegmentModelsFile<DurationHmm> =
                serde_json::from_str(&text).map_err(|e| AmtError::MalformedFile(e.to_string()))?;
            set.train_ids = file.train_ids;
            set.duration = Some(file.per_pitch);
        }
        if dir.join("transitions_order1.json").exists() {
            set.order1 = Some(TransitionModel::load(&dir.join("transitions_order1.json"))?);
        }
        if dir.join("transitions_order2.json").exists() {
            set.order2 = Some(TransitionModel::load(&dir.join("transitions_order2.json"))?);
        }
        if dir.join("transitions_key.json").exists() {
            set.key_conditioned = Some(KeyConditionedModel::load(&dir.join("transitions_key.json"))?);
        }
        if let Some(text) = read_json("provenance.json")? {
            set.train_ids =
                serde_json::from_str(&text).map_err(|e| AmtError::MalformedFile(e.to_string()))?;
        }
        Ok(set)
    }
}

/// Which models to train.
#[derive(Debug, Clone, Copy)]
pub struct TrainSelection {
    pub onoff: bool,
    pub duration: bool,
    pub order1: bool,
    pub order2: bool,
    pub key_conditioned: bool,
}

impl TrainSelection {
    pub fn all() -> Self {
        TrainSelection { onoff: true, duration: true, order1: true, order2: true, key_conditioned: true }
    }

    /// Only what the given system needs.
    pub fn for_system(system: SystemId) -> Self {
        TrainSelection {
            onoff: system == SystemId::M2,
            duration: system == SystemId::M3,
            order1: system == SystemId::M4,
            order2: system == SystemId::M5,
            key_conditioned: system == SystemId::M4K,
        }
    }
}

/// Per-stage timings and counts emitted next to each transcription.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub system: Option<String>,
    pub segmentation: SegmentMethod,
    pub postprocess: PostMethod,
    pub n_frames: usize,
    pub n_bins: usize,
    pub em_iterations: usize,
    pub n_segmented_events: usize,
    pub n_clusters: usize,
    pub n_final_events: usize,
    pub detected_key: Option<String>,
    pub stage_ms: Vec<(String, f64)>,
}

/// A finished transcription.
#[derive(Debug, Clone)]
pub struct Transcription {
    pub events: Vec<NoteEvent>,
    pub diagnostics: Diagnostics,
}

/// Map salience into a bounded pseudo-posterior for HMM emissions:
/// global max-normalization followed by an odds transform centered on
/// the detection threshold, so a value at the threshold is exactly 0.5.
fn emission_scores(salience: &Array2<f64>, threshold: f64) -> (Array2<f64>, Array2<f64>) {
    let max = salience.iter().cloned().fold(0.0f64, f64::max);
    let normalized = if max > 0.0 { salience / max } else { salience.clone() };
    let theta = threshold.max(1e-9);
    let odds = normalized.mapv(|s| s / (s + theta));
    (normalized, odds)
}

/// Run the configured pipeline on one audio buffer.
pub fn transcribe(
    audio: &AudioBuffer,
    bank: &TemplateBank,
    models: &ModelSet,
    config: &PipelineConfig,
    system: Option<SystemId>,
) -> Result<Transcription> {
    let mut stage_ms = Vec::new();
    let mut mark = Instant::now();
    let lap = |label: &str, stage_ms: &mut Vec<(String, f64)>, mark: &mut Instant| {
        stage_ms.push((label.to_string(), mark.elapsed().as_secs_f64() * 1e3));
        *mark = Instant::now();
    };

    let spec = compute_spectrogram(audio, &config.frontend)?;
    lap("frontend", &mut stage_ms, &mut mark);

    let activations = run_plca(&spec, bank, config.plca.n_iter, config.plca.tol)?;
    let em_iterations = activations.log_likelihood.len();
    lap("plca", &mut stage_ms, &mut mark);

    let (normalized, odds) = emission_scores(&activations.salience, config.segment.threshold);
    let pitches = bank.pitches.clone();
    let hop = spec.hop;

    let events = match config.segment.method {
        SegmentMethod::Threshold => {
            threshold_segment(&normalized, &pitches, config.segment.threshold, config.segment.min_dur, hop)
        }
        SegmentMethod::OnOffHmm => {
            let hmms = models.onoff.as_ref().ok_or_else(|| {
                AmtError::InvalidConfig("on/off segmentation requires trained on/off models".into())
            })?;
            if hmms.len() != pitches.len() {
                return Err(AmtError::DimensionMismatch { expected: pitches.len(), got: hmms.len() });
            }
            let mut events = Vec::new();
            for (i, &pitch) in pitches.iter().enumerate() {
                let row: Vec<f64> = odds.row(i).to_vec();
                let path = viterbi_on_off(&row, &hmms[i]);
                events.extend(path_to_events(&path, pitch, hop, config.segment.min_dur));
            }
            events
        }
        SegmentMethod::DurationHmm => {
            let hmms = models.duration.as_ref().ok_or_else(|| {
                AmtError::InvalidConfig("duration segmentation requires trained duration models".into())
            })?;
            if hmms.len() != pitches.len() {
                return Err(AmtError::DimensionMismatch { expected: pitches.len(), got: hmms.len() });
            }
            let mut events = Vec::new();
            for (i, &pitch) in pitches.iter().enumerate() {
                let row: Vec<f64> = odds.row(i).to_vec();
                let path = viterbi_duration(&row, &hmms[i]);
                events.extend(path_to_events(&path, pitch, hop, config.segment.min_dur));
            }
            events
        }
    };
    let n_segmented = events.len();
    lap("segmentation", &mut stage_ms, &mut mark);

    let mut detected_key = None;
    let mut n_clusters = 0;
    let final_events = if config.post.method == PostMethod::None {
        events
    } else {
        let base_model = match config.post.method {
            PostMethod::Order1 => models.order1.as_ref().ok_or_else(|| {
                AmtError::InvalidConfig("first-order post-processing requires a trained model".into())
            })?,
            PostMethod::Order2 => models.order2.as_ref().ok_or_else(|| {
                AmtError::InvalidConfig("second-order post-processing requires a trained model".into())
            })?,
            PostMethod::Order1Key => {
                let kc = models.key_conditioned.as_ref().ok_or_else(|| {
                    AmtError::InvalidConfig("key-conditioned post-processing requires trained models".into())
                })?;
                let key = detect_key(&spec)?;
                detected_key = Some(key.name());
                kc.model(key.index())
            }
            PostMethod::None => unreachable!(),
        };

        let candidates = make_candidates(&normalized, &pitches, hop, &events);
        // the decode works on a copy whose inventory absorbs any
        // mixtures first seen in this sequence
        let mut model = base_model.clone();
        let mut inventory = model.inventory.clone();
        let clusters = generate_states(
            &candidates,
            hop,
            config.segment.min_dur,
            config.post.onset_merge_tol,
            &mut inventory,
        );
        model.inventory = inventory;
        n_clusters = clusters.len();
        let path = decode_sequence(&model, &clusters)?;
        decoded_to_events(&model, &clusters, &path)
    };
    lap("postprocess", &mut stage_ms, &mut mark);

    Ok(Transcription {
        diagnostics: Diagnostics {
            system: system.map(|s| s.name().to_string()),
            segmentation: config.segment.method,
            postprocess: config.post.method,
            n_frames: spec.n_frames(),
            n_bins: spec.n_bins(),
            em_iterations,
            n_segmented_events: n_segmented,
            n_clusters,
            n_final_events: final_events.len(),
            detected_key,
            stage_ms,
        },
        events: final_events,
    })
}

/// Frame count the frontend will produce for a buffer of `n` samples.
fn frame_count(n_samples: usize, sample_rate: u32, hop_s: f64) -> usize {
    let hop = ((hop_s * sample_rate as f64).round() as usize).max(1);
    if n_samples == 0 {
        0
    } else {
        (n_samples - 1) / hop + 1
    }
}

/// Train the selected models from the corpus train split.
///
/// Fails with `SplitLeakage` if the manifest's train and test lists
/// intersect.
pub fn train_models(
    corpus_dir: &Path,
    manifest: &CorpusManifest,
    bank: &TemplateBank,
    config: &PipelineConfig,
    selection: TrainSelection,
) -> Result<ModelSet> {
    let train_set: BTreeSet<&String> = manifest.train.iter().collect();
    let leaked: Vec<&String> = manifest.test.iter().filter(|id| train_set.contains(id)).collect();
    if !leaked.is_empty() {
        return Err(AmtError::SplitLeakage(format!("ids in both splits: {leaked:?}")));
    }
    if manifest.train.is_empty() {
        return Err(AmtError::EmptyTraining);
    }

    let pitch_range = (
        *bank.pitches.first().expect("bank has pitches"),
        *bank.pitches.last().expect("bank has pitches"),
    );
    let hop = config.frontend.hop_s;

    let mut rolls = Vec::new();
    let mut tracks: Vec<(String, ScoreTrack)> = Vec::new();
    for id in &manifest.train {
        let track = read_midi(&manifest.midi_path(corpus_dir, id))?;
        let audio = load_audio(&manifest.wav_path(corpus_dir, id))?;
        let n_frames = frame_count(audio.samples.len(), audio.sample_rate, hop);
        rolls.push(sample_roll(&track, hop, n_frames, pitch_range));
        tracks.push((id.clone(), track));
    }

    let mut set = ModelSet { train_ids: manifest.train.clone(), ..ModelSet::default() };
    if selection.onoff {
        set.onoff = Some(train_on_off(&rolls)?);
    }
    if selection.duration {
        set.duration = Some(train_duration(&rolls, config.segment.max_order)?);
    }

    if selection.order1 || selection.order2 || selection.key_conditioned {
        let mut order1 = TransitionModel::new(1)?;
        let mut order2 = TransitionModel::new(2)?;
        let mut key_models = KeyConditionedModel::new();

        for (id, track) in &tracks {
            let candidates = candidates_from_events(&track.events, hop);
            // shared inventory across the training split
            let mut inventory = order1.inventory.clone();
            let clusters = generate_states(
                &candidates,
                hop,
                config.segment.min_dur,
                config.post.onset_merge_tol,
                &mut inventory,
            );
            let sequence: Vec<usize> = clusters.iter().map(|c| c.state).collect();
            order1.inventory = inventory.clone();
            order2.inventory = inventory.clone();
            order1.add_sequence(&sequence)?;
            order2.add_sequence(&sequence)?;

            if selection.key_conditioned {
                let audio = load_audio(&manifest.wav_path(corpus_dir, id))?;
                let spec = compute_spectrogram(&audio, &config.frontend)?;
                let key = detect_key(&spec)?;
                let model = key_models.model_mut(key.index());
                model.inventory = inventory;
                model.add_sequence(&sequence)?;
            }
        }

        // every key model shares the full inventory so unseen keys can
        // still decode any mixture
        if selection.key_conditioned {
            for m in &mut key_models.models {
                let mut inv = order1.inventory.clone();
                for (set, _) in m.inventory.iter() {
                    inv.intern(set.clone());
                }
                m.inventory = inv;
            }
        }

        if selection.order1 {
            set.order1 = Some(order1);
        }
        if selection.order2 {
            set.order2 = Some(order2);
        }
        if selection.key_conditioned {
            set.key_conditioned = Some(key_models);
        }
    }
    Ok(set)
}

/// Ensure a loaded bank matches the active frontend configuration.
pub fn check_bank_compat(bank_frontend: &FrontendConfig, config: &FrontendConfig) -> Result<()> {
    if bank_frontend != config {
        return Err(AmtError::BankMismatch(format!(
            "bank was extracted with {bank_frontend:?}, pipeline uses {config:?}"
        )));
    }
    Ok(())
}

/// Default onset tolerance re-exported for CLI use.
pub fn default_onset_tolerance() -> f64 {
    DEFAULT_ONSET_TOLERANCE
}
