//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};

use amt_core::audio::load_audio;
use amt_core::eval::{evaluate_sequences, format_table, match_notes};
use amt_core::midi::{read_midi, write_midi, ScoreTrack};
use amt_core::pipeline::{
    check_bank_compat, train_models, transcribe, ModelSet, PipelineConfig, SystemId,
    TrainSelection,
};
use amt_core::plca::extract_template;
use amt_core::spectrogram::compute_spectrogram;
use amt_core::synth::{make_corpus, CorpusConfig, CorpusManifest, SynthInstrument};
use amt_core::templates::{load_bank, save_bank, TemplateBank};

use crate::{Command, ConfigArgs};

impl ConfigArgs {
    fn resolve(&self) -> Result<(PipelineConfig, Option<SystemId>)> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => PipelineConfig::default(),
        };
        let system = match &self.system {
            Some(name) => Some(SystemId::parse(name)?),
            None => None,
        };
        if let Some(system) = system {
            config = config.with_system(system);
        }
        if let Some(threshold) = self.threshold {
            config.segment.threshold = threshold;
        }
        if let Some(ms) = self.min_dur_ms {
            config.segment.min_dur = ms / 1000.0;
        }
        if let Some(order) = self.order {
            config.segment.max_order = order;
        }
        Ok((config, system))
    }
}

pub(crate) fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { out, sequences, polyphony, seed, duration } => {
            let instr = SynthInstrument::default_piano_like();
            let cfg = CorpusConfig {
                n_sequences: sequences,
                polyphony,
                seed,
                sequence_duration: duration,
                ..CorpusConfig::default()
            };
            let manifest = make_corpus(&instr, &cfg, &out)?;
            println!(
                "corpus at {}: {} train / {} test sequences, seed {}",
                out.display(),
                manifest.train.len(),
                manifest.test.len(),
                seed
            );
            Ok(())
        }
        Command::ExtractTemplates { notes, out, config } => {
            let (config, _) = config.resolve()?;
            extract_templates(&notes, &out, &config)
        }
        Command::Train { corpus, bank, out, config } => {
            let (config, system) = config.resolve()?;
            let manifest = CorpusManifest::load(&corpus)?;
            let corpus_dir = corpus.parent().unwrap_or(Path::new("."));
            let (bank, bank_frontend) = load_bank(&bank)?;
            check_bank_compat(&bank_frontend, &config.frontend)?;
            let selection = match system {
                Some(system) => TrainSelection::for_system(system),
                None => TrainSelection::all(),
            };
            let models = train_models(corpus_dir, &manifest, &bank, &config, selection)?;
            models.save(&out)?;
            println!("models written to {} (trained on {:?})", out.display(), models.train_ids);
            Ok(())
        }
        Command::Transcribe { input, bank, models, out, dump_spectrogram, config } => {
            let (config, system) = config.resolve()?;
            let (bank, bank_frontend) = load_bank(&bank)?;
            check_bank_compat(&bank_frontend, &config.frontend)?;
            let models = match &models {
                Some(dir) => ModelSet::load(dir)?,
                None => ModelSet::default(),
            };
            let audio = load_audio(&input)?;

            if let Some(csv_path) = &dump_spectrogram {
                let spec = compute_spectrogram(&audio, &config.frontend)?;
                let mut file = fs::File::create(csv_path)?;
                spec.write_csv(&mut file)?;
            }

            let result = transcribe(&audio, &bank, &models, &config, system)?;

            fs::create_dir_all(&out)?;
            let stem = input
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| anyhow!("input path has no stem"))?;
            let midi_path = out.join(format!("{stem}.mid"));
            write_midi(&midi_path, &ScoreTrack::new(result.events.clone()))?;
            let diag_path = out.join(format!("{stem}.diagnostics.json"));
            fs::write(&diag_path, serde_json::to_string_pretty(&result.diagnostics)?)?;
            println!(
                "{} -> {} ({} notes)",
                input.display(),
                midi_path.display(),
                result.events.len()
            );
            Ok(())
        }
        Command::Evaluate { est, reference, out, tolerance_ms } => {
            evaluate_dirs(&est, &reference, out.as_deref(), tolerance_ms / 1000.0)
        }
    }
}

fn extract_templates(notes_dir: &Path, out: &Path, config: &PipelineConfig) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(notes_dir)
        .with_context(|| format!("reading {}", notes_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "wav").unwrap_or(false))
        .collect();
    entries.sort();
    if entries.is_empty() {
        bail!(amt_core::AmtError::EmptyLibrary);
    }

    // filenames follow <pitch>_<mode>.wav
    let mut parsed: Vec<(u8, String, PathBuf)> = Vec::new();
    for path in entries {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let (pitch_str, mode) = stem
            .split_once('_')
            .ok_or_else(|| anyhow!("{}: expected <pitch>_<mode>.wav", path.display()))?;
        let pitch: u8 = pitch_str
            .parse()
            .with_context(|| format!("{}: bad pitch '{pitch_str}'", path.display()))?;
        parsed.push((pitch, mode.to_string(), path));
    }

    let mut columns = Vec::with_capacity(parsed.len());
    for (pitch, mode, path) in &parsed {
        let audio = load_audio(path).with_context(|| path.display().to_string())?;
        let spec = compute_spectrogram(&audio, &config.frontend)
            .with_context(|| path.display().to_string())?;
        let template = extract_template(&spec, 30).with_context(|| path.display().to_string())?;
        columns.push((*pitch, mode.clone(), template.to_vec()));
    }
    let bank = TemplateBank::from_columns(config.frontend.n_bins(), &columns)?;
    let bin_hz = config.frontend.bin_frequencies();
    save_bank(out, &bank, &config.frontend, &bin_hz)?;
    println!(
        "bank with {} pitches x {} modes written to {}",
        bank.n_pitches(),
        bank.n_modes(),
        out.display()
    );
    Ok(())
}

fn evaluate_dirs(est_dir: &Path, ref_dir: &Path, out: Option<&Path>, tol: f64) -> Result<()> {
    let mut ref_files: Vec<PathBuf> = fs::read_dir(ref_dir)
        .with_context(|| format!("reading {}", ref_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "mid").unwrap_or(false))
        .collect();
    ref_files.sort();

    // estimated files without a reference are an input error
    for est in fs::read_dir(est_dir)? .filter_map(|e| e.ok()) {
        let path = est.path();
        if path.extension().map(|x| x == "mid").unwrap_or(false) {
            let stem = path.file_stem().unwrap().to_string_lossy().to_string();
            if !ref_dir.join(format!("{stem}.mid")).exists() {
                bail!(amt_core::AmtError::MissingPair(stem));
            }
        }
    }

    let mut rows = Vec::new();
    for ref_path in &ref_files {
        let stem = ref_path.file_stem().unwrap().to_string_lossy().to_string();
        let reference = read_midi(ref_path)?.events;
        let est_path = est_dir.join(format!("{stem}.mid"));
        let estimated = if est_path.exists() { read_midi(&est_path)?.events } else { Vec::new() };
        rows.push((stem, match_notes(&estimated, &reference, tol)));
    }
    let report = evaluate_sequences(rows);

    let mut table_rows = vec![("pooled".to_string(), report.pooled)];
    table_rows.push(("macro-avg".to_string(), report.macro_avg));
    for seq in &report.per_sequence {
        table_rows.push((format!("  {}", seq.id), seq.metrics));
    }
    print!("{}", format_table(&table_rows));

    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
        println!("report written to {}", path.display());
    }
    Ok(())
}
