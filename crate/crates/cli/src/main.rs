//! `amt` — offline music transcription pipeline.
//!
//! Subcommands cover the full workflow: `synth` generates the seeded
//! synthetic corpus, `extract-templates` learns the spectral template
//! bank from isolated notes, `train` fits the segmentation and
//! transition models on the train split, `transcribe` runs a named
//! system on audio, and `evaluate` scores transcriptions against
//! reference MIDI.
//!
//! Exit codes: 0 success, 1 input error, 2 internal invariant violation.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "amt", version, about = "PLCA + HMM music transcription toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub(crate) struct ConfigArgs {
    /// JSON pipeline configuration; flags override its fields.
    #[arg(long)]
    pub(crate) config: Option<PathBuf>,
    /// System preset: m1, m2, m3, m4, m4k or m5.
    #[arg(long)]
    pub(crate) system: Option<String>,
    /// Detection threshold on the normalized salience.
    #[arg(long)]
    pub(crate) threshold: Option<f64>,
    /// Minimum note duration in milliseconds.
    #[arg(long = "min-dur")]
    pub(crate) min_dur_ms: Option<f64>,
    /// Maximum stay duration of the duration HMM, frames.
    #[arg(long)]
    pub(crate) order: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub(crate) enum Command {
    /// Generate the deterministic synthetic corpus.
    Synth {
        /// Output corpus directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        sequences: usize,
        /// Maximum simultaneous notes per chord.
        #[arg(long, default_value_t = 3)]
        polyphony: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Sequence length in seconds.
        #[arg(long, default_value_t = 30.0)]
        duration: f64,
    },
    /// Fit one spectral template per isolated note file.
    ExtractTemplates {
        /// Directory of `<pitch>_<mode>.wav` note samples.
        #[arg(long)]
        notes: PathBuf,
        /// Output bank directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train segmentation and transition models on the corpus train split.
    Train {
        /// Corpus manifest.json.
        #[arg(long)]
        corpus: PathBuf,
        /// Template bank directory.
        #[arg(long)]
        bank: PathBuf,
        /// Output model directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Transcribe a WAV file to MIDI.
    Transcribe {
        /// Input audio.
        #[arg(long)]
        input: PathBuf,
        /// Template bank directory.
        #[arg(long)]
        bank: PathBuf,
        /// Trained model directory (needed by m2-m5).
        #[arg(long)]
        models: Option<PathBuf>,
        /// Output directory for MIDI and diagnostics.
        #[arg(long)]
        out: PathBuf,
        /// Also dump the normalized spectrogram as CSV.
        #[arg(long = "dump-spectrogram")]
        dump_spectrogram: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score estimated MIDI against reference MIDI.
    Evaluate {
        /// Directory of estimated .mid files.
        #[arg(long)]
        est: PathBuf,
        /// Directory of reference .mid files with matching stems.
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Onset matching tolerance in milliseconds.
        #[arg(long, default_value_t = 50.0)]
        tolerance_ms: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("AMT_LOG")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version are not errors
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };

    let outcome = std::panic::catch_unwind(|| commands::run(cli.command));
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(_) => {
            eprintln!("error: internal invariant violation");
            ExitCode::from(2)
        }
    }
}
