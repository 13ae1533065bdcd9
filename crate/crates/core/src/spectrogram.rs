//! Log-frequency magnitude spectrogram frontend.
//!
//! STFT with a Hann window followed by triangular binning onto
//! geometrically spaced frequency bins. Each frame column is normalized
//! to sum 1; the pre-normalization column sum is kept as the frame
//! energy so downstream factorization can recover absolute salience.

use std::io::Write;

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{AmtError, Result};

/// Time-frequency analysis parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontendConfig {
    /// Geometric bin density. Must be >= 12.
    pub bins_per_octave: usize,
    /// Center frequency of the lowest bin, Hz.
    pub fmin_hz: f64,
    /// Number of octaves above `fmin_hz` covered by the filterbank.
    pub octaves: usize,
    /// Analysis hop, seconds.
    pub hop_s: f64,
    /// Hann window length, samples.
    pub window_len: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            bins_per_octave: 60,
            fmin_hz: 27.5,
            octaves: 7,
            hop_s: 0.010,
            window_len: 4096,
        }
    }
}

impl FrontendConfig {
    pub fn n_bins(&self) -> usize {
        self.bins_per_octave * self.octaves
    }

    pub fn fmax_hz(&self) -> f64 {
        self.fmin_hz * (2.0f64).powi(self.octaves as i32)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if self.bins_per_octave < 12 {
            return Err(AmtError::InvalidConfig(format!(
                "bins_per_octave must be >= 12, got {}",
                self.bins_per_octave
            )));
        }
        if self.octaves == 0 {
            return Err(AmtError::InvalidConfig("octaves must be >= 1".into()));
        }
        if !(self.fmin_hz > 0.0) {
            return Err(AmtError::InvalidConfig("fmin_hz must be positive".into()));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if self.fmax_hz() > nyquist {
            return Err(AmtError::InvalidConfig(format!(
                "fmax {:.1} Hz exceeds Nyquist {:.1} Hz",
                self.fmax_hz(),
                nyquist
            )));
        }
        if !(self.hop_s > 0.0) {
            return Err(AmtError::InvalidConfig("hop_s must be positive".into()));
        }
        if self.window_len < 8 {
            return Err(AmtError::InvalidConfig("window_len must be >= 8".into()));
        }
        Ok(())
    }

    /// Center frequencies of the log-frequency bins.
    pub fn bin_frequencies(&self) -> Vec<f64> {
        (0..self.n_bins())
            .map(|k| self.fmin_hz * (2.0f64).powf(k as f64 / self.bins_per_octave as f64))
            .collect()
    }
}

/// Normalized log-frequency magnitude spectrogram.
///
/// `magnitudes` is bins x frames; every column of a non-silent frame sums
/// to 1, silent frames stay all-zero. `frame_energy` holds the column
/// sums before normalization.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub magnitudes: Array2<f64>,
    pub bin_frequencies: Vec<f64>,
    pub hop: f64,
    pub frame_energy: Vec<f64>,
}

impl Spectrogram {
    pub fn n_bins(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.magnitudes.ncols()
    }

    pub fn is_silent(&self) -> bool {
        self.frame_energy.iter().all(|&e| e == 0.0)
    }

    /// Dump as CSV: header line with hop and bin frequencies, then one
    /// row per bin with one column per frame.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "hop_s={:?};bins_hz=", self.hop)?;
        for (k, f) in self.bin_frequencies.iter().enumerate() {
            if k > 0 {
                write!(w, "|")?;
            }
            write!(w, "{f:?}")?;
        }
        writeln!(w)?;
        for row in self.magnitudes.rows() {
            let mut first = true;
            for v in row {
                if !first {
                    write!(w, ",")?;
                }
                write!(w, "{v:?}")?;
                first = false;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Triangular filters sampled at FFT bin frequencies.
struct FilterBank {
    /// Per log bin: index of the first FFT bin touched and its weights.
    filters: Vec<(usize, Vec<f64>)>,
}

fn build_filterbank(cfg: &FrontendConfig, sample_rate: u32) -> FilterBank {
    let centers = cfg.bin_frequencies();
    let ratio = (2.0f64).powf(1.0 / cfg.bins_per_octave as f64);
    let n_fft_bins = cfg.window_len / 2 + 1;
    let df = sample_rate as f64 / cfg.window_len as f64;

    let mut filters = Vec::with_capacity(centers.len());
    for (k, &center) in centers.iter().enumerate() {
        let lower = if k > 0 { centers[k - 1] } else { center / ratio };
        let upper = if k + 1 < centers.len() { centers[k + 1] } else { center * ratio };

        let j_lo = (lower / df).ceil().max(0.0) as usize;
        let j_hi = ((upper / df).floor() as usize).min(n_fft_bins - 1);
        let mut weights = Vec::new();
        let mut start = j_lo;
        if j_lo <= j_hi {
            for j in j_lo..=j_hi {
                let f = j as f64 * df;
                let w = if f <= center {
                    if center > lower { (f - lower) / (center - lower) } else { 1.0 }
                } else if upper > center {
                    (upper - f) / (upper - center)
                } else {
                    1.0
                };
                weights.push(w.max(0.0));
            }
        }
        if weights.iter().all(|&w| w == 0.0) {
            // Triangle narrower than the FFT grid: fall back to the
            // nearest FFT bin so no log bin is left dead.
            start = ((center / df).round() as usize).min(n_fft_bins - 1);
            weights = vec![1.0];
        }
        filters.push((start, weights));
    }
    FilterBank { filters }
}

/// Compute the normalized log-frequency spectrogram of a mono buffer.
pub fn compute_spectrogram(audio: &AudioBuffer, cfg: &FrontendConfig) -> Result<Spectrogram> {
    cfg.validate(audio.sample_rate)?;
    if audio.is_empty() {
        return Err(AmtError::EmptyAudio);
    }

    let n = cfg.window_len;
    let hop = (cfg.hop_s * audio.sample_rate as f64).round() as usize;
    let hop = hop.max(1);
    let n_frames = (audio.samples.len() - 1) / hop + 1;
    let n_bins = cfg.n_bins();
    let bank = build_filterbank(cfg, audio.sample_rate);

    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut fft_mags = vec![0.0f64; n / 2 + 1];

    let mut magnitudes = Array2::<f64>::zeros((n_bins, n_frames));
    let mut frame_energy = vec![0.0f64; n_frames];

    let half = (n / 2) as isize;
    for t in 0..n_frames {
        let center = (t * hop) as isize;
        for (i, slot) in buf.iter_mut().enumerate() {
            let s = center - half + i as isize;
            let x = if s >= 0 && (s as usize) < audio.samples.len() {
                audio.samples[s as usize] * window[i]
            } else {
                0.0
            };
            *slot = Complex::new(x, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (j, m) in fft_mags.iter_mut().enumerate() {
            *m = buf[j].norm();
        }

        let mut col = magnitudes.column_mut(t);
        let mut energy = 0.0;
        for (k, (start, weights)) in bank.filters.iter().enumerate() {
            let mut acc = 0.0;
            for (off, &w) in weights.iter().enumerate() {
                acc += w * fft_mags[start + off];
            }
            col[k] = acc;
            energy += acc;
        }
        frame_energy[t] = energy;
        if energy > 0.0 {
            col.mapv_inplace(|v| v / energy);
        }
    }

    Ok(Spectrogram {
        magnitudes,
        bin_frequencies: cfg.bin_frequencies(),
        hop: cfg.hop_s,
        frame_energy,
    })
}
