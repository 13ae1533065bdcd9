//! Per-pitch, per-mode spectral template bank and its on-disk layout.
//!
//! A bank directory holds one CSV per (pitch, mode) column plus a JSON
//! manifest recording pitches, modes and the frontend parameters the
//! templates were extracted with. A bank is only valid against a
//! matching frontend configuration.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{AmtError, Result};
use crate::spectrogram::FrontendConfig;

/// Fixed spectral templates P(f|i,m), one column per (pitch, mode).
#[derive(Debug, Clone)]
pub struct TemplateBank {
    /// (bin, pitch index, mode index), each column summing to 1.
    pub templates: Array3<f64>,
    /// MIDI note numbers, strictly increasing.
    pub pitches: Vec<u8>,
    /// Playing-mode labels (note dynamics).
    pub modes: Vec<String>,
}

impl TemplateBank {
    pub fn new(templates: Array3<f64>, pitches: Vec<u8>, modes: Vec<String>) -> Result<Self> {
        let bank = TemplateBank { templates, pitches, modes };
        bank.validate()?;
        Ok(bank)
    }

    pub fn n_bins(&self) -> usize {
        self.templates.shape()[0]
    }

    pub fn n_pitches(&self) -> usize {
        self.pitches.len()
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.templates.shape();
        if shape[1] != self.pitches.len() || shape[2] != self.modes.len() {
            return Err(AmtError::DimensionMismatch {
                expected: self.pitches.len() * self.modes.len(),
                got: shape[1] * shape[2],
            });
        }
        if !self.pitches.windows(2).all(|w| w[0] < w[1]) {
            return Err(AmtError::InvalidConfig("bank pitches must be strictly increasing".into()));
        }
        for i in 0..shape[1] {
            for m in 0..shape[2] {
                let col = self.templates.slice(ndarray::s![.., i, m]);
                let sum: f64 = col.sum();
                if col.iter().any(|&v| v < 0.0 || !v.is_finite()) {
                    return Err(AmtError::InvalidConfig(format!(
                        "template ({}, {}) has negative or non-finite entries",
                        self.pitches[i], self.modes[m]
                    )));
                }
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(AmtError::InvalidConfig(format!(
                        "template ({}, {}) sums to {sum}, expected 1",
                        self.pitches[i], self.modes[m]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Assemble a bank from per-file template columns keyed by
    /// (pitch, mode label). Every pitch must provide every mode.
    pub fn from_columns(n_bins: usize, columns: &[(u8, String, Vec<f64>)]) -> Result<Self> {
        if columns.is_empty() {
            return Err(AmtError::EmptyLibrary);
        }
        let mut pitches: Vec<u8> = columns.iter().map(|(p, _, _)| *p).collect();
        pitches.sort_unstable();
        pitches.dedup();
        let mut modes: Vec<String> = columns.iter().map(|(_, m, _)| m.clone()).collect();
        modes.sort();
        modes.dedup();

        let mut templates = Array3::zeros((n_bins, pitches.len(), modes.len()));
        let mut seen = vec![false; pitches.len() * modes.len()];
        for (pitch, mode, column) in columns {
            if column.len() != n_bins {
                return Err(AmtError::DimensionMismatch { expected: n_bins, got: column.len() });
            }
            let i = pitches.binary_search(pitch).expect("pitch present");
            let m = modes.iter().position(|x| x == mode).expect("mode present");
            for (k, &v) in column.iter().enumerate() {
                templates[(k, i, m)] = v;
            }
            seen[i * modes.len() + m] = true;
        }
        if let Some(missing) = seen.iter().position(|&s| !s) {
            let (i, m) = (missing / modes.len(), missing % modes.len());
            return Err(AmtError::InvalidConfig(format!(
                "note library is missing pitch {} mode '{}'",
                pitches[i], modes[m]
            )));
        }
        TemplateBank::new(templates, pitches, modes)
    }

    /// Flatten to a bins x (pitches*modes) matrix; column im = i * M + m.
    pub fn to_matrix(&self) -> Array2<f64> {
        let (f, i, m) = (self.n_bins(), self.n_pitches(), self.n_modes());
        let mut w = Array2::zeros((f, i * m));
        for pi in 0..i {
            for mi in 0..m {
                let mut col = w.column_mut(pi * m + mi);
                col.assign(&self.templates.slice(ndarray::s![.., pi, mi]));
            }
        }
        w
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BankManifest {
    pitches: Vec<u8>,
    modes: Vec<String>,
    frontend: FrontendConfig,
}

/// Persist a bank as a directory of CSV columns plus `manifest.json`.
pub fn save_bank(dir: &Path, bank: &TemplateBank, frontend: &FrontendConfig, bin_hz: &[f64]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = BankManifest {
        pitches: bank.pitches.clone(),
        modes: bank.modes.clone(),
        frontend: frontend.clone(),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| AmtError::InvalidConfig(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json)?;

    for (i, &pitch) in bank.pitches.iter().enumerate() {
        for (m, mode) in bank.modes.iter().enumerate() {
            let mut out = String::from("bin_hz,weight\n");
            let col = bank.templates.slice(ndarray::s![.., i, m]);
            for (k, v) in col.iter().enumerate() {
                let f = bin_hz.get(k).copied().unwrap_or(0.0);
                out.push_str(&format!("{f:?},{v:?}\n"));
            }
            let mut file = fs::File::create(dir.join(format!("{pitch}_{mode}.csv")))?;
            file.write_all(out.as_bytes())?;
        }
    }
    Ok(())
}

/// Load a bank directory back; returns the bank and the frontend
/// configuration it was extracted with.
pub fn load_bank(dir: &Path) -> Result<(TemplateBank, FrontendConfig)> {
    let manifest_path = dir.join("manifest.json");
    let json = fs::read_to_string(&manifest_path).map_err(|e| AmtError::UnreadableFile {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    let manifest: BankManifest =
        serde_json::from_str(&json).map_err(|e| AmtError::MalformedFile(e.to_string()))?;

    let n_bins = manifest.frontend.n_bins();
    let mut templates = Array3::zeros((n_bins, manifest.pitches.len(), manifest.modes.len()));
    for (i, &pitch) in manifest.pitches.iter().enumerate() {
        for (m, mode) in manifest.modes.iter().enumerate() {
            let path = dir.join(format!("{pitch}_{mode}.csv"));
            let text = fs::read_to_string(&path).map_err(|e| AmtError::UnreadableFile {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            for (k, line) in text.lines().skip(1).enumerate() {
                if k >= n_bins {
                    return Err(AmtError::MalformedFile(format!("{}: too many rows", path.display())));
                }
                let value = line
                    .split(',')
                    .nth(1)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| AmtError::MalformedFile(format!("{}: bad row {k}", path.display())))?;
                templates[(k, i, m)] = value;
            }
        }
    }
    let bank = TemplateBank::new(templates, manifest.pitches, manifest.modes)?;
    Ok((bank, manifest.frontend))
}
