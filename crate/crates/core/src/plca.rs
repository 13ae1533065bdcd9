//! Spectrogram factorization with fixed spectral templates.
//!
//! The normalized spectrogram is modeled per frame as a mixture of
//! template columns: P(f,t) = P(t) sum_{i,m} P(f|i,m) P(m|i,t) P(i|t).
//! Templates stay fixed; pitch and mode activations are estimated with
//! multiplicative EM updates. Template extraction fits the
//! single-component version of the same model to an isolated note.

use ndarray::{Array1, Array2, Array3, Axis};

use crate::error::{AmtError, Result};
use crate::spectrogram::Spectrogram;
use crate::templates::TemplateBank;

/// Distribution floor applied before renormalization each iteration.
const PROB_FLOOR: f64 = 1e-12;

/// Pitch and mode activations estimated by EM.
#[derive(Debug, Clone)]
pub struct ActivationTensor {
    /// P(i|t), pitches x frames. Columns of non-silent frames sum to 1.
    pub pitch_activation: Array2<f64>,
    /// P(m|i,t), modes x pitches x frames.
    pub mode_activation: Array3<f64>,
    /// P(t), copied from the spectrogram.
    pub frame_energy: Vec<f64>,
    /// P(i,t) = P(i|t) * P(t); the quantity thresholded downstream.
    pub salience: Array2<f64>,
    /// Total data log-likelihood after each EM iteration.
    pub log_likelihood: Vec<f64>,
}

/// Fit a single spectral component to an isolated note sample.
///
/// With one component the posterior over components is identically 1,
/// so the EM update is independent of the current estimate and the fit
/// lands on the energy-weighted marginal over frames after one step;
/// `n_iter` only caps the (immediately converging) update loop.
pub fn extract_template(note_sample: &Spectrogram, n_iter: usize) -> Result<Array1<f64>> {
    if note_sample.is_silent() {
        return Err(AmtError::AllSilent);
    }
    let mut template = Array1::from_elem(note_sample.n_bins(), 1.0 / note_sample.n_bins() as f64);
    for _ in 0..n_iter.max(1) {
        let mut next = Array1::<f64>::zeros(note_sample.n_bins());
        for (t, &energy) in note_sample.frame_energy.iter().enumerate() {
            if energy > 0.0 {
                next.scaled_add(energy, &note_sample.magnitudes.column(t));
            }
        }
        let total = next.sum();
        next.mapv_inplace(|v| v / total);
        let moved: f64 = next.iter().zip(template.iter()).map(|(a, b)| (a - b).abs()).sum();
        template = next;
        if moved < 1e-15 {
            break;
        }
    }
    Ok(template)
}

/// Estimate activations for a spectrogram against a fixed bank.
///
/// Stops after `n_iter` iterations or when the total log-likelihood
/// improves by less than `tol` relative to its magnitude. Zero-energy
/// frames are skipped; their activations are left at zero.
pub fn run_plca(
    spec: &Spectrogram,
    bank: &TemplateBank,
    n_iter: usize,
    tol: f64,
) -> Result<ActivationTensor> {
    if spec.n_bins() != bank.n_bins() {
        return Err(AmtError::DimensionMismatch {
            expected: bank.n_bins(),
            got: spec.n_bins(),
        });
    }
    if n_iter == 0 {
        return Err(AmtError::InvalidConfig("n_iter must be >= 1".into()));
    }

    let n_pitches = bank.n_pitches();
    let n_modes = bank.n_modes();
    let n_comp = n_pitches * n_modes;
    let n_frames = spec.n_frames();

    // Floor the fixed templates once so components with disjoint support
    // cannot zero out the reconstruction.
    let mut w = bank.to_matrix();
    w.mapv_inplace(|v| v.max(PROB_FLOOR));
    for mut col in w.columns_mut() {
        let s = col.sum();
        col.mapv_inplace(|v| v / s);
    }
    let w_t = w.t().to_owned();

    let silent: Vec<bool> = spec.frame_energy.iter().map(|&e| e == 0.0).collect();

    // Joint activation H(im, t) = P(m|i,t) * P(i|t).
    let mut h = Array2::from_elem((n_comp, n_frames), 1.0 / n_comp as f64);
    for (t, &s) in silent.iter().enumerate() {
        if s {
            h.column_mut(t).fill(0.0);
        }
    }

    let v = &spec.magnitudes;
    let mut log_likelihood = Vec::with_capacity(n_iter);

    for iter in 0..n_iter {
        let mut y = w.dot(&h);

        // Log-likelihood of the current estimate, weighted by frame energy.
        let mut ll = 0.0;
        for t in 0..n_frames {
            if silent[t] {
                continue;
            }
            let energy = spec.frame_energy[t];
            let vc = v.column(t);
            let yc = y.column(t);
            let mut frame_ll = 0.0;
            for (vv, yy) in vc.iter().zip(yc.iter()) {
                if *vv > 0.0 {
                    frame_ll += vv * yy.max(PROB_FLOOR).ln();
                }
            }
            ll += energy * frame_ll;
        }
        log_likelihood.push(ll);
        if tol > 0.0 && iter > 0 {
            let prev = log_likelihood[iter - 1];
            if ll - prev < tol * prev.abs().max(PROB_FLOOR) {
                break;
            }
        }

        // Multiplicative EM step: H <- H .* (W^T (V ./ WH)), renormalized
        // per frame.
        y.mapv_inplace(|v| v.max(PROB_FLOOR));
        let ratio = v / &y;
        let update = w_t.dot(&ratio);
        h *= &update;
        for t in 0..n_frames {
            if silent[t] {
                continue;
            }
            let mut col = h.column_mut(t);
            col.mapv_inplace(|v| v.max(PROB_FLOOR));
            let s = col.sum();
            col.mapv_inplace(|v| v / s);
        }
    }

    // Marginalize H into P(i|t) and P(m|i,t).
    let mut pitch_activation = Array2::<f64>::zeros((n_pitches, n_frames));
    let mut mode_activation = Array3::<f64>::zeros((n_modes, n_pitches, n_frames));
    for t in 0..n_frames {
        if silent[t] {
            continue;
        }
        for i in 0..n_pitches {
            let mut p_i = 0.0;
            for m in 0..n_modes {
                p_i += h[(i * n_modes + m, t)];
            }
            pitch_activation[(i, t)] = p_i;
            for m in 0..n_modes {
                mode_activation[(m, i, t)] = h[(i * n_modes + m, t)] / p_i;
            }
        }
    }

    let energy_row = Array1::from_vec(spec.frame_energy.clone());
    let salience = &pitch_activation * &energy_row.insert_axis(Axis(0));

    Ok(ActivationTensor {
        pitch_activation,
        mode_activation,
        frame_energy: spec.frame_energy.clone(),
        salience,
        log_likelihood,
    })
}
