//! Note-level transcription scoring.
//!
//! A transcribed note counts as correct when it has the right pitch and
//! its onset lies within the matching tolerance of an unclaimed
//! reference onset; offsets are ignored. Counts pool across sequences
//! before the ratios are taken; per-sequence averages are reported
//! alongside.

use serde::{Deserialize, Serialize};

use crate::segment::NoteEvent;

pub const DEFAULT_ONSET_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tpr: f64,
    pub ppv: f64,
    pub f_measure: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceEval {
    pub id: String,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Pooled counts and scores plus the per-sequence breakdown.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    /// Metrics over pooled counts (the default reading).
    #[serde(flatten)]
    pub pooled: Metrics,
    /// Unweighted mean of the per-sequence metrics.
    pub macro_avg: Metrics,
    pub per_sequence: Vec<SequenceEval>,
}

/// Greedy one-to-one onset matching.
///
/// Eligible pairs share a pitch and differ in onset by at most `tol`;
/// pairs match in increasing onset-distance order, ties going to the
/// earlier reference note. Returns (tp, fp, fn).
pub fn match_notes(estimated: &[NoteEvent], reference: &[NoteEvent], tol: f64) -> (u64, u64, u64) {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (ri, r) in reference.iter().enumerate() {
        for (ei, e) in estimated.iter().enumerate() {
            if e.pitch == r.pitch {
                let dist = (e.onset - r.onset).abs();
                if dist <= tol {
                    pairs.push((dist, ri, ei));
                }
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(reference[a.1].onset.partial_cmp(&reference[b.1].onset).unwrap())
            .then(a.1.cmp(&b.1))
            .then(estimated[a.2].onset.partial_cmp(&estimated[b.2].onset).unwrap())
            .then(a.2.cmp(&b.2))
    });

    let mut ref_taken = vec![false; reference.len()];
    let mut est_taken = vec![false; estimated.len()];
    let mut tp = 0u64;
    for (_, ri, ei) in pairs {
        if !ref_taken[ri] && !est_taken[ei] {
            ref_taken[ri] = true;
            est_taken[ei] = true;
            tp += 1;
        }
    }
    (tp, estimated.len() as u64 - tp, reference.len() as u64 - tp)
}

/// Recall, precision and F-measure from raw counts.
///
/// Empty-vs-empty scores as perfect; a zero denominator against nonzero
/// counts elsewhere scores as 0.
pub fn compute_metrics(tp: u64, fp: u64, fn_: u64) -> Metrics {
    if tp == 0 && fp == 0 && fn_ == 0 {
        return Metrics { tpr: 1.0, ppv: 1.0, f_measure: 1.0 };
    }
    let tpr = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let ppv = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let f_measure = if tpr + ppv > 0.0 { 2.0 * ppv * tpr / (ppv + tpr) } else { 0.0 };
    Metrics { tpr, ppv, f_measure }
}

/// Score a batch of sequences, pooling counts across them.
pub fn evaluate_sequences(per_sequence: Vec<(String, (u64, u64, u64))>) -> EvalReport {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    let mut rows = Vec::with_capacity(per_sequence.len());
    for (id, (s_tp, s_fp, s_fn)) in per_sequence {
        tp += s_tp;
        fp += s_fp;
        fn_ += s_fn;
        rows.push(SequenceEval {
            id,
            tp: s_tp,
            fp: s_fp,
            fn_: s_fn,
            metrics: compute_metrics(s_tp, s_fp, s_fn),
        });
    }
    let n = rows.len().max(1) as f64;
    let macro_avg = Metrics {
        tpr: rows.iter().map(|r| r.metrics.tpr).sum::<f64>() / n,
        ppv: rows.iter().map(|r| r.metrics.ppv).sum::<f64>() / n,
        f_measure: rows.iter().map(|r| r.metrics.f_measure).sum::<f64>() / n,
    };
    EvalReport {
        tp,
        fp,
        fn_,
        pooled: compute_metrics(tp, fp, fn_),
        macro_avg,
        per_sequence: rows,
    }
}

/// Plain-text table with one row per labeled system.
pub fn format_table(rows: &[(String, Metrics)]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<18} {:>7} {:>7} {:>9}\n", "system", "TPR", "PPV", "F-measure"));
    for (label, m) in rows {
        out.push_str(&format!(
            "{:<18} {:>7.3} {:>7.3} {:>9.3}\n",
            label, m.tpr, m.ppv, m.f_measure
        ));
    }
    out
}
