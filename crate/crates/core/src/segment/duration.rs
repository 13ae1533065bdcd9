//! Duration-modeling two-state on/off HMM.
//!
//! The self-transition probability depends on how many frames the
//! current state has already persisted, up to a maximum order; stays at
//! or beyond the maximum share one aggregate duration bin. The model is
//! equivalent to a first-order chain over (state, stay-duration) pairs,
//! which is how the decoder walks it.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::EMISSION_FLOOR;
use crate::error::{AmtError, Result};

/// Stay probability when a survival-count ratio is undefined.
const DEFAULT_STAY: f64 = 0.5;

/// Duration-dependent two-state model. State 0 is off, state 1 is on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationHmm {
    /// Maximum modeled stay duration in frames.
    pub max_order: usize,
    /// `stay[state][d-1]` = probability of remaining in `state` after
    /// having stayed d frames, d in 1..=max_order.
    pub stay: [Vec<f64>; 2],
    /// Survival counts C(state, d): visits whose stay reached at least
    /// d frames. Kept for inspection.
    pub counts: [Vec<u64>; 2],
    /// C(state, max_order+): visits that stayed strictly longer than
    /// `max_order` frames.
    pub counts_over: [u64; 2],
}

impl DurationHmm {
    /// Probability of staying after d frames (1-based), with stays past
    /// the maximum order falling in the aggregate bin.
    pub fn stay_prob(&self, state: usize, d: usize) -> f64 {
        self.stay[state][d.min(self.max_order) - 1]
    }
}

/// Estimate per-pitch duration models from binary piano rolls.
///
/// Run lengths are counted as survivals: a visit of length L increments
/// C(state, d) for every d <= min(L, max_order), and C(state, max+)
/// when L exceeds the maximum order. Trailing runs count as complete.
/// The stay probabilities are the survival ratios
/// C(i, d+1)/C(i, d), with the aggregate bin using C(i, max+)/C(i, max);
/// undefined ratios default to 0.5.
pub fn train_duration(midi_rolls: &[Array2<u8>], max_order: usize) -> Result<Vec<DurationHmm>> {
    if max_order == 0 {
        return Err(AmtError::InvalidConfig("max_order must be >= 1".into()));
    }
    if midi_rolls.is_empty() || midi_rolls.iter().all(|r| r.ncols() == 0) {
        return Err(AmtError::EmptyTraining);
    }
    let n_pitches = midi_rolls[0].nrows();
    let mut counts = vec![[vec![0u64; max_order], vec![0u64; max_order]]; n_pitches];
    let mut counts_over = vec![[0u64; 2]; n_pitches];

    for roll in midi_rolls {
        assert_eq!(roll.nrows(), n_pitches, "rolls must share the pitch axis");
        for (i, row) in roll.rows().into_iter().enumerate() {
            let mut record = |state: usize, len: usize| {
                for d in 1..=len.min(max_order) {
                    counts[i][state][d - 1] += 1;
                }
                if len > max_order {
                    counts_over[i][state] += 1;
                }
            };
            let mut run_state = None;
            let mut run_len = 0usize;
            for &cell in row {
                let s = (cell > 0) as usize;
                if Some(s) == run_state {
                    run_len += 1;
                } else {
                    if let Some(prev) = run_state {
                        record(prev, run_len);
                    }
                    run_state = Some(s);
                    run_len = 1;
                }
            }
            if let Some(prev) = run_state {
                record(prev, run_len);
            }
        }
    }

    Ok(counts
        .into_iter()
        .zip(counts_over)
        .map(|(c, over)| {
            let stay = [0, 1].map(|state| {
                (1..=max_order)
                    .map(|d| {
                        let denom = c[state][d - 1];
                        if denom == 0 {
                            return DEFAULT_STAY;
                        }
                        let num = if d < max_order { c[state][d] } else { over[state] };
                        num as f64 / denom as f64
                    })
                    .collect()
            });
            DurationHmm { max_order, stay: stay.clone(), counts: c, counts_over: over }
        })
        .collect())
}

/// Decode the most likely on/off path under a duration model.
///
/// Runs Viterbi over the (state, stay-duration) grid: the first frame is
/// constrained to off with stay 1; a state is entered at stay 1 from any
/// stay of the other state weighted by the leave probability 1 - stay;
/// stays extend with the stay probability, aggregating at the maximum
/// order. Emissions are the on/off pseudo-posteriors, independent of the
/// stay duration. Ties prefer off, then the shorter stay.
pub fn viterbi_duration(salience_row: &[f64], dhmm: &DurationHmm) -> Vec<bool> {
    let n = salience_row.len();
    if n == 0 {
        return Vec::new();
    }
    let od = dhmm.max_order;
    let n_cells = 2 * od;
    let cell = |state: usize, d: usize| state * od + (d - 1);

    let emit = |on: bool, y: f64| -> f64 {
        let y = y.clamp(0.0, 1.0);
        let p = if on { y } else { 1.0 - y };
        p.max(EMISSION_FLOOR).ln()
    };
    let ln_stay: Vec<Vec<f64>> = (0..2)
        .map(|s| dhmm.stay[s].iter().map(|&p| p.ln()).collect())
        .collect();
    let ln_leave: Vec<Vec<f64>> = (0..2)
        .map(|s| dhmm.stay[s].iter().map(|&p| (1.0 - p).ln()).collect())
        .collect();

    let mut delta = vec![f64::NEG_INFINITY; n_cells];
    let mut backptr = vec![vec![0u32; n_cells]; n];
    delta[cell(0, 1)] = emit(false, salience_row[0]);

    let mut next = vec![f64::NEG_INFINITY; n_cells];
    for (t, &y) in salience_row.iter().enumerate().skip(1) {
        next.fill(f64::NEG_INFINITY);
        let ln_b = [emit(false, y), emit(true, y)];
        for state in 0..2 {
            let other = 1 - state;

            // enter at stay 1: leave the other state from any stay;
            // candidates scanned in (predecessor state, stay) order so
            // ties keep the earliest, matching the off/shorter-stay rule
            fn consider(score: f64, prev: u32, best: &mut f64, best_prev: &mut u32) {
                if score > *best {
                    *best = score;
                    *best_prev = prev;
                }
            }
            let mut best = f64::NEG_INFINITY;
            let mut best_prev = 0u32;
            if od == 1 && other > state {
                // with a single duration bin the off-state self-loop is
                // scanned before the switch out of on
                let self_loop = delta[cell(state, 1)] + ln_stay[state][0];
                consider(self_loop, cell(state, 1) as u32, &mut best, &mut best_prev);
                let switch = delta[cell(other, 1)] + ln_leave[other][0];
                consider(switch, cell(other, 1) as u32, &mut best, &mut best_prev);
            } else {
                for tau in 1..=od {
                    let score = delta[cell(other, tau)] + ln_leave[other][tau - 1];
                    consider(score, cell(other, tau) as u32, &mut best, &mut best_prev);
                }
                if od == 1 {
                    let self_loop = delta[cell(state, 1)] + ln_stay[state][0];
                    consider(self_loop, cell(state, 1) as u32, &mut best, &mut best_prev);
                }
            }
            next[cell(state, 1)] = best + ln_b[state];
            backptr[t][cell(state, 1)] = best_prev;

            // extend the stay by one frame
            for d in 2..=od {
                let score = delta[cell(state, d - 1)] + ln_stay[state][d - 2];
                next[cell(state, d)] = score + ln_b[state];
                backptr[t][cell(state, d)] = cell(state, d - 1) as u32;
            }

            // aggregate bin also absorbs stays already at the maximum
            if od >= 2 {
                let extend = next[cell(state, od)];
                let hold = delta[cell(state, od)] + ln_stay[state][od - 1] + ln_b[state];
                if hold > extend {
                    next[cell(state, od)] = hold;
                    backptr[t][cell(state, od)] = cell(state, od) as u32;
                }
            }
        }
        std::mem::swap(&mut delta, &mut next);
    }

    // unconstrained termination: best cell, ties preferring off then
    // shorter stay via the scan order
    let mut best_cell = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for c in 0..n_cells {
        if delta[c] > best_score {
            best_score = delta[c];
            best_cell = c;
        }
    }

    let mut path = vec![false; n];
    let mut c = best_cell;
    path[n - 1] = c >= od;
    for t in (0..n - 1).rev() {
        c = backptr[t + 1][c] as usize;
        path[t] = c >= od;
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segment::{viterbi_on_off, OnOffHmm};
    use ndarray::arr2;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn survival_counts_single_run() {
        let roll = arr2(&[[1u8, 1, 1, 0, 0]]);
        let models = train_duration(&[roll], 4).unwrap();
        let m = &models[0];
        // one on-run of length 3
        assert_eq!(&m.counts[1][..3], &[1, 1, 1]);
        assert_eq!(m.counts[1][3], 0);
        assert_eq!(m.stay[1][0], 1.0); // C(on,2)/C(on,1)
        assert_eq!(m.stay[1][1], 1.0); // C(on,3)/C(on,2)
        assert_eq!(m.stay[1][2], 0.0); // C(on,4)/C(on,3)
    }

    #[test]
    fn survival_counts_two_short_runs() {
        let roll = arr2(&[[1u8, 0, 1, 0]]);
        let models = train_duration(&[roll], 3).unwrap();
        let m = &models[0];
        assert_eq!(m.counts[1][0], 2);
        assert_eq!(m.counts[1][1], 0);
        assert_eq!(m.stay[1][0], 0.0);
    }

    #[test]
    fn all_off_roll_defaults_on_ratios() {
        let roll = arr2(&[[0u8; 5]]);
        let models = train_duration(&[roll], 3).unwrap();
        let m = &models[0];
        assert!(m.stay[1].iter().all(|&p| p == DEFAULT_STAY));
    }

    #[test]
    fn aggregate_bin_uses_over_counts() {
        // one on-run of length 5 with max_order 3: C(on,1..3) = 1, over = 1
        let roll = arr2(&[[1u8, 1, 1, 1, 1, 0]]);
        let models = train_duration(&[roll], 3).unwrap();
        let m = &models[0];
        assert_eq!(&m.counts[1][..], &[1, 1, 1]);
        assert_eq!(m.counts_over[1], 1);
        assert_eq!(m.stay[1][2], 1.0); // C(on,3+)/C(on,3)
    }

    #[test]
    fn estimator_identity_holds_on_integer_counts() {
        let rolls = vec![
            arr2(&[[1u8, 1, 0, 0, 1, 1, 1, 0, 1, 0, 0, 0, 1, 1]]),
            arr2(&[[0u8, 1, 1, 1, 1, 1, 0, 0, 0, 0, 1, 0, 1, 1]]),
        ];
        let max_order = 4;
        let models = train_duration(&rolls, max_order).unwrap();
        let m = &models[0];
        for state in 0..2 {
            for d in 1..max_order {
                if m.counts[state][d - 1] > 0 {
                    let expected = m.counts[state][d] as f64 / m.counts[state][d - 1] as f64;
                    assert_eq!(m.stay[state][d - 1], expected);
                }
            }
            if m.counts[state][max_order - 1] > 0 {
                let expected = m.counts_over[state] as f64 / m.counts[state][max_order - 1] as f64;
                assert_eq!(m.stay[state][max_order - 1], expected);
            }
        }
    }

    #[test]
    fn zero_salience_decodes_all_off() {
        let dhmm = DurationHmm {
            max_order: 4,
            stay: [vec![0.9, 0.8, 0.7, 0.6], vec![0.5, 0.5, 0.5, 0.5]],
            counts: [vec![0; 4], vec![0; 4]],
            counts_over: [0, 0],
        };
        assert!(viterbi_duration(&[0.0; 30], &dhmm).iter().all(|&s| !s));
    }

    #[test]
    fn order_one_collapses_to_first_order_decoding() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let stay_off: f64 = rng.random_range(0.05..0.95);
            let stay_on: f64 = rng.random_range(0.05..0.95);
            let dhmm = DurationHmm {
                max_order: 1,
                stay: [vec![stay_off], vec![stay_on]],
                counts: [vec![0], vec![0]],
                counts_over: [0, 0],
            };
            let hmm = OnOffHmm {
                prior_on: 0.0,
                transition: [[stay_off, 1.0 - stay_off], [1.0 - stay_on, stay_on]],
            };
            let len = rng.random_range(1..40);
            let row: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
            assert_eq!(viterbi_duration(&row, &dhmm), viterbi_on_off(&row, &hmm));
        }
    }
}
