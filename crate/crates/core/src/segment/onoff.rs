//! First-order two-state on/off HMM per pitch.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::EMISSION_FLOOR;
use crate::error::{AmtError, Result};

/// Two-state on/off model. State 0 is off, state 1 is on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnOffHmm {
    /// Probability that the first frame is on.
    pub prior_on: f64,
    /// Row-stochastic transitions, `transition[from][to]`.
    pub transition: [[f64; 2]; 2],
}

impl OnOffHmm {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.prior_on) {
            return Err(AmtError::InvalidConfig(format!("prior_on = {}", self.prior_on)));
        }
        for row in &self.transition {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                return Err(AmtError::InvalidConfig(format!("transition row {row:?} not stochastic")));
            }
        }
        Ok(())
    }
}

/// Estimate one on/off model per pitch from binary piano rolls sampled
/// at the analysis frame times.
///
/// Transition counts get add-one smoothing; the on-state prior is 0
/// because recordings start silent.
pub fn train_on_off(midi_rolls: &[Array2<u8>]) -> Result<Vec<OnOffHmm>> {
    if midi_rolls.is_empty() || midi_rolls.iter().all(|r| r.ncols() == 0) {
        return Err(AmtError::EmptyTraining);
    }
    let n_pitches = midi_rolls[0].nrows();
    let mut counts = vec![[[0u64; 2]; 2]; n_pitches];
    for roll in midi_rolls {
        assert_eq!(roll.nrows(), n_pitches, "rolls must share the pitch axis");
        for (i, row) in roll.rows().into_iter().enumerate() {
            for w in row.as_slice().expect("contiguous roll rows").windows(2) {
                counts[i][(w[0] > 0) as usize][(w[1] > 0) as usize] += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| {
            let mut transition = [[0.0; 2]; 2];
            for from in 0..2 {
                let total = c[from][0] + c[from][1];
                for to in 0..2 {
                    transition[from][to] = (c[from][to] + 1) as f64 / (total + 2) as f64;
                }
            }
            OnOffHmm { prior_on: 0.0, transition }
        })
        .collect())
}

/// Decode the most likely on/off path for one pitch row.
///
/// Emissions treat the bounded salience value as a pseudo-posterior:
/// b(on, y) = max(y, eps), b(off, y) = max(1 - y, eps). Ties break
/// toward off.
pub fn viterbi_on_off(salience_row: &[f64], hmm: &OnOffHmm) -> Vec<bool> {
    let n = salience_row.len();
    if n == 0 {
        return Vec::new();
    }

    let emit = |on: bool, y: f64| -> f64 {
        let y = y.clamp(0.0, 1.0);
        let p = if on { y } else { 1.0 - y };
        p.max(EMISSION_FLOOR).ln()
    };
    let ln_a = [
        [hmm.transition[0][0].ln(), hmm.transition[0][1].ln()],
        [hmm.transition[1][0].ln(), hmm.transition[1][1].ln()],
    ];

    let mut delta = [
        (1.0 - hmm.prior_on).ln() + emit(false, salience_row[0]),
        hmm.prior_on.ln() + emit(true, salience_row[0]),
    ];
    let mut backptr = vec![[0usize; 2]; n];

    for (t, &y) in salience_row.iter().enumerate().skip(1) {
        let mut next = [f64::NEG_INFINITY; 2];
        for to in 0..2 {
            let from_off = delta[0] + ln_a[0][to];
            let from_on = delta[1] + ln_a[1][to];
            // strict > so equal scores keep the off predecessor
            let (prev, score) = if from_on > from_off { (1, from_on) } else { (0, from_off) };
            backptr[t][to] = prev;
            next[to] = score + emit(to == 1, y);
        }
        delta = next;
    }

    let mut path = vec![false; n];
    let mut state = usize::from(delta[1] > delta[0]);
    path[n - 1] = state == 1;
    for t in (0..n - 1).rev() {
        state = backptr[t + 1][state];
        path[t] = state == 1;
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn counts_and_add_one_smoothing() {
        let roll = arr2(&[[0u8, 0, 1, 1, 0]]);
        let models = train_on_off(&[roll]).unwrap();
        let m = &models[0];
        // raw counts: off->off 1, off->on 1, on->on 1, on->off 1
        assert_eq!(m.transition[0], [0.5, 0.5]);
        assert_eq!(m.transition[1], [0.5, 0.5]);
        assert_eq!(m.prior_on, 0.0);
    }

    #[test]
    fn all_off_roll_gives_uniform_on_row() {
        let roll = arr2(&[[0u8; 6]]);
        let models = train_on_off(&[roll]).unwrap();
        let m = &models[0];
        assert_eq!(m.transition[1], [0.5, 0.5]);
        // off->off observed 5 times: (5+1)/(5+2)
        assert!((m.transition[0][0] - 6.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_rolls_do_not_change_the_estimate() {
        let roll = arr2(&[[0u8, 0, 1, 1, 0]]);
        let one = train_on_off(&[roll.clone()]).unwrap();
        let two = train_on_off(&[roll.clone(), roll]).unwrap();
        for (a, b) in one.iter().zip(&two) {
            for from in 0..2 {
                for to in 0..2 {
                    assert!((a.transition[from][to] - b.transition[from][to]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_training_is_an_error() {
        assert!(matches!(train_on_off(&[]), Err(AmtError::EmptyTraining)));
    }

    #[test]
    fn prior_forces_first_frame_off() {
        let hmm = OnOffHmm { prior_on: 0.0, transition: [[0.5, 0.5], [0.5, 0.5]] };
        let path = viterbi_on_off(&[0.9, 0.9, 0.9], &hmm);
        assert_eq!(path, vec![false, true, true]);
    }

    #[test]
    fn zero_salience_decodes_all_off() {
        let hmm = OnOffHmm { prior_on: 0.3, transition: [[0.7, 0.3], [0.4, 0.6]] };
        assert!(viterbi_on_off(&[0.0; 20], &hmm).iter().all(|&s| !s));
    }

    #[test]
    fn exact_tie_breaks_toward_off() {
        let hmm = OnOffHmm { prior_on: 0.5, transition: [[0.5, 0.5], [0.5, 0.5]] };
        assert_eq!(viterbi_on_off(&[0.5], &hmm), vec![false]);
    }
}
