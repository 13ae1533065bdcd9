//! Sequence re-decoding over mixture states.
//!
//! First-order Viterbi or the extended second-order Viterbi over state
//! pairs, in log domain. The emission of a cluster with observation o
//! is o for the cluster's own mixture and (1 - o)/(N - 1) for every
//! other state; the sequence start is conditioned on the silence state.

use crate::error::{AmtError, Result};
use crate::postprocess::states::Cluster;
use crate::postprocess::transitions::TransitionModel;
use crate::segment::NoteEvent;

const LN_FLOOR: f64 = 1e-12;

fn ln(p: f64) -> f64 {
    p.max(LN_FLOOR).ln()
}

/// Emission log-probability of cluster `c` under state `s`.
fn ln_emission(s: usize, cluster: &Cluster, n_states: usize) -> f64 {
    let o = cluster.observation.clamp(0.0, 1.0);
    if s == cluster.state {
        ln(o)
    } else if n_states > 1 {
        ln((1.0 - o) / (n_states - 1) as f64)
    } else {
        ln(o)
    }
}

/// Decode the cluster sequence, keeping or replacing each cluster's
/// mixture. Every cluster state must already be interned in the model.
pub fn decode_sequence(model: &TransitionModel, clusters: &[Cluster]) -> Result<Vec<usize>> {
    let n = model.n_states();
    for c in clusters {
        if c.state >= n {
            return Err(AmtError::ModelStateMismatch(c.state));
        }
    }
    if clusters.is_empty() {
        return Ok(Vec::new());
    }
    match model.order {
        1 => Ok(decode_order1(model, clusters)),
        2 => Ok(decode_order2(model, clusters)),
        other => Err(AmtError::InvalidConfig(format!("decode order {other}"))),
    }
}

fn decode_order1(model: &TransitionModel, clusters: &[Cluster]) -> Vec<usize> {
    let n = model.n_states();
    let t_len = clusters.len();

    let ln_init: Vec<f64> = model.witten_bell(&[0]).iter().map(|&p| ln(p)).collect();
    let ln_trans: Vec<Vec<f64>> = (0..n)
        .map(|from| model.witten_bell(&[from]).iter().map(|&p| ln(p)).collect())
        .collect();

    let mut delta: Vec<f64> = (0..n)
        .map(|s| ln_init[s] + ln_emission(s, &clusters[0], n))
        .collect();
    let mut backptr = vec![vec![0usize; n]; t_len];

    for (t, cluster) in clusters.iter().enumerate().skip(1) {
        let mut next = vec![f64::NEG_INFINITY; n];
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut best_prev = 0usize;
            for (prev, &d) in delta.iter().enumerate() {
                let score = d + ln_trans[prev][s];
                if score > best {
                    best = score;
                    best_prev = prev;
                }
            }
            backptr[t][s] = best_prev;
            next[s] = best + ln_emission(s, cluster, n);
        }
        delta = next;
    }

    let mut state = (0..n)
        .max_by(|&a, &b| delta[a].partial_cmp(&delta[b]).unwrap().then(b.cmp(&a)))
        .unwrap();
    let mut path = vec![0usize; t_len];
    path[t_len - 1] = state;
    for t in (0..t_len - 1).rev() {
        state = backptr[t + 1][state];
        path[t] = state;
    }
    path
}

fn decode_order2(model: &TransitionModel, clusters: &[Cluster]) -> Vec<usize> {
    let n = model.n_states();
    let t_len = clusters.len();

    let ln_init: Vec<f64> = model.witten_bell(&[0, 0]).iter().map(|&p| ln(p)).collect();
    if t_len == 1 {
        let s = (0..n)
            .max_by(|&a, &b| {
                let sa = ln_init[a] + ln_emission(a, &clusters[0], n);
                let sb = ln_init[b] + ln_emission(b, &clusters[0], n);
                sa.partial_cmp(&sb).unwrap().then(b.cmp(&a))
            })
            .unwrap();
        return vec![s];
    }

    let ln_pair: Vec<Vec<f64>> = (0..n * n)
        .map(|pair| {
            let (a, b) = (pair / n, pair % n);
            model.witten_bell(&[a, b]).iter().map(|&p| ln(p)).collect()
        })
        .collect();
    let ln_first: Vec<Vec<f64>> = (0..n)
        .map(|q1| model.witten_bell(&[0, q1]).iter().map(|&p| ln(p)).collect())
        .collect();

    // delta over (q_{t-1}, q_t) pairs, flattened as q_{t-1} * n + q_t
    let mut delta = vec![f64::NEG_INFINITY; n * n];
    for q1 in 0..n {
        let base = ln_init[q1] + ln_emission(q1, &clusters[0], n);
        for q2 in 0..n {
            delta[q1 * n + q2] = base + ln_first[q1][q2] + ln_emission(q2, &clusters[1], n);
        }
    }

    let mut backptr = vec![vec![0usize; n * n]; t_len];
    for (t, cluster) in clusters.iter().enumerate().skip(2) {
        let mut next = vec![f64::NEG_INFINITY; n * n];
        for prev_state in 0..n {
            for s in 0..n {
                let mut best = f64::NEG_INFINITY;
                let mut best_old = 0usize;
                for old in 0..n {
                    let score = delta[old * n + prev_state] + ln_pair[old * n + prev_state][s];
                    if score > best {
                        best = score;
                        best_old = old;
                    }
                }
                let cell = prev_state * n + s;
                backptr[t][cell] = best_old;
                next[cell] = best + ln_emission(s, cluster, n);
            }
        }
        delta = next;
    }

    // pick the final pair, preferring the lower (q_T, q_{T-1}) on ties
    let mut best_pair = 0usize;
    let mut best_score = f64::NEG_INFINITY;
    for last in 0..n {
        for prev in 0..n {
            let cell = prev * n + last;
            if delta[cell] > best_score {
                best_score = delta[cell];
                best_pair = cell;
            }
        }
    }

    let mut path = vec![0usize; t_len];
    let mut pair = best_pair;
    path[t_len - 1] = pair % n;
    path[t_len - 2] = pair / n;
    for t in (0..t_len - 2).rev() {
        let old = backptr[t + 2][pair];
        path[t] = old;
        pair = old * n + path[t + 1];
    }
    path
}

/// Materialize the decoded path back into note events: each cluster
/// emits the decoded state's pitches at the cluster onset for the
/// cluster duration.
pub fn decoded_to_events(model: &TransitionModel, clusters: &[Cluster], path: &[usize]) -> Vec<NoteEvent> {
    let mut events = Vec::new();
    for (cluster, &state) in clusters.iter().zip(path) {
        if let Some(set) = model.inventory.set_of(state) {
            for &pitch in set.pitches() {
                let mut e = NoteEvent::new(pitch, cluster.onset, cluster.onset + cluster.duration);
                e.likelihood = Some(cluster.observation);
                events.push(e);
            }
        }
    }
    events.sort_by(|a, b| a.onset.partial_cmp(&b.onset).unwrap().then(a.pitch.cmp(&b.pitch)));
    events
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::postprocess::states::PitchSet;

    fn model_with_states(order: usize, n: usize) -> TransitionModel {
        let mut m = TransitionModel::new(order).unwrap();
        m.absorb_states((0..n - 1).map(|k| PitchSet::new(vec![60 + k as u8])));
        m
    }

    fn cluster(state: usize, t: f64, observation: f64) -> Cluster {
        Cluster { state, onset: t, duration: 0.25, observation }
    }

    #[test]
    fn confident_observations_pass_through_uniform_model() {
        let model = model_with_states(1, 4);
        let clusters: Vec<Cluster> = [1, 3, 2, 1]
            .iter()
            .enumerate()
            .map(|(t, &s)| cluster(s, t as f64 * 0.5, 1.0))
            .collect();
        let path = decode_sequence(&model, &clusters).unwrap();
        assert_eq!(path, vec![1, 3, 2, 1]);
    }

    #[test]
    fn order2_degenerate_counts_force_third_state() {
        let mut model = model_with_states(2, 4);
        // (1,2) -> 3 always; observations uninformative
        for _ in 0..50 {
            model.add_sequence(&[1, 2, 3]).unwrap();
        }
        let clusters = vec![
            cluster(1, 0.0, 1.0),
            cluster(2, 0.5, 1.0),
            cluster(1, 1.0, 0.25), // uninformative: matches the uniform complement
        ];
        let path = decode_sequence(&model, &clusters).unwrap();
        assert_eq!(path[2], 3);
    }

    #[test]
    fn decoded_events_use_cluster_timing() {
        let mut model = model_with_states(1, 3);
        model.absorb_states([PitchSet::new(vec![70, 74])]);
        let clusters = vec![cluster(3, 1.0, 0.9)];
        let events = decoded_to_events(&model, &clusters, &[3]);
        assert_eq!(events.len(), 2);
        assert_eq!(events[0].pitch, 70);
        assert_eq!(events[1].pitch, 74);
        assert!((events[0].onset - 1.0).abs() < 1e-12);
        assert!((events[0].offset - 1.25).abs() < 1e-12);
    }

    #[test]
    fn silence_decoding_drops_notes() {
        let model = model_with_states(1, 3);
        let clusters = vec![cluster(1, 0.0, 0.9)];
        let events = decoded_to_events(&model, &clusters, &[0]);
        assert!(events.is_empty());
    }

    #[test]
    fn unknown_cluster_state_is_rejected() {
        let model = model_with_states(1, 2);
        let clusters = vec![cluster(7, 0.0, 0.5)];
        assert!(matches!(
            decode_sequence(&model, &clusters),
            Err(AmtError::ModelStateMismatch(7))
        ));
    }
}
