use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::hmm::StateModel;
use crate::error::{domain, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ScoredPath<S: Scalar> {
    pub states: Vec<usize>,
    pub log_likelihood: S,
}

/// Best first: higher score, then the lexicographically smaller path.
pub(crate) fn path_order<S: Scalar>(a_score: S, a: &[usize], b_score: S, b: &[usize]) -> Ordering {
    b_score
        .partial_cmp(&a_score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.cmp(b))
}

/// Joint log-likelihood of one state path, accumulated left to right:
/// initial, then for each step the transition followed by the emission.
pub fn path_log_likelihood<S: Scalar, M: StateModel<S>>(model: &M, states: &[usize], obs: &[S]) -> S {
    let mut score = model.log_initial(states[0]) + model.log_emission(states[0], obs[0]);
    for t in 1..states.len() {
        score = score + model.log_transition(states[t - 1], states[t]);
        score = score + model.log_emission(states[t], obs[t]);
    }
    score
}

/// The `n` most likely state paths for `obs`, best first.
///
/// Keeps the best `n` partial paths ending in each state. Ties are broken
/// by path order so the output is fully determined; paths with zero
/// probability are never returned.
pub fn n_viterbi<S: Scalar, M: StateModel<S>>(model: &M, obs: &[S], n: usize) -> Result<Vec<ScoredPath<S>>> {
    if n < 1 {
        return domain("n-Viterbi needs n >= 1");
    }
    if obs.is_empty() {
        return domain("n-Viterbi needs at least one observation");
    }
    let k = model.n_states();
    let preds: Vec<Vec<usize>> = (0..k).map(|s| model.predecessors(s)).collect();
    let log_a: Vec<Vec<S>> = (0..k)
        .map(|to| preds[to].iter().map(|&from| model.log_transition(from, to)).collect())
        .collect();

    let neg_inf = S::neg_infinity();
    let mut lists: Vec<Vec<ScoredPath<S>>> = (0..k)
        .map(|s| {
            let score = model.log_initial(s) + model.log_emission(s, obs[0]);
            if score > neg_inf {
                vec![ScoredPath {
                    states: vec![s],
                    log_likelihood: score,
                }]
            } else {
                vec![]
            }
        })
        .collect();

    for &x in &obs[1..] {
        let mut next = Vec::with_capacity(k);
        for s in 0..k {
            let e = model.log_emission(s, x);
            let mut cand: Vec<(S, &ScoredPath<S>)> = Vec::new();
            for (&p, &la) in preds[s].iter().zip(&log_a[s]) {
                if !(la > neg_inf) {
                    continue;
                }
                for path in &lists[p] {
                    let score = path.log_likelihood + la + e;
                    if score > neg_inf {
                        cand.push((score, path));
                    }
                }
            }
            cand.sort_by(|a, b| path_order(a.0, &a.1.states, b.0, &b.1.states));
            cand.truncate(n);
            next.push(
                cand.into_iter()
                    .map(|(score, path)| {
                        let mut states = Vec::with_capacity(path.states.len() + 1);
                        states.extend_from_slice(&path.states);
                        states.push(s);
                        ScoredPath {
                            states,
                            log_likelihood: score,
                        }
                    })
                    .collect(),
            );
        }
        lists = next;
    }

    let mut all: Vec<ScoredPath<S>> = lists.into_iter().flatten().collect();
    all.sort_by(|a, b| path_order(a.log_likelihood, &a.states, b.log_likelihood, &b.states));
    all.truncate(n);
    Ok(all)
}

/// Single best path by the standard dynamic program.
pub fn viterbi<S: Scalar, M: StateModel<S>>(model: &M, obs: &[S]) -> Result<Option<ScoredPath<S>>> {
    if obs.is_empty() {
        return domain("Viterbi needs at least one observation");
    }
    let k = model.n_states();
    let neg_inf = S::neg_infinity();
    let mut delta: Vec<S> = (0..k).map(|s| model.log_initial(s) + model.log_emission(s, obs[0])).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(obs.len());
    for &x in &obs[1..] {
        let mut nd = vec![neg_inf; k];
        let mut bp = vec![usize::MAX; k];
        for s in 0..k {
            let e = model.log_emission(s, x);
            for p in model.predecessors(s) {
                let v = delta[p] + model.log_transition(p, s) + e;
                if v > nd[s] {
                    nd[s] = v;
                    bp[s] = p;
                }
            }
        }
        back.push(bp);
        delta = nd;
    }
    let Some((mut s, &best)) = delta
        .iter()
        .enumerate()
        .filter(|(_, v)| **v > neg_inf)
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(Ordering::Equal).then(b.0.cmp(&a.0)))
    else {
        return Ok(None);
    };
    let mut states = vec![s];
    for bp in back.iter().rev() {
        s = bp[s];
        states.push(s);
    }
    states.reverse();
    Ok(Some(ScoredPath {
        states,
        log_likelihood: best,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keystroke::hmm::{DenseHmm, Emission};
    use crate::seed;
    use rand::Rng as _;

    fn random_model(rng: &mut seed::Rng, k: usize, sparse: bool) -> DenseHmm<f64> {
        let mut norm = |len: usize| {
            let mut v: Vec<f64> = (0..len)
                .map(|_| if sparse && rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.05..1.0) })
                .collect();
            if v.iter().all(|&x| x == 0.0) {
                v[0] = 1.0;
            }
            let z: f64 = v.iter().sum();
            v.iter().map(|x| x / z).collect::<Vec<_>>()
        };
        let initial = norm(k);
        let transitions = (0..k).flat_map(|_| norm(k)).collect();
        let emissions = (0..k)
            .map(|_| Emission {
                mean_ms: rng.random_range(100.0..400.0),
                stddev_ms: rng.random_range(10.0..80.0),
            })
            .collect();
        DenseHmm {
            initial,
            transitions,
            emissions,
        }
    }

    fn brute_force(model: &DenseHmm<f64>, obs: &[f64]) -> Vec<ScoredPath<f64>> {
        let k = model.initial.len();
        let t = obs.len();
        let mut out = Vec::new();
        for code in 0..k.pow(t as u32) {
            let mut c = code;
            let mut states = vec![0; t];
            for i in (0..t).rev() {
                states[i] = c % k;
                c /= k;
            }
            let score = path_log_likelihood(model, &states, obs);
            if score > f64::NEG_INFINITY {
                out.push(ScoredPath {
                    states,
                    log_likelihood: score,
                });
            }
        }
        out.sort_by(|a, b| path_order(a.log_likelihood, &a.states, b.log_likelihood, &b.states));
        out
    }

    #[test]
    fn matches_brute_force_on_random_models() {
        let mut rng = seed::rng(17);
        for _ in 0..100 {
            let k = rng.random_range(1..=4);
            let t = rng.random_range(1..=6);
            let sparse = rng.random_bool(0.5);
            let m = random_model(&mut rng, k, sparse);
            let obs: Vec<f64> = (0..t).map(|_| rng.random_range(80.0..450.0)).collect();
            let mut expect = brute_force(&m, &obs);
            expect.truncate(50);
            assert_eq!(n_viterbi(&m, &obs, 50).unwrap(), expect);
        }
    }

    #[test]
    fn n1_is_viterbi_and_prefix_holds() {
        let mut rng = seed::rng(5);
        for _ in 0..50 {
            let m = random_model(&mut rng, 4, false);
            let obs: Vec<f64> = (0..5).map(|_| rng.random_range(80.0..450.0)).collect();
            let best = viterbi(&m, &obs).unwrap().unwrap();
            let one = n_viterbi(&m, &obs, 1).unwrap();
            assert_eq!(one[0].states, best.states);
            let ten = n_viterbi(&m, &obs, 10).unwrap();
            let thirty = n_viterbi(&m, &obs, 30).unwrap();
            assert_eq!(&thirty[..10], &ten[..]);
            assert!(ten.windows(2).all(|w| w[0].log_likelihood >= w[1].log_likelihood));
        }
    }

    #[test]
    fn forced_path() {
        // 0 -> 1 -> 2 deterministically.
        let m = DenseHmm {
            initial: vec![1.0, 0.0, 0.0],
            transitions: vec![0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
            emissions: vec![
                Emission {
                    mean_ms: 200.0,
                    stddev_ms: 10.0
                };
                3
            ],
        };
        for n in [1, 5, 50] {
            let out = n_viterbi(&m, &[200.0, 210.0, 190.0], n).unwrap();
            assert_eq!(out.len(), 1);
            assert_eq!(out[0].states, vec![0, 1, 2]);
        }
    }

    #[test]
    fn rejects_bad_n() {
        let mut rng = seed::rng(1);
        let m = random_model(&mut rng, 2, false);
        assert!(n_viterbi(&m, &[1.0], 0).is_err());
        assert!(n_viterbi(&m, &[], 3).is_err());
    }

    #[test]
    fn runs_on_f32() {
        let m = DenseHmm::<f32> {
            initial: vec![0.5, 0.5],
            transitions: vec![0.9, 0.1, 0.1, 0.9],
            emissions: vec![
                Emission {
                    mean_ms: 150.0,
                    stddev_ms: 20.0,
                },
                Emission {
                    mean_ms: 300.0,
                    stddev_ms: 20.0,
                },
            ],
        };
        let out = n_viterbi(&m, &[150.0f32, 300.0, 300.0], 2).unwrap();
        assert_eq!(out[0].states, vec![0, 1, 1]);
    }
}
