use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::{normal_log_pdf, Scalar};

/// Anything the list decoder can walk: states, log initial and transition
/// probabilities, and log emission densities.
pub trait StateModel<S: Scalar> {
    fn n_states(&self) -> usize;
    fn log_initial(&self, s: usize) -> S;
    fn log_transition(&self, from: usize, to: usize) -> S;
    fn log_emission(&self, s: usize, x: S) -> S;
    /// States with a possibly non-zero transition into `to`.
    fn predecessors(&self, _to: usize) -> Vec<usize> {
        (0..self.n_states()).collect()
    }
}

/// Gaussian emission parameters, milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Emission<S: Scalar> {
    pub mean_ms: S,
    pub stddev_ms: S,
}

/// Unstructured HMM with dense transitions and Gaussian emissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DenseHmm<S: Scalar> {
    pub initial: Vec<S>,
    /// Row-major `n × n`.
    pub transitions: Vec<S>,
    pub emissions: Vec<Emission<S>>,
}

impl<S: Scalar> StateModel<S> for DenseHmm<S> {
    fn n_states(&self) -> usize {
        self.initial.len()
    }
    fn log_initial(&self, s: usize) -> S {
        self.initial[s].ln()
    }
    fn log_transition(&self, from: usize, to: usize) -> S {
        self.transitions[from * self.initial.len() + to].ln()
    }
    fn log_emission(&self, s: usize, x: S) -> S {
        let e = self.emissions[s];
        normal_log_pdf(x, e.mean_ms, e.stddev_ms)
    }
}

/// Character-pair HMM: state `(a, b)` emits the latency between pressing
/// `a` and pressing `b`, and may only move to a state `(b, c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HmmModel<S: Scalar> {
    pub alphabet: Vec<char>,
    /// Per state `a * |alphabet| + b`.
    pub initial: Vec<S>,
    /// `transitions[s * |alphabet| + c]` is the probability of moving from
    /// state `s = (a, b)` to `(b, c)`.
    pub transitions: Vec<S>,
    pub emissions: Vec<Emission<S>>,
}

impl<S: Scalar> HmmModel<S> {
    pub fn alphabet_len(&self) -> usize {
        self.alphabet.len()
    }

    pub fn char_index(&self, c: char) -> Option<usize> {
        self.alphabet.iter().position(|&a| a == c)
    }

    pub fn state(&self, a: char, b: char) -> Option<usize> {
        Some(self.char_index(a)? * self.alphabet.len() + self.char_index(b)?)
    }

    pub fn pair(&self, s: usize) -> (char, char) {
        let n = self.alphabet.len();
        (self.alphabet[s / n], self.alphabet[s % n])
    }

    /// State sequence spelling `word`, or `None` if a character is unknown.
    pub fn word_states(&self, word: &str) -> Option<Vec<usize>> {
        let cs: Vec<char> = word.chars().collect();
        cs.windows(2).map(|w| self.state(w[0], w[1])).collect()
    }

    /// Inverse of [`HmmModel::word_states`].
    pub fn states_word(&self, states: &[usize]) -> String {
        let mut w = String::new();
        if let Some(&s0) = states.first() {
            w.push(self.pair(s0).0);
        }
        for &s in states {
            w.push(self.pair(s).1);
        }
        w
    }

    pub fn transition(&self, from: usize, to: usize) -> S {
        let n = self.alphabet.len();
        if from % n != to / n {
            return S::zero();
        }
        self.transitions[from * n + to % n]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.alphabet.len();
        let states = n * n;
        if n == 0 || self.initial.len() != states || self.emissions.len() != states || self.transitions.len() != states * n {
            return domain("HMM tables do not match the alphabet");
        }
        let tol = S::of(1e-4);
        let one = S::one();
        if (self.initial.iter().copied().sum::<S>() - one).abs() > tol {
            return domain("initial probabilities do not sum to 1");
        }
        for s in 0..states {
            let row: S = self.transitions[s * n..(s + 1) * n].iter().copied().sum();
            if (row - one).abs() > tol {
                return domain(format!("transitions from state {s} do not sum to 1"));
            }
        }
        if self.emissions.iter().any(|e| !(e.stddev_ms > S::zero())) {
            return domain("emission stddev must be positive");
        }
        Ok(())
    }
}

impl<S: Scalar> StateModel<S> for HmmModel<S> {
    fn n_states(&self) -> usize {
        self.initial.len()
    }
    fn log_initial(&self, s: usize) -> S {
        self.initial[s].ln()
    }
    fn log_transition(&self, from: usize, to: usize) -> S {
        self.transition(from, to).ln()
    }
    fn log_emission(&self, s: usize, x: S) -> S {
        let e = self.emissions[s];
        normal_log_pdf(x, e.mean_ms, e.stddev_ms)
    }
    fn predecessors(&self, to: usize) -> Vec<usize> {
        let n = self.alphabet.len();
        let b = to / n;
        (0..n).map(|a| a * n + b).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HmmFitConfig {
    /// Pseudo-observations pulling each state's emission toward the pooled
    /// latency distribution.
    pub prior_weight: f64,
    pub stddev_floor_ms: f64,
}

impl Default for HmmFitConfig {
    fn default() -> Self {
        HmmFitConfig {
            prior_weight: 1.0,
            stddev_floor_ms: 5.0,
        }
    }
}

/// One profiled word and its observed press-to-press latencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ProfilingSample<S: Scalar> {
    pub word: String,
    pub latencies_ms: Vec<S>,
}

/// Press-to-press intervals in milliseconds.
pub fn extract_digram_latencies<S: Scalar>(press_times_us: &[u64]) -> Result<Vec<S>> {
    if press_times_us.len() < 2 {
        return domain("need at least two presses to form a digram latency");
    }
    press_times_us
        .windows(2)
        .map(|w| {
            if w[1] < w[0] {
                return domain("press times must be non-decreasing");
            }
            Ok(S::of((w[1] - w[0]) as f64 / 1000.0))
        })
        .collect()
}

/// Fits emissions from profiled latencies and transitions from the
/// dictionary.
///
/// Each state's emission mean and variance are estimated with
/// `prior_weight` pseudo-observations at the pooled mean and variance, and
/// the standard deviation is floored. Transitions and initial probabilities
/// are add-one smoothed digram counts over the dictionary, restricted to
/// digrams that occur in it; a state with no such continuation moves
/// uniformly.
pub fn fit_hmm<S: Scalar>(
    corpus: &[ProfilingSample<S>],
    alphabet: &[char],
    dictionary: &[String],
    cfg: &HmmFitConfig,
) -> Result<HmmModel<S>> {
    if corpus.is_empty() {
        return domain("profiling corpus is empty");
    }
    let n = alphabet.len();
    if n == 0 || alphabet.iter().collect::<BTreeSet<_>>().len() != n {
        return domain("alphabet must be non-empty with distinct characters");
    }
    let index: BTreeMap<char, usize> = alphabet.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let encode = |w: &str| -> Result<Vec<usize>> {
        w.chars()
            .map(|c| index.get(&c).copied().ok_or(()))
            .collect::<std::result::Result<Vec<_>, _>>()
            .or_else(|_| domain(format!("word {w:?} uses characters outside the alphabet")))
    };
    let dict_set: BTreeSet<&str> = dictionary.iter().map(String::as_str).collect();

    let states = n * n;
    let mut obs: Vec<Vec<f64>> = vec![Vec::new(); states];
    for sample in corpus {
        let cs = encode(&sample.word)?;
        if !dict_set.contains(sample.word.as_str()) {
            return domain(format!("profiled word {:?} is not in the dictionary", sample.word));
        }
        if cs.len() < 2 || sample.latencies_ms.len() != cs.len() - 1 {
            return domain(format!(
                "word {:?} needs {} latencies, got {}",
                sample.word,
                cs.len().saturating_sub(1),
                sample.latencies_ms.len()
            ));
        }
        for (w, &x) in cs.windows(2).zip(&sample.latencies_ms) {
            obs[w[0] * n + w[1]].push(x.to_f64_lossy());
        }
    }
    let all: Vec<f64> = obs.iter().flatten().copied().collect();
    let g_mean = all.iter().sum::<f64>() / all.len() as f64;
    let g_var = all.iter().map(|x| (x - g_mean).powi(2)).sum::<f64>() / all.len() as f64;
    let k = cfg.prior_weight;
    let emissions = obs
        .iter()
        .map(|xs| {
            let m = xs.len() as f64;
            let mean = (xs.iter().sum::<f64>() + k * g_mean) / (m + k);
            let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
            let var = (ss + k * g_var) / (m + k);
            Emission {
                mean_ms: S::of(mean),
                stddev_ms: S::of(var.sqrt().max(cfg.stddev_floor_ms)),
            }
        })
        .collect();

    let mut legal = vec![false; states];
    let mut first = vec![0f64; states];
    let mut next = vec![0f64; states * n];
    for w in dictionary {
        let cs = encode(w)?;
        for d in cs.windows(2) {
            legal[d[0] * n + d[1]] = true;
        }
        if cs.len() >= 2 {
            first[cs[0] * n + cs[1]] += 1.0;
        }
        for t in cs.windows(3) {
            next[(t[0] * n + t[1]) * n + t[2]] += 1.0;
        }
    }
    if !legal.iter().any(|&l| l) {
        return domain("dictionary has no digrams");
    }

    let init_w: Vec<f64> = (0..states).map(|s| if legal[s] { first[s] + 1.0 } else { 0.0 }).collect();
    let z: f64 = init_w.iter().sum();
    let initial = init_w.iter().map(|&w| S::of(w / z)).collect();

    let mut transitions = vec![S::zero(); states * n];
    for s in 0..states {
        let b = s % n;
        let row: Vec<f64> = (0..n)
            .map(|c| if legal[b * n + c] { next[s * n + c] + 1.0 } else { 0.0 })
            .collect();
        let z: f64 = row.iter().sum();
        for c in 0..n {
            transitions[s * n + c] = S::of(if z > 0.0 { row[c] / z } else { 1.0 / n as f64 });
        }
    }

    Ok(HmmModel {
        alphabet: alphabet.to_vec(),
        initial,
        transitions,
        emissions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn press_differences() {
        let l: Vec<f64> = extract_digram_latencies(&[0, 200_000, 450_000]).unwrap();
        assert_eq!(l, vec![200.0, 250.0]);
        assert_eq!(extract_digram_latencies::<f32>(&[0, 10_000]).unwrap().len(), 1);
        assert!(extract_digram_latencies::<f64>(&[5]).is_err());
    }

    #[test]
    fn single_observation_sets_mean() {
        let corpus = vec![ProfilingSample {
            word: "ab".into(),
            latencies_ms: vec![200.0f64],
        }];
        let m = fit_hmm(&corpus, &['a', 'b'], &words(&["ab"]), &HmmFitConfig::default()).unwrap();
        let s = m.state('a', 'b').unwrap();
        assert_eq!(m.emissions[s].mean_ms, 200.0);
        assert_eq!(m.emissions[s].stddev_ms, 5.0);
        m.validate().unwrap();
    }

    #[test]
    fn transitions_match_hand_counts() {
        // Dictionary digrams: ab, bc, ca, ba, cb.
        // Continuations: abc -> (ab)->(bc); bca -> (bc)->(ca); abca -> ab->bc, bc->ca;
        // cba -> (cb)->(ba).
        let dict = words(&["abc", "bca", "abca", "cba"]);
        let corpus = vec![ProfilingSample {
            word: "abc".into(),
            latencies_ms: vec![150.0f64, 250.0],
        }];
        let m = fit_hmm(&corpus, &['a', 'b', 'c'], &dict, &HmmFitConfig::default()).unwrap();
        let t = |a: char, b: char, c: char| m.transition(m.state(a, b).unwrap(), m.state(b, c).unwrap());
        // From (a,b): legal (b,a), (b,c); counts ba 0, bc 2 -> (1, 3) / 4.
        assert!((t('a', 'b', 'a') - 0.25).abs() < 1e-12);
        assert!((t('a', 'b', 'c') - 0.75).abs() < 1e-12);
        assert_eq!(t('a', 'b', 'b'), 0.0);
        // From (b,c): legal (c,a), (c,b); counts ca 2, cb 0 -> (3, 1) / 4.
        assert!((t('b', 'c', 'a') - 0.75).abs() < 1e-12);
        assert!((t('b', 'c', 'b') - 0.25).abs() < 1e-12);
        // From (c,a): legal (a,b) only.
        assert_eq!(t('c', 'a', 'b'), 1.0);
        // From (a,a): legal (a,b) only, no counts.
        assert_eq!(t('a', 'a', 'b'), 1.0);
        // From (b,b): legal (b,a), (b,c) -> uniform over the two.
        assert_eq!(t('b', 'b', 'a'), 0.5);
        // Initial: first digrams ab 2, bc 1, cb 1; plus one over 5 legal -> 9.
        let init = |a, b| m.initial[m.state(a, b).unwrap()];
        assert!((init('a', 'b') - 3.0 / 9.0).abs() < 1e-12);
        assert!((init('c', 'a') - 1.0 / 9.0).abs() < 1e-12);
        assert_eq!(init('a', 'c'), 0.0);
        m.validate().unwrap();
    }

    #[test]
    fn rows_sum_to_one() {
        let dict = words(&["tone", "note", "stone", "onset", "tests", "nests"]);
        let corpus = vec![ProfilingSample {
            word: "tone".into(),
            latencies_ms: vec![210.0f32, 190.0, 305.0],
        }];
        let m = fit_hmm(&corpus, &['e', 'n', 'o', 's', 't'], &dict, &HmmFitConfig::default()).unwrap();
        m.validate().unwrap();
    }

    #[test]
    fn fit_errors() {
        let cfg = HmmFitConfig::default();
        assert!(fit_hmm::<f64>(&[], &['a'], &words(&["aa"]), &cfg).is_err());
        let bad = vec![ProfilingSample {
            word: "ab".into(),
            latencies_ms: vec![1.0f64, 2.0],
        }];
        assert!(fit_hmm(&bad, &['a', 'b'], &words(&["ab"]), &cfg).is_err());
        let outside = vec![ProfilingSample {
            word: "ab".into(),
            latencies_ms: vec![1.0f64],
        }];
        assert!(fit_hmm(&outside, &['a', 'b'], &words(&["ba"]), &cfg).is_err());
    }

    #[test]
    fn word_state_round_trip() {
        let corpus = vec![ProfilingSample {
            word: "abc".into(),
            latencies_ms: vec![1.0f64, 2.0],
        }];
        let m = fit_hmm(&corpus, &['a', 'b', 'c'], &words(&["abc"]), &HmmFitConfig::default()).unwrap();
        let s = m.word_states("cabba").unwrap();
        assert_eq!(m.states_word(&s), "cabba");
    }
}
