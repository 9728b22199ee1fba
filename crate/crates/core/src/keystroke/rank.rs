use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::hmm::HmmModel;
use super::viterbi::path_log_likelihood;
use crate::error::{domain, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RankedWord<S: Scalar> {
    pub word: String,
    pub log_likelihood: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RankedWords<S: Scalar> {
    /// Best first; ties broken alphabetically.
    pub entries: Vec<RankedWord<S>>,
    /// Set when no dictionary word had the observed length.
    pub no_eligible: bool,
}

impl<S: Scalar> RankedWords<S> {
    pub fn from_scores(scores: Vec<(String, S)>) -> Self {
        let mut entries: Vec<RankedWord<S>> = scores
            .into_iter()
            .map(|(word, log_likelihood)| RankedWord { word, log_likelihood })
            .collect();
        entries.sort_by(|a, b| {
            b.log_likelihood
                .partial_cmp(&a.log_likelihood)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.word.cmp(&b.word))
        });
        let no_eligible = entries.is_empty();
        RankedWords { entries, no_eligible }
    }

    /// 1-based rank of `word`.
    pub fn rank_of(&self, word: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.word == word).map(|i| i + 1)
    }
}

/// Scores every dictionary word with one more letter than there are
/// observations by the joint log-likelihood of its character-pair path.
pub fn rank_dictionary<S: Scalar>(model: &HmmModel<S>, obs: &[S], dictionary: &[String]) -> RankedWords<S> {
    let unique: BTreeSet<&str> = dictionary.iter().map(String::as_str).collect();
    let scores = unique
        .into_iter()
        .filter(|w| !obs.is_empty() && w.chars().count() == obs.len() + 1)
        .filter_map(|w| {
            let states = model.word_states(w)?;
            Some((w.to_string(), path_log_likelihood(model, &states, obs)))
        })
        .collect();
    RankedWords::from_scores(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKReport {
    pub ks: Vec<usize>,
    pub accuracy: Vec<f64>,
    pub trials: usize,
}

impl TopKReport {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.accuracy[i])
    }
}

/// Fraction of trials whose truth is ranked within each `k`.
pub fn evaluate_topk<S: Scalar>(ranked: &[RankedWords<S>], truths: &[String], ks: &[usize]) -> Result<TopKReport> {
    if ks.iter().any(|&k| k == 0) {
        return domain("k must be positive");
    }
    if ranked.len() != truths.len() {
        return domain(format!("{} rankings for {} truths", ranked.len(), truths.len()));
    }
    let ranks: Vec<Option<usize>> = ranked.iter().zip(truths).map(|(r, t)| r.rank_of(t)).collect();
    let trials = ranks.len();
    let accuracy = ks
        .iter()
        .map(|&k| {
            if trials == 0 {
                return 0.0;
            }
            ranks.iter().filter(|r| matches!(r, Some(x) if *x <= k)).count() as f64 / trials as f64
        })
        .collect();
    Ok(TopKReport {
        ks: ks.to_vec(),
        accuracy,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keystroke::hmm::{fit_hmm, HmmFitConfig, ProfilingSample};
    use crate::scalar::normal_log_pdf;

    fn dict(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    fn toy() -> (HmmModel<f64>, Vec<String>) {
        let d = dict(&["abca", "acab", "bcab", "cabb", "abc", "aabb"]);
        let corpus = vec![
            ProfilingSample {
                word: "abca".into(),
                latencies_ms: vec![150.0, 260.0, 330.0],
            },
            ProfilingSample {
                word: "cabb".into(),
                latencies_ms: vec![330.0, 150.0, 210.0],
            },
            ProfilingSample {
                word: "acab".into(),
                latencies_ms: vec![190.0, 330.0, 150.0],
            },
            ProfilingSample {
                word: "aabb".into(),
                latencies_ms: vec![120.0, 150.0, 210.0],
            },
        ];
        let mut m = fit_hmm(&corpus, &['a', 'b', 'c'], &d, &HmmFitConfig::default()).unwrap();
        for e in m.emissions.iter_mut() {
            e.stddev_ms = 1.0;
        }
        (m, d)
    }

    #[test]
    fn exact_means_rank_truth_first() {
        let (m, d) = toy();
        let s = |a, b| m.emissions[m.state(a, b).unwrap()].mean_ms;
        let obs = vec![s('b', 'c'), s('c', 'a'), s('a', 'b')];
        let r = rank_dictionary(&m, &obs, &d);
        assert_eq!(r.entries[0].word, "bcab");
        assert!(r.entries.iter().all(|e| e.word.len() == 4));
        assert_eq!(r.entries.len(), 5);
    }

    #[test]
    fn scores_equal_hand_sums() {
        let (m, d) = toy();
        let obs = [200.0, 300.0, 180.0];
        let r = rank_dictionary(&m, &obs, &d);
        for e in &r.entries {
            let cs: Vec<char> = e.word.chars().collect();
            let st: Vec<usize> = cs.windows(2).map(|w| m.state(w[0], w[1]).unwrap()).collect();
            let mut want = m.initial[st[0]].ln();
            for (i, &s) in st.iter().enumerate() {
                if i > 0 {
                    want += m.transition(st[i - 1], s).ln();
                }
                let em = m.emissions[s];
                want += normal_log_pdf(obs[i], em.mean_ms, em.stddev_ms);
            }
            assert!((e.log_likelihood - want).abs() < 1e-9, "{}", e.word);
        }
        assert!(r.entries.windows(2).all(|w| w[0].log_likelihood >= w[1].log_likelihood));
    }

    #[test]
    fn lone_eligible_word_and_empty_flag() {
        let (m, d) = toy();
        let r = rank_dictionary(&m, &[100.0, 100.0], &d);
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.rank_of("abc"), Some(1));
        let none = rank_dictionary(&m, &[100.0; 8], &d);
        assert!(none.no_eligible && none.entries.is_empty());
    }

    fn fixed_rank(word: &str, truth_rank: usize) -> RankedWords<f64> {
        let mut scores: Vec<(String, f64)> = (0..60).map(|i| (format!("w{i:02}"), -(i as f64))).collect();
        scores[truth_rank - 1].0 = word.into();
        RankedWords::from_scores(scores)
    }

    #[test]
    fn topk_examples() {
        let truths = dict(&["aa", "bb"]);
        let first = vec![fixed_rank("aa", 1), fixed_rank("bb", 1)];
        let r = evaluate_topk(&first, &truths, &[10, 50]).unwrap();
        assert_eq!(r.accuracy, vec![1.0, 1.0]);
        let eleventh = vec![fixed_rank("aa", 11), fixed_rank("bb", 11)];
        let r = evaluate_topk(&eleventh, &truths, &[10, 50]).unwrap();
        assert_eq!(r.accuracy, vec![0.0, 1.0]);
        assert!(evaluate_topk(&first, &truths, &[0]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn shifting_scores_keeps_order(scores in proptest::collection::vec(-1e3f64..1e3, 1..40), c in -1e3f64..1e3) {
                let named: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, &s)| (format!("w{i}"), s)).collect();
                let shifted: Vec<(String, f64)> = named.iter().map(|(w, s)| (w.clone(), s + c)).collect();
                let a: Vec<String> = RankedWords::from_scores(named).entries.into_iter().map(|e| e.word).collect();
                let b: Vec<String> = RankedWords::from_scores(shifted).entries.into_iter().map(|e| e.word).collect();
                // Rounding may merge near-equal scores; only strict separations must survive.
                let pos = |v: &[String], w: &str| v.iter().position(|x| x == w).unwrap();
                for (i, &si) in scores.iter().enumerate() {
                    for (j, &sj) in scores.iter().enumerate() {
                        if si - sj > 1e-6 {
                            let (wi, wj) = (format!("w{i}"), format!("w{j}"));
                            prop_assert!(pos(&a, &wi) < pos(&a, &wj));
                            prop_assert!(pos(&b, &wi) < pos(&b, &wj));
                        }
                    }
                }
            }

            #[test]
            fn shrinking_dictionary_never_hurts(drop_mask in proptest::collection::vec(any::<bool>(), 5), o1 in 100.0f64..400.0, o2 in 100.0f64..400.0, o3 in 100.0f64..400.0) {
                let (m, d) = toy();
                let obs = [o1, o2, o3];
                let truth = "bcab".to_string();
                let full = rank_dictionary(&m, &obs, &d);
                let kept: Vec<String> = d.iter().zip(drop_mask.iter().chain(std::iter::repeat(&false)))
                    .filter(|(w, drop)| **w == truth || !**drop)
                    .map(|(w, _)| w.clone()).collect();
                let small = rank_dictionary(&m, &obs, &kept);
                for k in 1..=5 {
                    let a = evaluate_topk(std::slice::from_ref(&full), std::slice::from_ref(&truth), &[k]).unwrap();
                    let b = evaluate_topk(std::slice::from_ref(&small), std::slice::from_ref(&truth), &[k]).unwrap();
                    prop_assert!(b.accuracy[0] >= a.accuracy[0]);
                }
            }
        }
    }
}
