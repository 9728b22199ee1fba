//! Keystroke recovery from mouse-poll delays: event detection, overlap
//! labeling, the character-pair HMM and dictionary ranking.

mod attack;
mod detect;
mod hmm;
mod rank;
mod viterbi;

pub use attack::{observe_keystrokes, KeystrokeObservation};
pub use detect::{
    detect_key_events, detection_score, infer_labels, label_events, DetectionScore, DetectorConfig,
    LabelReport, LabeledEvent,
};
pub use hmm::{
    extract_digram_latencies, fit_hmm, DenseHmm, Emission, HmmFitConfig, HmmModel, ProfilingSample,
    StateModel,
};
pub use rank::{evaluate_topk, rank_dictionary, RankedWord, RankedWords, TopKReport};
pub use viterbi::{n_viterbi, path_log_likelihood, viterbi, ScoredPath};
