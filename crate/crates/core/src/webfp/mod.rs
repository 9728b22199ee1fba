//! Website fingerprinting from disk-spy delays: window features,
//! correlation against ground truth, burst detection and the recurrent
//! classifier.

mod bilstm;
mod dataset;
mod features;

pub use bilstm::{grad_check, top_k, train_bilstm, BiLstmModel, GradCheck, LstmCell, TrainConfig, TrainOutcome};
pub use dataset::{
    cross_validate, stratified_folds, train_classifier, Classifier, CvReport, FoldReport, LabeledDataset,
    LabeledItem, Preprocess, DEFAULT_SEQ_LEN,
};
pub use features::{
    bin_truth, correlate, detect_bursts, featurize, featurize_len, pearson, BurstDetectConfig,
    BurstDetection, FeatureSequence, SizeDetection, DEFAULT_WINDOW_MS,
};
