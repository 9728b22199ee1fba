//! USB hub congestion side-channel laboratory.
//!
//! A discrete-time hub simulator produces spy timing traces under keystroke
//! and web-traffic workloads; the [`keystroke`] and [`webfp`] pipelines
//! recover victim activity from them.
//!
//! Numeric pipelines are generic over [`Scalar`] (`f32` or `f64`). The
//! aliases below fix the scalar at `f64`.

pub mod error;
pub mod io;
pub mod keystroke;
pub mod scalar;
pub mod scenarios;
pub mod seed;
pub mod sim;
pub mod trace;
pub mod usb;
pub mod webfp;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type HmmModel = keystroke::HmmModel<f64>;
pub type RankedWords = keystroke::RankedWords<f64>;
pub type ProfilingSample = keystroke::ProfilingSample<f64>;
pub type FeatureSequence = webfp::FeatureSequence<f64>;
pub type LabeledDataset = webfp::LabeledDataset<f64>;
pub type BiLstmModel = webfp::BiLstmModel<f64>;
pub type Classifier = webfp::Classifier<f64>;

pub type HmmModelF32 = keystroke::HmmModel<f32>;
pub type FeatureSequenceF32 = webfp::FeatureSequence<f32>;
pub type LabeledDatasetF32 = webfp::LabeledDataset<f32>;
pub type BiLstmModelF32 = webfp::BiLstmModel<f32>;
pub type ClassifierF32 = webfp::Classifier<f32>;
