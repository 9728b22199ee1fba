//! Victim workload generators and dataset hygiene.

mod sanitize;
mod sweep;
mod typist;
mod web;
mod words;

pub use sanitize::{sanitize_summaries, sanitize_traces, RejectReason, Rejection, SanitizeConfig, Sanitized, TraceSummary};
pub use sweep::{burst_sweep_workload, default_sweep_sizes, BurstAnnotation, SweepShape, SweepWorkload};
pub use typist::{gen_typist_events, DigramEntry, LatencyParams, TypistCalibration, TypistProfile};
pub use web::{
    gen_web_traffic, pace_burst, site_signature, vpn_transform, BurstTemplate, Delivery,
    PacingModel, SiteCorpusParams, SiteProfile, VpnParams,
};
pub use words::{load_dictionary, load_word_list, synthetic_dictionary, MAX_WORD_LEN, MIN_WORD_LEN};
