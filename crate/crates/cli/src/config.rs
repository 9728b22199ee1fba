//! Experiment configuration, read from TOML.
//!
//! Every section has defaults, so a minimal file only names the scenario and
//! the master seed:
//!
//! ```toml
//! scenario = "keystroke"
//! master_seed = 7
//!
//! [keystroke]
//! words = ["state", "rain"]
//! trials_per_word = 3
//! ```

use std::path::{Path, PathBuf};

use anyhow::Context;
use hubspy::keystroke::{DetectorConfig, HmmFitConfig};
use hubspy::scenarios::{default_sweep_sizes, Delivery, SanitizeConfig, SiteCorpusParams, TypistCalibration, VpnParams};
use hubspy::sim::DEFAULT_JITTER_US;
use hubspy::usb::{ArbitrationPolicy, HubConfig};
use hubspy::webfp::{BurstDetectConfig, TrainConfig, DEFAULT_SEQ_LEN, DEFAULT_WINDOW_MS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

macro_rules! fail {
    ($($t:tt)*) => {
        return Err(hubspy::Error::Config(format!($($t)*)).into())
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Keystroke,
    Website,
    Resolution,
    Mitigation,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Keystroke => "keystroke",
            Scenario::Website => "website",
            Scenario::Resolution => "resolution",
            Scenario::Mitigation => "mitigation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub master_seed: u64,
    /// Run directory; the `--out` flag takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Trials simulated concurrently.
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default = "default_jitter")]
    pub jitter_us: u64,
    #[serde(default)]
    pub hub: HubConfig,
    #[serde(default)]
    pub keystroke: KeystrokeParams,
    #[serde(default)]
    pub website: WebsiteParams,
    #[serde(default)]
    pub resolution: ResolutionParams,
    #[serde(default)]
    pub mitigation: MitigationParams,
}

fn one() -> usize {
    1
}

fn default_jitter() -> u64 {
    DEFAULT_JITTER_US
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeystrokeParams {
    pub alphabet: String,
    /// Word list file (one word per line); a synthetic dictionary of
    /// `dictionary_size` words over `alphabet` is drawn when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dictionary_file: Option<PathBuf>,
    pub dictionary_size: usize,
    /// Target words. When empty, `targets` words are drawn from the
    /// dictionary with replacement.
    pub words: Vec<String>,
    pub targets: usize,
    pub trials_per_word: usize,
    /// Times each dictionary word is typed to build the profiling corpus.
    pub profiling_repeats: usize,
    pub typist: TypistCalibration,
    pub detector: DetectorConfig,
    pub hmm: HmmFitConfig,
    pub ks: Vec<usize>,
    /// Detection matching tolerance for the F1 score.
    pub f1_tolerance_ms: f64,
}

impl Default for KeystrokeParams {
    fn default() -> Self {
        KeystrokeParams {
            alphabet: "etaoinshrd".into(),
            dictionary_file: None,
            dictionary_size: 1000,
            words: Vec::new(),
            targets: 300,
            trials_per_word: 1,
            profiling_repeats: 2,
            typist: TypistCalibration::default(),
            detector: DetectorConfig::default(),
            hmm: HmmFitConfig::default(),
            ks: vec![1, 10, 50],
            f1_tolerance_ms: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WebsiteParams {
    pub labels: usize,
    pub traces_per_label: usize,
    pub duration_ms: u64,
    pub window_ms: f64,
    pub seq_len: usize,
    pub corpus: SiteCorpusParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vpn: Option<VpnParams>,
    pub sanitize: SanitizeConfig,
    pub folds: usize,
    /// Mean-pooling factor applied before the recurrent layers.
    pub pool: usize,
    pub train: TrainConfig,
    /// Also fit one classifier on every kept trace and store it.
    pub save_model: bool,
}

impl Default for WebsiteParams {
    fn default() -> Self {
        WebsiteParams {
            labels: 20,
            traces_per_label: 30,
            duration_ms: 8000,
            window_ms: DEFAULT_WINDOW_MS,
            seq_len: DEFAULT_SEQ_LEN,
            corpus: SiteCorpusParams::default(),
            vpn: None,
            sanitize: SanitizeConfig::default(),
            folds: 5,
            pool: 32,
            train: TrainConfig {
                hidden: 16,
                epochs: 40,
                ..TrainConfig::default()
            },
            save_model: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolutionParams {
    pub sizes: Vec<u64>,
    pub repeats: u32,
    pub gap_ms: u64,
    pub shape: Delivery,
    pub window_ms: f64,
    pub detect: BurstDetectConfig,
}

impl Default for ResolutionParams {
    fn default() -> Self {
        ResolutionParams {
            sizes: default_sweep_sizes(),
            repeats: 5,
            gap_ms: 1000,
            shape: Delivery::default(),
            window_ms: DEFAULT_WINDOW_MS,
            detect: BurstDetectConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MitigationParams {
    /// Policies compared on identical workloads; the hub's own arbitration
    /// setting is replaced by each in turn.
    pub policies: Vec<ArbitrationPolicy>,
    /// Words typed per policy, drawn from `keystroke`'s dictionary settings.
    pub keystroke_words: usize,
    /// Synthetic sites loaded once each per policy, from `website.corpus`.
    pub sites: usize,
}

impl Default for MitigationParams {
    fn default() -> Self {
        MitigationParams {
            policies: vec![
                ArbitrationPolicy::FairRoundRobin,
                ArbitrationPolicy::RandomizedAllocation { seed: 1 },
            ],
            keystroke_words: 60,
            sites: 20,
        }
    }
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, master_seed: u64) -> Self {
        ExperimentConfig {
            scenario,
            master_seed,
            output_dir: None,
            workers: 1,
            jitter_us: DEFAULT_JITTER_US,
            hub: HubConfig::default(),
            keystroke: KeystrokeParams::default(),
            website: WebsiteParams::default(),
            resolution: ResolutionParams::default(),
            mitigation: MitigationParams::default(),
        }
    }

    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).context("invalid experiment config")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded. The output
    /// directory is excluded so that moving a run does not change it.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.hub.validate()?;
        if self.workers == 0 {
            fail!("workers must be at least 1");
        }
        let k = &self.keystroke;
        let w = &self.website;
        let r = &self.resolution;
        let m = &self.mitigation;
        match self.scenario {
            Scenario::Keystroke => {
                if k.trials_per_word == 0 {
                    fail!("keystroke.trials_per_word must be at least 1");
                }
                if k.words.is_empty() && k.targets == 0 {
                    fail!("keystroke.targets must be at least 1 when no words are listed");
                }
                if k.profiling_repeats == 0 {
                    fail!("keystroke.profiling_repeats must be at least 1");
                }
                if k.ks.is_empty() || k.ks.contains(&0) {
                    fail!("keystroke.ks must list positive ranks");
                }
            }
            Scenario::Website => {
                if w.labels == 0 || w.traces_per_label == 0 {
                    fail!("website.labels and website.traces_per_label must be at least 1");
                }
                if w.folds < 2 || w.folds > w.traces_per_label {
                    fail!("website.folds must be in 2..=traces_per_label");
                }
                if w.pool == 0 || w.seq_len == 0 || w.duration_ms == 0 {
                    fail!("website.pool, seq_len and duration_ms must be positive");
                }
            }
            Scenario::Resolution => {
                if r.sizes.is_empty() || r.repeats == 0 {
                    fail!("resolution.sizes must be non-empty and repeats at least 1");
                }
            }
            Scenario::Mitigation => {
                if m.policies.len() < 2 {
                    fail!("mitigation.policies needs at least two entries");
                }
                if m.keystroke_words == 0 || m.sites == 0 {
                    fail!("mitigation.keystroke_words and mitigation.sites must be at least 1");
                }
            }
        }
        if !(w.window_ms > 0.0) || !(r.window_ms > 0.0) {
            fail!("window_ms must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let c = ExperimentConfig::from_toml("scenario = \"website\"\nmaster_seed = 3\n").unwrap();
        assert_eq!(c.website.labels, 20);
        assert_eq!(c.hub, HubConfig::default());
        assert_eq!(c.workers, 1);
    }

    #[test]
    fn round_trip_preserves_config() {
        let mut c = ExperimentConfig::new(Scenario::Mitigation, 11);
        c.website.vpn = Some(VpnParams::default());
        c.keystroke.words = vec!["state".into()];
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.digest(), c.digest());
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let c = ExperimentConfig::from_toml(
            "scenario = \"keystroke\"\nmaster_seed = 1\n[keystroke.typist]\ndigram_cv = 0.1\n",
        )
        .unwrap();
        assert_eq!(c.keystroke.typist.digram_cv, 0.1);
        assert_eq!(c.keystroke.typist.hold_time, TypistCalibration::default().hold_time);

        let c = ExperimentConfig::from_toml("scenario = \"keystroke\"\nmaster_seed = 1\n[hub]\ntt_count = 2\n").unwrap();
        assert_eq!(c.hub.tt_count, 2);
        assert_eq!(c.hub.bulk_payload, HubConfig::default().bulk_payload);
    }

    #[test]
    fn invalid_configs_rejected() {
        for text in [
            "scenario = \"keystroke\"\nmaster_seed = 1\n[keystroke]\ntrials_per_word = 0\n",
            "scenario = \"website\"\nmaster_seed = 1\n[website]\nfolds = 1\n",
            "scenario = \"mitigation\"\nmaster_seed = 1\n[mitigation]\npolicies = []\n",
            "scenario = \"bogus\"\nmaster_seed = 1\n",
            "scenario = \"website\"\nmaster_seed = 1\nunknown = 2\n",
            "scenario = \"website\"\nmaster_seed = 1\nworkers = 0\n",
        ] {
            assert!(ExperimentConfig::from_toml(text).is_err(), "{text}");
        }
    }

    #[test]
    fn digest_ignores_output_dir() {
        let a = ExperimentConfig::new(Scenario::Website, 1);
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.digest(), b.digest());
        b.master_seed = 2;
        assert_ne!(a.digest(), b.digest());
    }
}
