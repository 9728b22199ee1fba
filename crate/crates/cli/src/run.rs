//! Scenario runners. Each writes its traces, truth sidecars, models and
//! reports into a run directory and returns the report it wrote.
//!
//! Per-trial seeds are `seed::derive(master_seed, stream, index)` with the
//! stream constants from `hubspy::seed::stream`, so any subset of trials can
//! be replayed on its own:
//!
//! | what                         | stream        | index                      |
//! |------------------------------|---------------|----------------------------|
//! | typist profile               | `PROFILE`     | 0                          |
//! | synthetic dictionary         | `DICTIONARY`  | 0                          |
//! | target word draws            | `DICTIONARY`  | 1                          |
//! | mitigation word draws        | `DICTIONARY`  | 2                          |
//! | target typing / simulation   | `TYPIST` / `SIM_NOISE` | trial           |
//! | profiling typing / simulation| `TYPIST` / `SIM_NOISE` | `PROFILING_BASE + j` |
//! | site load / VPN / simulation | `SITE_TRIAL` / `VPN` / `SIM_NOISE` | `label * traces + rep` |
//! | mitigation site simulation   | `SIM_NOISE`   | `MITIGATION_SITE_BASE + s` |
//! | burst sweep                  | `SWEEP` / `SIM_NOISE` | 0                  |
//!
//! Site templates come from `SiteProfile::synthetic(label, corpus, master_seed)`
//! and cross-validation is seeded with the master seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use hubspy::io;
use hubspy::keystroke::{
    evaluate_topk, fit_hmm, observe_keystrokes, rank_dictionary, DetectionScore, HmmModel, KeystrokeObservation,
    ProfilingSample, TopKReport,
};
use hubspy::scenarios::{
    burst_sweep_workload, gen_typist_events, gen_web_traffic, load_dictionary, sanitize_summaries,
    synthetic_dictionary, vpn_transform, SiteProfile, TraceSummary, TypistProfile,
};
use hubspy::seed::{self, stream};
use hubspy::sim::{run_simulation, Workload};
use hubspy::trace::{KeyEventTrace, SpyTrace, TrafficTimeline};
use hubspy::usb::{ArbitrationPolicy, HubConfig};
use hubspy::webfp::{
    bin_truth, cross_validate, detect_bursts, featurize_len, pearson, train_classifier, BurstDetection, CvReport,
    FeatureSequence, LabeledDataset,
};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Scenario};

pub const PROFILING_BASE: u64 = 1 << 40;
pub const MITIGATION_SITE_BASE: u64 = 1 << 41;

pub const RUN_FILE: &str = "run.json";
pub const WALLCLOCK_FILE: &str = "wallclock.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool: String,
    pub tool_version: String,
    pub scenario: Scenario,
    pub master_seed: u64,
    pub config_digest: String,
    /// SHA-256 of every other file in the run, keyed by relative path.
    pub files: BTreeMap<String, String>,
}

impl RunMetadata {
    /// Digest over the file table: identifies the exact run outputs.
    pub fn files_digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.files {
            h.update(k.as_bytes());
            h.update([0]);
            h.update(v.as_bytes());
            h.update([0]);
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub index: u64,
    pub what: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scenario", rename_all = "lowercase")]
pub enum RunReport {
    Keystroke(KeystrokeReport),
    Website(WebsiteReport),
    Resolution(ResolutionReport),
    Mitigation(MitigationReport),
}

impl RunReport {
    pub fn failures(&self) -> &[TrialFailure] {
        match self {
            RunReport::Keystroke(r) => &r.failures,
            RunReport::Website(r) => &r.failures,
            RunReport::Resolution(_) => &[],
            RunReport::Mitigation(r) => &r.failures,
        }
    }
}

/// Outputs gathered while a scenario runs: relative path to SHA-256.
#[derive(Default)]
struct Files(BTreeMap<String, String>);

fn write_file(root: &Path, rel: &str, bytes: &[u8]) -> anyhow::Result<(String, String)> {
    let path = root.join(rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(&path, bytes).with_context(|| format!("cannot write {}", path.display()))?;
    Ok((rel.to_string(), hex::encode(Sha256::digest(bytes))))
}

impl Files {
    fn write(&mut self, root: &Path, rel: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let (k, v) = write_file(root, rel, bytes)?;
        self.0.insert(k, v);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, root: &Path, rel: &str, value: &T) -> anyhow::Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(root, rel, s.as_bytes())
    }
}

fn spy_bytes(t: &SpyTrace) -> Vec<u8> {
    let mut b = Vec::new();
    io::write_spy_trace(&mut b, t).expect("in-memory write");
    b
}

fn keys_bytes(k: &KeyEventTrace) -> Vec<u8> {
    let mut b = Vec::new();
    io::write_key_truth(&mut b, k).expect("in-memory write");
    b
}

fn traffic_bytes(t: &TrafficTimeline) -> Vec<u8> {
    let mut b = Vec::new();
    io::write_traffic(&mut b, t).expect("in-memory write");
    b
}

fn pool(workers: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

/// Prepares `dir` for a run: it must be absent or empty.
pub fn prepare_output(dir: &Path) -> anyhow::Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))?;
        if entries.next().is_some() {
            return Err(hubspy::Error::Config(format!("output directory {} is not empty", dir.display())).into());
        }
    } else {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let probe = dir.join(".write-test");
    fs::write(&probe, b"").with_context(|| format!("output directory {} is not writable", dir.display()))?;
    fs::remove_file(&probe)?;
    Ok(())
}

/// Runs the configured scenario into `out` (or the config's `output_dir`).
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> anyhow::Result<(PathBuf, RunReport)> {
    cfg.validate()?;
    let dir = match (out, &cfg.output_dir) {
        (Some(d), _) => d.to_path_buf(),
        (None, Some(d)) => d.clone(),
        (None, None) => return Err(hubspy::Error::Config("no output directory given".into()).into()),
    };
    prepare_output(&dir)?;
    let started = Instant::now();
    let mut files = Files::default();
    files.write(&dir, CONFIG_FILE, cfg.to_toml().as_bytes())?;
    let pool = pool(cfg.workers)?;
    let report = pool.install(|| match cfg.scenario {
        Scenario::Keystroke => keystroke(cfg, &dir, &mut files).map(RunReport::Keystroke),
        Scenario::Website => website(cfg, &dir, &mut files).map(RunReport::Website),
        Scenario::Resolution => resolution(cfg, &dir, &mut files).map(RunReport::Resolution),
        Scenario::Mitigation => mitigation(cfg, &dir, &mut files).map(RunReport::Mitigation),
    })?;
    files.json(&dir, "reports/report.json", &report)?;
    files.write(&dir, "reports/summary.txt", summary_text(&report).as_bytes())?;
    let meta = RunMetadata {
        tool: "hubspy".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        scenario: cfg.scenario,
        master_seed: cfg.master_seed,
        config_digest: cfg.digest(),
        files: files.0,
    };
    write_file(&dir, RUN_FILE, format!("{}\n", serde_json::to_string_pretty(&meta)?).as_bytes())?;
    let wall = serde_json::json!({ "elapsed_ms": started.elapsed().as_millis() as u64 });
    write_file(&dir, WALLCLOCK_FILE, format!("{wall}\n").as_bytes())?;
    Ok((dir, report))
}

pub fn load_run(dir: &Path) -> anyhow::Result<(RunMetadata, RunReport)> {
    let meta: RunMetadata = serde_json::from_slice(
        &fs::read(dir.join(RUN_FILE)).with_context(|| format!("{} is not a run directory", dir.display()))?,
    )?;
    let report: RunReport = serde_json::from_slice(&fs::read(dir.join("reports/report.json"))?)?;
    Ok((meta, report))
}

// ---------------------------------------------------------------- keystroke

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeystrokeTrial {
    pub index: u64,
    pub word: String,
    pub trace: String,
    pub detected: usize,
    pub truth_events: usize,
    pub labels_correct: usize,
    pub f1: f64,
    pub latencies: usize,
    /// 1-based rank of the typed word; absent when it was not ranked.
    pub rank: Option<usize>,
    pub top: Vec<String>,
}

/// Detection counts pooled over many typed words.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PooledDetection {
    pub true_positives: usize,
    pub detected: usize,
    pub actual: usize,
    pub labels_correct: usize,
    /// Sum over words of max(detections, truth events).
    pub label_denominator: usize,
}

impl PooledDetection {
    fn add(&mut self, d: &DetectionScore, labels_correct: usize) {
        self.true_positives += d.true_positives;
        self.detected += d.detected;
        self.actual += d.actual;
        self.labels_correct += labels_correct;
        self.label_denominator += d.detected.max(d.actual);
    }

    pub fn precision(&self) -> f64 {
        ratio(self.true_positives, self.detected)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.true_positives, self.actual)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    pub fn label_accuracy(&self) -> f64 {
        ratio(self.labels_correct, self.label_denominator)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeystrokeReport {
    pub dictionary: String,
    pub dictionary_size: usize,
    pub alphabet: String,
    pub profiling_trials: usize,
    /// Profiling words whose detected latency count matched the word.
    pub profiling_kept: usize,
    pub profiling: PooledDetection,
    pub targets: PooledDetection,
    pub f1: f64,
    pub label_accuracy: f64,
    pub topk: TopKReport,
    pub trials: Vec<KeystrokeTrial>,
    pub failures: Vec<TrialFailure>,
}

/// Serialized HMM plus the dictionary it ranks against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmArtifact {
    pub model: HmmModel<f64>,
    pub dictionary: Vec<String>,
}

pub fn dictionary_for(cfg: &ExperimentConfig) -> anyhow::Result<(String, Vec<String>)> {
    let k = &cfg.keystroke;
    let dict = match &k.dictionary_file {
        Some(p) => {
            let f = fs::File::open(p).with_context(|| format!("cannot open dictionary {}", p.display()))?;
            (p.display().to_string(), load_dictionary(std::io::BufReader::new(f))?)
        }
        None => (
            format!("synthetic:{}:{}", k.alphabet, k.dictionary_size),
            synthetic_dictionary(&k.alphabet, k.dictionary_size, seed::derive(cfg.master_seed, stream::DICTIONARY, 0))?,
        ),
    };
    if dict.1.is_empty() {
        return Err(hubspy::Error::Config("dictionary is empty".into()).into());
    }
    if let Some(w) = dict.1.iter().find(|w| w.chars().any(|c| !k.alphabet.contains(c))) {
        return Err(hubspy::Error::Config(format!("dictionary word {w:?} uses letters outside the alphabet {:?}", k.alphabet)).into());
    }
    Ok(dict)
}

pub fn typist_for(cfg: &ExperimentConfig) -> TypistProfile {
    TypistProfile::synthetic(
        &cfg.keystroke.alphabet,
        &cfg.keystroke.typist,
        seed::derive(cfg.master_seed, stream::PROFILE, 0),
    )
}

fn type_word(
    cfg: &ExperimentConfig,
    hub: &HubConfig,
    profile: &TypistProfile,
    word: &str,
    index: u64,
) -> hubspy::Result<KeystrokeObservation> {
    let m = cfg.master_seed;
    let keys = gen_typist_events(word, profile, seed::derive(m, stream::TYPIST, index))?;
    observe_keystrokes(hub, &keys, &cfg.keystroke.detector, cfg.jitter_us, seed::derive(m, stream::SIM_NOISE, index))
}

fn labels_correct(obs: &KeystrokeObservation, cfg: &ExperimentConfig) -> usize {
    obs.label_report(&cfg.keystroke.detector).events.iter().filter(|e| e.correct).count()
}

fn keystroke(cfg: &ExperimentConfig, dir: &Path, files: &mut Files) -> anyhow::Result<KeystrokeReport> {
    use rayon::prelude::*;
    let k = &cfg.keystroke;
    let m = cfg.master_seed;
    let (dict_name, dict) = dictionary_for(cfg)?;
    let profile = typist_for(cfg);
    profile.validate()?;
    let tol = k.f1_tolerance_ms;

    let jobs: Vec<(u64, &String)> = (0..k.profiling_repeats)
        .flat_map(|_| dict.iter())
        .enumerate()
        .map(|(j, w)| (PROFILING_BASE + j as u64, w))
        .collect();
    let profiled: Vec<_> = jobs
        .par_iter()
        .map(|&(idx, w)| {
            type_word(cfg, &cfg.hub, &profile, w, idx).map(|o| {
                let d = o.detection(tol);
                let lc = labels_correct(&o, cfg);
                (idx, w.clone(), d, lc, o.latencies_ms)
            })
        })
        .collect();
    let mut failures = Vec::new();
    let mut corpus = Vec::new();
    let mut profiling = PooledDetection::default();
    for (r, (idx, w)) in profiled.into_iter().zip(&jobs) {
        match r {
            Ok((_, word, d, lc, lat)) => {
                profiling.add(&d, lc);
                if lat.len() + 1 == word.chars().count() {
                    corpus.push(ProfilingSample { word, latencies_ms: lat });
                }
            }
            Err(e) => failures.push(TrialFailure {
                index: *idx,
                what: format!("profiling {w}"),
                error: e.to_string(),
            }),
        }
    }
    let alphabet: Vec<char> = k.alphabet.chars().collect();
    let model = fit_hmm(&corpus, &alphabet, &dict, &k.hmm)?;
    files.json(dir, "models/profiling.json", &corpus)?;
    files.json(
        dir,
        "models/hmm.json",
        &HmmArtifact {
            model: model.clone(),
            dictionary: dict.clone(),
        },
    )?;

    let words: Vec<String> = if k.words.is_empty() {
        let mut rng = seed::rng(seed::derive(m, stream::DICTIONARY, 1));
        (0..k.targets).map(|_| dict[rng.random_range(0..dict.len())].clone()).collect()
    } else {
        k.words.clone()
    };
    let targets: Vec<(u64, &String)> = words
        .iter()
        .flat_map(|w| std::iter::repeat_n(w, k.trials_per_word))
        .enumerate()
        .map(|(i, w)| (i as u64, w))
        .collect();
    let results: Vec<_> = targets
        .par_iter()
        .map(|&(idx, w)| -> anyhow::Result<_> {
            let o = type_word(cfg, &cfg.hub, &profile, w, idx)?;
            let name = format!("traces/t{idx:04}_{w}");
            let mut spy = o.bundle.spy.clone();
            spy.meta.extra.push(("word".into(), w.clone()));
            spy.meta.extra.push(("trial".into(), idx.to_string()));
            let a = write_file(dir, &format!("{name}.trace"), &spy_bytes(&spy))?;
            let keys = o.bundle.key_truth.as_ref().expect("keystroke truth");
            let b = write_file(dir, &format!("{name}.keys"), &keys_bytes(keys))?;
            let ranked = rank_dictionary(&model, &o.latencies_ms, &dict);
            let d = o.detection(tol);
            let trial = KeystrokeTrial {
                index: idx,
                word: w.clone(),
                trace: format!("{name}.trace"),
                detected: d.detected,
                truth_events: d.actual,
                labels_correct: labels_correct(&o, cfg),
                f1: d.f1,
                latencies: o.latencies_ms.len(),
                rank: ranked.rank_of(w),
                top: ranked.entries.iter().take(10).map(|e| e.word.clone()).collect(),
            };
            Ok((trial, d, ranked, [a, b]))
        })
        .collect();
    let mut trials = Vec::new();
    let mut ranked_all = Vec::new();
    let mut truths = Vec::new();
    let mut pooled = PooledDetection::default();
    for (r, (idx, w)) in results.into_iter().zip(&targets) {
        match r {
            Ok((trial, d, ranked, written)) => {
                files.0.extend(written);
                pooled.add(&d, trial.labels_correct);
                ranked_all.push(ranked);
                truths.push(trial.word.clone());
                trials.push(trial);
            }
            Err(e) => failures.push(TrialFailure {
                index: *idx,
                what: format!("target {w}"),
                error: format!("{e:#}"),
            }),
        }
    }
    let topk = evaluate_topk(&ranked_all, &truths, &k.ks)?;
    let mut all = profiling;
    all.true_positives += pooled.true_positives;
    all.detected += pooled.detected;
    all.actual += pooled.actual;
    all.labels_correct += pooled.labels_correct;
    all.label_denominator += pooled.label_denominator;
    Ok(KeystrokeReport {
        dictionary: dict_name,
        dictionary_size: dict.len(),
        alphabet: k.alphabet.clone(),
        profiling_trials: jobs.len(),
        profiling_kept: corpus.len(),
        profiling,
        targets: pooled,
        f1: all.f1(),
        label_accuracy: all.label_accuracy(),
        topk,
        trials,
        failures,
    })
}

// ------------------------------------------------------------------ website

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebsiteTrial {
    pub index: u64,
    pub label: String,
    pub trace: String,
    pub records: usize,
    pub correlation: Option<f64>,
    pub kept: bool,
    pub rejection: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WebsiteReport {
    pub labels: usize,
    pub traces_per_label: usize,
    pub vpn: bool,
    pub kept: usize,
    pub rejected: usize,
    pub mean_correlation: Option<f64>,
    pub min_correlation: Option<f64>,
    pub max_correlation: Option<f64>,
    pub cv: Option<CvReport>,
    pub trials: Vec<WebsiteTrial>,
    pub failures: Vec<TrialFailure>,
}

/// One simulated page load: traffic truth (after the VPN, if any) and the
/// spy trace.
pub fn load_site(
    cfg: &ExperimentConfig,
    hub: &HubConfig,
    site: &SiteProfile,
    traffic_index: u64,
    sim_index: u64,
) -> hubspy::Result<(SpyTrace, TrafficTimeline)> {
    let m = cfg.master_seed;
    let dur = cfg.website.duration_ms * 1000;
    let mut tl = gen_web_traffic(site, dur, seed::derive(m, stream::SITE_TRIAL, traffic_index))?;
    if let Some(v) = &cfg.website.vpn {
        tl = vpn_transform(&tl, v, seed::derive(m, stream::VPN, traffic_index))?;
        tl.points.retain(|p| p.t_us < dur);
    }
    let b = run_simulation(hub, &Workload::web(&tl, cfg.jitter_us), dur, seed::derive(m, stream::SIM_NOISE, sim_index))?;
    Ok((b.spy, tl))
}

/// Pearson r between the spy features and binned traffic over the whole
/// load; `None` when either side is constant.
pub fn site_correlation(spy: &SpyTrace, truth: &TrafficTimeline, window_ms: f64, duration_ms: u64) -> hubspy::Result<Option<f64>> {
    let n = (duration_ms as f64 / window_ms).ceil() as usize;
    let f: FeatureSequence<f64> = featurize_len(spy, window_ms, n)?;
    pearson(&f.values, &bin_truth(truth, window_ms, n)?)
}

pub fn site_corpus(cfg: &ExperimentConfig, n: usize) -> Vec<SiteProfile> {
    (0..n).map(|i| SiteProfile::synthetic(i, &cfg.website.corpus, cfg.master_seed)).collect()
}

fn summary_stats(xs: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None, None);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (Some(mean), Some(min), Some(max))
}

fn website(cfg: &ExperimentConfig, dir: &Path, files: &mut Files) -> anyhow::Result<WebsiteReport> {
    use rayon::prelude::*;
    let w = &cfg.website;
    let sites = site_corpus(cfg, w.labels);
    for s in &sites {
        s.validate()?;
    }
    files.json(dir, "models/sites.json", &sites)?;
    let jobs: Vec<(u64, &SiteProfile, usize)> = sites
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..w.traces_per_label).map(move |r| ((i * w.traces_per_label + r) as u64, s, r)))
        .collect();
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(idx, site, rep)| -> anyhow::Result<_> {
            let (mut spy, tl) = load_site(cfg, &cfg.hub, site, idx, idx)?;
            spy.meta.extra.push(("label".into(), site.label.clone()));
            spy.meta.extra.push(("trial".into(), idx.to_string()));
            let name = format!("dataset/{}/r{rep:03}", site.label);
            let a = write_file(dir, &format!("{name}.trace"), &spy_bytes(&spy))?;
            let b = write_file(dir, &format!("{name}.traffic"), &traffic_bytes(&tl))?;
            let r = site_correlation(&spy, &tl, w.window_ms, w.duration_ms)?;
            let feats: FeatureSequence<f32> = featurize_len(&spy, w.window_ms, w.seq_len)?;
            Ok((format!("{name}.trace"), TraceSummary::of(&spy), r, feats.with_label(site.label.clone()), [a, b]))
        })
        .collect();

    let mut failures = Vec::new();
    let mut ok = Vec::new();
    for (r, (idx, site, _)) in results.into_iter().zip(&jobs) {
        match r {
            Ok(v) => ok.push((*idx, site.label.clone(), v)),
            Err(e) => failures.push(TrialFailure {
                index: *idx,
                what: format!("load {}", site.label),
                error: format!("{e:#}"),
            }),
        }
    }
    if ok.is_empty() {
        return Err(hubspy::Error::Domain("every website trial failed".into()).into());
    }
    let summaries: Vec<TraceSummary> = ok.iter().map(|(_, _, v)| v.1.clone()).collect();
    let clean = sanitize_summaries(&summaries, &w.sanitize)?;
    let reasons: BTreeMap<usize, String> = clean.rejected.iter().map(|r| (r.index, r.reason.to_string())).collect();
    let mut trials = Vec::new();
    let mut seqs = Vec::new();
    let mut rs = Vec::new();
    for (i, (idx, label, (trace, summary, r, feats, written))) in ok.into_iter().enumerate() {
        files.0.extend(written);
        let kept = !reasons.contains_key(&i);
        if kept {
            seqs.push(feats);
            if let Some(r) = r {
                rs.push(r);
            }
        }
        trials.push(WebsiteTrial {
            index: idx,
            label,
            trace,
            records: summary.records,
            correlation: r,
            kept,
            rejection: reasons.get(&i).cloned(),
        });
    }
    let kept = seqs.len();
    let data = LabeledDataset::new(seqs, w.seq_len)?;
    let cv = match cross_validate(&data, w.folds, w.pool, &w.train, cfg.master_seed) {
        Ok(cv) => Some(cv),
        Err(e) => {
            failures.push(TrialFailure {
                index: 0,
                what: "cross-validation".into(),
                error: e.to_string(),
            });
            None
        }
    };
    if w.save_model {
        let clf = train_classifier(&data, None, w.pool, &w.train, seed::derive(cfg.master_seed, stream::TRAINING, u64::MAX))?;
        files.json(dir, "models/classifier.json", &clf)?;
    }
    let (mean, min, max) = summary_stats(&rs);
    Ok(WebsiteReport {
        labels: w.labels,
        traces_per_label: w.traces_per_label,
        vpn: w.vpn.is_some(),
        kept,
        rejected: clean.rejected.len(),
        mean_correlation: mean,
        min_correlation: min,
        max_correlation: max,
        cv,
        trials,
        failures,
    })
}

// --------------------------------------------------------------- resolution

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionReport {
    pub repeats: u32,
    pub duration_us: u64,
    pub detection: BurstDetection,
}

fn resolution(cfg: &ExperimentConfig, dir: &Path, files: &mut Files) -> anyhow::Result<ResolutionReport> {
    let r = &cfg.resolution;
    let m = cfg.master_seed;
    let sw = burst_sweep_workload(&r.sizes, r.repeats, r.gap_ms, &r.shape, &cfg.hub.limits(), seed::derive(m, stream::SWEEP, 0))?;
    let b = run_simulation(
        &cfg.hub,
        &Workload::web(&sw.timeline, cfg.jitter_us).with_scenario("resolution"),
        sw.duration_us,
        seed::derive(m, stream::SIM_NOISE, 0),
    )?;
    files.write(dir, "traces/sweep.trace", &spy_bytes(&b.spy))?;
    files.write(dir, "traces/sweep.traffic", &traffic_bytes(&sw.timeline))?;
    files.json(dir, "traces/sweep.bursts.json", &sw.annotations)?;
    let n = (sw.duration_us as f64 / (r.window_ms * 1000.0)).ceil() as usize;
    let f: FeatureSequence<f64> = featurize_len(&b.spy, r.window_ms, n)?;
    let detection = detect_bursts(&f, &sw.annotations, &r.detect)?;
    Ok(ResolutionReport {
        repeats: r.repeats,
        duration_us: sw.duration_us,
        detection,
    })
}

// --------------------------------------------------------------- mitigation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: ArbitrationPolicy,
    pub keystroke: PooledDetection,
    pub f1: f64,
    pub label_accuracy: f64,
    pub correlations: Vec<Option<f64>>,
    /// Undefined correlations count as 0.
    pub mean_correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationReport {
    pub words: Vec<String>,
    pub sites: usize,
    pub policies: Vec<PolicyResult>,
    pub failures: Vec<TrialFailure>,
}

fn mitigation(cfg: &ExperimentConfig, dir: &Path, files: &mut Files) -> anyhow::Result<MitigationReport> {
    use rayon::prelude::*;
    let mp = &cfg.mitigation;
    let m = cfg.master_seed;
    let (_, dict) = dictionary_for(cfg)?;
    let profile = typist_for(cfg);
    let mut rng = seed::rng(seed::derive(m, stream::DICTIONARY, 2));
    let words: Vec<String> = (0..mp.keystroke_words).map(|_| dict[rng.random_range(0..dict.len())].clone()).collect();
    let sites = site_corpus(cfg, mp.sites);
    let tol = cfg.keystroke.f1_tolerance_ms;
    let mut failures = Vec::new();
    let mut policies = Vec::new();
    for (pi, policy) in mp.policies.iter().enumerate() {
        let hub = HubConfig {
            arbitration: policy.clone(),
            ..cfg.hub.clone()
        };
        let typed: Vec<_> = words
            .par_iter()
            .enumerate()
            .map(|(i, w)| type_word(cfg, &hub, &profile, w, i as u64).map(|o| (o.detection(tol), labels_correct(&o, cfg))))
            .collect();
        let mut pooled = PooledDetection::default();
        for (i, r) in typed.into_iter().enumerate() {
            match r {
                Ok((d, lc)) => pooled.add(&d, lc),
                Err(e) => failures.push(TrialFailure {
                    index: i as u64,
                    what: format!("{} word {}", policy.name(), words[i]),
                    error: e.to_string(),
                }),
            }
        }
        let loads: Vec<_> = sites
            .par_iter()
            .enumerate()
            .map(|(s, site)| -> anyhow::Result<_> {
                let (mut spy, tl) = load_site(cfg, &hub, site, s as u64, MITIGATION_SITE_BASE + s as u64)?;
                spy.meta.extra.push(("policy".into(), policy.name().into()));
                let name = format!("traces/p{pi}_{}/{}", policy.name(), site.label);
                let a = write_file(dir, &format!("{name}.trace"), &spy_bytes(&spy))?;
                let b = write_file(dir, &format!("{name}.traffic"), &traffic_bytes(&tl))?;
                Ok((site_correlation(&spy, &tl, cfg.website.window_ms, cfg.website.duration_ms)?, [a, b]))
            })
            .collect();
        let mut correlations = Vec::new();
        for (s, r) in loads.into_iter().enumerate() {
            match r {
                Ok((c, written)) => {
                    files.0.extend(written);
                    correlations.push(c);
                }
                Err(e) => {
                    failures.push(TrialFailure {
                        index: s as u64,
                        what: format!("{} site {}", policy.name(), sites[s].label),
                        error: format!("{e:#}"),
                    });
                    correlations.push(None);
                }
            }
        }
        let mean_correlation = correlations.iter().map(|c| c.unwrap_or(0.0)).sum::<f64>() / correlations.len().max(1) as f64;
        policies.push(PolicyResult {
            policy: policy.clone(),
            keystroke: pooled,
            f1: pooled.f1(),
            label_accuracy: pooled.label_accuracy(),
            correlations,
            mean_correlation,
        });
    }
    Ok(MitigationReport {
        words,
        sites: mp.sites,
        policies,
        failures,
    })
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

fn opt3(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "undefined".into())
}

/// Short human-readable digest of a report.
pub fn summary_text(report: &RunReport) -> String {
    let mut s = String::new();
    match report {
        RunReport::Keystroke(r) => {
            s += &format!("dictionary: {} ({} words)\n", r.dictionary, r.dictionary_size);
            s += &format!("profiling: {} typed, {} kept\n", r.profiling_trials, r.profiling_kept);
            s += &format!("label accuracy: {}\n", pct(r.label_accuracy));
            s += &format!("detection F1: {:.4}\n", r.f1);
            for (k, a) in r.topk.ks.iter().zip(&r.topk.accuracy) {
                s += &format!("top-{k}: {} of {} trials\n", pct(*a), r.topk.trials);
            }
        }
        RunReport::Website(r) => {
            s += &format!("traces: {} kept, {} rejected\n", r.kept, r.rejected);
            s += &format!(
                "correlation: mean {} min {} max {}\n",
                opt3(r.mean_correlation),
                opt3(r.min_correlation),
                opt3(r.max_correlation)
            );
            if let Some(cv) = &r.cv {
                s += &format!("{}-fold CV: top-1 {} top-3 {}\n", cv.k, pct(cv.top1), pct(cv.top3));
            }
        }
        RunReport::Resolution(r) => {
            s += &format!(
                "baseline {:.4} ms, threshold {:.4} ms\n",
                r.detection.baseline_ms, r.detection.threshold_ms
            );
            for d in &r.detection.per_size {
                s += &format!("{:>8} B: {}/{}\n", d.size_bytes, d.detected, d.bursts);
            }
        }
        RunReport::Mitigation(r) => {
            for p in &r.policies {
                s += &format!(
                    "{}: F1 {:.4}, labels {}, mean r {:.3}\n",
                    p.policy.name(),
                    p.f1,
                    pct(p.label_accuracy),
                    p.mean_correlation
                );
            }
        }
    }
    let failures = report.failures();
    if !failures.is_empty() {
        s += &format!("failed trials: {}\n", failures.len());
        for f in failures {
            s += &format!("  {} ({}): {}\n", f.index, f.what, f.error);
        }
    }
    s
}
