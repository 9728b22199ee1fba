use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use hubspy::io::{dataset_files, load_spy_trace, read_key_truth, read_traffic, write_key_truth, write_spy_trace, write_traffic};
use hubspy::keystroke::{detect_key_events, extract_digram_latencies, fit_hmm, infer_labels, n_viterbi, rank_dictionary, DetectorConfig, HmmFitConfig, ProfilingSample};
use hubspy::scenarios::{load_dictionary, sanitize_summaries, synthetic_dictionary, SanitizeConfig, TraceSummary, VpnParams};
use hubspy::seed::{self, stream};
use hubspy::trace::KeyAction;
use hubspy::usb::{ArbitrationPolicy, DeviceId, HubConfig, PayloadSize};
use hubspy::webfp::{cross_validate, featurize_len, top_k, train_classifier, Classifier, FeatureSequence, LabeledDataset, TrainConfig};
use hubspy_cli::config::{ExperimentConfig, Scenario};
use hubspy_cli::run::{self, HmmArtifact};
use hubspy_cli::{reproduce_tables, run_experiment, write_tables, ExitCategory};

/// Simulated USB hub side-channel experiments.
#[derive(Parser)]
#[command(name = "hubspy", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a whole experiment described by a TOML config file.
    Run {
        config: PathBuf,
        /// Run directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the configured worker count.
        #[arg(long)]
        workers: Option<usize>,
        /// Delete an existing run directory first.
        #[arg(long)]
        force: bool,
    },
    /// Simulate one trace and write it with its ground-truth sidecar.
    Simulate(SimulateArgs),
    /// Screen a `<root>/<label>/*.trace` dataset for short or flat traces.
    Sanitize {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = SanitizeConfig::default().min_length_fraction)]
        min_length_fraction: f64,
        #[arg(long, default_value_t = SanitizeConfig::default().stddev_floor_fraction)]
        stddev_floor_fraction: f64,
    },
    /// Fit the keystroke HMM from traces with `.keys` sidecars.
    TrainHmm {
        /// Directory of `*.trace` files with matching `*.keys` files.
        #[arg(long)]
        traces: PathBuf,
        #[command(flatten)]
        dict: DictArgs,
        #[command(flatten)]
        detector: DetectorArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank dictionary words for one keystroke trace.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Also print the N most likely unconstrained state paths.
        #[arg(long, default_value_t = 0)]
        paths: usize,
        #[command(flatten)]
        detector: DetectorArgs,
    },
    /// Train a website classifier on a dataset directory.
    TrainClassifier {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a stored classifier on a dataset, or cross-validate without one.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Burst-size resolution sweep.
    Sweep {
        /// Burst sizes in bytes (defaults to 16 B .. 4 MiB in powers of two).
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<u64>,
        #[arg(long, default_value_t = 5)]
        repeats: u32,
        #[arg(long, default_value_t = 1000)]
        gap_ms: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        hub: HubArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pearson r between a disk-spy trace and its traffic sidecar.
    Correlate {
        #[arg(long)]
        trace: PathBuf,
        /// Defaults to the trace path with a `.traffic` extension.
        #[arg(long)]
        traffic: Option<PathBuf>,
        #[arg(long, default_value_t = 5.0)]
        window_ms: f64,
    },
    /// Compare fair and randomized arbitration on identical workloads.
    Mitigate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        words: usize,
        #[arg(long, default_value_t = 20)]
        sites: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rebuild report tables from run directories.
    Report {
        /// Run directory; repeat for several runs.
        #[arg(long = "run")]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SimScenario {
    Keystroke,
    Website,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Fair,
    Randomized,
    /// Strict priority to the victim device.
    Priority,
}

#[derive(Args)]
struct HubArgs {
    #[arg(long, default_value_t = 1)]
    tt_count: u32,
    #[arg(long, default_value_t = 512)]
    payload: u16,
    #[arg(long, value_enum, default_value_t = Policy::Fair)]
    policy: Policy,
    #[arg(long, default_value_t = 1)]
    policy_seed: u64,
    #[arg(long, default_value_t = hubspy::sim::DEFAULT_JITTER_US)]
    jitter_us: u64,
}

impl HubArgs {
    fn hub(&self) -> anyhow::Result<HubConfig> {
        let hub = HubConfig {
            tt_count: self.tt_count,
            bulk_payload: PayloadSize::new(self.payload)?,
            arbitration: match self.policy {
                Policy::Fair => ArbitrationPolicy::FairRoundRobin,
                Policy::Randomized => ArbitrationPolicy::RandomizedAllocation { seed: self.policy_seed },
                Policy::Priority => ArbitrationPolicy::UnfairPriority {
                    order: vec![DeviceId(1), DeviceId(0)],
                },
            },
            ..HubConfig::default()
        };
        hub.validate()?;
        Ok(hub)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    scenario: SimScenario,
    /// Word typed in the keystroke scenario.
    #[arg(long, default_value = "state")]
    word: String,
    #[arg(long, default_value = "etaoinshrd")]
    alphabet: String,
    /// Synthetic site index in the website scenario.
    #[arg(long, default_value_t = 0)]
    site: usize,
    #[arg(long, default_value_t = 8000)]
    duration_ms: u64,
    /// Route website traffic through a VPN (80 B per packet, 20 ms added
    /// latency, 3 ms jitter).
    #[arg(long)]
    vpn: bool,
    /// Master seed; the trace is trial 0 of that seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    hub: HubArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DictArgs {
    /// Word list, one word per line.
    #[arg(long, conflicts_with = "synthetic")]
    dictionary: Option<PathBuf>,
    /// Size of a synthetic dictionary drawn over `--alphabet`.
    #[arg(long, default_value_t = 1000)]
    synthetic: usize,
    #[arg(long, default_value = "etaoinshrd")]
    alphabet: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct DetectorArgs {
    #[arg(long, default_value_t = DetectorConfig::default().event_threshold_ms)]
    event_threshold_ms: f64,
    #[arg(long, default_value_t = DetectorConfig::default().overlap_threshold_ms)]
    overlap_threshold_ms: f64,
}

impl DetectorArgs {
    fn config(&self) -> anyhow::Result<DetectorConfig> {
        let c = DetectorConfig {
            event_threshold_ms: self.event_threshold_ms,
            overlap_threshold_ms: self.overlap_threshold_ms,
            ..DetectorConfig::default()
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 5.0)]
    window_ms: f64,
    #[arg(long, default_value_t = 1600)]
    seq_len: usize,
    #[arg(long, default_value_t = 32)]
    pool: usize,
    #[arg(long, default_value_t = 16)]
    hidden: usize,
    #[arg(long, default_value_t = 40)]
    epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    learning_rate: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            ..TrainConfig::default()
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let cat = ExitCategory::of(&e);
            eprintln!("error[{cat}]: {e:#}");
            ExitCode::from(cat.code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Run {
            config,
            out,
            workers,
            force,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let dir = out.clone().or_else(|| cfg.output_dir.clone());
            if force {
                if let Some(d) = dir.as_deref().filter(|d| d.exists()) {
                    fs::remove_dir_all(d).with_context(|| format!("cannot remove {}", d.display()))?;
                }
            }
            finish(run_experiment(&cfg, out.as_deref())?)
        }
        Command::Simulate(a) => simulate(a),
        Command::Sanitize {
            dataset,
            min_length_fraction,
            stddev_floor_fraction,
        } => {
            let files = dataset_files(&dataset)?;
            let mut summaries = Vec::new();
            for (_, p) in &files {
                summaries.push(TraceSummary::of(&load_spy_trace(p).with_context(|| p.display().to_string())?));
            }
            let cfg = SanitizeConfig {
                min_length_fraction,
                stddev_floor_fraction,
            };
            let s = sanitize_summaries(&summaries, &cfg)?;
            for r in &s.rejected {
                println!("rejected {} ({})", files[r.index].1.display(), r.reason);
            }
            println!("{} kept, {} rejected", s.kept.len(), s.rejected.len());
            Ok(())
        }
        Command::TrainHmm {
            traces,
            dict,
            detector,
            out,
        } => {
            let det = detector.config()?;
            let dictionary = load_dict(&dict)?;
            let mut paths: Vec<PathBuf> = fs::read_dir(&traces)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "trace"))
                .collect();
            paths.sort();
            let mut corpus = Vec::new();
            let mut skipped = 0;
            for p in &paths {
                let keys = read_key_truth(BufReader::new(fs::File::open(p.with_extension("keys")).with_context(|| format!("missing key sidecar for {}", p.display()))?))?;
                let spy = load_spy_trace(p)?;
                let est = detect_key_events(&spy, &det)?;
                let presses = presses(&est, &det);
                let lat = extract_digram_latencies::<f64>(&presses).unwrap_or_default();
                if dictionary.binary_search(&keys.word).is_ok() && lat.len() + 1 == keys.word.chars().count() {
                    corpus.push(ProfilingSample {
                        word: keys.word,
                        latencies_ms: lat,
                    });
                } else {
                    skipped += 1;
                }
            }
            let alphabet: Vec<char> = dict.alphabet.chars().collect();
            let model = fit_hmm(&corpus, &alphabet, &dictionary, &HmmFitConfig::default())?;
            write_json(&out, &HmmArtifact { model, dictionary })?;
            println!("fitted on {} traces, skipped {skipped}", corpus.len());
            Ok(())
        }
        Command::Decode {
            model,
            trace,
            top,
            paths,
            detector,
        } => {
            let det = detector.config()?;
            let art: HmmArtifact = serde_json::from_slice(&fs::read(&model)?)?;
            let spy = load_spy_trace(&trace)?;
            let est = detect_key_events(&spy, &det)?;
            let lat = extract_digram_latencies::<f64>(&presses(&est, &det))?;
            println!("{} events, {} latencies", est.len(), lat.len());
            let ranked = rank_dictionary(&art.model, &lat, &art.dictionary);
            if ranked.no_eligible {
                println!("no dictionary word of length {}", lat.len() + 1);
            }
            for (i, e) in ranked.entries.iter().take(top).enumerate() {
                println!("{:>4}  {:<12} {:.3}", i + 1, e.word, e.log_likelihood);
            }
            if paths > 0 {
                for p in n_viterbi(&art.model, &lat, paths)? {
                    println!("path  {:<12} {:.3}", art.model.states_word(&p.states), p.log_likelihood);
                }
            }
            Ok(())
        }
        Command::TrainClassifier { dataset, train, out } => {
            let data = load_dataset(&dataset, &train)?;
            let clf = train_classifier(&data, None, train.pool, &train.config(), train.seed)?;
            write_json(&out, &clf)?;
            println!(
                "trained on {} traces, {} labels, final loss {:.4}",
                data.len(),
                data.labels.len(),
                clf.loss_curve.last().copied().unwrap_or(f64::NAN)
            );
            Ok(())
        }
        Command::Evaluate {
            dataset,
            model,
            folds,
            train,
        } => {
            let data = load_dataset(&dataset, &train)?;
            match model {
                Some(m) => {
                    let clf: Classifier<f32> = serde_json::from_slice(&fs::read(&m)?)?;
                    let (mut h1, mut h3, mut n) = (0, 0, 0);
                    for item in &data.items {
                        let label = &data.labels[item.label];
                        let Some(y) = clf.labels.iter().position(|l| l == label) else {
                            continue;
                        };
                        let t = top_k(&clf.predict(&item.values)?, 3);
                        h1 += (t[0] == y) as usize;
                        h3 += t.contains(&y) as usize;
                        n += 1;
                    }
                    let n = n.max(1) as f64;
                    println!("top-1 {:.1}%  top-3 {:.1}%", 100.0 * h1 as f64 / n, 100.0 * h3 as f64 / n);
                }
                None => {
                    let cv = cross_validate(&data, folds, train.pool, &train.config(), train.seed)?;
                    for f in &cv.folds {
                        println!("fold {}: top-1 {:.1}% top-3 {:.1}%", f.fold, 100.0 * f.top1, 100.0 * f.top3);
                    }
                    println!("overall: top-1 {:.1}% top-3 {:.1}%", 100.0 * cv.top1, 100.0 * cv.top3);
                }
            }
            Ok(())
        }
        Command::Sweep {
            sizes,
            repeats,
            gap_ms,
            seed,
            hub,
            out,
        } => {
            let mut cfg = ExperimentConfig::new(Scenario::Resolution, seed);
            cfg.hub = hub.hub()?;
            cfg.jitter_us = hub.jitter_us;
            if !sizes.is_empty() {
                cfg.resolution.sizes = sizes;
            }
            cfg.resolution.repeats = repeats;
            cfg.resolution.gap_ms = gap_ms;
            finish(run_experiment(&cfg, Some(&out))?)
        }
        Command::Correlate { trace, traffic, window_ms } => {
            let spy = load_spy_trace(&trace)?;
            let tp = traffic.unwrap_or_else(|| trace.with_extension("traffic"));
            let tl = read_traffic(BufReader::new(fs::File::open(&tp).with_context(|| format!("cannot open {}", tp.display()))?))?;
            let duration_ms = spy.end_us().div_ceil(1000).max(1);
            match run::site_correlation(&spy, &tl, window_ms, duration_ms)? {
                Some(r) => println!("r = {r:.4}"),
                None => println!("r undefined (constant input)"),
            }
            Ok(())
        }
        Command::Mitigate {
            seed,
            words,
            sites,
            workers,
            out,
        } => {
            let mut cfg = ExperimentConfig::new(Scenario::Mitigation, seed);
            cfg.mitigation.keystroke_words = words;
            cfg.mitigation.sites = sites;
            cfg.workers = workers;
            finish(run_experiment(&cfg, Some(&out))?)
        }
        Command::Report { runs, out } => {
            let tables = reproduce_tables(&runs);
            write_tables(&tables, &out)?;
            for t in &tables {
                println!("{}", t.render());
            }
            Ok(())
        }
    }
}

fn finish((dir, report): (PathBuf, hubspy_cli::RunReport)) -> anyhow::Result<()> {
    print!("{}", run::summary_text(&report));
    println!("run written to {}", dir.display());
    Ok(())
}

fn presses(est: &[u64], det: &DetectorConfig) -> Vec<u64> {
    est.iter()
        .zip(infer_labels(est, det))
        .filter(|(_, l)| *l == KeyAction::Press)
        .map(|(t, _)| *t)
        .collect()
}

fn load_dict(d: &DictArgs) -> anyhow::Result<Vec<String>> {
    Ok(match &d.dictionary {
        Some(p) => load_dictionary(BufReader::new(fs::File::open(p).with_context(|| format!("cannot open {}", p.display()))?))?,
        None => synthetic_dictionary(&d.alphabet, d.synthetic, seed::derive(d.seed, stream::DICTIONARY, 0))?,
    })
}

fn load_dataset(root: &Path, a: &TrainArgs) -> anyhow::Result<LabeledDataset<f32>> {
    let mut seqs = Vec::new();
    for (label, p) in dataset_files(root)? {
        let spy = load_spy_trace(&p).with_context(|| p.display().to_string())?;
        let f: FeatureSequence<f32> = featurize_len(&spy, a.window_ms, a.seq_len)?;
        seqs.push(f.with_label(label));
    }
    Ok(LabeledDataset::new(seqs, a.seq_len)?)
}

fn write_json<T: serde::Serialize>(path: &Path, v: &T) -> anyhow::Result<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(d)?;
    }
    fs::write(path, format!("{}\n", serde_json::to_string_pretty(v)?)).with_context(|| format!("cannot write {}", path.display()))
}

fn simulate(a: SimulateArgs) -> anyhow::Result<()> {
    let hub = a.hub.hub()?;
    let write = |path: &Path, f: &dyn Fn(&mut Vec<u8>) -> hubspy::Result<()>| -> anyhow::Result<()> {
        let mut b = Vec::new();
        f(&mut b)?;
        if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(d)?;
        }
        fs::write(path, b).with_context(|| format!("cannot write {}", path.display()))
    };
    match a.scenario {
        SimScenario::Keystroke => {
            let mut cfg = ExperimentConfig::new(Scenario::Keystroke, a.seed);
            cfg.keystroke.alphabet = a.alphabet.clone();
            cfg.jitter_us = a.hub.jitter_us;
            let profile = run::typist_for(&cfg);
            let keys = hubspy::scenarios::gen_typist_events(&a.word, &profile, seed::derive(a.seed, stream::TYPIST, 0))?;
            let obs = hubspy::keystroke::observe_keystrokes(&hub, &keys, &cfg.keystroke.detector, a.hub.jitter_us, seed::derive(a.seed, stream::SIM_NOISE, 0))?;
            let mut spy = obs.bundle.spy.clone();
            spy.meta.extra.push(("word".into(), a.word.clone()));
            write(&a.out, &|b| write_spy_trace(b, &spy))?;
            write(&a.out.with_extension("keys"), &|b| write_key_truth(b, &keys))?;
            println!("{} records, {} key events detected of {}", spy.len(), obs.estimates_us.len(), keys.events.len());
        }
        SimScenario::Website => {
            let mut cfg = ExperimentConfig::new(Scenario::Website, a.seed);
            cfg.website.duration_ms = a.duration_ms;
            cfg.jitter_us = a.hub.jitter_us;
            if a.vpn {
                cfg.website.vpn = Some(VpnParams {
                    per_packet_overhead_bytes: 80,
                    added_latency_ms: 20.0,
                    jitter_ms: 3.0,
                });
            }
            let sites = run::site_corpus(&cfg, a.site + 1);
            let site = &sites[a.site];
            let (mut spy, tl) = run::load_site(&cfg, &hub, site, 0, 0)?;
            spy.meta.extra.push(("label".into(), site.label.clone()));
            write(&a.out, &|b| write_spy_trace(b, &spy))?;
            write(&a.out.with_extension("traffic"), &|b| write_traffic(b, &tl))?;
            println!("{} records, {} traffic bytes for {}", spy.len(), tl.total_bytes(), site.label);
        }
    }
    Ok(())
}
