use std::fs;
use std::path::Path;
use std::process::Command;

use hubspy_cli::config::{ExperimentConfig, Scenario};
use hubspy_cli::run::{load_run, RunReport, RUN_FILE};
use hubspy_cli::{reproduce_tables, run_experiment, write_tables, ExitCategory};

fn count_ext(dir: &Path, ext: &str) -> usize {
    let mut n = 0;
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            n += count_ext(&p, ext);
        } else if p.extension().is_some_and(|x| x == ext) {
            n += 1;
        }
    }
    n
}

fn small_keystroke() -> ExperimentConfig {
    let mut c = ExperimentConfig::from_toml(
        r#"
scenario = "keystroke"
master_seed = 5

[keystroke]
dictionary_size = 120
profiling_repeats = 1
targets = 10
trials_per_word = 3
"#,
    )
    .unwrap();
    c.workers = 2;
    c
}

#[test]
fn keystroke_run_writes_thirty_traces_and_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("ks");
    let (_, report) = run_experiment(&small_keystroke(), Some(&dir)).unwrap();
    assert_eq!(count_ext(&dir.join("traces"), "trace"), 30);
    assert_eq!(count_ext(&dir.join("traces"), "keys"), 30);
    for f in ["models/hmm.json", "models/profiling.json", "reports/report.json", "reports/summary.txt", "config.toml"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
    let RunReport::Keystroke(r) = &report else { panic!() };
    assert_eq!(r.trials.len(), 30);
    assert!(r.failures.is_empty());
    assert_eq!(r.topk.trials, 30);

    let (meta, loaded) = load_run(&dir).unwrap();
    assert_eq!(loaded, report);
    assert_eq!(meta.master_seed, 5);
    assert_eq!(meta.config_digest, small_keystroke().digest());
    assert!(meta.files.contains_key(&r.trials[0].trace));
    let words: std::collections::BTreeSet<_> = r.trials.iter().map(|t| &t.word).collect();
    assert!(words.len() > 1 && words.len() <= 10);
    assert!(r.trials.chunks(3).all(|c| c.iter().all(|t| t.word == c[0].word)));
    for (rel, digest) in &meta.files {
        let bytes = fs::read(dir.join(rel)).unwrap();
        assert_eq!(&hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&bytes)), digest, "{rel}");
    }
}

#[test]
fn failed_trials_do_not_abort_the_run() {
    let mut c = small_keystroke();
    c.keystroke.words = vec!["zzzz".into()];
    c.keystroke.trials_per_word = 1;
    let tmp = tempfile::tempdir().unwrap();
    // 'z' is outside the typist alphabet, so the trial fails and the run continues.
    let (_, report) = run_experiment(&c, Some(&tmp.path().join("r"))).unwrap();
    let RunReport::Keystroke(r) = report else { panic!() };
    assert_eq!(r.failures.len(), 1);
    assert!(r.trials.is_empty());
}

#[test]
fn website_run_builds_labeled_dataset() {
    let mut c = ExperimentConfig::new(Scenario::Website, 3);
    c.website.labels = 3;
    c.website.traces_per_label = 5;
    c.website.train.epochs = 2;
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("web");
    let (_, report) = run_experiment(&c, Some(&dir)).unwrap();
    let files = hubspy::io::dataset_files(&dir.join("dataset")).unwrap();
    assert_eq!(files.len(), 15);
    assert_eq!(count_ext(&dir.join("dataset"), "traffic"), 15);
    let RunReport::Website(r) = report else { panic!() };
    let cv = r.cv.unwrap();
    assert_eq!(cv.k, 5);
    assert_eq!(cv.labels, vec!["site000", "site001", "site002"]);
    assert_eq!(cv.assignment.len(), r.kept);
}

#[test]
fn occupied_output_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("x"), "").unwrap();
    let err = run_experiment(&small_keystroke(), Some(tmp.path())).unwrap_err();
    assert_eq!(ExitCategory::of(&err), ExitCategory::Config);
}

#[test]
fn tables_from_runs_carry_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    let mut fair = ExperimentConfig::new(Scenario::Mitigation, 2);
    fair.mitigation.keystroke_words = 6;
    fair.mitigation.sites = 2;
    let run = tmp.path().join("mit");
    run_experiment(&fair, Some(&run)).unwrap();
    let tables = reproduce_tables(&[run.clone(), tmp.path().join("missing")]);
    let mit = tables.iter().find(|t| t.name == "mitigation").unwrap();
    assert_eq!(mit.rows.len(), 3);
    assert_eq!(mit.rows[0].cells[0], "fair_round_robin");
    assert_eq!(mit.rows[1].cells[0], "randomized_allocation");
    assert!(mit.rows[2].cells[0].starts_with("absent"));
    let p = mit.rows[0].provenance.as_ref().unwrap();
    assert_eq!(p.master_seed, 2);
    assert_eq!(p.config_digest, fair.digest());

    let out = tmp.path().join("tables");
    write_tables(&tables, &out).unwrap();
    let first = fs::read(out.join("tables.json")).unwrap();
    write_tables(&reproduce_tables(&[run, tmp.path().join("missing")]), &out).unwrap();
    assert_eq!(first, fs::read(out.join("tables.json")).unwrap());
}

fn hubspy(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_hubspy")).args(args).output().unwrap()
}

#[test]
fn binary_simulate_and_correlate() {
    let tmp = tempfile::tempdir().unwrap();
    let trace = tmp.path().join("site.trace");
    let t = trace.to_str().unwrap();
    let out = hubspy(&["simulate", "--scenario", "website", "--site", "2", "--out", t]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("site.traffic").is_file());
    let out = hubspy(&["correlate", "--trace", t]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    let r: f64 = text.trim().strip_prefix("r = ").unwrap().parse().unwrap();
    assert!(r > 0.8, "{r}");

    let keys = tmp.path().join("word.trace");
    let out = hubspy(&["simulate", "--scenario", "keystroke", "--word", "others", "--out", keys.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(tmp.path().join("word.keys").is_file());
}

#[test]
fn binary_run_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("exp.toml");
    fs::write(
        &cfg,
        "scenario = \"resolution\"\nmaster_seed = 4\n[resolution]\nsizes = [16, 262144]\nrepeats = 2\n",
    )
    .unwrap();
    let run = tmp.path().join("run");
    let out = hubspy(&["run", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join(RUN_FILE).is_file());
    // A second run into the same directory needs --force.
    let again = hubspy(&["run", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(ExitCategory::Config.code()));
    let forced = hubspy(&["run", cfg.to_str().unwrap(), "--out", run.to_str().unwrap(), "--force"]);
    assert!(forced.status.success());

    let tables = tmp.path().join("tables");
    let out = hubspy(&["report", "--run", run.to_str().unwrap(), "--out", tables.to_str().unwrap()]);
    assert!(out.status.success());
    let res = fs::read_to_string(tables.join("resolution.txt")).unwrap();
    assert!(res.contains("simulated, not paper-comparable"));
    assert!(res.contains("262144"));
    assert!(fs::read_to_string(tables.join("table1.txt")).unwrap().contains("53248000"));
}

#[test]
fn binary_failures_exit_with_a_category() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "scenario = \"website\"\nmaster_seed = 1\n[website]\nfolds = 1\n").unwrap();
    let out = hubspy(&["run", bad.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(ExitCategory::Config.code()));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[config]"));

    let out = hubspy(&["run", tmp.path().join("nope.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(ExitCategory::Io.code()));

    let garbage = tmp.path().join("g.trace");
    fs::write(&garbage, "1000,1000\nnot,a,number\n").unwrap();
    let out = hubspy(&["correlate", "--trace", garbage.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(ExitCategory::Data.code()));

    assert_eq!(hubspy(&["frobnicate"]).status.code(), Some(ExitCategory::Usage.code()));
}

#[test]
fn binary_hmm_train_and_decode() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("ks");
    let (_, report) = run_experiment(&small_keystroke(), Some(&dir)).unwrap();
    let RunReport::Keystroke(r) = report else { panic!() };
    let model = tmp.path().join("hmm.json");
    let out = hubspy(&[
        "train-hmm",
        "--traces",
        dir.join("traces").to_str().unwrap(),
        "--synthetic",
        "120",
        "--seed",
        "5",
        "--out",
        model.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = hubspy(&[
        "decode",
        "--model",
        dir.join("models/hmm.json").to_str().unwrap(),
        "--trace",
        dir.join(&r.trials[0].trace).to_str().unwrap(),
        "--paths",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().any(|l| l.trim_start().starts_with("1 ")), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("path")).count(), 3);
}
