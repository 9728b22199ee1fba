//! Report tables assembled from finished run directories.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use hubspy::usb::{bulk_limits, PayloadSize};
use serde::{Deserialize, Serialize};

use crate::run::{load_run, RunMetadata, RunReport};

pub const SIMULATED_BANNER: &str = "simulated, not paper-comparable";

/// Payload sizes of the published bulk-limit table.
pub const TABLE1_PAYLOADS: [u16; 5] = [1, 8, 32, 128, 512];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub run_dir: String,
    pub config_digest: String,
    pub master_seed: u64,
    /// Digest over the run's file table.
    pub files_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub cells: Vec<String>,
    /// Absent for derived constants and absent runs.
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportTable {
    pub name: String,
    pub title: String,
    pub banner: Option<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl ReportTable {
    fn new(name: &str, title: &str, banner: bool, columns: &[&str]) -> Self {
        ReportTable {
            name: name.into(),
            title: title.into(),
            banner: banner.then(|| SIMULATED_BANNER.to_string()),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, cells: Vec<String>, provenance: Option<&Provenance>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(Row {
            cells,
            provenance: provenance.cloned(),
        });
    }

    fn absent(&mut self, what: &str) {
        let mut cells = vec![String::new(); self.columns.len()];
        cells[0] = format!("absent: {what}");
        self.push(cells, None);
    }

    /// Plain-text rendering with aligned columns and a provenance footer.
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{}", self.title).unwrap();
        if let Some(b) = &self.banner {
            writeln!(out, "[{b}]").unwrap();
        }
        let mut widths: Vec<usize> = self.columns.iter().map(|c| c.len()).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(&r.cells) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            parts.join(" | ").trim_end().to_string()
        };
        writeln!(out, "{}", line(&self.columns)).unwrap();
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        writeln!(out, "{}", rule.join("-+-")).unwrap();
        for r in &self.rows {
            writeln!(out, "{}", line(&r.cells)).unwrap();
        }
        let mut seen = Vec::new();
        for p in self.rows.iter().filter_map(|r| r.provenance.as_ref()) {
            if !seen.contains(&p) {
                seen.push(p);
            }
        }
        if !seen.is_empty() {
            writeln!(out, "sources:").unwrap();
            for p in seen {
                writeln!(
                    out,
                    "  {} config={} seed={} files={}",
                    p.run_dir,
                    &p.config_digest[..16.min(p.config_digest.len())],
                    p.master_seed,
                    &p.files_digest[..16.min(p.files_digest.len())]
                )
                .unwrap();
            }
        }
        out
    }
}

pub fn table1() -> ReportTable {
    let mut t = ReportTable::new(
        "table1",
        "Bulk transfer limits per microframe",
        false,
        &["payload (B)", "transfers/uframe", "bytes/uframe", "bytes/s"],
    );
    for p in TABLE1_PAYLOADS {
        let l = bulk_limits(PayloadSize::new(p).expect("published payload"));
        t.push(
            vec![
                p.to_string(),
                l.transfers_per_microframe.to_string(),
                l.bytes_per_microframe.to_string(),
                l.bytes_per_second.to_string(),
            ],
            None,
        );
    }
    t
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn opt3(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "undefined".into())
}

struct Loaded {
    prov: Provenance,
    report: RunReport,
}

/// Builds every table from `runs`. Runs that cannot be read are listed as
/// absent rows; tables with no matching run get a single absent row.
pub fn reproduce_tables(runs: &[PathBuf]) -> Vec<ReportTable> {
    let mut loaded = Vec::new();
    let mut missing = Vec::new();
    for dir in runs {
        match load_run(dir) {
            Ok((meta, report)) => loaded.push(Loaded {
                prov: provenance(dir, &meta),
                report,
            }),
            Err(e) => missing.push(format!("{} ({e:#})", dir.display())),
        }
    }

    let mut t2 = ReportTable::new(
        "table2",
        "Password recovery accuracy (%)",
        true,
        &["dictionary", "alphabet", "words", "trials", "top-1", "top-10", "top-50"],
    );
    let mut det = ReportTable::new(
        "keystroke_detection",
        "Keystroke event detection",
        true,
        &["dictionary", "events", "precision", "recall", "F1", "label accuracy (%)"],
    );
    let mut t3 = ReportTable::new(
        "table3",
        "Website classifier accuracy (%)",
        true,
        &["condition", "labels", "traces kept", "folds", "top-1", "top-3"],
    );
    let mut corr = ReportTable::new(
        "correlation",
        "Spy features vs. binned traffic (Pearson r)",
        true,
        &["condition", "traces", "mean r", "min r", "max r"],
    );
    let mut res = ReportTable::new(
        "resolution",
        "Burst detection by size",
        true,
        &["size (B)", "detected", "bursts", "rate"],
    );
    let mut mit = ReportTable::new(
        "mitigation",
        "Arbitration policy comparison",
        true,
        &["policy", "keystroke F1", "label accuracy (%)", "mean site r", "sites"],
    );

    for l in &loaded {
        let p = Some(&l.prov);
        match &l.report {
            RunReport::Keystroke(r) => {
                let at = |k| r.topk.at(k).map(pct).unwrap_or_else(|| "n/a".into());
                t2.push(
                    vec![
                        r.dictionary.clone(),
                        r.alphabet.chars().count().to_string(),
                        r.dictionary_size.to_string(),
                        r.topk.trials.to_string(),
                        at(1),
                        at(10),
                        at(50),
                    ],
                    p,
                );
                let all = {
                    let mut a = r.profiling;
                    a.true_positives += r.targets.true_positives;
                    a.detected += r.targets.detected;
                    a.actual += r.targets.actual;
                    a
                };
                det.push(
                    vec![
                        r.dictionary.clone(),
                        all.actual.to_string(),
                        format!("{:.4}", all.precision()),
                        format!("{:.4}", all.recall()),
                        format!("{:.4}", r.f1),
                        pct(r.label_accuracy),
                    ],
                    p,
                );
            }
            RunReport::Website(r) => {
                let cond = if r.vpn { "VPN" } else { "no VPN" }.to_string();
                match &r.cv {
                    Some(cv) => t3.push(
                        vec![
                            cond.clone(),
                            r.labels.to_string(),
                            r.kept.to_string(),
                            cv.k.to_string(),
                            pct(cv.top1),
                            pct(cv.top3),
                        ],
                        p,
                    ),
                    None => t3.push(
                        vec![cond.clone(), r.labels.to_string(), r.kept.to_string(), "failed".into(), String::new(), String::new()],
                        p,
                    ),
                }
                corr.push(
                    vec![
                        cond,
                        r.trials.len().to_string(),
                        opt3(r.mean_correlation),
                        opt3(r.min_correlation),
                        opt3(r.max_correlation),
                    ],
                    p,
                );
            }
            RunReport::Resolution(r) => {
                for d in &r.detection.per_size {
                    res.push(
                        vec![
                            d.size_bytes.to_string(),
                            d.detected.to_string(),
                            d.bursts.to_string(),
                            format!("{:.2}", d.rate()),
                        ],
                        p,
                    );
                }
            }
            RunReport::Mitigation(r) => {
                for pr in &r.policies {
                    mit.push(
                        vec![
                            pr.policy.name().to_string(),
                            format!("{:.4}", pr.f1),
                            pct(pr.label_accuracy),
                            format!("{:.3}", pr.mean_correlation),
                            pr.correlations.len().to_string(),
                        ],
                        p,
                    );
                }
            }
        }
    }

    let mut tables = vec![table1(), t2, det, t3, corr, res, mit];
    for t in tables.iter_mut().skip(1) {
        for m in &missing {
            t.absent(m);
        }
        if t.rows.is_empty() {
            t.absent("no run");
        }
    }
    tables
}

fn provenance(dir: &Path, meta: &RunMetadata) -> Provenance {
    Provenance {
        run_dir: dir.display().to_string(),
        config_digest: meta.config_digest.clone(),
        master_seed: meta.master_seed,
        files_digest: meta.files_digest(),
    }
}

/// Writes `<name>.txt` per table plus `tables.json`.
pub fn write_tables(tables: &[ReportTable], out: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    for t in tables {
        fs::write(out.join(format!("{}.txt", t.name)), t.render())?;
    }
    let mut json = serde_json::to_string_pretty(tables)?;
    json.push('\n');
    fs::write(out.join("tables.json"), json)?;
    Ok(())
}
