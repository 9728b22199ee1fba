//! Line-oriented text formats for traces, ground truth and features.
//!
//! Every file starts with optional `# key=value` header lines followed by
//! comma-separated base-10 records. Spy traces hold `t_us,delay_us`, key
//! truth holds `t_us,press|release,char` and traffic truth holds
//! `t_us,bytes`. Feature files hold one value per line.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::trace::{KeyAction, KeyEvent, KeyEventTrace, SpyRecord, SpyTrace, TraceMeta, TrafficPoint, TrafficTimeline};
use crate::webfp::FeatureSequence;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

struct Parsed {
    header: Vec<(String, String)>,
    /// `(line number, fields)`
    rows: Vec<(usize, Vec<String>)>,
}

fn parse<R: BufRead>(reader: R) -> Result<Parsed> {
    let mut header = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if let Some(h) = t.strip_prefix('#') {
            if !rows.is_empty() {
                return Err(parse_err(n, "header line after records"));
            }
            if let Some((k, v)) = h.split_once('=') {
                header.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        rows.push((n, t.split(',').map(|f| f.trim().to_string()).collect()));
    }
    Ok(Parsed { header, rows })
}

fn field<T: FromStr>(line: usize, s: &str, what: &str) -> Result<T> {
    s.parse().map_err(|_| parse_err(line, format!("bad {what} {s:?}")))
}

fn expect_fields(line: usize, fields: &[String], n: usize) -> Result<()> {
    if fields.len() != n {
        return Err(parse_err(line, format!("expected {n} fields, found {}", fields.len())));
    }
    Ok(())
}

pub fn write_spy_trace<W: Write>(mut w: W, trace: &SpyTrace) -> Result<()> {
    let m = &trace.meta;
    writeln!(w, "# scenario={}", m.scenario)?;
    writeln!(w, "# seed={}", m.seed)?;
    writeln!(w, "# hub_digest={}", m.hub_digest)?;
    writeln!(w, "# jitter_us={}", m.jitter_us)?;
    for (k, v) in &m.extra {
        writeln!(w, "# {k}={v}")?;
    }
    for r in &trace.records {
        writeln!(w, "{},{}", r.t_us, r.delay_us)?;
    }
    Ok(())
}

pub fn read_spy_trace<R: BufRead>(reader: R) -> Result<SpyTrace> {
    let p = parse(reader)?;
    let mut meta = TraceMeta::default();
    for (k, v) in p.header {
        match k.as_str() {
            "scenario" => meta.scenario = v,
            "seed" => meta.seed = field(0, &v, "seed")?,
            "hub_digest" => meta.hub_digest = v,
            "jitter_us" => meta.jitter_us = field(0, &v, "jitter")?,
            _ => meta.extra.push((k, v)),
        }
    }
    let records = p
        .rows
        .iter()
        .map(|(n, f)| {
            expect_fields(*n, f, 2)?;
            Ok(SpyRecord {
                t_us: field(*n, &f[0], "timestamp")?,
                delay_us: field(*n, &f[1], "delay")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let trace = SpyTrace { records, meta };
    trace.validate()?;
    Ok(trace)
}

pub fn write_key_truth<W: Write>(mut w: W, keys: &KeyEventTrace) -> Result<()> {
    writeln!(w, "# word={}", keys.word)?;
    for e in &keys.events {
        writeln!(w, "{},{},{}", e.t_us, e.action.as_str(), e.ch)?;
    }
    Ok(())
}

/// Keystroke indices are rebuilt from the word: presses in order, and each
/// release goes to the oldest held key with its character.
pub fn read_key_truth<R: BufRead>(reader: R) -> Result<KeyEventTrace> {
    let p = parse(reader)?;
    let word = p
        .header
        .iter()
        .find(|(k, _)| k == "word")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| parse_err(1, "missing `# word=` header"))?;
    let chars: Vec<char> = word.chars().collect();
    let mut next_press = 0usize;
    let mut held: Vec<usize> = Vec::new();
    let mut events = Vec::with_capacity(p.rows.len());
    for (n, f) in &p.rows {
        expect_fields(*n, f, 3)?;
        let t_us = field(*n, &f[0], "timestamp")?;
        let mut cs = f[2].chars();
        let ch = match (cs.next(), cs.next()) {
            (Some(c), None) => c,
            _ => return Err(parse_err(*n, format!("bad character {:?}", f[2]))),
        };
        let (action, index) = match f[1].as_str() {
            "press" => {
                if chars.get(next_press) != Some(&ch) {
                    return Err(parse_err(*n, format!("press of {ch:?} out of word order")));
                }
                held.push(next_press);
                next_press += 1;
                (KeyAction::Press, next_press - 1)
            }
            "release" => {
                let pos = held
                    .iter()
                    .position(|&i| chars[i] == ch)
                    .ok_or_else(|| parse_err(*n, format!("release of {ch:?} without press")))?;
                (KeyAction::Release, held.remove(pos))
            }
            other => return Err(parse_err(*n, format!("bad action {other:?}"))),
        };
        events.push(KeyEvent { t_us, action, ch, index });
    }
    let keys = KeyEventTrace { events, word };
    keys.validate()?;
    Ok(keys)
}

pub fn write_traffic<W: Write>(mut w: W, traffic: &TrafficTimeline) -> Result<()> {
    for p in &traffic.points {
        writeln!(w, "{},{}", p.t_us, p.bytes)?;
    }
    Ok(())
}

pub fn read_traffic<R: BufRead>(reader: R) -> Result<TrafficTimeline> {
    let p = parse(reader)?;
    let points = p
        .rows
        .iter()
        .map(|(n, f)| {
            expect_fields(*n, f, 2)?;
            Ok(TrafficPoint {
                t_us: field(*n, &f[0], "timestamp")?,
                bytes: field(*n, &f[1], "byte count")?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tl = TrafficTimeline { points };
    tl.validate()?;
    Ok(tl)
}

pub fn write_features<S: Scalar, W: Write>(mut w: W, f: &FeatureSequence<S>) -> Result<()> {
    writeln!(w, "# window_ms={}", f.window_ms)?;
    if let Some(l) = &f.label {
        writeln!(w, "# label={l}")?;
    }
    for v in &f.values {
        writeln!(w, "{v}")?;
    }
    Ok(())
}

pub fn read_features<S: Scalar, R: BufRead>(reader: R) -> Result<FeatureSequence<S>> {
    let p = parse(reader)?;
    let head: BTreeMap<String, String> = p.header.into_iter().collect();
    let window_ms = match head.get("window_ms") {
        Some(v) => field(0, v, "window")?,
        None => return Err(parse_err(1, "missing `# window_ms=` header")),
    };
    let values = p
        .rows
        .iter()
        .map(|(n, f)| {
            expect_fields(*n, f, 1)?;
            Ok(S::of(field::<f64>(*n, &f[0], "value")?))
        })
        .collect::<Result<Vec<S>>>()?;
    Ok(FeatureSequence {
        values,
        window_ms,
        label: head.get("label").cloned(),
    })
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(fs::File::open(path)?))
}

pub fn load_spy_trace(path: &Path) -> Result<SpyTrace> {
    read_spy_trace(open(path)?)
}

pub fn save_spy_trace(path: &Path, trace: &SpyTrace) -> Result<()> {
    let mut buf = Vec::new();
    write_spy_trace(&mut buf, trace)?;
    Ok(fs::write(path, buf)?)
}

/// Trace files of a dataset directory laid out as `<root>/<label>/*.trace`,
/// sorted by label then file name.
pub fn dataset_files(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    for d in dirs {
        let label = d.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let mut files: Vec<PathBuf> = fs::read_dir(&d)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "trace"))
            .collect();
        files.sort();
        out.extend(files.into_iter().map(|f| (label.clone(), f)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spy_round_trip() {
        let t = SpyTrace {
            records: vec![SpyRecord { t_us: 1000, delay_us: 1000 }, SpyRecord { t_us: 3000, delay_us: 2000 }],
            meta: TraceMeta {
                scenario: "keystroke".into(),
                seed: 7,
                hub_digest: "abcd".into(),
                jitter_us: 50,
                extra: vec![("word".into(), "tides".into())],
            },
        };
        let mut buf = Vec::new();
        write_spy_trace(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# scenario=keystroke\n# seed=7\n"));
        assert!(text.ends_with("1000,1000\n3000,2000\n"));
        assert_eq!(read_spy_trace(&buf[..]).unwrap(), t);
    }

    #[test]
    fn spy_parse_errors_carry_lines() {
        let bad = "# seed=1\n1000,1000\n2000\n";
        assert!(matches!(read_spy_trace(bad.as_bytes()), Err(Error::Parse { line: 3, .. })));
        assert!(read_spy_trace("1000,x\n".as_bytes()).is_err());
        assert!(read_spy_trace("1000,1000\n1500,1000\n".as_bytes()).is_err());
    }

    #[test]
    fn key_truth_round_trip_with_overlap_and_repeats() {
        let text = "# word=tree\n0,press,t\n80000,release,t\n200000,press,r\n380000,press,e\n395000,release,r\n470000,release,e\n600000,press,e\n690000,release,e\n";
        let k = read_key_truth(text.as_bytes()).unwrap();
        assert_eq!(k.overlap_count(), 1);
        assert_eq!(k.events[5].index, 2);
        let mut buf = Vec::new();
        write_key_truth(&mut buf, &k).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn traffic_and_features_round_trip() {
        let tl = TrafficTimeline {
            points: vec![TrafficPoint { t_us: 5, bytes: 1448 }, TrafficPoint { t_us: 9, bytes: 60 }],
        };
        let mut buf = Vec::new();
        write_traffic(&mut buf, &tl).unwrap();
        assert_eq!(read_traffic(&buf[..]).unwrap(), tl);

        let f = FeatureSequence {
            values: vec![0.125f64, 0.25, 1.5],
            window_ms: 5.0,
            label: Some("site003".into()),
        };
        let mut buf = Vec::new();
        write_features(&mut buf, &f).unwrap();
        assert_eq!(read_features::<f64, _>(&buf[..]).unwrap(), f);
    }
}
