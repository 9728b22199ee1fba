use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::seed;
use crate::trace::{KeyAction, KeyEvent, KeyEventTrace};

/// Mean and standard deviation of a positive latency, in milliseconds.
///
/// Samples are drawn from the log-normal distribution with this mean and
/// standard deviation; a zero standard deviation yields the mean exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyParams {
    pub mean_ms: f64,
    pub stddev_ms: f64,
}

impl LatencyParams {
    pub fn new(mean_ms: f64, stddev_ms: f64) -> Self {
        LatencyParams { mean_ms, stddev_ms }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !(self.mean_ms > 0.0) || !(self.stddev_ms >= 0.0) {
            return domain(format!("{what}: mean must be > 0 and stddev >= 0, got {self:?}"));
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut seed::Rng) -> f64 {
        if self.stddev_ms == 0.0 {
            return self.mean_ms;
        }
        let cv2 = (self.stddev_ms / self.mean_ms).powi(2);
        let sigma = (1.0 + cv2).ln().sqrt();
        let mu = self.mean_ms.ln() - sigma * sigma / 2.0;
        LogNormal::new(mu, sigma)
            .expect("sigma is finite and positive")
            .sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DigramEntry {
    /// Two characters: the first and second key.
    pub pair: String,
    pub mean_ms: f64,
    pub stddev_ms: f64,
}

/// Timing habits of one typist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TypistProfileFile", into = "TypistProfileFile")]
pub struct TypistProfile {
    pub alphabet: Vec<char>,
    /// Press-to-press latency, indexed `first * |alphabet| + second`.
    digrams: Vec<LatencyParams>,
    pub hold_time: LatencyParams,
    /// Probability that a typed word contains an overlapping keystroke.
    pub overlap_rate: f64,
    /// Time from the next key's press to the previous key's release when
    /// keystrokes overlap.
    pub overlap_separation: LatencyParams,
    /// Idle time before the first press.
    pub lead_in_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TypistProfileFile {
    alphabet: String,
    overlap_rate: f64,
    #[serde(default = "default_lead_in")]
    lead_in_ms: f64,
    hold_time: LatencyParams,
    overlap_separation: LatencyParams,
    digram: Vec<DigramEntry>,
}

fn default_lead_in() -> f64 {
    500.0
}

impl TryFrom<TypistProfileFile> for TypistProfile {
    type Error = Error;
    fn try_from(f: TypistProfileFile) -> Result<Self> {
        let alphabet: Vec<char> = f.alphabet.chars().collect();
        let mut table = BTreeMap::new();
        for d in &f.digram {
            let cs: Vec<char> = d.pair.chars().collect();
            if cs.len() != 2 {
                return domain(format!("digram pair {:?} must have two characters", d.pair));
            }
            table.insert((cs[0], cs[1]), LatencyParams::new(d.mean_ms, d.stddev_ms));
        }
        let mut digrams = Vec::with_capacity(alphabet.len() * alphabet.len());
        for &a in &alphabet {
            for &b in &alphabet {
                let p = table
                    .get(&(a, b))
                    .ok_or_else(|| Error::Domain(format!("missing digram {a}{b}")))?;
                digrams.push(*p);
            }
        }
        let p = TypistProfile {
            alphabet,
            digrams,
            hold_time: f.hold_time,
            overlap_rate: f.overlap_rate,
            overlap_separation: f.overlap_separation,
            lead_in_ms: f.lead_in_ms,
        };
        p.validate()?;
        Ok(p)
    }
}

impl From<TypistProfile> for TypistProfileFile {
    fn from(p: TypistProfile) -> Self {
        let n = p.alphabet.len();
        let mut digram = Vec::with_capacity(n * n);
        for (i, &a) in p.alphabet.iter().enumerate() {
            for (j, &b) in p.alphabet.iter().enumerate() {
                let d = p.digrams[i * n + j];
                digram.push(DigramEntry {
                    pair: format!("{a}{b}"),
                    mean_ms: d.mean_ms,
                    stddev_ms: d.stddev_ms,
                });
            }
        }
        TypistProfileFile {
            alphabet: p.alphabet.iter().collect(),
            overlap_rate: p.overlap_rate,
            lead_in_ms: p.lead_in_ms,
            hold_time: p.hold_time,
            overlap_separation: p.overlap_separation,
            digram,
        }
    }
}

/// Knobs for [`TypistProfile::synthetic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TypistCalibration {
    /// Digram means are drawn uniformly from this range.
    pub digram_mean_ms: (f64, f64),
    /// Per-digram standard deviation as a fraction of its mean.
    pub digram_cv: f64,
    pub hold_time: LatencyParams,
    pub overlap_rate: f64,
    pub overlap_separation: LatencyParams,
}

impl Default for TypistCalibration {
    fn default() -> Self {
        TypistCalibration {
            digram_mean_ms: (170.0, 420.0),
            digram_cv: 0.2,
            hold_time: LatencyParams::new(85.0, 12.0),
            overlap_rate: 0.104,
            overlap_separation: LatencyParams::new(18.0, 7.0),
        }
    }
}

impl TypistProfile {
    /// Profile where every digram shares the same latency parameters.
    pub fn uniform(alphabet: &str, digram: LatencyParams, hold_time: LatencyParams) -> Self {
        let alphabet: Vec<char> = alphabet.chars().collect();
        let n = alphabet.len();
        TypistProfile {
            alphabet,
            digrams: vec![digram; n * n],
            hold_time,
            overlap_rate: 0.0,
            overlap_separation: LatencyParams::new(20.0, 0.0),
            lead_in_ms: default_lead_in(),
        }
    }

    /// Seeded synthetic typist over `alphabet`.
    pub fn synthetic(alphabet: &str, calib: &TypistCalibration, seed: u64) -> Self {
        let mut rng = seed::rng(seed::derive(seed, seed::stream::PROFILE, 0));
        let alphabet: Vec<char> = alphabet.chars().collect();
        let n = alphabet.len();
        let (lo, hi) = calib.digram_mean_ms;
        let digrams = (0..n * n)
            .map(|_| {
                let m = rng.random_range(lo..hi);
                LatencyParams::new(m, m * calib.digram_cv)
            })
            .collect();
        TypistProfile {
            alphabet,
            digrams,
            hold_time: calib.hold_time,
            overlap_rate: calib.overlap_rate,
            overlap_separation: calib.overlap_separation,
            lead_in_ms: default_lead_in(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphabet.is_empty() {
            return domain("typist alphabet is empty");
        }
        let n = self.alphabet.len();
        if self.digrams.len() != n * n {
            return domain("digram table does not cover alphabet squared");
        }
        if !(0.0..=1.0).contains(&self.overlap_rate) {
            return domain(format!("overlap rate {} outside [0, 1]", self.overlap_rate));
        }
        for d in &self.digrams {
            d.validate("digram latency")?;
        }
        self.hold_time.validate("hold time")?;
        self.overlap_separation.validate("overlap separation")?;
        if !(self.lead_in_ms >= 0.0) {
            return domain("lead-in must be non-negative");
        }
        Ok(())
    }

    fn index(&self, c: char) -> Option<usize> {
        self.alphabet.iter().position(|&a| a == c)
    }

    pub fn digram(&self, a: char, b: char) -> Option<LatencyParams> {
        let n = self.alphabet.len();
        Some(self.digrams[self.index(a)? * n + self.index(b)?])
    }

    pub fn set_digram(&mut self, a: char, b: char, p: LatencyParams) -> Result<()> {
        let n = self.alphabet.len();
        let (i, j) = match (self.index(a), self.index(b)) {
            (Some(i), Some(j)) => (i, j),
            _ => return domain(format!("digram {a}{b} outside alphabet")),
        };
        self.digrams[i * n + j] = p;
        Ok(())
    }
}

/// Lower bound on any sampled interval.
const MIN_GAP_MS: f64 = 1.0;

fn ms_to_us(ms: f64) -> u64 {
    (ms * 1000.0).round() as u64
}

/// Simulates one typing of `word`.
///
/// Consecutive presses are separated by the profile's digram latency. With
/// probability `overlap_rate` per word (spread evenly over its key
/// boundaries) the next key is pressed before the previous one is released;
/// the release then follows the next press by the overlap separation.
/// Otherwise the previous key is released after its hold time, never later
/// than 1 ms before the next press.
pub fn gen_typist_events(word: &str, profile: &TypistProfile, seed: u64) -> Result<KeyEventTrace> {
    profile.validate()?;
    let chars: Vec<char> = word.chars().collect();
    if chars.is_empty() {
        return domain("cannot type an empty word");
    }
    if let Some(c) = chars.iter().find(|c| profile.index(**c).is_none()) {
        return domain(format!("character {c:?} outside the typist alphabet"));
    }
    let mut rng = seed::rng(seed::derive(seed, seed::stream::TYPIST, 0));
    let n = chars.len();
    let boundary_overlap = if n > 1 {
        1.0 - (1.0 - profile.overlap_rate).powf(1.0 / (n - 1) as f64)
    } else {
        0.0
    };

    let mut press = vec![0.0f64; n];
    let mut release = vec![0.0f64; n];
    press[0] = profile.lead_in_ms;
    for i in 1..n {
        let lat = profile
            .digram(chars[i - 1], chars[i])
            .expect("checked above")
            .sample(&mut rng)
            .max(MIN_GAP_MS);
        press[i] = press[i - 1] + lat;
        let overlap = rng.random_bool(boundary_overlap);
        if overlap {
            let sep = profile.overlap_separation.sample(&mut rng).max(MIN_GAP_MS);
            release[i - 1] = press[i] + sep;
        } else {
            let hold = profile.hold_time.sample(&mut rng).max(MIN_GAP_MS);
            let latest = (lat - MIN_GAP_MS).max(MIN_GAP_MS / 2.0);
            release[i - 1] = press[i - 1] + hold.min(latest);
        }
    }
    release[n - 1] = press[n - 1] + profile.hold_time.sample(&mut rng).max(MIN_GAP_MS);
    // A release may not precede the key's own press after rounding.
    let mut events = Vec::with_capacity(2 * n);
    for i in 0..n {
        let p = ms_to_us(press[i]);
        let r = ms_to_us(release[i]).max(p + 1);
        events.push(KeyEvent {
            t_us: p,
            action: KeyAction::Press,
            ch: chars[i],
            index: i,
        });
        events.push(KeyEvent {
            t_us: r,
            action: KeyAction::Release,
            ch: chars[i],
            index: i,
        });
    }
    events.sort_by_key(|e| (e.t_us, e.index, e.action));
    Ok(KeyEventTrace {
        events,
        word: word.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(mean: f64) -> TypistProfile {
        TypistProfile::uniform("ab", LatencyParams::new(mean, 0.0), LatencyParams::new(80.0, 0.0))
    }

    #[test]
    fn two_letters_four_events() {
        let t = gen_typist_events("ab", &flat(200.0), 1).unwrap();
        assert_eq!(t.events.len(), 4);
        let p = t.press_times_us();
        assert!(p[0] < p[1]);
        t.validate().unwrap();
    }

    #[test]
    fn zero_variance_latency_is_exact() {
        let t = gen_typist_events("ab", &flat(200.0), 9).unwrap();
        let p = t.press_times_us();
        assert_eq!(p[1] - p[0], 200_000);
    }

    #[test]
    fn zero_variance_timing_sums() {
        let word = "abbaab";
        let t = gen_typist_events(word, &flat(150.0), 2).unwrap();
        let p = t.press_times_us();
        assert_eq!(p[p.len() - 1] - p[0], 150_000 * (word.len() as u64 - 1));
        let last_release = t.events.iter().map(|e| e.t_us).max().unwrap();
        assert!(last_release >= p[0] + 150_000 * 5);
        assert_eq!(t.overlap_count(), 0);
    }

    #[test]
    fn outside_alphabet_is_rejected() {
        assert!(matches!(
            gen_typist_events("abc", &flat(200.0), 1),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn deterministic_per_seed() {
        let p = TypistProfile::synthetic("etaoinshrd", &TypistCalibration::default(), 4);
        let a = gen_typist_events("notes", &p, 10).unwrap();
        assert_eq!(a, gen_typist_events("notes", &p, 10).unwrap());
        assert_ne!(a, gen_typist_events("notes", &p, 11).unwrap());
    }

    #[test]
    fn overlap_rate_per_trace() {
        let p = TypistProfile::synthetic("etaoinshrd", &TypistCalibration::default(), 4);
        let words = ["stone", "shore", "another", "tide", "ratio", "hornet", "distant"];
        let n = 10_000;
        let with = (0..n)
            .filter(|&i| {
                let w = words[i % words.len()];
                gen_typist_events(w, &p, i as u64).unwrap().overlap_count() > 0
            })
            .count();
        let frac = with as f64 / n as f64;
        assert!((frac - 0.104).abs() <= 0.01, "{frac}");
    }

    #[test]
    fn overlapping_pairs_sit_closer_than_sequential_ones() {
        let p = TypistProfile::synthetic("etaoinshrd", &TypistCalibration::default(), 4);
        let mut overlap_sep = Vec::new();
        let mut flight = Vec::new();
        for i in 0..3000 {
            let t = gen_typist_events("tornadoes", &p, i).unwrap();
            let n = t.word.len();
            let mut press = vec![0u64; n];
            let mut release = vec![0u64; n];
            for e in &t.events {
                match e.action {
                    KeyAction::Press => press[e.index] = e.t_us,
                    KeyAction::Release => release[e.index] = e.t_us,
                }
            }
            for k in 1..n {
                if press[k] < release[k - 1] {
                    overlap_sep.push(release[k - 1] - press[k]);
                } else {
                    flight.push(press[k] - release[k - 1]);
                }
            }
        }
        overlap_sep.sort_unstable();
        flight.sort_unstable();
        let med = |v: &Vec<u64>| v[v.len() / 2];
        assert!(med(&overlap_sep) < 50_000);
        assert!(med(&overlap_sep) < med(&flight));
    }

    #[test]
    fn profile_file_round_trip() {
        let p = TypistProfile::synthetic("abc", &TypistCalibration::default(), 1);
        let f: TypistProfileFile = p.clone().into();
        assert_eq!(f.digram.len(), 9);
        let back = TypistProfile::try_from(f).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn missing_digram_rejected() {
        let mut f: TypistProfileFile = flat(100.0).into();
        f.digram.pop();
        assert!(TypistProfile::try_from(f).is_err());
    }
}
