use std::collections::BTreeSet;
use std::io::BufRead;

use rand::Rng as _;

use crate::error::{domain, Error, Result};
use crate::seed;

pub const MIN_WORD_LEN: usize = 4;
pub const MAX_WORD_LEN: usize = 10;

fn lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader.lines().enumerate().filter_map(|(i, l)| match l {
        Err(e) => Some(Err(Error::Io(e))),
        Ok(l) => {
            let w = l.trim();
            (!w.is_empty() && !w.starts_with('#')).then(|| Ok((i + 1, w.to_string())))
        }
    })
}

/// Target words, one per line. Blank lines and `#` comments are skipped.
/// Every word must be 4 to 10 lowercase ASCII letters.
pub fn load_word_list<R: BufRead>(reader: R) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for l in lines(reader) {
        let (line, w) = l?;
        let n = w.chars().count();
        if !w.chars().all(|c| c.is_ascii_lowercase()) {
            return Err(Error::Parse {
                line,
                msg: format!("word {w:?} has characters outside a-z"),
            });
        }
        if !(MIN_WORD_LEN..=MAX_WORD_LEN).contains(&n) {
            return Err(Error::Parse {
                line,
                msg: format!("word {w:?} has {n} letters, expected {MIN_WORD_LEN}-{MAX_WORD_LEN}"),
            });
        }
        out.push(w);
    }
    if out.is_empty() {
        return domain("word list is empty");
    }
    Ok(out)
}

/// Candidate dictionary: lowercase words, one per line, deduplicated and
/// sorted.
pub fn load_dictionary<R: BufRead>(reader: R) -> Result<Vec<String>> {
    let mut set = BTreeSet::new();
    for l in lines(reader) {
        let (line, w) = l?;
        if w.chars().any(|c| c.is_whitespace() || c.is_uppercase()) {
            return Err(Error::Parse {
                line,
                msg: format!("dictionary entry {w:?} must be one lowercase word"),
            });
        }
        set.insert(w);
    }
    if set.is_empty() {
        return domain("dictionary is empty");
    }
    Ok(set.into_iter().collect())
}

/// `count` distinct random words of 4 to 10 letters over `alphabet`,
/// sorted.
pub fn synthetic_dictionary(alphabet: &str, count: usize, seed: u64) -> Result<Vec<String>> {
    let letters: Vec<char> = alphabet.chars().collect::<BTreeSet<_>>().into_iter().collect();
    if letters.len() < 2 {
        return domain("alphabet needs at least two letters");
    }
    let mut rng = seed::rng(seed::derive(seed, seed::stream::DICTIONARY, 0));
    let mut set = BTreeSet::new();
    let mut attempts = 0usize;
    while set.len() < count {
        attempts += 1;
        if attempts > count * 100 + 1000 {
            return domain(format!("could not draw {count} distinct words"));
        }
        let n = rng.random_range(MIN_WORD_LEN..=MAX_WORD_LEN);
        let w: String = (0..n).map(|_| letters[rng.random_range(0..letters.len())]).collect();
        set.insert(w);
    }
    Ok(set.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn word_list_enforces_length() {
        let ok = load_word_list("# targets\nhello\n\nkeyboard\n".as_bytes()).unwrap();
        assert_eq!(ok, vec!["hello", "keyboard"]);
        assert!(matches!(
            load_word_list("abc\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(load_word_list("abcdefghijk\n".as_bytes()).is_err());
        assert!(load_word_list("Hello\n".as_bytes()).is_err());
    }

    #[test]
    fn dictionary_dedups() {
        let d = load_dictionary("tree\nrate\ntree\n".as_bytes()).unwrap();
        assert_eq!(d, vec!["rate", "tree"]);
    }

    #[test]
    fn synthetic_words_are_unique_and_in_range() {
        let d = synthetic_dictionary("etaoinshrd", 1000, 3).unwrap();
        assert_eq!(d.len(), 1000);
        assert!(d.iter().all(|w| (4..=10).contains(&w.len())));
        assert!(d.iter().all(|w| w.chars().all(|c| "etaoinshrd".contains(c))));
        assert_eq!(d, synthetic_dictionary("etaoinshrd", 1000, 3).unwrap());
    }
}
