//! Word-level vocabulary and fixed-length token sequences with bos/eos/pad/unk.

use crate::data::{Manifest, Split};
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::path::Path;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercase and split on whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| c.is_whitespace() || (c.is_ascii_punctuation() && c != '\''))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    /// Build from the train-split captions: every token with frequency
    /// `>= min_freq`, ordered by frequency descending then lexicographic.
    pub fn build(manifest: &Manifest, min_freq: usize) -> Result<Self> {
        let mut freq: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for record in manifest.split_records(Split::Train) {
            for caption in &record.captions {
                any = true;
                for tok in tokenize(caption) {
                    *freq.entry(tok).or_insert(0) += 1;
                }
            }
        }
        if !any {
            return Err(Error::Data("empty caption corpus".into()));
        }
        let mut entries: Vec<(String, usize)> =
            freq.into_iter().filter(|(_, f)| *f >= min_freq).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_tokens(entries.into_iter().map(|(t, _)| t)))
    }

    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut id_to_token: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self {
            token_to_id,
            id_to_token,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.id_to_token
            .get(id)
            .map(String::as_str)
            .ok_or_else(|| Error::Data(format!("token id {id} out of range")))
    }

    /// One token per line; line number = id minus the 4 specials.
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = self.id_to_token[SPECIALS.len()..].join("\n");
        std::fs::write(path, body + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_tokens(
            body.lines().filter(|l| !l.is_empty()).map(str::to_string),
        ))
    }
}

/// Fixed-length encoding: `[bos, t1..tm, eos, pad...]` of exactly `l_max` ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Effective length `m + 2` including bos and eos.
    pub length: usize,
}

impl TokenSequence {
    pub fn content_ids(&self) -> &[usize] {
        &self.ids[1..self.length - 1]
    }
}

/// Encode text, truncating to `l_max - 2` content tokens.
pub fn encode(vocab: &Vocabulary, text: &str, l_max: usize) -> Result<TokenSequence> {
    if l_max < 3 {
        return Err(Error::Config("l_max must be >= 3".into()));
    }
    let mut ids = vec![BOS];
    for tok in tokenize(text).into_iter().take(l_max - 2) {
        ids.push(vocab.id(&tok));
    }
    ids.push(EOS);
    let length = ids.len();
    ids.resize(l_max, PAD);
    Ok(TokenSequence { ids, length })
}

/// Join content tokens with spaces, stopping at the first eos.
pub fn decode(vocab: &Vocabulary, ids: &[usize]) -> Result<String> {
    let mut words = Vec::new();
    for &id in ids {
        if id == EOS {
            break;
        }
        if id == BOS || id == PAD {
            continue;
        }
        words.push(vocab.token(id)?.to_string());
    }
    Ok(words.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ChangeType, Record};
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn manifest_from(captions: &[&str]) -> Manifest {
        let records = captions
            .iter()
            .enumerate()
            .map(|(i, c)| Record {
                id: format!("r{i}"),
                before: String::new(),
                after: String::new(),
                captions: vec![c.to_string()],
                change_type: ChangeType::Color,
                split: Split::Train,
            })
            .collect();
        Manifest {
            root: PathBuf::new(),
            records,
        }
    }

    #[test]
    fn build_vocab_respects_min_freq_and_order() {
        let m = manifest_from(&["a b", "a c"]);
        let v1 = Vocabulary::build(&m, 1).unwrap();
        assert_eq!(v1.len(), 7);
        // "a" has frequency 2, then b/c lexicographic
        assert_eq!(v1.id("a"), 4);
        assert_eq!(v1.id("b"), 5);
        assert_eq!(v1.id("c"), 6);
        let v2 = Vocabulary::build(&m, 2).unwrap();
        assert_eq!(v2.len(), 5);
        assert_eq!(v2.id("b"), UNK);
    }

    #[test]
    fn build_is_deterministic() {
        let m = manifest_from(&["x y z", "y z w"]);
        let a = Vocabulary::build(&m, 1).unwrap();
        let b = Vocabulary::build(&m, 1).unwrap();
        assert_eq!(a.id_to_token, b.id_to_token);
    }

    #[test]
    fn encode_basic_and_empty() {
        let v = Vocabulary::from_tokens(["the".into(), "ball".into()]);
        let s = encode(&v, "The ball", 8).unwrap();
        assert_eq!(s.length, 4);
        assert_eq!(&s.ids[..4], &[BOS, v.id("the"), v.id("ball"), EOS]);
        assert!(s.ids[4..].iter().all(|&i| i == PAD));

        let e = encode(&v, "", 8).unwrap();
        assert_eq!(e.length, 2);
        assert_eq!(&e.ids[..2], &[BOS, EOS]);
    }

    #[test]
    fn encode_truncates_to_l_max() {
        let v = Vocabulary::from_tokens((0..50).map(|i| format!("w{i}")));
        let text: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        let s = encode(&v, &text.join(" "), 32).unwrap();
        assert_eq!(s.length, 32);
        assert_eq!(s.content_ids().len(), 30);
    }

    #[test]
    fn decode_stops_at_eos() {
        let v = Vocabulary::from_tokens(["the".into(), "ball".into()]);
        let out = decode(&v, &[BOS, v.id("the"), v.id("ball"), EOS, v.id("the")]).unwrap();
        assert_eq!(out, "the ball");
        assert_eq!(decode(&v, &[BOS, EOS]).unwrap(), "");
        assert!(decode(&v, &[999]).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocabulary::from_tokens(["alpha".into(), "beta".into()]);
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        let loaded = Vocabulary::load(&path).unwrap();
        assert_eq!(v.id_to_token, loaded.id_to_token);
    }

    proptest! {
        /// Round-trip on in-vocab normalized text; eos exactly once; no pad before eos.
        #[test]
        fn encode_decode_round_trip(words in proptest::collection::vec("[a-z]{1,6}", 1..10)) {
            let vocab = Vocabulary::from_tokens(words.iter().cloned().collect::<std::collections::BTreeSet<_>>());
            let text = words.join(" ");
            let seq = encode(&vocab, &text, 16).unwrap();
            prop_assert_eq!(seq.ids[0], BOS);
            prop_assert_eq!(seq.ids.iter().filter(|&&i| i == EOS).count(), 1);
            let eos_pos = seq.ids.iter().position(|&i| i == EOS).unwrap();
            prop_assert_eq!(eos_pos, seq.length - 1);
            prop_assert!(seq.ids[..eos_pos].iter().all(|&i| i != PAD));
            let back = decode(&vocab, &seq.ids).unwrap();
            prop_assert_eq!(back, tokenize(&text).join(" "));
        }
    }
}
