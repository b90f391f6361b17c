use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numerics::hex;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Dense token ↔ id map. Id 0 is PAD and id 1 is UNK.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    counts: Vec<u64>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        let index = f.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens: f.tokens, counts: f.counts, index }
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        Self { tokens: v.tokens, counts: v.counts }
    }
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Vocabulary with the reserved entries followed by `tokens` in order.
    /// Duplicates and reserved names are ignored.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = VocabFile { tokens: vec![PAD_TOKEN.into(), UNK_TOKEN.into()], counts: vec![0, 0] };
        let mut seen: std::collections::HashSet<String> = v.tokens.iter().cloned().collect();
        for t in tokens {
            let t = t.into();
            if seen.insert(t.clone()) {
                v.tokens.push(t);
                v.counts.push(0);
            }
        }
        v.into()
    }

    /// Counts tokens over `corpus` and keeps those seen at least `min_count`
    /// times, ordered by descending frequency then lexicographically.
    pub fn build<'a, I>(corpus: I, min_count: u64) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for doc in corpus {
            for t in doc {
                *freq.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, u64)> = freq.into_iter().filter(|&(t, c)| c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut file = VocabFile { tokens: vec![PAD_TOKEN.into(), UNK_TOKEN.into()], counts: vec![0, 0] };
        for (t, c) in entries {
            file.tokens.push(t.to_string());
            file.counts.push(c);
        }
        file.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Id of `token`, falling back to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Id of `token` only if it is a real (non-reserved) vocabulary entry.
    pub fn known_id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied().filter(|&i| i > UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts.get(id).copied().unwrap_or(0)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// SHA-256 of the id-ordered token list; checkpoints record it.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex(&h.finalize())
    }
}

/// Truncates or right-pads `ids` to exactly `len`, returning the padded ids
/// and a mask marking real positions.
pub fn pad_ids(ids: &[usize], len: usize) -> (Vec<usize>, Vec<bool>) {
    let real = ids.len().min(len);
    let mut out = ids[..real].to_vec();
    out.resize(len, PAD);
    let mut mask = vec![true; real];
    mask.resize(len, false);
    (out, mask)
}
