use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use super::output::SQL_KEYWORDS;
use super::{CorpusError, Interaction, Schema};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const CLS: &str = "[cls]";
pub const SEP: &str = "[sep]";
pub const EOS: &str = "<eos>";

/// Bijective token/id map. Reserved symbols and SQL keywords hold the lowest
/// ids, in a fixed order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

fn reserved_tokens() -> Vec<&'static str> {
    let mut out = vec![PAD, UNK, CLS, SEP, EOS];
    out.extend(SQL_KEYWORDS.iter().copied().filter(|k| *k != EOS));
    out
}

impl Vocab {
    pub fn reserved_only() -> Self {
        let mut v = Vocab {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for t in reserved_tokens() {
            v.push(t);
        }
        v
    }

    /// Reserved tokens followed by `tokens` in order, duplicates skipped.
    pub fn with_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::reserved_only();
        for t in tokens {
            v.push(t);
        }
        v
    }

    pub fn num_reserved() -> usize {
        reserved_tokens().len()
    }

    fn push(&mut self, token: &str) {
        if !self.token_to_id.contains_key(token) {
            self.token_to_id.insert(token.to_string(), self.id_to_token.len());
            self.id_to_token.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_token.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(self.unk_id())
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.id_to_token[id]
    }

    pub fn unk_id(&self) -> usize {
        self.token_to_id[UNK]
    }

    pub fn cls_id(&self) -> usize {
        self.token_to_id[CLS]
    }

    pub fn sep_id(&self) -> usize {
        self.token_to_id[SEP]
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.id_to_token.iter().enumerate() {
            writeln!(s, "{t}\t{i}").expect("write to string");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, CorpusError> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, id) = line.rsplit_once('\t').ok_or_else(|| {
                CorpusError::parse("vocab", &format!("line {}", n + 1), "expected token<TAB>id")
            })?;
            let id: usize = id.trim().parse().map_err(|_| {
                CorpusError::parse("vocab", &format!("line {}", n + 1), "id is not an integer")
            })?;
            pairs.push((id, tok.to_string()));
        }
        pairs.sort();
        let mut v = Vocab {
            token_to_id: HashMap::new(),
            id_to_token: Vec::new(),
        };
        for (expected, (id, tok)) in pairs.into_iter().enumerate() {
            if id != expected || v.token_to_id.contains_key(&tok) {
                return Err(CorpusError::parse("vocab", &format!("id {id}"), "ids must be a bijection onto 0..n"));
            }
            v.push(&tok);
        }
        for (i, r) in reserved_tokens().into_iter().enumerate() {
            if v.get(r) != Some(i) {
                return Err(CorpusError::parse("vocab", r, "reserved token missing or moved"));
            }
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_text()).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_text(&text)
    }
}

fn from_counts(counts: BTreeMap<String, usize>, min_count: usize) -> Vocab {
    let mut v = Vocab::reserved_only();
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    // frequency descending, then lexicographic
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    for (t, _) in kept {
        v.push(&t);
    }
    v
}

/// Utterance-token vocabulary; tokens seen fewer than `min_count` times map
/// to the unknown symbol.
pub fn build_vocab(interactions: &[Interaction], min_count: usize) -> Vocab {
    build_vocab_with_schemas(interactions, &[], min_count)
}

/// As [`build_vocab`], also counting the words of every schema header.
pub fn build_vocab_with_schemas(interactions: &[Interaction], schemas: &[&Schema], min_count: usize) -> Vocab {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for i in interactions {
        for t in &i.turns {
            for tok in &t.utterance_tokens {
                *counts.entry(tok.clone()).or_default() += 1;
            }
        }
    }
    for s in schemas {
        for h in &s.headers {
            for tok in &h.tokens {
                *counts.entry(tok.clone()).or_default() += 1;
            }
        }
    }
    from_counts(counts, min_count)
}
