//! Tokenization, vocabulary, the JSONL corpus format and the synthetic
//! retrieval-QA generator.

mod jsonl;
mod split;
mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use jsonl::{load_jsonl, parse_jsonl, write_jsonl, CorpusRecord};
pub use split::{split, Split};
pub use synthetic::{generate_synthetic, generate_synthetic_raw, SyntheticSpec};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Lowercases and splits on whitespace; every punctuation or symbol
/// character becomes a token of its own.
pub fn tokenize_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_lowercase().collect());
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

pub fn tokenize(text: &str, vocab: &Vocab) -> Vec<usize> {
    tokenize_words(text).iter().map(|w| vocab.id(w)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    to_id: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary ordered by descending frequency, then
    /// lexicographically; ids 0..4 are reserved.
    pub fn build<S: AsRef<str>>(texts: &[S], min_freq: usize) -> Result<Self> {
        if min_freq == 0 {
            return Err(Error::contract("min_freq must be at least 1"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for w in tokenize_words(t.as_ref()) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w))
            .collect();
        let to_id = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self { to_id, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.to_id.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or("<unk>", String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Space-joined tokens without the framing ids.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i != BOS && i != EOS && i != PAD)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ambiguity {
    Low,
    Mid,
    High,
}

impl Ambiguity {
    pub const ALL: [Ambiguity; 3] = [Ambiguity::Low, Ambiguity::Mid, Ambiguity::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Ambiguity::Low => "low",
            Ambiguity::Mid => "mid",
            Ambiguity::High => "high",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Ambiguity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Ambiguity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "low" => Ok(Ambiguity::Low),
            "mid" => Ok(Ambiguity::Mid),
            "high" => Ok(Ambiguity::High),
            other => Err(Error::Config(format!("unknown ambiguity level {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub token_ids: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QAExample {
    pub query_text: String,
    pub query_ids: Vec<usize>,
    pub gold_doc_id: String,
    pub answer_text: String,
    /// `BOS … EOS` framed.
    pub answer_ids: Vec<usize>,
    pub ambiguity: Ambiguity,
}

/// Synonym groups and filler words used to paraphrase queries.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub aliases: BTreeMap<String, Vec<String>>,
    pub fillers: Vec<String>,
}

/// Corpus before tokenization, exactly as stored on disk.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawCorpus {
    pub docs: Vec<(String, String)>,
    pub examples: Vec<RawExample>,
    pub lexicon: Lexicon,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawExample {
    pub query: String,
    pub gold_doc_id: String,
    pub answer: String,
    pub ambiguity: Ambiguity,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: Vocab,
    pub docs: Vec<Document>,
    pub examples: Vec<QAExample>,
    pub lexicon: Lexicon,
}

impl Corpus {
    /// Tokenizes a raw corpus against a vocabulary built from all of its
    /// text, checking referential integrity of every gold document id.
    pub fn from_raw(raw: &RawCorpus) -> Result<Self> {
        let mut seen = HashSet::new();
        for (id, _) in &raw.docs {
            if !seen.insert(id.as_str()) {
                return Err(Error::Integrity(format!("duplicate doc_id {id:?}")));
            }
        }
        for ex in &raw.examples {
            if !seen.contains(ex.gold_doc_id.as_str()) {
                return Err(Error::Integrity(format!(
                    "example references unknown gold_doc_id {:?}",
                    ex.gold_doc_id
                )));
            }
        }
        let mut texts: Vec<&str> = Vec::new();
        texts.extend(raw.docs.iter().map(|(_, t)| t.as_str()));
        texts.extend(raw.examples.iter().flat_map(|e| [e.query.as_str(), e.answer.as_str()]));
        for (k, vs) in &raw.lexicon.aliases {
            texts.push(k);
            texts.extend(vs.iter().map(String::as_str));
        }
        texts.extend(raw.lexicon.fillers.iter().map(String::as_str));
        let vocab = Vocab::build(&texts, 1)?;

        let docs = raw
            .docs
            .iter()
            .map(|(id, text)| Document {
                doc_id: id.clone(),
                text: text.clone(),
                token_ids: tokenize(text, &vocab),
            })
            .collect();
        let examples = raw
            .examples
            .iter()
            .map(|e| {
                let mut answer_ids = vec![BOS];
                answer_ids.extend(tokenize(&e.answer, &vocab));
                answer_ids.push(EOS);
                QAExample {
                    query_text: e.query.clone(),
                    query_ids: tokenize(&e.query, &vocab),
                    gold_doc_id: e.gold_doc_id.clone(),
                    answer_text: e.answer.clone(),
                    answer_ids,
                    ambiguity: e.ambiguity,
                }
            })
            .collect();
        Ok(Self {
            vocab,
            docs,
            examples,
            lexicon: raw.lexicon.clone(),
        })
    }

    pub fn doc_position(&self, doc_id: &str) -> Option<usize> {
        self.docs.iter().position(|d| d.doc_id == doc_id)
    }

    pub fn perturber(&self) -> Perturber {
        Perturber::new(&self.lexicon, &self.vocab)
    }
}

/// Token-level paraphrasing in id space: synonym swaps from the alias
/// table, or replacement by a filler word.
#[derive(Clone, Debug, Default)]
pub struct Perturber {
    synonyms: HashMap<usize, Vec<usize>>,
    fillers: Vec<usize>,
}

impl Perturber {
    pub fn new(lexicon: &Lexicon, vocab: &Vocab) -> Self {
        let mut synonyms: HashMap<usize, Vec<usize>> = HashMap::new();
        for (head, alts) in &lexicon.aliases {
            let group: Vec<usize> = std::iter::once(head).chain(alts).filter_map(|w| vocab.get(w)).collect();
            for &a in &group {
                let others: Vec<usize> = group.iter().copied().filter(|&b| b != a).collect();
                synonyms.entry(a).or_default().extend(others);
            }
        }
        for v in synonyms.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        let fillers = lexicon.fillers.iter().filter_map(|w| vocab.get(w)).collect();
        Self { synonyms, fillers }
    }

    /// Applies `substitutions` random token replacements. A token with
    /// synonyms is swapped for one of them or for a filler with equal odds;
    /// any other token is replaced by a filler.
    pub fn perturb<R: Rng>(&self, ids: &[usize], substitutions: usize, rng: &mut R) -> Vec<usize> {
        let mut out = ids.to_vec();
        if out.is_empty() {
            return out;
        }
        for _ in 0..substitutions {
            let pos = rng.gen_range(0..out.len());
            let tok = out[pos];
            let use_synonym = rng.gen_bool(0.5);
            out[pos] = match self.synonyms.get(&tok) {
                Some(syn) if use_synonym && !syn.is_empty() => syn[rng.gen_range(0..syn.len())],
                _ if !self.fillers.is_empty() => self.fillers[rng.gen_range(0..self.fillers.len())],
                _ => tok,
            };
        }
        out
    }
}
