//! Synthetic key→value retrieval QA.
//!
//! Documents are grouped into clusters that share two key words and differ
//! in a third; the cluster size is `1 + distractors[level]`, so a query's
//! ambiguity is the number of near-duplicate documents matching most of its
//! content words. Near-duplicates also share their filler words. Each query
//! names all three key words, some swapped for an alias, and may carry a
//! filler word found in no document; the answer is the document's two value
//! words.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Ambiguity, Corpus, Lexicon, RawCorpus, RawExample};
use crate::error::{Error, Result};

const KEY_WORDS: usize = 3;
const VALUE_WORDS: usize = 2;
const MIN_FILLERS: usize = 8;
/// Filler words that occur in no document; queries and paraphrase
/// perturbations draw from them.
const NOISE_WORDS: usize = 16;
/// Chance that a query carries one filler word.
const NOISE_PROB: f64 = 0.5;
/// Share of a document's queries in which each key word is aliased.
const ALIAS_PROB: f64 = 0.3;

const TEMPLATES: [&str; 5] = [
    "what is the value of {} ?",
    "tell me the value for {}",
    "{} value ?",
    "find the value of {}",
    "what about {} ?",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticSpec {
    /// Total documents in the knowledge base, near-duplicates included.
    pub n_docs: usize,
    pub n_examples: usize,
    /// Size of the generated word pool (keys, aliases, values, fillers).
    pub vocab_size: usize,
    /// Tokens per document.
    pub doc_len: usize,
    /// Near-duplicates per document at low / mid / high ambiguity.
    pub distractors_per_query: [usize; 3],
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_docs: 20,
            n_examples: 200,
            vocab_size: 200,
            doc_len: 10,
            distractors_per_query: [0, 2, 4],
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_docs == 0 || self.n_examples == 0 || self.vocab_size == 0 || self.doc_len == 0 {
            return Err(Error::contract("synthetic spec counts must be positive"));
        }
        let [lo, mid, hi] = self.distractors_per_query;
        if !(lo <= mid && mid <= hi) {
            return Err(Error::contract(format!(
                "distractor counts must be non-decreasing low→high, got {:?}",
                self.distractors_per_query
            )));
        }
        if self.doc_len < KEY_WORDS + VALUE_WORDS {
            return Err(Error::contract(format!(
                "doc_len must be at least {}",
                KEY_WORDS + VALUE_WORDS
            )));
        }
        Ok(())
    }

    /// Cluster levels in creation order. Each new cluster goes to the level
    /// holding the fewest documents so far among those whose cluster still
    /// fits, so the buckets cover similar numbers of documents.
    fn cluster_levels(&self) -> Result<Vec<Ambiguity>> {
        let mut levels = Vec::new();
        let mut held = [0usize; 3];
        let mut remaining = self.n_docs;
        while remaining > 0 {
            let size = |l: Ambiguity| 1 + self.distractors_per_query[l.index()];
            let level = Ambiguity::ALL
                .into_iter()
                .filter(|&l| size(l) <= remaining)
                .min_by_key(|&l| held[l.index()])
                .ok_or_else(|| {
                    Error::Construction(format!("{remaining} documents left over that fit no cluster size"))
                })?;
            levels.push(level);
            held[level.index()] += size(level);
            remaining -= size(level);
        }
        Ok(levels)
    }
}

fn word_pool(rng: &mut ChaCha8Rng, n: usize, reserved: &HashSet<&str>) -> Vec<String> {
    const CONS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let mut seen: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.gen_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(CONS[rng.gen_range(0..CONS.len())] as char);
            w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
        }
        if !reserved.contains(w.as_str()) && seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

struct DocPlan {
    id: String,
    keys: [String; KEY_WORDS],
    values: [String; VALUE_WORDS],
    level: Ambiguity,
    cluster: usize,
}

/// Generates the raw (untokenized) corpus. A pure function of `spec`.
pub fn generate_synthetic_raw(spec: &SyntheticSpec) -> Result<RawCorpus> {
    spec.validate()?;
    let levels = spec.cluster_levels()?;
    let n_clusters = levels.len();
    let key_words = 2 * n_clusters + spec.n_docs;
    let required = 2 * key_words + VALUE_WORDS * spec.n_docs + NOISE_WORDS + MIN_FILLERS;
    if spec.vocab_size < required {
        return Err(Error::Construction(format!(
            "vocab_size {} too small to make keys unique: need at least {}",
            spec.vocab_size, required
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let reserved: HashSet<&str> = TEMPLATES
        .iter()
        .flat_map(|t| t.split_whitespace())
        .filter(|w| *w != "{}")
        .collect();
    let mut pool = word_pool(&mut rng, spec.vocab_size, &reserved).into_iter();
    let mut take = |n: usize| -> Vec<String> { pool.by_ref().take(n).collect() };

    let shared = take(2 * n_clusters);
    let unique = take(spec.n_docs);
    let aliases = take(key_words);
    let values = take(VALUE_WORDS * spec.n_docs);
    let noise = take(NOISE_WORDS);
    let fillers = take(spec.vocab_size - (2 * key_words + VALUE_WORDS * spec.n_docs + NOISE_WORDS));

    let mut plans = Vec::with_capacity(spec.n_docs);
    let mut d = 0;
    for (c, &level) in levels.iter().enumerate() {
        for _ in 0..1 + spec.distractors_per_query[level.index()] {
            plans.push(DocPlan {
                id: format!("doc{:03}", d),
                keys: [shared[2 * c].clone(), shared[2 * c + 1].clone(), unique[d].clone()],
                values: [values[2 * d].clone(), values[2 * d + 1].clone()],
                level,
                cluster: c,
            });
            d += 1;
        }
    }

    let mut alias_of: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let all_keys = shared.iter().chain(&unique);
    for (k, a) in all_keys.zip(&aliases) {
        alias_of.insert(k.clone(), vec![a.clone()]);
    }

    // Documents of one cluster share their filler words, so near-duplicates
    // differ only in the third key word and the values.
    let pad = spec.doc_len - KEY_WORDS - VALUE_WORDS;
    let cluster_fillers: Vec<Vec<&str>> = (0..n_clusters)
        .map(|_| {
            (0..pad)
                .map(|_| fillers[rng.gen_range(0..fillers.len())].as_str())
                .collect()
        })
        .collect();
    let docs = plans
        .iter()
        .map(|p| {
            let words: Vec<&str> = p
                .keys
                .iter()
                .chain(&p.values)
                .map(String::as_str)
                .chain(cluster_fillers[p.cluster].iter().copied())
                .collect();
            (p.id.clone(), words.join(" "))
        })
        .collect();

    // Each doc is queried once per round; its key words are aliased in a
    // fixed share of its queries, spread by a shuffled schedule.
    let rounds = spec.n_examples.div_ceil(spec.n_docs);
    let aliased = ((ALIAS_PROB * rounds as f64).round() as usize).min(rounds);
    let schedules: Vec<[Vec<bool>; KEY_WORDS]> = (0..spec.n_docs)
        .map(|_| {
            std::array::from_fn(|_| {
                let mut s: Vec<bool> = (0..rounds).map(|r| r < aliased).collect();
                s.shuffle(&mut rng);
                s
            })
        })
        .collect();

    let mut examples = Vec::with_capacity(spec.n_examples);
    let mut order: Vec<usize> = Vec::new();
    for i in 0..spec.n_examples {
        if i % spec.n_docs == 0 {
            order = (0..spec.n_docs).collect();
            order.shuffle(&mut rng);
        }
        let round = i / spec.n_docs;
        let doc = order[i % spec.n_docs];
        let p = &plans[doc];
        let keys: Vec<&str> = p
            .keys
            .iter()
            .enumerate()
            .map(|(j, k)| {
                if schedules[doc][j][round] {
                    alias_of[k][0].as_str()
                } else {
                    k.as_str()
                }
            })
            .collect();
        let template = TEMPLATES[rng.gen_range(0..TEMPLATES.len())];
        let mut words: Vec<String> = template
            .replace("{}", &keys.join(" "))
            .split_whitespace()
            .map(str::to_string)
            .collect();
        if rng.gen_bool(NOISE_PROB) {
            let at = rng.gen_range(0..=words.len());
            words.insert(at, noise[rng.gen_range(0..noise.len())].clone());
        }
        examples.push(RawExample {
            query: words.join(" "),
            gold_doc_id: p.id.clone(),
            answer: p.values.join(" "),
            ambiguity: p.level,
        });
    }

    Ok(RawCorpus {
        docs,
        examples,
        lexicon: Lexicon {
            aliases: alias_of,
            fillers: noise,
        },
    })
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    Corpus::from_raw(&generate_synthetic_raw(spec)?)
}
