use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Ambiguity, Corpus, Lexicon, RawCorpus, RawExample};
use crate::error::{Error, Result};

/// One line of a corpus file. Unknown fields are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CorpusRecord {
    Doc {
        doc_id: String,
        text: String,
    },
    Qa {
        query: String,
        gold_doc_id: String,
        answer: String,
        ambiguity: Ambiguity,
    },
    /// Paraphrase table used by the robustness protocol. Optional.
    Lexicon {
        #[serde(default)]
        aliases: BTreeMap<String, Vec<String>>,
        #[serde(default)]
        fillers: Vec<String>,
    },
}

/// Parses corpus JSONL text. Blank lines are skipped.
pub fn parse_jsonl(text: &str) -> Result<RawCorpus> {
    let mut raw = RawCorpus::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        match rec {
            CorpusRecord::Doc { doc_id, text } => raw.docs.push((doc_id, text)),
            CorpusRecord::Qa {
                query,
                gold_doc_id,
                answer,
                ambiguity,
            } => raw.examples.push(RawExample {
                query,
                gold_doc_id,
                answer,
                ambiguity,
            }),
            CorpusRecord::Lexicon { aliases, fillers } => {
                raw.lexicon.aliases.extend(aliases);
                raw.lexicon.fillers.extend(fillers);
            }
        }
    }
    Ok(raw)
}

/// Loads a corpus file: documents first, then examples, with every
/// `gold_doc_id` checked against the loaded documents.
pub fn load_jsonl(path: &Path) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Corpus::from_raw(&parse_jsonl(&text)?)
}

/// Serializes documents, then examples, then the lexicon (if non-empty).
pub fn write_jsonl<W: Write>(raw: &RawCorpus, mut out: W) -> std::io::Result<()> {
    let mut line = |rec: &CorpusRecord| -> std::io::Result<()> {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")
    };
    for (doc_id, text) in &raw.docs {
        line(&CorpusRecord::Doc {
            doc_id: doc_id.clone(),
            text: text.clone(),
        })?;
    }
    for e in &raw.examples {
        line(&CorpusRecord::Qa {
            query: e.query.clone(),
            gold_doc_id: e.gold_doc_id.clone(),
            answer: e.answer.clone(),
            ambiguity: e.ambiguity,
        })?;
    }
    if raw.lexicon != Lexicon::default() {
        line(&CorpusRecord::Lexicon {
            aliases: raw.lexicon.aliases.clone(),
            fillers: raw.lexicon.fillers.clone(),
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{"type":"qa","query":"where is the cat ?","gold_doc_id":"d2","answer":"on the mat","ambiguity":"low","extra":1}
{"type":"doc","doc_id":"d1","text":"the dog runs ."}

{"type":"doc","doc_id":"d2","text":"the cat is on the mat ."}
"#;

    #[test]
    fn loads_fixture_with_examples_after_docs() {
        let c = Corpus::from_raw(&parse_jsonl(FIXTURE).unwrap()).unwrap();
        assert_eq!(c.docs.len(), 2);
        assert_eq!(c.examples.len(), 1);
        let ex = &c.examples[0];
        assert_eq!(ex.answer_ids.first(), Some(&super::super::BOS));
        assert_eq!(ex.answer_ids.last(), Some(&super::super::EOS));
        assert_eq!(c.vocab.decode(&ex.answer_ids), "on the mat");
    }

    #[test]
    fn dangling_gold_id_is_integrity_error() {
        let text = r#"{"type":"doc","doc_id":"d1","text":"x"}
{"type":"qa","query":"q","gold_doc_id":"ghost","answer":"x","ambiguity":"mid"}"#;
        let err = Corpus::from_raw(&parse_jsonl(text).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Integrity(ref m) if m.contains("ghost")), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"type\":\"doc\",\"doc_id\":\"d1\",\"text\":\"x\"}\n{not json}\n";
        assert!(matches!(parse_jsonl(text), Err(Error::Parse { line: 2, .. })));
        let bad_level = r#"{"type":"qa","query":"q","gold_doc_id":"d","answer":"a","ambiguity":"extreme"}"#;
        assert!(matches!(parse_jsonl(bad_level), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        std::fs::write(&p, "").unwrap();
        let c = load_jsonl(&p).unwrap();
        assert!(c.docs.is_empty() && c.examples.is_empty());
    }

    #[test]
    fn write_then_parse_is_identity() {
        let raw = parse_jsonl(FIXTURE).unwrap();
        let mut buf = Vec::new();
        write_jsonl(&raw, &mut buf).unwrap();
        assert_eq!(parse_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap(), raw);
    }
}
