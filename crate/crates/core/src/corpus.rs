//! Token-sequence corpus ingestion and persistence.
//!
//! Two on-disk formats are supported, both line-oriented UTF-8:
//!
//! - `jsonl`: one JSON array of non-negative integers per line, e.g. `[1,2,3]`.
//!   Evaluation pairs are objects with exactly the keys `prompt` and
//!   `response`, each a token array.
//! - `text-ints`: whitespace-separated integers, one sequence per line.
//!
//! All inputs are pre-tokenized integer ids; token ids must fit in 32 bits.
//! Empty lines and empty records are skipped and counted as warnings rather
//! than treated as sequences, since trees only accept non-empty sequences.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vocabulary index of a single token.
pub type TokenId = u32;

/// An ordered run of tokens plus an opaque provenance tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<TokenId>,
    pub source_id: String,
}

impl TokenSequence {
    pub fn new(tokens: Vec<TokenId>, source_id: impl Into<String>) -> Self {
        Self {
            tokens,
            source_id: source_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A prompt and its ground-truth greedy response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub prompt: TokenSequence,
    pub response: TokenSequence,
}

/// On-disk corpus encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    Jsonl,
    TextInts,
}

/// Result of loading a corpus file: the sequences in file order plus the
/// number of empty lines/records that were skipped.
#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub sequences: Vec<TokenSequence>,
    pub skipped: usize,
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_string(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn check_token(path: &Path, line: usize, value: i64) -> Result<TokenId> {
    if value < 0 || value > i64::from(u32::MAX) {
        return Err(parse_error(
            path,
            line,
            format!("token {value} outside the 32-bit id range"),
        ));
    }
    Ok(value as TokenId)
}

/// Loads all token sequences from `path` in file order.
///
/// Empty lines and empty records are skipped; the skip count is returned so
/// callers can surface it. Malformed records fail with the 1-based line
/// number.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<LoadedCorpus> {
    let body = read_to_string(path)?;
    let mut sequences = Vec::new();
    let mut skipped = 0usize;
    for (idx, raw) in body.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            skipped += 1;
            continue;
        }
        let tokens = match format {
            CorpusFormat::Jsonl => {
                let values: Vec<i64> = serde_json::from_str(line)
                    .map_err(|e| parse_error(path, line_no, e.to_string()))?;
                values
                    .into_iter()
                    .map(|v| check_token(path, line_no, v))
                    .collect::<Result<Vec<_>>>()?
            }
            CorpusFormat::TextInts => line
                .split_whitespace()
                .map(|tok| {
                    let value: i64 = tok
                        .parse()
                        .map_err(|_| parse_error(path, line_no, format!("invalid integer {tok:?}")))?;
                    check_token(path, line_no, value)
                })
                .collect::<Result<Vec<_>>>()?,
        };
        if tokens.is_empty() {
            skipped += 1;
            continue;
        }
        let source_id = format!("{}#{}", path.display(), line_no);
        sequences.push(TokenSequence::new(tokens, source_id));
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} empty line(s)/record(s)", path.display());
    }
    Ok(LoadedCorpus { sequences, skipped })
}

/// Writes sequences back out in the given format, one per line.
pub fn save_corpus(path: &Path, sequences: &[TokenSequence], format: CorpusFormat) -> Result<()> {
    let mut body = String::new();
    for seq in sequences {
        match format {
            CorpusFormat::Jsonl => {
                body.push_str(&serde_json::to_string(&seq.tokens).expect("token arrays serialize"));
            }
            CorpusFormat::TextInts => {
                let mut first = true;
                for tok in &seq.tokens {
                    if !first {
                        body.push(' ');
                    }
                    body.push_str(&tok.to_string());
                    first = false;
                }
            }
        }
        body.push('\n');
    }
    write_string(path, &body)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalRecord {
    prompt: Vec<i64>,
    response: Vec<i64>,
}

/// Loads prompt/response evaluation pairs from a JSONL file.
///
/// Each record must be an object with exactly the keys `prompt` and
/// `response`; the response must be non-empty. Empty lines are skipped.
pub fn load_eval_pairs(path: &Path) -> Result<Vec<EvalPair>> {
    let body = read_to_string(path)?;
    let mut pairs = Vec::new();
    for (idx, raw) in body.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let record: EvalRecord =
            serde_json::from_str(line).map_err(|e| parse_error(path, line_no, e.to_string()))?;
        if record.response.is_empty() {
            return Err(parse_error(path, line_no, "empty response"));
        }
        let prompt = record
            .prompt
            .into_iter()
            .map(|v| check_token(path, line_no, v))
            .collect::<Result<Vec<_>>>()?;
        let response = record
            .response
            .into_iter()
            .map(|v| check_token(path, line_no, v))
            .collect::<Result<Vec<_>>>()?;
        pairs.push(EvalPair {
            prompt: TokenSequence::new(prompt, format!("{}#{}:prompt", path.display(), line_no)),
            response: TokenSequence::new(response, format!("{}#{}:response", path.display(), line_no)),
        });
    }
    Ok(pairs)
}

/// Writes evaluation pairs as JSONL `{"prompt":[...],"response":[...]}` records.
pub fn save_eval_pairs(path: &Path, pairs: &[EvalPair]) -> Result<()> {
    #[derive(Serialize)]
    struct Record<'a> {
        prompt: &'a [TokenId],
        response: &'a [TokenId],
    }
    let mut body = String::new();
    for pair in pairs {
        let record = Record {
            prompt: &pair.prompt.tokens,
            response: &pair.response.tokens,
        };
        body.push_str(&serde_json::to_string(&record).expect("eval records serialize"));
        body.push('\n');
    }
    write_string(path, &body)
}
