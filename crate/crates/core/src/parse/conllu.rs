//! Tab-separated CoNLL-U subset: columns ID, FORM, UPOS, HEAD, DEPREL.
//!
//! Comment lines start with `#`, blank lines separate sentences, and
//! multiword range IDs (containing `-`) are skipped. Only the five
//! columns consumed by the model are supported.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One parsed token. `head` is 0 for the sentence root, otherwise the
/// 1-based index of the parent token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: usize,
    pub form: String,
    pub upos: String,
    pub head: usize,
    pub deprel: String,
}

impl Token {
    pub fn new(id: usize, form: &str, upos: &str, head: usize, deprel: &str) -> Self {
        Token {
            id,
            form: form.to_string(),
            upos: upos.to_string(),
            head,
            deprel: deprel.to_string(),
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Parses sentences out of CoNLL-U-subset text.
pub fn parse_conllu(text: &str) -> Result<Vec<Vec<Token>>> {
    let mut sentences = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(parse_err(
                lineno,
                format!("expected 5 tab-separated columns (ID FORM UPOS HEAD DEPREL), got {}", cols.len()),
            ));
        }
        if cols[0].contains('-') {
            // Multiword range line; carries no tree node.
            continue;
        }
        let id: usize = cols[0]
            .parse()
            .map_err(|_| parse_err(lineno, format!("non-integer ID `{}`", cols[0])))?;
        if id == 0 {
            return Err(parse_err(lineno, "ID must be positive"));
        }
        let head: usize = cols[3]
            .parse()
            .map_err(|_| parse_err(lineno, format!("non-integer HEAD `{}`", cols[3])))?;
        current.push(Token::new(id, cols[1], cols[2], head, cols[4]));
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    Ok(sentences)
}

/// Emits one sentence in the same subset format, tokens in id order,
/// with a trailing blank line.
pub fn serialize_tokens(tokens: &[Token]) -> String {
    let mut out = String::new();
    for t in tokens {
        out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", t.id, t.form, t.upos, t.head, t.deprel));
    }
    out.push('\n');
    out
}
