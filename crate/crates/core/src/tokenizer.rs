// SPDX-License-Identifier: MIT OR Apache-2.0

//! Greedy longest-match tokenizer over a fixed vocabulary.
//!
//! The vocabulary file is a JSON array of strings whose index is the token
//! id. The first four entries are the reserved tokens `<pad>`, `<bos>`,
//! `<eos>`, `<unk>`. Reserved tokens never match input text.
//!
//! Word-level toy vocabularies spell words with a leading space (`" saw"`).
//! Imported SentencePiece vocabularies that mark spaces with `▁` are
//! detected automatically; spaces are translated on the way in and out.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

const SPACE_MARKER: char = '\u{2581}';

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    max_token_chars: usize,
    sentencepiece: bool,
}

/// Result of resolving a word to the token that starts it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FirstToken {
    pub id: u32,
    /// The word's first token fell back to `<unk>`.
    pub unknown: bool,
}

impl Vocab {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() {
            return Err(Error::InvalidVocab(format!(
                "{} entries; the four reserved tokens are required",
                tokens.len()
            )));
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens[i] != *r {
                return Err(Error::InvalidVocab(format!(
                    "entry {i} must be {r:?}, found {:?}",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::InvalidVocab(format!("entry {i} is empty")));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidVocab(format!("duplicate token {t:?}")));
            }
        }
        let body = &tokens[RESERVED.len()..];
        let max_token_chars = body.iter().map(|t| t.chars().count()).max().unwrap_or(0);
        let sentencepiece = body.iter().any(|t| t.contains(SPACE_MARKER));
        Ok(Self {
            tokens,
            index,
            max_token_chars,
            sentencepiece,
        })
    }

    /// Word-level vocabulary: the reserved tokens followed by `pieces` in
    /// order, skipping repeats.
    pub fn word_level<'a>(pieces: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut seen: BTreeSet<String> = tokens.iter().cloned().collect();
        for p in pieces {
            if seen.insert(p.to_string()) {
                tokens.push(p.to_string());
            }
        }
        Self::new(tokens)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::new(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.tokens).expect("strings serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_reserved(id: u32) -> bool {
        (id as usize) < RESERVED.len()
    }

    fn to_surface(&self, text: &str) -> String {
        if self.sentencepiece {
            text.replace(' ', &SPACE_MARKER.to_string())
        } else {
            text.to_string()
        }
    }

    /// Greedy longest match without the leading `<bos>`.
    pub fn encode_pieces(&self, text: &str) -> Vec<u32> {
        let surface = self.to_surface(text);
        let bounds: Vec<usize> = surface
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(surface.len()))
            .collect();
        let n_chars = bounds.len() - 1;
        let mut out = Vec::new();
        let mut i = 0;
        while i < n_chars {
            let longest = self.max_token_chars.min(n_chars - i);
            let hit = (1..=longest).rev().find_map(|len| {
                let piece = &surface[bounds[i]..bounds[i + len]];
                self.index
                    .get(piece)
                    .filter(|&&id| !Self::is_reserved(id))
                    .map(|&id| (id, len))
            });
            match hit {
                Some((id, len)) => {
                    out.push(id);
                    i += len;
                }
                None => {
                    out.push(UNK);
                    i += 1;
                }
            }
        }
        out
    }

    /// `<bos>` followed by the greedy longest-match encoding of `text`.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = vec![BOS];
        out.extend(self.encode_pieces(text));
        out
    }

    /// Concatenates token strings, dropping `<pad>`, `<bos>` and `<eos>`.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut s = String::new();
        for &id in ids {
            if matches!(id, PAD | BOS | EOS) {
                continue;
            }
            match self.token(id) {
                Some(t) => s.push_str(t),
                None => s.push_str(RESERVED[UNK as usize]),
            }
        }
        if self.sentencepiece {
            s = s.replace(SPACE_MARKER, " ");
        }
        s
    }

    /// Token that begins `word` when it follows `context_prefix`.
    ///
    /// A separating space is assumed unless the prefix is empty or already
    /// ends in whitespace. Only the first token of a multi-token word is
    /// returned.
    pub fn first_token_id(&self, word: &str, context_prefix: &str) -> Result<FirstToken> {
        if word.is_empty() {
            return Err(Error::EmptyEncoding(word.to_string()));
        }
        let needs_space =
            !context_prefix.is_empty() && !context_prefix.ends_with(char::is_whitespace);
        let text = if needs_space {
            format!(" {word}")
        } else {
            word.to_string()
        };
        let id = *self
            .encode_pieces(&text)
            .first()
            .ok_or_else(|| Error::EmptyEncoding(word.to_string()))?;
        let unknown = id == UNK;
        if unknown {
            log::warn!("word {word:?} is not in the vocabulary; using <unk>");
        }
        Ok(FirstToken { id, unknown })
    }
}
