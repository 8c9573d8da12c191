use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{create_file, open_file};
use crate::textproc::TokenSequence;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIALS: usize = 4;

const SPECIAL_TOKENS: [&str; NUM_SPECIALS] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Token/id bijection. Ids 0-3 are reserved for PAD, BOS, EOS and UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_of: Vec<String>,
    id_of: HashMap<String, usize>,
}

impl Vocabulary {
    /// Specials followed by `tokens` in the given order. Duplicates and
    /// special spellings are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self {
            token_of: Vec::new(),
            id_of: HashMap::new(),
        };
        for s in SPECIAL_TOKENS {
            vocab.push(s.to_string());
        }
        for t in tokens {
            let t = t.into();
            if !vocab.id_of.contains_key(&t) {
                vocab.push(t);
            }
        }
        vocab
    }

    fn push(&mut self, token: String) {
        self.id_of.insert(token.clone(), self.token_of.len());
        self.token_of.push(token);
    }

    pub fn len(&self) -> usize {
        self.token_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == NUM_SPECIALS
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.id_of.get(token).copied()
    }

    /// Id of `token`, or [`UNK`] when absent.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.token_of[id]
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_SPECIALS
    }

    /// Non-special tokens in id order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.token_of[NUM_SPECIALS..].iter().map(String::as_str)
    }

    pub fn encode(&self, seq: &TokenSequence) -> Vec<usize> {
        seq.iter().map(|t| self.id(t)).collect()
    }

    /// Maps ids back to tokens, stopping at the first EOS and dropping PAD/BOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token_of[i].clone())
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = create_file(path.as_ref())?;
        for (id, tok) in self.token_of.iter().enumerate() {
            writeln!(out, "{tok}\t{id}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |line: usize, msg: &str| Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.to_string(),
        };
        let mut tokens = Vec::new();
        for (i, line) in open_file(path)?.lines().enumerate() {
            let line = line?;
            let (tok, id) = line.split_once('\t').ok_or_else(|| bad(i + 1, "expected `token<TAB>id`"))?;
            let id: usize = id.parse().map_err(|_| bad(i + 1, "id is not an integer"))?;
            if id != i {
                return Err(bad(i + 1, "ids must be contiguous from 0"));
            }
            if id < NUM_SPECIALS && tok != SPECIAL_TOKENS[id] {
                return Err(bad(i + 1, "special tokens must occupy ids 0-3"));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < NUM_SPECIALS {
            return Err(bad(tokens.len() + 1, "missing special tokens"));
        }
        let vocab = Self::from_tokens(tokens[NUM_SPECIALS..].iter().cloned());
        if vocab.len() != tokens.len() {
            return Err(bad(0, "duplicate tokens"));
        }
        Ok(vocab)
    }
}

/// Keeps the `max_size - 4` most frequent tokens; equal frequencies are
/// ordered lexicographically.
pub fn build_vocab(corpus: &[TokenSequence], max_size: usize) -> Result<Vocabulary> {
    if max_size <= NUM_SPECIALS {
        return Err(Error::InvalidArgument(format!(
            "vocabulary max_size must exceed {NUM_SPECIALS}, got {max_size}"
        )));
    }
    let mut freqs: BTreeMap<&str, usize> = BTreeMap::new();
    for seq in corpus {
        for tok in seq.iter() {
            if !SPECIAL_TOKENS.contains(&tok) {
                *freqs.entry(tok).or_default() += 1;
            }
        }
    }
    if freqs.is_empty() {
        return Err(Error::EmptyInput("vocabulary corpus"));
    }
    let mut ranked: Vec<(&str, usize)> = freqs.into_iter().collect();
    // stable sort keeps the lexicographic order among equal counts
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    ranked.truncate(max_size - NUM_SPECIALS);
    Ok(Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t)))
}
