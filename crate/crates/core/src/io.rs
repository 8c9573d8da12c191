//! File helpers and the line-oriented formats shared by several modules.
//!
//! * bitext: UTF-8 TSV, one `source<TAB>target` pair per line
//! * JSON-lines readers for click logs and document collections live in
//!   [`crate::mine`]

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::textproc::{tokenize, Lang, TokenSequence};

/// A tokenized source/target pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub source: TokenSequence,
    pub target: TokenSequence,
}

impl SentencePair {
    pub fn new(source: TokenSequence, target: TokenSequence) -> Self {
        Self { source, target }
    }

    /// Tokenizes both sides of a raw pair.
    pub fn from_raw(source: &str, target: &str) -> Self {
        Self::new(tokenize(source, Lang::Source), tokenize(target, Lang::Target))
    }
}

pub(crate) fn open_file(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| {
        std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
    })?))
}

pub(crate) fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| {
        std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))
    })?))
}

/// Reads a bitext TSV and tokenizes both sides. Blank lines are skipped.
pub fn read_bitext(path: impl AsRef<Path>) -> Result<Vec<SentencePair>> {
    let path = path.as_ref();
    let mut pairs = Vec::new();
    for (i, line) in open_file(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: "expected `source<TAB>target`".into(),
        })?;
        pairs.push(SentencePair::from_raw(src, tgt));
    }
    Ok(pairs)
}

/// Writes already tokenized pairs as a bitext TSV (tokens space-joined).
pub fn write_bitext(path: impl AsRef<Path>, pairs: &[SentencePair]) -> Result<()> {
    let mut out = create_file(path.as_ref())?;
    for p in pairs {
        writeln!(out, "{}\t{}", p.source.joined(), p.target.joined())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads one tokenized sequence per line.
pub fn read_lines(path: impl AsRef<Path>, lang: Lang) -> Result<Vec<TokenSequence>> {
    let mut out = Vec::new();
    for line in open_file(path.as_ref())?.lines() {
        out.push(tokenize(&line?, lang));
    }
    Ok(out)
}

pub fn write_lines(path: impl AsRef<Path>, seqs: &[TokenSequence]) -> Result<()> {
    let mut out = create_file(path.as_ref())?;
    for s in seqs {
        writeln!(out, "{}", s.joined())?;
    }
    out.flush()?;
    Ok(())
}
