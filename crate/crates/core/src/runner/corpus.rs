use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use super::{Result, RunError};

const CHUNK: usize = 1 << 16;
const BOM: &[u8] = b"\xEF\xBB\xBF";

/// Streams one token per Unicode scalar value from a reader, decoding in
/// fixed-size chunks. A leading byte-order mark is skipped.
pub struct CorpusTokens<R> {
    reader: R,
    keep_whitespace: bool,
    pending: Vec<u8>,
    chars: std::vec::IntoIter<char>,
    offset: u64,
    started: bool,
    done: bool,
    label: String,
}

impl<R: Read> CorpusTokens<R> {
    pub fn new(reader: R, keep_whitespace: bool, label: impl Into<String>) -> Self {
        Self {
            reader,
            keep_whitespace,
            pending: Vec::new(),
            chars: Vec::new().into_iter(),
            offset: 0,
            started: false,
            done: false,
            label: label.into(),
        }
    }

    /// Decodes the next chunk into `chars`. Returns false at end of input.
    fn refill(&mut self) -> Result<bool> {
        let mut buf = vec![0u8; CHUNK];
        let n = self.reader.read(&mut buf).map_err(|e| RunError::Io { path: self.label.clone(), source: e })?;
        let at_end = n == 0;
        self.pending.extend_from_slice(&buf[..n]);
        if !self.started && (self.pending.len() >= BOM.len() || at_end) {
            self.started = true;
            if self.pending.starts_with(BOM) {
                self.pending.drain(..BOM.len());
                self.offset += BOM.len() as u64;
            }
        }
        if !self.started {
            return Ok(true);
        }
        // an incomplete sequence at the chunk end is only an error at EOF
        let (valid, invalid) = match std::str::from_utf8(&self.pending) {
            Ok(s) => (s.len(), false),
            Err(e) => (e.valid_up_to(), e.error_len().is_some() || at_end),
        };
        if invalid {
            return Err(RunError::Utf8 { path: self.label.clone(), offset: self.offset + valid as u64 });
        }
        let text = std::str::from_utf8(&self.pending[..valid]).expect("validated prefix");
        let chars: Vec<char> = text.chars().filter(|c| self.keep_whitespace || !c.is_whitespace()).collect();
        self.chars = chars.into_iter();
        self.offset += valid as u64;
        self.pending.drain(..valid);
        Ok(!at_end)
    }
}

impl<R: Read> Iterator for CorpusTokens<R> {
    type Item = Result<String>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(c) = self.chars.next() {
                return Some(Ok(c.to_string()));
            }
            if self.done {
                return None;
            }
            match self.refill() {
                Ok(more) => self.done = !more,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

/// Opens `path` as a character token stream.
pub fn corpus_tokens(path: &Path, keep_whitespace: bool) -> Result<CorpusTokens<BufReader<File>>> {
    let f = File::open(path).map_err(|e| RunError::io(path, e))?;
    Ok(CorpusTokens::new(BufReader::new(f), keep_whitespace, path.display().to_string()))
}

/// Reads every token of a corpus file. Empty corpora are an error.
pub fn ingest_corpus(path: &Path, keep_whitespace: bool) -> Result<Vec<String>> {
    let tokens = corpus_tokens(path, keep_whitespace)?.collect::<Result<Vec<_>>>()?;
    if tokens.is_empty() {
        return Err(RunError::EmptyInput(path.display().to_string()));
    }
    Ok(tokens)
}
