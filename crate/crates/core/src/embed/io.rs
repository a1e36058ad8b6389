use std::io::{BufRead, Write};

use super::{EmbedError, Result, SkipGramOutput};
use crate::diffcore::Tensor;
use crate::geometry::{to_hyperboloid, to_poincare, HyperboloidPoint, PoincarePoint};
use crate::GeometryTag;

/// Tokens with their vectors, as stored in the text embedding format:
///
/// ```text
/// <vocab_size> <dim> <geometry>
/// <token> <v_1> ... <v_k>
/// ```
///
/// `k` is `dim + 1` for hyperboloid files and `dim` otherwise. Values carry
/// the shortest digits that read back to the same `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub geometry: GeometryTag,
    pub dim: usize,
    pub tokens: Vec<String>,
    pub rows: Tensor,
}

pub fn escape_token(tok: &str) -> String {
    let mut out = String::with_capacity(tok.len());
    for ch in tok.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            ' ' => out.push_str("\\s"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() || c.is_whitespace() => out.push_str(&format!("\\u{:04X};", c as u32)),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape_token(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(ch) = it.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match it.next()? {
            '\\' => out.push('\\'),
            's' => out.push(' '),
            't' => out.push('\t'),
            'n' => out.push('\n'),
            'r' => out.push('\r'),
            'u' => {
                let hex: String = it.by_ref().take_while(|&c| c != ';').collect();
                out.push(char::from_u32(u32::from_str_radix(&hex, 16).ok()?)?);
            }
            _ => return None,
        }
    }
    Some(out)
}

fn row_width(geometry: GeometryTag, dim: usize) -> usize {
    match geometry {
        GeometryTag::Hyperboloid => dim + 1,
        _ => dim,
    }
}

impl EmbeddingFile {
    /// Exports the centre matrix of a trained model.
    pub fn from_training(out: &SkipGramOutput) -> Self {
        Self {
            geometry: out.matrices.geometry,
            dim: out.matrices.dim,
            tokens: out.vocab.tokens().to_vec(),
            rows: out.matrices.export_rows().clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "{} {} {}", self.tokens.len(), self.dim, self.geometry)?;
        for (i, tok) in self.tokens.iter().enumerate() {
            w.write_all(escape_token(tok).as_bytes())?;
            for v in self.rows.row_slice(i) {
                write!(w, " {v:e}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii numbers and utf-8 tokens")
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let parse_err = |line: usize, msg: String| EmbedError::Parse { line, msg };
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header".into()))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(parse_err(1, format!("expected '<vocab_size> <dim> <geometry>', got {header:?}")));
        }
        let count: usize = fields[0].parse().map_err(|_| parse_err(1, format!("bad vocab size {:?}", fields[0])))?;
        let dim: usize = fields[1].parse().map_err(|_| parse_err(1, format!("bad dimension {:?}", fields[1])))?;
        let geometry: GeometryTag = fields[2].parse().map_err(|e| parse_err(1, format!("{e}")))?;
        let width = row_width(geometry, dim);
        let mut tokens = Vec::with_capacity(count);
        let mut data = Vec::with_capacity(count * width);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            let raw = parts.next().unwrap_or_default();
            let tok = unescape_token(raw).ok_or_else(|| parse_err(lineno, format!("bad token escape {raw:?}")))?;
            let mut n = 0;
            for p in parts {
                let v: f64 = p.parse().map_err(|_| parse_err(lineno, format!("bad number {p:?}")))?;
                if !v.is_finite() {
                    return Err(parse_err(lineno, "non-finite value".into()));
                }
                data.push(v);
                n += 1;
            }
            if n != width {
                return Err(parse_err(lineno, format!("expected {width} values, found {n}")));
            }
            tokens.push(tok);
        }
        if tokens.len() != count {
            return Err(parse_err(1, format!("header promises {count} rows, found {}", tokens.len())));
        }
        let rows = Tensor::new(count, width, data).map_err(|e| parse_err(1, e.to_string()))?;
        Ok(Self { geometry, dim, tokens, rows })
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.tokens.iter().position(|t| t == token).map(|i| self.rows.row_slice(i))
    }

    /// Row-wise conversion between the hyperboloid and the unit ball.
    pub fn convert(&self, target: GeometryTag) -> Result<Self> {
        let width = row_width(target, self.dim);
        let mut rows = Tensor::zeros(self.len(), width);
        match (self.geometry, target) {
            (GeometryTag::Hyperboloid, GeometryTag::Poincare) => {
                for r in 0..self.len() {
                    let p = HyperboloidPoint::renormalize(self.rows.row_slice(r))?;
                    rows.row_slice_mut(r).copy_from_slice(to_poincare(&p).coords());
                }
            }
            (GeometryTag::Poincare, GeometryTag::Hyperboloid) => {
                for r in 0..self.len() {
                    let p = PoincarePoint::new(self.rows.row_slice(r).to_vec(), 1.0)?;
                    rows.row_slice_mut(r).copy_from_slice(to_hyperboloid(&p)?.coords());
                }
            }
            (from, to) => return Err(EmbedError::UnsupportedConversion(from, to)),
        }
        Ok(Self { geometry: target, dim: self.dim, tokens: self.tokens.clone(), rows })
    }
}
