//! Single-file model container.
//!
//! ```text
//! GYRONET1
//! geometry=<tag>
//! <key>=<value>          config, labels (label.<i>), tokens (token.<i>), metadata (meta.<k>)
//! ---
//! blocks: u32 name length, name, u64 rows, u64 cols, rows*cols f64, all little-endian
//! ```
//!
//! Parameters are stored under `param/<name>`, the frozen embeddings under
//! `vocab`, and RMSProp accumulators under `opt/<name>`.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::model::param_kind;
use super::{Classifier, HypformerError, Result, TokenTable, TransformerConfig};
use crate::diffcore::Tensor;
use crate::embed::{escape_token, unescape_token};
use crate::optim::{OptimizerState, ParamSet};
use crate::GeometryTag;

pub const BUNDLE_MAGIC: &str = "GYRONET1";
const HEADER_END: &str = "---";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub classifier: Classifier,
    pub labels: Vec<String>,
    pub optimizer: Option<OptimizerState>,
    /// Free-form `meta.<key>` lines, e.g. the seed of the run.
    pub meta: BTreeMap<String, String>,
}

fn bad(msg: impl Into<String>) -> HypformerError {
    HypformerError::Bundle(msg.into())
}

fn config_lines(c: &TransformerConfig) -> Vec<(String, String)> {
    [
        ("layers", c.layers.to_string()),
        ("heads", c.heads.to_string()),
        ("model_dim", c.model_dim.to_string()),
        ("head_dim", c.head_dim.to_string()),
        ("ffn_dim", c.ffn_dim.to_string()),
        ("dropout", c.dropout.to_string()),
        ("max_seq_len", c.max_seq_len.to_string()),
        ("num_classes", c.num_classes.to_string()),
        ("c", c.c.to_string()),
        ("residual", c.residual.to_string()),
        ("pe_scale", c.pe_scale.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn write_block(w: &mut impl Write, name: &str, t: &Tensor) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.rows() as u64).to_le_bytes())?;
    w.write_all(&(t.cols() as u64).to_le_bytes())?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(bad(format!("truncated block data at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl ModelBundle {
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let cl = &self.classifier;
        let mut head = format!("{BUNDLE_MAGIC}\ngeometry={}\n", cl.config.geometry);
        for (k, v) in config_lines(&cl.config) {
            head.push_str(&format!("{k}={v}\n"));
        }
        for (i, l) in self.labels.iter().enumerate() {
            head.push_str(&format!("label.{i}={}\n", escape_token(l)));
        }
        for (i, t) in cl.table.tokens().iter().enumerate() {
            head.push_str(&format!("token.{i}={}\n", escape_token(t)));
        }
        if let Some(opt) = &self.optimizer {
            head.push_str(&format!("opt.steps={}\nopt.lr_scale={}\n", opt.steps, opt.lr_scale));
        }
        for (k, v) in &self.meta {
            head.push_str(&format!("meta.{k}={}\n", escape_token(v)));
        }
        head.push_str(HEADER_END);
        head.push('\n');
        w.write_all(head.as_bytes())?;
        for (name, p) in cl.params.iter() {
            write_block(&mut w, &format!("param/{name}"), &p.value)?;
        }
        write_block(&mut w, "vocab", cl.table.vectors())?;
        if let Some(opt) = &self.optimizer {
            for (name, acc) in &opt.accumulators {
                write_block(&mut w, &format!("opt/{name}"), acc)?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let marker = format!("\n{HEADER_END}\n");
        let split = buf
            .windows(marker.len())
            .position(|w| w == marker.as_bytes())
            .ok_or_else(|| bad("missing header terminator"))?;
        let header = std::str::from_utf8(&buf[..split]).map_err(|e| bad(format!("header is not UTF-8: {e}")))?;
        let mut lines = header.lines();
        if lines.next() != Some(BUNDLE_MAGIC) {
            return Err(bad("not a GYRONET1 bundle"));
        }
        let mut kv = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("header line {}: expected key=value", i + 2)))?;
            kv.insert(k.to_string(), v.to_string());
        }
        let get = |k: &str| kv.get(k).ok_or_else(|| bad(format!("missing header key {k}")));
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| bad(format!("bad value for {k}: {v:?}")))
        }
        let geometry: GeometryTag = get("geometry")?.parse().map_err(|_| bad("unknown geometry"))?;
        let config = TransformerConfig {
            layers: num("layers", get("layers")?)?,
            heads: num("heads", get("heads")?)?,
            model_dim: num("model_dim", get("model_dim")?)?,
            head_dim: num("head_dim", get("head_dim")?)?,
            ffn_dim: num("ffn_dim", get("ffn_dim")?)?,
            dropout: num("dropout", get("dropout")?)?,
            geometry,
            max_seq_len: num("max_seq_len", get("max_seq_len")?)?,
            num_classes: num("num_classes", get("num_classes")?)?,
            c: num("c", get("c")?)?,
            residual: num("residual", get("residual")?)?,
            pe_scale: num("pe_scale", get("pe_scale")?)?,
        };
        config.validate()?;
        let indexed = |prefix: &str| -> Result<Vec<String>> {
            let mut out = Vec::new();
            while let Some(v) = kv.get(&format!("{prefix}.{}", out.len())) {
                out.push(unescape_token(v).ok_or_else(|| bad(format!("bad escape in {prefix} entry")))?);
            }
            Ok(out)
        };
        let labels = indexed("label")?;
        let tokens = indexed("token")?;
        let meta = kv
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v)))
            .map(|(k, v)| unescape_token(v).map(|v| (k, v)).ok_or_else(|| bad("bad escape in meta entry")))
            .collect::<Result<BTreeMap<_, _>>>()?;

        let mut cur = Cursor { buf: &buf, pos: split + marker.len() };
        let mut params = ParamSet::new();
        let mut vocab = None;
        let mut accumulators = BTreeMap::new();
        while cur.pos < buf.len() {
            let len = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as usize;
            let name = std::str::from_utf8(cur.take(len)?).map_err(|_| bad("block name is not UTF-8"))?.to_string();
            let (rows, cols) = (cur.u64()? as usize, cur.u64()? as usize);
            let bytes = cur.take(rows.checked_mul(cols).and_then(|n| n.checked_mul(8)).ok_or_else(|| bad("block too large"))?)?;
            let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
            let t = Tensor::new(rows, cols, data)?;
            if let Some(p) = name.strip_prefix("param/") {
                params.insert(p, param_kind(&config, p), t);
            } else if let Some(p) = name.strip_prefix("opt/") {
                accumulators.insert(p.to_string(), t);
            } else if name == "vocab" {
                vocab = Some(t);
            } else {
                return Err(bad(format!("unknown block {name:?}")));
            }
        }
        let table = TokenTable::new(tokens, vocab.ok_or_else(|| bad("missing vocab block"))?)?;
        let optimizer = match kv.get("opt.steps") {
            Some(s) => Some(OptimizerState {
                accumulators,
                steps: num("opt.steps", s)?,
                lr_scale: num("opt.lr_scale", get("opt.lr_scale")?)?,
            }),
            None => None,
        };
        if labels.len() != config.num_classes {
            return Err(bad(format!("{} labels for {} classes", labels.len(), config.num_classes)));
        }
        let classifier = Classifier { config, table, params };
        classifier.check_params()?;
        Ok(Self { classifier, labels, optimizer, meta })
    }
}
