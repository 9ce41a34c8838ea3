//! Plain-text parameter checkpoints.
//!
//! ```text
//! #model kind=blind-bow cell=gru merge=concat input_dim=12 ...
//! #meta maxlen=30
//! embedding 12 500
//! 0.0123 -0.044 ...
//! classifier.bias 7
//! 0 0 0 0 0 0 0
//! ```
//!
//! Each tensor is a header line `name extent...` followed by one line of
//! its row-major values. Floats use Rust's shortest round-trip formatting,
//! so save/load is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{CellKind, MergeMode, Model, ModelConfig, ModelKind, Params};
use crate::autodiff::{Pooling, Tensor};
use crate::error::{Error, Result};

/// A model plus free-form `key=value` metadata (pipeline settings).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: BTreeMap<String, String>,
}

fn pooling_str(p: Pooling) -> &'static str {
    match p {
        Pooling::Average => "average",
        Pooling::Sum => "sum",
    }
}

pub fn save_checkpoint(model: &Model, meta: &BTreeMap<String, String>) -> String {
    let c = model.config();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "#model kind={} cell={} merge={} input_dim={} output_dim={} textual_embedding_dim={} \
         visual_embedding_dim={} hidden_state_dim={} visual_dim={} dropout_rate={} pooling={} seed={}",
        model.kind(),
        c.cell,
        c.merge_mode,
        c.input_dim,
        c.output_dim,
        c.textual_embedding_dim,
        c.visual_embedding_dim,
        c.hidden_state_dim,
        c.visual_dim,
        c.dropout_rate,
        pooling_str(c.pooling),
        c.seed,
    );
    if !meta.is_empty() {
        out.push_str("#meta");
        for (k, v) in meta {
            let _ = write!(out, " {k}={v}");
        }
        out.push('\n');
    }
    for (name, tensor) in model.params().iter() {
        out.push_str(name);
        for d in tensor.shape() {
            let _ = write!(out, " {d}");
        }
        out.push('\n');
        let mut first = true;
        for v in tensor.data() {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v}");
        }
        out.push('\n');
    }
    out
}

fn key_values(line_no: usize, body: &str) -> Result<BTreeMap<String, String>> {
    body.split_whitespace()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| Error::format(line_no, format!("expected key=value, got {kv:?}")))
        })
        .collect()
}

fn field<T: std::str::FromStr>(
    fields: &BTreeMap<String, String>,
    key: &str,
    line_no: usize,
) -> Result<T> {
    fields
        .get(key)
        .ok_or_else(|| Error::format(line_no, format!("missing {key}")))?
        .parse()
        .map_err(|_| Error::format(line_no, format!("bad value for {key}")))
}

pub fn load_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    let (line_no, header) = lines
        .next()
        .ok_or_else(|| Error::format(1, "empty checkpoint"))?;
    let body = header
        .strip_prefix("#model")
        .ok_or_else(|| Error::format(line_no, "expected #model header"))?;
    let f = key_values(line_no, body)?;
    let kind: ModelKind = field::<String>(&f, "kind", line_no)?
        .parse()
        .map_err(|e: Error| Error::format(line_no, e.to_string()))?;
    let cell: CellKind = field::<String>(&f, "cell", line_no)?
        .parse()
        .map_err(|e: Error| Error::format(line_no, e.to_string()))?;
    let merge_mode: MergeMode = field::<String>(&f, "merge", line_no)?
        .parse()
        .map_err(|e: Error| Error::format(line_no, e.to_string()))?;
    let pooling = match field::<String>(&f, "pooling", line_no)?.as_str() {
        "average" => Pooling::Average,
        "sum" => Pooling::Sum,
        other => return Err(Error::format(line_no, format!("unknown pooling {other:?}"))),
    };
    let config = ModelConfig {
        input_dim: field(&f, "input_dim", line_no)?,
        output_dim: field(&f, "output_dim", line_no)?,
        textual_embedding_dim: field(&f, "textual_embedding_dim", line_no)?,
        visual_embedding_dim: field(&f, "visual_embedding_dim", line_no)?,
        hidden_state_dim: field(&f, "hidden_state_dim", line_no)?,
        visual_dim: field(&f, "visual_dim", line_no)?,
        merge_mode,
        cell,
        dropout_rate: field(&f, "dropout_rate", line_no)?,
        pooling,
        seed: field(&f, "seed", line_no)?,
    };

    let mut meta = BTreeMap::new();
    while let Some((n, l)) = lines.peek().copied() {
        match l.strip_prefix("#meta") {
            Some(body) => {
                meta.extend(key_values(n, body)?);
                lines.next();
            }
            None => break,
        }
    }

    let mut entries = Vec::new();
    while let Some((n, head)) = lines.next() {
        if head.trim().is_empty() {
            continue;
        }
        let mut parts = head.split_whitespace();
        let name = parts.next().unwrap().to_string();
        let shape = parts
            .map(|d| {
                d.parse::<usize>()
                    .map_err(|_| Error::format(n, format!("bad extent {d:?}")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let (vn, values) = lines
            .next()
            .ok_or_else(|| Error::format(n + 1, format!("missing values for {name}")))?;
        let data = values
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::format(vn, format!("bad float {v:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        let tensor = Tensor::new(shape, data)
            .map_err(|e| Error::format(vn, format!("{name}: {e}")))?
            .with_requires_grad();
        entries.push((name, tensor));
    }
    let model = Model::from_parts(kind, config, Params::from_entries(entries))?;
    Ok(Checkpoint { model, meta })
}
