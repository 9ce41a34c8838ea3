//! Blind and vision+language question answering models.
//!
//! Every model maps a batch of pre-padded question index rows (plus, for
//! vision models, one raw feature row per question) to an `[N, K]` matrix
//! of answer-class probabilities:
//!
//! * blind BOW: embedding, masked temporal average, dropout, dense, softmax
//! * blind RNN: embedding, GRU or LSTM final state, dropout, dense, softmax
//! * vision BOW / RNN: the language vector above fused with the (optionally
//!   projected) visual vector by concat, mul, sum or ave, then dropout,
//!   dense, softmax
//!
//! Index 0 (`<pad>`) is masked: BOW skips it, and recurrent cells carry
//! their state through pad steps unchanged.

mod cells;
mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use cells::{gru_step, lstm_step, GateVars, GruVars, LstmVars};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use crate::autodiff::{check_dropout_rate, Pooling, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::textpipe::{Vocabulary, PAD_INDEX};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    BlindBow,
    BlindRnn,
    VisionBow,
    VisionRnn,
}

impl ModelKind {
    pub fn is_recurrent(self) -> bool {
        matches!(self, ModelKind::BlindRnn | ModelKind::VisionRnn)
    }

    pub fn uses_vision(self) -> bool {
        matches!(self, ModelKind::VisionBow | ModelKind::VisionRnn)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MergeMode {
    #[default]
    Concat,
    Mul,
    Sum,
    Ave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellKind {
    #[default]
    Gru,
    Lstm,
}

macro_rules! name_table {
    ($ty:ty, $what:literal, { $($variant:path => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($variant => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::Config(format!(concat!("unknown ", $what, " {:?}"), other))),
                }
            }
        }
    };
}

name_table!(ModelKind, "model kind", {
    ModelKind::BlindBow => "blind-bow",
    ModelKind::BlindRnn => "blind-rnn",
    ModelKind::VisionBow => "vl-bow",
    ModelKind::VisionRnn => "vl-rnn",
});
name_table!(MergeMode, "merge mode", {
    MergeMode::Concat => "concat",
    MergeMode::Mul => "mul",
    MergeMode::Sum => "sum",
    MergeMode::Ave => "ave",
});
name_table!(CellKind, "cell", {
    CellKind::Gru => "gru",
    CellKind::Lstm => "lstm",
});

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Question vocabulary size.
    pub input_dim: usize,
    /// Number of answer classes.
    pub output_dim: usize,
    pub textual_embedding_dim: usize,
    /// 0 feeds raw features into the fusion untransformed.
    pub visual_embedding_dim: usize,
    pub hidden_state_dim: usize,
    /// Raw feature length; 0 for blind models.
    pub visual_dim: usize,
    pub merge_mode: MergeMode,
    pub cell: CellKind,
    pub dropout_rate: f64,
    /// BOW reduction over time. Average by default.
    pub pooling: Pooling,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            output_dim: 1,
            textual_embedding_dim: 500,
            visual_embedding_dim: 0,
            hidden_state_dim: 500,
            visual_dim: 0,
            merge_mode: MergeMode::Concat,
            cell: CellKind::Gru,
            dropout_rate: 0.5,
            pooling: Pooling::Average,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Length of the language branch output.
    pub fn language_dim(&self, kind: ModelKind) -> usize {
        if kind.is_recurrent() {
            self.hidden_state_dim
        } else {
            self.textual_embedding_dim
        }
    }

    /// Length of the visual branch output.
    pub fn vision_dim(&self) -> usize {
        if self.visual_embedding_dim > 0 {
            self.visual_embedding_dim
        } else {
            self.visual_dim
        }
    }

    /// Length of the vector fed to the classifier.
    pub fn pre_classifier_dim(&self, kind: ModelKind) -> usize {
        let lang = self.language_dim(kind);
        match (kind.uses_vision(), self.merge_mode) {
            (false, _) => lang,
            (true, MergeMode::Concat) => lang + self.vision_dim(),
            (true, _) => lang,
        }
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.input_dim < 2 {
            return fail(format!(
                "input_dim must be at least 2, got {}",
                self.input_dim
            ));
        }
        if self.output_dim < 1 {
            return fail("output_dim must be at least 1".into());
        }
        if self.textual_embedding_dim == 0 {
            return fail("textual_embedding_dim must be positive".into());
        }
        if kind.is_recurrent() && self.hidden_state_dim == 0 {
            return fail("hidden_state_dim must be positive for recurrent models".into());
        }
        check_dropout_rate(self.dropout_rate)?;
        if kind.uses_vision() {
            if self.visual_dim == 0 {
                return fail(format!("{kind} needs visual_dim > 0"));
            }
            let (lang, vis) = (self.language_dim(kind), self.vision_dim());
            if self.merge_mode != MergeMode::Concat && lang != vis {
                return fail(format!(
                    "merge mode {} needs equal branch lengths, got language {lang} vs visual {vis}",
                    self.merge_mode
                ));
            }
        }
        Ok(())
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
}

impl Params {
    pub(crate) fn from_entries(entries: Vec<(String, Tensor)>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index(name).map(move |i| &mut self.entries[i].1)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn zero_grad(&mut self) {
        self.tensors_mut().for_each(Tensor::zero_grad);
    }
}

/// One batch of model inputs.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    /// Pre-padded question rows, all of equal length.
    pub questions: &'a [Vec<usize>],
    /// Raw visual feature rows for vision models.
    pub visual: Option<&'a [Vec<f64>]>,
}

impl<'a> Batch<'a> {
    pub fn blind(questions: &'a [Vec<usize>]) -> Self {
        Self {
            questions,
            visual: None,
        }
    }

    pub fn with_visual(questions: &'a [Vec<usize>], visual: &'a [Vec<f64>]) -> Self {
        Self {
            questions,
            visual: Some(visual),
        }
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    kind: ModelKind,
    config: ModelConfig,
    params: Params,
}

fn glorot_bound(shape: &[usize]) -> f64 {
    (6.0 / (shape[0] + shape[1]) as f64).sqrt()
}

struct ParamBuilder<'r, R: Rng + ?Sized> {
    rng: &'r mut R,
    entries: Vec<(String, Tensor)>,
}

impl<R: Rng + ?Sized> ParamBuilder<'_, R> {
    fn kernel(&mut self, name: &str, rows: usize, cols: usize) -> Result<()> {
        let shape = vec![rows, cols];
        let bound = glorot_bound(&shape);
        let t = Tensor::uniform(shape, bound, self.rng)?.with_requires_grad();
        self.entries.push((name.to_string(), t));
        Ok(())
    }

    fn bias(&mut self, name: &str, len: usize, value: f64) -> Result<()> {
        let t = Tensor::new(vec![len], vec![value; len])?.with_requires_grad();
        self.entries.push((name.to_string(), t));
        Ok(())
    }

    fn gate(&mut self, prefix: &str, input: usize, hidden: usize, bias: f64) -> Result<()> {
        self.kernel(&format!("{prefix}.input"), input, hidden)?;
        self.kernel(&format!("{prefix}.recurrent"), hidden, hidden)?;
        self.bias(&format!("{prefix}.bias"), hidden, bias)
    }
}

pub const GRU_GATES: [&str; 3] = ["update", "reset", "candidate"];
pub const LSTM_GATES: [&str; 4] = ["input", "forget", "output", "cell"];

impl Model {
    /// Builds and initializes a model from `config.seed`.
    pub fn build(kind: ModelKind, config: ModelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::build_with_rng(kind, config, &mut rng)
    }

    /// Kernels and embeddings are uniform in `±sqrt(6 / (fan_in + fan_out))`;
    /// biases start at 0 except the LSTM forget bias, which starts at 1.
    pub fn build_with_rng<R: Rng + ?Sized>(
        kind: ModelKind,
        config: ModelConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate(kind)?;
        let mut b = ParamBuilder {
            rng,
            entries: Vec::new(),
        };
        let c = &config;
        b.kernel("embedding", c.input_dim, c.textual_embedding_dim)?;
        if kind.is_recurrent() {
            let (x, h) = (c.textual_embedding_dim, c.hidden_state_dim);
            match c.cell {
                CellKind::Gru => {
                    for g in GRU_GATES {
                        b.gate(&format!("gru.{g}"), x, h, 0.0)?;
                    }
                }
                CellKind::Lstm => {
                    for g in LSTM_GATES {
                        let bias = if g == "forget" { 1.0 } else { 0.0 };
                        b.gate(&format!("lstm.{g}"), x, h, bias)?;
                    }
                }
            }
        }
        if kind.uses_vision() && c.visual_embedding_dim > 0 {
            b.kernel("visual.weight", c.visual_dim, c.visual_embedding_dim)?;
            b.bias("visual.bias", c.visual_embedding_dim, 0.0)?;
        }
        b.kernel(
            "classifier.weight",
            c.pre_classifier_dim(kind),
            c.output_dim,
        )?;
        b.bias("classifier.bias", c.output_dim, 0.0)?;
        let params = Params::from_entries(b.entries);
        Ok(Self {
            kind,
            config,
            params,
        })
    }

    pub(crate) fn from_parts(kind: ModelKind, config: ModelConfig, params: Params) -> Result<Self> {
        let reference = Self::build(kind, config.clone())?;
        let same_layout = reference.params.len() == params.len()
            && reference
                .params
                .iter()
                .zip(params.iter())
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape());
        if !same_layout {
            return Err(Error::Contract(format!(
                "parameters do not match a {kind} model with the stored configuration"
            )));
        }
        Ok(Self {
            kind,
            config,
            params,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn pre_classifier_dim(&self) -> usize {
        self.config.pre_classifier_dim(self.kind)
    }

    /// Records every parameter as a leaf, in parameter order.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.tensors().map(|t| tape.leaf(t)).collect()
    }

    fn var(&self, vars: &[Var], name: &str) -> Var {
        vars[self
            .params
            .index(name)
            .expect("parameter exists for this model kind")]
    }

    fn gate_vars(&self, vars: &[Var], prefix: &str) -> GateVars {
        GateVars {
            input: self.var(vars, &format!("{prefix}.input")),
            recurrent: self.var(vars, &format!("{prefix}.recurrent")),
            bias: self.var(vars, &format!("{prefix}.bias")),
        }
    }

    fn check_batch(&self, batch: &Batch<'_>) -> Result<usize> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        let steps = batch.questions[0].len();
        if steps == 0 {
            return Err(Error::Contract(
                "question rows must have at least one step".into(),
            ));
        }
        if let Some(row) = batch.questions.iter().position(|q| q.len() != steps) {
            return Err(Error::Dimension {
                op: "batch",
                lhs: vec![n, steps],
                rhs: vec![row, batch.questions[row].len()],
            });
        }
        if self.kind.uses_vision() {
            let visual = batch
                .visual
                .ok_or_else(|| Error::Contract(format!("{} needs visual features", self.kind)))?;
            let d = self.config.visual_dim;
            if visual.len() != n || visual.iter().any(|v| v.len() != d) {
                return Err(Error::Dimension {
                    op: "visual batch",
                    lhs: vec![n, d],
                    rhs: vec![visual.len(), visual.first().map_or(0, Vec::len)],
                });
            }
        }
        Ok(steps)
    }

    fn language_branch(&self, tape: &mut Tape, vars: &[Var], batch: &Batch<'_>) -> Result<Var> {
        let steps = self.check_batch(batch)?;
        let n = batch.len();
        let table = self.var(vars, "embedding");
        if !self.kind.is_recurrent() {
            let flat: Vec<usize> = batch.questions.iter().flatten().copied().collect();
            let mask: Vec<bool> = flat.iter().map(|&i| i != PAD_INDEX).collect();
            let emb = tape.embedding_lookup(table, &flat)?;
            let emb = tape.reshape(emb, vec![n, steps, self.config.textual_embedding_dim])?;
            return tape.masked_temporal_pool(emb, &mask, self.config.pooling);
        }

        let d_h = self.config.hidden_state_dim;
        let mut h = tape.constant(Tensor::zeros(vec![n, d_h])?);
        let mut c = match self.config.cell {
            CellKind::Lstm => Some(tape.constant(Tensor::zeros(vec![n, d_h])?)),
            CellKind::Gru => None,
        };
        let gru = (self.config.cell == CellKind::Gru).then(|| GruVars {
            update: self.gate_vars(vars, "gru.update"),
            reset: self.gate_vars(vars, "gru.reset"),
            candidate: self.gate_vars(vars, "gru.candidate"),
        });
        let lstm = (self.config.cell == CellKind::Lstm).then(|| LstmVars {
            input: self.gate_vars(vars, "lstm.input"),
            forget: self.gate_vars(vars, "lstm.forget"),
            output: self.gate_vars(vars, "lstm.output"),
            cell: self.gate_vars(vars, "lstm.cell"),
        });
        for t in 0..steps {
            let column: Vec<usize> = batch.questions.iter().map(|q| q[t]).collect();
            let live: Vec<bool> = column.iter().map(|&i| i != PAD_INDEX).collect();
            if !live.contains(&true) {
                continue;
            }
            let x = tape.embedding_lookup(table, &column)?;
            if let Some(p) = &gru {
                let next = gru_step(tape, h, x, p)?;
                h = tape.select_rows(&live, next, h)?;
            } else if let (Some(p), Some(cell)) = (&lstm, c) {
                let (next_h, next_c) = lstm_step(tape, h, cell, x, p)?;
                h = tape.select_rows(&live, next_h, h)?;
                c = Some(tape.select_rows(&live, next_c, cell)?);
            }
        }
        Ok(h)
    }

    /// The vector the classifier sees, before dropout.
    pub fn representation(&self, tape: &mut Tape, vars: &[Var], batch: &Batch<'_>) -> Result<Var> {
        let lang = self.language_branch(tape, vars, batch)?;
        if !self.kind.uses_vision() {
            return Ok(lang);
        }
        let raw = batch.visual.expect("checked by check_batch");
        let flat: Vec<f64> = raw.iter().flatten().copied().collect();
        let mut vis = tape.constant(Tensor::matrix(raw.len(), self.config.visual_dim, flat)?);
        if self.config.visual_embedding_dim > 0 {
            let w = self.var(vars, "visual.weight");
            let b = self.var(vars, "visual.bias");
            let projected = tape.matmul(vis, w)?;
            vis = tape.add_bias(projected, b)?;
        }
        match self.config.merge_mode {
            MergeMode::Concat => tape.concat(lang, vis),
            MergeMode::Mul => tape.mul(lang, vis),
            MergeMode::Sum => tape.add(lang, vis),
            MergeMode::Ave => {
                let s = tape.add(lang, vis)?;
                Ok(tape.affine(s, 0.5, 0.0))
            }
        }
    }

    /// Class probabilities `[N, K]`. Dropout is active iff `dropout_rng`
    /// is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &Batch<'_>,
        dropout_rng: Option<&mut dyn RngCore>,
    ) -> Result<Var> {
        let mut h = self.representation(tape, vars, batch)?;
        if let Some(rng) = dropout_rng {
            h = tape.dropout(h, self.config.dropout_rate, true, rng)?;
        }
        let w = self.var(vars, "classifier.weight");
        let b = self.var(vars, "classifier.bias");
        let logits = tape.matmul(h, w)?;
        let logits = tape.add_bias(logits, b)?;
        Ok(tape.softmax(logits))
    }

    /// Inference-mode class probabilities.
    pub fn predict_scores(&self, batch: &Batch<'_>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .tensors()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let out = self.forward(&mut tape, &vars, batch, None)?;
        Ok(tape.value(out).clone())
    }

    pub fn predict_classes(&self, batch: &Batch<'_>) -> Result<Vec<usize>> {
        Ok(self.predict_scores(batch)?.rows().map(argmax).collect())
    }
}

pub fn build_blind_bow<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Model> {
    Model::build_with_rng(ModelKind::BlindBow, config, rng)
}

pub fn build_blind_rnn<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Model> {
    Model::build_with_rng(ModelKind::BlindRnn, config, rng)
}

pub fn build_vision_bow<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Model> {
    Model::build_with_rng(ModelKind::VisionBow, config, rng)
}

pub fn build_vision_rnn<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Model> {
    Model::build_with_rng(ModelKind::VisionRnn, config, rng)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Maximum-likelihood answer word per question.
pub fn decode_predictions(
    model: &Model,
    batch: &Batch<'_>,
    answers: &Vocabulary,
) -> Result<Vec<String>> {
    let classes = model.predict_classes(batch)?;
    Ok(decode_classes(&classes, answers))
}

pub fn decode_classes(classes: &[usize], answers: &Vocabulary) -> Vec<String> {
    classes
        .iter()
        .map(|&c| answers.word(c).unwrap_or(crate::textpipe::UNK).to_string())
        .collect()
}
