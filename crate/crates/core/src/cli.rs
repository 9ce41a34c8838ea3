//! `vqa` subcommands: build-vocab, train, predict, eval.
//!
//! Every command writes its outputs through a temporary file in the target
//! directory and renames it into place, so a failed run leaves nothing
//! behind. Each run also writes `<output>.manifest.json`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::autodiff::Pooling;
use crate::error::{Error, Result};
use crate::features::{align, load_feature_table, FeatureTable};
use crate::metrics::{report_line, wups_corpus, WupsConfig, ACCURACY_SENTINEL};
use crate::models::{
    decode_classes, load_checkpoint, save_checkpoint, CellKind, MergeMode, Model, ModelConfig,
    ModelKind,
};
use crate::ontology::Ontology;
use crate::textpipe::{
    answer_frequencies, build_vocabulary, encode_answers, encode_questions, filter_top_pairs,
    pad_sequences, parse_triple_file, word_frequencies, PipelineConfig, QaRecord, Vocabulary,
};
use crate::train::{fit, Dataset, EpochReport, Optimizer, TrainingConfig};

#[derive(Debug, Parser)]
#[command(
    name = "vqa",
    version,
    about = "Question answering baselines over image features"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build question and answer vocabularies from a training triple file.
    BuildVocab(BuildVocabArgs),
    /// Train a model and write a checkpoint, epoch log and manifest.
    Train(TrainArgs),
    /// Write one predicted answer per test record.
    Predict(PredictArgs),
    /// Score predicted answers against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BuildVocabArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Keep the k most frequent question words; 0 keeps all.
    #[arg(long, default_value_t = 0)]
    pub truncate: usize,
    #[arg(long)]
    pub out_q: PathBuf,
    #[arg(long)]
    pub out_a: PathBuf,
    /// Treat the whole answer line as one class instead of its first word.
    #[arg(long)]
    pub whole_answer: bool,
    /// Keep only records whose answer is among the k most frequent; 0 keeps all.
    #[arg(long, default_value_t = 0)]
    pub top_pairs: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse_from_str::<ModelKind>)]
    #[serde(serialize_with = "display")]
    pub model: ModelKind,
    #[arg(long, default_value = "gru", value_parser = parse_from_str::<CellKind>)]
    #[serde(serialize_with = "display")]
    pub cell: CellKind,
    #[arg(long, default_value = "concat", value_parser = parse_from_str::<MergeMode>)]
    #[serde(serialize_with = "display")]
    pub merge: MergeMode,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub vocab_q: PathBuf,
    #[arg(long)]
    pub vocab_a: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub maxlen: usize,
    #[arg(long, default_value_t = 500)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 500)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub visual_embed_dim: usize,
    #[arg(long, default_value = "adam", value_parser = parse_from_str::<Optimizer>)]
    #[serde(serialize_with = "display")]
    pub optimizer: Optimizer,
    /// Defaults to 0.01 for sgd and 0.001 for adam.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 512)]
    pub batch: usize,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.1)]
    pub val_split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
    /// Bag-of-words reduction: average or sum.
    #[arg(long, default_value = "average", value_parser = parse_pooling)]
    #[serde(serialize_with = "pooling_name")]
    pub pooling: Pooling,
    #[arg(long)]
    pub whole_answer: bool,
    #[arg(long, default_value_t = 0)]
    pub top_pairs: usize,
    /// Scale every image feature vector to unit length.
    #[arg(long)]
    pub l2_normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub vocab_q: PathBuf,
    #[arg(long)]
    pub vocab_a: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// wups or acc.
    #[arg(long, default_value = "wups", value_parser = ["wups", "acc"])]
    pub metric: String,
    /// WUPS threshold in [0, 1]; -1 means exact set matching.
    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
    pub tau: f64,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Also write the report lines (and a manifest) here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_from_str<T: std::str::FromStr<Err = Error>>(s: &str) -> std::result::Result<T, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_pooling(s: &str) -> std::result::Result<Pooling, String> {
    match s {
        "average" => Ok(Pooling::Average),
        "sum" => Ok(Pooling::Sum),
        other => Err(format!(
            "unknown pooling {other:?}, expected average or sum"
        )),
    }
}

fn display<T: std::fmt::Display, S: serde::Serializer>(
    v: &T,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

fn pooling_name<S: serde::Serializer>(p: &Pooling, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(match p {
        Pooling::Average => "average",
        Pooling::Sum => "sum",
    })
}

/// Record of one run: what was asked, what was read, what was written.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest<'a, A: Serialize> {
    pub command: &'a str,
    pub options: &'a A,
    pub seed: Option<u64>,
    /// Input path to hex SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
}

impl<A: Serialize> RunManifest<'_, A> {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

/// Input file contents kept together with their digests.
#[derive(Default)]
struct Inputs {
    digests: BTreeMap<String, String>,
}

impl Inputs {
    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.digests.insert(
            path.display().to_string(),
            hex::encode(Sha256::digest(&bytes)),
        );
        Ok(bytes)
    }

    fn read_text(&mut self, path: &Path) -> Result<String> {
        let bytes = self.read(path)?;
        String::from_utf8(bytes).map_err(|e| {
            let line = e.as_bytes()[..e.utf8_error().valid_up_to()]
                .iter()
                .filter(|&&b| b == b'\n')
                .count();
            Error::Format {
                line: line + 1,
                message: format!("{}: invalid UTF-8", path.display()),
            }
        })
    }
}

/// Writes every file or none of them: all contents go to temporaries in
/// the destination directories first, then each is renamed into place.
fn commit(files: &[(&Path, &str)]) -> Result<()> {
    let mut staged = Vec::with_capacity(files.len());
    for (path, contents) in files {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(contents.as_bytes())
            .and_then(|_| tmp.flush())
            .map_err(|e| Error::io(*path, e))?;
        staged.push((tmp, *path));
    }
    for (tmp, path) in staged {
        tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    }
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn manifest_path(path: &Path) -> PathBuf {
    with_suffix(path, ".manifest.json")
}

fn log_path(checkpoint: &Path) -> PathBuf {
    with_suffix(checkpoint, ".log")
}

fn lines_of(text: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = text.split('\n').map(|l| l.trim_end_matches('\r')).collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    lines
}

fn pipeline(whole_answer: bool, maxlen: usize, top_pairs: usize) -> PipelineConfig {
    PipelineConfig {
        maxlen,
        only_first_answer_word: !whole_answer,
        keep_top_qa_pairs: top_pairs,
        ..PipelineConfig::default()
    }
}

fn load_records(inputs: &mut Inputs, path: &Path, top_pairs: usize) -> Result<Vec<QaRecord>> {
    let records = parse_triple_file(&inputs.read(path)?)?;
    Ok(filter_top_pairs(&records, top_pairs))
}

fn load_vocab(inputs: &mut Inputs, path: &Path) -> Result<Vocabulary> {
    Vocabulary::import(&inputs.read_text(path)?)
}

fn load_features(inputs: &mut Inputs, path: &Path, normalize: bool) -> Result<FeatureTable> {
    let table = load_feature_table(&inputs.read(path)?)?;
    Ok(if normalize { table.normalized() } else { table })
}

pub fn cmd_build_vocab(args: &BuildVocabArgs) -> Result<()> {
    let mut inputs = Inputs::default();
    let records = load_records(&mut inputs, &args.train, args.top_pairs)?;
    let cfg = pipeline(args.whole_answer, 1, args.top_pairs);
    let questions: Vec<&str> = records.iter().map(|r| r.question.as_str()).collect();
    let answers: Vec<&str> = records.iter().map(|r| r.answer.as_str()).collect();
    let q_vocab = build_vocabulary(&word_frequencies(&questions), args.truncate);
    let a_vocab = build_vocabulary(&answer_frequencies(&answers, &cfg), 0);
    let manifest = RunManifest {
        command: "build-vocab",
        options: args,
        seed: None,
        inputs: inputs.digests,
        outputs: vec![
            args.out_q.display().to_string(),
            args.out_a.display().to_string(),
        ],
    };
    commit(&[
        (&args.out_q, &q_vocab.export()),
        (&args.out_a, &a_vocab.export()),
        (&manifest_path(&args.out_q), &manifest.to_json()),
    ])
}

/// Trains per `args` and writes the checkpoint, `<out>.log` and
/// `<out>.manifest.json`. Nothing is written if any step fails.
pub fn cmd_train(args: &TrainArgs) -> Result<Vec<EpochReport>> {
    let mut inputs = Inputs::default();
    let kind = args.model;
    if kind.uses_vision() && args.features.is_none() {
        return Err(Error::Usage(format!("--model {kind} requires --features")));
    }
    let cfg = pipeline(args.whole_answer, args.maxlen, args.top_pairs);
    cfg.validate()?;
    let records = load_records(&mut inputs, &args.train, args.top_pairs)?;
    let q_vocab = load_vocab(&mut inputs, &args.vocab_q)?;
    let a_vocab = load_vocab(&mut inputs, &args.vocab_a)?;
    let visual = match (&args.features, kind.uses_vision()) {
        (Some(path), true) => {
            let table = load_features(&mut inputs, path, args.l2_normalize)?;
            Some((table.dim(), align(&records, &table)?))
        }
        _ => None,
    };

    let model_cfg = ModelConfig {
        input_dim: q_vocab.len(),
        output_dim: a_vocab.len(),
        textual_embedding_dim: args.embed_dim,
        visual_embedding_dim: args.visual_embed_dim,
        hidden_state_dim: args.hidden_dim,
        visual_dim: visual.as_ref().map_or(0, |(d, _)| *d),
        merge_mode: args.merge,
        cell: args.cell,
        dropout_rate: args.dropout,
        pooling: args.pooling,
        seed: args.seed,
    };
    let mut model = Model::build(kind, model_cfg)?;
    let train_cfg = TrainingConfig {
        batch_size: args.batch,
        epochs: args.epochs,
        validation_split: args.val_split,
        optimizer: args.optimizer,
        learning_rate: args.lr,
        seed: args.seed,
        ..TrainingConfig::default()
    };
    train_cfg.validate()?;

    let questions: Vec<&str> = records.iter().map(|r| r.question.as_str()).collect();
    let answers: Vec<&str> = records.iter().map(|r| r.answer.as_str()).collect();
    let data = Dataset {
        questions: pad_sequences(&encode_questions(&questions, &q_vocab), cfg.maxlen),
        visual: visual.map(|(_, rows)| rows),
        targets: encode_answers(&answers, &a_vocab, &cfg),
    };
    let mut log = String::new();
    let reports = fit(&mut model, &data, &train_cfg, |r| {
        log.push_str(&r.to_string());
        log.push('\n');
    })?;

    let meta = BTreeMap::from([
        ("maxlen".to_string(), cfg.maxlen.to_string()),
        ("whole_answer".to_string(), args.whole_answer.to_string()),
        ("l2_normalize".to_string(), args.l2_normalize.to_string()),
    ]);
    let log_file = log_path(&args.out);
    let manifest = RunManifest {
        command: "train",
        options: args,
        seed: Some(args.seed),
        inputs: inputs.digests,
        outputs: vec![
            args.out.display().to_string(),
            log_file.display().to_string(),
        ],
    };
    commit(&[
        (&args.out, &save_checkpoint(&model, &meta)),
        (&log_file, &log),
        (&manifest_path(&args.out), &manifest.to_json()),
    ])?;
    Ok(reports)
}

fn meta_value<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
    meta.get(key)
        .ok_or_else(|| Error::format(2, format!("checkpoint lacks meta field {key}")))?
        .parse()
        .map_err(|_| Error::format(2, format!("bad checkpoint meta field {key}")))
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let mut inputs = Inputs::default();
    let checkpoint = load_checkpoint(&inputs.read_text(&args.checkpoint)?)?;
    let model = checkpoint.model;
    let maxlen: usize = meta_value(&checkpoint.meta, "maxlen")?;
    let normalize: bool = meta_value(&checkpoint.meta, "l2_normalize")?;
    let kind = model.kind();
    if kind.uses_vision() && args.features.is_none() {
        return Err(Error::Usage(format!(
            "checkpoint model {kind} requires --features"
        )));
    }
    let records = parse_triple_file(&inputs.read(&args.test)?)?;
    let q_vocab = load_vocab(&mut inputs, &args.vocab_q)?;
    let a_vocab = load_vocab(&mut inputs, &args.vocab_a)?;
    let c = model.config();
    if q_vocab.len() != c.input_dim || a_vocab.len() != c.output_dim {
        return Err(Error::Contract(format!(
            "vocabularies ({} questions, {} answers) do not match the checkpoint ({}, {})",
            q_vocab.len(),
            a_vocab.len(),
            c.input_dim,
            c.output_dim
        )));
    }
    let visual = match (&args.features, kind.uses_vision()) {
        (Some(path), true) => {
            let table = load_features(&mut inputs, path, normalize)?;
            if table.dim() != c.visual_dim {
                return Err(Error::Contract(format!(
                    "feature dimension {} does not match the checkpoint's {}",
                    table.dim(),
                    c.visual_dim
                )));
            }
            Some(align(&records, &table)?)
        }
        _ => None,
    };

    let questions: Vec<&str> = records.iter().map(|r| r.question.as_str()).collect();
    let data = Dataset {
        questions: pad_sequences(&encode_questions(&questions, &q_vocab), maxlen),
        visual,
        targets: vec![0; records.len()],
    };
    let mut out = String::new();
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(512) {
        let part = data.select(chunk);
        let classes = model.predict_classes(&part.batch())?;
        for answer in decode_classes(&classes, &a_vocab) {
            out.push_str(&answer);
            out.push('\n');
        }
    }
    let manifest = RunManifest {
        command: "predict",
        options: args,
        seed: None,
        inputs: inputs.digests,
        outputs: vec![args.out.display().to_string()],
    };
    commit(&[
        (&args.out, &out),
        (&manifest_path(&args.out), &manifest.to_json()),
    ])
}

/// Returns the report lines printed to stdout.
pub fn cmd_eval(args: &EvalArgs) -> Result<Vec<String>> {
    let mut inputs = Inputs::default();
    let pred_text = inputs.read_text(&args.pred)?;
    let truth_text = inputs.read_text(&args.truth)?;
    let (preds, truths) = (lines_of(&pred_text), lines_of(&truth_text));
    if preds.len() != truths.len() {
        return Err(Error::Contract(format!(
            "{} has {} lines but {} has {}",
            args.pred.display(),
            preds.len(),
            args.truth.display(),
            truths.len()
        )));
    }
    let accuracy_mode = args.metric == "acc";
    let tau = if accuracy_mode {
        ACCURACY_SENTINEL
    } else {
        args.tau
    };
    let cfg = WupsConfig::with_threshold(tau)?;
    let ontology = match (&args.taxonomy, &args.lexicon, cfg.is_accuracy_mode()) {
        (_, _, true) => Ontology::string_match_only(),
        (Some(t), Some(l), false) => {
            let t = inputs.read_text(t)?;
            let l = inputs.read_text(l)?;
            Ontology::parse(&t, &l)?
        }
        (None, None, false) => Ontology::string_match_only(),
        _ => {
            return Err(Error::Usage(
                "--taxonomy and --lexicon must be given together".into(),
            ))
        }
    };
    let value = wups_corpus(&preds, &truths, &cfg, &ontology)?;
    let lines = vec![report_line(&args.metric, tau, value)];
    if let Some(out) = &args.out {
        let mut text = lines.join("\n");
        text.push('\n');
        let manifest = RunManifest {
            command: "eval",
            options: args,
            seed: None,
            inputs: inputs.digests,
            outputs: vec![out.display().to_string()],
        };
        commit(&[(out, &text), (&manifest_path(out), &manifest.to_json())])?;
    }
    Ok(lines)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildVocab(a) => cmd_build_vocab(&a),
        Command::Train(a) => {
            for r in cmd_train(&a)? {
                println!("{r}");
            }
            Ok(())
        }
        Command::Predict(a) => cmd_predict(&a),
        Command::Eval(a) => {
            for line in cmd_eval(&a)? {
                println!("{line}");
            }
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
