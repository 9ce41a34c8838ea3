//! Question/answer/image triples, vocabularies and index encodings.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

/// One question, its raw answer line and the image it refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaRecord {
    pub question: String,
    pub answer: String,
    pub image_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    pub maxlen: usize,
    /// 0 keeps every word.
    pub truncate_to_most_frequent: usize,
    pub only_first_answer_word: bool,
    pub answer_word_delimiter: String,
    /// 0 keeps every pair.
    pub keep_top_qa_pairs: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            maxlen: 30,
            truncate_to_most_frequent: 0,
            only_first_answer_word: true,
            answer_word_delimiter: ", ".to_string(),
            keep_top_qa_pairs: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.maxlen == 0 {
            return Err(Error::Config("maxlen must be at least 1".into()));
        }
        if self.answer_word_delimiter.is_empty() {
            return Err(Error::Config("answer delimiter must be nonempty".into()));
        }
        Ok(())
    }
}

/// Parses the three-lines-per-record format: question, answer, image name.
pub fn parse_triple_file(bytes: &[u8]) -> Result<Vec<QaRecord>> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()]
            .iter()
            .filter(|&&b| b == b'\n')
            .count()
            + 1;
        Error::format(line, "invalid UTF-8")
    })?;
    let mut lines: Vec<&str> = text.split('\n').collect();
    while lines.last().is_some_and(|l| l.trim().is_empty()) {
        lines.pop();
    }
    if !lines.len().is_multiple_of(3) {
        let first_residual = lines.len() - lines.len() % 3 + 1;
        return Err(Error::format(
            first_residual,
            format!(
                "{} trailing line(s) do not form a complete question/answer/image record",
                lines.len() % 3
            ),
        ));
    }
    lines
        .chunks(3)
        .enumerate()
        .map(|(i, chunk)| {
            let question = chunk[0].trim();
            let image_name = chunk[2].trim();
            if question.is_empty() {
                return Err(Error::format(3 * i + 1, "empty question"));
            }
            if image_name.is_empty() {
                return Err(Error::format(3 * i + 3, "empty image name"));
            }
            Ok(QaRecord {
                question: question.to_string(),
                answer: chunk[1].trim().to_string(),
                image_name: image_name.to_string(),
            })
        })
        .collect()
}

pub fn write_triple_file(records: &[QaRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}\n{}\n{}", r.question, r.answer, r.image_name);
    }
    out
}

/// Single-space tokenization; empty tokens are dropped.
pub fn tokenize(text: &str) -> impl Iterator<Item = &str> {
    text.split(' ').filter(|t| !t.is_empty())
}

pub fn word_frequencies<S: AsRef<str>>(texts: &[S]) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for text in texts {
        for token in tokenize(text.as_ref()) {
            *counts.entry(token.to_string()).or_insert(0) += 1;
        }
    }
    counts
}

/// Splits an answer line into its answer words: split on `delimiter`,
/// trim, drop empty fragments.
pub fn answer_words<'a>(answer: &'a str, delimiter: &'a str) -> impl Iterator<Item = &'a str> {
    answer
        .split(delimiter)
        .map(str::trim)
        .filter(|w| !w.is_empty())
}

/// The class token an answer line trains as.
pub fn answer_class<'a>(answer: &'a str, cfg: &'a PipelineConfig) -> &'a str {
    if cfg.only_first_answer_word {
        answer_words(answer, &cfg.answer_word_delimiter)
            .next()
            .unwrap_or("")
    } else {
        answer.trim()
    }
}

/// Frequencies of answer classes (first words, or whole answer strings).
pub fn answer_frequencies<S: AsRef<str>>(
    answers: &[S],
    cfg: &PipelineConfig,
) -> HashMap<String, usize> {
    let mut counts = HashMap::new();
    for answer in answers {
        let class = answer_class(answer.as_ref(), cfg);
        if !class.is_empty() {
            *counts.entry(class.to_string()).or_insert(0) += 1;
        }
    }
    counts
}

/// Bidirectional word/index map with `<pad>` at 0 and `<unk>` at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    word2index: HashMap<String, usize>,
    index2word: Vec<String>,
}

impl Vocabulary {
    /// Builds from words in index order, starting at index 2.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self {
            word2index: HashMap::new(),
            index2word: Vec::new(),
        };
        for w in [PAD.to_string(), UNK.to_string()]
            .into_iter()
            .chain(words.into_iter().map(Into::into))
        {
            if vocab.word2index.contains_key(&w) {
                return Err(Error::Contract(format!("duplicate vocabulary word {w:?}")));
            }
            vocab.word2index.insert(w.clone(), vocab.index2word.len());
            vocab.index2word.push(w);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.index2word.len()
    }

    /// Never true: the two special tokens are always present.
    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, word: &str) -> Option<usize> {
        self.word2index.get(word).copied()
    }

    /// Index of `word`, or `<unk>` when absent.
    pub fn index_or_unk(&self, word: &str) -> usize {
        self.index(word).unwrap_or(UNK_INDEX)
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.index2word.get(index).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.index2word
    }

    /// One `word<TAB>index` line per entry, sorted by index.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for (i, w) in self.index2word.iter().enumerate() {
            let _ = writeln!(out, "{w}\t{i}");
        }
        out
    }

    pub fn import(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (word, index) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::format(n + 1, "expected word<TAB>index"))?;
            let index: usize = index
                .parse()
                .map_err(|_| Error::format(n + 1, format!("bad index {index:?}")))?;
            if entries.insert(index, (word.to_string(), n + 1)).is_some() {
                return Err(Error::format(n + 1, format!("duplicate index {index}")));
            }
        }
        for (expected, (&index, (word, line))) in entries.iter().enumerate() {
            if index != expected {
                return Err(Error::format(
                    *line,
                    format!("indices must be contiguous from 0; found {index} where {expected} was expected"),
                ));
            }
            let special = match index {
                PAD_INDEX => Some(PAD),
                UNK_INDEX => Some(UNK),
                _ => None,
            };
            if let Some(special) = special {
                if word != special {
                    return Err(Error::format(
                        *line,
                        format!("index {index} must be {special}"),
                    ));
                }
            }
        }
        if entries.len() < 2 {
            return Err(Error::format(
                entries.len() + 1,
                "vocabulary must contain <pad> and <unk>",
            ));
        }
        Self::from_words(entries.into_values().skip(2).map(|(w, _)| w))
            .map_err(|e| Error::format(0, e.to_string()))
    }
}

/// Specials first, then words by descending count with ties in ascending
/// lexicographic order; `truncate > 0` keeps only the top `truncate` words.
pub fn build_vocabulary(counts: &HashMap<String, usize>, truncate: usize) -> Vocabulary {
    let mut ranked: Vec<(&String, usize)> = counts
        .iter()
        .filter(|(w, _)| w.as_str() != PAD && w.as_str() != UNK)
        .map(|(w, &c)| (w, c))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if truncate > 0 {
        ranked.truncate(truncate);
    }
    Vocabulary::from_words(ranked.into_iter().map(|(w, _)| w.clone()))
        .expect("counts keys are unique")
}

pub fn encode_question(question: &str, vocab: &Vocabulary) -> Vec<usize> {
    tokenize(question).map(|t| vocab.index_or_unk(t)).collect()
}

pub fn encode_questions<S: AsRef<str>>(questions: &[S], vocab: &Vocabulary) -> Vec<Vec<usize>> {
    questions
        .iter()
        .map(|q| encode_question(q.as_ref(), vocab))
        .collect()
}

/// Inverse of [`encode_question`] for in-vocabulary tokens.
pub fn decode_question(indices: &[usize], vocab: &Vocabulary) -> String {
    indices
        .iter()
        .filter(|&&i| i != PAD_INDEX)
        .map(|&i| vocab.word(i).unwrap_or(UNK))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Pre-pads with `<pad>` and keeps the last `maxlen` entries of longer
/// sequences.
pub fn pad_sequences(seqs: &[Vec<usize>], maxlen: usize) -> Vec<Vec<usize>> {
    seqs.iter()
        .map(|s| {
            let kept = &s[s.len().saturating_sub(maxlen)..];
            let mut row = vec![PAD_INDEX; maxlen - kept.len()];
            row.extend_from_slice(kept);
            row
        })
        .collect()
}

pub fn encode_answers<S: AsRef<str>>(
    answers: &[S],
    vocab: &Vocabulary,
    cfg: &PipelineConfig,
) -> Vec<usize> {
    answers
        .iter()
        .map(|a| vocab.index_or_unk(answer_class(a.as_ref(), cfg)))
        .collect()
}

/// Keeps records whose whole answer string is among the `k` most frequent
/// (ties by lexicographic answer); `k == 0` keeps everything.
pub fn filter_top_pairs(records: &[QaRecord], k: usize) -> Vec<QaRecord> {
    if k == 0 {
        return records.to_vec();
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for r in records {
        *counts.entry(r.answer.as_str()).or_insert(0) += 1;
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let keep: std::collections::HashSet<&str> =
        ranked.into_iter().take(k).map(|(a, _)| a).collect();
    records
        .iter()
        .filter(|r| keep.contains(r.answer.as_str()))
        .cloned()
        .collect()
}
