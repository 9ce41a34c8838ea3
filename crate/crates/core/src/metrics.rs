//! Set accuracy and the thresholded Wu-Palmer set score (WUPS).

use crate::error::{Error, Result};
use crate::ontology::Ontology;

/// Threshold value that switches scoring to exact set matching.
pub const ACCURACY_SENTINEL: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct WupsConfig {
    /// `tau` in `[0, 1]`, or [`ACCURACY_SENTINEL`].
    pub threshold: f64,
    /// Multiplier applied to similarities below the threshold.
    pub penalty: f64,
    pub delimiter: String,
}

impl Default for WupsConfig {
    fn default() -> Self {
        Self {
            threshold: 0.9,
            penalty: 0.1,
            delimiter: ", ".to_string(),
        }
    }
}

impl WupsConfig {
    pub fn with_threshold(threshold: f64) -> Result<Self> {
        let cfg = Self {
            threshold,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.is_accuracy_mode() || (0.0..=1.0).contains(&self.threshold)) {
            return Err(Error::Config(format!(
                "threshold must lie in [0, 1] or be -1, got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn is_accuracy_mode(&self) -> bool {
        self.threshold == ACCURACY_SENTINEL
    }
}

/// Distinct answer words of one answer line, in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerSet(Vec<String>);

impl AnswerSet {
    pub fn parse(line: &str, delimiter: &str) -> Self {
        let mut words: Vec<String> = Vec::new();
        for w in line
            .split(delimiter)
            .map(str::trim)
            .filter(|w| !w.is_empty())
        {
            if !words.iter().any(|x| x == w) {
                words.push(w.to_string());
            }
        }
        Self(words)
    }

    pub fn words(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn contains(&self, w: &str) -> bool {
        self.0.iter().any(|x| x == w)
    }
}

/// Word similarity, passed through at or above the threshold and scaled by
/// the penalty below it.
pub fn thresholded_wup(a: &str, b: &str, cfg: &WupsConfig, ontology: &Ontology) -> f64 {
    let s = ontology.word_wup(a, b);
    if s >= cfg.threshold {
        s
    } else {
        cfg.penalty * s
    }
}

/// 1 iff the two sets hold the same words.
pub fn set_accuracy(pred: &AnswerSet, truth: &AnswerSet) -> f64 {
    let same = pred.len() == truth.len() && pred.words().iter().all(|w| truth.contains(w));
    if same {
        1.0
    } else {
        0.0
    }
}

/// Minimum over both directions of the product of best per-word matches.
pub fn wups_pair(
    pred: &AnswerSet,
    truth: &AnswerSet,
    cfg: &WupsConfig,
    ontology: &Ontology,
) -> Result<f64> {
    if pred.is_empty() || truth.is_empty() {
        return Err(Error::Contract("WUPS needs nonempty answer sets".into()));
    }
    let directed = |from: &AnswerSet, to: &AnswerSet| -> f64 {
        from.words()
            .iter()
            .map(|a| {
                to.words()
                    .iter()
                    .map(|t| thresholded_wup(a, t, cfg, ontology))
                    .fold(0.0, f64::max)
            })
            .product()
    };
    Ok(directed(pred, truth).min(directed(truth, pred)))
}

/// Mean per-pair score; exact set matching under the accuracy sentinel.
pub fn wups_corpus<S: AsRef<str>, T: AsRef<str>>(
    preds: &[S],
    truths: &[T],
    cfg: &WupsConfig,
    ontology: &Ontology,
) -> Result<f64> {
    cfg.validate()?;
    if preds.len() != truths.len() {
        return Err(Error::Contract(format!(
            "{} predictions vs {} ground-truth answers",
            preds.len(),
            truths.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Contract("no answer pairs to score".into()));
    }
    let mut total = 0.0;
    for (i, (p, t)) in preds.iter().zip(truths).enumerate() {
        let p = AnswerSet::parse(p.as_ref(), &cfg.delimiter);
        let t = AnswerSet::parse(t.as_ref(), &cfg.delimiter);
        if p.is_empty() || t.is_empty() {
            return Err(Error::Contract(format!(
                "empty answer set on line {}",
                i + 1
            )));
        }
        total += if cfg.is_accuracy_mode() {
            set_accuracy(&p, &t)
        } else {
            wups_pair(&p, &t, cfg, ontology)?
        };
    }
    Ok(total / preds.len() as f64)
}

/// `metric=<name> tau=<tau> value=<v>` with six decimals.
pub fn report_line(metric: &str, tau: f64, value: f64) -> String {
    format!("metric={metric} tau={tau} value={value:.6}")
}
