//! Affective-reasoning evaluation: Top-k accuracy, Emo-align, doubly-right,
//! CLIP-S and LLM-as-a-judge aggregation.

use std::collections::BTreeMap;
use std::io::BufRead;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::client::{ChatClient, ChatMessage};
use crate::error::{Error, Result};

/// Trim, lowercase, drop punctuation and collapse whitespace.
pub fn normalize_label(s: &str) -> String {
    let cleaned: String = s
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn words(s: &str) -> Vec<String> {
    normalize_label(s)
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionTaxonomy {
    pub name: String,
    pub labels: Vec<String>,
    #[serde(default)]
    pub lexicon: BTreeMap<String, Vec<String>>,
}

impl EmotionTaxonomy {
    /// Normalizes and validates a taxonomy.
    pub fn new(
        name: String,
        labels: Vec<String>,
        lexicon: BTreeMap<String, Vec<String>>,
    ) -> Result<Self> {
        let labels: Vec<String> = labels.iter().map(|l| normalize_label(l)).collect();
        if labels.is_empty() {
            return Err(Error::invalid("taxonomy has no labels"));
        }
        for (i, l) in labels.iter().enumerate() {
            if l.is_empty() {
                return Err(Error::invalid(format!("taxonomy label {i} is empty")));
            }
            if labels[..i].contains(l) {
                return Err(Error::invalid(format!("duplicate taxonomy label {l:?}")));
            }
        }
        let mut norm_lex = BTreeMap::new();
        for (k, syns) in lexicon {
            let key = normalize_label(&k);
            if !labels.contains(&key) {
                return Err(Error::invalid(format!(
                    "lexicon key {k:?} is not a taxonomy label"
                )));
            }
            let syns: Vec<String> = syns
                .iter()
                .map(|s| normalize_label(s))
                .filter(|s| !s.is_empty())
                .collect();
            norm_lex.entry(key).or_insert_with(Vec::new).extend(syns);
        }
        Ok(Self {
            name,
            labels,
            lexicon: norm_lex,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: EmotionTaxonomy =
            serde_json::from_str(text).map_err(|e| Error::format(format!("taxonomy: {e}")))?;
        Self::new(raw.name, raw.labels, raw.lexicon)
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        let l = normalize_label(label);
        self.labels.iter().position(|x| *x == l)
    }

    pub fn contains(&self, label: &str) -> bool {
        self.position(label).is_some()
    }
}

/// A prediction is either one label or a ranked list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Predictions {
    Single(String),
    Ranked(Vec<String>),
}

impl Predictions {
    pub fn as_slice(&self) -> &[String] {
        match self {
            Self::Single(s) => std::slice::from_ref(s),
            Self::Ranked(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub item_id: String,
    pub label: String,
    pub predictions: Predictions,
    pub reasoning: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_ours: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge_baseline: Option<u8>,
}

impl EvalRecord {
    fn validate(&self) -> Result<()> {
        for s in [self.judge_ours, self.judge_baseline].into_iter().flatten() {
            if !(1..=4).contains(&s) {
                return Err(Error::invalid(format!(
                    "{}: judge score {s} outside [1, 4]",
                    self.item_id
                )));
            }
        }
        Ok(())
    }

    /// Whether the label is among the first `k` predictions.
    pub fn hit_at(&self, k: usize) -> bool {
        let label = normalize_label(&self.label);
        self.predictions
            .as_slice()
            .iter()
            .take(k)
            .any(|p| normalize_label(p) == label)
    }
}

/// Parses JSON Lines records; blank lines are skipped.
pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::format(format!("line {}: {e}", n + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EvalRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("line {}: {e}", n + 1)))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

/// Percentage of records whose label is in their first `k` predictions.
pub fn top_k_accuracy(records: &[EvalRecord], k: usize) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("no records"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let hits = records.iter().filter(|r| r.hit_at(k)).count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}

/// Report formatting used for all percentages: one decimal.
pub fn format_percent(x: f64) -> String {
    format!("{x:.1}")
}

pub trait TextEmotionClassifier: Sync {
    /// Maps text to a taxonomy label, or `None` when no emotion is expressed.
    fn classify(&self, text: &str) -> Result<Option<String>>;
}

/// Counts whole-word lexicon matches per label (longest phrase wins at each
/// position); the label with most matches wins, ties going to the earlier label.
#[derive(Debug, Clone)]
pub struct LexiconClassifier {
    labels: Vec<String>,
    // (phrase words, label index), longest phrases first
    phrases: Vec<(Vec<String>, usize)>,
}

impl LexiconClassifier {
    pub fn new(tax: &EmotionTaxonomy) -> Self {
        let mut phrases = Vec::new();
        for (i, label) in tax.labels.iter().enumerate() {
            phrases.push((words(label), i));
            for s in tax.lexicon.get(label).into_iter().flatten() {
                phrases.push((words(s), i));
            }
        }
        phrases.retain(|(w, _)| !w.is_empty());
        phrases.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
        Self {
            labels: tax.labels.clone(),
            phrases,
        }
    }

    pub fn counts(&self, text: &str) -> Vec<usize> {
        let toks = words(text);
        let mut counts = vec![0; self.labels.len()];
        let mut i = 0;
        while i < toks.len() {
            let hit = self
                .phrases
                .iter()
                .find(|(p, _)| toks.len() - i >= p.len() && toks[i..i + p.len()] == p[..]);
            match hit {
                Some((p, label)) => {
                    counts[*label] += 1;
                    i += p.len();
                }
                None => i += 1,
            }
        }
        counts
    }
}

impl TextEmotionClassifier for LexiconClassifier {
    fn classify(&self, text: &str) -> Result<Option<String>> {
        let counts = self.counts(text);
        let best = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)));
        Ok(best.map(|(i, _)| self.labels[i].clone()))
    }
}

pub const DEFAULT_CLASSIFIER_TEMPLATE: &str = "Read the following explanation of how a viewer feels about a video and answer with the single emotion it conveys. Choose exactly one of: {labels}. Answer with the emotion word only.\n\nExplanation: {text}";

/// Text-to-emotion classification through a chat model. The answer must
/// normalize to a taxonomy label.
pub struct LlmEmotionClassifier<C> {
    client: C,
    taxonomy: EmotionTaxonomy,
    template: String,
}

impl<C: ChatClient> LlmEmotionClassifier<C> {
    pub fn new(client: C, taxonomy: EmotionTaxonomy) -> Self {
        Self {
            client,
            taxonomy,
            template: DEFAULT_CLASSIFIER_TEMPLATE.to_owned(),
        }
    }

    pub fn with_template(mut self, template: impl Into<String>) -> Self {
        self.template = template.into();
        self
    }

    pub fn prompt(&self, text: &str) -> Vec<ChatMessage> {
        let body = self
            .template
            .replace("{labels}", &self.taxonomy.labels.join(", "))
            .replace("{text}", text);
        vec![ChatMessage::user(body)]
    }
}

impl<C: ChatClient> TextEmotionClassifier for LlmEmotionClassifier<C> {
    fn classify(&self, text: &str) -> Result<Option<String>> {
        let answer = self.client.complete(&self.prompt(text))?;
        let norm = normalize_label(&answer);
        match self.taxonomy.position(&norm) {
            Some(i) => Ok(Some(self.taxonomy.labels[i].clone())),
            None => Err(Error::Unresolved(format!(
                "classifier answered {answer:?}, not a {} label",
                self.taxonomy.name
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmoAlign {
    pub predicted: Option<String>,
    pub correct: bool,
}

/// Classifies the reasoning text and compares it with the label.
pub fn emo_align(record: &EvalRecord, classifier: &dyn TextEmotionClassifier) -> Result<EmoAlign> {
    if record.reasoning.trim().is_empty() {
        return Err(Error::invalid(format!(
            "{}: empty reasoning",
            record.item_id
        )));
    }
    let predicted = classifier.classify(&record.reasoning)?;
    let correct = predicted
        .as_deref()
        .is_some_and(|p| normalize_label(p) == normalize_label(&record.label));
    Ok(EmoAlign { predicted, correct })
}

/// Per-record correctness of the prediction and of the reasoning (`None`
/// while Emo-align is unresolved).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub prediction_correct: bool,
    pub reasoning_correct: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoublyRightReport {
    pub rr: f64,
    pub rw: f64,
    pub wr: f64,
    pub ww: f64,
}

pub fn doubly_right(outcomes: &[Outcome]) -> Result<DoublyRightReport> {
    if outcomes.is_empty() {
        return Err(Error::invalid("no records"));
    }
    let mut counts = [0usize; 4];
    for (i, o) in outcomes.iter().enumerate() {
        let reason = o.reasoning_correct.ok_or_else(|| {
            Error::Unresolved(format!("record {i} has no resolved Emo-align outcome"))
        })?;
        let slot = match (o.prediction_correct, reason) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        counts[slot] += 1;
    }
    let pct = |c: usize| 100.0 * c as f64 / outcomes.len() as f64;
    Ok(DoublyRightReport {
        rr: pct(counts[0]),
        rw: pct(counts[1]),
        wr: pct(counts[2]),
        ww: pct(counts[3]),
    })
}

fn unit(v: &[f32]) -> Result<Vec<f64>> {
    let norm = v
        .iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() || norm <= 0.0 {
        return Err(Error::invalid("embedding has zero or non-finite norm"));
    }
    Ok(v.iter().map(|&x| x as f64 / norm).collect())
}

/// `2.5 * max(cos(video, text), 0)` where the video vector is the normalized
/// mean of the normalized frame embeddings.
pub fn clip_score(frames: &[&[f32]], text: &[f32]) -> Result<f64> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("no frame embeddings"))?;
    let d = first.len();
    if d == 0 || text.len() != d || frames.iter().any(|f| f.len() != d) {
        return Err(Error::dims(
            "frame and text embeddings must share one nonzero width",
        ));
    }
    let mut mean = vec![0.0f64; d];
    for f in frames {
        for (m, x) in mean.iter_mut().zip(unit(f)?) {
            *m += x;
        }
    }
    let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm.is_nan() || norm <= 1e-12 {
        return Err(Error::invalid(
            "frame embeddings cancel out; pooled video vector has zero norm",
        ));
    }
    let t = unit(text)?;
    let cos: f64 = mean.iter().zip(&t).map(|(m, x)| m / norm * x).sum();
    Ok(2.5 * cos.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeSummary {
    pub win: usize,
    pub lose: usize,
    pub tie: usize,
    pub avg_ours: f64,
}

pub fn judge_aggregate(pairs: &[(u8, u8)]) -> Result<JudgeSummary> {
    if pairs.is_empty() {
        return Err(Error::invalid("no judge scores"));
    }
    let (mut win, mut lose, mut tie, mut total) = (0, 0, 0, 0u64);
    for (i, &(ours, base)) in pairs.iter().enumerate() {
        for s in [ours, base] {
            if !(1..=4).contains(&s) {
                return Err(Error::invalid(format!(
                    "pair {i}: judge score {s} outside [1, 4]"
                )));
            }
        }
        match ours.cmp(&base) {
            std::cmp::Ordering::Greater => win += 1,
            std::cmp::Ordering::Less => lose += 1,
            std::cmp::Ordering::Equal => tie += 1,
        }
        total += ours as u64;
    }
    Ok(JudgeSummary {
        win,
        lose,
        tie,
        avg_ours: total as f64 / pairs.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordResult {
    pub item_id: String,
    pub hit_at_1: bool,
    pub hit_at_k: bool,
    pub emo_align_pred: Option<String>,
    pub emo_align_correct: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unresolved: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub k: usize,
    pub top1: f64,
    pub top_k: f64,
    /// Over records whose Emo-align resolved.
    pub emo_align: Option<f64>,
    pub unresolved: usize,
    pub doubly_right: Option<DoublyRightReport>,
    pub judge: Option<JudgeSummary>,
    pub per_record: Vec<RecordResult>,
}

/// Runs every record-level metric. Classification runs on the current rayon
/// pool, so the caller bounds concurrency by choosing the pool.
pub fn evaluate(
    records: &[EvalRecord],
    k: usize,
    classifier: &dyn TextEmotionClassifier,
) -> Result<EvalReport> {
    let top1 = top_k_accuracy(records, 1)?;
    let top_k = top_k_accuracy(records, k)?;
    let aligned: Vec<Result<EmoAlign>> = records
        .par_iter()
        .map(|r| emo_align(r, classifier))
        .collect();

    let mut per_record = Vec::with_capacity(records.len());
    let mut outcomes = Vec::with_capacity(records.len());
    for (r, a) in records.iter().zip(aligned) {
        let (pred, correct, unresolved) = match a {
            Ok(a) => (a.predicted, Some(a.correct), None),
            Err(e @ (Error::Unresolved(_) | Error::Client(_))) => (None, None, Some(e.to_string())),
            Err(e) => return Err(e),
        };
        outcomes.push(Outcome {
            prediction_correct: r.hit_at(1),
            reasoning_correct: correct,
        });
        per_record.push(RecordResult {
            item_id: r.item_id.clone(),
            hit_at_1: r.hit_at(1),
            hit_at_k: r.hit_at(k),
            emo_align_pred: pred,
            emo_align_correct: correct,
            unresolved,
        });
    }
    let resolved: Vec<bool> = outcomes
        .iter()
        .filter_map(|o| o.reasoning_correct)
        .collect();
    let unresolved = records.len() - resolved.len();
    let emo_align = (!resolved.is_empty())
        .then(|| 100.0 * resolved.iter().filter(|&&c| c).count() as f64 / resolved.len() as f64);
    let doubly = if unresolved == 0 {
        Some(doubly_right(&outcomes)?)
    } else {
        None
    };

    let pairs: Vec<(u8, u8)> = records
        .iter()
        .filter_map(|r| Some((r.judge_ours?, r.judge_baseline?)))
        .collect();
    let judge = if pairs.is_empty() {
        None
    } else {
        Some(judge_aggregate(&pairs)?)
    };

    Ok(EvalReport {
        records: records.len(),
        k,
        top1,
        top_k,
        emo_align,
        unresolved,
        doubly_right: doubly,
        judge,
        per_record,
    })
}
