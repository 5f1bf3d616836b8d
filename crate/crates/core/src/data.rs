//! Pair datasets: the tab-separated file format and the seeded synthetic
//! generator that stands in for real sentence-pair corpora.
//!
//! A dataset file starts with a header line
//!
//! ```text
//! #dse-dataset task=binary
//! #dse-dataset task=regression logits=1
//! ```
//!
//! followed by one `sentence_a<TAB>sentence_b<TAB>label` row per pair. When
//! the header declares `logits=n`, every row carries `n` extra columns with
//! cached teacher logits.

use std::fmt::Write as _;
use std::path::Path;

use crate::distill::{Label, TrainingExample};
use crate::encoder::{tokenize, TokenId, Vocabulary, RESERVED_TOKENS};
use crate::error::{DseError, Result};
use crate::numkernel::SeededRng;
use crate::teacher::TaskKind;

const HEADER_TAG: &str = "#dse-dataset";

/// Id range used by generated sentences.
pub const SYNTHETIC_VOCAB_SIZE: usize = 512;
const TOPICS: usize = 8;
const TOPIC_SUPPORT: usize = 48;
/// Offset between neighbouring topics on the ring used by the multiclass and
/// regression variants; half the support, so neighbours share 24 tokens.
const RING_STRIDE: usize = 24;
const MIN_WORDS: usize = 3;
const MAX_WORDS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub sentence_a: String,
    pub sentence_b: String,
    pub label: Label,
    pub teacher_logits: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFile {
    pub task: TaskKind,
    pub rows: Vec<DatasetRow>,
}

fn parse_label(field: &str, task: TaskKind) -> std::result::Result<Label, String> {
    let label = match task {
        TaskKind::Regression => {
            let v: f64 = field.parse().map_err(|_| format!("bad real label {field:?}"))?;
            Label::Real(v)
        }
        _ => {
            let c: usize = field.parse().map_err(|_| format!("bad class label {field:?}"))?;
            Label::Class(c)
        }
    };
    label.validate(task).map_err(|e| e.to_string())?;
    Ok(label)
}

fn parse_header(line: &str) -> Result<(TaskKind, Option<usize>)> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(HEADER_TAG) {
        return Err(DseError::Format(format!(
            "line 1: expected a {HEADER_TAG} header, found {line:?}"
        )));
    }
    let (mut task, mut logits) = (None, None);
    for part in parts {
        match part.split_once('=') {
            Some(("task", v)) => {
                task = Some(
                    v.parse::<TaskKind>()
                        .map_err(|e| DseError::Format(format!("line 1: {e}")))?,
                )
            }
            Some(("logits", v)) => {
                logits = Some(
                    v.parse::<usize>()
                        .map_err(|_| DseError::Format(format!("line 1: bad logit count {v:?}")))?,
                )
            }
            _ => return Err(DseError::Format(format!("line 1: unknown header field {part:?}"))),
        }
    }
    let task = task.ok_or_else(|| DseError::Format("line 1: header lacks task=".into()))?;
    if let Some(n) = logits {
        if n != task.outputs() {
            return Err(DseError::Format(format!(
                "line 1: {task} tasks have {} logits, header declares {n}",
                task.outputs()
            )));
        }
    }
    Ok((task, logits))
}

impl DatasetFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| DseError::Format("empty dataset file".into()))?;
        let (task, logits) = parse_header(header)?;
        let width = 3 + logits.unwrap_or(0);
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            let err = |msg: String| DseError::Format(format!("line {lineno}: {msg}"));
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != width {
                return Err(err(format!(
                    "expected {width} tab-separated columns, found {}",
                    cols.len()
                )));
            }
            if cols[0].trim().is_empty() || cols[1].trim().is_empty() {
                return Err(err("empty sentence".into()));
            }
            let label = parse_label(cols[2], task).map_err(err)?;
            let teacher_logits = match logits {
                None => None,
                Some(_) => Some(
                    cols[3..]
                        .iter()
                        .map(|c| {
                            c.parse::<f64>()
                                .ok()
                                .filter(|v| v.is_finite())
                                .ok_or_else(|| err(format!("bad logit {c:?}")))
                        })
                        .collect::<Result<Vec<f64>>>()?,
                ),
            };
            rows.push(DatasetRow {
                sentence_a: cols[0].to_string(),
                sentence_b: cols[1].to_string(),
                label,
                teacher_logits,
            });
        }
        Ok(Self { task, rows })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Whether every row carries cached teacher logits.
    pub fn is_scored(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.teacher_logits.is_some())
    }

    /// The file text. Floats are written in shortest round-trip form, so
    /// parsing the output reproduces every value exactly.
    pub fn render(&self) -> String {
        let scored = self.is_scored();
        let mut out = format!("{HEADER_TAG} task={}", self.task);
        if scored {
            let _ = write!(out, " logits={}", self.task.outputs());
        }
        out.push('\n');
        for r in &self.rows {
            let label = match r.label {
                Label::Class(c) => c.to_string(),
                Label::Real(v) => v.to_string(),
            };
            let _ = write!(out, "{}\t{}\t{}", r.sentence_a, r.sentence_b, label);
            if scored {
                for v in r.teacher_logits.as_deref().unwrap_or_default() {
                    let _ = write!(out, "\t{v}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn to_examples(&self, vocab: &Vocabulary) -> Vec<TrainingExample> {
        self.rows
            .iter()
            .map(|r| TrainingExample {
                sentence_a: tokenize(&r.sentence_a, vocab),
                sentence_b: tokenize(&r.sentence_b, vocab),
                label: r.label,
                teacher_logits: r.teacher_logits.clone(),
            })
            .collect()
    }

    /// The same rows with teacher logits attached, taken in order from
    /// `scored`.
    pub fn with_logits(&self, scored: &[TrainingExample]) -> Result<Self> {
        if scored.len() != self.rows.len() {
            return Err(DseError::Input(format!(
                "{} scored examples for {} rows",
                scored.len(),
                self.rows.len()
            )));
        }
        let rows = self
            .rows
            .iter()
            .zip(scored)
            .map(|(r, s)| DatasetRow {
                teacher_logits: s.teacher_logits.clone(),
                ..r.clone()
            })
            .collect();
        Ok(Self {
            task: self.task,
            rows,
        })
    }
}

/// Reads a dataset file and tokenizes it with `vocab`.
pub fn parse_dataset(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<(Vec<TrainingExample>, TaskKind)> {
    let file = DatasetFile::load(path)?;
    Ok((file.to_examples(vocab), file.task))
}

/// The vocabulary every generated file is written in.
pub fn synthetic_vocabulary() -> Vocabulary {
    Vocabulary::synthetic(SYNTHETIC_VOCAB_SIZE)
}

fn disjoint_support(topic: usize) -> std::ops::Range<usize> {
    let start = RESERVED_TOKENS + topic * TOPIC_SUPPORT;
    start..start + TOPIC_SUPPORT
}

fn ring_token(topic: usize, offset: usize) -> usize {
    let ring = TOPICS * RING_STRIDE;
    RESERVED_TOKENS + (topic * RING_STRIDE + offset) % ring
}

fn sentence_from(rng: &mut SeededRng, token: impl Fn(usize) -> usize) -> Vec<TokenId> {
    let len = rng.range_inclusive(MIN_WORDS, MAX_WORDS);
    (0..len)
        .map(|_| token(rng.below(TOPIC_SUPPORT)) as TokenId)
        .collect()
}

fn disjoint_sentence(rng: &mut SeededRng, topic: usize) -> Vec<TokenId> {
    let start = disjoint_support(topic).start;
    sentence_from(rng, |i| start + i)
}

fn ring_sentence(rng: &mut SeededRng, topic: usize) -> Vec<TokenId> {
    sentence_from(rng, |i| ring_token(topic, i))
}

fn text(ids: &[TokenId]) -> String {
    ids.iter()
        .map(|i| format!("tok{i}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Multiset Jaccard similarity `Σ min(cₐ, c_b) / Σ max(cₐ, c_b)` over token
/// counts.
pub fn multiset_jaccard(a: &[TokenId], b: &[TokenId]) -> f64 {
    let mut counts: std::collections::BTreeMap<TokenId, (usize, usize)> = Default::default();
    for &t in a {
        counts.entry(t).or_default().0 += 1;
    }
    for &t in b {
        counts.entry(t).or_default().1 += 1;
    }
    let (mut num, mut den) = (0usize, 0usize);
    for (ca, cb) in counts.values() {
        num += ca.min(cb);
        den += ca.max(cb);
    }
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Seeded synthetic pair data.
///
/// * binary: eight topics over disjoint 48-token supports; half the pairs
///   share a topic, and the label is 1 exactly for those.
/// * multiclass: eight topics on a ring, each overlapping its two neighbours
///   by half its support; the label is 2 for the same topic, 1 for
///   neighbouring topics and 0 for topics with disjoint supports.
/// * regression: ring-topic pairs (same, neighbouring or random topics, plus
///   10% exact copies) labelled with their multiset Jaccard similarity.
pub fn gen_synthetic(seed: u64, size: usize, task: TaskKind) -> Result<DatasetFile> {
    if size < 10 {
        return Err(DseError::Input(format!(
            "synthetic datasets need at least 10 pairs, got {size}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut rows = Vec::with_capacity(size);
    for _ in 0..size {
        let (a, b, label) = match task {
            TaskKind::Binary => {
                let ta = rng.below(TOPICS);
                let same = rng.below(2) == 0;
                let tb = if same {
                    ta
                } else {
                    (ta + 1 + rng.below(TOPICS - 1)) % TOPICS
                };
                let a = disjoint_sentence(&mut rng, ta);
                let b = disjoint_sentence(&mut rng, tb);
                (a, b, Label::Class(same as usize))
            }
            TaskKind::Multiclass => {
                let ta = rng.below(TOPICS);
                let class = rng.below(3);
                let tb = match class {
                    2 => ta,
                    1 => (ta + if rng.below(2) == 0 { 1 } else { TOPICS - 1 }) % TOPICS,
                    // Two to six steps around the ring: supports do not meet.
                    _ => (ta + 2 + rng.below(TOPICS - 3)) % TOPICS,
                };
                let a = ring_sentence(&mut rng, ta);
                let b = ring_sentence(&mut rng, tb);
                (a, b, Label::Class(class))
            }
            TaskKind::Regression => {
                let ta = rng.below(TOPICS);
                let a = ring_sentence(&mut rng, ta);
                let b = match rng.below(10) {
                    0 => a.clone(),
                    1..=4 => ring_sentence(&mut rng, ta),
                    5..=7 => {
                        let tb = (ta + if rng.below(2) == 0 { 1 } else { TOPICS - 1 }) % TOPICS;
                        ring_sentence(&mut rng, tb)
                    }
                    _ => {
                        let tb = rng.below(TOPICS);
                        ring_sentence(&mut rng, tb)
                    }
                };
                let j = multiset_jaccard(&a, &b);
                (a, b, Label::Real(j))
            }
        };
        rows.push(DatasetRow {
            sentence_a: text(&a),
            sentence_b: text(&b),
            label,
            teacher_logits: None,
        });
    }
    Ok(DatasetFile { task, rows })
}

/// Seeded catalog of sentences drawn like the binary variant's, for
/// retrieval benchmarks.
pub fn synthetic_sentences(seed: u64, count: usize) -> Vec<Vec<TokenId>> {
    let mut rng = SeededRng::new(seed);
    (0..count)
        .map(|_| {
            let topic = rng.below(TOPICS);
            disjoint_sentence(&mut rng, topic)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_binary_row() {
        let f = DatasetFile::parse("#dse-dataset task=binary\nhello\tworld\t1\n").unwrap();
        assert_eq!(f.task, TaskKind::Binary);
        assert_eq!(
            f.rows,
            vec![DatasetRow {
                sentence_a: "hello".into(),
                sentence_b: "world".into(),
                label: Label::Class(1),
                teacher_logits: None,
            }]
        );
    }

    #[test]
    fn parses_regression_row() {
        let f = DatasetFile::parse("#dse-dataset task=regression\na b\tc\t3.8\n").unwrap();
        assert_eq!(f.rows[0].label, Label::Real(3.8));
        assert_eq!(f.rows[0].sentence_a, "a b");
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let err = DatasetFile::parse("#dse-dataset task=binary\na\tb\t0\nonly\ttwo\n").unwrap_err();
        assert!(
            matches!(&err, DseError::Format(m) if m.starts_with("line 3:")),
            "{err}"
        );
        let err = DatasetFile::parse("#dse-dataset task=binary\na\tb\t2\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = DatasetFile::parse("#dse-dataset task=binary logits=2\na\tb\t1\t0.5\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn bad_headers() {
        assert!(DatasetFile::parse("#dse-dataset task=ternary\n").is_err());
        assert!(DatasetFile::parse("a\tb\t1\n").is_err());
        assert!(DatasetFile::parse("").is_err());
        assert!(DatasetFile::parse("#dse-dataset task=binary logits=3\n").is_err());
    }

    #[test]
    fn scored_file_round_trips_exactly() {
        let mut f = gen_synthetic(3, 25, TaskKind::Multiclass).unwrap();
        let mut rng = SeededRng::new(4);
        for r in &mut f.rows {
            r.teacher_logits = Some((0..3).map(|_| rng.normal() * 10.0).collect());
        }
        let text = f.render();
        assert!(text.starts_with("#dse-dataset task=multiclass logits=3\n"));
        let back = DatasetFile::parse(&text).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.render(), text);
    }

    #[test]
    fn generation_is_seeded() {
        for task in [TaskKind::Binary, TaskKind::Multiclass, TaskKind::Regression] {
            let a = gen_synthetic(7, 200, task).unwrap().render();
            assert_eq!(a, gen_synthetic(7, 200, task).unwrap().render());
            assert_ne!(a, gen_synthetic(8, 200, task).unwrap().render());
        }
        assert!(gen_synthetic(1, 9, TaskKind::Binary).is_err());
    }

    #[test]
    fn regression_labels_are_jaccard() {
        let f = gen_synthetic(11, 2000, TaskKind::Regression).unwrap();
        let vocab = synthetic_vocabulary();
        let mut identical = 0;
        for ex in f.to_examples(&vocab) {
            let Label::Real(j) = ex.label else { panic!() };
            assert!((0.0..=1.0).contains(&j));
            assert_eq!(j, multiset_jaccard(&ex.sentence_a, &ex.sentence_b));
            if ex.sentence_a == ex.sentence_b {
                identical += 1;
                assert_eq!(j, 1.0);
            }
        }
        assert!(identical > 100);
        assert_eq!(multiset_jaccard(&[5, 5, 6], &[5, 7]), 1.0 / 4.0);
    }

    #[test]
    fn class_labels_follow_topics() {
        let vocab = synthetic_vocabulary();
        let f = gen_synthetic(2, 1000, TaskKind::Binary).unwrap();
        let topic = |t: TokenId| (t as usize - RESERVED_TOKENS) / TOPIC_SUPPORT;
        let mut positives = 0;
        for ex in f.to_examples(&vocab) {
            assert!((MIN_WORDS..=MAX_WORDS).contains(&ex.sentence_a.len()));
            let same = topic(ex.sentence_a[0]) == topic(ex.sentence_b[0]);
            assert!(ex.sentence_a.iter().all(|&t| topic(t) == topic(ex.sentence_a[0])));
            assert_eq!(ex.label, Label::Class(same as usize));
            positives += same as usize;
        }
        assert!((400..600).contains(&positives), "{positives}");

        let f = gen_synthetic(2, 600, TaskKind::Multiclass).unwrap();
        for ex in f.to_examples(&vocab) {
            let shared = ex.sentence_a.iter().any(|t| ex.sentence_b.contains(t));
            if ex.label == Label::Class(0) {
                assert!(!shared);
            }
        }
    }

    #[test]
    fn dataset_file_to_examples() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        std::fs::write(&path, "#dse-dataset task=binary\ntok5 tok6\ttok7 zzz\t0\n").unwrap();
        let vocab = synthetic_vocabulary();
        let (ex, task) = parse_dataset(&path, &vocab).unwrap();
        assert_eq!(task, TaskKind::Binary);
        assert_eq!(ex[0].sentence_a, vec![5, 6]);
        assert_eq!(ex[0].sentence_b, vec![7, crate::encoder::UNK]);
    }
}
