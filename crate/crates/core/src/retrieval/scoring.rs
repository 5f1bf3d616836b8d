use serde::{Deserialize, Serialize};

use crate::encoder::TokenId;
use crate::error::{DseError, Result};
use crate::student::StudentModel;
use crate::teacher::TeacherModel;

use super::index::{build_index, EmbeddingIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoringMode {
    Teacher,
    Dse,
}

/// All-pairs logits: entry `(i, j)` scores catalog sentences `i` and `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub n: usize,
    pub outputs: usize,
    data: Vec<f64>,
}

impl ScoreMatrix {
    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let k = (i * self.n + j) * self.outputs;
        &self.data[k..k + self.outputs]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseRun {
    pub scores: ScoreMatrix,
    pub encoder_passes: u64,
    pub head_evals: u64,
}

/// Scores every ordered pair of the catalog, diagonal included.
///
/// The teacher path runs one cross-attentive pass per pair (`N²`); the DSE
/// path embeds each sentence once (`N` passes) and evaluates the head on
/// every pair (`N²`).
pub fn offline_pairwise(
    student: &StudentModel,
    teacher: &TeacherModel,
    catalog: &[Vec<TokenId>],
    mode: ScoringMode,
) -> Result<PairwiseRun> {
    if catalog.is_empty() {
        return Err(DseError::Input("catalog is empty".into()));
    }
    let n = catalog.len();
    match mode {
        ScoringMode::Teacher => {
            let before = teacher.encoder.pass_count();
            let mut data = Vec::with_capacity(n * n * teacher.task.outputs());
            for a in catalog {
                for b in catalog {
                    data.extend(teacher.score(a, b)?);
                }
            }
            Ok(PairwiseRun {
                scores: ScoreMatrix {
                    n,
                    outputs: teacher.task.outputs(),
                    data,
                },
                encoder_passes: teacher.encoder.pass_count() - before,
                head_evals: 0,
            })
        }
        ScoringMode::Dse => {
            let (p0, h0) = (student.encoder.pass_count(), student.head_eval_count());
            let index = build_index(student, catalog)?;
            let data = pairwise_from_index(student, &index)?;
            Ok(PairwiseRun {
                scores: ScoreMatrix {
                    n,
                    outputs: student.task.outputs(),
                    data,
                },
                encoder_passes: student.encoder.pass_count() - p0,
                head_evals: student.head_eval_count() - h0,
            })
        }
    }
}

/// Head logits for every ordered pair of index rows, row-major.
pub(crate) fn pairwise_from_index(student: &StudentModel, index: &EmbeddingIndex) -> Result<Vec<f64>> {
    let n = index.len();
    let mut data = Vec::with_capacity(n * n * student.task.outputs());
    for i in 0..n {
        for j in 0..n {
            data.extend(student.similarity_slices(index.row(i), index.row(j))?);
        }
    }
    Ok(data)
}

/// The logit used to rank candidates: `logit` if given, else the last one.
pub fn ranking_logit(student: &StudentModel, logit: Option<usize>) -> Result<usize> {
    let n = student.task.outputs();
    match logit {
        None => Ok(n - 1),
        Some(l) if l < n => Ok(l),
        Some(l) => Err(DseError::Input(format!(
            "ranking logit {l} out of range for {n} outputs"
        ))),
    }
}

/// Sorts by score descending, then id ascending, and keeps the first `k`.
pub(crate) fn top_k(mut scored: Vec<(usize, f64)>, k: usize) -> Vec<(usize, f64)> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

/// Embeds query `q` once and scores it against every indexed sentence as
/// the first argument of the head. Returns the `k` best `(id, score)` pairs.
pub fn online_query(
    index: &EmbeddingIndex,
    student: &StudentModel,
    q: &[TokenId],
    k: usize,
    logit: Option<usize>,
) -> Result<Vec<(usize, f64)>> {
    if k == 0 || k > index.len() {
        return Err(DseError::Input(format!("k = {k} outside 1..={}", index.len())));
    }
    if index.dim() != student.embedding_dim() {
        return Err(DseError::Shape(format!(
            "index width {} does not match student embedding width {}",
            index.dim(),
            student.embedding_dim()
        )));
    }
    let logit = ranking_logit(student, logit)?;
    let u = student.embed(q)?;
    let scored = (0..index.len())
        .map(|id| Ok((id, student.similarity_slices(u.as_slice(), index.row(id))?[logit])))
        .collect::<Result<Vec<_>>>()?;
    Ok(top_k(scored, k))
}
