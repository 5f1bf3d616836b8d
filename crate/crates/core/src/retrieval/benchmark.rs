use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::synthetic_sentences;
use crate::error::{DseError, Result};
use crate::numkernel::SeededRng;
use crate::student::StudentModel;
use crate::teacher::TeacherModel;

use super::index::{build_index, embed_catalog, EmbeddingIndex};
use super::scoring::pairwise_from_index;

/// Stream of the benchmark seed reserved for the online query sentence.
const QUERY_STREAM: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "scenario", content = "n")]
pub enum Scenario {
    /// All `N²` ordered pairs of an `N`-sentence catalog.
    Offline(usize),
    /// One new query against an `N`-sentence catalog.
    Online(usize),
}

impl Scenario {
    pub fn n(self) -> usize {
        match self {
            Scenario::Offline(n) | Scenario::Online(n) => n,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Offline(_) => "offline",
            Scenario::Online(_) => "online",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkOptions {
    pub seed: u64,
    /// Timed repetitions per path; each phase reports its fastest run.
    pub repeats: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self { seed: 0, repeats: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub scenario: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub repeats: usize,
    pub teacher_seconds: f64,
    /// ψ phase: sentence embedding.
    pub dse_embed_seconds: f64,
    /// f phase: head evaluations.
    pub dse_head_seconds: f64,
    pub speedup: f64,
    pub teacher_encoder_passes: u64,
    pub dse_encoder_passes: u64,
    pub dse_head_evals: u64,
    /// Sequences per encoder call on each path. Everything runs one
    /// sequence at a time.
    pub teacher_batch_size: usize,
    pub dse_batch_size: usize,
    /// Online only: untimed catalog precompute, for reference.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precompute_seconds: Option<f64>,
}

impl BenchmarkReport {
    pub fn dse_seconds(&self) -> f64 {
        self.dse_embed_seconds + self.dse_head_seconds
    }

    /// Aligned plain-text table, one row per path and phase.
    pub fn to_table(&self) -> String {
        let rows = [
            (
                "Cross-attention teacher",
                self.teacher_batch_size,
                self.teacher_seconds,
                Some(1.0),
            ),
            (
                "DSE (psi phase)",
                self.dse_batch_size,
                self.dse_embed_seconds,
                None,
            ),
            ("DSE (f phase)", self.dse_batch_size, self.dse_head_seconds, None),
            (
                "DSE total",
                self.dse_batch_size,
                self.dse_seconds(),
                Some(self.speedup),
            ),
        ];
        let mut out = format!(
            "{} scenario, N = {} ({} encoder passes teacher; {} encoder passes + {} head evaluations DSE)\n",
            self.scenario, self.n, self.teacher_encoder_passes, self.dse_encoder_passes, self.dse_head_evals
        );
        let _ = writeln!(
            out,
            "{:<24} {:>10} {:>14} {:>10}",
            "Model", "Batch size", "Time (s)", "Speedup"
        );
        for (name, batch, secs, speedup) in rows {
            let speedup = speedup.map_or_else(|| "-".to_string(), |s| format!("{s:.1}x"));
            let _ = writeln!(out, "{name:<24} {batch:>10} {secs:>14.6} {speedup:>10}");
        }
        out
    }
}

struct Timed {
    seconds: f64,
    passes: u64,
    head_evals: u64,
}

fn timed<F: FnMut() -> Result<()>>(
    student: &StudentModel,
    teacher: &TeacherModel,
    mut f: F,
) -> Result<Timed> {
    let (tp, sp, sh) = (
        teacher.encoder.pass_count(),
        student.encoder.pass_count(),
        student.head_eval_count(),
    );
    let start = Instant::now();
    f()?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(Timed {
        seconds,
        passes: (teacher.encoder.pass_count() - tp) + (student.encoder.pass_count() - sp),
        head_evals: student.head_eval_count() - sh,
    })
}

/// Keeps the fastest time; counts must agree across repetitions.
fn fold(best: Option<Timed>, t: Timed) -> Result<Option<Timed>> {
    match best {
        None => Ok(Some(t)),
        Some(b) => {
            if (b.passes, b.head_evals) != (t.passes, t.head_evals) {
                return Err(DseError::Input(
                    "operation counts differ between repetitions".into(),
                ));
            }
            Ok(Some(if t.seconds < b.seconds { t } else { b }))
        }
    }
}

/// Times the cross-attentive path against the embed-then-head path on a
/// seeded synthetic catalog, single-threaded, after one untimed call of each
/// primitive (teacher pair score, sentence embedding, head evaluation).
pub fn run_benchmark(
    scenario: Scenario,
    student: &StudentModel,
    teacher: &TeacherModel,
    opts: &BenchmarkOptions,
) -> Result<BenchmarkReport> {
    let n = scenario.n();
    if n == 0 {
        return Err(DseError::Input("benchmark catalog size must be positive".into()));
    }
    if opts.repeats == 0 {
        return Err(DseError::Config("benchmark repeats must be at least 1".into()));
    }
    let catalog = synthetic_sentences(opts.seed, n);
    let query_seed = SeededRng::new(opts.seed).fork(QUERY_STREAM).next_u64();
    let query = synthetic_sentences(query_seed, 1).remove(0);

    teacher.score(&query, &catalog[0])?;
    let warm = student.embed(&query)?;
    student.similarity(&warm, &warm)?;

    let (mut t_best, mut e_best, mut h_best) = (None, None, None);
    let mut precompute = None;
    match scenario {
        Scenario::Offline(_) => {
            for _ in 0..opts.repeats {
                let t = timed(student, teacher, || {
                    for a in &catalog {
                        for b in &catalog {
                            std::hint::black_box(teacher.score(a, b)?);
                        }
                    }
                    Ok(())
                })?;
                t_best = fold(t_best, t)?;
                let mut rows = Vec::new();
                let e = timed(student, teacher, || {
                    rows = embed_catalog(student, &catalog)?;
                    Ok(())
                })?;
                e_best = fold(e_best, e)?;
                let index = EmbeddingIndex::from_parts(student.embedding_dim(), rows, String::new());
                let h = timed(student, teacher, || {
                    std::hint::black_box(pairwise_from_index(student, &index)?);
                    Ok(())
                })?;
                h_best = fold(h_best, h)?;
            }
        }
        Scenario::Online(_) => {
            let start = Instant::now();
            let index = build_index(student, &catalog)?;
            precompute = Some(start.elapsed().as_secs_f64());
            for _ in 0..opts.repeats {
                let t = timed(student, teacher, || {
                    for x in &catalog {
                        std::hint::black_box(teacher.score(&query, x)?);
                    }
                    Ok(())
                })?;
                t_best = fold(t_best, t)?;
                let mut u = None;
                let e = timed(student, teacher, || {
                    u = Some(student.embed(&query)?);
                    Ok(())
                })?;
                e_best = fold(e_best, e)?;
                let u = u.expect("query embedded");
                let h = timed(student, teacher, || {
                    for id in 0..index.len() {
                        std::hint::black_box(student.similarity_slices(u.as_slice(), index.row(id))?);
                    }
                    Ok(())
                })?;
                h_best = fold(h_best, h)?;
            }
        }
    }
    let (t, e, h) = (
        t_best.expect("repeats >= 1"),
        e_best.expect("repeats >= 1"),
        h_best.expect("repeats >= 1"),
    );
    let dse = e.seconds + h.seconds;
    Ok(BenchmarkReport {
        scenario: scenario.name().to_string(),
        n,
        seed: opts.seed,
        repeats: opts.repeats,
        teacher_seconds: t.seconds,
        dse_embed_seconds: e.seconds,
        dse_head_seconds: h.seconds,
        speedup: t.seconds / dse,
        teacher_encoder_passes: t.passes,
        dse_encoder_passes: e.passes + h.passes,
        dse_head_evals: e.head_evals + h.head_evals,
        teacher_batch_size: 1,
        dse_batch_size: 1,
        precompute_seconds: precompute,
    })
}
