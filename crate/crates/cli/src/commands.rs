use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dse_core::checkpoint::{checkpoint_kind, load_checkpoint, save_checkpoint, ModelKind};
use dse_core::data::{gen_synthetic, synthetic_sentences, synthetic_vocabulary, DatasetFile};
use dse_core::distill::{
    compute_metrics, dev_split, train_student, LossConfig, Metrics, TrainTrace, TrainingExample,
};
use dse_core::encoder::{tokenize, TokenId, Vocabulary};
use dse_core::numkernel::Parameterized;
use dse_core::retrieval::{
    build_index, build_index_parallel, online_query, run_benchmark, BenchmarkOptions, EmbeddingIndex,
    Scenario,
};
use dse_core::student::{StudentConfig, StudentModel};
use dse_core::teacher::{cache_teacher_scores, fine_tune_teacher, TaskKind, TeacherConfig, TeacherModel};
use serde_json::json;

use crate::args::*;
use crate::manifest::RunManifest;

/// Result of one command: its manifest (if it writes one) and text for
/// stdout.
#[derive(Debug)]
pub struct Outcome {
    pub manifest: Option<RunManifest>,
    pub stdout: String,
}

fn load_vocab(path: &Option<PathBuf>) -> Result<Vocabulary> {
    match path {
        Some(p) => Vocabulary::load(p).with_context(|| format!("loading vocabulary {}", p.display())),
        None => Ok(synthetic_vocabulary()),
    }
}

fn load_dataset(path: &Path) -> Result<DatasetFile> {
    DatasetFile::load(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_teacher(path: &Path) -> Result<TeacherModel> {
    load_checkpoint(path).with_context(|| format!("loading teacher checkpoint {}", path.display()))
}

fn load_student(path: &Path) -> Result<StudentModel> {
    load_checkpoint(path).with_context(|| format!("loading student checkpoint {}", path.display()))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn split_metrics<F>(examples: &[TrainingExample], idx: &[usize], task: TaskKind, score: F) -> Result<Metrics>
where
    F: Fn(&TrainingExample) -> dse_core::Result<Vec<f64>>,
{
    let preds = idx
        .iter()
        .map(|&i| score(&examples[i]))
        .collect::<dse_core::Result<Vec<_>>>()?;
    let labels: Vec<_> = idx.iter().map(|&i| examples[i].label).collect();
    Ok(compute_metrics(&preds, &labels, task)?)
}

fn trace_metrics(trace: &TrainTrace) -> serde_json::Value {
    let best = trace.best();
    json!({
        "best_epoch": trace.best_epoch,
        "best_dev_loss": best.dev_loss,
        "best_dev_metric": best.dev_metric,
        "final_train_loss": trace.records.last().map(|r| r.train_loss),
    })
}

fn write_trace(trace: &TrainTrace, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let path = with_suffix(out, ".trace.csv");
    std::fs::write(&path, trace.to_csv())?;
    manifest.add_artifact(&path)
}

fn finish(cmd: &Command, manifest: RunManifest, stdout: String) -> Result<Outcome> {
    let path = cmd.manifest_path().expect("command writes a manifest");
    manifest.save(&path)?;
    Ok(Outcome {
        manifest: Some(manifest),
        stdout,
    })
}

pub fn execute(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::GenData(a) => gen_data(cmd, a),
        Command::TrainTeacher(a) => train_teacher(cmd, a),
        Command::CacheScores(a) => cache_scores(cmd, a),
        Command::Distill(a) => distill(cmd, a),
        Command::Eval(a) => eval(cmd, a),
        Command::BuildIndex(a) => build_index_cmd(cmd, a),
        Command::Query(a) => query(cmd, a),
        Command::Benchmark(a) => benchmark(cmd, a),
        Command::Replay(a) => replay(a),
    }
}

fn gen_data(cmd: &Command, a: &GenDataArgs) -> Result<Outcome> {
    let file = gen_synthetic(a.seed, a.size, a.task)?;
    file.save(&a.out)?;
    let mut m = RunManifest::new(
        cmd,
        json!({"task": a.task, "size": a.size}),
        json!({"rows": file.rows.len()}),
    );
    m.add_artifact(&a.out)?;
    finish(
        cmd,
        m,
        format!(
            "wrote {} {} pairs to {}\n",
            file.rows.len(),
            a.task,
            a.out.display()
        ),
    )
}

fn train_teacher(cmd: &Command, a: &TrainTeacherArgs) -> Result<Outcome> {
    let vocab = load_vocab(&a.vocab)?;
    let file = load_dataset(&a.data)?;
    let examples = file.to_examples(&vocab);
    let cfg = TeacherConfig {
        encoder: a.model.encoder(vocab.size()),
        task: file.task,
    };
    let train = a.train.config(false);
    let (teacher, trace) = fine_tune_teacher(&examples, &cfg, &train)?;
    save_checkpoint(&teacher, &a.out)?;

    let (train_idx, dev_idx) = dev_split(examples.len(), train.dev_fraction, train.seed)?;
    let score = |ex: &TrainingExample| teacher.score(&ex.sentence_a, &ex.sentence_b);
    let mut metrics = trace_metrics(&trace);
    metrics["train"] = serde_json::to_value(split_metrics(&examples, &train_idx, file.task, score)?)?;
    metrics["dev"] = serde_json::to_value(split_metrics(&examples, &dev_idx, file.task, score)?)?;

    let mut m = RunManifest::new(cmd, json!({"model": cfg, "train": train}), metrics);
    m.add_artifact(&a.out)?;
    write_trace(&trace, &a.out, &mut m)?;
    let text = format!("{}\nsaved teacher to {}\n", trace.to_csv(), a.out.display());
    finish(cmd, m, text)
}

fn cache_scores(cmd: &Command, a: &CacheScoresArgs) -> Result<Outcome> {
    let vocab = load_vocab(&a.vocab)?;
    let teacher = load_teacher(&a.teacher)?;
    let file = load_dataset(&a.data)?;
    if file.task != teacher.task {
        bail!(
            "teacher predicts {} but the dataset is {}",
            teacher.task,
            file.task
        );
    }
    let scored = cache_teacher_scores(&teacher, &file.to_examples(&vocab))?;
    let out = file.with_logits(&scored)?;
    out.save(&a.out)?;
    let mut m = RunManifest::new(cmd, json!({"task": file.task}), json!({"rows": out.rows.len()}));
    m.add_artifact(&a.out)?;
    finish(
        cmd,
        m,
        format!("scored {} pairs into {}\n", out.rows.len(), a.out.display()),
    )
}

fn distill(cmd: &Command, a: &DistillArgs) -> Result<Outcome> {
    let file = load_dataset(&a.data)?;
    let loss = LossConfig::new(a.alpha, file.task)?;
    let vocab = load_vocab(&a.vocab)?;
    let examples = file.to_examples(&vocab);
    let cfg = StudentConfig {
        encoder: a.model.encoder(vocab.size()),
        task: file.task,
        head_hidden: a.head_hidden,
    };
    let student = match &a.init_teacher {
        Some(p) => StudentModel::from_teacher(&cfg, &load_teacher(p)?, a.train.seed)?,
        None => StudentModel::new(&cfg, a.train.seed)?,
    };
    let encoder_before = student.encoder.parameter_checksum();
    let train = a.train.config(a.freeze_encoder);
    let trained = train_student(&examples, student, &loss, &train)?;
    save_checkpoint(&trained.model, &a.out)?;

    let mut metrics = trace_metrics(&trained.trace);
    metrics["encoder_checksum_init"] = json!(encoder_before);
    metrics["encoder_checksum_final"] = json!(trained.model.encoder.parameter_checksum());
    let mut m = RunManifest::new(cmd, json!({"model": cfg, "loss": loss, "train": train}), metrics);
    m.add_artifact(&a.out)?;
    write_trace(&trained.trace, &a.out, &mut m)?;
    let text = format!(
        "{}\nsaved student to {}\n",
        trained.trace.to_csv(),
        a.out.display()
    );
    finish(cmd, m, text)
}

fn eval(cmd: &Command, a: &EvalArgs) -> Result<Outcome> {
    let vocab = load_vocab(&a.vocab)?;
    let file = load_dataset(&a.data)?;
    let examples = file.to_examples(&vocab);
    let idx = match a.split {
        Split::All => (0..examples.len()).collect(),
        Split::Train => dev_split(examples.len(), a.dev_fraction, a.seed)?.0,
        Split::Dev => dev_split(examples.len(), a.dev_fraction, a.seed)?.1,
    };
    let bytes = std::fs::read(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let kind = checkpoint_kind(&bytes)?;
    let metrics = match kind {
        ModelKind::Teacher => {
            let t = load_teacher(&a.model)?;
            check_task(t.task, file.task)?;
            split_metrics(&examples, &idx, file.task, |ex| {
                t.score(&ex.sentence_a, &ex.sentence_b)
            })?
        }
        ModelKind::Student => {
            let s = load_student(&a.model)?;
            check_task(s.task, file.task)?;
            split_metrics(&examples, &idx, file.task, |ex| {
                s.score(&ex.sentence_a, &ex.sentence_b)
            })?
        }
    };
    let metrics = json!({"kind": kind, "split": a.split, "pairs": idx.len(), "metrics": metrics});
    let mut text = serde_json::to_string_pretty(&metrics)?;
    text.push('\n');
    std::fs::write(&a.out, &text)?;
    let mut m = RunManifest::new(cmd, json!({"task": file.task}), metrics);
    m.add_artifact(&a.out)?;
    finish(cmd, m, text)
}

fn check_task(model: TaskKind, data: TaskKind) -> Result<()> {
    if model != data {
        bail!("model predicts {model} but the dataset is {data}");
    }
    Ok(())
}

fn read_catalog(path: &Path, vocab: &Vocabulary) -> Result<Vec<Vec<TokenId>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| tokenize(l, vocab))
        .collect())
}

fn build_index_cmd(cmd: &Command, a: &BuildIndexArgs) -> Result<Outcome> {
    let student = load_student(&a.model)?;
    let catalog = match (&a.catalog, a.synthetic) {
        (Some(p), _) => read_catalog(p, &load_vocab(&a.vocab)?)?,
        (None, Some(n)) => synthetic_sentences(a.seed, n),
        (None, None) => bail!("pass --catalog FILE or --synthetic N"),
    };
    let index = if a.parallel {
        build_index_parallel(&student, &catalog)?
    } else {
        build_index(&student, &catalog)?
    };
    index.save(&a.out)?;
    let metrics = json!({"N": index.len(), "d": index.dim(), "fingerprint": index.fingerprint()});
    let mut m = RunManifest::new(cmd, json!({}), metrics);
    m.add_artifact(&a.out)?;
    finish(
        cmd,
        m,
        format!("indexed {} sentences into {}\n", index.len(), a.out.display()),
    )
}

fn query(cmd: &Command, a: &QueryArgs) -> Result<Outcome> {
    let student = load_student(&a.model)?;
    let index =
        EmbeddingIndex::load(&a.index).with_context(|| format!("loading index {}", a.index.display()))?;
    index.check_model(&student)?;
    let q = tokenize(&a.query, &load_vocab(&a.vocab)?);
    let ranked = online_query(&index, &student, &q, a.k, a.logit)?;
    let results: Vec<_> = ranked
        .iter()
        .map(|(id, score)| json!({"id": id, "score": score}))
        .collect();
    let results = json!({"query": a.query, "k": a.k, "results": results});
    let mut text = serde_json::to_string_pretty(&results)?;
    text.push('\n');
    match &a.out {
        None => Ok(Outcome {
            manifest: None,
            stdout: text,
        }),
        Some(out) => {
            std::fs::write(out, &text)?;
            let mut m = RunManifest::new(cmd, json!({}), results);
            m.add_artifact(out)?;
            finish(cmd, m, text)
        }
    }
}

fn benchmark(cmd: &Command, a: &BenchmarkArgs) -> Result<Outcome> {
    let student = load_student(&a.student)?;
    let teacher = load_teacher(&a.teacher)?;
    let scenario = match a.scenario {
        ScenarioKind::Offline => Scenario::Offline(a.n.unwrap_or(200)),
        ScenarioKind::Online => Scenario::Online(a.n.unwrap_or(10_000)),
    };
    let opts = BenchmarkOptions {
        seed: a.seed,
        repeats: a.repeats,
    };
    let report = run_benchmark(scenario, &student, &teacher, &opts)?;
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    std::fs::write(&a.out, text)?;
    // Timings vary between runs, so only the exact counts go into the
    // manifest and the report is not checksummed.
    let metrics = json!({
        "teacher_encoder_passes": report.teacher_encoder_passes,
        "dse_encoder_passes": report.dse_encoder_passes,
        "dse_head_evals": report.dse_head_evals,
        "report": a.out.file_name().map(|n| n.to_string_lossy().into_owned()),
    });
    let m = RunManifest::new(cmd, serde_json::to_value(scenario)?, metrics);
    finish(cmd, m, report.to_table())
}

fn replay(a: &ReplayArgs) -> Result<Outcome> {
    let recorded = RunManifest::load(&a.manifest)?;
    if matches!(recorded.command, Command::Replay(_)) {
        bail!("cannot replay a replay");
    }
    let fresh = execute(&recorded.command)?
        .manifest
        .context("replayed command wrote no manifest")?;
    if fresh.metrics != recorded.metrics {
        bail!(
            "metrics differ on replay:\nrecorded {}\nreplayed {}",
            recorded.metrics,
            fresh.metrics
        );
    }
    if fresh.artifacts != recorded.artifacts {
        bail!("artifact checksums differ on replay");
    }
    Ok(Outcome {
        manifest: None,
        stdout: format!(
            "replayed {}: metrics and {} artifact checksums match\n",
            recorded.command.name(),
            fresh.artifacts.len()
        ),
    })
}
