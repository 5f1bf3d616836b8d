use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use dse_core::distill::TrainConfig;
use dse_core::encoder::EncoderConfig;
use dse_core::teacher::TaskKind;
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "dse",
    version,
    about = "Train, distill and benchmark sentence-pair models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", content = "args", rename_all = "kebab-case")]
pub enum Command {
    /// Write a seeded synthetic pair dataset.
    GenData(GenDataArgs),
    /// Fine-tune a cross-attentive teacher on dataset labels.
    TrainTeacher(TrainTeacherArgs),
    /// Append teacher logits to every row of a dataset.
    CacheScores(CacheScoresArgs),
    /// Train a Siamese student against cached teacher logits and labels.
    Distill(DistillArgs),
    /// Score a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Precompute student embeddings for a catalog.
    BuildIndex(BuildIndexArgs),
    /// Rank catalog sentences against a query.
    Query(QueryArgs),
    /// Time cross-attentive scoring against embed-then-head scoring.
    Benchmark(BenchmarkArgs),
    /// Re-run the command recorded in a manifest and compare its results.
    Replay(ReplayArgs),
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse().map_err(|e: dse_core::DseError| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 4)]
    pub layers: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 128)]
    pub ffn: usize,
    #[arg(long, default_value_t = 32)]
    pub max_len: usize,
    #[arg(long, default_value_t = 0.02)]
    pub init_std: f64,
}

impl ModelArgs {
    pub fn encoder(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            num_layers: self.layers,
            hidden: self.hidden,
            heads: self.heads,
            ffn: self.ffn,
            max_len: self.max_len,
            vocab_size,
            init_std: self.init_std,
            ..EncoderConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Share of the dataset held out for checkpoint selection.
    #[arg(long, default_value_t = 0.1)]
    pub dev_fraction: f64,
}

impl TrainArgs {
    pub fn config(&self, freeze_encoder: bool) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            seed: self.seed,
            freeze_encoder,
            dev_fraction: self.dev_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    #[arg(long, value_parser = parse_task, default_value = "binary")]
    pub task: TaskKind,
    #[arg(long, default_value_t = 5000)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainTeacherArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// One token per line; defaults to the synthetic vocabulary.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct CacheScoresArgs {
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DistillArgs {
    /// Dataset with cached teacher logits (needed unless alpha is 0).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Weight of the teacher-logit term against the label term.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Train only the similarity head.
    #[arg(long)]
    pub freeze_encoder: bool,
    /// Start the student encoder from this teacher checkpoint's encoder.
    #[arg(long)]
    pub init_teacher: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub head_hidden: usize,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    All,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Teacher or student checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics are written here as JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Split::Dev)]
    pub split: Split,
    /// Seed and fraction of the train/dev split; match the training run.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub dev_fraction: f64,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BuildIndexArgs {
    /// Student checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Catalog file, one sentence per line.
    #[arg(long, conflicts_with = "synthetic")]
    pub catalog: Option<PathBuf>,
    /// Generate a seeded synthetic catalog of this many sentences instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Embed sentences on all cores.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct QueryArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub index: PathBuf,
    /// Whitespace-tokenized query sentence.
    #[arg(long)]
    pub query: String,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Logit used as the ranking score; defaults to the last.
    #[arg(long)]
    pub logit: Option<usize>,
    /// Results are written here as JSON; printed to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Offline,
    Online,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum, default_value_t = ScenarioKind::Online)]
    pub scenario: ScenarioKind,
    /// Catalog size; 200 offline and 10000 online by default.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub student: PathBuf,
    #[arg(long)]
    pub teacher: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Report JSON; the text table goes to stdout.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::TrainTeacher(_) => "train-teacher",
            Command::CacheScores(_) => "cache-scores",
            Command::Distill(_) => "distill",
            Command::Eval(_) => "eval",
            Command::BuildIndex(_) => "build-index",
            Command::Query(_) => "query",
            Command::Benchmark(_) => "benchmark",
            Command::Replay(_) => "replay",
        }
    }

    /// Seed that drives the command's randomness, if any.
    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::GenData(a) => Some(a.seed),
            Command::TrainTeacher(a) => Some(a.train.seed),
            Command::Distill(a) => Some(a.train.seed),
            Command::Eval(a) => Some(a.seed),
            Command::BuildIndex(a) => a.synthetic.map(|_| a.seed),
            Command::Benchmark(a) => Some(a.seed),
            Command::CacheScores(_) | Command::Query(_) | Command::Replay(_) => None,
        }
    }

    /// Rewrites every path argument with `f`.
    pub fn map_paths(&mut self, f: &dyn Fn(&Path) -> PathBuf) {
        let opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                *p = f(p);
            }
        };
        match self {
            Command::GenData(a) => a.out = f(&a.out),
            Command::TrainTeacher(a) => {
                a.data = f(&a.data);
                a.out = f(&a.out);
                opt(&mut a.vocab);
            }
            Command::CacheScores(a) => {
                a.teacher = f(&a.teacher);
                a.data = f(&a.data);
                a.out = f(&a.out);
                opt(&mut a.vocab);
            }
            Command::Distill(a) => {
                a.data = f(&a.data);
                a.out = f(&a.out);
                opt(&mut a.init_teacher);
                opt(&mut a.vocab);
            }
            Command::Eval(a) => {
                a.model = f(&a.model);
                a.data = f(&a.data);
                a.out = f(&a.out);
                opt(&mut a.vocab);
            }
            Command::BuildIndex(a) => {
                a.model = f(&a.model);
                opt(&mut a.catalog);
                a.out = f(&a.out);
                opt(&mut a.vocab);
            }
            Command::Query(a) => {
                a.model = f(&a.model);
                a.index = f(&a.index);
                opt(&mut a.out);
                opt(&mut a.vocab);
            }
            Command::Benchmark(a) => {
                a.student = f(&a.student);
                a.teacher = f(&a.teacher);
                a.out = f(&a.out);
            }
            Command::Replay(a) => a.manifest = f(&a.manifest),
        }
    }

    /// Where the run manifest goes: next to the primary output.
    pub fn manifest_path(&self) -> Option<PathBuf> {
        let out = match self {
            Command::GenData(a) => &a.out,
            Command::TrainTeacher(a) => &a.out,
            Command::CacheScores(a) => &a.out,
            Command::Distill(a) => &a.out,
            Command::Eval(a) => &a.out,
            Command::BuildIndex(a) => &a.out,
            Command::Query(a) => a.out.as_ref()?,
            Command::Benchmark(a) => &a.out,
            Command::Replay(_) => return None,
        };
        let mut name = out.file_name()?.to_os_string();
        name.push(".manifest.json");
        Some(out.with_file_name(name))
    }
}
