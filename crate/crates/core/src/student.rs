//! The Siamese student: one shared encoder maps each sentence to a pooled
//! embedding, and a small bias-free head scores a pair of embeddings.

use serde::{Deserialize, Serialize};

use crate::encoder::{build_single_input, EncoderCache, EncoderConfig, EncoderWeights, PassCounter, TokenId};
use crate::error::{DseError, Result};
use crate::numkernel::ops::matvec;
use crate::numkernel::{Parameter, Parameterized, SeededRng, Tensor};
use crate::teacher::{TaskKind, TeacherModel};

/// Most layers ever pooled into an embedding.
pub const MAX_POOLED_LAYERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub encoder: EncoderConfig,
    pub task: TaskKind,
    /// Hidden width `r` of the similarity head.
    pub head_hidden: usize,
}

impl StudentConfig {
    pub fn new(encoder: EncoderConfig, task: TaskKind) -> Self {
        Self {
            encoder,
            task,
            head_hidden: 64,
        }
    }

    pub fn pooled_layers(&self) -> usize {
        self.encoder.num_layers.min(MAX_POOLED_LAYERS)
    }

    /// Embedding width `d = P · H`.
    pub fn embedding_dim(&self) -> usize {
        self.pooled_layers() * self.encoder.hidden
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.head_hidden == 0 {
            return Err(DseError::Config("head hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// A pooled sentence vector of width `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding(pub Vec<f64>);

impl SentenceEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct StudentModel {
    /// The single encoder shared by both sides of a pair.
    pub encoder: EncoderWeights,
    /// `r × 4d`
    pub head_w1: Parameter,
    /// `n × r`
    pub head_w2: Parameter,
    pub task: TaskKind,
    pub head_hidden: usize,
    head_evals: PassCounter,
}

impl PartialEq for StudentModel {
    /// Compares configuration and parameters; counters are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.config() == other.config() && self.parameters() == other.parameters()
    }
}

pub(crate) struct EmbedCache {
    encoder: EncoderCache,
}

pub(crate) struct HeadCache {
    u: Vec<f64>,
    v: Vec<f64>,
    h: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

/// Mean over real non-CLS positions of each of the last `pooled` layers,
/// concatenated earliest layer first. `layers` holds `n × H` buffers with the
/// embedding output at index 0.
fn pool(layers: &[Vec<f64>], mask: &[u8], hidden: usize, pooled: usize) -> Vec<f64> {
    let count = mask.iter().skip(1).filter(|&&m| m == 1).count() as f64;
    let mut out = Vec::with_capacity(pooled * hidden);
    for layer in &layers[layers.len() - pooled..] {
        let mut mean = vec![0.0; hidden];
        for (row, _) in layer
            .chunks_exact(hidden)
            .zip(mask)
            .skip(1)
            .filter(|(_, &m)| m == 1)
        {
            for (acc, x) in mean.iter_mut().zip(row) {
                *acc += x;
            }
        }
        out.extend(mean.into_iter().map(|s| s / count));
    }
    out
}

/// Pools per-layer hidden states (`L + 1` tensors of shape `n × H`, the
/// embedding output first) into a sentence embedding: the average over real
/// positions other than CLS, for each of the last `min(4, L)` layers.
pub fn pool_hidden_states(hidden_states: &[Tensor], mask: &[u8]) -> Result<Vec<f64>> {
    if hidden_states.len() < 2 {
        return Err(DseError::Shape(
            "need the embedding output and at least one layer".into(),
        ));
    }
    let (n, h) = hidden_states[0].require_2d("hidden state")?;
    for t in hidden_states {
        if t.shape() != [n, h] {
            return Err(DseError::Shape(format!(
                "hidden states disagree in shape: {:?} vs {:?}",
                t.shape(),
                [n, h]
            )));
        }
    }
    if mask.len() != n {
        return Err(DseError::Shape(format!(
            "mask has {} entries for {n} positions",
            mask.len()
        )));
    }
    if !mask.iter().skip(1).any(|&m| m == 1) {
        return Err(DseError::Input("no real positions besides CLS".into()));
    }
    let layers: Vec<Vec<f64>> = hidden_states.iter().map(|t| t.data().to_vec()).collect();
    let pooled = (hidden_states.len() - 1).min(MAX_POOLED_LAYERS);
    Ok(pool(&layers, mask, h, pooled))
}

impl StudentModel {
    /// Fresh student with its own randomly initialized encoder.
    pub fn new(config: &StudentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::new(seed);
        let encoder = EncoderWeights::new(config.encoder.clone(), &mut rng)?;
        Ok(Self::with_encoder(config, encoder, &mut rng))
    }

    /// Student whose encoder starts as a copy of the teacher's; the head is
    /// still drawn from `seed`.
    pub fn from_teacher(config: &StudentConfig, teacher: &TeacherModel, seed: u64) -> Result<Self> {
        config.validate()?;
        if teacher.encoder.config != config.encoder {
            return Err(DseError::Config(
                "teacher encoder configuration differs from the student's".into(),
            ));
        }
        let mut encoder = teacher.encoder.clone();
        encoder.passes = PassCounter::default();
        for (_, p) in encoder.parameters_mut() {
            p.zero_grad();
            p.reset_state();
        }
        let mut rng = SeededRng::new(seed);
        Ok(Self::with_encoder(config, encoder, &mut rng))
    }

    fn with_encoder(config: &StudentConfig, encoder: EncoderWeights, rng: &mut SeededRng) -> Self {
        let (d, r, n) = (config.embedding_dim(), config.head_hidden, config.task.outputs());
        let std = config.encoder.init_std;
        Self {
            head_w1: Parameter::new(Tensor::randn(&[r, 4 * d], std, rng)),
            head_w2: Parameter::new(Tensor::randn(&[n, r], std, rng)),
            encoder,
            task: config.task,
            head_hidden: r,
            head_evals: PassCounter::default(),
        }
    }

    pub fn config(&self) -> StudentConfig {
        StudentConfig {
            encoder: self.encoder.config.clone(),
            task: self.task,
            head_hidden: self.head_hidden,
        }
    }

    pub fn pooled_layers(&self) -> usize {
        self.encoder.config.num_layers.min(MAX_POOLED_LAYERS)
    }

    pub fn embedding_dim(&self) -> usize {
        self.pooled_layers() * self.encoder.config.hidden
    }

    /// Head evaluations run so far.
    pub fn head_eval_count(&self) -> u64 {
        self.head_evals.get()
    }

    pub(crate) fn embed_forward(&self, y: &[TokenId]) -> Result<(SentenceEmbedding, EmbedCache)> {
        let input = build_single_input(y, self.encoder.config.max_len)?.trimmed();
        let (outputs, encoder) = self.encoder.forward(&input)?;
        let e = pool(
            &outputs,
            &input.mask,
            self.encoder.config.hidden,
            self.pooled_layers(),
        );
        Ok((SentenceEmbedding(e), EmbedCache { encoder }))
    }

    pub(crate) fn embed_backward(&mut self, cache: &EmbedCache, du: &[f64]) {
        let cfg = &self.encoder.config;
        let (h, layers) = (cfg.hidden, cfg.num_layers);
        let n = cache.encoder.seq_len();
        let pooled = self.pooled_layers();
        let scale = 1.0 / (n - 1) as f64;
        let mut d_outputs = vec![None; layers + 1];
        for (p, block) in du.chunks_exact(h).enumerate() {
            let mut d = vec![0.0; n * h];
            for row in d.chunks_exact_mut(h).skip(1) {
                for (g, b) in row.iter_mut().zip(block) {
                    *g = b * scale;
                }
            }
            d_outputs[layers + 1 - pooled + p] = Some(d);
        }
        self.encoder.backward(&cache.encoder, &d_outputs);
    }

    /// `ψ(y)`: one encoder pass over `[CLS y SEP]`, pooled.
    pub fn embed(&self, y: &[TokenId]) -> Result<SentenceEmbedding> {
        self.embed_forward(y).map(|(e, _)| e)
    }

    fn check_dim(&self, e: &SentenceEmbedding) -> Result<()> {
        let d = self.embedding_dim();
        if e.dim() != d {
            return Err(DseError::Shape(format!(
                "embedding has width {}, expected {d}",
                e.dim()
            )));
        }
        Ok(())
    }

    pub(crate) fn head_forward(
        &self,
        u: &SentenceEmbedding,
        v: &SentenceEmbedding,
    ) -> Result<(Vec<f64>, HeadCache)> {
        self.check_dim(u)?;
        self.check_dim(v)?;
        self.head_evals.incr();
        let h = pair_features(u.as_slice(), v.as_slice());
        let (r, n) = (self.head_hidden, self.task.outputs());
        let pre = matvec(self.head_w1.value.data(), &h, r, h.len());
        let act: Vec<f64> = pre.iter().map(|&x| x.max(0.0)).collect();
        let logits = matvec(self.head_w2.value.data(), &act, n, r);
        let cache = HeadCache {
            u: u.0.clone(),
            v: v.0.clone(),
            h,
            pre,
            act,
        };
        Ok((logits, cache))
    }

    /// Accumulates head gradients and returns the gradients for `u` and `v`.
    pub(crate) fn head_backward(&mut self, cache: &HeadCache, d_logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (r, n) = (self.head_hidden, self.task.outputs());
        let width = cache.h.len();
        let d = width / 4;
        let w2 = self.head_w2.value.data();
        let mut d_pre = vec![0.0; r];
        for (k, dp) in d_pre.iter_mut().enumerate() {
            if cache.pre[k] > 0.0 {
                *dp = (0..n).map(|i| w2[i * r + k] * d_logits[i]).sum();
            }
        }
        let g2 = self.head_w2.grad.data_mut();
        for (i, &dl) in d_logits.iter().enumerate() {
            for (g, a) in g2[i * r..(i + 1) * r].iter_mut().zip(&cache.act) {
                *g += dl * a;
            }
        }
        let mut d_h = vec![0.0; width];
        let w1 = self.head_w1.value.data();
        let g1 = self.head_w1.grad.data_mut();
        for (k, &dp) in d_pre.iter().enumerate() {
            if dp == 0.0 {
                continue;
            }
            let row = &w1[k * width..(k + 1) * width];
            for ((g, dh), (&w, &x)) in g1[k * width..(k + 1) * width]
                .iter_mut()
                .zip(d_h.iter_mut())
                .zip(row.iter().zip(&cache.h))
            {
                *g += dp * x;
                *dh += dp * w;
            }
        }
        let mut du = d_h[..d].to_vec();
        let mut dv = d_h[d..2 * d].to_vec();
        for j in 0..d {
            let (u, v) = (cache.u[j], cache.v[j]);
            du[j] += d_h[2 * d + j] * v;
            dv[j] += d_h[2 * d + j] * u;
            // Subgradient 0 at u = v.
            let s = if u > v {
                1.0
            } else if u < v {
                -1.0
            } else {
                0.0
            };
            du[j] += d_h[3 * d + j] * s;
            dv[j] -= d_h[3 * d + j] * s;
        }
        (du, dv)
    }

    /// `f(u, v) = w · ReLU(W · [u, v, u∘v, |u−v|])`.
    pub fn similarity(&self, u: &SentenceEmbedding, v: &SentenceEmbedding) -> Result<Vec<f64>> {
        self.similarity_slices(u.as_slice(), v.as_slice())
    }

    /// [`StudentModel::similarity`] on raw embedding rows.
    pub fn similarity_slices(&self, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let d = self.embedding_dim();
        if u.len() != d || v.len() != d {
            return Err(DseError::Shape(format!(
                "embeddings have widths {} and {}, expected {d}",
                u.len(),
                v.len()
            )));
        }
        self.head_evals.incr();
        let h = pair_features(u, v);
        let (r, n) = (self.head_hidden, self.task.outputs());
        let mut act = matvec(self.head_w1.value.data(), &h, r, h.len());
        act.iter_mut().for_each(|x| *x = x.max(0.0));
        Ok(matvec(self.head_w2.value.data(), &act, n, r))
    }

    /// `S(y, z) = f(ψ(y), ψ(z))`.
    pub fn score(&self, y: &[TokenId], z: &[TokenId]) -> Result<Vec<f64>> {
        let u = self.embed(y)?;
        let v = self.embed(z)?;
        self.similarity(&u, &v)
    }

    pub fn head_parameters(&self) -> Vec<(String, &Parameter)> {
        vec![("head.W".into(), &self.head_w1), ("head.w".into(), &self.head_w2)]
    }

    pub fn head_parameters_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        vec![
            ("head.W".into(), &mut self.head_w1),
            ("head.w".into(), &mut self.head_w2),
        ]
    }
}

impl Parameterized for StudentModel {
    fn parameters(&self) -> Vec<(String, &Parameter)> {
        let mut out: Vec<(String, &Parameter)> = self
            .encoder
            .parameters()
            .into_iter()
            .map(|(n, p)| (format!("encoder.{n}"), p))
            .collect();
        out.extend(self.head_parameters());
        out
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        let mut out: Vec<(String, &mut Parameter)> = self
            .encoder
            .parameters_mut()
            .into_iter()
            .map(|(n, p)| (format!("encoder.{n}"), p))
            .collect();
        out.push(("head.W".into(), &mut self.head_w1));
        out.push(("head.w".into(), &mut self.head_w2));
        out
    }
}

/// `h = [u, v, u∘v, |u−v|]`.
pub fn pair_features(u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut h = Vec::with_capacity(4 * u.len());
    h.extend_from_slice(u);
    h.extend_from_slice(v);
    h.extend(u.iter().zip(v).map(|(a, b)| a * b));
    h.extend(u.iter().zip(v).map(|(a, b)| (a - b).abs()));
    h
}

pub fn embed_sentence(s: &StudentModel, y: &[TokenId]) -> Result<SentenceEmbedding> {
    s.embed(y)
}

pub fn similarity_head(s: &StudentModel, u: &SentenceEmbedding, v: &SentenceEmbedding) -> Result<Vec<f64>> {
    s.similarity(u, v)
}

pub fn student_score(s: &StudentModel, y: &[TokenId], z: &[TokenId]) -> Result<Vec<f64>> {
    s.score(y, z)
}
