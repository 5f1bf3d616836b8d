use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{DseError, Result};
use crate::numkernel::ops::{
    layer_norm_backward, layer_norm_forward, linear_backward, linear_forward, mm, mm_a_bt, mm_at_b_acc,
    relu_backward_inplace, relu_inplace, softmax_rows_backward, softmax_rows_inplace, LayerNormCache,
};
use crate::numkernel::{Parameter, Parameterized, SeededRng, Tensor};

use super::input::SequenceInput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ffn: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub num_segments: usize,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            hidden: 32,
            heads: 4,
            ffn: 128,
            max_len: 32,
            vocab_size: 512,
            num_segments: 2,
            layer_norm_eps: 1e-12,
            init_std: 0.02,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(DseError::Config(msg));
        if self.num_layers == 0 || self.hidden == 0 || self.heads == 0 || self.ffn == 0 {
            return fail(format!("encoder dimensions must be positive: {self:?}"));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return fail(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        if self.max_len < 3 {
            return fail(format!("max_len {} < 3", self.max_len));
        }
        if self.vocab_size <= super::RESERVED_TOKENS {
            return fail(format!(
                "vocab_size {} leaves no ordinary tokens",
                self.vocab_size
            ));
        }
        if self.num_segments < 2 {
            return fail("at least two segments are required".into());
        }
        if !self.layer_norm_eps.is_finite()
            || self.layer_norm_eps <= 0.0
            || !self.init_std.is_finite()
            || self.init_std <= 0.0
        {
            return fail("layer_norm_eps and init_std must be positive".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Number of scalar parameters, as a function of the config alone.
    pub fn parameter_count(&self) -> usize {
        let (h, f) = (self.hidden, self.ffn);
        let embeddings = (self.vocab_size + self.max_len + self.num_segments) * h + 2 * h;
        let layer = 4 * (h * h + h) + (h * f + f) + (f * h + h) + 4 * h;
        embeddings + self.num_layers * layer
    }
}

/// Monotone count of forward passes. Clones start from the current value.
#[derive(Debug, Default)]
pub struct PassCounter(AtomicU64);

impl PassCounter {
    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }

    pub fn incr(&self) {
        self.0.fetch_add(1, Ordering::Relaxed);
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }
}

impl Clone for PassCounter {
    fn clone(&self) -> Self {
        Self(AtomicU64::new(self.get()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub wq: Parameter,
    pub bq: Parameter,
    pub wk: Parameter,
    pub bk: Parameter,
    pub wv: Parameter,
    pub bv: Parameter,
    pub wo: Parameter,
    pub bo: Parameter,
    pub ln1_gamma: Parameter,
    pub ln1_beta: Parameter,
    pub w1: Parameter,
    pub b1: Parameter,
    pub w2: Parameter,
    pub b2: Parameter,
    pub ln2_gamma: Parameter,
    pub ln2_beta: Parameter,
}

const LAYER_PARAM_NAMES: [&str; 16] = [
    "attn.wq",
    "attn.bq",
    "attn.wk",
    "attn.bk",
    "attn.wv",
    "attn.bv",
    "attn.wo",
    "attn.bo",
    "ln1.gamma",
    "ln1.beta",
    "ffn.w1",
    "ffn.b1",
    "ffn.w2",
    "ffn.b2",
    "ln2.gamma",
    "ln2.beta",
];

impl LayerWeights {
    fn new(cfg: &EncoderConfig, rng: &mut SeededRng) -> Self {
        let (h, f, std) = (cfg.hidden, cfg.ffn, cfg.init_std);
        let mut w = |r: usize, c: usize| Parameter::new(Tensor::randn(&[r, c], std, rng));
        let (wq, wk, wv, wo) = (w(h, h), w(h, h), w(h, h), w(h, h));
        let (w1, w2) = (w(h, f), w(f, h));
        let zeros = |n: usize| Parameter::new(Tensor::zeros(&[n]));
        let ones = |n: usize| Parameter::new(Tensor::filled(&[n], 1.0));
        Self {
            wq,
            bq: zeros(h),
            wk,
            bk: zeros(h),
            wv,
            bv: zeros(h),
            wo,
            bo: zeros(h),
            ln1_gamma: ones(h),
            ln1_beta: zeros(h),
            w1,
            b1: zeros(f),
            w2,
            b2: zeros(h),
            ln2_gamma: ones(h),
            ln2_beta: zeros(h),
        }
    }

    fn fields(&self) -> [&Parameter; 16] {
        [
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.ln2_gamma,
            &self.ln2_beta,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Parameter; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }
}

/// All parameters of one transformer encoder.
#[derive(Debug, Clone)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    pub token_emb: Parameter,
    pub position_emb: Parameter,
    pub segment_emb: Parameter,
    pub emb_ln_gamma: Parameter,
    pub emb_ln_beta: Parameter,
    pub layers: Vec<LayerWeights>,
    pub(crate) passes: PassCounter,
}

impl PartialEq for EncoderWeights {
    /// Compares configuration and parameters; the pass counter is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.parameters() == other.parameters()
    }
}

/// Activations saved by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    tokens: Vec<usize>,
    segments: Vec<usize>,
    emb_ln: LayerNormCache,
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention probabilities, `heads × n × n`.
    probs: Vec<f64>,
    ctx: Vec<f64>,
    ln1: LayerNormCache,
    x1: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    ln2: LayerNormCache,
}

impl EncoderCache {
    pub fn seq_len(&self) -> usize {
        self.tokens.len()
    }

    /// Attention weights of one head in one layer (1-based layer index), as
    /// an `n × n` row-major matrix of query rows over key columns.
    pub fn attention(&self, layer: usize, head: usize) -> &[f64] {
        let n = self.seq_len();
        &self.layers[layer - 1].probs[head * n * n..(head + 1) * n * n]
    }
}

impl EncoderWeights {
    pub fn new(config: EncoderConfig, rng: &mut SeededRng) -> Result<Self> {
        config.validate()?;
        let (h, std) = (config.hidden, config.init_std);
        let token_emb = Parameter::new(Tensor::randn(&[config.vocab_size, h], std, rng));
        let position_emb = Parameter::new(Tensor::randn(&[config.max_len, h], std, rng));
        let segment_emb = Parameter::new(Tensor::randn(&[config.num_segments, h], std, rng));
        let layers = (0..config.num_layers)
            .map(|_| LayerWeights::new(&config, rng))
            .collect();
        Ok(Self {
            token_emb,
            position_emb,
            segment_emb,
            emb_ln_gamma: Parameter::new(Tensor::filled(&[h], 1.0)),
            emb_ln_beta: Parameter::new(Tensor::zeros(&[h])),
            layers,
            config,
            passes: PassCounter::default(),
        })
    }

    /// Forward passes run through this encoder so far.
    pub fn pass_count(&self) -> u64 {
        self.passes.get()
    }

    fn check_input(&self, input: &SequenceInput) -> Result<()> {
        let n = input.len();
        if n == 0 || n > self.config.max_len {
            return Err(DseError::Input(format!(
                "sequence length {n} outside 1..={}",
                self.config.max_len
            )));
        }
        if input.segments.len() != n || input.mask.len() != n {
            return Err(DseError::Input("token, segment and mask lengths differ".into()));
        }
        if input.mask[0] != 1 {
            return Err(DseError::Input("first position must be a real token".into()));
        }
        if let Some(&t) = input
            .tokens
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(DseError::Input(format!(
                "token id {t} out of range for vocabulary of {}",
                self.config.vocab_size
            )));
        }
        if let Some(&s) = input
            .segments
            .iter()
            .find(|&&s| s as usize >= self.config.num_segments)
        {
            return Err(DseError::Input(format!("segment id {s} out of range")));
        }
        Ok(())
    }

    /// Runs the encoder and returns the embedding output followed by every
    /// layer's output (`L + 1` flat `n × H` buffers), plus the cache needed by
    /// [`EncoderWeights::backward`].
    pub fn forward(&self, input: &SequenceInput) -> Result<(Vec<Vec<f64>>, EncoderCache)> {
        self.check_input(input)?;
        self.passes.incr();
        let cfg = &self.config;
        let (n, h) = (input.len(), cfg.hidden);
        let tokens: Vec<usize> = input.tokens.iter().map(|&t| t as usize).collect();
        let segments: Vec<usize> = input.segments.iter().map(|&s| s as usize).collect();

        let mut summed = vec![0.0; n * h];
        for (i, row) in summed.chunks_exact_mut(h).enumerate() {
            let tok = self.token_emb.value.row(tokens[i]);
            let pos = self.position_emb.value.row(i);
            let seg = self.segment_emb.value.row(segments[i]);
            for j in 0..h {
                row[j] = tok[j] + pos[j] + seg[j];
            }
        }
        let (x0, emb_ln) = layer_norm_forward(
            &summed,
            h,
            self.emb_ln_gamma.value.data(),
            self.emb_ln_beta.value.data(),
            cfg.layer_norm_eps,
        );

        let mut outputs = Vec::with_capacity(cfg.num_layers + 1);
        let mut caches = Vec::with_capacity(cfg.num_layers);
        outputs.push(x0);
        for layer in &self.layers {
            let x = outputs.last().expect("embedding output present");
            let (out, cache) = layer_forward(layer, cfg, x, &input.mask);
            outputs.push(out);
            caches.push(cache);
        }
        Ok((
            outputs,
            EncoderCache {
                tokens,
                segments,
                emb_ln,
                layers: caches,
            },
        ))
    }

    /// Accumulates parameter gradients given upstream gradients for any
    /// subset of the `L + 1` outputs of [`EncoderWeights::forward`].
    pub fn backward(&mut self, cache: &EncoderCache, d_outputs: &[Option<Vec<f64>>]) {
        let cfg = self.config.clone();
        let (n, h) = (cache.seq_len(), cfg.hidden);
        assert_eq!(
            d_outputs.len(),
            cfg.num_layers + 1,
            "one gradient slot per output"
        );

        let mut grad = d_outputs[cfg.num_layers]
            .clone()
            .unwrap_or_else(|| vec![0.0; n * h]);
        for l in (0..cfg.num_layers).rev() {
            grad = layer_backward(&mut self.layers[l], &cfg, &cache.layers[l], &grad);
            if let Some(extra) = &d_outputs[l] {
                for (g, e) in grad.iter_mut().zip(extra) {
                    *g += e;
                }
            }
        }

        let d_summed = layer_norm_backward(
            &cache.emb_ln,
            &grad,
            self.emb_ln_gamma.value.data(),
            self.emb_ln_gamma.grad.data_mut(),
            self.emb_ln_beta.grad.data_mut(),
        );
        for (i, row) in d_summed.chunks_exact(h).enumerate() {
            for (dst, src) in [
                (self.token_emb.grad.row_mut(cache.tokens[i]), row),
                (self.position_emb.grad.row_mut(i), row),
                (self.segment_emb.grad.row_mut(cache.segments[i]), row),
            ] {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
}

fn layer_forward(w: &LayerWeights, cfg: &EncoderConfig, x: &[f64], mask: &[u8]) -> (Vec<f64>, LayerCache) {
    let (h, heads, dh) = (cfg.hidden, cfg.heads, cfg.head_dim());
    let n = x.len() / h;
    let scale = 1.0 / (dh as f64).sqrt();

    let q = linear_forward(x, &w.wq, &w.bq);
    let k = linear_forward(x, &w.wk, &w.bk);
    let v = linear_forward(x, &w.wv, &w.bv);

    let mut probs = vec![0.0; heads * n * n];
    let mut ctx = vec![0.0; n * h];
    for head in 0..heads {
        let qh = head_slice(&q, n, h, head, dh);
        let kh = head_slice(&k, n, h, head, dh);
        let vh = head_slice(&v, n, h, head, dh);
        let mut scores = mm_a_bt(&qh, &kh, n, dh, n);
        for row in scores.chunks_exact_mut(n) {
            for (s, &m) in row.iter_mut().zip(mask) {
                *s = if m == 1 { *s * scale } else { f64::NEG_INFINITY };
            }
        }
        softmax_rows_inplace(&mut scores, n);
        let ch = mm(&scores, &vh, n, n, dh);
        scatter_head(&mut ctx, &ch, n, h, head, dh);
        probs[head * n * n..(head + 1) * n * n].copy_from_slice(&scores);
    }

    let attn = linear_forward(&ctx, &w.wo, &w.bo);
    let s1: Vec<f64> = x.iter().zip(&attn).map(|(a, b)| a + b).collect();
    let (x1, ln1) = layer_norm_forward(
        &s1,
        h,
        w.ln1_gamma.value.data(),
        w.ln1_beta.value.data(),
        cfg.layer_norm_eps,
    );

    let pre = linear_forward(&x1, &w.w1, &w.b1);
    let mut act = pre.clone();
    relu_inplace(&mut act);
    let ffn = linear_forward(&act, &w.w2, &w.b2);
    let s2: Vec<f64> = x1.iter().zip(&ffn).map(|(a, b)| a + b).collect();
    let (out, ln2) = layer_norm_forward(
        &s2,
        h,
        w.ln2_gamma.value.data(),
        w.ln2_beta.value.data(),
        cfg.layer_norm_eps,
    );

    (
        out,
        LayerCache {
            x: x.to_vec(),
            q,
            k,
            v,
            probs,
            ctx,
            ln1,
            x1,
            pre,
            act,
            ln2,
        },
    )
}

fn layer_backward(w: &mut LayerWeights, cfg: &EncoderConfig, c: &LayerCache, d_out: &[f64]) -> Vec<f64> {
    let (h, heads, dh) = (cfg.hidden, cfg.heads, cfg.head_dim());
    let n = d_out.len() / h;
    let scale = 1.0 / (dh as f64).sqrt();

    let d_s2 = layer_norm_backward(
        &c.ln2,
        d_out,
        w.ln2_gamma.value.data(),
        w.ln2_gamma.grad.data_mut(),
        w.ln2_beta.grad.data_mut(),
    );
    let mut d_act = linear_backward(&c.act, &d_s2, &mut w.w2, &mut w.b2);
    relu_backward_inplace(&c.pre, &mut d_act);
    let d_x1_ffn = linear_backward(&c.x1, &d_act, &mut w.w1, &mut w.b1);
    let d_x1: Vec<f64> = d_s2.iter().zip(&d_x1_ffn).map(|(a, b)| a + b).collect();

    let d_s1 = layer_norm_backward(
        &c.ln1,
        &d_x1,
        w.ln1_gamma.value.data(),
        w.ln1_gamma.grad.data_mut(),
        w.ln1_beta.grad.data_mut(),
    );
    let d_ctx = linear_backward(&c.ctx, &d_s1, &mut w.wo, &mut w.bo);

    let mut dq = vec![0.0; n * h];
    let mut dk = vec![0.0; n * h];
    let mut dv = vec![0.0; n * h];
    for head in 0..heads {
        let p = &c.probs[head * n * n..(head + 1) * n * n];
        let qh = head_slice(&c.q, n, h, head, dh);
        let kh = head_slice(&c.k, n, h, head, dh);
        let vh = head_slice(&c.v, n, h, head, dh);
        let dch = head_slice(&d_ctx, n, h, head, dh);

        let dp = mm_a_bt(&dch, &vh, n, dh, n);
        let mut dvh = vec![0.0; n * dh];
        mm_at_b_acc(p, &dch, n, n, dh, &mut dvh);
        let mut ds = softmax_rows_backward(p, &dp, n);
        ds.iter_mut().for_each(|g| *g *= scale);
        let dqh = mm(&ds, &kh, n, n, dh);
        let mut dkh = vec![0.0; n * dh];
        mm_at_b_acc(&ds, &qh, n, n, dh, &mut dkh);

        scatter_head(&mut dq, &dqh, n, h, head, dh);
        scatter_head(&mut dk, &dkh, n, h, head, dh);
        scatter_head(&mut dv, &dvh, n, h, head, dh);
    }

    let mut dx = d_s1;
    for (dproj, wp, bp) in [
        (&dq, &mut w.wq, &mut w.bq),
        (&dk, &mut w.wk, &mut w.bk),
        (&dv, &mut w.wv, &mut w.bv),
    ] {
        let part = linear_backward(&c.x, dproj, wp, bp);
        for (a, b) in dx.iter_mut().zip(part) {
            *a += b;
        }
    }
    dx
}

fn head_slice(x: &[f64], n: usize, h: usize, head: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * dh);
    for row in x.chunks_exact(h).take(n) {
        out.extend_from_slice(&row[head * dh..(head + 1) * dh]);
    }
    out
}

fn scatter_head(dst: &mut [f64], src: &[f64], n: usize, h: usize, head: usize, dh: usize) {
    for (i, row) in src.chunks_exact(dh).take(n).enumerate() {
        dst[i * h + head * dh..i * h + (head + 1) * dh].copy_from_slice(row);
    }
}

impl Parameterized for EncoderWeights {
    fn parameters(&self) -> Vec<(String, &Parameter)> {
        let mut out = vec![
            ("embeddings.token".to_string(), &self.token_emb),
            ("embeddings.position".to_string(), &self.position_emb),
            ("embeddings.segment".to_string(), &self.segment_emb),
            ("embeddings.ln.gamma".to_string(), &self.emb_ln_gamma),
            ("embeddings.ln.beta".to_string(), &self.emb_ln_beta),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, p) in LAYER_PARAM_NAMES.iter().zip(layer.fields()) {
                out.push((format!("layer{i}.{name}"), p));
            }
        }
        out
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Parameter)> {
        let mut out = vec![
            ("embeddings.token".to_string(), &mut self.token_emb),
            ("embeddings.position".to_string(), &mut self.position_emb),
            ("embeddings.segment".to_string(), &mut self.segment_emb),
            ("embeddings.ln.gamma".to_string(), &mut self.emb_ln_gamma),
            ("embeddings.ln.beta".to_string(), &mut self.emb_ln_beta),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (name, p) in LAYER_PARAM_NAMES.iter().zip(layer.fields_mut()) {
                out.push((format!("layer{i}.{name}"), p));
            }
        }
        out
    }
}

/// Encodes `input` and returns `L + 1` hidden-state matrices of shape
/// `seq_len × H`: the normalized embeddings, then each layer's output.
pub fn encode(input: &SequenceInput, weights: &EncoderWeights) -> Result<Vec<Tensor>> {
    let (outputs, _) = weights.forward(input)?;
    let n = input.len();
    let h = weights.config.hidden;
    outputs
        .into_iter()
        .map(|o| Tensor::from_vec(&[n, h], o))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{build_pair_input, build_single_input};
    use crate::numkernel::{finite_diff_check, GradCheckOptions};

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            num_layers: 2,
            hidden: 8,
            heads: 2,
            ffn: 16,
            max_len: 12,
            vocab_size: 20,
            ..Default::default()
        }
    }

    #[test]
    fn shapes_follow_config() {
        let cfg = small_config();
        let w = EncoderWeights::new(cfg.clone(), &mut SeededRng::new(1)).unwrap();
        assert_eq!(w.parameter_count(), cfg.parameter_count());
        let x = build_pair_input(&[5, 6], &[7], 12).unwrap();
        let out = encode(&x, &w).unwrap();
        assert_eq!(out.len(), 3);
        for o in &out {
            assert_eq!(o.shape(), &[12, 8]);
            assert!(o.is_finite());
        }
        assert_eq!(w.pass_count(), 1);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = small_config();
        cfg.heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = small_config();
        cfg.max_len = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn out_of_range_token_is_input_error() {
        let w = EncoderWeights::new(small_config(), &mut SeededRng::new(1)).unwrap();
        let x = build_single_input(&[25], 6).unwrap();
        assert!(matches!(encode(&x, &w), Err(DseError::Input(_))));
        let too_long = build_single_input(&[5; 20], 20).unwrap();
        assert!(matches!(encode(&too_long, &w), Err(DseError::Input(_))));
    }

    #[test]
    fn padding_does_not_change_real_positions() {
        let w = EncoderWeights::new(small_config(), &mut SeededRng::new(2)).unwrap();
        let short = build_pair_input(&[5, 9, 11], &[7, 4], 7).unwrap();
        let long = short.padded_to(12);
        let a = encode(&short, &w).unwrap();
        let b = encode(&long, &w).unwrap();
        for (la, lb) in a.iter().zip(&b) {
            for i in 0..7 {
                for (x, y) in la.row(i).iter().zip(lb.row(i)) {
                    assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let cfg = small_config();
        let w1 = EncoderWeights::new(cfg.clone(), &mut SeededRng::new(3)).unwrap();
        let w2 = EncoderWeights::new(cfg, &mut SeededRng::new(3)).unwrap();
        let x = build_single_input(&[5, 6, 7], 10).unwrap();
        let a = encode(&x, &w1).unwrap();
        let b = encode(&x, &w2).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!(p
                .data()
                .iter()
                .zip(q.data())
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn attention_ignores_padding() {
        let w = EncoderWeights::new(small_config(), &mut SeededRng::new(4)).unwrap();
        let x = build_pair_input(&[5, 9], &[7], 10).unwrap();
        let real = x.real_len();
        let (_, cache) = w.forward(&x).unwrap();
        for layer in 1..=2 {
            for head in 0..2 {
                let p = cache.attention(layer, head);
                for row in p.chunks_exact(10).take(real) {
                    let s: f64 = row[..real].iter().sum();
                    assert!((s - 1.0).abs() <= 1e-12);
                    assert!(row[real..].iter().all(|&v| v < 1e-12));
                }
            }
        }
    }

    #[test]
    fn swapping_tokens_changes_hidden_states() {
        let cfg = small_config();
        let mut rng = SeededRng::new(5);
        let w = EncoderWeights::new(cfg, &mut rng).unwrap();
        for _ in 0..20 {
            let len = rng.range_inclusive(2, 8);
            let mut y: Vec<u32> = (0..len).map(|_| 4 + rng.below(16) as u32).collect();
            let (i, j) = (0, len - 1);
            if y[i] == y[j] {
                y[j] = if y[i] == 4 { 5 } else { 4 };
            }
            let a = encode(&build_single_input(&y, 12).unwrap(), &w).unwrap();
            y.swap(i, j);
            let b = encode(&build_single_input(&y, 12).unwrap(), &w).unwrap();
            assert_ne!(a.last().unwrap().data(), b.last().unwrap().data());
        }
    }

    struct Readout {
        enc: EncoderWeights,
        input: SequenceInput,
        /// One fixed random projection per output.
        probes: Vec<Vec<f64>>,
    }

    impl Readout {
        fn loss(&self) -> f64 {
            let (outs, _) = self.enc.forward(&self.input).unwrap();
            outs.iter()
                .zip(&self.probes)
                .map(|(o, p)| o.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
                .sum()
        }
    }

    impl Parameterized for Readout {
        fn parameters(&self) -> Vec<(String, &Parameter)> {
            self.enc.parameters()
        }
        fn parameters_mut(&mut self) -> Vec<(String, &mut Parameter)> {
            self.enc.parameters_mut()
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = EncoderConfig {
            init_std: 0.5,
            layer_norm_eps: 1e-5,
            ..small_config()
        };
        let mut rng = SeededRng::new(6);
        let enc = EncoderWeights::new(cfg.clone(), &mut rng).unwrap();
        let input = build_pair_input(&[5, 9, 13], &[7, 4], 12).unwrap();
        let probes = (0..=cfg.num_layers)
            .map(|_| (0..12 * cfg.hidden).map(|_| rng.normal()).collect())
            .collect();
        let mut r = Readout { enc, input, probes };

        let (_, cache) = r.enc.forward(&r.input).unwrap();
        let d: Vec<Option<Vec<f64>>> = r.probes.iter().cloned().map(Some).collect();
        r.enc.backward(&cache, &d);
        let report = finite_diff_check(&mut r, |m| m.loss(), 1e-5, &GradCheckOptions::default()).unwrap();
        assert!(report.max_rel_error <= 1e-5, "{report:?}");
    }
}
