//! Single-block causal transformer whose attention projections come from an
//! (optionally adapted) stacked `[W_Q; W_K; W_V]` weight.
//!
//! ```text
//! x      = embed[tok] + pos_embed[t]                  (d_model)
//! q,k,v  = x·W_Q, x·W_K, x·W_V                        (d_k)
//! h_t    = Σ_{j≤t} softmax_j(q_t·k_j / √d_k) v_j      (d_k)
//! y      = x + gelu(h·W1)·W2                          (d_model)
//! logits = y·out_proj                                 (vocab)
//! ```
//!
//! No biases, no layer norm, no dropout. The backward pass is written out
//! by hand and checked against central differences in the tests.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::adapter::AdaptedWeights;
use crate::error::{Error, Result};
use crate::extraction::StackedAttentionWeights;
use crate::linalg::Matrix;
use crate::rng::{normal_matrix, seeded, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub d_ff: usize,
    /// Longest token sequence the positional table covers.
    pub seq_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 9,
            d_model: 16,
            d_k: 32,
            d_ff: 32,
            seq_len: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.d_model == 0 || self.d_k == 0 || self.d_ff == 0 || self.seq_len == 0 {
            return Err(Error::Config(format!("invalid model dimensions {self:?}")));
        }
        Ok(())
    }

    /// Shape of the stacked attention weight.
    pub fn stacked_shape(&self) -> (usize, usize) {
        (3 * self.d_model, self.d_k)
    }
}

/// Named parameter blocks of [`ToyTransformer`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamBlock {
    Embed,
    PosEmbed,
    AttnBase,
    AdapterA,
    AdapterB,
    FfnW1,
    FfnW2,
    OutProj,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 8] = [
        ParamBlock::Embed,
        ParamBlock::PosEmbed,
        ParamBlock::AttnBase,
        ParamBlock::AdapterA,
        ParamBlock::AdapterB,
        ParamBlock::FfnW1,
        ParamBlock::FfnW2,
        ParamBlock::OutProj,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamBlock::Embed => "embed",
            ParamBlock::PosEmbed => "pos_embed",
            ParamBlock::AttnBase => "attn.base",
            ParamBlock::AdapterA => "attn.adapter_a",
            ParamBlock::AdapterB => "attn.adapter_b",
            ParamBlock::FfnW1 => "ffn.w1",
            ParamBlock::FfnW2 => "ffn.w2",
            ParamBlock::OutProj => "out_proj",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|b| b.name() == name)
    }
}

/// Set of parameter blocks, e.g. the ones a training run may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BlockSet(u8);

impl BlockSet {
    pub const fn empty() -> Self {
        Self(0)
    }

    pub const fn all() -> Self {
        Self(0xff)
    }

    /// Every block of a model without an adapter.
    pub fn full_model() -> Self {
        Self::all().without(ParamBlock::AdapterA).without(ParamBlock::AdapterB)
    }

    /// `A`, plus `B` unless frozen.
    pub fn adapter(b_frozen: bool) -> Self {
        let s = Self::empty().with(ParamBlock::AdapterA);
        if b_frozen {
            s
        } else {
            s.with(ParamBlock::AdapterB)
        }
    }

    pub const fn with(self, b: ParamBlock) -> Self {
        Self(self.0 | (1 << b as u8))
    }

    pub const fn without(self, b: ParamBlock) -> Self {
        Self(self.0 & !(1 << b as u8))
    }

    pub const fn contains(self, b: ParamBlock) -> bool {
        self.0 & (1 << b as u8) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = ParamBlock> {
        ParamBlock::ALL.into_iter().filter(move |b| self.contains(*b))
    }
}

/// One gradient per parameter block; `None` marks blocks that were frozen
/// or not requested.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradientSet {
    grads: [Option<Matrix>; 8],
}

impl GradientSet {
    pub fn get(&self, b: ParamBlock) -> Option<&Matrix> {
        self.grads[b.index()].as_ref()
    }

    pub fn set(&mut self, b: ParamBlock, g: Matrix) {
        self.grads[b.index()] = Some(g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamBlock, &Matrix)> {
        ParamBlock::ALL
            .into_iter()
            .filter_map(|b| self.get(b).map(|g| (b, g)))
    }

    pub fn blocks(&self) -> BlockSet {
        self.iter().fold(BlockSet::empty(), |s, (b, _)| s.with(b))
    }

    pub fn global_norm(&self) -> f64 {
        libm::sqrt(
            self.iter()
                .map(|(_, g)| g.as_slice().iter().map(|x| x * x).sum::<f64>())
                .sum(),
        )
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            for x in g.as_mut_slice() {
                *x *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|(_, g)| g.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTransformer {
    config: ModelConfig,
    embed: Matrix,
    pos_embed: Matrix,
    pub attention: AdaptedWeights,
    ffn_w1: Matrix,
    ffn_w2: Matrix,
    out_proj: Matrix,
}

impl ToyTransformer {
    /// Random initialization. Embeddings are `Normal(0, 1/2)` so token plus
    /// position has unit variance; every projection uses std `1/√fan_in`,
    /// which for the attention weights is `1/√d_model`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let rng = &mut seeded(seed, stream::MODEL_INIT);
        let half = libm::sqrt(0.5);
        let inv_sqrt = |n: usize| 1.0 / libm::sqrt(n as f64);
        let embed = normal_matrix(rng, config.vocab_size, config.d_model, half);
        let pos_embed = normal_matrix(rng, config.seq_len, config.d_model, half);
        let (rows, cols) = config.stacked_shape();
        let stacked = normal_matrix(rng, rows, cols, inv_sqrt(config.d_model));
        let ffn_w1 = normal_matrix(rng, config.d_k, config.d_ff, inv_sqrt(config.d_k));
        let ffn_w2 = normal_matrix(rng, config.d_ff, config.d_model, inv_sqrt(config.d_ff));
        let out_proj = normal_matrix(rng, config.d_model, config.vocab_size, inv_sqrt(config.d_model));
        Self::from_parts(
            config,
            embed,
            pos_embed,
            AdaptedWeights::new(StackedAttentionWeights::from_stacked(stacked)?, None)?,
            ffn_w1,
            ffn_w2,
            out_proj,
        )
    }

    pub fn from_parts(
        config: ModelConfig,
        embed: Matrix,
        pos_embed: Matrix,
        attention: AdaptedWeights,
        ffn_w1: Matrix,
        ffn_w2: Matrix,
        out_proj: Matrix,
    ) -> Result<Self> {
        config.validate()?;
        let expect = [
            ("embed", embed.shape(), (config.vocab_size, config.d_model)),
            ("pos_embed", pos_embed.shape(), (config.seq_len, config.d_model)),
            ("attn.base", attention.base.stacked().shape(), config.stacked_shape()),
            ("ffn.w1", ffn_w1.shape(), (config.d_k, config.d_ff)),
            ("ffn.w2", ffn_w2.shape(), (config.d_ff, config.d_model)),
            ("out_proj", out_proj.shape(), (config.d_model, config.vocab_size)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Model(format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        Ok(Self {
            config,
            embed,
            pos_embed,
            attention,
            ffn_w1,
            ffn_w2,
            out_proj,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param(&self, b: ParamBlock) -> Option<&Matrix> {
        Some(match b {
            ParamBlock::Embed => &self.embed,
            ParamBlock::PosEmbed => &self.pos_embed,
            ParamBlock::AttnBase => self.attention.base.stacked(),
            ParamBlock::AdapterA => self.attention.adapter.as_ref()?.a(),
            ParamBlock::AdapterB => self.attention.adapter.as_ref()?.b(),
            ParamBlock::FfnW1 => &self.ffn_w1,
            ParamBlock::FfnW2 => &self.ffn_w2,
            ParamBlock::OutProj => &self.out_proj,
        })
    }

    pub fn param_mut(&mut self, b: ParamBlock) -> Option<&mut Matrix> {
        Some(match b {
            ParamBlock::Embed => &mut self.embed,
            ParamBlock::PosEmbed => &mut self.pos_embed,
            ParamBlock::AttnBase => self.attention.base.stacked_mut(),
            ParamBlock::AdapterA => self.attention.adapter.as_mut()?.a_mut(),
            ParamBlock::AdapterB => self.attention.adapter.as_mut()?.b_mut(),
            ParamBlock::FfnW1 => &mut self.ffn_w1,
            ParamBlock::FfnW2 => &mut self.ffn_w2,
            ParamBlock::OutProj => &mut self.out_proj,
        })
    }

    /// Present blocks in canonical order.
    pub fn blocks(&self) -> impl Iterator<Item = (ParamBlock, &Matrix)> {
        ParamBlock::ALL
            .into_iter()
            .filter_map(|b| self.param(b).map(|m| (b, m)))
    }

    /// Same model with the adapter folded into the base attention weight.
    pub fn merged(&self) -> Self {
        let mut m = self.clone();
        m.attention = AdaptedWeights {
            base: self.attention.merge_adapter(),
            adapter: None,
        };
        m
    }

    pub fn forward(&self, tokens: &[usize]) -> Result<Forward> {
        self.forward_batch(&[tokens])
    }

    /// Runs equal-length sequences as one batch. Row `n·len + t` of every
    /// activation belongs to sequence `n`, position `t`.
    pub fn forward_batch(&self, seqs: &[&[usize]]) -> Result<Forward> {
        let cfg = &self.config;
        let len = seqs.first().map_or(0, |s| s.len());
        if len == 0 {
            return Err(Error::Model("empty sequence".into()));
        }
        if len > cfg.seq_len {
            return Err(Error::SequenceTooLong { len, max: cfg.seq_len });
        }
        let batch = seqs.len();
        let rows = batch * len;
        let mut tokens = Vec::with_capacity(rows);
        for s in seqs {
            if s.len() != len {
                return Err(Error::Model(format!(
                    "batch mixes sequence lengths {len} and {}",
                    s.len()
                )));
            }
            for (position, &token) in s.iter().enumerate() {
                if token >= cfg.vocab_size {
                    return Err(Error::TokenOutOfRange {
                        position,
                        token,
                        vocab_size: cfg.vocab_size,
                    });
                }
                tokens.push(token);
            }
        }

        let d = cfg.d_model;
        let mut x = Matrix::zeros(rows, d);
        for (i, &tok) in tokens.iter().enumerate() {
            let t = i % len;
            for ((o, e), p) in x.row_mut(i).iter_mut().zip(self.embed.row(tok)).zip(self.pos_embed.row(t)) {
                *o = e + p;
            }
        }

        let w = self.attention.effective_weight();
        let w_q = w.row_slice(0, d)?;
        let w_k = w.row_slice(d, 2 * d)?;
        let w_v = w.row_slice(2 * d, 3 * d)?;
        let q = x.matmul(&w_q)?;
        let k = x.matmul(&w_k)?;
        let v = x.matmul(&w_v)?;

        let inv_sqrt_dk = 1.0 / libm::sqrt(cfg.d_k as f64);
        let mut attn = vec![0.0; batch * len * len];
        let mut h = Matrix::zeros(rows, cfg.d_k);
        for n in 0..batch {
            for t in 0..len {
                let row = n * len + t;
                let weights = &mut attn[row * len..row * len + len];
                let qt = q.row(row);
                let mut max = f64::NEG_INFINITY;
                for (j, wj) in weights.iter_mut().enumerate().take(t + 1) {
                    *wj = crate::linalg::dot(qt, k.row(n * len + j)) * inv_sqrt_dk;
                    max = max.max(*wj);
                }
                let mut sum = 0.0;
                for wj in weights.iter_mut().take(t + 1) {
                    *wj = libm::exp(*wj - max);
                    sum += *wj;
                }
                let hrow = h.row_mut(row);
                for (j, wj) in weights.iter_mut().enumerate().take(t + 1) {
                    *wj /= sum;
                    for (o, vv) in hrow.iter_mut().zip(v.row(n * len + j)) {
                        *o += *wj * vv;
                    }
                }
            }
        }

        let z1 = h.matmul(&self.ffn_w1)?;
        let act = Matrix::from_raw(z1.rows(), z1.cols(), z1.as_slice().iter().map(|z| gelu(*z)).collect());
        let mut y = act.matmul(&self.ffn_w2)?;
        y.add_scaled_in_place(1.0, &x)?;
        let logits = y.matmul(&self.out_proj)?;
        let mut probs = logits.clone();
        let mut log_norm = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = probs.row_mut(r);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
            let mut sum = 0.0;
            for p in row.iter_mut() {
                *p = libm::exp(*p - max);
                sum += *p;
            }
            for p in row.iter_mut() {
                *p /= sum;
            }
            log_norm.push(max + libm::log(sum));
        }

        Ok(Forward {
            batch,
            len,
            tokens,
            x,
            w,
            q,
            k,
            v,
            attn,
            h,
            z1,
            act,
            y,
            logits,
            probs,
            log_norm,
        })
    }

    /// Mean cross-entropy over the positions that carry a target, and the
    /// analytic gradients of every block in `trainable`.
    ///
    /// `targets` has one entry per row of the forward batch. `B` is left out
    /// when the adapter's `B` is frozen, whatever `trainable` says.
    pub fn backward(&self, fwd: &Forward, targets: &[Option<usize>], trainable: BlockSet) -> Result<(f64, GradientSet)> {
        let cfg = &self.config;
        let rows = fwd.batch * fwd.len;
        if fwd.x.cols() != cfg.d_model || fwd.probs.cols() != cfg.vocab_size || fwd.w.shape() != cfg.stacked_shape() {
            return Err(Error::CacheMismatch(format!(
                "cache has d_model {} vocab {}, model has {} and {}",
                fwd.x.cols(),
                fwd.probs.cols(),
                cfg.d_model,
                cfg.vocab_size
            )));
        }
        if targets.len() != rows {
            return Err(Error::CacheMismatch(format!(
                "{} targets for {} positions",
                targets.len(),
                rows
            )));
        }
        let mut trainable = trainable;
        match &self.attention.adapter {
            None => {
                if trainable.contains(ParamBlock::AdapterA) || trainable.contains(ParamBlock::AdapterB) {
                    return Err(Error::Model("adapter gradients requested but no adapter attached".into()));
                }
            }
            Some(a) if a.b_frozen() => trainable = trainable.without(ParamBlock::AdapterB),
            Some(_) => {}
        }

        let (sum_ce, count) = fwd.cross_entropy_sum(targets)?;
        if count == 0 {
            return Err(Error::Model("no target positions".into()));
        }
        let inv_count = 1.0 / count as f64;
        let loss = sum_ce * inv_count;

        let mut grads = GradientSet::default();
        let mut dlogits = Matrix::zeros(rows, cfg.vocab_size);
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let drow = dlogits.row_mut(r);
                for (d, p) in drow.iter_mut().zip(fwd.probs.row(r)) {
                    *d = p * inv_count;
                }
                drow[t] -= inv_count;
            }
        }
        if trainable.contains(ParamBlock::OutProj) {
            grads.set(ParamBlock::OutProj, fwd.y.t_matmul(&dlogits)?);
        }

        let needs_attention = [
            ParamBlock::Embed,
            ParamBlock::PosEmbed,
            ParamBlock::AttnBase,
            ParamBlock::AdapterA,
            ParamBlock::AdapterB,
        ]
        .into_iter()
        .any(|b| trainable.contains(b));
        let needs_ffn = needs_attention || trainable.contains(ParamBlock::FfnW1) || trainable.contains(ParamBlock::FfnW2);
        if !needs_ffn {
            return Ok((loss, grads));
        }

        let dy = dlogits.matmul_t(&self.out_proj)?;
        if trainable.contains(ParamBlock::FfnW2) {
            grads.set(ParamBlock::FfnW2, fwd.act.t_matmul(&dy)?);
        }
        let mut dz1 = dy.matmul_t(&self.ffn_w2)?;
        for (g, z) in dz1.as_mut_slice().iter_mut().zip(fwd.z1.as_slice()) {
            *g *= gelu_grad(*z);
        }
        if trainable.contains(ParamBlock::FfnW1) {
            grads.set(ParamBlock::FfnW1, fwd.h.t_matmul(&dz1)?);
        }
        if !needs_attention {
            return Ok((loss, grads));
        }

        let dh = dz1.matmul_t(&self.ffn_w1)?;
        let len = fwd.len;
        let dk = cfg.d_k;
        let inv_sqrt_dk = 1.0 / libm::sqrt(dk as f64);
        let mut dq = Matrix::zeros(rows, dk);
        let mut dkm = Matrix::zeros(rows, dk);
        let mut dv = Matrix::zeros(rows, dk);
        let mut dweights = vec![0.0; len];
        for n in 0..fwd.batch {
            for t in 0..len {
                let row = n * len + t;
                let weights = &fwd.attn[row * len..row * len + len];
                let dht = dh.row(row);
                let mut inner = 0.0;
                for j in 0..=t {
                    let src = n * len + j;
                    dweights[j] = crate::linalg::dot(dht, fwd.v.row(src));
                    inner += weights[j] * dweights[j];
                    for (o, g) in dv.row_mut(src).iter_mut().zip(dht) {
                        *o += weights[j] * g;
                    }
                }
                for j in 0..=t {
                    let src = n * len + j;
                    let ds = weights[j] * (dweights[j] - inner) * inv_sqrt_dk;
                    if ds == 0.0 {
                        continue;
                    }
                    for (o, kk) in dq.row_mut(row).iter_mut().zip(fwd.k.row(src)) {
                        *o += ds * kk;
                    }
                    for (o, qq) in dkm.row_mut(src).iter_mut().zip(fwd.q.row(row)) {
                        *o += ds * qq;
                    }
                }
            }
        }

        if [ParamBlock::AttnBase, ParamBlock::AdapterA, ParamBlock::AdapterB]
            .into_iter()
            .any(|b| trainable.contains(b))
        {
            let g = Matrix::vstack(&[&fwd.x.t_matmul(&dq)?, &fwd.x.t_matmul(&dkm)?, &fwd.x.t_matmul(&dv)?])?;
            if let Some(ad) = &self.attention.adapter {
                let s = ad.scale();
                if trainable.contains(ParamBlock::AdapterA) {
                    grads.set(ParamBlock::AdapterA, g.matmul_t(ad.b())?.scale(s));
                }
                if trainable.contains(ParamBlock::AdapterB) {
                    grads.set(ParamBlock::AdapterB, ad.a().t_matmul(&g)?.scale(s));
                }
            }
            if trainable.contains(ParamBlock::AttnBase) {
                grads.set(ParamBlock::AttnBase, g);
            }
        }

        if trainable.contains(ParamBlock::Embed) || trainable.contains(ParamBlock::PosEmbed) {
            let d = cfg.d_model;
            let mut dx = dy;
            dx.add_scaled_in_place(1.0, &dq.matmul_t(&fwd.w.row_slice(0, d)?)?)?;
            dx.add_scaled_in_place(1.0, &dkm.matmul_t(&fwd.w.row_slice(d, 2 * d)?)?)?;
            dx.add_scaled_in_place(1.0, &dv.matmul_t(&fwd.w.row_slice(2 * d, 3 * d)?)?)?;
            if trainable.contains(ParamBlock::Embed) {
                let mut de = Matrix::zeros(cfg.vocab_size, d);
                for (r, &tok) in fwd.tokens.iter().enumerate() {
                    for (o, g) in de.row_mut(tok).iter_mut().zip(dx.row(r)) {
                        *o += g;
                    }
                }
                grads.set(ParamBlock::Embed, de);
            }
            if trainable.contains(ParamBlock::PosEmbed) {
                let mut dp = Matrix::zeros(cfg.seq_len, d);
                for r in 0..rows {
                    for (o, g) in dp.row_mut(r % len).iter_mut().zip(dx.row(r)) {
                        *o += g;
                    }
                }
                grads.set(ParamBlock::PosEmbed, dp);
            }
        }
        Ok((loss, grads))
    }

    /// Mean cross-entropy with no gradients.
    pub fn loss(&self, seqs: &[&[usize]], targets: &[Option<usize>]) -> Result<f64> {
        let fwd = self.forward_batch(seqs)?;
        let (sum, count) = fwd.cross_entropy_sum(targets)?;
        if count == 0 {
            return Err(Error::Model("no target positions".into()));
        }
        Ok(sum / count as f64)
    }
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    batch: usize,
    len: usize,
    tokens: Vec<usize>,
    x: Matrix,
    w: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: Vec<f64>,
    h: Matrix,
    z1: Matrix,
    act: Matrix,
    y: Matrix,
    logits: Matrix,
    probs: Matrix,
    log_norm: Vec<f64>,
}

impl Forward {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn seq_len(&self) -> usize {
        self.len
    }

    /// One probability row per position, `batch·len × vocab`.
    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn logits(&self) -> &Matrix {
        &self.logits
    }

    /// Attention weights of sequence `n`, position `t` over positions `0..len`.
    pub fn attention_row(&self, n: usize, t: usize) -> &[f64] {
        let row = n * self.len + t;
        &self.attn[row * self.len..(row + 1) * self.len]
    }

    /// Most probable token at a row, lowest index on ties.
    pub fn argmax(&self, row: usize) -> usize {
        let p = self.probs.row(row);
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        best
    }

    /// Summed cross-entropy and the number of targeted rows.
    pub fn cross_entropy_sum(&self, targets: &[Option<usize>]) -> Result<(f64, usize)> {
        if targets.len() != self.probs.rows() {
            return Err(Error::CacheMismatch(format!(
                "{} targets for {} positions",
                targets.len(),
                self.probs.rows()
            )));
        }
        let vocab = self.probs.cols();
        let mut sum = 0.0;
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                if t >= vocab {
                    return Err(Error::TokenOutOfRange {
                        position: r,
                        token: t,
                        vocab_size: vocab,
                    });
                }
                sum += self.log_norm[r] - self.logits.get(r, t);
                count += 1;
            }
        }
        Ok((sum, count))
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + libm::tanh(GELU_C * (z + GELU_A * z * z * z)))
}

#[inline]
fn gelu_grad(z: f64) -> f64 {
    let t = libm::tanh(GELU_C * (z + GELU_A * z * z * z));
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z)
}

/// Splits a stacked `[W_Q; W_K; W_V]` into its three equal row blocks.
pub fn split_heads(w: &Matrix) -> Result<(Matrix, Matrix, Matrix)> {
    let s = StackedAttentionWeights::from_stacked(w.clone())?;
    Ok((s.w_q(), s.w_k(), s.w_v()))
}
