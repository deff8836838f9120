use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, NeuralError, Pooling};
use crate::baselines::derive_seed;
use crate::corpus::Label;
use crate::textproc::EncodedPair;

const LN_EPS: f64 = 1e-5;

pub trait Scalar:
    Float + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Debug + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
fn c<T: Scalar>(x: f64) -> T {
    T::from(x).expect("constant representable")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Matrix,
    Bias,
    Gain,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub kind: ParamKind,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct LayerIdx {
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    bo: usize,
    ln1_g: usize,
    ln1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    ln2_g: usize,
    ln2_b: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Index {
    emb: usize,
    layers: Vec<LayerIdx>,
    head_w: usize,
    head_b: usize,
    total: usize,
}

/// Total parameter count for a validated config, without allocating.
pub fn param_count(cfg: &ModelConfig) -> Option<usize> {
    let d = cfg.d_model;
    let f = cfg.d_ff;
    let per_layer = 4usize.checked_mul(d.checked_mul(d)?)?
        + 6 * d
        + 2usize.checked_mul(d.checked_mul(f)?)?
        + f;
    cfg.vocab_size
        .checked_mul(d)?
        .checked_add(per_layer.checked_mul(cfg.n_layers)?)?
        .checked_add(2 * d + 2)
}

fn build_layout(cfg: &ModelConfig) -> (Vec<ParamInfo>, Index) {
    let (d, f) = (cfg.d_model, cfg.d_ff);
    let mut infos = Vec::new();
    let mut offset = 0usize;
    let mut push = |name: String, shape: Vec<usize>, kind: ParamKind| {
        let at = offset;
        offset += shape.iter().product::<usize>();
        infos.push(ParamInfo { name, shape, offset: at, kind });
        at
    };
    let emb = push("embedding".into(), vec![cfg.vocab_size, d], ParamKind::Matrix);
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let n = |s: &str| format!("layers.{l}.{s}");
        layers.push(LayerIdx {
            wq: push(n("attn.wq"), vec![d, d], ParamKind::Matrix),
            wk: push(n("attn.wk"), vec![d, d], ParamKind::Matrix),
            wv: push(n("attn.wv"), vec![d, d], ParamKind::Matrix),
            wo: push(n("attn.wo"), vec![d, d], ParamKind::Matrix),
            bo: push(n("attn.bo"), vec![d], ParamKind::Bias),
            ln1_g: push(n("ln1.gain"), vec![d], ParamKind::Gain),
            ln1_b: push(n("ln1.bias"), vec![d], ParamKind::Bias),
            w1: push(n("ffn.w1"), vec![d, f], ParamKind::Matrix),
            b1: push(n("ffn.b1"), vec![f], ParamKind::Bias),
            w2: push(n("ffn.w2"), vec![f, d], ParamKind::Matrix),
            b2: push(n("ffn.b2"), vec![d], ParamKind::Bias),
            ln2_g: push(n("ln2.gain"), vec![d], ParamKind::Gain),
            ln2_b: push(n("ln2.bias"), vec![d], ParamKind::Bias),
        });
    }
    let head_w = push("head.w".into(), vec![d, 2], ParamKind::Matrix);
    let head_b = push("head.b".into(), vec![2], ParamKind::Bias);
    let total = offset;
    (
        infos,
        Index {
            emb,
            layers,
            head_w,
            head_b,
            total,
        },
    )
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(...)`.
pub fn positional_encoding(max_len: usize, d_model: usize) -> Vec<f64> {
    let mut pe = vec![0.0; max_len * d_model];
    for pos in 0..max_len {
        for j in 0..d_model {
            let i2 = (j - j % 2) as f64;
            let angle = pos as f64 / 10000f64.powf(i2 / d_model as f64);
            pe[pos * d_model + j] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

/// Encoder-only transformer with a two-class head. Parameters live in one
/// flat buffer whose layout is given by [`TransformerClassifier::layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerClassifier<T: Scalar = f32> {
    config: ModelConfig,
    layout: Vec<ParamInfo>,
    index: Index,
    params: Vec<T>,
    pe: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOutput<T> {
    pub logits: [T; 2],
    pub probs: [T; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuralPrediction {
    pub label: Label,
    /// Probability of the winning class.
    pub probability: f64,
    /// Class probabilities in class order.
    pub probs: [f64; 2],
}

impl NeuralPrediction {
    pub(crate) fn from_probs(probs: [f64; 2]) -> Self {
        // Exact ties go to NotCoachable.
        let label = if probs[1] > probs[0] { Label::Coachable } else { Label::NotCoachable };
        NeuralPrediction {
            label,
            probability: probs[label.index()],
            probs,
        }
    }
}

/// Attention weights for the real (mask 1) query positions of one input.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    /// Sequence positions of the real tokens, in order.
    pub positions: Vec<usize>,
    /// `[layer][head][query][key]` with one row per real query and `max_len`
    /// keys; PAD keys carry weight exactly zero.
    pub weights: Vec<Vec<Vec<Vec<f64>>>>,
}

struct LnCache<T> {
    xhat: Vec<T>,
    inv: Vec<T>,
}

struct LayerCache<T> {
    x: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    attn: Vec<T>,
    ctx: Vec<T>,
    drop_attn: Option<Vec<T>>,
    ln1: LnCache<T>,
    y: Vec<T>,
    f1: Vec<T>,
    g: Vec<T>,
    drop_ffn: Option<Vec<T>>,
    ln2: LnCache<T>,
}

struct Cache<T> {
    ids: Vec<u32>,
    drop_emb: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    pooled: Vec<T>,
    n: usize,
}

struct Dropout {
    rng: ChaCha8Rng,
    p: f64,
}

impl Dropout {
    fn mask<T: Scalar>(&mut self, len: usize) -> Option<Vec<T>> {
        if self.p == 0.0 {
            return None;
        }
        let keep = c::<T>(1.0 / (1.0 - self.p));
        Some(
            (0..len)
                .map(|_| if self.rng.gen::<f64>() < self.p { T::zero() } else { keep })
                .collect(),
        )
    }
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &s) in x.iter_mut().zip(m) {
            *v *= s;
        }
    }
}

/// `a (m x k) * b (k x n)`.
fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for (row, arow) in out.chunks_exact_mut(n).zip(a.chunks_exact(k)).take(m) {
        for (&av, brow) in arow.iter().zip(b.chunks_exact(n)) {
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out (k x n) += a^T * g` with `a (m x k)` and `g (m x n)`.
fn acc_at_b<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for (arow, grow) in a.chunks_exact(k).zip(g.chunks_exact(n)).take(m) {
        for (&av, orow) in arow.iter().zip(out.chunks_exact_mut(n)) {
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

/// `g (m x n) * b^T` with `b (k x n)`, giving `m x k`.
fn mul_bt<T: Scalar>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    for (orow, grow) in out.chunks_exact_mut(k).zip(g.chunks_exact(n)).take(m) {
        for (o, brow) in orow.iter_mut().zip(b.chunks_exact(n)) {
            *o = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    out
}

fn add_bias<T: Scalar>(x: &mut [T], bias: &[T]) {
    for row in x.chunks_exact_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

fn acc_col_sums<T: Scalar>(g: &[T], out: &mut [T]) {
    for row in g.chunks_exact(out.len()) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T]) -> (Vec<T>, LnCache<T>) {
    let d = gain.len();
    let n = x.len() / d;
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv = Vec::with_capacity(n);
    let dt = c::<T>(d as f64);
    for ((row, yrow), hrow) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)).zip(xhat.chunks_exact_mut(d)) {
        let mean = row.iter().copied().sum::<T>() / dt;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dt;
        let r = T::one() / (var + c(LN_EPS)).sqrt();
        for j in 0..d {
            hrow[j] = (row[j] - mean) * r;
            yrow[j] = gain[j] * hrow[j] + bias[j];
        }
        inv.push(r);
    }
    (y, LnCache { xhat, inv })
}

fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LnCache<T>,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let d = gain.len();
    let dt = c::<T>(d as f64);
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); d];
    for (((dyrow, hrow), dxrow), &r) in dy
        .chunks_exact(d)
        .zip(cache.xhat.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .zip(&cache.inv)
    {
        for j in 0..d {
            dxhat[j] = dyrow[j] * gain[j];
            dgain[j] += dyrow[j] * hrow[j];
            dbias[j] += dyrow[j];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / dt;
        let mean_dh = dxhat.iter().zip(hrow).map(|(&a, &b)| a * b).sum::<T>() / dt;
        for j in 0..d {
            dxrow[j] = r * (dxhat[j] - mean_d - hrow[j] * mean_dh);
        }
    }
    dx
}

const GELU_K: f64 = 0.044715;

fn gelu<T: Scalar>(x: T) -> T {
    let s = c::<T>((2.0 / std::f64::consts::PI).sqrt());
    let half = c::<T>(0.5);
    half * x * (T::one() + (s * (x + c::<T>(GELU_K) * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let s = c::<T>((2.0 / std::f64::consts::PI).sqrt());
    let half = c::<T>(0.5);
    let k = c::<T>(GELU_K);
    let t = (s * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * s * (T::one() + c::<T>(3.0) * k * x * x)
}

fn softmax2<T: Scalar>(logits: [T; 2]) -> [T; 2] {
    let m = logits[0].max(logits[1]);
    let e = [(logits[0] - m).exp(), (logits[1] - m).exp()];
    let z = e[0] + e[1];
    [e[0] / z, e[1] / z]
}

impl<T: Scalar> TransformerClassifier<T> {
    /// Seeded uniform initialization in `[-1/sqrt(d), 1/sqrt(d)]` for every
    /// matrix; biases zero and layer-norm gains one.
    pub fn init(config: ModelConfig) -> Result<Self, NeuralError> {
        config.validate()?;
        let (layout, index) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bound = 1.0 / (config.d_model as f64).sqrt();
        let mut params = Vec::with_capacity(index.total);
        for info in &layout {
            let len = info.len();
            match info.kind {
                ParamKind::Matrix => params.extend((0..len).map(|_| c::<T>(rng.gen_range(-bound..=bound)))),
                ParamKind::Bias => params.extend(std::iter::repeat(T::zero()).take(len)),
                ParamKind::Gain => params.extend(std::iter::repeat(T::one()).take(len)),
            }
        }
        let pe = positional_encoding(config.max_len, config.d_model).into_iter().map(c).collect();
        Ok(Self {
            config,
            layout,
            index,
            params,
            pe,
        })
    }

    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self, NeuralError> {
        config.validate()?;
        let expected = param_count(&config).ok_or_else(|| NeuralError::InvalidConfig("model too large".into()))?;
        if params.len() != expected {
            return Err(NeuralError::ShapeMismatch(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(NeuralError::Format("non-finite parameter".into()));
        }
        let (layout, index) = build_layout(&config);
        let pe = positional_encoding(config.max_len, config.d_model).into_iter().map(c).collect();
        Ok(Self {
            config,
            layout,
            index,
            params,
            pe,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &[ParamInfo] {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn param(&self, name: &str) -> Option<&[T]> {
        self.layout
            .iter()
            .find(|i| i.name == name)
            .map(|i| &self.params[i.offset..i.offset + i.len()])
    }

    pub fn positional_table(&self) -> &[T] {
        &self.pe
    }

    pub fn cast<U: Scalar>(&self) -> TransformerClassifier<U> {
        TransformerClassifier {
            config: self.config.clone(),
            layout: self.layout.clone(),
            index: self.index.clone(),
            params: self.params.iter().map(|&p| U::from(p).expect("finite parameter")).collect(),
            pe: self.pe.iter().map(|&p| U::from(p).expect("finite encoding")).collect(),
        }
    }

    fn slice(&self, off: usize, len: usize) -> &[T] {
        &self.params[off..off + len]
    }

    /// Real token ids and their positions.
    fn real_tokens(&self, pair: &EncodedPair) -> Result<(Vec<u32>, Vec<usize>), NeuralError> {
        let l = self.config.max_len;
        if pair.input_ids.len() != l || pair.attention_mask.len() != l {
            return Err(NeuralError::ShapeMismatch(format!(
                "expected sequences of length {l}, got ids {} and mask {}",
                pair.input_ids.len(),
                pair.attention_mask.len()
            )));
        }
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        for (pos, (&id, &m)) in pair.input_ids.iter().zip(&pair.attention_mask).enumerate() {
            match m {
                0 => {}
                1 => {
                    if id as usize >= self.config.vocab_size {
                        return Err(NeuralError::ShapeMismatch(format!(
                            "token id {id} outside vocabulary of {}",
                            self.config.vocab_size
                        )));
                    }
                    ids.push(id);
                    positions.push(pos);
                }
                other => {
                    return Err(NeuralError::ShapeMismatch(format!("mask value {other} is not 0 or 1")));
                }
            }
        }
        if ids.is_empty() {
            return Err(NeuralError::ShapeMismatch("input has no real tokens".into()));
        }
        Ok((ids, positions))
    }

    /// Multi-head attention over the real positions only; PAD keys would
    /// receive weight `exp(-inf) = 0`, so dropping them is exact.
    fn attention(&self, q: &[T], k: &[T], v: &[T], n: usize) -> (Vec<T>, Vec<T>) {
        let d = self.config.d_model;
        let h = self.config.n_heads;
        let dh = d / h;
        let scale = c::<T>(1.0 / (dh as f64).sqrt());
        let mut attn = vec![T::zero(); h * n * n];
        let mut ctx = vec![T::zero(); n * d];
        for head in 0..h {
            let off = head * dh;
            for i in 0..n {
                let qi = &q[i * d + off..i * d + off + dh];
                let row = &mut attn[(head * n + i) * n..(head * n + i + 1) * n];
                let mut max = T::neg_infinity();
                for (j, s) in row.iter_mut().enumerate() {
                    let kj = &k[j * d + off..j * d + off + dh];
                    *s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                    max = max.max(*s);
                }
                let mut z = T::zero();
                for s in row.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                for s in row.iter_mut() {
                    *s /= z;
                }
                let out = &mut ctx[i * d + off..i * d + off + dh];
                for (j, &a) in row.iter().enumerate() {
                    let vj = &v[j * d + off..j * d + off + dh];
                    for (o, &vv) in out.iter_mut().zip(vj) {
                        *o += a * vv;
                    }
                }
            }
        }
        (attn, ctx)
    }

    fn forward_cached(
        &self,
        ids: &[u32],
        positions: &[usize],
        mut dropout: Option<&mut Dropout>,
    ) -> ([T; 2], Cache<T>) {
        let cfg = &self.config;
        let (d, f, n) = (cfg.d_model, cfg.d_ff, ids.len());
        let emb_scale = c::<T>((d as f64).sqrt());
        let mut x = vec![T::zero(); n * d];
        for (i, (&id, &pos)) in ids.iter().zip(positions).enumerate() {
            let e = self.slice(self.index.emb + id as usize * d, d);
            let p = &self.pe[pos * d..(pos + 1) * d];
            for j in 0..d {
                x[i * d + j] = e[j] * emb_scale + p[j];
            }
        }
        let drop_emb = dropout.as_deref_mut().and_then(|dr| dr.mask(n * d));
        apply_mask(&mut x, &drop_emb);

        let mut layers = Vec::with_capacity(cfg.n_layers);
        for li in &self.index.layers {
            let q = matmul(&x, self.slice(li.wq, d * d), n, d, d);
            let k = matmul(&x, self.slice(li.wk, d * d), n, d, d);
            let v = matmul(&x, self.slice(li.wv, d * d), n, d, d);
            let (attn, ctx) = self.attention(&q, &k, &v, n);
            let mut ao = matmul(&ctx, self.slice(li.wo, d * d), n, d, d);
            add_bias(&mut ao, self.slice(li.bo, d));
            let drop_attn = dropout.as_deref_mut().and_then(|dr| dr.mask(n * d));
            apply_mask(&mut ao, &drop_attn);
            let r1: Vec<T> = x.iter().zip(&ao).map(|(&a, &b)| a + b).collect();
            let (y, ln1) = layer_norm(&r1, self.slice(li.ln1_g, d), self.slice(li.ln1_b, d));
            let mut f1 = matmul(&y, self.slice(li.w1, d * f), n, d, f);
            add_bias(&mut f1, self.slice(li.b1, f));
            let g: Vec<T> = f1.iter().map(|&v| gelu(v)).collect();
            let mut f2 = matmul(&g, self.slice(li.w2, f * d), n, f, d);
            add_bias(&mut f2, self.slice(li.b2, d));
            let drop_ffn = dropout.as_deref_mut().and_then(|dr| dr.mask(n * d));
            apply_mask(&mut f2, &drop_ffn);
            let r2: Vec<T> = y.iter().zip(&f2).map(|(&a, &b)| a + b).collect();
            let (out, ln2) = layer_norm(&r2, self.slice(li.ln2_g, d), self.slice(li.ln2_b, d));
            layers.push(LayerCache {
                x: std::mem::replace(&mut x, out),
                q,
                k,
                v,
                attn,
                ctx,
                drop_attn,
                ln1,
                y,
                f1,
                g,
                drop_ffn,
                ln2,
            });
        }

        let pooled: Vec<T> = match cfg.pooling {
            Pooling::Mean => {
                let nt = c::<T>(n as f64);
                (0..d).map(|j| (0..n).map(|i| x[i * d + j]).sum::<T>() / nt).collect()
            }
            Pooling::First => x[..d].to_vec(),
        };
        let hw = self.slice(self.index.head_w, 2 * d);
        let hb = self.slice(self.index.head_b, 2);
        let mut logits = [hb[0], hb[1]];
        for (j, &p) in pooled.iter().enumerate() {
            logits[0] += p * hw[j * 2];
            logits[1] += p * hw[j * 2 + 1];
        }
        (
            logits,
            Cache {
                ids: ids.to_vec(),
                drop_emb,
                layers,
                pooled,
                n,
            },
        )
    }

    /// Accumulates `dL/dtheta` into `grads` given `dL/dlogits`.
    fn backward(&self, cache: &Cache<T>, dlogits: [T; 2], grads: &mut [T]) {
        let cfg = &self.config;
        let (d, f, n, h) = (cfg.d_model, cfg.d_ff, cache.n, cfg.n_heads);
        let dh = d / h;
        let scale = c::<T>(1.0 / (dh as f64).sqrt());

        let hw_off = self.index.head_w;
        let hw = self.slice(hw_off, 2 * d);
        let mut dpooled = vec![T::zero(); d];
        for j in 0..d {
            grads[hw_off + j * 2] += cache.pooled[j] * dlogits[0];
            grads[hw_off + j * 2 + 1] += cache.pooled[j] * dlogits[1];
            dpooled[j] = hw[j * 2] * dlogits[0] + hw[j * 2 + 1] * dlogits[1];
        }
        grads[self.index.head_b] += dlogits[0];
        grads[self.index.head_b + 1] += dlogits[1];

        let mut dx = vec![T::zero(); n * d];
        match cfg.pooling {
            Pooling::Mean => {
                let nt = c::<T>(n as f64);
                for row in dx.chunks_exact_mut(d) {
                    for (o, &g) in row.iter_mut().zip(&dpooled) {
                        *o = g / nt;
                    }
                }
            }
            Pooling::First => dx[..d].copy_from_slice(&dpooled),
        }

        for (li, lc) in self.index.layers.iter().zip(&cache.layers).rev() {
            let (dg2, db2) = (li.ln2_g, li.ln2_b);
            let mut dgain = vec![T::zero(); d];
            let mut dbias = vec![T::zero(); d];
            let dr2 = layer_norm_backward(&dx, &lc.ln2, self.slice(dg2, d), &mut dgain, &mut dbias);
            add_into(&mut grads[dg2..dg2 + d], &dgain);
            add_into(&mut grads[db2..db2 + d], &dbias);

            let mut dy = dr2.clone();
            let mut df2 = dr2;
            apply_mask(&mut df2, &lc.drop_ffn);
            acc_at_b(&lc.g, &df2, n, f, d, &mut grads[li.w2..li.w2 + f * d]);
            acc_col_sums(&df2, &mut grads[li.b2..li.b2 + d]);
            let dg = mul_bt(&df2, self.slice(li.w2, f * d), n, f, d);
            let df1: Vec<T> = dg.iter().zip(&lc.f1).map(|(&g, &x)| g * gelu_grad(x)).collect();
            acc_at_b(&lc.y, &df1, n, d, f, &mut grads[li.w1..li.w1 + d * f]);
            acc_col_sums(&df1, &mut grads[li.b1..li.b1 + f]);
            add_into(&mut dy, &mul_bt(&df1, self.slice(li.w1, d * f), n, d, f));

            let mut dgain = vec![T::zero(); d];
            let mut dbias = vec![T::zero(); d];
            let dr1 = layer_norm_backward(&dy, &lc.ln1, self.slice(li.ln1_g, d), &mut dgain, &mut dbias);
            add_into(&mut grads[li.ln1_g..li.ln1_g + d], &dgain);
            add_into(&mut grads[li.ln1_b..li.ln1_b + d], &dbias);

            let mut dxl = dr1.clone();
            let mut dao = dr1;
            apply_mask(&mut dao, &lc.drop_attn);
            acc_at_b(&lc.ctx, &dao, n, d, d, &mut grads[li.wo..li.wo + d * d]);
            acc_col_sums(&dao, &mut grads[li.bo..li.bo + d]);
            let dctx = mul_bt(&dao, self.slice(li.wo, d * d), n, d, d);

            let mut dq = vec![T::zero(); n * d];
            let mut dk = vec![T::zero(); n * d];
            let mut dv = vec![T::zero(); n * d];
            let mut da = vec![T::zero(); n];
            for head in 0..h {
                let off = head * dh;
                for i in 0..n {
                    let arow = &lc.attn[(head * n + i) * n..(head * n + i + 1) * n];
                    let dci = &dctx[i * d + off..i * d + off + dh];
                    for j in 0..n {
                        let vj = &lc.v[j * d + off..j * d + off + dh];
                        da[j] = dci.iter().zip(vj).map(|(&a, &b)| a * b).sum();
                        let dvj = &mut dv[j * d + off..j * d + off + dh];
                        for (o, &g) in dvj.iter_mut().zip(dci) {
                            *o += arow[j] * g;
                        }
                    }
                    let dot: T = da.iter().zip(arow).map(|(&a, &b)| a * b).sum();
                    let qi = &lc.q[i * d + off..i * d + off + dh];
                    for j in 0..n {
                        let ds = arow[j] * (da[j] - dot) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        let kj = &lc.k[j * d + off..j * d + off + dh];
                        let dqi = &mut dq[i * d + off..i * d + off + dh];
                        for (o, &kv) in dqi.iter_mut().zip(kj) {
                            *o += ds * kv;
                        }
                        let dkj = &mut dk[j * d + off..j * d + off + dh];
                        for (o, &qv) in dkj.iter_mut().zip(qi) {
                            *o += ds * qv;
                        }
                    }
                }
            }
            for (w, dm) in [(li.wq, &dq), (li.wk, &dk), (li.wv, &dv)] {
                acc_at_b(&lc.x, dm, n, d, d, &mut grads[w..w + d * d]);
                add_into(&mut dxl, &mul_bt(dm, self.slice(w, d * d), n, d, d));
            }
            dx = dxl;
        }

        apply_mask(&mut dx, &cache.drop_emb);
        let emb_scale = c::<T>((d as f64).sqrt());
        for (i, &id) in cache.ids.iter().enumerate() {
            let off = self.index.emb + id as usize * d;
            for j in 0..d {
                grads[off + j] += dx[i * d + j] * emb_scale;
            }
        }
    }

    /// Evaluation-mode logits and probabilities for one input.
    pub fn forward_one(&self, pair: &EncodedPair) -> Result<ForwardOutput<T>, NeuralError> {
        let (ids, positions) = self.real_tokens(pair)?;
        let (logits, _) = self.forward_cached(&ids, &positions, None);
        Ok(ForwardOutput {
            logits,
            probs: softmax2(logits),
        })
    }

    pub fn forward(&self, batch: &[EncodedPair]) -> Result<Vec<ForwardOutput<T>>, NeuralError> {
        batch.iter().map(|p| self.forward_one(p)).collect()
    }

    pub fn predict(&self, pair: &EncodedPair) -> Result<NeuralPrediction, NeuralError> {
        let out = self.forward_one(pair)?;
        let probs = out.probs.map(|p| p.to_f64().expect("finite probability"));
        Ok(NeuralPrediction::from_probs(probs))
    }

    /// Mean cross-entropy in evaluation mode.
    pub fn loss(&self, batch: &[EncodedPair]) -> Result<T, NeuralError> {
        Ok(self.loss_and_grad_inner(batch, None, false)?.0)
    }

    /// Mean cross-entropy and its gradient. Dropout is applied when a seed
    /// is given and the configured rate is positive.
    pub fn loss_and_grad(&self, batch: &[EncodedPair], dropout_seed: Option<u64>) -> Result<(T, Vec<T>), NeuralError> {
        self.loss_and_grad_inner(batch, dropout_seed, true)
    }

    fn loss_and_grad_inner(
        &self,
        batch: &[EncodedPair],
        dropout_seed: Option<u64>,
        want_grad: bool,
    ) -> Result<(T, Vec<T>), NeuralError> {
        if batch.is_empty() {
            return Err(NeuralError::EmptySplit("batch"));
        }
        let mut grads = if want_grad { vec![T::zero(); self.params.len()] } else { Vec::new() };
        let bt = c::<T>(batch.len() as f64);
        let mut total = T::zero();
        for (i, pair) in batch.iter().enumerate() {
            let label = pair.label.ok_or(NeuralError::MissingLabel)?;
            let (ids, positions) = self.real_tokens(pair)?;
            let mut dropout = dropout_seed.map(|s| Dropout {
                rng: ChaCha8Rng::seed_from_u64(derive_seed(s, i as u64)),
                p: self.config.dropout,
            });
            let (logits, cache) = self.forward_cached(&ids, &positions, dropout.as_mut());
            let m = logits[0].max(logits[1]);
            let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
            total += lse - logits[label.index()];
            if want_grad {
                let probs = softmax2(logits);
                let mut dl = [probs[0] / bt, probs[1] / bt];
                dl[label.index()] -= T::one() / bt;
                self.backward(&cache, dl, &mut grads);
            }
        }
        Ok((total / bt, grads))
    }

    /// Attention weights of every layer and head for one input.
    pub fn attention_weights(&self, pair: &EncodedPair) -> Result<AttentionMaps, NeuralError> {
        let (ids, positions) = self.real_tokens(pair)?;
        let (_, cache) = self.forward_cached(&ids, &positions, None);
        let (n, l, h) = (cache.n, self.config.max_len, self.config.n_heads);
        let weights = cache
            .layers
            .iter()
            .map(|lc| {
                (0..h)
                    .map(|head| {
                        (0..n)
                            .map(|i| {
                                let mut row = vec![0.0; l];
                                for (j, &pos) in positions.iter().enumerate() {
                                    row[pos] = lc.attn[(head * n + i) * n + j].to_f64().unwrap_or(f64::NAN);
                                }
                                row
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ok(AttentionMaps { positions, weights })
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
