//! Pre-norm encoder–decoder transformer with hand-written backward pass.
//!
//! Everything here works on a single example; batching, padding, and
//! parallelism live in [`super::batch`]. Matrices are dense row-major
//! `Vec<T>` buffers of `rows x cols`.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::{Attention, DecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear, ModelParameters};
use super::tensor::{matmul, Op, Real};

const LN_EPS: f64 = 1e-5;

/// Sinusoidal position table, `len x dim`.
pub struct Positions<T> {
    dim: usize,
    table: Vec<T>,
}

impl<T: Real> Positions<T> {
    pub fn new(len: usize, dim: usize) -> Self {
        let mut table = vec![T::zero(); len * dim];
        for pos in 0..len {
            for i in 0..dim {
                let exponent = (2 * (i / 2)) as f64 / dim as f64;
                let angle = pos as f64 / 10000f64.powf(exponent);
                let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
                table[pos * dim + i] = T::from_f64(v);
            }
        }
        Self { dim, table }
    }

    fn len(&self) -> usize {
        self.table.len() / self.dim
    }
}

/// Dropout source for one training example; `None` disables dropout.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

fn dropout_mask<T: Real>(drop: &mut Option<Dropout<'_>>, len: usize) -> Option<Vec<T>> {
    let d = drop.as_mut().filter(|d| d.rate > 0.0)?;
    let keep = T::from_f64(1.0 / (1.0 - d.rate));
    Some(
        (0..len)
            .map(|_| if d.rng.random::<f64>() < d.rate { T::zero() } else { keep })
            .collect(),
    )
}

fn apply_mask<T: Real>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.iter_mut().zip(m) {
            *v = *v * k;
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (a, &b) in dst.iter_mut().zip(src) {
        *a = *a + b;
    }
}

// ---------------------------------------------------------------- layer norm

struct NormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

fn norm_forward<T: Real>(p: &LayerNorm<T>, x: &[T], rows: usize) -> (Vec<T>, NormCache<T>) {
    let d = p.gain.len();
    let mut out = vec![T::zero(); rows * d];
    let mut xhat = vec![T::zero(); rows * d];
    let mut inv_std = vec![T::zero(); rows];
    let n = T::from_f64(d as f64);
    let eps = T::from_f64(LN_EPS);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = (var + eps).sqrt().recip();
        inv_std[r] = is;
        for i in 0..d {
            let h = (row[i] - mean) * is;
            xhat[r * d + i] = h;
            out[r * d + i] = h * p.gain.data[i] + p.bias.data[i];
        }
    }
    (out, NormCache { xhat, inv_std })
}

fn norm_backward<T: Real>(p: &LayerNorm<T>, g: &mut LayerNorm<T>, c: &NormCache<T>, dy: &[T]) -> Vec<T> {
    let d = p.gain.len();
    let rows = c.inv_std.len();
    let n = T::from_f64(d as f64);
    let mut dx = vec![T::zero(); rows * d];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for i in 0..d {
            let idx = r * d + i;
            g.gain.data[i] = g.gain.data[i] + dy[idx] * c.xhat[idx];
            g.bias.data[i] = g.bias.data[i] + dy[idx];
            dxhat[i] = dy[idx] * p.gain.data[i];
            mean_dxhat = mean_dxhat + dxhat[i];
            mean_dxhat_xhat = mean_dxhat_xhat + dxhat[i] * c.xhat[idx];
        }
        mean_dxhat = mean_dxhat / n;
        mean_dxhat_xhat = mean_dxhat_xhat / n;
        for i in 0..d {
            let idx = r * d + i;
            dx[idx] = c.inv_std[r] * (dxhat[i] - mean_dxhat - c.xhat[idx] * mean_dxhat_xhat);
        }
    }
    dx
}

// -------------------------------------------------------------------- linear

fn linear_forward<T: Real>(p: &Linear<T>, x: &[T], rows: usize) -> Vec<T> {
    let (i, o) = (p.input_dim(), p.output_dim());
    let mut y = Vec::with_capacity(rows * o);
    for _ in 0..rows {
        y.extend_from_slice(&p.bias.data);
    }
    matmul(x, Op::N, &p.weight.data, Op::N, &mut y, rows, i, o, true);
    y
}

/// Accumulates weight and bias gradients; returns `dx`.
fn linear_backward<T: Real>(p: &Linear<T>, g: &mut Linear<T>, x: &[T], dy: &[T], rows: usize) -> Vec<T> {
    let (i, o) = (p.input_dim(), p.output_dim());
    matmul(x, Op::T, dy, Op::N, &mut g.weight.data, i, rows, o, true);
    for r in 0..rows {
        add_into(&mut g.bias.data, &dy[r * o..(r + 1) * o]);
    }
    let mut dx = vec![T::zero(); rows * i];
    matmul(dy, Op::N, &p.weight.data, Op::T, &mut dx, rows, o, i, false);
    dx
}

// ----------------------------------------------------------------- attention

struct AttnCache<T> {
    xq: Vec<T>,
    xkv: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `heads x tq x tk`
    probs: Vec<T>,
    ctx: Vec<T>,
    tq: usize,
    tk: usize,
}

fn attn_forward<T: Real>(
    p: &Attention<T>,
    heads: usize,
    xq: &[T],
    tq: usize,
    xkv: &[T],
    tk: usize,
    causal: bool,
) -> (Vec<T>, AttnCache<T>) {
    let d = p.query.input_dim();
    let dh = d / heads;
    let q = linear_forward(&p.query, xq, tq);
    let k = linear_forward(&p.key, xkv, tk);
    let v = linear_forward(&p.value, xkv, tk);
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut probs = vec![T::zero(); heads * tq * tk];
    let mut ctx = vec![T::zero(); tq * d];
    let (ds, tks) = (d as isize, tk as isize);
    for h in 0..heads {
        let off = h * dh;
        let scores = &mut probs[h * tq * tk..(h + 1) * tq * tk];
        if tk > 0 {
            // scores = Q_h K_h^T * scale
            T::gemm(tq, dh, tk, scale, &q[off..], ds, 1, &k[off..], 1, ds, T::zero(), scores, tks, 1);
        }
        for i in 0..tq {
            let row = &mut scores[i * tk..(i + 1) * tk];
            let visible = if causal { (i + 1).min(tk) } else { tk };
            let max = row[..visible].iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for x in row[..visible].iter_mut() {
                *x = (*x - max).exp();
                sum = sum + *x;
            }
            for x in row[..visible].iter_mut() {
                *x = *x / sum;
            }
            row[visible..].iter_mut().for_each(|x| *x = T::zero());
        }
        if tk > 0 {
            T::gemm(tq, tk, dh, T::one(), scores, tks, 1, &v[off..], ds, 1, T::zero(), &mut ctx[off..], ds, 1);
        }
    }
    let out = linear_forward(&p.output, &ctx, tq);
    let cache = AttnCache {
        xq: xq.to_vec(),
        xkv: xkv.to_vec(),
        q,
        k,
        v,
        probs,
        ctx,
        tq,
        tk,
    };
    (out, cache)
}

/// Returns `(d_xq, d_xkv)`.
fn attn_backward<T: Real>(
    p: &Attention<T>,
    g: &mut Attention<T>,
    heads: usize,
    c: &AttnCache<T>,
    dout: &[T],
) -> (Vec<T>, Vec<T>) {
    let d = p.query.input_dim();
    let dh = d / heads;
    let (tq, tk) = (c.tq, c.tk);
    let scale = T::from_f64(1.0 / (dh as f64).sqrt());
    let dctx = linear_backward(&p.output, &mut g.output, &c.ctx, dout, tq);
    let mut dq = vec![T::zero(); tq * d];
    let mut dk = vec![T::zero(); tk * d];
    let mut dv = vec![T::zero(); tk * d];
    let mut dp = vec![T::zero(); tq * tk];
    let (ds, tks) = (d as isize, tk as isize);
    if tk > 0 {
        for h in 0..heads {
            let off = h * dh;
            let probs = &c.probs[h * tq * tk..(h + 1) * tq * tk];
            // dP = dctx_h V_h^T
            T::gemm(tq, dh, tk, T::one(), &dctx[off..], ds, 1, &c.v[off..], 1, ds, T::zero(), &mut dp, tks, 1);
            // dV_h = P^T dctx_h
            T::gemm(tk, tq, dh, T::one(), probs, 1, tks, &dctx[off..], ds, 1, T::zero(), &mut dv[off..], ds, 1);
            for i in 0..tq {
                let prow = &probs[i * tk..(i + 1) * tk];
                let drow = &mut dp[i * tk..(i + 1) * tk];
                let dot = prow.iter().zip(drow.iter()).map(|(&a, &b)| a * b).sum::<T>();
                for (dv_, &pv) in drow.iter_mut().zip(prow) {
                    *dv_ = pv * (*dv_ - dot);
                }
            }
            // dQ_h = dS K_h * scale ; dK_h = dS^T Q_h * scale
            T::gemm(tq, tk, dh, scale, &dp, tks, 1, &c.k[off..], ds, 1, T::zero(), &mut dq[off..], ds, 1);
            T::gemm(tk, tq, dh, scale, &dp, 1, tks, &c.q[off..], ds, 1, T::zero(), &mut dk[off..], ds, 1);
        }
    }
    let dxq = linear_backward(&p.query, &mut g.query, &c.xq, &dq, tq);
    let mut dxkv = linear_backward(&p.key, &mut g.key, &c.xkv, &dk, tk);
    let dxv = linear_backward(&p.value, &mut g.value, &c.xkv, &dv, tk);
    add_into(&mut dxkv, &dxv);
    (dxq, dxkv)
}

// -------------------------------------------------------------- feedforward

struct FfCache<T> {
    x: Vec<T>,
    hidden: Vec<T>,
}

fn ff_forward<T: Real>(p: &FeedForward<T>, x: &[T], rows: usize) -> (Vec<T>, FfCache<T>) {
    let mut hidden = linear_forward(&p.inner, x, rows);
    hidden.iter_mut().for_each(|h| *h = h.max(T::zero()));
    let out = linear_forward(&p.outer, &hidden, rows);
    (out, FfCache { x: x.to_vec(), hidden })
}

fn ff_backward<T: Real>(p: &FeedForward<T>, g: &mut FeedForward<T>, c: &FfCache<T>, dy: &[T]) -> Vec<T> {
    let rows = c.x.len() / p.inner.input_dim();
    let mut dh = linear_backward(&p.outer, &mut g.outer, &c.hidden, dy, rows);
    for (d, &h) in dh.iter_mut().zip(&c.hidden) {
        if h <= T::zero() {
            *d = T::zero();
        }
    }
    linear_backward(&p.inner, &mut g.inner, &c.x, &dh, rows)
}

// ------------------------------------------------------------------ encoder

fn embed<T: Real>(table: &[T], dim: usize, tokens: &[usize], pos: &Positions<T>) -> Vec<T> {
    assert!(tokens.len() <= pos.len(), "position table too short");
    let scale = T::from_f64((dim as f64).sqrt());
    let mut x = vec![T::zero(); tokens.len() * dim];
    for (t, &tok) in tokens.iter().enumerate() {
        let row = &table[tok * dim..(tok + 1) * dim];
        for i in 0..dim {
            x[t * dim + i] = row[i] * scale + pos.table[t * dim + i];
        }
    }
    x
}

fn embed_backward<T: Real>(grad_table: &mut [T], dim: usize, tokens: &[usize], dx: &[T]) {
    let scale = T::from_f64((dim as f64).sqrt());
    for (t, &tok) in tokens.iter().enumerate() {
        for i in 0..dim {
            grad_table[tok * dim + i] = grad_table[tok * dim + i] + dx[t * dim + i] * scale;
        }
    }
}

struct EncLayerCache<T> {
    attn_norm: NormCache<T>,
    attn: AttnCache<T>,
    attn_drop: Option<Vec<T>>,
    ff_norm: NormCache<T>,
    ff: FfCache<T>,
    ff_drop: Option<Vec<T>>,
}

pub struct EncoderCache<T> {
    tokens: Vec<usize>,
    embed_drop: Option<Vec<T>>,
    layers: Vec<EncLayerCache<T>>,
    norm: NormCache<T>,
}

pub struct Encoded<T> {
    pub output: Vec<T>,
    pub len: usize,
}

pub fn encode<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    pos: &Positions<T>,
    tokens: &[usize],
    mut drop: Option<Dropout<'_>>,
) -> (Encoded<T>, EncoderCache<T>) {
    let d = config.model_dim;
    let n = tokens.len();
    let mut x = embed(&params.source_embedding.data, d, tokens, pos);
    let embed_drop = dropout_mask(&mut drop, x.len());
    apply_mask(&mut x, &embed_drop);
    let mut layers = Vec::with_capacity(params.encoder.len());
    for layer in &params.encoder {
        let (h, attn_norm) = norm_forward(&layer.attn_norm, &x, n);
        let (mut a, attn) = attn_forward(&layer.self_attn, config.heads, &h, n, &h, n, false);
        let attn_drop = dropout_mask(&mut drop, a.len());
        apply_mask(&mut a, &attn_drop);
        add_into(&mut x, &a);
        let (h, ff_norm) = norm_forward(&layer.ff_norm, &x, n);
        let (mut f, ff) = ff_forward(&layer.ff, &h, n);
        let ff_drop = dropout_mask(&mut drop, f.len());
        apply_mask(&mut f, &ff_drop);
        add_into(&mut x, &f);
        layers.push(EncLayerCache {
            attn_norm,
            attn,
            attn_drop,
            ff_norm,
            ff,
            ff_drop,
        });
    }
    let (output, norm) = norm_forward(&params.encoder_norm, &x, n);
    let cache = EncoderCache {
        tokens: tokens.to_vec(),
        embed_drop,
        layers,
        norm,
    };
    (Encoded { output, len: n }, cache)
}

fn encoder_layer_backward<T: Real>(
    p: &EncoderLayer<T>,
    g: &mut EncoderLayer<T>,
    heads: usize,
    c: &EncLayerCache<T>,
    dx: &mut [T],
) {
    let mut df = dx.to_vec();
    apply_mask(&mut df, &c.ff_drop);
    let dh = ff_backward(&p.ff, &mut g.ff, &c.ff, &df);
    add_into(dx, &norm_backward(&p.ff_norm, &mut g.ff_norm, &c.ff_norm, &dh));
    let mut da = dx.to_vec();
    apply_mask(&mut da, &c.attn_drop);
    let (dq, dkv) = attn_backward(&p.self_attn, &mut g.self_attn, heads, &c.attn, &da);
    let mut dh = dq;
    add_into(&mut dh, &dkv);
    add_into(dx, &norm_backward(&p.attn_norm, &mut g.attn_norm, &c.attn_norm, &dh));
}

pub fn encode_backward<T: Real>(
    params: &ModelParameters<T>,
    grads: &mut ModelParameters<T>,
    config: &ModelConfig,
    cache: &EncoderCache<T>,
    d_output: &[T],
) {
    let mut dx = norm_backward(&params.encoder_norm, &mut grads.encoder_norm, &cache.norm, d_output);
    for (i, c) in cache.layers.iter().enumerate().rev() {
        encoder_layer_backward(&params.encoder[i], &mut grads.encoder[i], config.heads, c, &mut dx);
    }
    apply_mask(&mut dx, &cache.embed_drop);
    embed_backward(&mut grads.source_embedding.data, config.model_dim, &cache.tokens, &dx);
}

// ------------------------------------------------------------------ decoder

struct DecLayerCache<T> {
    self_norm: NormCache<T>,
    self_attn: AttnCache<T>,
    self_drop: Option<Vec<T>>,
    cross_norm: NormCache<T>,
    cross_attn: AttnCache<T>,
    cross_drop: Option<Vec<T>>,
    ff_norm: NormCache<T>,
    ff: FfCache<T>,
    ff_drop: Option<Vec<T>>,
}

pub struct DecoderCache<T> {
    tokens: Vec<usize>,
    embed_drop: Option<Vec<T>>,
    layers: Vec<DecLayerCache<T>>,
    norm: NormCache<T>,
    hidden: Vec<T>,
}

/// Returns logits `len x target_vocab`.
pub fn decode<T: Real>(
    params: &ModelParameters<T>,
    config: &ModelConfig,
    pos: &Positions<T>,
    memory: &Encoded<T>,
    tokens: &[usize],
    mut drop: Option<Dropout<'_>>,
) -> (Vec<T>, DecoderCache<T>) {
    let d = config.model_dim;
    let n = tokens.len();
    let mut x = embed(&params.target_embedding.data, d, tokens, pos);
    let embed_drop = dropout_mask(&mut drop, x.len());
    apply_mask(&mut x, &embed_drop);
    let mut layers = Vec::with_capacity(params.decoder.len());
    for layer in &params.decoder {
        let (h, self_norm) = norm_forward(&layer.self_norm, &x, n);
        let (mut a, self_attn) = attn_forward(&layer.self_attn, config.heads, &h, n, &h, n, true);
        let self_drop = dropout_mask(&mut drop, a.len());
        apply_mask(&mut a, &self_drop);
        add_into(&mut x, &a);
        let (h, cross_norm) = norm_forward(&layer.cross_norm, &x, n);
        let (mut a, cross_attn) =
            attn_forward(&layer.cross_attn, config.heads, &h, n, &memory.output, memory.len, false);
        let cross_drop = dropout_mask(&mut drop, a.len());
        apply_mask(&mut a, &cross_drop);
        add_into(&mut x, &a);
        let (h, ff_norm) = norm_forward(&layer.ff_norm, &x, n);
        let (mut f, ff) = ff_forward(&layer.ff, &h, n);
        let ff_drop = dropout_mask(&mut drop, f.len());
        apply_mask(&mut f, &ff_drop);
        add_into(&mut x, &f);
        layers.push(DecLayerCache {
            self_norm,
            self_attn,
            self_drop,
            cross_norm,
            cross_attn,
            cross_drop,
            ff_norm,
            ff,
            ff_drop,
        });
    }
    let (hidden, norm) = norm_forward(&params.decoder_norm, &x, n);
    let logits = linear_forward(&params.projection, &hidden, n);
    let cache = DecoderCache {
        tokens: tokens.to_vec(),
        embed_drop,
        layers,
        norm,
        hidden,
    };
    (logits, cache)
}

fn decoder_layer_backward<T: Real>(
    p: &DecoderLayer<T>,
    g: &mut DecoderLayer<T>,
    heads: usize,
    c: &DecLayerCache<T>,
    dx: &mut [T],
    d_memory: &mut [T],
) {
    let mut df = dx.to_vec();
    apply_mask(&mut df, &c.ff_drop);
    let dh = ff_backward(&p.ff, &mut g.ff, &c.ff, &df);
    add_into(dx, &norm_backward(&p.ff_norm, &mut g.ff_norm, &c.ff_norm, &dh));

    let mut da = dx.to_vec();
    apply_mask(&mut da, &c.cross_drop);
    let (dq, dmem) = attn_backward(&p.cross_attn, &mut g.cross_attn, heads, &c.cross_attn, &da);
    add_into(d_memory, &dmem);
    add_into(dx, &norm_backward(&p.cross_norm, &mut g.cross_norm, &c.cross_norm, &dq));

    let mut da = dx.to_vec();
    apply_mask(&mut da, &c.self_drop);
    let (dq, dkv) = attn_backward(&p.self_attn, &mut g.self_attn, heads, &c.self_attn, &da);
    let mut dh = dq;
    add_into(&mut dh, &dkv);
    add_into(dx, &norm_backward(&p.self_norm, &mut g.self_norm, &c.self_norm, &dh));
}

/// Accumulates decoder gradients and returns the gradient w.r.t. the encoder output.
pub fn decode_backward<T: Real>(
    params: &ModelParameters<T>,
    grads: &mut ModelParameters<T>,
    config: &ModelConfig,
    memory_len: usize,
    cache: &DecoderCache<T>,
    d_logits: &[T],
) -> Vec<T> {
    let d = config.model_dim;
    let n = cache.tokens.len();
    let dhidden = linear_backward(&params.projection, &mut grads.projection, &cache.hidden, d_logits, n);
    let mut dx = norm_backward(&params.decoder_norm, &mut grads.decoder_norm, &cache.norm, &dhidden);
    let mut d_memory = vec![T::zero(); memory_len * d];
    for (i, c) in cache.layers.iter().enumerate().rev() {
        decoder_layer_backward(&params.decoder[i], &mut grads.decoder[i], config.heads, c, &mut dx, &mut d_memory);
    }
    apply_mask(&mut dx, &cache.embed_drop);
    embed_backward(&mut grads.target_embedding.data, d, &cache.tokens, &dx);
    d_memory
}

/// Log-softmax of one row, accumulated in `f64`.
pub fn log_softmax<T: Real>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|x| x.widen()).fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|x| (x.widen() - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|x| x.widen() - lse).collect()
}

/// Cross-entropy of one example against `labels` (PAD positions skipped).
///
/// Returns the summed loss and writes `weight * dL/dlogits` into `d_logits`.
pub fn cross_entropy<T: Real>(
    logits: &[T],
    vocab: usize,
    labels: &[usize],
    pad: usize,
    weight: f64,
    d_logits: &mut [T],
) -> f64 {
    let mut loss = 0.0;
    for (t, &label) in labels.iter().enumerate() {
        let row = &logits[t * vocab..(t + 1) * vocab];
        let drow = &mut d_logits[t * vocab..(t + 1) * vocab];
        if label == pad {
            drow.iter_mut().for_each(|x| *x = T::zero());
            continue;
        }
        let logp = log_softmax(row);
        loss -= logp[label];
        for (j, dx) in drow.iter_mut().enumerate() {
            let target = if j == label { 1.0 } else { 0.0 };
            *dx = T::from_f64(weight * (logp[j].exp() - target));
        }
    }
    loss
}
