//! Pre-norm transformer encoder-decoder with hand-written backpropagation.
//!
//! Sequences of a batch are packed row-wise into one matrix so that every
//! position-wise operation (projections, layer norm, feed-forward) is a single
//! matrix product; attention runs per sequence segment and per head.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nmt::loss::loss_and_grad;
use crate::nmt::params::{Attention, FeedForward, LayerNorm, ModelConfig, TransformerParams};
use crate::mine::ConstraintMask;

const LN_EPS: f64 = 1e-5;

/// Sinusoidal position encodings, `max_len x d`.
pub fn positional_encoding(max_len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((max_len, d), |(pos, i)| {
        let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 / rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn ln_forward(ln: &LayerNorm, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *is = 1.0 / (var + LN_EPS).sqrt();
        row *= *is;
    }
    let y = &xhat * &ln.gain + &ln.bias;
    (y, LnCache { xhat, inv_std })
}

fn ln_backward(ln: &LayerNorm, cache: &LnCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
    grad.gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    grad.bias += &dy.sum_axis(Axis(0));
    let d = dy.ncols() as f64;
    let dxhat = dy * &ln.gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, g), xh), &is) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(cache.xhat.rows())
        .zip(cache.inv_std.iter())
    {
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        for ((o, &gi), &xi) in out.iter_mut().zip(g.iter()).zip(xh.iter()) {
            *o = is * (gi - mean_g - xi * mean_gx);
        }
    }
    dx
}

struct FfCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

fn ff_forward(f: &FeedForward, x: &Array2<f64>) -> (Array2<f64>, FfCache) {
    let pre = x.dot(&f.w1) + &f.b1;
    let hidden = pre.mapv(|v| v.max(0.0));
    let y = hidden.dot(&f.w2) + &f.b2;
    (
        y,
        FfCache {
            x: x.clone(),
            pre,
            hidden,
        },
    )
}

fn ff_backward(f: &FeedForward, cache: &FfCache, dy: &Array2<f64>, grad: &mut FeedForward) -> Array2<f64> {
    grad.w2 += &cache.hidden.t().dot(dy);
    grad.b2 += &dy.sum_axis(Axis(0));
    let mut dpre = dy.dot(&f.w2.t());
    dpre.zip_mut_with(&cache.pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0
        }
    });
    grad.w1 += &cache.x.t().dot(&dpre);
    grad.b1 += &dpre.sum_axis(Axis(0));
    dpre.dot(&f.w1.t())
}

/// Query rows attend to key rows; `causal` hides keys after the query position.
#[derive(Debug, Clone)]
struct SegmentPair {
    queries: Range<usize>,
    keys: Range<usize>,
}

struct AttnCache {
    q_in: Array2<f64>,
    kv_in: Option<Array2<f64>>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    concat: Array2<f64>,
    probs: Vec<Array2<f64>>,
}

fn masked_softmax_rows(scores: &mut Array2<f64>, causal: bool) {
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let limit = if causal { i + 1 } else { row.len() };
        let max = row.iter().take(limit).cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, v) in row.iter_mut().enumerate() {
            if j < limit {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        row.iter_mut().take(limit).for_each(|v| *v /= sum);
    }
}

fn attn_forward(
    a: &Attention,
    heads: usize,
    q_in: &Array2<f64>,
    kv_in: Option<&Array2<f64>>,
    pairs: &[SegmentPair],
    causal: bool,
) -> (Array2<f64>, AttnCache) {
    let kv = kv_in.unwrap_or(q_in);
    let q = q_in.dot(&a.wq) + &a.bq;
    let k = kv.dot(&a.wk) + &a.bk;
    let v = kv.dot(&a.wv) + &a.bv;
    let d = q.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut concat = Array2::zeros((q.nrows(), d));
    let mut probs = Vec::with_capacity(pairs.len() * heads);
    for pair in pairs {
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(s![pair.queries.clone(), cols.clone()]);
            let kh = k.slice(s![pair.keys.clone(), cols.clone()]);
            let vh = v.slice(s![pair.keys.clone(), cols.clone()]);
            let mut p = qh.dot(&kh.t()) * scale;
            masked_softmax_rows(&mut p, causal);
            concat
                .slice_mut(s![pair.queries.clone(), cols])
                .assign(&p.dot(&vh));
            probs.push(p);
        }
    }
    let out = concat.dot(&a.wo) + &a.bo;
    let cache = AttnCache {
        q_in: q_in.clone(),
        kv_in: kv_in.cloned(),
        q,
        k,
        v,
        concat,
        probs,
    };
    (out, cache)
}

/// Returns gradients w.r.t. the query input and, for cross-attention, the
/// key/value input. For self-attention both contributions are summed into the
/// first element.
fn attn_backward(
    a: &Attention,
    heads: usize,
    cache: &AttnCache,
    pairs: &[SegmentPair],
    d_out: &Array2<f64>,
    grad: &mut Attention,
) -> (Array2<f64>, Option<Array2<f64>>) {
    grad.wo += &cache.concat.t().dot(d_out);
    grad.bo += &d_out.sum_axis(Axis(0));
    let d_concat = d_out.dot(&a.wo.t());
    let d = cache.q.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros(cache.q.raw_dim());
    let mut dk = Array2::zeros(cache.k.raw_dim());
    let mut dv = Array2::zeros(cache.v.raw_dim());
    let mut probs = cache.probs.iter();
    for pair in pairs {
        for h in 0..heads {
            let p = probs.next().expect("one cache entry per pair and head");
            let cols = h * dh..(h + 1) * dh;
            let d_oh = d_concat.slice(s![pair.queries.clone(), cols.clone()]);
            let vh = cache.v.slice(s![pair.keys.clone(), cols.clone()]);
            let qh = cache.q.slice(s![pair.queries.clone(), cols.clone()]);
            let kh = cache.k.slice(s![pair.keys.clone(), cols.clone()]);
            let dp = d_oh.dot(&vh.t());
            let mut dv_h = dv.slice_mut(s![pair.keys.clone(), cols.clone()]);
            dv_h += &p.t().dot(&d_oh);
            let mut ds = p * &dp;
            for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot: f64 = row.sum();
                row.zip_mut_with(&prow, |x, &pi| *x -= pi * dot);
            }
            ds *= scale;
            let mut dq_h = dq.slice_mut(s![pair.queries.clone(), cols.clone()]);
            dq_h += &ds.dot(&kh);
            let mut dk_h = dk.slice_mut(s![pair.keys.clone(), cols]);
            dk_h += &ds.t().dot(&qh);
        }
    }
    let kv_in = cache.kv_in.as_ref().unwrap_or(&cache.q_in);
    grad.wq += &cache.q_in.t().dot(&dq);
    grad.bq += &dq.sum_axis(Axis(0));
    grad.wk += &kv_in.t().dot(&dk);
    grad.bk += &dk.sum_axis(Axis(0));
    grad.wv += &kv_in.t().dot(&dv);
    grad.bv += &dv.sum_axis(Axis(0));
    let d_q_in = dq.dot(&a.wq.t());
    let d_kv_in = dk.dot(&a.wk.t()) + dv.dot(&a.wv.t());
    if cache.kv_in.is_some() {
        (d_q_in, Some(d_kv_in))
    } else {
        (d_q_in + d_kv_in, None)
    }
}

fn embed(table: &Array2<f64>, pe: &Array2<f64>, seqs: &[&[usize]]) -> Array2<f64> {
    let d = table.ncols();
    let scale = (d as f64).sqrt();
    let rows: usize = seqs.iter().map(|s| s.len()).sum();
    let mut x = Array2::zeros((rows, d));
    let mut r = 0;
    for seq in seqs {
        for (pos, &tok) in seq.iter().enumerate() {
            let mut row = x.row_mut(r);
            row.assign(&table.row(tok));
            row *= scale;
            row += &pe.row(pos);
            r += 1;
        }
    }
    x
}

fn embed_backward(grad: &mut Array2<f64>, seqs: &[&[usize]], dx: &Array2<f64>) {
    let scale = (grad.ncols() as f64).sqrt();
    let tokens = seqs.iter().flat_map(|s| s.iter());
    for (&tok, drow) in tokens.zip(dx.rows()) {
        grad.row_mut(tok).scaled_add(scale, &drow);
    }
}

fn segments(seqs: &[&[usize]]) -> Vec<Range<usize>> {
    let mut start = 0;
    seqs.iter()
        .map(|s| {
            let r = start..start + s.len();
            start += s.len();
            r
        })
        .collect()
}

struct EncLayerCache {
    ln_attn: LnCache,
    attn: AttnCache,
    ln_ff: LnCache,
    ff: FfCache,
}

struct DecLayerCache {
    ln_self: LnCache,
    self_attn: AttnCache,
    ln_cross: LnCache,
    cross_attn: AttnCache,
    ln_ff: LnCache,
    ff: FfCache,
}

/// Encoder output for a packed batch of source sequences.
pub struct Encoded {
    pub memory: Array2<f64>,
    segments: Vec<Range<usize>>,
    layers: Vec<EncLayerCache>,
    final_ln: LnCache,
}

struct Decoded {
    logits: Array2<f64>,
    z: Array2<f64>,
    self_pairs: Vec<SegmentPair>,
    cross_pairs: Vec<SegmentPair>,
    layers: Vec<DecLayerCache>,
    final_ln: LnCache,
}

fn check_ids(seqs: &[&[usize]], vocab: usize, max_len: usize, what: &str) -> Result<()> {
    for s in seqs {
        if s.is_empty() {
            return Err(Error::Dimension(format!("empty {what} sequence")));
        }
        if s.len() > max_len {
            return Err(Error::Dimension(format!("{what} length {} exceeds max_len {max_len}", s.len())));
        }
        if let Some(&bad) = s.iter().find(|&&t| t >= vocab) {
            return Err(Error::Dimension(format!("{what} token id {bad} outside vocabulary of {vocab}")));
        }
    }
    Ok(())
}

impl TransformerParams {
    fn pe(&self) -> Array2<f64> {
        positional_encoding(self.config.max_len, self.config.d_model)
    }

    /// Encodes a packed batch of source sequences.
    pub fn encode(&self, src: &[&[usize]]) -> Result<Encoded> {
        let cfg = &self.config;
        check_ids(src, cfg.src_vocab, cfg.max_len, "source")?;
        let segs = segments(src);
        let pairs: Vec<SegmentPair> = segs
            .iter()
            .map(|r| SegmentPair {
                queries: r.clone(),
                keys: r.clone(),
            })
            .collect();
        let mut x = embed(&self.src_embed, &self.pe(), src);
        let mut layers = Vec::with_capacity(cfg.layers);
        for layer in &self.encoder {
            let (a, ln_attn) = ln_forward(&layer.ln_attn, &x);
            let (sa, attn) = attn_forward(&layer.self_attn, cfg.heads, &a, None, &pairs, false);
            x += &sa;
            let (b, ln_ff) = ln_forward(&layer.ln_ff, &x);
            let (f, ff) = ff_forward(&layer.ff, &b);
            x += &f;
            layers.push(EncLayerCache {
                ln_attn,
                attn,
                ln_ff,
                ff,
            });
        }
        let (memory, final_ln) = ln_forward(&self.enc_norm, &x);
        Ok(Encoded {
            memory,
            segments: segs,
            layers,
            final_ln,
        })
    }

    /// Runs the decoder on `tgt[i]` attending to memory segment `memory_of[i]`.
    fn decode(&self, enc: &Encoded, tgt: &[&[usize]], memory_of: &[usize]) -> Result<Decoded> {
        let cfg = &self.config;
        check_ids(tgt, cfg.tgt_vocab, cfg.max_len, "target")?;
        let segs = segments(tgt);
        let self_pairs: Vec<SegmentPair> = segs
            .iter()
            .map(|r| SegmentPair {
                queries: r.clone(),
                keys: r.clone(),
            })
            .collect();
        let cross_pairs: Vec<SegmentPair> = segs
            .iter()
            .zip(memory_of)
            .map(|(r, &m)| SegmentPair {
                queries: r.clone(),
                keys: enc.segments[m].clone(),
            })
            .collect();
        let mut y = embed(&self.tgt_embed, &self.pe(), tgt);
        let mut layers = Vec::with_capacity(cfg.layers);
        for layer in &self.decoder {
            let (a, ln_self) = ln_forward(&layer.ln_self, &y);
            let (sa, self_attn) = attn_forward(&layer.self_attn, cfg.heads, &a, None, &self_pairs, true);
            y += &sa;
            let (b, ln_cross) = ln_forward(&layer.ln_cross, &y);
            let (ca, cross_attn) =
                attn_forward(&layer.cross_attn, cfg.heads, &b, Some(&enc.memory), &cross_pairs, false);
            y += &ca;
            let (e, ln_ff) = ln_forward(&layer.ln_ff, &y);
            let (f, ff) = ff_forward(&layer.ff, &e);
            y += &f;
            layers.push(DecLayerCache {
                ln_self,
                self_attn,
                ln_cross,
                cross_attn,
                ln_ff,
                ff,
            });
        }
        let (z, final_ln) = ln_forward(&self.dec_norm, &y);
        let logits = z.dot(&self.tgt_embed.t()) + &self.out_bias;
        Ok(Decoded {
            logits,
            z,
            self_pairs,
            cross_pairs,
            layers,
            final_ln,
        })
    }

    /// Logits (`|tgt_prefix| x |V_tgt|`) for one source and decoder input.
    pub fn forward(&self, src: &[usize], tgt_prefix: &[usize]) -> Result<Array2<f64>> {
        Ok(self.forward_batch(&[(src, tgt_prefix)])?.remove(0))
    }

    /// Per-example logits for a batch of `(source, decoder input)` pairs.
    pub fn forward_batch(&self, batch: &[(&[usize], &[usize])]) -> Result<Vec<Array2<f64>>> {
        let src: Vec<&[usize]> = batch.iter().map(|b| b.0).collect();
        let tgt: Vec<&[usize]> = batch.iter().map(|b| b.1).collect();
        let enc = self.encode(&src)?;
        let ids: Vec<usize> = (0..batch.len()).collect();
        let dec = self.decode(&enc, &tgt, &ids)?;
        Ok(segments(&tgt)
            .into_iter()
            .map(|r| dec.logits.slice(s![r, ..]).to_owned())
            .collect())
    }

    /// Logits of the last position of each prefix, every prefix attending to
    /// the single encoded source in `enc`.
    pub fn next_token_logits(&self, enc: &Encoded, prefixes: &[&[usize]]) -> Result<Array2<f64>> {
        let memory_of = vec![0; prefixes.len()];
        let dec = self.decode(enc, prefixes, &memory_of)?;
        let mut out = Array2::zeros((prefixes.len(), self.config.tgt_vocab));
        for (i, r) in segments(prefixes).into_iter().enumerate() {
            out.row_mut(i).assign(&dec.logits.row(r.end - 1));
        }
        Ok(out)
    }

    fn backward_from_logits(
        &self,
        src: &[&[usize]],
        tgt: &[&[usize]],
        enc: &Encoded,
        dec: &Decoded,
        d_logits: &Array2<f64>,
    ) -> TransformerParams {
        let cfg: &ModelConfig = &self.config;
        let mut g = self.zeros_like();
        g.tgt_embed += &d_logits.t().dot(&dec.z);
        g.out_bias += &d_logits.sum_axis(Axis(0));
        let dz = d_logits.dot(&self.tgt_embed);
        let mut dy = ln_backward(&self.dec_norm, &dec.final_ln, &dz, &mut g.dec_norm);
        let mut d_memory = Array2::zeros(enc.memory.raw_dim());
        for ((layer, cache), grad) in self
            .decoder
            .iter()
            .zip(&dec.layers)
            .zip(g.decoder.iter_mut())
            .rev()
        {
            let de = ff_backward(&layer.ff, &cache.ff, &dy, &mut grad.ff);
            dy += &ln_backward(&layer.ln_ff, &cache.ln_ff, &de, &mut grad.ln_ff);
            let (db, dm) = attn_backward(&layer.cross_attn, cfg.heads, &cache.cross_attn, &dec.cross_pairs, &dy, &mut grad.cross_attn);
            d_memory += &dm.expect("cross-attention has a separate key input");
            dy += &ln_backward(&layer.ln_cross, &cache.ln_cross, &db, &mut grad.ln_cross);
            let (da, _) = attn_backward(&layer.self_attn, cfg.heads, &cache.self_attn, &dec.self_pairs, &dy, &mut grad.self_attn);
            dy += &ln_backward(&layer.ln_self, &cache.ln_self, &da, &mut grad.ln_self);
        }
        embed_backward(&mut g.tgt_embed, tgt, &dy);

        let enc_pairs: Vec<SegmentPair> = enc
            .segments
            .iter()
            .map(|r| SegmentPair {
                queries: r.clone(),
                keys: r.clone(),
            })
            .collect();
        let mut dx = ln_backward(&self.enc_norm, &enc.final_ln, &d_memory, &mut g.enc_norm);
        for ((layer, cache), grad) in self
            .encoder
            .iter()
            .zip(&enc.layers)
            .zip(g.encoder.iter_mut())
            .rev()
        {
            let db = ff_backward(&layer.ff, &cache.ff, &dx, &mut grad.ff);
            dx += &ln_backward(&layer.ln_ff, &cache.ln_ff, &db, &mut grad.ln_ff);
            let (da, _) = attn_backward(&layer.self_attn, cfg.heads, &cache.attn, &enc_pairs, &dx, &mut grad.self_attn);
            dx += &ln_backward(&layer.ln_attn, &cache.ln_attn, &da, &mut grad.ln_attn);
        }
        embed_backward(&mut g.src_embed, src, &dx);
        g
    }
}

/// One training example: source ids, decoder input (`BOS y`), gold output
/// (`y EOS`) and the optional constraint mask of its source.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub src: Vec<usize>,
    pub tgt_in: Vec<usize>,
    pub gold: Vec<usize>,
    pub mask: Option<ConstraintMask>,
}

impl TrainExample {
    /// Builds decoder input and gold output from a bare target sequence.
    pub fn new(src: Vec<usize>, tgt: &[usize], mask: Option<ConstraintMask>) -> Self {
        use crate::textproc::{BOS, EOS};
        let mut tgt_in = Vec::with_capacity(tgt.len() + 1);
        tgt_in.push(BOS);
        tgt_in.extend_from_slice(tgt);
        let mut gold = tgt.to_vec();
        gold.push(EOS);
        Self {
            src,
            tgt_in,
            gold,
            mask,
        }
    }

    pub fn target_tokens(&self) -> usize {
        self.gold.len()
    }
}

/// Mean candidate-smoothed loss over all non-PAD gold positions of the batch
/// and its exact gradient with respect to every parameter.
pub fn backward(params: &TransformerParams, batch: &[TrainExample], alpha: f64) -> Result<(f64, TransformerParams)> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("training batch"));
    }
    for ex in batch {
        if ex.tgt_in.len() != ex.gold.len() {
            return Err(Error::Dimension("decoder input and gold output lengths differ".into()));
        }
    }
    let src: Vec<&[usize]> = batch.iter().map(|e| e.src.as_slice()).collect();
    let tgt: Vec<&[usize]> = batch.iter().map(|e| e.tgt_in.as_slice()).collect();
    let enc = params.encode(&src)?;
    let ids: Vec<usize> = (0..batch.len()).collect();
    let dec = params.decode(&enc, &tgt, &ids)?;

    let mut d_logits = Array2::zeros(dec.logits.raw_dim());
    let mut total = 0.0;
    let mut count = 0usize;
    for (ex, r) in batch.iter().zip(segments(&tgt)) {
        let logits: ArrayView2<f64> = dec.logits.slice(s![r.clone(), ..]);
        let (sum, n, grad) = loss_and_grad(logits, &ex.gold, ex.mask.as_ref(), alpha)?;
        total += sum;
        count += n;
        d_logits.slice_mut(s![r, ..]).assign(&grad);
    }
    if count == 0 {
        return Err(Error::EmptyInput("non-PAD target positions"));
    }
    d_logits /= count as f64;
    let grads = params.backward_from_logits(&src, &tgt, &enc, &dec, &d_logits);
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient(name));
    }
    Ok((total / count as f64, grads))
}

/// Loss only, same definition as [`backward`].
pub fn batch_loss(params: &TransformerParams, batch: &[TrainExample], alpha: f64) -> Result<f64> {
    let pairs: Vec<(&[usize], &[usize])> = batch.iter().map(|e| (e.src.as_slice(), e.tgt_in.as_slice())).collect();
    let logits = params.forward_batch(&pairs)?;
    let mut total = 0.0;
    let mut count = 0;
    for (ex, l) in batch.iter().zip(&logits) {
        let (sum, n, _) = loss_and_grad(l.view(), &ex.gold, ex.mask.as_ref(), alpha)?;
        total += sum;
        count += n;
    }
    if count == 0 {
        return Err(Error::EmptyInput("non-PAD target positions"));
    }
    Ok(total / count as f64)
}
