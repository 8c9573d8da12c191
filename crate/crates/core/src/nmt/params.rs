use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape hyperparameters of the encoder-decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    /// Longest source or target sequence (including BOS/EOS) the model accepts.
    pub max_len: usize,
}

impl ModelConfig {
    /// The default toy size: L=2, D=64, H=4, F=256.
    pub fn toy(src_vocab: usize, tgt_vocab: usize) -> Self {
        Self {
            layers: 2,
            d_model: 64,
            heads: 4,
            d_ff: 256,
            src_vocab,
            tgt_vocab,
            max_len: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.heads == 0 || self.d_model == 0 || self.d_model % self.heads != 0 {
            return bad(format!("heads ({}) must divide d_model ({})", self.heads, self.d_model));
        }
        if self.layers == 0 || self.d_ff == 0 || self.max_len == 0 {
            return bad("layers, d_ff and max_len must be positive".into());
        }
        if self.src_vocab < 5 || self.tgt_vocab < 5 {
            return bad("vocabularies need the four specials plus at least one word".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

/// Projections of one multi-head attention block; `w*` are `D x D` and act
/// on row vectors (`x W + b`).
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln_attn: LayerNorm,
    pub self_attn: Attention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub ln_self: LayerNorm,
    pub self_attn: Attention,
    pub ln_cross: LayerNorm,
    pub cross_attn: Attention,
    pub ln_ff: LayerNorm,
    pub ff: FeedForward,
}

/// All trainable tensors. The target embedding doubles as the output
/// projection `W`; `out_bias` is `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerParams {
    pub config: ModelConfig,
    pub src_embed: Array2<f64>,
    pub tgt_embed: Array2<f64>,
    pub out_bias: Array1<f64>,
    pub encoder: Vec<EncoderLayer>,
    pub enc_norm: LayerNorm,
    pub decoder: Vec<DecoderLayer>,
    pub dec_norm: LayerNorm,
}

/// Name, shape and row-major data of one tensor.
#[derive(Debug)]
pub struct NamedTensor<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

struct Init<'r> {
    rng: &'r mut ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, rows: usize, cols: usize, limit: f64) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| self.rng.gen_range(-limit..limit))
    }

    fn xavier(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        self.uniform(rows, cols, limit)
    }

    fn attention(&mut self, d: usize) -> Attention {
        Attention {
            wq: self.xavier(d, d),
            bq: Array1::zeros(d),
            wk: self.xavier(d, d),
            bk: Array1::zeros(d),
            wv: self.xavier(d, d),
            bv: Array1::zeros(d),
            wo: self.xavier(d, d),
            bo: Array1::zeros(d),
        }
    }

    fn ff(&mut self, d: usize, f: usize) -> FeedForward {
        FeedForward {
            w1: self.xavier(d, f),
            b1: Array1::zeros(f),
            w2: self.xavier(f, d),
            b2: Array1::zeros(d),
        }
    }
}

impl LayerNorm {
    fn identity(d: usize) -> Self {
        Self {
            gain: Array1::ones(d),
            bias: Array1::zeros(d),
        }
    }
}

impl TransformerParams {
    /// Xavier-uniform projections, zero biases, identity layer norms and
    /// embeddings with variance `1/D`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let d = config.d_model;
        let emb_limit = (3.0 / d as f64).sqrt();
        let src_embed = init.uniform(config.src_vocab, d, emb_limit);
        let tgt_embed = init.uniform(config.tgt_vocab, d, emb_limit);
        let encoder = (0..config.layers)
            .map(|_| EncoderLayer {
                ln_attn: LayerNorm::identity(d),
                self_attn: init.attention(d),
                ln_ff: LayerNorm::identity(d),
                ff: init.ff(d, config.d_ff),
            })
            .collect();
        let decoder = (0..config.layers)
            .map(|_| DecoderLayer {
                ln_self: LayerNorm::identity(d),
                self_attn: init.attention(d),
                ln_cross: LayerNorm::identity(d),
                cross_attn: init.attention(d),
                ln_ff: LayerNorm::identity(d),
                ff: init.ff(d, config.d_ff),
            })
            .collect();
        Ok(Self {
            config,
            src_embed,
            tgt_embed,
            out_bias: Array1::zeros(config.tgt_vocab),
            encoder,
            enc_norm: LayerNorm::identity(d),
            decoder,
            dec_norm: LayerNorm::identity(d),
        })
    }

    /// Same shapes, every entry zero. Used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, data) in z.tensors_mut() {
            data.fill(0.0);
        }
        z
    }

    /// Every tensor in a fixed order with hierarchical names.
    pub fn tensors(&self) -> Vec<NamedTensor<'_>> {
        fn t1(name: String, a: &Array1<f64>) -> NamedTensor<'_> {
            NamedTensor {
                name,
                shape: a.shape().to_vec(),
                data: a.as_slice().expect("standard layout"),
            }
        }
        fn t2(name: String, a: &Array2<f64>) -> NamedTensor<'_> {
            NamedTensor {
                name,
                shape: a.shape().to_vec(),
                data: a.as_slice().expect("standard layout"),
            }
        }
        fn ln<'a>(out: &mut Vec<NamedTensor<'a>>, p: String, l: &'a LayerNorm) {
            out.push(t1(format!("{p}.gain"), &l.gain));
            out.push(t1(format!("{p}.bias"), &l.bias));
        }
        fn attn<'a>(out: &mut Vec<NamedTensor<'a>>, p: String, a: &'a Attention) {
            out.push(t2(format!("{p}.wq"), &a.wq));
            out.push(t1(format!("{p}.bq"), &a.bq));
            out.push(t2(format!("{p}.wk"), &a.wk));
            out.push(t1(format!("{p}.bk"), &a.bk));
            out.push(t2(format!("{p}.wv"), &a.wv));
            out.push(t1(format!("{p}.bv"), &a.bv));
            out.push(t2(format!("{p}.wo"), &a.wo));
            out.push(t1(format!("{p}.bo"), &a.bo));
        }
        fn ff<'a>(out: &mut Vec<NamedTensor<'a>>, p: String, f: &'a FeedForward) {
            out.push(t2(format!("{p}.w1"), &f.w1));
            out.push(t1(format!("{p}.b1"), &f.b1));
            out.push(t2(format!("{p}.w2"), &f.w2));
            out.push(t1(format!("{p}.b2"), &f.b2));
        }
        let mut out = Vec::new();
        out.push(t2("src_embed".into(), &self.src_embed));
        out.push(t2("tgt_embed".into(), &self.tgt_embed));
        out.push(t1("out_bias".into(), &self.out_bias));
        for (i, l) in self.encoder.iter().enumerate() {
            ln(&mut out, format!("enc.{i}.ln_attn"), &l.ln_attn);
            attn(&mut out, format!("enc.{i}.self_attn"), &l.self_attn);
            ln(&mut out, format!("enc.{i}.ln_ff"), &l.ln_ff);
            ff(&mut out, format!("enc.{i}.ff"), &l.ff);
        }
        ln(&mut out, "enc_norm".into(), &self.enc_norm);
        for (i, l) in self.decoder.iter().enumerate() {
            ln(&mut out, format!("dec.{i}.ln_self"), &l.ln_self);
            attn(&mut out, format!("dec.{i}.self_attn"), &l.self_attn);
            ln(&mut out, format!("dec.{i}.ln_cross"), &l.ln_cross);
            attn(&mut out, format!("dec.{i}.cross_attn"), &l.cross_attn);
            ln(&mut out, format!("dec.{i}.ln_ff"), &l.ln_ff);
            ff(&mut out, format!("dec.{i}.ff"), &l.ff);
        }
        ln(&mut out, "dec_norm".into(), &self.dec_norm);
        out
    }

    /// Mutable views in the same order as [`tensors`](Self::tensors).
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        fn s1(a: &mut Array1<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        fn s2(a: &mut Array2<f64>) -> &mut [f64] {
            a.as_slice_mut().expect("standard layout")
        }
        fn ln<'a>(out: &mut Vec<(String, &'a mut [f64])>, p: String, l: &'a mut LayerNorm) {
            out.push((format!("{p}.gain"), s1(&mut l.gain)));
            out.push((format!("{p}.bias"), s1(&mut l.bias)));
        }
        fn attn<'a>(out: &mut Vec<(String, &'a mut [f64])>, p: String, a: &'a mut Attention) {
            out.push((format!("{p}.wq"), s2(&mut a.wq)));
            out.push((format!("{p}.bq"), s1(&mut a.bq)));
            out.push((format!("{p}.wk"), s2(&mut a.wk)));
            out.push((format!("{p}.bk"), s1(&mut a.bk)));
            out.push((format!("{p}.wv"), s2(&mut a.wv)));
            out.push((format!("{p}.bv"), s1(&mut a.bv)));
            out.push((format!("{p}.wo"), s2(&mut a.wo)));
            out.push((format!("{p}.bo"), s1(&mut a.bo)));
        }
        fn ff<'a>(out: &mut Vec<(String, &'a mut [f64])>, p: String, f: &'a mut FeedForward) {
            out.push((format!("{p}.w1"), s2(&mut f.w1)));
            out.push((format!("{p}.b1"), s1(&mut f.b1)));
            out.push((format!("{p}.w2"), s2(&mut f.w2)));
            out.push((format!("{p}.b2"), s1(&mut f.b2)));
        }
        let mut out = Vec::new();
        out.push(("src_embed".to_string(), s2(&mut self.src_embed)));
        out.push(("tgt_embed".to_string(), s2(&mut self.tgt_embed)));
        out.push(("out_bias".to_string(), s1(&mut self.out_bias)));
        for (i, l) in self.encoder.iter_mut().enumerate() {
            ln(&mut out, format!("enc.{i}.ln_attn"), &mut l.ln_attn);
            attn(&mut out, format!("enc.{i}.self_attn"), &mut l.self_attn);
            ln(&mut out, format!("enc.{i}.ln_ff"), &mut l.ln_ff);
            ff(&mut out, format!("enc.{i}.ff"), &mut l.ff);
        }
        ln(&mut out, "enc_norm".into(), &mut self.enc_norm);
        for (i, l) in self.decoder.iter_mut().enumerate() {
            ln(&mut out, format!("dec.{i}.ln_self"), &mut l.ln_self);
            attn(&mut out, format!("dec.{i}.self_attn"), &mut l.self_attn);
            ln(&mut out, format!("dec.{i}.ln_cross"), &mut l.ln_cross);
            attn(&mut out, format!("dec.{i}.cross_attn"), &mut l.cross_attn);
            ln(&mut out, format!("dec.{i}.ln_ff"), &mut l.ln_ff);
            ff(&mut out, format!("dec.{i}.ff"), &mut l.ff);
        }
        ln(&mut out, "dec_norm".into(), &mut self.dec_norm);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    /// First tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|t| t.data.iter().any(|x| !x.is_finite()))
            .map(|t| t.name)
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        let src = other.tensors();
        for ((_, dst), s) in self.tensors_mut().into_iter().zip(src) {
            for (d, x) in dst.iter_mut().zip(s.data) {
                *d += scale * x;
            }
        }
    }
}
