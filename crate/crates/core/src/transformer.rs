//! Scaled dot-product attention, multi-head attention and the pre-norm
//! encoder block.
//!
//! Per-head projections are stored side by side: `w_query` is
//! `d_model × (h·d_k)` and head `i` owns columns `i·d_k .. (i+1)·d_k`.
//! Projecting once with the stacked matrix is the same as projecting with
//! each head's own matrix and concatenating.

use rand::{Rng, RngCore};

use crate::init::trunc_normal;
use crate::tensor::{Result, Tape, Tensor, TensorError, Var};
use crate::ConfigError;

pub const LAYER_NORM_EPS: f64 = 1e-6;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T = Tensor> {
    pub w_query: T,
    pub w_key: T,
    pub w_value: T,
    /// `(h·d_v) × d_model`.
    pub w_out: T,
    pub heads: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    Query,
    Key,
    Value,
}

impl AttentionParams<Tensor> {
    pub fn new(
        w_query: Tensor,
        w_key: Tensor,
        w_value: Tensor,
        w_out: Tensor,
        heads: usize,
    ) -> Result<Self, ConfigError> {
        let d_model = w_query.shape().first().copied().unwrap_or(0);
        check_heads(d_model, heads)?;
        let square = [d_model, d_model];
        for (name, w) in [
            ("w_query", &w_query),
            ("w_key", &w_key),
            ("w_value", &w_value),
            ("w_out", &w_out),
        ] {
            if w.shape() != square {
                return Err(ConfigError(format!(
                    "{name} has shape {:?}, expected {square:?} for d_model={d_model}, h={heads}",
                    w.shape()
                )));
            }
        }
        Ok(Self {
            w_query,
            w_key,
            w_value,
            w_out,
            heads,
        })
    }

    pub fn init<R: Rng>(d_model: usize, heads: usize, rng: &mut R) -> Result<Self, ConfigError> {
        check_heads(d_model, heads)?;
        let shape = [d_model, d_model];
        Ok(Self {
            w_query: trunc_normal(&shape, INIT_STD, rng),
            w_key: trunc_normal(&shape, INIT_STD, rng),
            w_value: trunc_normal(&shape, INIT_STD, rng),
            w_out: trunc_normal(&shape, INIT_STD, rng),
            heads,
        })
    }

    pub fn d_model(&self) -> usize {
        self.w_query.shape()[0]
    }

    pub fn head_dim(&self) -> usize {
        self.d_model() / self.heads
    }

    /// The `d_model × d_k` projection matrix of one head.
    pub fn head_projection(&self, which: Projection, head: usize) -> Tensor {
        let w = match which {
            Projection::Query => &self.w_query,
            Projection::Key => &self.w_key,
            Projection::Value => &self.w_value,
        };
        let (d, dk) = (self.d_model(), self.head_dim());
        let data = (0..d)
            .flat_map(|r| w.row(r)[head * dk..(head + 1) * dk].to_vec())
            .collect();
        Tensor::new(&[d, dk], data).expect("block shape")
    }
}

impl<T> AttentionParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> AttentionParams<U> {
        AttentionParams {
            w_query: f(&format!("{prefix}.w_query"), &self.w_query),
            w_key: f(&format!("{prefix}.w_key"), &self.w_key),
            w_value: f(&format!("{prefix}.w_value"), &self.w_value),
            w_out: f(&format!("{prefix}.w_out"), &self.w_out),
            heads: self.heads,
        }
    }
}

pub fn check_heads(d_model: usize, heads: usize) -> Result<(), ConfigError> {
    if heads == 0 || d_model == 0 || !d_model.is_multiple_of(heads) {
        return Err(ConfigError(format!(
            "d_model={d_model} must be a positive multiple of the head count h={heads}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlockParams<T = Tensor> {
    pub norm1_gain: T,
    pub norm1_bias: T,
    pub attention: AttentionParams<T>,
    pub norm2_gain: T,
    pub norm2_bias: T,
    /// `d_model × d_mlp`.
    pub mlp_in: T,
    pub mlp_in_bias: T,
    /// `d_mlp × d_model`.
    pub mlp_out: T,
    pub mlp_out_bias: T,
}

impl EncoderBlockParams<Tensor> {
    pub fn init<R: Rng>(d_model: usize, heads: usize, d_mlp: usize, rng: &mut R) -> Result<Self, ConfigError> {
        if d_mlp == 0 {
            return Err(ConfigError("mlp_dim must be positive".into()));
        }
        Ok(Self {
            norm1_gain: Tensor::ones(&[d_model]),
            norm1_bias: Tensor::zeros(&[d_model]),
            attention: AttentionParams::init(d_model, heads, rng)?,
            norm2_gain: Tensor::ones(&[d_model]),
            norm2_bias: Tensor::zeros(&[d_model]),
            mlp_in: trunc_normal(&[d_model, d_mlp], INIT_STD, rng),
            mlp_in_bias: Tensor::zeros(&[d_mlp]),
            mlp_out: trunc_normal(&[d_mlp, d_model], INIT_STD, rng),
            mlp_out_bias: Tensor::zeros(&[d_model]),
        })
    }
}

impl<T> EncoderBlockParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> EncoderBlockParams<U> {
        EncoderBlockParams {
            norm1_gain: f(&format!("{prefix}.norm1_gain"), &self.norm1_gain),
            norm1_bias: f(&format!("{prefix}.norm1_bias"), &self.norm1_bias),
            attention: self.attention.map(&format!("{prefix}.attention"), f),
            norm2_gain: f(&format!("{prefix}.norm2_gain"), &self.norm2_gain),
            norm2_bias: f(&format!("{prefix}.norm2_bias"), &self.norm2_bias),
            mlp_in: f(&format!("{prefix}.mlp_in"), &self.mlp_in),
            mlp_in_bias: f(&format!("{prefix}.mlp_in_bias"), &self.mlp_in_bias),
            mlp_out: f(&format!("{prefix}.mlp_out"), &self.mlp_out),
            mlp_out_bias: f(&format!("{prefix}.mlp_out_bias"), &self.mlp_out_bias),
        }
    }
}

/// Inverted dropout driven by a caller-owned generator.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let shape = tape.shape(x).to_vec();
        let n = shape.iter().product();
        let mask = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = tape.constant(Tensor::new(&shape, mask)?);
        tape.mul(x, mask)
    }
}

/// Per-forward-pass options.
#[derive(Default)]
pub struct Pass<'a> {
    /// Diagnostic mode: each block appends its `[batch, h, T, T]` scores.
    pub capture: Option<&'a mut Vec<Tensor>>,
    pub dropout: Option<Dropout<'a>>,
}

/// `softmax(Q·Kᵀ / √d_k)` row-wise. Accepts `[n, d_k]` or batched `[g, n, d_k]`.
pub fn attention_scores(tape: &mut Tape, q: Var, k: Var) -> Result<Var> {
    let (qs, ks) = (tape.shape(q).to_vec(), tape.shape(k).to_vec());
    if qs.len() != ks.len() || !(2..=3).contains(&qs.len()) || qs.last() != ks.last() {
        return Err(TensorError::Shape {
            op: "attention_scores",
            lhs: qs,
            rhs: ks,
        });
    }
    let d_k = *qs.last().unwrap_or(&1);
    let kt = tape.transpose(k)?;
    let raw = if qs.len() == 2 {
        tape.matmul(q, kt)?
    } else {
        tape.batch_matmul(q, kt)?
    };
    let scaled = tape.scale(raw, 1.0 / (d_k as f64).sqrt());
    let axis = qs.len() - 1;
    tape.softmax(scaled, axis)
}

/// Returns `(attention_scores(Q, K) · V, scores)`.
pub fn self_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (ks, vs) = (tape.shape(k).to_vec(), tape.shape(v).to_vec());
    if ks.len() != vs.len() || ks[..ks.len() - 1] != vs[..vs.len() - 1] {
        return Err(TensorError::Shape {
            op: "self_attention",
            lhs: ks,
            rhs: vs,
        });
    }
    let scores = attention_scores(tape, q, k)?;
    let out = if vs.len() == 2 {
        tape.matmul(scores, v)?
    } else {
        tape.batch_matmul(scores, v)?
    };
    Ok((out, scores))
}

pub struct MultiHeadOutput {
    /// Same shape as the input.
    pub output: Var,
    /// `[batch·h, T, T]`, head-major within each batch entry.
    pub scores: Var,
}

/// `Concat(head_1, …, head_h) · W_O` over `[T, d_model]` or `[batch, T, d_model]` input.
pub fn multi_head_attention(tape: &mut Tape, x: Var, params: &AttentionParams<Var>) -> Result<MultiHeadOutput> {
    let in_shape = tape.shape(x).to_vec();
    let (batch, seq, d_model) = match in_shape[..] {
        [t, d] => (1, t, d),
        [b, t, d] => (b, t, d),
        _ => {
            return Err(TensorError::Shape {
                op: "multi_head_attention",
                lhs: in_shape,
                rhs: tape.shape(params.w_query).to_vec(),
            })
        }
    };
    let h = params.heads;
    let width = tape.shape(params.w_query)[1];
    if !width.is_multiple_of(h) {
        return Err(TensorError::Shape {
            op: "multi_head_attention",
            lhs: in_shape,
            rhs: tape.shape(params.w_query).to_vec(),
        });
    }
    let d_k = width / h;
    let rows = tape.reshape(x, &[batch * seq, d_model])?;
    let split = |tape: &mut Tape, w: Var| -> Result<Var> {
        let p = tape.matmul(rows, w)?;
        let p = tape.reshape(p, &[batch, seq, h, d_k])?;
        let p = tape.permute(p, &[0, 2, 1, 3])?;
        tape.reshape(p, &[batch * h, seq, d_k])
    };
    let q = split(tape, params.w_query)?;
    let k = split(tape, params.w_key)?;
    let v = split(tape, params.w_value)?;
    let (heads, scores) = self_attention(tape, q, k, v)?;
    let merged = tape.reshape(heads, &[batch, h, seq, d_k])?;
    let merged = tape.permute(merged, &[0, 2, 1, 3])?;
    let merged = tape.reshape(merged, &[batch * seq, h * d_k])?;
    let out = tape.matmul(merged, params.w_out)?;
    let output = tape.reshape(out, &in_shape)?;
    Ok(MultiHeadOutput { output, scores })
}

/// Pre-norm residual block: `x + MHA(LN(x))`, then `x + MLP(LN(x))`.
pub fn encoder_block(tape: &mut Tape, x: Var, params: &EncoderBlockParams<Var>, pass: &mut Pass) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let d_model = *shape.last().unwrap_or(&0);
    let batch: usize = shape[..shape.len().saturating_sub(2)].iter().product::<usize>().max(1);

    let h = tape.layer_norm(x, params.norm1_gain, params.norm1_bias, LAYER_NORM_EPS)?;
    let mha = multi_head_attention(tape, h, &params.attention)?;
    if let Some(sink) = pass.capture.as_deref_mut() {
        let s = tape.value(mha.scores);
        let (t1, t2) = (s.shape()[1], s.shape()[2]);
        sink.push(s.reshape(&[batch, params.attention.heads, t1, t2])?);
    }
    let attended = match pass.dropout.as_mut() {
        Some(d) => d.apply(tape, mha.output)?,
        None => mha.output,
    };
    let x = tape.add(x, attended)?;

    let h = tape.layer_norm(x, params.norm2_gain, params.norm2_bias, LAYER_NORM_EPS)?;
    let rows = tape.reshape(h, &[shape.iter().product::<usize>() / d_model.max(1), d_model])?;
    let hidden = tape.matmul(rows, params.mlp_in)?;
    let hidden = tape.add_bias(hidden, params.mlp_in_bias)?;
    let hidden = tape.gelu(hidden);
    let out = tape.matmul(hidden, params.mlp_out)?;
    let out = tape.add_bias(out, params.mlp_out_bias)?;
    let out = tape.reshape(out, &shape)?;
    let out = match pass.dropout.as_mut() {
        Some(d) => d.apply(tape, out)?,
        None => out,
    };
    tape.add(x, out)
}
