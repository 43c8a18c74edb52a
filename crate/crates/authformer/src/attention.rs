//! Fusion mathematics: self-attention encoder blocks, two-stage
//! cross-attention image fusion, and the GRN/GLU gated fusion of image
//! and sequence streams.
//!
//! Self-attention blocks are pre-norm (`x + MSA(LN(x))`, then
//! `x + MLP(LN(x))`). Cross-attention blocks apply normalization inside
//! the MLP sub-step only: `B' = CrossMSA(..) + residual`, then
//! `MLP(LN(B')) + B'`. The residual of a cross block is the query-side
//! stream.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet};
use crate::tensor::{Scalar, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Attention geometry shared by all blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AttentionConfig {
    pub model_dim: usize,
    pub heads: usize,
    /// MLP hidden size is `mlp_ratio * model_dim`.
    pub mlp_ratio: usize,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.model_dim == 0 || self.mlp_ratio == 0 {
            return Err(Error::config("attention dims must be positive"));
        }
        if self.model_dim % self.heads != 0 {
            return Err(Error::config(format!(
                "model_dim {} not divisible by {} heads",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

fn register_ln<T: Scalar>(ps: &mut ParamSet<T>, prefix: &str, d: usize) -> Result<()> {
    ps.insert_const(&format!("{prefix}.gamma"), vec![d], 1.0)?;
    ps.insert_const(&format!("{prefix}.beta"), vec![d], 0.0)
}

fn register_mlp<T: Scalar>(
    ps: &mut ParamSet<T>,
    prefix: &str,
    cfg: &AttentionConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    let (d, h) = (cfg.model_dim, cfg.mlp_ratio * cfg.model_dim);
    ps.insert_uniform(&format!("{prefix}.w1"), vec![d, h], d, rng)?;
    ps.insert_const(&format!("{prefix}.b1"), vec![h], 0.0)?;
    ps.insert_uniform(&format!("{prefix}.w2"), vec![h, d], h, rng)?;
    ps.insert_const(&format!("{prefix}.b2"), vec![d], 0.0)
}

fn register_msa<T: Scalar>(
    ps: &mut ParamSet<T>,
    prefix: &str,
    cfg: &AttentionConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    let (d, dh) = (cfg.model_dim, cfg.head_dim());
    for h in 0..cfg.heads {
        ps.insert_uniform(&format!("{prefix}.wq.{h}"), vec![d, dh], d, rng)?;
        ps.insert_uniform(&format!("{prefix}.wk.{h}"), vec![d, dh], d, rng)?;
        ps.insert_uniform(&format!("{prefix}.wv.{h}"), vec![d, dh], d, rng)?;
    }
    ps.insert_uniform(&format!("{prefix}.wo"), vec![d, d], d, rng)?;
    ps.insert_const(&format!("{prefix}.bo"), vec![d], 0.0)
}

/// Register one pre-norm self-attention encoder layer.
pub fn register_encoder_layer<T: Scalar>(
    ps: &mut ParamSet<T>,
    prefix: &str,
    cfg: &AttentionConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    register_ln(ps, &format!("{prefix}.ln1"), cfg.model_dim)?;
    register_msa(ps, &format!("{prefix}.attn"), cfg, rng)?;
    register_ln(ps, &format!("{prefix}.ln2"), cfg.model_dim)?;
    register_mlp(ps, &format!("{prefix}.mlp"), cfg, rng)
}

/// Register one cross-attention fusion block (attention + post LN/MLP).
pub fn register_cross_block<T: Scalar>(
    ps: &mut ParamSet<T>,
    prefix: &str,
    cfg: &AttentionConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    register_msa(ps, &format!("{prefix}.attn"), cfg, rng)?;
    register_ln(ps, &format!("{prefix}.ln"), cfg.model_dim)?;
    register_mlp(ps, &format!("{prefix}.mlp"), cfg, rng)
}

/// Register the shared GRN/GLU parameter set.
pub fn register_grn<T: Scalar>(
    ps: &mut ParamSet<T>,
    prefix: &str,
    d: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    for w in ["w1", "w2", "w3", "w4", "w5"] {
        ps.insert_uniform(&format!("{prefix}.{w}"), vec![d, d], d, rng)?;
    }
    for b in ["b1", "b2", "b4", "b5"] {
        ps.insert_const(&format!("{prefix}.{b}"), vec![d], 0.0)?;
    }
    register_ln(ps, &format!("{prefix}.ln"), d)
}

fn layer_norm_with<T: Scalar>(
    x: &Tensor<T>,
    params: &BoundParams<T>,
    prefix: &str,
) -> Result<Tensor<T>> {
    x.layer_norm(
        params.get(&format!("{prefix}.gamma"))?,
        params.get(&format!("{prefix}.beta"))?,
        T::from_f64(LAYER_NORM_EPS),
    )
}

fn mlp<T: Scalar>(x: &Tensor<T>, params: &BoundParams<T>, prefix: &str) -> Result<Tensor<T>> {
    let h = x
        .affine(params.get(&format!("{prefix}.w1"))?, params.get(&format!("{prefix}.b1"))?)?
        .gelu();
    h.affine(params.get(&format!("{prefix}.w2"))?, params.get(&format!("{prefix}.b2"))?)
}

/// Multi-head attention with queries projected from `q_src`, keys from
/// `k_src`, and values from `v_src`. Softmax runs over key positions;
/// head outputs are concatenated and output-projected.
pub fn cross_msa<T: Scalar>(
    q_src: &Tensor<T>,
    k_src: &Tensor<T>,
    v_src: &Tensor<T>,
    params: &BoundParams<T>,
    prefix: &str,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    let (sq, sk, sv) = (q_src.shape(), k_src.shape(), v_src.shape());
    if sq.len() != 2 || sq[1] != cfg.model_dim {
        return Err(Error::shape(format!("attention expects [N,{}], got {:?}", cfg.model_dim, sq)));
    }
    if sk != sv {
        return Err(Error::shape(format!("key tokens {:?} vs value tokens {:?}", sk, sv)));
    }
    if sk[1] != cfg.model_dim {
        return Err(Error::shape(format!("key/value dim {:?} vs model_dim {}", sk, cfg.model_dim)));
    }
    let scale = T::from_f64(1.0 / (cfg.head_dim() as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let q = q_src.matmul(params.get(&format!("{prefix}.wq.{h}"))?)?;
        let k = k_src.matmul(params.get(&format!("{prefix}.wk.{h}"))?)?;
        let v = v_src.matmul(params.get(&format!("{prefix}.wv.{h}"))?)?;
        let scores = q.matmul(&k.transpose()?)?.scale(scale);
        let weights = scores.softmax(1)?;
        heads.push(weights.matmul(&v)?);
    }
    let cat = q_src.tape().concat(&heads, 1)?;
    cat.affine(params.get(&format!("{prefix}.wo"))?, params.get(&format!("{prefix}.bo"))?)
}

/// Pre-norm transformer encoder applied `layers` times over one stream.
/// Layer `l` reads parameters under `{prefix}.{l}`.
pub fn self_attention_encoder<T: Scalar>(
    tokens: &Tensor<T>,
    params: &BoundParams<T>,
    prefix: &str,
    cfg: &AttentionConfig,
    layers: usize,
) -> Result<Tensor<T>> {
    cfg.validate()?;
    let mut x = tokens.clone();
    for l in 0..layers {
        let p = format!("{prefix}.{l}");
        let normed = layer_norm_with(&x, params, &format!("{p}.ln1"))?;
        let attended = cross_msa(&normed, &normed, &normed, params, &format!("{p}.attn"), cfg)?;
        x = x.add(&attended)?;
        let normed = layer_norm_with(&x, params, &format!("{p}.ln2"))?;
        x = x.add(&mlp(&normed, params, &format!("{p}.mlp"))?)?;
    }
    Ok(x)
}

fn cross_block<T: Scalar>(
    q_src: &Tensor<T>,
    k_src: &Tensor<T>,
    v_src: &Tensor<T>,
    params: &BoundParams<T>,
    prefix: &str,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    let attended = cross_msa(q_src, k_src, v_src, params, &format!("{prefix}.attn"), cfg)?;
    // residual is the query-side stream
    let b = attended.add(q_src)?;
    let normed = layer_norm_with(&b, params, &format!("{prefix}.ln"))?;
    mlp(&normed, params, &format!("{prefix}.mlp"))?.add(&b)
}

/// First fusion stage: queries and keys from the first image stream,
/// values from the second.
pub fn fuse_images_stage1<T: Scalar>(
    face: &Tensor<T>,
    finger: &Tensor<T>,
    params: &BoundParams<T>,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    cross_block(face, face, finger, params, "fuse.stage1", cfg)
}

/// Second fusion stage: queries from the first stream, keys from the
/// stage-1 output, values from the second stream.
pub fn fuse_images_stage2<T: Scalar>(
    face: &Tensor<T>,
    stage1: &Tensor<T>,
    finger: &Tensor<T>,
    params: &BoundParams<T>,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    cross_block(face, stage1, finger, params, "fuse.stage2", cfg)
}

/// `GLU(n) = sigmoid(n.W4 + b4) * (n.W5 + b5)`, row-wise over tokens.
pub fn glu<T: Scalar>(n: &Tensor<T>, params: &BoundParams<T>, prefix: &str) -> Result<Tensor<T>> {
    let gate = n.affine(params.get(&format!("{prefix}.w4"))?, params.get(&format!("{prefix}.b4"))?)?
        .sigmoid();
    let value =
        n.affine(params.get(&format!("{prefix}.w5"))?, params.get(&format!("{prefix}.b5"))?)?;
    gate.mul(&value)
}

/// Gated residual fusion of the fused image stream with the sequence
/// stream: `m2 = sigmoid(B.W2 + S.W3 + b2)`, `m1 = m2.W1 + b1`,
/// output `LN(B + GLU(m1))`.
pub fn grn_fuse<T: Scalar>(
    b_fusion: &Tensor<T>,
    s_voice: &Tensor<T>,
    params: &BoundParams<T>,
    prefix: &str,
) -> Result<Tensor<T>> {
    if b_fusion.shape() != s_voice.shape() {
        return Err(Error::shape(format!(
            "grn_fuse streams {:?} vs {:?}",
            b_fusion.shape(),
            s_voice.shape()
        )));
    }
    let bw = b_fusion.matmul(params.get(&format!("{prefix}.w2"))?)?;
    let sw = s_voice.matmul(params.get(&format!("{prefix}.w3"))?)?;
    let m2 = bw.add(&sw)?.add(params.get(&format!("{prefix}.b2"))?)?.sigmoid();
    let m1 = m2.affine(params.get(&format!("{prefix}.w1"))?, params.get(&format!("{prefix}.b1"))?)?;
    let gated = glu(&m1, params, prefix)?;
    layer_norm_with(&b_fusion.add(&gated)?, params, &format!("{prefix}.ln"))
}
