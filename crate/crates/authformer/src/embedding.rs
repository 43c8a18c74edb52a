//! Raw modality inputs to token sequences.
//!
//! Images go through a ViT-style patch embedding: non-overlapping
//! patches, flattened, affinely projected to the model dimension, plus a
//! learnable positional table. Voice-like sequences are framed into
//! fixed windows, projected by a learnable embedding, pushed through a
//! stack of causal dilated convolutions, and given their own positional
//! table. Every modality ends up as `[N, D]` tokens with the same N and
//! D so the fusion blocks can mix them freely.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet};
use crate::router::ModalityTag;
use crate::tensor::{Scalar, Tape, Tensor};

/// Geometry of the embedding stage.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EmbedConfig {
    pub patch_size: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub image_c: usize,
    /// Model dimension D shared by all token streams.
    pub model_dim: usize,
    /// Pre-TCN sequence embedding dimension d.
    pub seq_dim: usize,
    pub seq_len: usize,
    pub frame: usize,
    pub hop: usize,
    pub tcn_kernel: usize,
    pub tcn_dilations: Vec<usize>,
    /// Output channels per TCN layer; the last entry must equal `model_dim`.
    pub tcn_channels: Vec<usize>,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            patch_size: 8,
            image_h: 32,
            image_w: 32,
            image_c: 1,
            model_dim: 64,
            seq_dim: 32,
            seq_len: 256,
            frame: 16,
            hop: 16,
            tcn_kernel: 3,
            tcn_dilations: vec![1, 2],
            tcn_channels: vec![32, 64],
        }
    }
}

impl EmbedConfig {
    /// Number of tokens N, from the image patch arithmetic.
    pub fn token_count(&self) -> usize {
        (self.image_h / self.patch_size) * (self.image_w / self.patch_size)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.image_c
    }

    fn frame_count(&self) -> usize {
        if self.seq_len < self.frame {
            0
        } else {
            (self.seq_len - self.frame) / self.hop + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.model_dim == 0 || self.seq_dim == 0 {
            return Err(Error::config("patch_size, model_dim and seq_dim must be positive"));
        }
        if self.image_h % self.patch_size != 0 || self.image_w % self.patch_size != 0 {
            return Err(Error::config(format!(
                "image {}x{} not divisible by patch size {}",
                self.image_h, self.image_w, self.patch_size
            )));
        }
        if self.frame == 0 || self.hop == 0 {
            return Err(Error::config("frame and hop must be positive"));
        }
        if self.frame_count() != self.token_count() {
            return Err(Error::config(format!(
                "sequence framing yields {} frames but images yield {} tokens; \
                 all modalities must share one token count",
                self.frame_count(),
                self.token_count()
            )));
        }
        if self.tcn_dilations.len() != self.tcn_channels.len() || self.tcn_channels.is_empty() {
            return Err(Error::config("tcn dilations and channels must be non-empty and aligned"));
        }
        if self.tcn_dilations.iter().any(|&d| d == 0) {
            return Err(Error::config("tcn dilations must be strictly positive"));
        }
        if *self.tcn_channels.last().unwrap() != self.model_dim {
            return Err(Error::config(format!(
                "last TCN channel count {} must equal model_dim {}",
                self.tcn_channels.last().unwrap(),
                self.model_dim
            )));
        }
        Ok(())
    }
}

/// One image modality input, `[H, W, C]` row-major, values in [0, 1].
#[derive(Debug, Clone)]
pub struct ImageSample<T> {
    pub pixels: Vec<T>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub tag: ModalityTag,
}

impl<T: Scalar> ImageSample<T> {
    pub fn new(
        pixels: Vec<T>,
        height: usize,
        width: usize,
        channels: usize,
        tag: ModalityTag,
    ) -> Result<Self> {
        if tag == ModalityTag::Voice {
            return Err(Error::invalid("voice is not an image modality"));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::invalid(format!(
                "image pixel count {} does not match {}x{}x{}",
                pixels.len(),
                height,
                width,
                channels
            )));
        }
        if pixels.iter().any(|v| !v.is_finite() || *v < T::zero() || *v > T::one()) {
            return Err(Error::invalid("image pixels must be finite and in [0,1]"));
        }
        Ok(ImageSample { pixels, height, width, channels, tag })
    }
}

/// One sequential modality input, a 1-D real signal.
#[derive(Debug, Clone)]
pub struct SequenceSample<T> {
    pub values: Vec<T>,
    pub tag: ModalityTag,
}

impl<T: Scalar> SequenceSample<T> {
    pub fn new(values: Vec<T>, tag: ModalityTag) -> Result<Self> {
        if tag != ModalityTag::Voice {
            return Err(Error::invalid(format!("{tag} is not a sequence modality")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sequence values must be finite"));
        }
        Ok(SequenceSample { values, tag })
    }
}

fn pfx(tag: ModalityTag) -> String {
    format!("embed.{tag}")
}

/// Register patch-embedding parameters for one image modality.
pub fn register_image_params<T: Scalar>(
    ps: &mut ParamSet<T>,
    cfg: &EmbedConfig,
    tag: ModalityTag,
    rng: &mut impl Rng,
) -> Result<()> {
    let p = pfx(tag);
    let (pd, d, n) = (cfg.patch_dim(), cfg.model_dim, cfg.token_count());
    ps.insert_uniform(&format!("{p}.patch_w"), vec![pd, d], pd, rng)?;
    ps.insert_const(&format!("{p}.patch_b"), vec![d], 0.0)?;
    ps.insert_uniform(&format!("{p}.pos"), vec![n, d], d, rng)?;
    Ok(())
}

/// Register frame-embedding, TCN, and positional parameters for the
/// sequence modality.
pub fn register_sequence_params<T: Scalar>(
    ps: &mut ParamSet<T>,
    cfg: &EmbedConfig,
    rng: &mut impl Rng,
) -> Result<()> {
    let p = pfx(ModalityTag::Voice);
    ps.insert_uniform(&format!("{p}.frame_w"), vec![cfg.frame, cfg.seq_dim], cfg.frame, rng)?;
    ps.insert_const(&format!("{p}.frame_b"), vec![cfg.seq_dim], 0.0)?;
    let mut c_in = cfg.seq_dim;
    for (i, &c_out) in cfg.tcn_channels.iter().enumerate() {
        let k = cfg.tcn_kernel;
        ps.insert_uniform(&format!("{p}.tcn.{i}.w"), vec![c_out, c_in, k], c_in * k, rng)?;
        ps.insert_const(&format!("{p}.tcn.{i}.b"), vec![c_out], 0.0)?;
        c_in = c_out;
    }
    ps.insert_uniform(&format!("{p}.pos"), vec![cfg.token_count(), cfg.model_dim], cfg.model_dim, rng)?;
    Ok(())
}

/// Split an image into non-overlapping patches and project each to a
/// D-dimensional token, then add the modality's positional table.
pub fn patch_embed<T: Scalar>(
    tape: &Tape<T>,
    img: &ImageSample<T>,
    cfg: &EmbedConfig,
    params: &BoundParams<T>,
) -> Result<Tensor<T>> {
    if img.height != cfg.image_h || img.width != cfg.image_w || img.channels != cfg.image_c {
        return Err(Error::invalid(format!(
            "image dims {}x{}x{} do not match config {}x{}x{}",
            img.height, img.width, img.channels, cfg.image_h, cfg.image_w, cfg.image_c
        )));
    }
    let ps = cfg.patch_size;
    let (n, pd) = (cfg.token_count(), cfg.patch_dim());
    let (rows, cols) = (cfg.image_h / ps, cfg.image_w / ps);
    let mut flat = vec![T::zero(); n * pd];
    for pr in 0..rows {
        for pc in 0..cols {
            let patch_idx = pr * cols + pc;
            let mut k = 0;
            for dy in 0..ps {
                for dx in 0..ps {
                    for ch in 0..cfg.image_c {
                        let y = pr * ps + dy;
                        let x = pc * ps + dx;
                        flat[patch_idx * pd + k] =
                            img.pixels[(y * cfg.image_w + x) * cfg.image_c + ch];
                        k += 1;
                    }
                }
            }
        }
    }
    let patches = tape.constant(flat, &[n, pd])?;
    let p = pfx(img.tag);
    let tokens = patches
        .affine(params.get(&format!("{p}.patch_w"))?, params.get(&format!("{p}.patch_b"))?)?;
    add_positional(&tokens, params.get(&format!("{p}.pos"))?)
}

/// Frame a raw sequence into N windows (frame i covers samples
/// `[i*hop, i*hop + frame)`) and project each window with the learnable
/// embedding.
pub fn seq_embed<T: Scalar>(
    tape: &Tape<T>,
    sample: &SequenceSample<T>,
    cfg: &EmbedConfig,
    params: &BoundParams<T>,
) -> Result<Tensor<T>> {
    let n = cfg.token_count();
    let t_len = sample.values.len();
    if t_len < (n - 1) * cfg.hop + cfg.frame {
        return Err(Error::invalid(format!(
            "sequence length {} too short for {} frames of {} with hop {}",
            t_len, n, cfg.frame, cfg.hop
        )));
    }
    let mut framed = vec![T::zero(); n * cfg.frame];
    for i in 0..n {
        for j in 0..cfg.frame {
            framed[i * cfg.frame + j] = sample.values[i * cfg.hop + j];
        }
    }
    let frames = tape.constant(framed, &[n, cfg.frame])?;
    let p = pfx(ModalityTag::Voice);
    frames.affine(params.get(&format!("{p}.frame_w"))?, params.get(&format!("{p}.frame_b"))?)
}

/// Causal dilated convolution stack over the embedded frames,
/// projecting the channel dimension up to D. Residual connections apply
/// wherever input and output channel counts match.
pub fn tcn_extract<T: Scalar>(
    e: &Tensor<T>,
    cfg: &EmbedConfig,
    params: &BoundParams<T>,
) -> Result<Tensor<T>> {
    let shape = e.shape();
    if shape.len() != 2 || shape[1] != cfg.seq_dim {
        return Err(Error::invalid(format!(
            "tcn input {:?} does not match configured channels {}",
            shape, cfg.seq_dim
        )));
    }
    let p = pfx(ModalityTag::Voice);
    let mut x = e.clone();
    let mut c_in = cfg.seq_dim;
    for (i, (&c_out, &dil)) in cfg.tcn_channels.iter().zip(&cfg.tcn_dilations).enumerate() {
        let w = params.get(&format!("{p}.tcn.{i}.w"))?;
        let b = params.get(&format!("{p}.tcn.{i}.b"))?;
        let y = x.conv1d_causal(w, b, dil)?.relu();
        x = if c_in == c_out { y.add(&x)? } else { y };
        c_in = c_out;
    }
    Ok(x)
}

/// `S_i = f_i + p_i`.
pub fn add_positional<T: Scalar>(f: &Tensor<T>, pos: &Tensor<T>) -> Result<Tensor<T>> {
    if f.shape() != pos.shape() {
        return Err(Error::shape(format!(
            "positional table {:?} does not match tokens {:?}",
            pos.shape(),
            f.shape()
        )));
    }
    f.add(pos)
}

/// Full sequence pipeline: framing, projection, TCN, positional table.
pub fn embed_sequence<T: Scalar>(
    tape: &Tape<T>,
    sample: &SequenceSample<T>,
    cfg: &EmbedConfig,
    params: &BoundParams<T>,
) -> Result<Tensor<T>> {
    let e = seq_embed(tape, sample, cfg, params)?;
    let f = tcn_extract(&e, cfg, params)?;
    add_positional(&f, params.get(&format!("{}.pos", pfx(ModalityTag::Voice)))?)
}
