//! Whole-model assembly: configuration, parameter initialization, and
//! the raw-input forward pass (embedding, routing, head).

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    register_cross_block, register_encoder_layer, register_grn, AttentionConfig,
};
use crate::embedding::{
    embed_sequence, patch_embed, register_image_params, register_sequence_params, EmbedConfig,
    ImageSample, SequenceSample,
};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet};
use crate::router::{
    forward, predict_from_logits, register_head, ModalityBundle, ModalityCombo, ModalityTag,
    RouterConfig,
};
use crate::tensor::{Scalar, Tape, Tensor};

/// Full model configuration; serialized into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed: EmbedConfig,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub encoder_layers: usize,
    pub num_classes: usize,
    pub combination: ModalityCombo,
}

impl ModelConfig {
    pub fn new(combination: ModalityCombo, num_classes: usize) -> Self {
        ModelConfig {
            embed: EmbedConfig::default(),
            heads: 4,
            mlp_ratio: 2,
            encoder_layers: 2,
            num_classes,
            combination,
        }
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            model_dim: self.embed.model_dim,
            heads: self.heads,
            mlp_ratio: self.mlp_ratio,
        }
    }

    pub fn router(&self) -> RouterConfig {
        RouterConfig {
            attn: self.attention(),
            encoder_layers: self.encoder_layers,
            num_classes: self.num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.embed.validate()?;
        self.router().validate()
    }
}

/// One sample's raw modality inputs.
#[derive(Debug, Clone, Default)]
pub struct RawBundle<T> {
    pub images: Vec<ImageSample<T>>,
    pub sequence: Option<SequenceSample<T>>,
}

impl<T: Scalar> RawBundle<T> {
    pub fn tags(&self) -> Vec<ModalityTag> {
        let mut t: Vec<ModalityTag> = self.images.iter().map(|i| i.tag).collect();
        if self.sequence.is_some() {
            t.push(ModalityTag::Voice);
        }
        t
    }

    pub fn combo(&self) -> Result<ModalityCombo> {
        ModalityCombo::new(&self.tags())
    }
}

/// Initialize all parameters a combination needs, in a deterministic
/// order driven by one seeded RNG.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ParamSet<T>> {
    config.validate()?;
    let mut ps = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attn = config.attention();
    for &tag in config.combination.images() {
        register_image_params(&mut ps, &config.embed, tag, &mut rng)?;
        for l in 0..config.encoder_layers {
            register_encoder_layer(&mut ps, &format!("enc.{tag}.{l}"), &attn, &mut rng)?;
        }
    }
    if config.combination.has_voice() {
        register_sequence_params(&mut ps, &config.embed, &mut rng)?;
        for l in 0..config.encoder_layers {
            register_encoder_layer(&mut ps, &format!("enc.voice.{l}"), &attn, &mut rng)?;
        }
    }
    if config.combination.images().len() == 2 {
        register_cross_block(&mut ps, "fuse.stage1", &attn, &mut rng)?;
        register_cross_block(&mut ps, "fuse.stage2", &attn, &mut rng)?;
    }
    if config.combination.has_voice() && !config.combination.images().is_empty() {
        register_grn(&mut ps, "grn", config.embed.model_dim, &mut rng)?;
    }
    register_head(&mut ps, config.embed.model_dim, config.num_classes, &mut rng)?;
    Ok(ps)
}

/// Embed every raw modality onto `tape` and assemble the token bundle.
pub fn embed_bundle<T: Scalar>(
    tape: &Tape<T>,
    raw: &RawBundle<T>,
    config: &ModelConfig,
    bound: &BoundParams<T>,
) -> Result<ModalityBundle<T>> {
    let mut entries = Vec::new();
    for img in &raw.images {
        entries.push((img.tag, patch_embed(tape, img, &config.embed, bound)?));
    }
    if let Some(seq) = &raw.sequence {
        entries.push((ModalityTag::Voice, embed_sequence(tape, seq, &config.embed, bound)?));
    }
    ModalityBundle::new(entries)
}

/// Embedding plus routed forward; returns the logits tensor (tracked if
/// the binding is).
pub fn forward_raw<T: Scalar>(
    tape: &Tape<T>,
    raw: &RawBundle<T>,
    config: &ModelConfig,
    bound: &BoundParams<T>,
) -> Result<Tensor<T>> {
    let bundle = embed_bundle(tape, raw, config, bound)?;
    forward(&bundle, bound, &config.router())
}

/// A configured model with its parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Model<T> {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.num_elements()
    }

    /// Check that a bundle's modalities are covered by this model's
    /// configured combination.
    pub fn supports(&self, combo: &ModalityCombo) -> Result<()> {
        let have = self.config.combination.tags();
        for tag in combo.tags() {
            if !have.contains(&tag) {
                return Err(Error::config(format!(
                    "modality {tag} is not part of this model's combination ({})",
                    self.config.combination
                )));
            }
        }
        Ok(())
    }

    /// Untracked forward pass; returns raw logits.
    pub fn logits(&self, raw: &RawBundle<T>) -> Result<Vec<T>> {
        self.supports(&raw.combo()?)?;
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false)?;
        Ok(forward_raw(&tape, raw, &self.config, &bound)?.data())
    }

    pub fn predict(&self, raw: &RawBundle<T>) -> Result<(usize, Vec<T>)> {
        self.supports(&raw.combo()?)?;
        let tape = Tape::new();
        let bound = self.params.bind(&tape, false)?;
        let logits = forward_raw(&tape, raw, &self.config, &bound)?;
        predict_from_logits(&logits)
    }

    /// Mean cross-entropy over a batch plus the gradient of every
    /// parameter, averaged over the batch.
    pub fn batch_loss_and_grads(
        &self,
        batch: &[(&RawBundle<T>, usize)],
    ) -> Result<(f64, HashMap<String, Vec<T>>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let mut total_loss = 0.0;
        let mut grads: HashMap<String, Vec<T>> = HashMap::new();
        let scale = T::from_f64(1.0 / batch.len() as f64);
        for (raw, label) in batch {
            let tape = Tape::new();
            let bound = self.params.bind(&tape, true)?;
            let logits = forward_raw(&tape, raw, &self.config, &bound)?;
            let c = self.config.num_classes;
            let loss = logits.reshape(&[1, c])?.cross_entropy(&[*label])?;
            total_loss += loss.item().to_f64();
            loss.backward()?;
            for name in self.params.names() {
                let g = bound.grad_of(name)?;
                let acc = grads.entry(name.to_string()).or_insert_with(|| vec![T::zero(); g.len()]);
                for (a, v) in acc.iter_mut().zip(&g) {
                    *a = *a + *v * scale;
                }
            }
        }
        Ok((total_loss / batch.len() as f64, grads))
    }
}

#[cfg(test)]
pub(crate) fn tiny_config(combination: ModalityCombo) -> ModelConfig {
    ModelConfig {
        embed: EmbedConfig {
            patch_size: 4,
            image_h: 8,
            image_w: 8,
            image_c: 1,
            model_dim: 8,
            seq_dim: 4,
            seq_len: 16,
            frame: 4,
            hop: 4,
            tcn_kernel: 2,
            tcn_dilations: vec![1, 2],
            tcn_channels: vec![4, 8],
        },
        heads: 2,
        mlp_ratio: 2,
        encoder_layers: 2,
        num_classes: 3,
        combination,
    }
}
