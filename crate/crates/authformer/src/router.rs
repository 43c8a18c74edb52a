//! Modality routing: accept any valid subset of modalities, pick the
//! computation path, and produce class logits through a shared head.
//!
//! An image pair is canonicalized by a fixed tag priority
//! (face > fingerprint > palmprint) so that the same pair always takes
//! the same query/value roles regardless of input order.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    self_attention_encoder, fuse_images_stage1, fuse_images_stage2, grn_fuse, AttentionConfig,
};
use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamSet};
use crate::tensor::{Scalar, Tensor};

/// One biometric signal channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModalityTag {
    Face,
    Fingerprint,
    Palmprint,
    Voice,
}

impl ModalityTag {
    pub fn is_image(self) -> bool {
        self != ModalityTag::Voice
    }

    /// Canonical ordering priority for image pairs; lower goes first
    /// (query side).
    pub fn priority(self) -> u8 {
        match self {
            ModalityTag::Face => 0,
            ModalityTag::Fingerprint => 1,
            ModalityTag::Palmprint => 2,
            ModalityTag::Voice => 3,
        }
    }

    /// Human-readable label, Table-style capitalization.
    pub fn label(self) -> &'static str {
        match self {
            ModalityTag::Face => "Face",
            ModalityTag::Fingerprint => "Finger",
            ModalityTag::Palmprint => "Palmprint",
            ModalityTag::Voice => "Voice",
        }
    }
}

impl fmt::Display for ModalityTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModalityTag::Face => "face",
            ModalityTag::Fingerprint => "finger",
            ModalityTag::Palmprint => "palmprint",
            ModalityTag::Voice => "voice",
        };
        f.write_str(s)
    }
}

impl FromStr for ModalityTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "face" => Ok(ModalityTag::Face),
            "finger" | "fingerprint" => Ok(ModalityTag::Fingerprint),
            "palm" | "palmprint" => Ok(ModalityTag::Palmprint),
            "voice" => Ok(ModalityTag::Voice),
            other => Err(Error::invalid(format!("unknown modality '{other}'"))),
        }
    }
}

/// A validated, canonically ordered modality combination.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalityCombo {
    images: Vec<ModalityTag>,
    voice: bool,
}

impl ModalityCombo {
    pub fn new(tags: &[ModalityTag]) -> Result<Self> {
        if tags.is_empty() {
            return Err(Error::invalid("no modality provided"));
        }
        let mut images: Vec<ModalityTag> = tags.iter().copied().filter(|t| t.is_image()).collect();
        images.sort_by_key(|t| t.priority());
        images.dedup();
        if images.len() != tags.iter().filter(|t| t.is_image()).count() {
            return Err(Error::invalid("duplicate image modality"));
        }
        if images.len() > 2 {
            return Err(Error::invalid("at most two image modalities"));
        }
        let voice_count = tags.iter().filter(|t| !t.is_image()).count();
        if voice_count > 1 {
            return Err(Error::invalid("at most one sequence modality"));
        }
        Ok(ModalityCombo { images, voice: voice_count == 1 })
    }

    /// Parse a comma-separated list such as `face,finger,voice`.
    pub fn parse(spec: &str) -> Result<Self> {
        let tags: Vec<ModalityTag> =
            spec.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
        Self::new(&tags)
    }

    pub fn images(&self) -> &[ModalityTag] {
        &self.images
    }

    pub fn has_voice(&self) -> bool {
        self.voice
    }

    pub fn tags(&self) -> Vec<ModalityTag> {
        let mut t = self.images.clone();
        if self.voice {
            t.push(ModalityTag::Voice);
        }
        t
    }

    /// Table-style label, e.g. `Finger & Face & Voice` for the trimodal
    /// combination (image tags listed in canonical order).
    pub fn label(&self) -> String {
        self.tags().iter().map(|t| t.label()).collect::<Vec<_>>().join(" & ")
    }

    /// The 13 supported combinations: three single images, voice alone,
    /// three image pairs, three image+voice, three pair+voice.
    pub fn all() -> Vec<ModalityCombo> {
        use ModalityTag::*;
        let sets: [&[ModalityTag]; 13] = [
            &[Palmprint, Fingerprint, Voice],
            &[Face, Palmprint, Voice],
            &[Fingerprint, Face, Voice],
            &[Face, Palmprint],
            &[Face, Voice],
            &[Fingerprint, Palmprint],
            &[Fingerprint, Voice],
            &[Fingerprint, Face],
            &[Palmprint, Voice],
            &[Face],
            &[Palmprint],
            &[Fingerprint],
            &[Voice],
        ];
        sets.iter().map(|s| ModalityCombo::new(s).expect("static combos are valid")).collect()
    }
}

impl fmt::Display for ModalityCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.tags().iter().map(|t| t.to_string()).collect();
        f.write_str(&parts.join(","))
    }
}

/// The computation route for one bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoutePlan {
    SingleImage,
    SingleSequence,
    ImagePair,
    ImagePlusSequence,
    ImagePairPlusSequence,
}

/// One sample's token streams, canonically ordered.
#[derive(Debug)]
pub struct ModalityBundle<T: Scalar> {
    image_a: Option<(ModalityTag, Tensor<T>)>,
    image_b: Option<(ModalityTag, Tensor<T>)>,
    sequence: Option<Tensor<T>>,
}

impl<T: Scalar> ModalityBundle<T> {
    /// Build a bundle from tagged token tensors. Image entries are
    /// reordered by tag priority; input order does not matter.
    pub fn new(entries: Vec<(ModalityTag, Tensor<T>)>) -> Result<Self> {
        let mut images: Vec<(ModalityTag, Tensor<T>)> = Vec::new();
        let mut sequence = None;
        for (tag, tokens) in entries {
            if tag.is_image() {
                if images.iter().any(|(t, _)| *t == tag) {
                    return Err(Error::invalid(format!("duplicate image modality {tag}")));
                }
                images.push((tag, tokens));
            } else {
                if sequence.is_some() {
                    return Err(Error::invalid("at most one sequence modality"));
                }
                sequence = Some(tokens);
            }
        }
        if images.len() > 2 {
            return Err(Error::invalid("at most two image modalities"));
        }
        if images.is_empty() && sequence.is_none() {
            return Err(Error::invalid("no modality provided"));
        }
        images.sort_by_key(|(t, _)| t.priority());
        let mut it = images.into_iter();
        Ok(ModalityBundle { image_a: it.next(), image_b: it.next(), sequence })
    }

    pub fn combo(&self) -> ModalityCombo {
        let mut tags: Vec<ModalityTag> = Vec::new();
        if let Some((t, _)) = &self.image_a {
            tags.push(*t);
        }
        if let Some((t, _)) = &self.image_b {
            tags.push(*t);
        }
        if self.sequence.is_some() {
            tags.push(ModalityTag::Voice);
        }
        ModalityCombo::new(&tags).expect("bundle invariants imply a valid combo")
    }
}

/// Classification head and routing configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterConfig {
    pub attn: AttentionConfig,
    pub encoder_layers: usize,
    pub num_classes: usize,
}

impl RouterConfig {
    pub fn validate(&self) -> Result<()> {
        self.attn.validate()?;
        if self.encoder_layers == 0 {
            return Err(Error::config("encoder_layers must be >= 1"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be >= 2"));
        }
        Ok(())
    }
}

/// Register the shared classification head.
pub fn register_head<T: Scalar>(
    ps: &mut ParamSet<T>,
    d: usize,
    num_classes: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    ps.insert_uniform("head.w", vec![d, num_classes], d, rng)?;
    ps.insert_const("head.b", vec![num_classes], 0.0)
}

/// Occupancy-determined route selection. Deterministic and total over
/// valid bundles.
pub fn plan_route<T: Scalar>(bundle: &ModalityBundle<T>) -> RoutePlan {
    match (bundle.image_a.is_some(), bundle.image_b.is_some(), bundle.sequence.is_some()) {
        (true, true, true) => RoutePlan::ImagePairPlusSequence,
        (true, true, false) => RoutePlan::ImagePair,
        (true, false, true) => RoutePlan::ImagePlusSequence,
        (true, false, false) => RoutePlan::SingleImage,
        (false, false, true) => RoutePlan::SingleSequence,
        _ => unreachable!("bundle invariants forbid image_b without image_a"),
    }
}

fn encode<T: Scalar>(
    tokens: &Tensor<T>,
    tag: ModalityTag,
    params: &BoundParams<T>,
    cfg: &RouterConfig,
) -> Result<Tensor<T>> {
    self_attention_encoder(tokens, params, &format!("enc.{tag}"), &cfg.attn, cfg.encoder_layers)
}

fn head<T: Scalar>(
    tokens: &Tensor<T>,
    params: &BoundParams<T>,
    num_classes: usize,
) -> Result<Tensor<T>> {
    let pooled = tokens.mean_pool(0)?;
    let d = pooled.numel();
    let logits = pooled.reshape(&[1, d])?.affine(params.get("head.w")?, params.get("head.b")?)?;
    logits.reshape(&[num_classes])
}

/// Route-dependent forward pass from token streams to class logits.
pub fn forward<T: Scalar>(
    bundle: &ModalityBundle<T>,
    params: &BoundParams<T>,
    cfg: &RouterConfig,
) -> Result<Tensor<T>> {
    let n = cfg.attn.model_dim;
    for tokens in bundle
        .image_a
        .iter()
        .map(|(_, t)| t)
        .chain(bundle.image_b.iter().map(|(_, t)| t))
        .chain(bundle.sequence.iter())
    {
        let s = tokens.shape();
        if s.len() != 2 || s[1] != n {
            return Err(Error::shape(format!("token stream {:?} does not match [N,{}]", s, n)));
        }
    }
    let fused = match plan_route(bundle) {
        RoutePlan::SingleImage => {
            let (tag, tokens) = bundle.image_a.as_ref().unwrap();
            encode(tokens, *tag, params, cfg)?
        }
        RoutePlan::SingleSequence => {
            encode(bundle.sequence.as_ref().unwrap(), ModalityTag::Voice, params, cfg)?
        }
        RoutePlan::ImagePair => {
            let (tag_a, a) = bundle.image_a.as_ref().unwrap();
            let (tag_b, b) = bundle.image_b.as_ref().unwrap();
            let ea = encode(a, *tag_a, params, cfg)?;
            let eb = encode(b, *tag_b, params, cfg)?;
            let s1 = fuse_images_stage1(&ea, &eb, params, &cfg.attn)?;
            fuse_images_stage2(&ea, &s1, &eb, params, &cfg.attn)?
        }
        RoutePlan::ImagePlusSequence => {
            let (tag, tokens) = bundle.image_a.as_ref().unwrap();
            // single image stream stands in for the fused image stream
            let b_fusion = encode(tokens, *tag, params, cfg)?;
            let voice = encode(bundle.sequence.as_ref().unwrap(), ModalityTag::Voice, params, cfg)?;
            grn_fuse(&b_fusion, &voice, params, "grn")?
        }
        RoutePlan::ImagePairPlusSequence => {
            let (tag_a, a) = bundle.image_a.as_ref().unwrap();
            let (tag_b, b) = bundle.image_b.as_ref().unwrap();
            let ea = encode(a, *tag_a, params, cfg)?;
            let eb = encode(b, *tag_b, params, cfg)?;
            let s1 = fuse_images_stage1(&ea, &eb, params, &cfg.attn)?;
            let b_fusion = fuse_images_stage2(&ea, &s1, &eb, params, &cfg.attn)?;
            let voice = encode(bundle.sequence.as_ref().unwrap(), ModalityTag::Voice, params, cfg)?;
            grn_fuse(&b_fusion, &voice, params, "grn")?
        }
    };
    head(&fused, params, cfg.num_classes)
}

/// Argmax of softmax(logits); ties break toward the lowest class index.
pub fn predict_from_logits<T: Scalar>(logits: &Tensor<T>) -> Result<(usize, Vec<T>)> {
    let probs = logits.softmax(0)?.data();
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok((best, probs))
}

/// Forward plus prediction.
pub fn predict<T: Scalar>(
    bundle: &ModalityBundle<T>,
    params: &BoundParams<T>,
    cfg: &RouterConfig,
) -> Result<(usize, Vec<T>)> {
    predict_from_logits(&forward(bundle, params, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn combo_parsing_and_canonical_order() {
        let a = ModalityCombo::parse("finger,face,voice").unwrap();
        let b = ModalityCombo::parse("face,fingerprint,voice").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.images(), &[ModalityTag::Face, ModalityTag::Fingerprint]);
        assert!(a.has_voice());
        assert_eq!(a.label(), "Face & Finger & Voice");
    }

    #[test]
    fn combo_rejections() {
        assert!(ModalityCombo::parse("").is_err());
        let err = ModalityCombo::parse("face,finger,palmprint").unwrap_err().to_string();
        assert!(err.contains("at most two image modalities"), "{err}");
        assert!(ModalityCombo::parse("face,face").is_err());
    }

    #[test]
    fn thirteen_combinations() {
        let all = ModalityCombo::all();
        assert_eq!(all.len(), 13);
        let labels: Vec<String> = all.iter().map(|c| c.label()).collect();
        assert!(labels.contains(&"Face & Finger & Voice".to_string()));
        assert!(labels.contains(&"Voice".to_string()));
        // all distinct
        let mut dedup = labels.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), 13);
    }

    fn tokens(tape: &Tape<f64>, fill: f64) -> Tensor<f64> {
        tape.constant(vec![fill; 8], &[2, 4]).unwrap()
    }

    #[test]
    fn plan_route_by_occupancy() {
        let tape = Tape::new();
        let b = ModalityBundle::new(vec![(ModalityTag::Face, tokens(&tape, 0.1))]).unwrap();
        assert_eq!(plan_route(&b), RoutePlan::SingleImage);
        let b = ModalityBundle::new(vec![(ModalityTag::Voice, tokens(&tape, 0.1))]).unwrap();
        assert_eq!(plan_route(&b), RoutePlan::SingleSequence);
        let b = ModalityBundle::new(vec![
            (ModalityTag::Fingerprint, tokens(&tape, 0.1)),
            (ModalityTag::Face, tokens(&tape, 0.2)),
            (ModalityTag::Voice, tokens(&tape, 0.3)),
        ])
        .unwrap();
        assert_eq!(plan_route(&b), RoutePlan::ImagePairPlusSequence);
    }

    #[test]
    fn bundle_rejections() {
        let tape: Tape<f64> = Tape::new();
        assert!(ModalityBundle::<f64>::new(vec![]).is_err());
        let three = vec![
            (ModalityTag::Face, tokens(&tape, 0.1)),
            (ModalityTag::Fingerprint, tokens(&tape, 0.2)),
            (ModalityTag::Palmprint, tokens(&tape, 0.3)),
        ];
        let err = ModalityBundle::new(three).unwrap_err().to_string();
        assert!(err.contains("at most two image modalities"), "{err}");
    }

    #[test]
    fn predict_from_logits_rules() {
        let tape: Tape<f64> = Tape::new();
        let l = tape.constant(vec![3.0, 1.0, 1.0], &[3]).unwrap();
        let (cls, probs) = predict_from_logits(&l).unwrap();
        assert_eq!(cls, 0);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let l = tape.constant(vec![2.0, 2.0], &[2]).unwrap();
        assert_eq!(predict_from_logits(&l).unwrap().0, 0, "ties break to lowest index");

        let a = tape.constant(vec![0.4, -1.0, 2.0], &[3]).unwrap();
        let b = tape.constant(vec![0.4 + 5.0, -1.0 + 5.0, 2.0 + 5.0], &[3]).unwrap();
        assert_eq!(predict_from_logits(&a).unwrap().0, predict_from_logits(&b).unwrap().0);
    }
}
