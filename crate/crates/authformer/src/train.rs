//! Training loop, evaluation harnesses, and report emitters.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{blob::BlobElem, Dataset, DatasetManifest, SplitTag};
use crate::error::{Error, Result};
use crate::metrics::{classification_metrics, compute_eer, ClassificationMetrics, EerResult};
use crate::model::{Model, ModelConfig, RawBundle};
use crate::router::{ModalityCombo, ModalityTag};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        match self.optimizer {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || eps <= 0.0 {
                    return Err(Error::config("adam betas must be in [0,1) and eps positive"));
                }
            }
            OptimizerKind::Sgd { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::config("sgd momentum must be in [0,1)"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
}

/// First-moment / second-moment (or velocity) buffers per parameter,
/// kept in f64 regardless of the model element type.
struct OptState {
    m: HashMap<String, Vec<f64>>,
    v: HashMap<String, Vec<f64>>,
    step: u64,
}

impl OptState {
    fn new() -> Self {
        OptState { m: HashMap::new(), v: HashMap::new(), step: 0 }
    }

    fn apply<T: Scalar>(
        &mut self,
        model: &mut Model<T>,
        grads: &HashMap<String, Vec<T>>,
        cfg: &TrainConfig,
    ) -> Result<()> {
        self.step += 1;
        let lr = cfg.learning_rate;
        for (name, g) in grads {
            let p = model.params.get_mut(name)?;
            match cfg.optimizer {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                    let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                    let bc1 = 1.0 - beta1.powi(self.step as i32);
                    let bc2 = 1.0 - beta2.powi(self.step as i32);
                    for i in 0..g.len() {
                        let gi = g[i].to_f64();
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        let w = p.data[i].to_f64() - lr * mhat / (vhat.sqrt() + eps);
                        p.data[i] = T::from_f64(w);
                    }
                }
                OptimizerKind::Sgd { momentum } => {
                    let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
                    for i in 0..g.len() {
                        v[i] = momentum * v[i] + g[i].to_f64();
                        let w = p.data[i].to_f64() - lr * v[i];
                        p.data[i] = T::from_f64(w);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Materialize (bundle, label) pairs for the given sample indices.
pub fn gather_samples<T: BlobElem>(
    dataset: &Dataset<T>,
    samples: &[(usize, usize)],
    combo: &ModalityCombo,
) -> Result<Vec<(RawBundle<T>, usize)>> {
    samples
        .iter()
        .map(|&(i, label)| Ok((dataset.raw_bundle(i, combo)?, label)))
        .collect()
}

/// Train in place; returns the per-epoch loss and wall-clock log.
///
/// Shuffle order is a fixed function of the seed, so identical
/// seed+config runs produce identical trajectories.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    data: &[(RawBundle<T>, usize)],
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut opt = OptState::new();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<(&RawBundle<T>, usize)> =
                chunk.iter().map(|&i| (&data[i].0, data[i].1)).collect();
            let (loss, grads) = model.batch_loss_and_grads(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            opt.apply(model, &grads, cfg)?;
            epoch_loss += loss;
            batches += 1;
        }
        log.push(EpochLog {
            epoch,
            loss: epoch_loss / batches as f64,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}

pub fn evaluate_classification<T: Scalar>(
    model: &Model<T>,
    data: &[(RawBundle<T>, usize)],
) -> Result<ClassificationMetrics> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let mut y_true = Vec::with_capacity(data.len());
    let mut y_pred = Vec::with_capacity(data.len());
    for (raw, label) in data {
        let (pred, _) = model.predict(raw)?;
        y_true.push(*label);
        y_pred.push(pred);
    }
    classification_metrics(&y_true, &y_pred, model.config.num_classes)
}

/// Claimed-identity verification scores.
///
/// Every sample yields one genuine score (softmax probability of its
/// true class) and C-1 impostor scores (probability of each wrong
/// class, exhaustively).
pub fn verification_scores<T: Scalar>(
    model: &Model<T>,
    data: &[(RawBundle<T>, usize)],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut genuine = Vec::new();
    let mut impostor = Vec::new();
    for (raw, label) in data {
        let (_, probs) = model.predict(raw)?;
        for (c, &p) in probs.iter().enumerate() {
            if c == *label {
                genuine.push(Scalar::to_f64(p));
            } else {
                impostor.push(Scalar::to_f64(p));
            }
        }
    }
    Ok((genuine, impostor))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationReport {
    pub tar: f64,
    pub frr: f64,
    pub far: f64,
    pub eer: f64,
    pub threshold: f64,
}

pub fn verification_report(genuine: &[f64], impostor: &[f64]) -> Result<VerificationReport> {
    let EerResult { eer, threshold, far, frr } = compute_eer(genuine, impostor)?;
    Ok(VerificationReport { tar: 1.0 - frr, frr, far, eer, threshold })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_recall: f64,
}

/// Build a model config whose geometry matches a dataset manifest,
/// starting from a template for everything the manifest cannot decide.
pub fn model_config_for(
    template: &ModelConfig,
    manifest: &DatasetManifest,
    combination: ModalityCombo,
) -> Result<ModelConfig> {
    let mut cfg = template.clone();
    cfg.combination = combination;
    cfg.num_classes = manifest.num_classes;
    for desc in &manifest.modalities {
        if desc.tag.is_image() {
            if desc.shape.len() != 3 {
                return Err(Error::config(format!("{} channel is not 3-d", desc.tag)));
            }
            cfg.embed.image_h = desc.shape[0];
            cfg.embed.image_w = desc.shape[1];
            cfg.embed.image_c = desc.shape[2];
        } else {
            cfg.embed.seq_len = desc.shape[0];
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train_and_eval<T: Scalar + BlobElem>(
    dataset: &Dataset<T>,
    config: ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(Model<T>, Vec<EpochLog>, ClassificationMetrics)> {
    let combo = config.combination.clone();
    let mut model = Model::init(config, train_cfg.seed)?;
    let train_set = gather_samples(dataset, &dataset.split_samples(SplitTag::Train), &combo)?;
    let test_set = gather_samples(dataset, &dataset.split_samples(SplitTag::Test), &combo)?;
    let log = train(&mut model, &train_set, train_cfg)?;
    let metrics = evaluate_classification(&model, &test_set)?;
    Ok((model, log, metrics))
}

/// Train and evaluate one model per modality combination, identical
/// hyperparameters and seed throughout.
pub fn ablation_run<T: Scalar + BlobElem>(
    dataset: &Dataset<T>,
    template: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<AblationRow>> {
    for tag in [
        ModalityTag::Face,
        ModalityTag::Fingerprint,
        ModalityTag::Palmprint,
        ModalityTag::Voice,
    ] {
        if !dataset.has_modality(tag) {
            return Err(Error::invalid(format!(
                "ablation needs all four modalities; dataset lacks {tag}"
            )));
        }
    }
    ModalityCombo::all()
        .into_iter()
        .map(|combo| ablation_single(dataset, template, train_cfg, combo))
        .collect()
}

/// Train and evaluate a single combination with the shared
/// hyperparameters; one step of [`ablation_run`].
pub fn ablation_single<T: Scalar + BlobElem>(
    dataset: &Dataset<T>,
    template: &ModelConfig,
    train_cfg: &TrainConfig,
    combo: ModalityCombo,
) -> Result<AblationRow> {
    let config = model_config_for(template, &dataset.manifest, combo.clone())?;
    let (_, _, metrics) = train_and_eval(dataset, config, train_cfg)?;
    Ok(AblationRow {
        label: combo.label(),
        accuracy: metrics.accuracy,
        macro_f1: metrics.macro_f1,
        macro_recall: metrics.macro_recall,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthRow {
    pub layers: usize,
    pub accuracy: f64,
    pub sec_per_epoch: f64,
    pub param_count: usize,
}

/// Train one model per encoder depth and record accuracy, mean
/// wall-clock seconds per epoch, and parameter count.
pub fn depth_sweep<T: Scalar + BlobElem>(
    dataset: &Dataset<T>,
    layer_counts: &[usize],
    template: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<DepthRow>> {
    if layer_counts.is_empty() {
        return Err(Error::invalid("layer_counts must be non-empty"));
    }
    let mut rows = Vec::new();
    for &layers in layer_counts {
        if layers == 0 {
            return Err(Error::invalid("encoder depth must be positive"));
        }
        let mut config =
            model_config_for(template, &dataset.manifest, template.combination.clone())?;
        config.encoder_layers = layers;
        let (model, log, metrics) = train_and_eval(dataset, config, train_cfg)?;
        let sec = log.iter().map(|e| e.seconds).sum::<f64>() / log.len().max(1) as f64;
        rows.push(DepthRow {
            layers,
            accuracy: metrics.accuracy,
            sec_per_epoch: sec,
            param_count: model.param_count(),
        });
    }
    Ok(rows)
}

fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("combination,accuracy,macro_f1,macro_recall\n");
    for r in rows {
        out.push_str(&format!(
            "\"{}\",{},{},{}\n",
            r.label,
            fmt4(r.accuracy),
            fmt4(r.macro_f1),
            fmt4(r.macro_recall)
        ));
    }
    out
}

pub fn depth_csv(rows: &[DepthRow]) -> String {
    let mut out = String::from("layers,accuracy,sec_per_epoch,param_count\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.layers,
            fmt4(r.accuracy),
            fmt4(r.sec_per_epoch),
            r.param_count
        ));
    }
    out
}

pub fn classification_csv(label: &str, m: &ClassificationMetrics) -> String {
    format!(
        "combination,accuracy,macro_f1,macro_recall\n\"{}\",{},{},{}\n",
        label,
        fmt4(m.accuracy),
        fmt4(m.macro_f1),
        fmt4(m.macro_recall)
    )
}

pub fn verification_csv(label: &str, r: &VerificationReport) -> String {
    format!(
        "combination,tar,frr,far,eer,threshold\n\"{}\",{},{},{},{},{}\n",
        label,
        fmt4(r.tar),
        fmt4(r.frr),
        fmt4(r.far),
        fmt4(r.eer),
        fmt4(r.threshold)
    )
}
