//! 64-bit finite-difference verification of every differentiable
//! primitive and the composed model blocks.
//!
//! Primitives are checked on every input coordinate. Composed blocks
//! and the full trimodal forward are checked on a seeded random sample
//! of coordinates per parameter tensor, which keeps the whole suite
//! well under a minute while still exercising the complete graph.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    fuse_images_stage1, fuse_images_stage2, grn_fuse, register_cross_block,
    register_encoder_layer, register_grn, self_attention_encoder, AttentionConfig,
    LAYER_NORM_EPS,
};
use crate::embedding::{
    embed_sequence, patch_embed, register_image_params, register_sequence_params, EmbedConfig,
    ImageSample, SequenceSample,
};
use crate::error::Result;
use crate::model::{forward_raw, init_params, ModelConfig, RawBundle};
use crate::params::{BoundParams, ParamSet};
use crate::router::{ModalityCombo, ModalityTag};
use crate::tensor::{finite_diff_check_multi, Tape, Tensor};

pub const TOLERANCE: f64 = 1e-4;
pub const STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub target: String,
    pub max_rel_err: f64,
}

impl CheckResult {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= TOLERANCE
    }
}

pub fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values bounded away from zero, for kinked activations.
fn rand_vec_off_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

/// Weighted-sum readout so every output coordinate influences the
/// scalar objective differently.
fn weighted_sum(y: &Tensor<f64>, w: &[f64]) -> Result<Tensor<f64>> {
    let wt = y.tape().constant(w.to_vec(), &y.shape())?;
    Ok(y.mul(&wt)?.sum())
}

/// Central-difference check over a seeded sample of coordinates of
/// every parameter tensor; `f` rebuilds the graph from bound params.
fn check_params<F>(
    params: &ParamSet<f64>,
    samples_per_param: usize,
    rng: &mut ChaCha8Rng,
    f: F,
) -> Result<f64>
where
    F: Fn(&Tape<f64>, &BoundParams<f64>) -> Result<Tensor<f64>>,
{
    let tape = Tape::new();
    let bound = params.bind(&tape, true)?;
    let y = f(&tape, &bound)?;
    y.backward()?;

    let eval = |ps: &ParamSet<f64>| -> Result<f64> {
        let tape = Tape::new();
        let bound = ps.bind(&tape, false)?;
        Ok(f(&tape, &bound)?.item())
    };

    let mut max_err: f64 = 0.0;
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let grad = bound.grad_of(name)?;
        let n = grad.len();
        let coords: Vec<usize> = if n <= samples_per_param {
            (0..n).collect()
        } else {
            (0..samples_per_param).map(|_| rng.gen_range(0..n)).collect()
        };
        for i in coords {
            let mut plus = params.clone();
            plus.get_mut(name)?.data[i] += STEP;
            let mut minus = params.clone();
            minus.get_mut(name)?.data[i] -= STEP;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * STEP);
            let err = (grad[i] - numeric).abs() / f64::max(1.0, grad[i].abs());
            max_err = max_err.max(err);
        }
    }
    Ok(max_err)
}

fn primitive_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15) ^ 0xa5);
    let mut out = Vec::new();
    let mut push = |name: &str, err: f64| out.push(CheckResult {
        target: name.to_string(),
        max_rel_err: err,
    });

    let w12 = rand_vec(&mut rng, 12, -1.0, 1.0);
    let x12 = rand_vec(&mut rng, 12, -1.0, 1.0);
    let b4 = rand_vec(&mut rng, 4, -1.0, 1.0);

    push(
        "add_broadcast",
        finite_diff_check_multi(
            |xs| weighted_sum(&xs[0].add(&xs[1])?, &w12),
            &[(x12.clone(), vec![3, 4]), (b4.clone(), vec![4])],
            STEP,
        )?,
    );
    push(
        "mul",
        finite_diff_check_multi(
            |xs| weighted_sum(&xs[0].mul(&xs[1])?, &w12),
            &[(x12.clone(), vec![3, 4]), (rand_vec(&mut rng, 12, -1.0, 1.0), vec![3, 4])],
            STEP,
        )?,
    );
    push(
        "sub",
        finite_diff_check_multi(
            |xs| weighted_sum(&xs[0].sub(&xs[1])?, &w12),
            &[(x12.clone(), vec![3, 4]), (rand_vec(&mut rng, 12, -1.0, 1.0), vec![3, 4])],
            STEP,
        )?,
    );
    push(
        "scale",
        finite_diff_check_multi(
            |xs| weighted_sum(&xs[0].scale(1.7), &w12),
            &[(x12.clone(), vec![3, 4])],
            STEP,
        )?,
    );
    push(
        "reshape",
        finite_diff_check_multi(
            |xs| weighted_sum(&xs[0].reshape(&[4, 3])?, &w12),
            &[(x12.clone(), vec![3, 4])],
            STEP,
        )?,
    );
    push(
        "transpose",
        finite_diff_check_multi(
            |xs| weighted_sum(&xs[0].transpose()?, &w12),
            &[(x12.clone(), vec![3, 4])],
            STEP,
        )?,
    );
    {
        let w6 = rand_vec(&mut rng, 6, -1.0, 1.0);
        push(
            "matmul",
            finite_diff_check_multi(
                |xs| weighted_sum(&xs[0].matmul(&xs[1])?, &w6),
                &[(x12.clone(), vec![3, 4]), (rand_vec(&mut rng, 8, -1.0, 1.0), vec![4, 2])],
                STEP,
            )?,
        );
        push(
            "affine",
            finite_diff_check_multi(
                |xs| weighted_sum(&xs[0].affine(&xs[1], &xs[2])?, &w6),
                &[
                    (x12.clone(), vec![3, 4]),
                    (rand_vec(&mut rng, 8, -1.0, 1.0), vec![4, 2]),
                    (rand_vec(&mut rng, 2, -1.0, 1.0), vec![2]),
                ],
                STEP,
            )?,
        );
    }
    push(
        "softmax",
        finite_diff_check_multi(
            |xs| weighted_sum(&xs[0].softmax(1)?, &w12),
            &[(x12.clone(), vec![3, 4])],
            STEP,
        )?,
    );
    push(
        "layer_norm",
        finite_diff_check_multi(
            |xs| weighted_sum(&xs[0].layer_norm(&xs[1], &xs[2], LAYER_NORM_EPS)?, &w12),
            &[
                (x12.clone(), vec![3, 4]),
                (rand_vec(&mut rng, 4, 0.5, 1.5), vec![4]),
                (b4.clone(), vec![4]),
            ],
            STEP,
        )?,
    );
    push(
        "sigmoid",
        finite_diff_check_multi(
            |xs| weighted_sum(&xs[0].sigmoid(), &w12),
            &[(x12.clone(), vec![3, 4])],
            STEP,
        )?,
    );
    push(
        "relu",
        finite_diff_check_multi(
            |xs| weighted_sum(&xs[0].relu(), &w12),
            &[(rand_vec_off_zero(&mut rng, 12), vec![3, 4])],
            STEP,
        )?,
    );
    push(
        "gelu",
        finite_diff_check_multi(
            |xs| weighted_sum(&xs[0].gelu(), &w12),
            &[(x12.clone(), vec![3, 4])],
            STEP,
        )?,
    );
    {
        let w18 = rand_vec(&mut rng, 18, -1.0, 1.0);
        push(
            "conv1d_causal",
            finite_diff_check_multi(
                |xs| weighted_sum(&xs[0].conv1d_causal(&xs[1], &xs[2], 2)?, &w18),
                &[
                    (rand_vec(&mut rng, 12, -1.0, 1.0), vec![6, 2]),
                    (rand_vec(&mut rng, 12, -1.0, 1.0), vec![3, 2, 2]),
                    (rand_vec(&mut rng, 3, -1.0, 1.0), vec![3]),
                ],
                STEP,
            )?,
        );
    }
    {
        let w4 = rand_vec(&mut rng, 4, -1.0, 1.0);
        push(
            "mean_pool",
            finite_diff_check_multi(
                |xs| weighted_sum(&xs[0].mean_pool(0)?, &w4),
                &[(x12.clone(), vec![3, 4])],
                STEP,
            )?,
        );
    }
    {
        let w20 = rand_vec(&mut rng, 20, -1.0, 1.0);
        push(
            "concat",
            finite_diff_check_multi(
                |xs| weighted_sum(&xs[0].tape().concat(&[xs[0].clone(), xs[1].clone()], 0)?, &w20),
                &[(x12.clone(), vec![3, 4]), (rand_vec(&mut rng, 8, -1.0, 1.0), vec![2, 4])],
                STEP,
            )?,
        );
    }
    push(
        "cross_entropy",
        finite_diff_check_multi(
            |xs| xs[0].cross_entropy(&[0, 2]),
            &[(rand_vec(&mut rng, 6, -1.0, 1.0), vec![2, 3])],
            STEP,
        )?,
    );
    Ok(out)
}

fn attn_cfg() -> AttentionConfig {
    AttentionConfig { model_dim: 8, heads: 2, mlp_ratio: 2 }
}

fn tiny_embed() -> EmbedConfig {
    EmbedConfig {
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
    }
}

fn tiny_model_config() -> Result<ModelConfig> {
    let combo = ModalityCombo::parse("face,finger,voice")?;
    let mut cfg = ModelConfig::new(combo, 3);
    cfg.embed = tiny_embed();
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.encoder_layers = 2;
    cfg.validate()?;
    Ok(cfg)
}

fn composed_checks(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15) ^ 0xc3);
    let cfg = attn_cfg();
    let (n, d) = (4usize, cfg.model_dim);
    let mut out = Vec::new();

    {
        let mut ps = ParamSet::<f64>::new();
        register_encoder_layer(&mut ps, "enc.0", &cfg, &mut rng)?;
        register_encoder_layer(&mut ps, "enc.1", &cfg, &mut rng)?;
        let tokens = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let w = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let err = check_params(&ps, 4, &mut rng, |tape, bound| {
            let x = tape.constant(tokens.clone(), &[n, d])?;
            let y = self_attention_encoder(&x, bound, "enc", &cfg, 2)?;
            weighted_sum(&y, &w)
        })?;
        out.push(CheckResult { target: "encoder_2_layers".into(), max_rel_err: err });
    }
    {
        let mut ps = ParamSet::<f64>::new();
        register_cross_block(&mut ps, "fuse.stage1", &cfg, &mut rng)?;
        register_cross_block(&mut ps, "fuse.stage2", &cfg, &mut rng)?;
        let a = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let b = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let w = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let err = check_params(&ps, 4, &mut rng, |tape, bound| {
            let xa = tape.constant(a.clone(), &[n, d])?;
            let xb = tape.constant(b.clone(), &[n, d])?;
            let s1 = fuse_images_stage1(&xa, &xb, bound, &cfg)?;
            let s2 = fuse_images_stage2(&xa, &s1, &xb, bound, &cfg)?;
            weighted_sum(&s2, &w)
        })?;
        out.push(CheckResult { target: "two_stage_fusion".into(), max_rel_err: err });
    }
    {
        let mut ps = ParamSet::<f64>::new();
        register_grn(&mut ps, "grn", d, &mut rng)?;
        let b = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let s = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let w = rand_vec(&mut rng, n * d, -1.0, 1.0);
        let err = check_params(&ps, 4, &mut rng, |tape, bound| {
            let xb = tape.constant(b.clone(), &[n, d])?;
            let xs = tape.constant(s.clone(), &[n, d])?;
            weighted_sum(&grn_fuse(&xb, &xs, bound, "grn")?, &w)
        })?;
        out.push(CheckResult { target: "grn_fuse".into(), max_rel_err: err });
    }
    {
        let embed = tiny_embed();
        let mut ps = ParamSet::<f64>::new();
        register_image_params(&mut ps, &embed, ModalityTag::Face, &mut rng)?;
        let npix = embed.image_h * embed.image_w * embed.image_c;
        let img = ImageSample::new(
            rand_vec(&mut rng, npix, 0.0, 1.0),
            embed.image_h,
            embed.image_w,
            embed.image_c,
            ModalityTag::Face,
        )?;
        let w = rand_vec(&mut rng, embed.token_count() * embed.model_dim, -1.0, 1.0);
        let err = check_params(&ps, 4, &mut rng, |tape, bound| {
            weighted_sum(&patch_embed(tape, &img, &embed, bound)?, &w)
        })?;
        out.push(CheckResult { target: "patch_embed".into(), max_rel_err: err });
    }
    {
        let embed = tiny_embed();
        let mut ps = ParamSet::<f64>::new();
        register_sequence_params(&mut ps, &embed, &mut rng)?;
        let seq =
            SequenceSample::new(rand_vec(&mut rng, embed.seq_len, -1.0, 1.0), ModalityTag::Voice)?;
        let w = rand_vec(&mut rng, embed.token_count() * embed.model_dim, -1.0, 1.0);
        let err = check_params(&ps, 4, &mut rng, |tape, bound| {
            weighted_sum(&embed_sequence(tape, &seq, &embed, bound)?, &w)
        })?;
        out.push(CheckResult { target: "sequence_embed_tcn".into(), max_rel_err: err });
    }
    {
        let config = tiny_model_config()?;
        let ps = init_params::<f64>(&config, seed)?;
        let embed = &config.embed;
        let npix = embed.image_h * embed.image_w * embed.image_c;
        let mk_img = |rng: &mut ChaCha8Rng, tag| {
            ImageSample::new(
                rand_vec(rng, npix, 0.0, 1.0),
                embed.image_h,
                embed.image_w,
                embed.image_c,
                tag,
            )
        };
        let raw = RawBundle {
            images: vec![
                mk_img(&mut rng, ModalityTag::Face)?,
                mk_img(&mut rng, ModalityTag::Fingerprint)?,
            ],
            sequence: Some(SequenceSample::new(
                rand_vec(&mut rng, embed.seq_len, -1.0, 1.0),
                ModalityTag::Voice,
            )?),
        };
        let c = config.num_classes;
        let err = check_params(&ps, 3, &mut rng, |tape, bound| {
            let logits = forward_raw(tape, &raw, &config, bound)?;
            logits.reshape(&[1, c])?.cross_entropy(&[1])
        })?;
        out.push(CheckResult { target: "trimodal_forward".into(), max_rel_err: err });
    }
    Ok(out)
}

/// Run every check across the given seeds; per target, the worst error
/// over all seeds is reported.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<CheckResult>> {
    let mut worst: Vec<CheckResult> = Vec::new();
    for &seed in seeds {
        let mut round = primitive_checks(seed)?;
        round.extend(composed_checks(seed)?);
        for r in round {
            match worst.iter_mut().find(|w| w.target == r.target) {
                Some(w) => w.max_rel_err = w.max_rel_err.max(r.max_rel_err),
                None => worst.push(r),
            }
        }
    }
    Ok(worst)
}
