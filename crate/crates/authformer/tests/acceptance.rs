//! End-to-end acceptance suite. Each test prints one pass/fail line.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

use authformer::attention::{
    fuse_images_stage1, fuse_images_stage2, glu, grn_fuse, register_cross_block,
    register_encoder_layer, register_grn, self_attention_encoder, AttentionConfig,
    LAYER_NORM_EPS,
};
use authformer::data::blob::{encode_blob, read_blob};
use authformer::data::checkpoint::{load_checkpoint, save_checkpoint};
use authformer::data::{generate_synthetic, load_dataset, split_dataset, Dataset, SynthConfig};
use authformer::embedding::{patch_embed, EmbedConfig};
use authformer::gradcheck;
use authformer::metrics::{classification_metrics, compute_eer};
use authformer::model::{Model, ModelConfig, RawBundle};
use authformer::params::ParamSet;
use authformer::router::{ModalityCombo, ModalityTag};
use authformer::tensor::Tape;
use authformer::train::{
    ablation_csv, ablation_run, depth_sweep, evaluate_classification, gather_samples, train,
    TrainConfig,
};
use authformer::data::SplitTag;

type Check = Result<(), String>;

fn report(criterion: usize, desc: &str, result: Check) {
    match result {
        Ok(()) => println!("criterion {criterion}: PASS - {desc}"),
        Err(msg) => {
            println!("criterion {criterion}: FAIL - {desc}: {msg}");
            panic!("criterion {criterion} failed: {msg}");
        }
    }
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

fn tiny_model_config(combo: ModalityCombo, classes: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(combo, classes);
    cfg.embed = tiny_embed();
    cfg.heads = 2;
    cfg.mlp_ratio = 2;
    cfg.encoder_layers = 2;
    cfg
}

fn tiny_synth() -> SynthConfig {
    SynthConfig {
        num_classes: 3,
        samples_per_class: 6,
        seed: 42,
        noise_level: 0.1,
        image_h: 8,
        image_w: 8,
        image_c: 1,
        seq_len: 16,
        test_fraction: 0.34,
    }
}

fn tiny_dataset(dir: &Path) -> Dataset<f32> {
    generate_synthetic(dir, &tiny_synth()).expect("generate tiny dataset");
    load_dataset(dir).expect("load tiny dataset")
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn close32(a: &[f32], b: &[f32], tol: f32) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn criterion_01_gradient_correctness() {
    report(1, "gradient correctness across 10 seeds within 60s", (|| {
        let start = Instant::now();
        let results = gradcheck::run_suite(&gradcheck::default_seeds())
            .map_err(|e| e.to_string())?;
        for r in &results {
            if !r.pass() {
                return Err(format!(
                    "target {} max relative error {:.3e} exceeds {:.0e}",
                    r.target,
                    r.max_rel_err,
                    gradcheck::TOLERANCE
                ));
            }
        }
        let elapsed = start.elapsed().as_secs_f64();
        if elapsed >= 60.0 {
            return Err(format!("suite took {elapsed:.1}s"));
        }
        Ok(())
    })());
}

#[test]
fn criterion_02_algebraic_identities() {
    report(2, "algebraic identities within 1e-6", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = 8usize;
        let n = 4usize;
        let cfg = AttentionConfig { model_dim: d, heads: 2, mlp_ratio: 2 };

        // softmax rows sum to one and are shift invariant
        {
            let tape: Tape<f64> = Tape::new();
            let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let t = tape.constant(x.clone(), &[n, d]).unwrap();
            let s = t.softmax(1).map_err(|e| e.to_string())?.data();
            for row in s.chunks(d) {
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > 1e-6 {
                    return Err(format!("softmax row sum {total}"));
                }
            }
            let shifted: Vec<f64> = x.iter().map(|v| v + 11.5).collect();
            let t2 = tape.constant(shifted, &[n, d]).unwrap();
            let s2 = t2.softmax(1).map_err(|e| e.to_string())?.data();
            if !close(&s, &s2, 1e-6) {
                return Err("softmax not shift invariant".into());
            }
        }

        // layer-norm output rows have zero mean and unit variance
        {
            let tape: Tape<f64> = Tape::new();
            let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let t = tape.constant(x, &[n, d]).unwrap();
            let gamma = tape.constant(vec![1.0; d], &[d]).unwrap();
            let beta = tape.constant(vec![0.0; d], &[d]).unwrap();
            let y = t.layer_norm(&gamma, &beta, LAYER_NORM_EPS).map_err(|e| e.to_string())?;
            for row in y.data().chunks(d) {
                let mean: f64 = row.iter().sum::<f64>() / d as f64;
                let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
                if mean.abs() > 1e-6 || (var - 1.0).abs() > 1e-6 {
                    return Err(format!("layer-norm moments mean {mean:.2e} var {var}"));
                }
            }
        }

        // GLU with zero gate weights and identity value path halves n
        {
            let mut ps: ParamSet<f64> = ParamSet::new();
            register_grn(&mut ps, "grn", d, &mut rng).unwrap();
            for v in ps.get_mut("grn.w4").unwrap().data.iter_mut() {
                *v = 0.0;
            }
            let w5 = &mut ps.get_mut("grn.w5").unwrap().data;
            for (i, v) in w5.iter_mut().enumerate() {
                *v = if i / d == i % d { 1.0 } else { 0.0 };
            }
            let tape = Tape::new();
            let bound = ps.bind(&tape, false).unwrap();
            let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let t = tape.constant(x.clone(), &[n, d]).unwrap();
            let g = glu(&t, &bound, "grn").map_err(|e| e.to_string())?.data();
            let half: Vec<f64> = x.iter().map(|v| 0.5 * v).collect();
            if !close(&g, &half, 1e-6) {
                return Err("GLU identity (W4=0, W5=I) failed".into());
            }
        }

        // GRN with zeroed value path reduces to LN(B), independent of S
        {
            let mut ps: ParamSet<f64> = ParamSet::new();
            register_grn(&mut ps, "grn", d, &mut rng).unwrap();
            for v in ps.get_mut("grn.w5").unwrap().data.iter_mut() {
                *v = 0.0;
            }
            let tape = Tape::new();
            let bound = ps.bind(&tape, false).unwrap();
            let b: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s1: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s2: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let tb = tape.constant(b.clone(), &[n, d]).unwrap();
            let ts1 = tape.constant(s1, &[n, d]).unwrap();
            let ts2 = tape.constant(s2, &[n, d]).unwrap();
            let o1 = grn_fuse(&tb, &ts1, &bound, "grn").map_err(|e| e.to_string())?.data();
            let o2 = grn_fuse(&tb, &ts2, &bound, "grn").map_err(|e| e.to_string())?.data();
            let gamma = bound.get("grn.ln.gamma").unwrap();
            let beta = bound.get("grn.ln.beta").unwrap();
            let ln = tb.layer_norm(gamma, beta, LAYER_NORM_EPS).map_err(|e| e.to_string())?.data();
            if !close(&o1, &o2, 1e-6) {
                return Err("closed-gate GRN still depends on S".into());
            }
            if !close(&o1, &ln, 1e-6) {
                return Err("closed-gate GRN does not equal LN(B)".into());
            }
        }

        // zeroed output projections make attention blocks pass-through
        {
            let mut ps: ParamSet<f64> = ParamSet::new();
            register_encoder_layer(&mut ps, "enc.0", &cfg, &mut rng).unwrap();
            register_cross_block(&mut ps, "fuse.stage1", &cfg, &mut rng).unwrap();
            for name in ["enc.0.attn.wo", "enc.0.mlp.w2", "fuse.stage1.attn.wo", "fuse.stage1.mlp.w2"]
            {
                for v in ps.get_mut(name).unwrap().data.iter_mut() {
                    *v = 0.0;
                }
            }
            let tape = Tape::new();
            let bound = ps.bind(&tape, false).unwrap();
            let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let o: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let tx = tape.constant(x.clone(), &[n, d]).unwrap();
            let to = tape.constant(o, &[n, d]).unwrap();
            let enc = self_attention_encoder(&tx, &bound, "enc", &cfg, 1)
                .map_err(|e| e.to_string())?
                .data();
            if !close(&enc, &x, 1e-6) {
                return Err("zeroed self-attention layer is not identity".into());
            }
            let fused = fuse_images_stage1(&tx, &to, &bound, &cfg)
                .map_err(|e| e.to_string())?
                .data();
            if !close(&fused, &x, 1e-6) {
                return Err("zeroed cross block does not pass the query stream through".into());
            }
        }
        Ok(())
    })());
}

#[test]
fn criterion_03_router_coverage() {
    report(3, "13 combinations route; invalid bundles rejected; order canonical", (|| {
        let dir = tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        for combo in ModalityCombo::all() {
            let model =
                Model::<f32>::init(tiny_model_config(combo.clone(), ds.num_classes()), 5)
                    .map_err(|e| e.to_string())?;
            let raw = ds.raw_bundle(0, &combo).map_err(|e| e.to_string())?;
            let logits = model.logits(&raw).map_err(|e| e.to_string())?;
            if logits.len() != ds.num_classes() {
                return Err(format!(
                    "{}: got {} logits for {} classes",
                    combo.label(),
                    logits.len(),
                    ds.num_classes()
                ));
            }
        }
        if RawBundle::<f32>::default().combo().is_ok() {
            return Err("empty bundle was accepted".into());
        }
        if ModalityCombo::parse("face,finger,palmprint").is_ok() {
            return Err("three-image combination was accepted".into());
        }

        let combo = ModalityCombo::parse("face,finger").unwrap();
        let model = Model::<f32>::init(tiny_model_config(combo.clone(), ds.num_classes()), 5)
            .map_err(|e| e.to_string())?;
        let raw = ds.raw_bundle(1, &combo).map_err(|e| e.to_string())?;
        let mut swapped = raw.clone();
        swapped.images.reverse();
        let a = model.logits(&raw).map_err(|e| e.to_string())?;
        let b = model.logits(&swapped).map_err(|e| e.to_string())?;
        if !close32(&a, &b, 1e-6) {
            return Err("image order changed the logits".into());
        }
        Ok(())
    })());
}

#[test]
fn criterion_04_closed_gate_route_equivalence() {
    report(4, "closed GLU gate reduces the trimodal route to fused pair + LN + head", (|| {
        let dir = tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let trimodal = ModalityCombo::parse("face,finger,voice").unwrap();
        let mut model =
            Model::<f64>::init(tiny_model_config(trimodal.clone(), ds.num_classes()), 11)
                .map_err(|e| e.to_string())?;
        for name in ["grn.w5", "grn.b5"] {
            for v in model.params.get_mut(name).unwrap().data.iter_mut() {
                *v = 0.0;
            }
        }
        let raw: RawBundle<f64> = {
            let raw32 = ds.raw_bundle(2, &trimodal).map_err(|e| e.to_string())?;
            let mut images = Vec::new();
            for img in &raw32.images {
                images.push(
                    authformer::embedding::ImageSample::new(
                        img.pixels.iter().map(|&v| v as f64).collect(),
                        img.height,
                        img.width,
                        img.channels,
                        img.tag,
                    )
                    .unwrap(),
                );
            }
            let seq = raw32.sequence.as_ref().map(|s| {
                authformer::embedding::SequenceSample::new(
                    s.values.iter().map(|&v| v as f64).collect(),
                    s.tag,
                )
                .unwrap()
            });
            RawBundle { images, sequence: seq }
        };
        let routed = model.logits(&raw).map_err(|e| e.to_string())?;

        // reference: pair fusion, then the GRN's LN, then the head
        let cfg = &model.config;
        let attn = cfg.attention();
        let tape = Tape::new();
        let bound = model.params.bind(&tape, false).unwrap();
        let face = raw.images.iter().find(|i| i.tag == ModalityTag::Face).unwrap();
        let finger = raw.images.iter().find(|i| i.tag == ModalityTag::Fingerprint).unwrap();
        let ef = {
            let e = patch_embed(&tape, face, &cfg.embed, &bound).map_err(|e| e.to_string())?;
            self_attention_encoder(&e, &bound, "enc.face", &attn, cfg.encoder_layers)
                .map_err(|e| e.to_string())?
        };
        let eg = {
            let e = patch_embed(&tape, finger, &cfg.embed, &bound).map_err(|e| e.to_string())?;
            self_attention_encoder(&e, &bound, "enc.finger", &attn, cfg.encoder_layers)
                .map_err(|e| e.to_string())?
        };
        let s1 = fuse_images_stage1(&ef, &eg, &bound, &attn).map_err(|e| e.to_string())?;
        let fused = fuse_images_stage2(&ef, &s1, &eg, &bound, &attn).map_err(|e| e.to_string())?;
        let normed = fused
            .layer_norm(
                bound.get("grn.ln.gamma").unwrap(),
                bound.get("grn.ln.beta").unwrap(),
                LAYER_NORM_EPS,
            )
            .map_err(|e| e.to_string())?;
        let pooled = normed.mean_pool(0).map_err(|e| e.to_string())?;
        let dmodel = pooled.numel();
        let reference = pooled
            .reshape(&[1, dmodel])
            .unwrap()
            .affine(bound.get("head.w").unwrap(), bound.get("head.b").unwrap())
            .map_err(|e| e.to_string())?
            .data();
        if !close(&routed, &reference, 1e-6) {
            return Err(format!("routed {routed:?} vs reference {reference:?}"));
        }
        Ok(())
    })());
}

/// Independent brute-force EER oracle over the same candidate set.
fn eer_oracle(genuine: &[f64], impostor: &[f64]) -> (f64, f64) {
    let mut pooled: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pooled.dedup();
    let mut cands = vec![0.0, 1.0];
    for i in 1..pooled.len() {
        cands.push(0.5 * (pooled[i - 1] + pooled[i]));
    }
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best_gap = f64::INFINITY;
    let mut best = (0.0, 0.0);
    for &t in &cands {
        let far = impostor.iter().filter(|&&s| s >= t).count() as f64 / impostor.len() as f64;
        let frr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
        let gap = (far - frr).abs();
        if gap < best_gap {
            best_gap = gap;
            best = (0.5 * (far + frr), t);
        }
    }
    best
}

#[test]
fn criterion_05_eer_oracle_equivalence() {
    report(5, "compute_eer matches brute-force oracle on 1000 random pairs", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        for trial in 0..1000 {
            let ng = rng.gen_range(5..=50);
            let ni = rng.gen_range(5..=50);
            let genuine: Vec<f64> = (0..ng).map(|_| rng.gen_range(0.0..1.0)).collect();
            let impostor: Vec<f64> = (0..ni).map(|_| rng.gen_range(0.0..1.0)).collect();
            let r = compute_eer(&genuine, &impostor).map_err(|e| e.to_string())?;
            let (eer, thr) = eer_oracle(&genuine, &impostor);
            if r.eer != eer || r.threshold != thr {
                return Err(format!(
                    "trial {trial}: ({}, {}) vs oracle ({eer}, {thr})",
                    r.eer, r.threshold
                ));
            }
        }
        let sep = compute_eer(&[0.9, 0.8], &[0.1, 0.2]).unwrap();
        if sep.eer != 0.0 {
            return Err("perfect separation did not give EER 0".into());
        }
        let same = compute_eer(&[0.3, 0.6, 0.9], &[0.3, 0.6, 0.9]).unwrap();
        if (same.eer - 0.5).abs() > 1e-12 {
            return Err("identical lists did not give EER 0.5".into());
        }
        Ok(())
    })());
}

#[test]
fn criterion_06_metric_oracle_equivalence() {
    report(6, "classification metrics match hand-computed and naive oracles", (|| {
        let m = classification_metrics(&[0, 0, 1, 1], &[0, 1, 1, 1], 2)
            .map_err(|e| e.to_string())?;
        if (m.accuracy - 0.75).abs() > 1e-4
            || (m.macro_recall - 0.75).abs() > 1e-4
            || (m.macro_f1 - 0.7333).abs() > 1e-4
        {
            return Err(format!(
                "fixture gave acc {} recall {} f1 {}",
                m.accuracy, m.macro_recall, m.macro_f1
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(66);
        for trial in 0..100 {
            let k = rng.gen_range(2..6);
            let n = rng.gen_range(1..30);
            let yt: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let yp: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            let m = classification_metrics(&yt, &yp, k).map_err(|e| e.to_string())?;
            let acc = yt.iter().zip(&yp).filter(|(a, b)| a == b).count() as f64 / n as f64;
            let mut recall = 0.0;
            let mut f1 = 0.0;
            for c in 0..k {
                let tp = yt.iter().zip(&yp).filter(|(&t, &p)| t == c && p == c).count() as f64;
                let sup = yt.iter().filter(|&&t| t == c).count() as f64;
                let pred = yp.iter().filter(|&&p| p == c).count() as f64;
                let r = if sup > 0.0 { tp / sup } else { 0.0 };
                let p = if pred > 0.0 { tp / pred } else { 0.0 };
                recall += r / k as f64;
                f1 += if p + r > 0.0 { 2.0 * p * r / (p + r) / k as f64 } else { 0.0 };
            }
            if (m.accuracy - acc).abs() > 1e-12
                || (m.macro_recall - recall).abs() > 1e-12
                || (m.macro_f1 - f1).abs() > 1e-12
            {
                return Err(format!("trial {trial} disagrees with naive oracle"));
            }
        }
        Ok(())
    })());
}

#[test]
fn criterion_07_synthetic_end_to_end() {
    report(7, "trimodal >= 0.95 within 30 epochs / 5 min and >= best unimodal - 0.02", (|| {
        let dir = tempdir().unwrap();
        generate_synthetic(dir.path(), &SynthConfig::default()).map_err(|e| e.to_string())?;
        let ds: Dataset<f32> = load_dataset(dir.path()).map_err(|e| e.to_string())?;
        let tc = TrainConfig::default();
        let run = |combo: ModalityCombo| -> Result<(f64, f64), String> {
            let mut cfg = ModelConfig::new(combo.clone(), ds.num_classes());
            cfg.encoder_layers = 2;
            let mut model = Model::<f32>::init(cfg, tc.seed).map_err(|e| e.to_string())?;
            let train_set = gather_samples(&ds, &ds.split_samples(SplitTag::Train), &combo)
                .map_err(|e| e.to_string())?;
            let test_set = gather_samples(&ds, &ds.split_samples(SplitTag::Test), &combo)
                .map_err(|e| e.to_string())?;
            let start = Instant::now();
            train(&mut model, &train_set, &tc).map_err(|e| e.to_string())?;
            let secs = start.elapsed().as_secs_f64();
            let m = evaluate_classification(&model, &test_set).map_err(|e| e.to_string())?;
            Ok((m.accuracy, secs))
        };
        let (tri_acc, tri_secs) = run(ModalityCombo::parse("face,finger,voice").unwrap())?;
        if tri_acc < 0.95 {
            return Err(format!("trimodal accuracy {tri_acc:.4} < 0.95"));
        }
        if tri_secs > 300.0 {
            return Err(format!("trimodal training took {tri_secs:.0}s > 300s"));
        }
        let mut best_uni: f64 = 0.0;
        for m in ["face", "finger", "voice"] {
            let (acc, _) = run(ModalityCombo::parse(m).unwrap())?;
            best_uni = best_uni.max(acc);
        }
        if tri_acc < best_uni - 0.02 {
            return Err(format!(
                "trimodal {tri_acc:.4} below best unimodal {best_uni:.4} - 0.02"
            ));
        }
        Ok(())
    })());
}

#[test]
fn criterion_08_depth_sweep() {
    report(8, "depth sweep 1..6 completes with affine parameter growth; default depth 2", (|| {
        let dir = tempdir().unwrap();
        let ds = tiny_dataset(dir.path());
        let template = tiny_model_config(
            ModalityCombo::parse("face,finger,voice").unwrap(),
            ds.num_classes(),
        );
        let tc = TrainConfig { epochs: 1, batch_size: 4, ..Default::default() };
        let rows = depth_sweep(&ds, &[1, 2, 3, 4, 5, 6], &template, &tc)
            .map_err(|e| e.to_string())?;
        if rows.len() != 6 {
            return Err(format!("expected 6 rows, got {}", rows.len()));
        }
        let increment = rows[1].param_count - rows[0].param_count;
        for w in rows.windows(2) {
            if w[1].param_count - w[0].param_count != increment {
                return Err(format!(
                    "non-constant parameter increment: {:?}",
                    rows.iter().map(|r| r.param_count).collect::<Vec<_>>()
                ));
            }
        }
        let default = ModelConfig::new(ModalityCombo::parse("face").unwrap(), 8);
        if default.encoder_layers != 2 {
            return Err(format!("default depth is {}", default.encoder_layers));
        }
        Ok(())
    })());
}

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn golden_blob_bytes() -> Vec<u8> {
    encode_blob(&[2, 3], &[0.0f32, 0.5, 1.0, 1.5, 2.0, 2.5]).unwrap()
}

fn golden_checkpoint_parts() -> (ModelConfig, ParamSet<f32>) {
    let config = tiny_model_config(ModalityCombo::parse("face").unwrap(), 2);
    let mut params: ParamSet<f32> = ParamSet::new();
    let w: Vec<f32> = (0..16).map(|i| i as f32 * 0.125 - 1.0).collect();
    params.insert("head.w", vec![8, 2], w).unwrap();
    params.insert("head.b", vec![2], vec![0.25, -0.25]).unwrap();
    params
        .insert("embed.face.patch_b", vec![8], (0..8).map(|i| i as f32 * 0.5).collect())
        .unwrap();
    (config, params)
}

/// Run manually with `--ignored` to rewrite the golden fixtures.
#[test]
#[ignore]
fn regenerate_golden_fixtures() {
    let dir = fixtures_dir();
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("golden.atf"), golden_blob_bytes()).unwrap();
    let (config, params) = golden_checkpoint_parts();
    save_checkpoint(&dir.join("golden.afck"), &config, &params).unwrap();
}

#[test]
fn criterion_09_persistence() {
    report(9, "bit-exact persistence, checksum rejection, golden fixtures", (|| {
        let dir = tempdir().unwrap();

        // dataset generate -> load round trip
        let manifest = generate_synthetic(dir.path(), &tiny_synth()).map_err(|e| e.to_string())?;
        let ds: Dataset<f32> = load_dataset(dir.path()).map_err(|e| e.to_string())?;
        if ds.manifest != manifest {
            return Err("manifest changed across round trip".into());
        }
        for desc in &manifest.modalities {
            let path = dir.path().join(&desc.blob);
            let (_, data): (Vec<usize>, Vec<f32>) = read_blob(&path).map_err(|e| e.to_string())?;
            let reencoded = std::fs::read(&path).unwrap();
            let mut expect = vec![manifest.num_samples()];
            expect.extend_from_slice(&desc.shape);
            if encode_blob(&expect, &data).unwrap() != reencoded {
                return Err(format!("{} is not canonical", desc.blob));
            }
        }

        // checkpoint round trip is bitwise exact; corruption is rejected
        let combo = ModalityCombo::parse("face,voice").unwrap();
        let config = tiny_model_config(combo, 3);
        let model = Model::<f32>::init(config, 17).map_err(|e| e.to_string())?;
        let ckpt = dir.path().join("model.afck");
        save_checkpoint(&ckpt, &model.config, &model.params).map_err(|e| e.to_string())?;
        let (config2, params2) = load_checkpoint::<f32>(&ckpt).map_err(|e| e.to_string())?;
        if config2 != model.config {
            return Err("checkpoint config changed".into());
        }
        for ((n1, a), (_, b)) in model.params.iter().zip(params2.iter()) {
            let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            if ab != bb {
                return Err(format!("parameter {n1} not bitwise equal"));
            }
        }
        let mut bytes = std::fs::read(&ckpt).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x01;
        std::fs::write(&ckpt, &bytes).unwrap();
        match load_checkpoint::<f32>(&ckpt) {
            Err(e) if e.to_string().contains("checksum") => {}
            other => return Err(format!("corrupted checkpoint not rejected: {other:?}")),
        }

        // golden byte-level fixtures
        let golden_atf = std::fs::read(fixtures_dir().join("golden.atf"))
            .map_err(|e| format!("golden.atf missing: {e}"))?;
        if golden_atf != golden_blob_bytes() {
            return Err("tensor blob encoding deviates from golden fixture".into());
        }
        let golden_ckpt_path = fixtures_dir().join("golden.afck");
        let golden_ckpt = std::fs::read(&golden_ckpt_path)
            .map_err(|e| format!("golden.afck missing: {e}"))?;
        let (config, params) = golden_checkpoint_parts();
        let fresh = dir.path().join("fresh.afck");
        save_checkpoint(&fresh, &config, &params).map_err(|e| e.to_string())?;
        if std::fs::read(&fresh).unwrap() != golden_ckpt {
            return Err("checkpoint encoding deviates from golden fixture".into());
        }
        let (gc, gp) = load_checkpoint::<f32>(&golden_ckpt_path).map_err(|e| e.to_string())?;
        if gc != config || gp.len() != params.len() {
            return Err("golden checkpoint decodes incorrectly".into());
        }
        Ok(())
    })());
}

#[test]
fn criterion_10_determinism() {
    report(10, "identical seeds give identical data, splits, and ablation CSVs", (|| {
        let d1 = tempdir().unwrap();
        let d2 = tempdir().unwrap();
        generate_synthetic(d1.path(), &tiny_synth()).map_err(|e| e.to_string())?;
        generate_synthetic(d2.path(), &tiny_synth()).map_err(|e| e.to_string())?;
        for name in ["face.atf", "finger.atf", "palmprint.atf", "voice.atf", "manifest.json"] {
            let a = std::fs::read(d1.path().join(name)).unwrap();
            let b = std::fs::read(d2.path().join(name)).unwrap();
            if a != b {
                return Err(format!("{name} differs between identical seeds"));
            }
        }
        let ds: Dataset<f32> = load_dataset(d1.path()).map_err(|e| e.to_string())?;
        let s1 = split_dataset(&ds, 0.25, 9).map_err(|e| e.to_string())?;
        let s2 = split_dataset(&ds, 0.25, 9).map_err(|e| e.to_string())?;
        if s1 != s2 {
            return Err("splits differ between identical seeds".into());
        }
        let template = tiny_model_config(
            ModalityCombo::parse("face,finger,voice").unwrap(),
            ds.num_classes(),
        );
        let tc = TrainConfig { epochs: 1, batch_size: 4, ..Default::default() };
        let r1 = ablation_run(&ds, &template, &tc).map_err(|e| e.to_string())?;
        let r2 = ablation_run(&ds, &template, &tc).map_err(|e| e.to_string())?;
        if r1.len() != 13 {
            return Err(format!("ablation produced {} rows", r1.len()));
        }
        if ablation_csv(&r1) != ablation_csv(&r2) {
            return Err("ablation CSVs differ between identical runs".into());
        }
        Ok(())
    })());
}
