//! Synthetic multimodal dataset generation, on-disk formats, and
//! deterministic splitting.
//!
//! A dataset directory holds `manifest.json` plus one `.atf` tensor
//! blob per modality; each blob stacks all samples along its first
//! dimension. Samples are ordered class-major, so the label of sample
//! `i` is `i / samples_per_class`.

pub mod blob;
pub mod checkpoint;

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::{ImageSample, SequenceSample};
use crate::error::{Error, Result};
use crate::model::RawBundle;
use crate::router::{ModalityCombo, ModalityTag};
use blob::{read_blob, write_atomic, write_blob, BlobElem};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityDescriptor {
    pub tag: ModalityTag,
    /// Per-sample shape (the blob prepends the sample axis).
    pub shape: Vec<usize>,
    pub blob: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub seed: u64,
    pub noise_level: f64,
    pub modalities: Vec<ModalityDescriptor>,
    /// Split assignment per sample id.
    pub split: Vec<SplitTag>,
}

impl DatasetManifest {
    pub fn num_samples(&self) -> usize {
        self.num_classes * self.samples_per_class
    }
}

/// Generator settings; the defaults match the model's default geometry.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub seed: u64,
    pub noise_level: f64,
    pub image_h: usize,
    pub image_w: usize,
    pub image_c: usize,
    pub seq_len: usize,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 8,
            samples_per_class: 40,
            seed: 42,
            noise_level: 0.25,
            image_h: 32,
            image_w: 32,
            image_c: 1,
            seq_len: 256,
            test_fraction: 0.25,
        }
    }
}

/// In-memory multimodal dataset.
#[derive(Debug, Clone)]
pub struct Dataset<T> {
    pub manifest: DatasetManifest,
    modalities: HashMap<ModalityTag, (Vec<usize>, Vec<T>)>,
}

impl<T: BlobElem> Dataset<T> {
    pub fn num_samples(&self) -> usize {
        self.manifest.num_samples()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn label_of(&self, sample: usize) -> usize {
        sample / self.manifest.samples_per_class
    }

    pub fn has_modality(&self, tag: ModalityTag) -> bool {
        self.modalities.contains_key(&tag)
    }

    fn sample_slice(&self, tag: ModalityTag, sample: usize) -> Result<(&[usize], &[T])> {
        let (shape, data) = self
            .modalities
            .get(&tag)
            .ok_or_else(|| Error::invalid(format!("dataset has no {tag} channel")))?;
        let n: usize = shape.iter().product();
        Ok((shape, &data[sample * n..(sample + 1) * n]))
    }

    /// Materialize one sample's inputs for a modality combination.
    pub fn raw_bundle(&self, sample: usize, combo: &ModalityCombo) -> Result<RawBundle<T>> {
        if sample >= self.num_samples() {
            return Err(Error::invalid(format!("sample {sample} out of range")));
        }
        let mut bundle = RawBundle { images: Vec::new(), sequence: None };
        for &tag in combo.images() {
            let (shape, data) = self.sample_slice(tag, sample)?;
            if shape.len() != 3 {
                return Err(Error::invalid(format!("{tag} channel is not an image")));
            }
            bundle.images.push(ImageSample::new(
                data.to_vec(),
                shape[0],
                shape[1],
                shape[2],
                tag,
            )?);
        }
        if combo.has_voice() {
            let (_, data) = self.sample_slice(ModalityTag::Voice, sample)?;
            bundle.sequence = Some(SequenceSample::new(data.to_vec(), ModalityTag::Voice)?);
        }
        Ok(bundle)
    }

    /// (sample, label) pairs for the manifest's stored split.
    pub fn split_samples(&self, which: SplitTag) -> Vec<(usize, usize)> {
        self.manifest
            .split
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == which)
            .map(|(i, _)| (i, self.label_of(i)))
            .collect()
    }
}

/// Bilinearly upsample a low-resolution grid to `h x w`.
fn upsample(grid: &[f64], gh: usize, gw: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let fy = y as f64 / h as f64 * (gh - 1) as f64;
            let fx = x as f64 / w as f64 * (gw - 1) as f64;
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(gh - 1), (x0 + 1).min(gw - 1));
            let (dy, dx) = (fy - y0 as f64, fx - x0 as f64);
            out[y * w + x] = grid[y0 * gw + x0] * (1.0 - dy) * (1.0 - dx)
                + grid[y0 * gw + x1] * (1.0 - dy) * dx
                + grid[y1 * gw + x0] * dy * (1.0 - dx)
                + grid[y1 * gw + x1] * dy * dx;
        }
    }
    out
}

const IMAGE_TAGS: [ModalityTag; 3] =
    [ModalityTag::Face, ModalityTag::Fingerprint, ModalityTag::Palmprint];

fn blob_name(tag: ModalityTag) -> String {
    format!("{tag}.atf")
}

/// Generate a synthetic multimodal dataset on disk.
///
/// Per class and image modality: a smooth random field prototype
/// (low-res uniform grid, bilinearly upsampled). Per class for voice: a
/// sum of three class-specific sinusoids. Each sample adds Gaussian
/// noise; voice gets twice the configured level so modality
/// combinations differ measurably. Everything is a deterministic
/// function of the seed.
pub fn generate_synthetic(dir: &Path, cfg: &SynthConfig) -> Result<DatasetManifest> {
    if cfg.num_classes < 2 {
        return Err(Error::invalid("num_classes must be >= 2"));
    }
    if cfg.samples_per_class < 2 {
        return Err(Error::invalid("samples_per_class must be >= 2"));
    }
    if !(cfg.noise_level >= 0.0) {
        return Err(Error::invalid("noise_level must be >= 0"));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.num_classes * cfg.samples_per_class;
    let (h, w, c) = (cfg.image_h, cfg.image_w, cfg.image_c);
    let img_n = h * w * c;
    let mut modalities = Vec::new();

    let image_noise = Normal::new(0.0, cfg.noise_level.max(1e-300)).expect("valid stdev");
    let voice_noise = Normal::new(0.0, (2.0 * cfg.noise_level).max(1e-300)).expect("valid stdev");
    let zero_noise = cfg.noise_level == 0.0;

    for tag in IMAGE_TAGS {
        let mut stacked = vec![0.0f32; total * img_n];
        for class in 0..cfg.num_classes {
            let (gh, gw) = (4, 4);
            let mut grid = vec![0.0; gh * gw * c];
            for v in grid.iter_mut() {
                *v = rng.gen_range(0.0..1.0);
            }
            let mut proto = vec![0.0; img_n];
            for ch in 0..c {
                let up = upsample(&grid[ch * gh * gw..(ch + 1) * gh * gw], gh, gw, h, w);
                for y in 0..h {
                    for x in 0..w {
                        proto[(y * w + x) * c + ch] = up[y * w + x];
                    }
                }
            }
            for s in 0..cfg.samples_per_class {
                let base = (class * cfg.samples_per_class + s) * img_n;
                for i in 0..img_n {
                    let noise = if zero_noise { 0.0 } else { image_noise.sample(&mut rng) };
                    stacked[base + i] = (proto[i] + noise).clamp(0.0, 1.0) as f32;
                }
            }
        }
        let path = dir.join(blob_name(tag));
        let dims = [total, h, w, c];
        write_blob(&path, &dims, &stacked)?;
        modalities.push(ModalityDescriptor {
            tag,
            shape: vec![h, w, c],
            blob: blob_name(tag),
        });
    }

    // voice: three class-specific sinusoids
    let t_len = cfg.seq_len;
    let mut stacked = vec![0.0f32; total * t_len];
    for class in 0..cfg.num_classes {
        let mut components = Vec::new();
        for _ in 0..3 {
            let amp = rng.gen_range(0.4..1.0);
            let freq = rng.gen_range(1.0..20.0);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            components.push((amp, freq, phase));
        }
        let proto: Vec<f64> = (0..t_len)
            .map(|t| {
                let x = t as f64 / t_len as f64;
                components
                    .iter()
                    .map(|(a, f, p)| a * (std::f64::consts::TAU * f * x + p).sin())
                    .sum::<f64>()
                    / 3.0
            })
            .collect();
        for s in 0..cfg.samples_per_class {
            let base = (class * cfg.samples_per_class + s) * t_len;
            for i in 0..t_len {
                let noise = if zero_noise { 0.0 } else { voice_noise.sample(&mut rng) };
                stacked[base + i] = (proto[i] + noise) as f32;
            }
        }
    }
    let path = dir.join(blob_name(ModalityTag::Voice));
    write_blob(&path, &[total, t_len], &stacked)?;
    modalities.push(ModalityDescriptor {
        tag: ModalityTag::Voice,
        shape: vec![t_len],
        blob: blob_name(ModalityTag::Voice),
    });

    let split = stratified_split_tags(
        cfg.num_classes,
        cfg.samples_per_class,
        cfg.test_fraction,
        cfg.seed,
    )?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        num_classes: cfg.num_classes,
        samples_per_class: cfg.samples_per_class,
        seed: cfg.seed,
        noise_level: cfg.noise_level,
        modalities,
        split,
    };
    let json = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| Error::Json { path: MANIFEST_FILE.into(), source: e })?;
    write_atomic(&dir.join(MANIFEST_FILE), &json)?;
    Ok(manifest)
}

fn stratified_split_tags(
    num_classes: usize,
    per_class: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<Vec<SplitTag>> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::invalid("test_fraction must be in (0, 1)"));
    }
    if per_class < 2 {
        return Err(Error::invalid("every class needs at least 2 samples to split"));
    }
    let test_n = ((per_class as f64 * test_fraction).round() as usize).clamp(1, per_class - 1);
    let mut split = vec![SplitTag::Train; num_classes * per_class];
    for class in 0..num_classes {
        let mut idx: Vec<usize> = (0..per_class).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x5f5f ^ class as u64).wrapping_mul(0x9e3779b97f4a7c15));
        // Fisher-Yates
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        for &i in idx.iter().take(test_n) {
            split[class * per_class + i] = SplitTag::Test;
        }
    }
    Ok(split)
}

/// Stratified, deterministic (train, test) index split.
pub fn split_dataset<T: BlobElem>(
    dataset: &Dataset<T>,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let tags = stratified_split_tags(
        dataset.num_classes(),
        dataset.manifest.samples_per_class,
        test_fraction,
        seed,
    )?;
    let train = tags.iter().enumerate().filter(|(_, &t)| t == SplitTag::Train).map(|(i, _)| i);
    let test = tags.iter().enumerate().filter(|(_, &t)| t == SplitTag::Test).map(|(i, _)| i);
    Ok((train.collect(), test.collect()))
}

/// Load and validate a dataset directory.
pub fn load_dataset<T: BlobElem>(dir: &Path) -> Result<Dataset<T>> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&mpath)
        .map_err(|e| Error::io(mpath.display().to_string(), e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Json { path: mpath.display().to_string(), source: e })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::format(
            mpath.display().to_string(),
            format!("unsupported manifest version {}", manifest.version),
        ));
    }
    let total = manifest.num_samples();
    if manifest.split.len() != total {
        return Err(Error::format(
            mpath.display().to_string(),
            format!("split covers {} samples, dataset has {}", manifest.split.len(), total),
        ));
    }
    let mut modalities = HashMap::new();
    for desc in &manifest.modalities {
        let path = dir.join(&desc.blob);
        let (dims, data): (Vec<usize>, Vec<T>) = read_blob(&path)?;
        let mut expect = vec![total];
        expect.extend_from_slice(&desc.shape);
        if dims != expect {
            return Err(Error::format(
                path.display().to_string(),
                format!("blob dims {:?} do not match manifest {:?}", dims, expect),
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::format(path.display().to_string(), "non-finite values"));
        }
        if desc.tag.is_image()
            && data.iter().any(|v| *v < T::zero() || *v > T::one())
        {
            return Err(Error::format(
                path.display().to_string(),
                "image values outside [0,1]",
            ));
        }
        modalities.insert(desc.tag, (desc.shape.clone(), data));
    }
    Ok(Dataset { manifest, modalities })
}
