//! Command-line interface: dataset synthesis, training, evaluation,
//! verification, ablation, depth sweeps, and gradient checking.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use authformer::data::checkpoint::{load_checkpoint, save_checkpoint};
use authformer::data::{generate_synthetic, load_dataset, Dataset, SplitTag, SynthConfig};
use authformer::gradcheck;
use authformer::model::{Model, ModelConfig};
use authformer::router::ModalityCombo;
use authformer::train::{
    ablation_csv, ablation_single, classification_csv, depth_csv, depth_sweep,
    evaluate_classification, gather_samples, model_config_for, train, verification_csv,
    verification_report, verification_scores, AblationRow, TrainConfig,
};
use authformer::{Error, Result};

#[derive(Parser)]
#[command(name = "authformer", version, about = "Adaptive multimodal biometric authentication")]
struct Cli {
    /// Optional JSON config file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal dataset.
    Synth(SynthArgs),
    /// Train a model on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate classification metrics from a checkpoint.
    Eval(EvalArgs),
    /// Evaluate verification rates (TAR/FRR/FAR/EER) from a checkpoint.
    Verify(EvalArgs),
    /// Train one model per modality combination and emit the table.
    Ablate(AblateArgs),
    /// Train at several encoder depths and report accuracy/time/size.
    DepthSweep(DepthArgs),
    /// Finite-difference check of every primitive and composed block.
    Gradcheck(GradcheckArgs),
}

/// Defaults that a JSON config file may override (flags win over both).
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    layers: Option<usize>,
    noise: Option<f64>,
    classes: Option<usize>,
    samples_per_class: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated modality list, e.g. `face,finger,voice`.
    #[arg(long)]
    modalities: String,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Defaults to the checkpoint's modality combination.
    #[arg(long)]
    modalities: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel training runs; 1 preserves timing fidelity.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct DepthArgs {
    #[arg(long)]
    data: PathBuf,
    /// Depths to sweep: a range like `1..6` or a list like `1,2,4`.
    #[arg(long, default_value = "1..6")]
    layers: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Number of random seeds to sweep.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
}

fn env_seed() -> Option<u64> {
    std::env::var("AUTHFORMER_SEED").ok().and_then(|v| v.parse().ok())
}

fn load_file_config(path: &Option<PathBuf>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::io(p.display().to_string(), e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Json { path: p.display().to_string(), source: e })
        }
    }
}

fn resolve_seed(flag: Option<u64>, file: &FileConfig) -> u64 {
    flag.or(file.seed).or_else(env_seed).unwrap_or(42)
}

fn resolve_train(
    file: &FileConfig,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    seed: Option<u64>,
) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        epochs: epochs.or(file.epochs).unwrap_or(d.epochs),
        batch_size: batch.or(file.batch_size).unwrap_or(d.batch_size),
        learning_rate: lr.or(file.learning_rate).unwrap_or(d.learning_rate),
        optimizer: d.optimizer,
        seed: resolve_seed(seed, file),
    }
}

fn write_report(path: &Option<PathBuf>, csv: &str) -> Result<()> {
    if let Some(p) = path {
        std::fs::write(p, csv).map_err(|e| Error::io(p.display().to_string(), e))?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn load_data(dir: &Path) -> Result<Dataset<f32>> {
    load_dataset(dir)
}

fn template_config(manifest_classes: usize, combo: ModalityCombo, layers: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(combo, manifest_classes);
    cfg.encoder_layers = layers;
    cfg
}

fn parse_layer_spec(spec: &str) -> Result<Vec<usize>> {
    let bad = || Error::invalid(format!("cannot parse layer spec '{spec}'"));
    if let Some((a, b)) = spec.split_once("..") {
        let lo: usize = a.trim().parse().map_err(|_| bad())?;
        let hi: usize = b.trim().parse().map_err(|_| bad())?;
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn cmd_synth(file: &FileConfig, a: &SynthArgs) -> Result<()> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        num_classes: a.classes.or(file.classes).unwrap_or(d.num_classes),
        samples_per_class: a.samples_per_class.or(file.samples_per_class).unwrap_or(d.samples_per_class),
        seed: resolve_seed(a.seed, file),
        noise_level: a.noise.or(file.noise).unwrap_or(d.noise_level),
        ..d
    };
    println!(
        "resolved config: synth classes={} samples_per_class={} seed={} noise={} out={}",
        cfg.num_classes,
        cfg.samples_per_class,
        cfg.seed,
        cfg.noise_level,
        a.out.display()
    );
    let manifest = generate_synthetic(&a.out, &cfg)?;
    println!(
        "generated {} samples ({} classes x {}) across {} modalities",
        manifest.num_samples(),
        manifest.num_classes,
        manifest.samples_per_class,
        manifest.modalities.len()
    );
    Ok(())
}

fn cmd_train(file: &FileConfig, a: &TrainArgs) -> Result<()> {
    let combo = ModalityCombo::parse(&a.modalities)?;
    let layers = a.layers.or(file.layers).unwrap_or(2);
    let tc = resolve_train(file, a.epochs, a.batch_size, a.lr, a.seed);
    println!(
        "resolved config: train data={} modalities={} layers={} epochs={} batch_size={} lr={} seed={}",
        a.data.display(),
        combo.label(),
        layers,
        tc.epochs,
        tc.batch_size,
        tc.learning_rate,
        tc.seed
    );
    let ds = load_data(&a.data)?;
    let template = template_config(ds.num_classes(), combo.clone(), layers);
    let config = model_config_for(&template, &ds.manifest, combo.clone())?;
    let mut model = Model::<f32>::init(config, tc.seed)?;
    let train_set = gather_samples(&ds, &ds.split_samples(SplitTag::Train), &combo)?;
    let log = train(&mut model, &train_set, &tc)?;
    for e in &log {
        println!("epoch {:>3}  loss {:.6}  {:.2}s", e.epoch, e.loss, e.seconds);
    }
    save_checkpoint(&a.out, &model.config, &model.params)?;
    println!("wrote checkpoint {}", a.out.display());
    Ok(())
}

fn load_model_and_split(
    a: &EvalArgs,
) -> Result<(Model<f32>, Vec<(authformer::model::RawBundle<f32>, usize)>, ModalityCombo)> {
    let (config, params) = load_checkpoint::<f32>(&a.ckpt)?;
    let model = Model { config, params };
    let combo = match &a.modalities {
        Some(s) => ModalityCombo::parse(s)?,
        None => model.config.combination.clone(),
    };
    model.supports(&combo)?;
    if combo != model.config.combination {
        return Err(Error::config(format!(
            "checkpoint was trained for {} but {} was requested",
            model.config.combination.label(),
            combo.label()
        )));
    }
    let ds = load_data(&a.data)?;
    let test = gather_samples(&ds, &ds.split_samples(SplitTag::Test), &combo)?;
    Ok((model, test, combo))
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    println!(
        "resolved config: eval ckpt={} data={}",
        a.ckpt.display(),
        a.data.display()
    );
    let (model, test, combo) = load_model_and_split(a)?;
    let m = evaluate_classification(&model, &test)?;
    println!(
        "combination {}  accuracy {:.4}  macro_f1 {:.4}  macro_recall {:.4}",
        combo.label(),
        m.accuracy,
        m.macro_f1,
        m.macro_recall
    );
    for c in &m.per_class {
        if c.absent {
            println!("  class {} absent from split; recall counted as 0", c.class);
        }
    }
    write_report(&a.out, &classification_csv(&combo.label(), &m))
}

fn cmd_verify(a: &EvalArgs) -> Result<()> {
    println!(
        "resolved config: verify ckpt={} data={}",
        a.ckpt.display(),
        a.data.display()
    );
    let (model, test, combo) = load_model_and_split(a)?;
    let (genuine, impostor) = verification_scores(&model, &test)?;
    let r = verification_report(&genuine, &impostor)?;
    println!(
        "combination {}  tar {:.4}  frr {:.4}  far {:.4}  eer {:.4}  threshold {:.4}",
        combo.label(),
        r.tar,
        r.frr,
        r.far,
        r.eer,
        r.threshold
    );
    write_report(&a.out, &verification_csv(&combo.label(), &r))
}

fn cmd_ablate(file: &FileConfig, a: &AblateArgs) -> Result<()> {
    let layers = a.layers.or(file.layers).unwrap_or(2);
    let tc = resolve_train(file, a.epochs, None, None, a.seed);
    println!(
        "resolved config: ablate data={} layers={} epochs={} seed={} jobs={}",
        a.data.display(),
        layers,
        tc.epochs,
        tc.seed,
        a.jobs.max(1)
    );
    let ds = load_data(&a.data)?;
    let combos = ModalityCombo::all();
    let template = template_config(ds.num_classes(), combos[0].clone(), layers);
    let jobs = a.jobs.max(1).min(combos.len());
    let mut rows: Vec<Option<AblationRow>> = vec![None; combos.len()];
    if jobs == 1 {
        for (i, combo) in combos.iter().enumerate() {
            rows[i] = Some(ablation_single(&ds, &template, &tc, combo.clone())?);
        }
    } else {
        let results = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for chunk in combos
                .iter()
                .cloned()
                .enumerate()
                .collect::<Vec<_>>()
                .chunks((combos.len() + jobs - 1) / jobs)
            {
                let chunk = chunk.to_vec();
                let (ds, template, tc) = (&ds, &template, &tc);
                handles.push(scope.spawn(move || {
                    chunk
                        .into_iter()
                        .map(|(i, combo)| Ok((i, ablation_single(ds, template, tc, combo)?)))
                        .collect::<Result<Vec<_>>>()
                }));
            }
            handles
                .into_iter()
                .map(|h| h.join().expect("ablation worker panicked"))
                .collect::<Result<Vec<_>>>()
        })?;
        for batch in results {
            for (i, row) in batch {
                rows[i] = Some(row);
            }
        }
    }
    let rows: Vec<AblationRow> = rows.into_iter().map(|r| r.expect("row missing")).collect();
    for r in &rows {
        println!(
            "{:<28} accuracy {:.4}  macro_f1 {:.4}  macro_recall {:.4}",
            r.label, r.accuracy, r.macro_f1, r.macro_recall
        );
    }
    write_report(&a.out, &ablation_csv(&rows))
}

fn cmd_depth(file: &FileConfig, a: &DepthArgs) -> Result<()> {
    let depths = parse_layer_spec(&a.layers)?;
    let tc = resolve_train(file, a.epochs, None, None, a.seed);
    println!(
        "resolved config: depth-sweep data={} layers={:?} epochs={} seed={}",
        a.data.display(),
        depths,
        tc.epochs,
        tc.seed
    );
    let ds = load_data(&a.data)?;
    let combo = ModalityCombo::parse("face,finger,voice")?;
    let template = template_config(ds.num_classes(), combo, 2);
    let rows = depth_sweep(&ds, &depths, &template, &tc)?;
    for r in &rows {
        println!(
            "layers {}  accuracy {:.4}  sec/epoch {:.4}  params {}",
            r.layers, r.accuracy, r.sec_per_epoch, r.param_count
        );
    }
    write_report(&a.out, &depth_csv(&rows))
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<()> {
    println!("resolved config: gradcheck seeds=0..{}", a.seeds);
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let results = gradcheck::run_suite(&seeds)?;
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{:<22} max relative error {:.3e}  {}",
            r.target,
            r.max_rel_err,
            if r.pass() { "ok" } else { "FAIL" }
        );
        if !r.pass() {
            failed.push(r.target.clone());
        }
    }
    if !failed.is_empty() {
        eprintln!("error: gradient check failed for: {}", failed.join(", "));
        std::process::exit(1);
    }
    println!("all {} targets within {:.0e}", results.len(), gradcheck::TOLERANCE);
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Shape(_) | Error::Invalid(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

fn main() {
    let cli = Cli::parse();
    let run = || -> Result<()> {
        let file = load_file_config(&cli.config)?;
        match &cli.command {
            Command::Synth(a) => cmd_synth(&file, a),
            Command::Train(a) => cmd_train(&file, a),
            Command::Eval(a) => cmd_eval(a),
            Command::Verify(a) => cmd_verify(a),
            Command::Ablate(a) => cmd_ablate(&file, a),
            Command::DepthSweep(a) => cmd_depth(&file, a),
            Command::Gradcheck(a) => cmd_gradcheck(a),
        }
    };
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
