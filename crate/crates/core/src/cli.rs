//! Operator surface: data generation, training, evaluation, inference,
//! gradient verification, and the modality ablation study.
//!
//! Exit codes: 0 success, 2 usage/input error, 3 numeric failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::manifest::{read_manifest, write_manifest, ManifestEntry, Split};
use crate::data::split::{select_split, split_tags};
use crate::data::synth::{detector_report, generate, Dataset, SynthSpec};
use crate::data::{read_dataset, write_dataset};
use crate::error::{Error, Result};
use crate::kvfile::{
    check_synth_file_keys, check_train_file_keys, model_config_from, model_config_to_kv,
    synth_spec_from, train_config_from, KvFile,
};
use crate::model::config::ModelConfig;
use crate::model::net::{forward, logits_to_probs, Ablation};
use crate::model::params::{ParameterStore, DEFAULT_INIT_SEED};
use crate::training::{evaluate, train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "mmsd",
    about = "Multi-modal stuttering detector: synthetic data, training, evaluation",
    version,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    GenData {
        /// Synthesis spec file (key = value); defaults apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output dataset path; the manifest lands at <out>.manifest.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Fraction of samples tagged as the test split.
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
    },
    /// Train on the train split of a dataset and write a checkpoint.
    Train {
        /// Dataset file written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Combined model + training config file (key = value).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint output path; writes <out>.config and <out>.log.jsonl too.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Which split to score: test, train, or all.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Classify one sample from a dataset file.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sample reference: <dataset-path> or <dataset-path>:<index>.
        #[arg(long)]
        sample: String,
    },
    /// Verify full-model gradients against central finite differences.
    GradCheck {
        /// Model config file; the built-in toy config when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train audio-only, video-only, and full models on the same data/seed
    /// and compare test metrics.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Parse argv and execute; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message; usage problems exit 2.
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { 0 } else { 2 };
        }
    };
    let outcome = match cli.command {
        Command::GenData { spec, out, test_fraction } => gen_data(spec.as_deref(), &out, test_fraction),
        Command::Train { data, config, out } => cmd_train(&data, config.as_deref(), &out),
        Command::Eval { data, checkpoint, split } => cmd_eval(&data, &checkpoint, &split),
        Command::Infer { checkpoint, sample } => cmd_infer(&checkpoint, &sample),
        Command::GradCheck { config } => cmd_grad_check(config.as_deref()),
        Command::Ablate { data, config } => cmd_ablate(&data, config.as_deref()),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn manifest_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_os_string();
    s.push(".manifest.jsonl");
    PathBuf::from(s)
}

fn sidecar_config_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_os_string();
    s.push(".config");
    PathBuf::from(s)
}

fn log_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_os_string();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

fn print_synth_spec(spec: &SynthSpec) {
    println!(
        "spec: n_samples={} stutter_fraction={} l_v={} l_a={} l_t={} d_v={} d_a={} vocab={} seed={} cue_mode={}",
        spec.n_samples,
        spec.stutter_fraction,
        spec.l_v,
        spec.l_a,
        spec.l_t,
        spec.d_v,
        spec.d_a,
        spec.vocab,
        spec.seed,
        spec.cue_mode.tag()
    );
}

fn print_model_config(cfg: &ModelConfig) {
    println!(
        "model: d_v={} d_a={} d_t={} l_v={} l_a={} l_t={} l_prime={} d_e={} vocab={} n_enc_layers={} n_dec_layers={} heads={} fusion_heads={} d_ff={} max_total_len={}",
        cfg.d_v, cfg.d_a, cfg.d_t, cfg.l_v, cfg.l_a, cfg.l_t, cfg.l_prime, cfg.d_e,
        cfg.vocab, cfg.n_enc_layers, cfg.n_dec_layers, cfg.heads, cfg.fusion_heads,
        cfg.d_ff, cfg.max_total_len
    );
}

fn print_train_config(tc: &TrainConfig) {
    println!(
        "train: peak_lr={} warmup_ratio={} epochs={} batch_size={} grad_accum_steps={} seed={} adam_beta1={} adam_beta2={} adam_eps={}",
        tc.peak_lr,
        tc.warmup_ratio,
        tc.epochs,
        tc.batch_size,
        tc.grad_accum_steps,
        tc.seed,
        tc.adam_beta1,
        tc.adam_beta2,
        tc.adam_eps
    );
}

fn load_train_file(path: Option<&Path>) -> Result<(ModelConfig, TrainConfig)> {
    match path {
        None => Ok((ModelConfig::default(), TrainConfig::default())),
        Some(p) => {
            let kv = KvFile::load(p)?;
            check_train_file_keys(&kv)?;
            let model = model_config_from(&kv, ModelConfig::default())?;
            let tc = train_config_from(&kv, TrainConfig::default())?;
            Ok((model, tc))
        }
    }
}

fn open_dataset(path: &Path, vocab: usize) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::Input(format!("dataset file {} does not exist", path.display())));
    }
    read_dataset(path, vocab)
}

fn load_manifest_tags(data: &Path, n: usize) -> Result<Option<Vec<Split>>> {
    let mpath = manifest_path(data);
    if !mpath.exists() {
        return Ok(None);
    }
    let entries = read_manifest(&mpath)?;
    if entries.len() != n {
        return Err(Error::Input(format!(
            "manifest {} lists {} samples, dataset has {n}",
            mpath.display(),
            entries.len()
        )));
    }
    Ok(Some(entries.iter().map(|e| e.split).collect()))
}

fn percent(x: f64) -> f64 {
    x * 100.0
}

fn gen_data(spec_file: Option<&Path>, out: &Path, test_fraction: f64) -> Result<i32> {
    let spec = match spec_file {
        None => SynthSpec::default(),
        Some(p) => {
            let kv = KvFile::load(p)?;
            check_synth_file_keys(&kv)?;
            synth_spec_from(&kv, SynthSpec::default())?
        }
    };
    spec.validate()?;
    print_synth_spec(&spec);

    let dataset = generate(&spec)?;
    let tags = split_tags(&dataset.labels(), test_fraction, spec.seed)?;
    let offsets = write_dataset(&dataset, out)?;
    let entries: Vec<ManifestEntry> = offsets
        .iter()
        .zip(dataset.samples.iter())
        .zip(tags.iter())
        .enumerate()
        .map(|(i, ((offset, s), split))| ManifestEntry {
            id: i as u32,
            offset: *offset,
            label: s.label,
            split: *split,
        })
        .collect();
    let mpath = manifest_path(out);
    write_manifest(&entries, &mpath)?;

    let (fluent, stuttered) = dataset.label_counts();
    let oracle = detector_report(&dataset);
    println!("labels: fluent={fluent} stuttered={stuttered}");
    println!(
        "separability-oracle: P {:.2}  R {:.2}  F1 {:.2}",
        percent(oracle.precision()),
        percent(oracle.recall()),
        percent(oracle.f1())
    );
    println!("wrote {} and {}", out.display(), mpath.display());
    Ok(0)
}

fn cmd_train(data: &Path, config: Option<&Path>, out: &Path) -> Result<i32> {
    let (model_cfg, train_cfg) = load_train_file(config)?;
    print_model_config(&model_cfg);
    print_train_config(&train_cfg);

    let dataset = open_dataset(data, model_cfg.vocab)?;
    let train_set = match load_manifest_tags(data, dataset.len())? {
        Some(tags) => select_split(&dataset, &tags, Split::Train),
        None => dataset,
    };
    println!("training on {} samples", train_set.len());

    let mut params = ParameterStore::init(&model_cfg, DEFAULT_INIT_SEED)?;
    let outcome = train(&model_cfg, &mut params, &train_set.samples, &train_cfg, Ablation::NONE)?;

    params.save(out)?;
    std::fs::write(sidecar_config_path(out), model_config_to_kv(&model_cfg))?;
    let lpath = log_path(out);
    let mut w = BufWriter::new(File::create(&lpath)?);
    for record in &outcome.log {
        serde_json::to_writer(&mut w, record)
            .map_err(|e| Error::Input(format!("log serialization: {e}")))?;
        writeln!(w)?;
    }
    w.flush()?;

    let m = &outcome.final_metrics;
    println!(
        "final-train: P {:.2}  R {:.2}  F1 {:.2}",
        percent(m.precision()),
        percent(m.recall()),
        percent(m.f1())
    );
    println!(
        "wrote {} and {} and {}",
        out.display(),
        sidecar_config_path(out).display(),
        lpath.display()
    );
    Ok(0)
}

fn load_checkpoint(checkpoint: &Path) -> Result<(ModelConfig, ParameterStore)> {
    if !checkpoint.exists() {
        return Err(Error::Input(format!(
            "checkpoint {} does not exist",
            checkpoint.display()
        )));
    }
    let sidecar = sidecar_config_path(checkpoint);
    let cfg = if sidecar.exists() {
        let kv = KvFile::load(&sidecar)?;
        model_config_from(&kv, ModelConfig::default())?
    } else {
        ModelConfig::default()
    };
    let params = ParameterStore::load(checkpoint)?;
    params.validate_against(&cfg)?;
    Ok((cfg, params))
}

fn cmd_eval(data: &Path, checkpoint: &Path, split: &str) -> Result<i32> {
    let (cfg, params) = load_checkpoint(checkpoint)?;
    print_model_config(&cfg);
    let dataset = open_dataset(data, cfg.vocab)?;
    let subset = match (split, load_manifest_tags(data, dataset.len())?) {
        ("all", _) | (_, None) => dataset,
        ("test", Some(tags)) => select_split(&dataset, &tags, Split::Test),
        ("train", Some(tags)) => select_split(&dataset, &tags, Split::Train),
        (other, _) => {
            return Err(Error::Input(format!(
                "unknown split {other:?} (expected test, train, or all)"
            )))
        }
    };
    println!("evaluating {} samples ({split} split)", subset.len());
    let m = evaluate(&cfg, &params, &subset.samples, Ablation::NONE)?;
    println!(
        "P {:.2}  R {:.2}  F1 {:.2}",
        percent(m.precision()),
        percent(m.recall()),
        percent(m.f1())
    );
    Ok(0)
}

fn cmd_infer(checkpoint: &Path, sample_ref: &str) -> Result<i32> {
    let (path_str, index) = match sample_ref.rsplit_once(':') {
        Some((p, idx)) if idx.chars().all(|c| c.is_ascii_digit()) && !idx.is_empty() => {
            (p, idx.parse::<usize>().unwrap())
        }
        _ => (sample_ref, 0),
    };
    let (cfg, params) = load_checkpoint(checkpoint)?;
    print_model_config(&cfg);
    let dataset = open_dataset(Path::new(path_str), cfg.vocab)?;
    let sample = dataset.samples.get(index).ok_or_else(|| {
        Error::Input(format!(
            "sample index {index} out of range (dataset holds {})",
            dataset.len()
        ))
    })?;
    let logits = forward(&cfg, &params, sample, Ablation::NONE)?;
    let probs = logits_to_probs(&logits)?;
    let (class, p) = if probs[1] > probs[0] {
        ("stuttered", probs[1])
    } else {
        ("fluent", probs[0])
    };
    println!("class {class}  probability {p:.4}");
    Ok(0)
}

fn cmd_grad_check(config: Option<&Path>) -> Result<i32> {
    let cfg = match config {
        None => ModelConfig::toy(),
        Some(p) => {
            let kv = KvFile::load(p)?;
            check_train_file_keys(&kv)?;
            model_config_from(&kv, ModelConfig::toy())?
        }
    };
    print_model_config(&cfg);
    let err = crate::model::net::full_model_grad_check(&cfg)?;
    if err < 1e-4 {
        println!("PASS max_rel_err {err:.3e} < 1e-4");
        Ok(0)
    } else {
        println!("FAIL max_rel_err {err:.3e} >= 1e-4");
        Err(Error::Numeric(format!(
            "gradient check failed: max relative error {err:.3e}"
        )))
    }
}

fn cmd_ablate(data: &Path, config: Option<&Path>) -> Result<i32> {
    let (model_cfg, train_cfg) = load_train_file(config)?;
    print_model_config(&model_cfg);
    print_train_config(&train_cfg);

    let dataset = open_dataset(data, model_cfg.vocab)?;
    let tags = load_manifest_tags(data, dataset.len())?.ok_or_else(|| {
        Error::Input(format!(
            "ablate needs the manifest {} for a train/test split",
            manifest_path(data).display()
        ))
    })?;
    let train_set = select_split(&dataset, &tags, Split::Train);
    let test_set = select_split(&dataset, &tags, Split::Test);
    println!(
        "training 3 variants on {} samples, evaluating on {}",
        train_set.len(),
        test_set.len()
    );

    println!("{:<12} {:>8} {:>8} {:>8}", "variant", "P", "R", "F1");
    for ablation in [Ablation::audio_only(), Ablation::video_only(), Ablation::NONE] {
        let mut params = ParameterStore::init(&model_cfg, DEFAULT_INIT_SEED)?;
        train(&model_cfg, &mut params, &train_set.samples, &train_cfg, ablation)?;
        let m = evaluate(&model_cfg, &params, &test_set.samples, ablation)?;
        println!(
            "{:<12} {:>8.2} {:>8.2} {:>8.2}",
            ablation.tag(),
            percent(m.precision()),
            percent(m.recall()),
            percent(m.f1())
        );
    }
    Ok(0)
}
