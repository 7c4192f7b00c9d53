//! Command-line interface: scene/dataset generation, the preprocessing and
//! gradient property gates, training, evaluation, and the two studies.
//!
//! Human-readable progress goes to standard error; machine-readable tables
//! go to files under `--out` only. Exit status 0 on success, 1 on
//! configuration/contract errors, 2 on i/o or corruption errors.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::mfef::{Model, ModelConfig};
use crate::preprocess::{ModalityMask, PreprocessConfig};
use crate::scene::{build_scene, generate_routes, SceneConfig};
use crate::sensors::{generate_dataset_with, load_dataset, save_dataset, GenOptions};

use super::experiments::{run_study, table_combos, ExperimentConfig};
use super::metrics::{evaluate_with, Split};
use super::report::emit_report;
use super::train::{preprocess_config_for, train, TrainConfig};
use super::verify::{gradcheck_full_model, gradcheck_ops};

#[derive(Parser, Debug)]
#[command(
    name = "mespla",
    about = "Multi-modal path-loss prediction testbed",
    disable_help_subcommand = true
)]
struct Cli {
    /// Key-value configuration file shared by all subsystems.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the seeds in the configuration file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for datasets, checkpoints, and reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory produced by `generate`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Width multiplier of the model.
    #[arg(long)]
    width: Option<f64>,
    /// Comma list of modalities: img,pc,gps.
    #[arg(long)]
    modalities: Option<String>,
    /// Train on night-simulated images with this brightness factor.
    #[arg(long)]
    night_alpha_train: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build the scene and synthesize the aligned multi-modal dataset.
    Generate {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        routes: Option<usize>,
        #[arg(long)]
        gps_window: Option<usize>,
        #[arg(long)]
        arc_step: Option<f64>,
    },
    /// Run the preprocessing property suite.
    PreprocessCheck,
    /// Train one model and write its checkpoint plus the loss history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Darken images for the evaluation (0, 1].
        #[arg(long)]
        night_alpha: Option<f64>,
        /// train, val, or test (default test).
        #[arg(long)]
        split: Option<String>,
    },
    /// Train the six modality combinations and emit the ablation report.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        width: Option<f64>,
        #[arg(long)]
        night_alpha: Option<f64>,
    },
    /// Evaluate the trained combinations across a brightness sweep.
    LightSweep {
        #[arg(long)]
        data: PathBuf,
        /// Comma list of brightness factors in (0, 1].
        #[arg(long)]
        alphas: String,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        width: Option<f64>,
    },
    /// Finite-difference verification of every operator and the full model.
    Gradcheck,
}

fn parse_mask(s: &str) -> Result<ModalityMask> {
    let mut mask = ModalityMask::new(false, false, false);
    for part in s.split(',') {
        match part.trim() {
            "img" | "image" | "images" => mask.image = true,
            "pc" | "cloud" | "points" => mask.cloud = true,
            "gps" => mask.gps = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown modality {other:?} (expected img, pc, or gps)"
                )))
            }
        }
    }
    if !mask.any() {
        return Err(Error::Config("modality list is empty".into()));
    }
    Ok(mask)
}

fn parse_alphas(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad alpha {p:?}")))
        })
        .collect()
}

fn load_kv(path: &Option<PathBuf>) -> Result<KvConfig> {
    match path {
        Some(p) => KvConfig::from_file(p),
        None => Ok(KvConfig::new()),
    }
}

fn out_dir(out: &Option<PathBuf>) -> Result<PathBuf> {
    out.clone()
        .ok_or_else(|| Error::Config("this subcommand requires --out <dir>".into()))
}

/// Derived per-component seeds from the master seed.
fn component_seeds(master: u64) -> (u64, u64, u64, u64) {
    (
        master,                                    // scene
        crate::seeds::derive(master, 0x100, 0),    // dataset
        crate::seeds::derive(master, 0x101, 0),    // training
        crate::seeds::derive(master, 0x102, 0),    // model init
    )
}

fn run_inner(cli: Cli) -> Result<()> {
    let kv = load_kv(&cli.config)?;
    match cli.cmd {
        Cmd::Generate {
            samples,
            routes,
            gps_window,
            arc_step,
        } => {
            let out = out_dir(&cli.out)?;
            let mut scene_cfg = SceneConfig::from_kv(&kv)?;
            if let Some(seed) = cli.seed {
                scene_cfg.seed = seed;
            }
            let (scene_seed, ds_seed, ..) = component_seeds(scene_cfg.seed);
            scene_cfg.seed = scene_seed;
            let scene = build_scene(&scene_cfg)?;
            let n_routes = routes.unwrap_or(4);
            let route_list = generate_routes(&scene, n_routes, ds_seed)?;
            let n_samples = samples
                .or(kv.get_usize("n_samples")?)
                .unwrap_or(2600);
            let window = gps_window
                .or(kv.get_usize("gps_window")?)
                .unwrap_or(8);
            let mut opts = GenOptions::default();
            if let Some(step) = arc_step {
                opts.arc_step_m = step;
            }
            eprintln!(
                "generating {n_samples} samples over {n_routes} routes (seed {})...",
                scene_cfg.seed
            );
            let started = Instant::now();
            let ds = generate_dataset_with(&scene, &route_list, n_samples, window, ds_seed, &opts)?;
            save_dataset(&ds, &out)?;
            eprintln!(
                "wrote {} samples to {} in {:.1} s (content digest {})",
                ds.samples.len(),
                out.display(),
                started.elapsed().as_secs_f64(),
                ds.content_digest()
            );
            Ok(())
        }
        Cmd::PreprocessCheck => {
            let results = crate::preprocess::self_check();
            let mut all_ok = true;
            for r in &results {
                let tag = if r.passed { "ok  " } else { "FAIL" };
                eprintln!("{tag} {} ({})", r.name, r.detail);
                all_ok &= r.passed;
            }
            if all_ok {
                Ok(())
            } else {
                Err(Error::Contract(
                    "preprocessing property suite failed".into(),
                ))
            }
        }
        Cmd::Train(args) => {
            let out = out_dir(&cli.out)?;
            let ds = load_dataset(&args.data)?;
            let mut model_cfg = ModelConfig::from_kv(&kv)?;
            if model_cfg.width_mult == 1.0 {
                model_cfg.width_mult = 0.25; // desk-scale default for the CLI
            }
            if let Some(w) = args.width {
                model_cfg.width_mult = w;
            }
            let mut train_cfg = TrainConfig::from_kv(&kv)?;
            if let Some(e) = args.epochs {
                train_cfg.epochs = e;
            }
            if let Some(b) = args.batch_size {
                train_cfg.batch_size = b;
            }
            if let Some(lr) = args.lr {
                train_cfg.lr = lr;
            }
            if let Some(m) = &args.modalities {
                train_cfg.modality_mask = parse_mask(m)?;
            }
            if let Some(a) = args.night_alpha_train {
                train_cfg.night_alpha_train = Some(a);
            }
            if let Some(seed) = cli.seed {
                let (_, _, train_seed, model_seed) = component_seeds(seed);
                train_cfg.seed = train_seed;
                model_cfg.seed = model_seed;
            }
            train_cfg.validate()?;
            eprintln!(
                "training {} for {} epochs (batch {}, lr {})...",
                train_cfg.modality_mask.label(),
                train_cfg.epochs,
                train_cfg.batch_size,
                train_cfg.lr
            );
            let started = Instant::now();
            let (model, history) = train(&ds, &model_cfg, &train_cfg)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let ckpt = out.join("model.ckpt");
            model.save(&ckpt)?;
            let mut csv = String::from("epoch,train_mse_db2,val_mse_db2\n");
            for (i, (t, v)) in history
                .train_mse_db2
                .iter()
                .zip(&history.val_mse_db2)
                .enumerate()
            {
                csv.push_str(&format!("{i},{t},{v}\n"));
            }
            let loss_path = out.join("loss_history.csv");
            std::fs::write(&loss_path, csv).map_err(|e| Error::io(&loss_path, e))?;
            eprintln!(
                "trained in {:.1} s; final val mse {:.4} dB^2; checkpoint {}",
                started.elapsed().as_secs_f64(),
                history.val_mse_db2.last().copied().unwrap_or(f64::NAN),
                ckpt.display()
            );
            Ok(())
        }
        Cmd::Eval {
            data,
            model,
            night_alpha,
            split,
        } => {
            let out = out_dir(&cli.out)?;
            let ds = load_dataset(&data)?;
            let model = Model::load(&model)?;
            let split = match split.as_deref().unwrap_or("test") {
                "train" => Split::Train,
                "val" => Split::Val,
                "test" => Split::Test,
                other => {
                    return Err(Error::Config(format!(
                        "unknown split {other:?} (expected train, val, or test)"
                    )))
                }
            };
            let pre = preprocess_config_for(&ds, &PreprocessConfig::from_kv(&kv)?);
            let metrics = evaluate_with(&model, &ds, split, night_alpha, &pre)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let mut csv = String::from("metric,value\n");
            csv.push_str(&format!("rmse_db,{}\n", metrics.rmse_db));
            csv.push_str(&format!("samples,{}\n", metrics.per_sample_abs_err.len()));
            let path = out.join("metrics.csv");
            std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
            let mut cdf = String::from("abs_err_db,fraction\n");
            for (e, f) in &metrics.cdf {
                cdf.push_str(&format!("{e},{f}\n"));
            }
            let cdf_path = out.join("cdf.csv");
            std::fs::write(&cdf_path, cdf).map_err(|e| Error::io(&cdf_path, e))?;
            eprintln!(
                "{} split rmse: {:.4} dB over {} samples",
                split.name(),
                metrics.rmse_db,
                metrics.per_sample_abs_err.len()
            );
            Ok(())
        }
        Cmd::Ablate {
            data,
            epochs,
            width,
            night_alpha,
        } => {
            let out = out_dir(&cli.out)?;
            let ds = load_dataset(&data)?;
            let mut cfg = experiment_config(&kv, cli.seed)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(w) = width {
                cfg.model.width_mult = w;
            }
            if let Some(a) = night_alpha {
                cfg.night_alpha = a;
            }
            eprintln!(
                "ablation over {} combos, {} epochs each...",
                table_combos().len(),
                cfg.train.epochs
            );
            let started = Instant::now();
            let study = run_study(&ds, &cfg, &table_combos(), &[cfg.night_alpha])?;
            let files = emit_report(&study, &out)?;
            for row in &study.ablation.rows {
                eprintln!(
                    "  {:<34} day {:>7.3} dB   night {}",
                    row.label,
                    row.rmse_day,
                    row.rmse_night
                        .map(|v| format!("{v:>7.3} dB"))
                        .unwrap_or_else(|| "      \\".to_string()),
                );
            }
            eprintln!(
                "ablation finished in {:.1} s; wrote {} report files to {}",
                started.elapsed().as_secs_f64(),
                files.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::LightSweep {
            data,
            alphas,
            epochs,
            width,
        } => {
            let out = out_dir(&cli.out)?;
            let ds = load_dataset(&data)?;
            let mut cfg = experiment_config(&kv, cli.seed)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(w) = width {
                cfg.model.width_mult = w;
            }
            let alphas = parse_alphas(&alphas)?;
            eprintln!("lighting sweep over alphas {alphas:?}...");
            let started = Instant::now();
            let study = run_study(&ds, &cfg, &table_combos(), &alphas)?;
            let files = emit_report(&study, &out)?;
            eprintln!(
                "sweep finished in {:.1} s; wrote {} report files to {}",
                started.elapsed().as_secs_f64(),
                files.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Gradcheck => {
            let started = Instant::now();
            let mut all_ok = true;
            for (name, report) in gradcheck_ops(1e-5, 1e-4)? {
                let ok = report.passed();
                all_ok &= ok;
                eprintln!(
                    "{} {:<22} max rel err {:.3e} ({} coords, {} kinks skipped)",
                    if ok { "ok  " } else { "FAIL" },
                    name,
                    report.max_rel_err(),
                    report.inputs.iter().map(|i| i.checked).sum::<usize>(),
                    report.inputs.iter().map(|i| i.kinks_skipped).sum::<usize>(),
                );
            }
            let full = gradcheck_full_model(1e-5, 1e-4)?;
            let ok = full.passed();
            all_ok &= ok;
            eprintln!(
                "{} full model (width 0.125)  max rel err {:.3e} over {} parameters",
                if ok { "ok  " } else { "FAIL" },
                full.max_rel_err(),
                full.inputs.len()
            );
            eprintln!("gradient gate ran in {:.1} s", started.elapsed().as_secs_f64());
            if all_ok {
                Ok(())
            } else {
                Err(Error::Contract("gradient gate failed".into()))
            }
        }
    }
}

fn experiment_config(kv: &KvConfig, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let file_model = ModelConfig::from_kv(kv)?;
    if file_model != ModelConfig::default() {
        cfg.model = file_model;
        if cfg.model.width_mult == 1.0 {
            cfg.model.width_mult = 0.25;
        }
    }
    cfg.train = TrainConfig::from_kv(kv)?;
    cfg.preprocess = PreprocessConfig::from_kv(kv)?;
    if let Some(a) = kv.get_f64("night_alpha")? {
        cfg.night_alpha = a;
        cfg.preprocess.night_alpha = None; // the study applies it per run
    }
    if let Some(seed) = seed {
        let (_, _, train_seed, model_seed) = component_seeds(seed);
        cfg.train.seed = train_seed;
        cfg.model.seed = model_seed;
    }
    Ok(cfg)
}

/// Entry point used by the binary: parse, dispatch, map errors to exit codes.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    match run_inner(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
