//! Subcommand implementations.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use coroflow_core::io::dataset::{read_dataset, write_dataset, Split};
use coroflow_core::io::preds::{read_predictions, write_predictions, PredictionRecord};
use coroflow_core::io::{nifti, vtp};
use coroflow_core::metrics::{case_report, render_table};
use coroflow_core::patch::{
    assemble_dataset, extract_case_samples, write_fallback_log, CaseInput, CaseSamples, LabelSpec,
    Sample, SplitRatios,
};
use coroflow_core::synth::{generate_tree, rasterize, write_vtp_ascii, SynthConfig};
use coroflow_core::vis::{export_ply, ColorMapSpec};
use coroflow_model::{
    grad_check_report, load_model, predict_baseline, predict_icd, save_baseline, save_icd,
    train_baseline, train_icd, BaselineConfig, IcdConfig, LoadedData, ModelKind, StoredModel,
    TrainConfig,
};

use crate::error::CliError;
use crate::{
    EvalArgs, ExportVisArgs, ExtractArgs, GradcheckArgs, PredictArgs, SplitArgs, SynthArgs,
    TrainArgs,
};

fn parse_model_kind(s: &str) -> Result<ModelKind, CliError> {
    match s {
        "icd" => Ok(ModelKind::Icd),
        "cnn-mlp" => Ok(ModelKind::CnnMlp),
        other => Err(CliError::Usage(format!(
            "unknown model '{other}' (expected icd|cnn-mlp)"
        ))),
    }
}

fn ratios_from(w: [f64; 3]) -> Result<SplitRatios, CliError> {
    SplitRatios::from_weights(w).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    if args.cases == 0 {
        return Err(CliError::Usage("--cases must be at least 1".into()));
    }
    let config = SynthConfig {
        cases: args.cases,
        dims: args.dims,
        spacing: args.spacing,
        depth: args.depth,
        noise_sigma: args.noise_sigma,
        sample_step_mm: args.sample_step,
        seed: args.seed,
        ..SynthConfig::default()
    };
    config.validate()?;
    let ratios = ratios_from(args.ratios)?;
    let spec = LabelSpec {
        epsilon_mm: args.epsilon,
    };
    let patch_shape = [args.patch; 3];

    let vtp_dir = args.out.join("vtp");
    if args.emit_vtp {
        std::fs::create_dir_all(&vtp_dir)?;
    }

    let mut extracted: Vec<CaseSamples> = Vec::with_capacity(args.cases);
    for i in 0..args.cases {
        // Per-case stream: seed + case index.
        let case_seed = args.seed.wrapping_add(i as u64);
        let id = format!("case_{i:03}");
        let tree = generate_tree(&config, case_seed)?;
        let raster = rasterize(&tree, &config, case_seed)?;
        if args.emit_vtp {
            write_vtp_ascii(&vtp_dir.join(format!("{id}.vtp")), &raster.cloud)?;
        }
        let case = CaseInput {
            id: id.clone(),
            grid: raster.grid,
            intensities: raster.intensities,
            centerline: raster.cloud.points.clone(),
            cloud: raster.cloud,
        };
        extracted.push(extract_case_samples(&case, patch_shape, &spec)?);
        println!("{id}: {} points", extracted.last().unwrap().samples.len());
    }

    let built = assemble_dataset(extracted, patch_shape, &ratios, args.seed)?;
    write_dataset(&args.out, &built.manifest, &built.samples)?;
    if !built.fallbacks.is_empty() {
        write_fallback_log(&args.out.join("fallbacks.csv"), &built.fallbacks)?;
    }
    println!(
        "wrote {} samples from {} cases to {} (label mean {:.3} mmHg, std {:.3})",
        built.manifest.count,
        built.manifest.cases.len(),
        args.out.display(),
        built.manifest.label_mean,
        built.manifest.label_std,
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
struct BatchCase {
    id: String,
    volume: PathBuf,
    centerline: PathBuf,
    pressure: PathBuf,
}

fn load_case(
    id: &str,
    volume: &Path,
    centerline: &Path,
    pressure: &Path,
) -> Result<CaseInput, CliError> {
    let vol = nifti::read_nifti(volume)?;
    let center = vtp::read_vtp_ascii(centerline)?;
    let cloud = vtp::read_vtp_ascii(pressure)?;
    if cloud.pressure().is_none() {
        return Err(CliError::Data(format!(
            "{}: no pressure scalar array (expected one of {:?})",
            pressure.display(),
            vtp::PRESSURE_ARRAY_NAMES
        )));
    }
    Ok(CaseInput {
        id: id.to_string(),
        grid: vol.grid,
        intensities: vol.data,
        centerline: center.points,
        cloud,
    })
}

pub fn extract(args: ExtractArgs) -> Result<(), CliError> {
    let explicit_ratios = args.ratios.map(ratios_from).transpose()?;
    let spec = LabelSpec {
        epsilon_mm: args.epsilon,
    };
    let patch_shape = [args.patch; 3];

    let mut extracted: Vec<CaseSamples> = Vec::new();
    let default_ratios;
    if let Some(batch) = &args.batch {
        let text = std::fs::read_to_string(batch)?;
        let cases: Vec<BatchCase> = serde_json::from_str(&text)?;
        if cases.is_empty() {
            return Err(CliError::Data(format!(
                "{}: empty case list",
                batch.display()
            )));
        }
        for c in &cases {
            let case = load_case(&c.id, &c.volume, &c.centerline, &c.pressure)?;
            extracted.push(extract_case_samples(&case, patch_shape, &spec)?);
            println!(
                "{}: {} points",
                c.id,
                extracted.last().unwrap().samples.len()
            );
        }
        default_ratios = [0.8, 0.1, 0.1];
    } else {
        let volume = args.volume.as_ref().expect("clap enforces");
        let centerline = args.centerline.as_ref().expect("clap enforces");
        let pressure = args.pressure.as_ref().expect("clap enforces");
        let id = match &args.case_id {
            Some(id) => id.clone(),
            None => volume
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "case".to_string()),
        };
        let case = load_case(&id, volume, centerline, pressure)?;
        extracted.push(extract_case_samples(&case, patch_shape, &spec)?);
        // A lone case can only train.
        default_ratios = [1.0, 0.0, 0.0];
    }

    let ratios = match explicit_ratios {
        Some(r) => r,
        None => ratios_from(default_ratios)?,
    };
    let built = assemble_dataset(extracted, patch_shape, &ratios, args.seed)?;
    write_dataset(&args.out, &built.manifest, &built.samples)?;
    if !built.fallbacks.is_empty() {
        write_fallback_log(&args.out.join("fallbacks.csv"), &built.fallbacks)?;
    }
    if built.empty_patches > 0 {
        eprintln!(
            "warning: {} patches had no volume support (zero-filled)",
            built.empty_patches
        );
    }
    println!(
        "wrote {} samples from {} cases to {}",
        built.manifest.count,
        built.manifest.cases.len(),
        args.out.display()
    );
    Ok(())
}

pub fn split(args: SplitArgs) -> Result<(), CliError> {
    let ratios = ratios_from(args.ratios)?;
    let (mut manifest, samples) = read_dataset(&args.data)?;
    coroflow_core::patch::resplit(&mut manifest, &samples, &ratios, args.seed)?;
    write_dataset(&args.data, &manifest, &samples)?;
    let count = |s: Split| manifest.cases.iter().filter(|c| c.split == s).count();
    println!(
        "re-split {} cases: {} train, {} val, {} test (label mean {:.3}, std {:.3})",
        manifest.cases.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        manifest.label_mean,
        manifest.label_std,
    );
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let kind = parse_model_kind(&args.model)?;
    let (manifest, samples) = read_dataset(&args.data)?;
    let data = LoadedData::new(&manifest, &samples)?;
    let train_config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch,
        lr: args.lr,
        weight_decay: args.weight_decay,
        seed: args.seed,
        ..TrainConfig::default()
    };
    println!(
        "training {kind} on {} samples ({} train cases), {} epochs, batch {}, lr {}",
        manifest.count,
        manifest
            .cases
            .iter()
            .filter(|c| c.split == Split::Train)
            .count(),
        args.epochs,
        args.batch,
        args.lr
    );

    let mut log = String::from("epoch,train_loss,val_loss\n");
    let on_epoch = |s: &coroflow_model::train::EpochStats| match s.val_loss {
        Some(v) => println!(
            "epoch {:>3}  train_loss {:.6}  val_loss {:.6}",
            s.epoch, s.train_loss, v
        ),
        None => println!("epoch {:>3}  train_loss {:.6}", s.epoch, s.train_loss),
    };

    let trace = match kind {
        ModelKind::Icd => {
            let config = IcdConfig {
                patch_shape: manifest.patch_shape,
                ..IcdConfig::default()
            };
            let trained = train_icd(&data, config, &train_config, on_epoch)?;
            save_icd(&args.out, &trained)?;
            trained.trace
        }
        ModelKind::CnnMlp => {
            let config = BaselineConfig {
                patch_shape: manifest.patch_shape,
                ..BaselineConfig::default()
            };
            let trained = train_baseline(&data, config, &train_config, on_epoch)?;
            save_baseline(&args.out, &trained)?;
            trained.trace
        }
    };
    for s in &trace {
        log.push_str(&format!(
            "{},{},{}\n",
            s.epoch,
            s.train_loss,
            s.val_loss.map_or(String::new(), |v| v.to_string())
        ));
    }
    if let Some(path) = &args.loss_log {
        std::fs::write(path, log.as_bytes())?;
    }
    println!("saved model to {}", args.out.display());
    Ok(())
}

pub fn predict(args: PredictArgs) -> Result<(), CliError> {
    let split: Split = args.split.parse().map_err(CliError::Usage)?;
    let (manifest, samples) = read_dataset(&args.data)?;
    let wanted: std::collections::HashSet<&str> = manifest
        .cases
        .iter()
        .filter(|c| c.split == split)
        .map(|c| c.id.as_str())
        .collect();
    let selected: Vec<Sample> = samples
        .iter()
        .filter(|s| wanted.contains(s.case_id.as_str()))
        .cloned()
        .collect();
    if selected.is_empty() {
        return Err(CliError::Data(format!(
            "no samples in split '{}'",
            args.split
        )));
    }

    let records = match load_model(&args.model)? {
        StoredModel::Icd(mut trained) => {
            if let Some(k) = args.samples {
                if k == 0 {
                    return Err(CliError::Usage("--samples must be at least 1".into()));
                }
                trained.model.config.inference_samples = k;
            }
            predict_icd(&trained, &selected, args.seed)?
        }
        StoredModel::Baseline(trained) => predict_baseline(&trained, &selected)?,
    };
    write_predictions(&args.out, &records)?;
    println!(
        "wrote {} predictions to {}",
        records.len(),
        args.out.display()
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let records = read_predictions(&args.preds)?;
    let report = case_report(&records)?;
    std::fs::write(&args.report, serde_json::to_string_pretty(&report)?)?;
    if args.table {
        print!("{}", render_table(&report));
    }
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "mean over {} cases: R2 {} %, Pearson {} %, RMSE {} mmHg, NRMSE {}",
        report.cases.len(),
        fmt(report.mean.r_squared_pct),
        fmt(report.mean.pearson_pct),
        fmt(report.mean.rmse),
        fmt(report.mean.nrmse),
    );
    Ok(())
}

pub fn export_vis(args: ExportVisArgs) -> Result<(), CliError> {
    let records = read_predictions(&args.preds)?;
    let case: Vec<PredictionRecord> = records
        .into_iter()
        .filter(|r| r.case_id == args.case)
        .collect();
    if case.is_empty() {
        return Err(CliError::Data(format!(
            "no predictions for case '{}'",
            args.case
        )));
    }
    let colormap = match args.thresholds {
        Some([t1, t2, t3]) => ColorMapSpec::new(t1, t2, t3)?,
        None => {
            let n = case.len() as f64;
            let mean = case.iter().map(|r| r.y_true_mmhg).sum::<f64>() / n;
            let var = case
                .iter()
                .map(|r| (r.y_true_mmhg - mean).powi(2))
                .sum::<f64>()
                / n;
            ColorMapSpec::from_label_std(var.sqrt()).map_err(|e| {
                CliError::Data(format!(
                    "cannot derive thresholds from case '{}' ({e}); pass --thresholds",
                    args.case
                ))
            })?
        }
    };
    export_ply(&args.out, &case, &colormap)?;
    println!("wrote {} vertices to {}", case.len(), args.out.display());
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let kind = parse_model_kind(&args.model)?;
    let report = grad_check_report(kind, args.tolerance, args.seed)?;
    print!("{report}");
    println!(
        "max relative error {:.3e} (tolerance {:.1e})",
        report.max_rel_err(),
        args.tolerance
    );
    if !report.passed() {
        return Err(CliError::Numeric(format!(
            "gradient check failed: {} of {} parameter groups exceed {:.1e}",
            report.failures().len(),
            report.entries.len(),
            args.tolerance
        )));
    }
    println!("gradient check passed");
    Ok(())
}
