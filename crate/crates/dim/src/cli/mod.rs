//! Orchestration: train / attack / report / tsne subcommands over a run
//! directory, with manifests that pin config, seed, and content hashes.

mod config;

pub use config::{parse_attack_list, preset_attacks, AttackSection, RunConfig, TrainSection, TsneSection};

use crate::attacks::{
    run_attack, write_archive, AttackArchive, AttackConfig, AttackKind, Norm,
};
use crate::data::{load_idx, ImageBatch, NoiseSpec};
use crate::error::{DimError, Result};
use crate::eval::{
    class_silhouette, emit_report, emit_scatter, extract_latents, summarize, tsne_embed,
    DistanceTable, TsneConfig,
};
use crate::models::{
    clean_accuracy, load_model, save_model, train_baseline, train_denoiser, train_dim, AnyModel,
    BaselineKind, DimAttackLoss, TrainConfig,
};
use crate::rng;
use rand::seq::SliceRandom;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Dataset root: explicit flag beats `DIM_DATA_DIR` beats the config value.
pub fn resolve_data_dir(cfg: &RunConfig, flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var("DIM_DATA_DIR") {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    cfg.data_dir.clone()
}

pub fn load_train(data_dir: &Path) -> Result<ImageBatch> {
    load_idx(
        &data_dir.join("train-images-idx3-ubyte"),
        &data_dir.join("train-labels-idx1-ubyte"),
    )
}

pub fn load_test(data_dir: &Path) -> Result<ImageBatch> {
    load_idx(
        &data_dir.join("t10k-images-idx3-ubyte"),
        &data_dir.join("t10k-labels-idx1-ubyte"),
    )
}

/// Evaluation subset: the first `count` test images under the seed's shuffle.
pub fn eval_subset(test: &ImageBatch, seed: u64, count: usize) -> Result<ImageBatch> {
    let mut order: Vec<usize> = (0..test.len()).collect();
    order.shuffle(&mut rng::stream(seed, "eval-subset", 0));
    order.truncate(count.min(test.len()));
    test.select(&order)
}

fn write_manifest(dir: &Path, name: &str, cfg: &RunConfig, extra: &[(String, String)]) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "tool = dim {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(text, "seed = {}", cfg.seed).unwrap();
    for (k, v) in extra {
        writeln!(text, "{k} = {v}").unwrap();
    }
    writeln!(text, "--- config echo ---").unwrap();
    text.push_str(&cfg.echo());
    let path = dir.join(format!("manifest_{name}.txt"));
    std::fs::create_dir_all(dir).map_err(|e| DimError::io(dir.display().to_string(), e))?;
    std::fs::write(&path, text).map_err(|e| DimError::io(path.display().to_string(), e))
}

fn hash_file(path: &Path) -> Result<u64> {
    let bytes = std::fs::read(path).map_err(|e| DimError::io(path.display().to_string(), e))?;
    Ok(rng::content_hash(&bytes))
}

fn write_loss_csv(path: &Path, traces: &[(String, Vec<f32>)]) -> Result<()> {
    let mut text = String::from("model,epoch,loss\n");
    for (name, trace) in traces {
        for (epoch, loss) in trace.iter().enumerate() {
            writeln!(text, "{name},{epoch},{loss}").unwrap();
        }
    }
    std::fs::write(path, text).map_err(|e| DimError::io(path.display().to_string(), e))
}

/// Train `model_kind` and persist a bundle below `<out>/models/<kind>`.
/// Returns the bundle path.
pub fn cmd_train(cfg: &RunConfig, model_kind: &str, data_flag: Option<&Path>) -> Result<PathBuf> {
    let data_dir = resolve_data_dir(cfg, data_flag);
    let train = load_train(&data_dir)?;
    let noise = NoiseSpec::new(cfg.train.linf_noise, cfg.train.l0_flip_prob, cfg.seed)?;
    let out = cfg.out_dir.join("models").join(model_kind);

    let mut traces: Vec<(String, Vec<f32>)> = Vec::new();
    let model: AnyModel = match model_kind {
        "dim" | "bidim" => {
            let den_cfg = TrainConfig {
                epochs: cfg.train.denoiser_epochs,
                batch_size: cfg.train.batch_size,
                lr: cfg.train.lr,
                seed: cfg.seed,
            };
            let im_cfg = TrainConfig { epochs: cfg.train.im_epochs, ..den_cfg.clone() };
            let (dim, t) = train_dim(&train, &noise, &den_cfg, &im_cfg)?;
            traces.push(("denoiser".into(), t.denoiser));
            for (k, tr) in t.internal.into_iter().enumerate() {
                traces.push((format!("im_{k}"), tr));
            }
            let dim = if model_kind == "bidim" {
                dim.with_flags("bidim", true, true)
            } else {
                dim
            };
            AnyModel::Dim(dim)
        }
        other => {
            let kind = BaselineKind::parse(other)?;
            let tc = TrainConfig {
                epochs: cfg.train.baseline_epochs,
                batch_size: cfg.train.batch_size,
                lr: cfg.train.lr,
                seed: cfg.seed,
            };
            // The denoised single-head variant trains a frozen first stage
            // of its own when none is shared in.
            let (model, trace) = match kind {
                BaselineKind::DnSingleIm => {
                    let den_cfg = TrainConfig { epochs: cfg.train.denoiser_epochs, ..tc.clone() };
                    let (den, den_trace) = train_denoiser(&train, &noise, &den_cfg)?;
                    traces.push(("denoiser".into(), den_trace));
                    train_baseline(kind, &train, &noise, &tc, Some(&den))?
                }
                _ => train_baseline(kind, &train, &noise, &tc, None)?,
            };
            traces.push((model_kind.to_string(), trace));
            model
        }
    };

    save_model(&model, &out)?;
    write_loss_csv(&out.join("loss.csv"), &traces)?;
    // Hash every checkpoint for the manifest.
    let mut extra = vec![("model".to_string(), model_kind.to_string())];
    let mut entries: Vec<_> = std::fs::read_dir(&out)
        .map_err(|e| DimError::io(out.display().to_string(), e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "dimc"))
        .collect();
    entries.sort();
    for p in entries {
        extra.push((
            format!("hash {}", p.file_name().unwrap().to_string_lossy()),
            format!("{:016x}", hash_file(&p)?),
        ));
    }
    write_manifest(&out, "train", cfg, &extra)?;
    Ok(out)
}

/// Resolve per-attack configuration from the config file sections.
pub fn attack_config(cfg: &RunConfig, norm: Norm, kind: AttackKind, model: &str) -> AttackConfig {
    let mut c = AttackConfig::new(norm);
    c.seed = rng::derive(cfg.seed, &format!("attack/{model}/{}:{}", norm.as_str(), kind.name()));
    let bounded = matches!(
        kind,
        AttackKind::FastGradient
            | AttackKind::Pgd
            | AttackKind::BasicIterative
            | AttackKind::GaussianNoise { .. }
            | AttackKind::UniformNoise { .. }
    );
    if bounded {
        c.epsilon = Some(cfg.thresholds.get(norm));
    }
    c.steps = match kind {
        AttackKind::Pgd => match norm {
            Norm::Linf => cfg.attack.pgd_steps_linf,
            _ => cfg.attack.pgd_steps_l2,
        },
        AttackKind::BasicIterative => cfg.attack.bim_steps,
        AttackKind::DeepFool => cfg.attack.deepfool_steps,
        AttackKind::Ddn => cfg.attack.ddn_steps,
        AttackKind::CarliniWagner => cfg.attack.cw_steps,
        AttackKind::Boundary => cfg.attack.boundary_queries,
        AttackKind::SaltAndPepper => cfg.attack.saltpepper_levels,
        AttackKind::ContrastReduction { .. }
        | AttackKind::GaussianBlur
        | AttackKind::BlendedUniformNoise
        | AttackKind::Inversion => cfg.attack.blend_steps,
        _ => 50,
    };
    if let Some(eps) = c.epsilon {
        c.step_size = match kind {
            AttackKind::Pgd => Some(match norm {
                Norm::Linf => eps * cfg.attack.pgd_rel_step_linf,
                _ => eps * cfg.attack.pgd_rel_step_l2,
            }),
            AttackKind::BasicIterative => Some(eps * cfg.attack.bim_rel_step),
            _ => None,
        };
    }
    c.repeats = match kind {
        AttackKind::Pointwise => cfg.attack.pointwise_repeats,
        AttackKind::GaussianNoise { repeated: true, .. }
        | AttackKind::UniformNoise { repeated: true, .. } => cfg.attack.noise_repeats,
        _ => 1,
    };
    c
}

/// Run the configured attacks against a trained bundle; one archive per
/// (model, attack) lands below `<out>/archives/<model>/`.
pub fn cmd_attack(
    cfg: &RunConfig,
    model_name: &str,
    attacks: &[(Norm, AttackKind)],
    data_flag: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    let data_dir = resolve_data_dir(cfg, data_flag);
    let bundle_dir = cfg.out_dir.join("models").join(model_name);
    let mut model = load_model(&bundle_dir)?;
    if let AnyModel::Dim(d) = &mut model {
        d.attack_loss = if cfg.attack.dim_loss == "margin" {
            DimAttackLoss::Margin
        } else {
            DimAttackLoss::IntensityCe
        };
    }
    let test = load_test(&data_dir)?;
    let subset = eval_subset(&test, cfg.seed, cfg.attack.samples)?;

    let mut written = Vec::new();
    for &(norm, kind) in attacks {
        let acfg = attack_config(cfg, norm, kind, model_name);
        let results = run_attack(model.as_target(), &subset, kind, &acfg)?;
        let archive = AttackArchive::from_results(model_name, kind.name(), &acfg, &results);
        let dir = cfg
            .out_dir
            .join("archives")
            .join(model_name)
            .join(format!("{}_{}", norm.as_str(), kind.name()));
        write_archive(&archive, &dir, Some(&acfg))?;
        written.push(dir);
    }
    write_manifest(
        &cfg.out_dir.join("archives").join(model_name),
        "attack",
        cfg,
        &[
            ("model".to_string(), model_name.to_string()),
            ("samples".to_string(), subset.len().to_string()),
        ],
    )?;
    Ok(written)
}

/// Re-validate archives: re-feed every stored success to the model and count
/// false successes (must be zero) and distance mismatches beyond 1e-6.
pub fn validate_archives(cfg: &RunConfig, model_name: &str, data_flag: Option<&Path>) -> Result<(usize, usize)> {
    let data_dir = resolve_data_dir(cfg, data_flag);
    let model = load_model(&cfg.out_dir.join("models").join(model_name))?;
    let test = load_test(&data_dir)?;
    let subset = eval_subset(&test, cfg.seed, cfg.attack.samples)?;
    let root = cfg.out_dir.join("archives").join(model_name);
    let mut false_successes = 0;
    let mut distance_mismatches = 0;
    for entry in std::fs::read_dir(&root).map_err(|e| DimError::io(root.display().to_string(), e))? {
        let path = entry.map_err(|e| DimError::io(root.display().to_string(), e))?.path();
        if !path.is_dir() {
            continue;
        }
        let archive = crate::attacks::read_archive(&path)?;
        for rec in &archive.records {
            if !rec.success {
                continue;
            }
            let img = rec.image.as_ref().expect("successful record stores its image");
            let pred = model
                .as_target()
                .predict(&crate::attacks::tensor_from_rows(std::slice::from_ref(img)))?[0];
            if pred == subset.labels[rec.index as usize] as usize {
                false_successes += 1;
            }
            let re = crate::attacks::Distances::between(img, subset.image(rec.index as usize));
            for (a, b) in [
                (re.l0, rec.distances.l0),
                (re.l1, rec.distances.l1),
                (re.l2, rec.distances.l2),
                (re.linf, rec.distances.linf),
            ] {
                if (a - b).abs() > 1e-6 {
                    distance_mismatches += 1;
                }
            }
        }
    }
    Ok((false_successes, distance_mismatches))
}

/// Build the distance table from every archive under the run directory and
/// render the report files.
pub fn cmd_report(cfg: &RunConfig, data_flag: Option<&Path>) -> Result<PathBuf> {
    let data_dir = resolve_data_dir(cfg, data_flag);
    let test = load_test(&data_dir)?;
    let subset = eval_subset(&test, cfg.seed, cfg.attack.samples)?;
    let archives_root = cfg.out_dir.join("archives");
    let mut archives: Vec<AttackArchive> = Vec::new();
    let mut model_names: Vec<String> = Vec::new();
    let entries = std::fs::read_dir(&archives_root)
        .map_err(|e| DimError::io(archives_root.display().to_string(), e))?;
    for entry in entries {
        let model_dir = entry
            .map_err(|e| DimError::io(archives_root.display().to_string(), e))?
            .path();
        if !model_dir.is_dir() {
            continue;
        }
        let name = model_dir.file_name().unwrap().to_string_lossy().to_string();
        let mut subdirs: Vec<PathBuf> = std::fs::read_dir(&model_dir)
            .map_err(|e| DimError::io(model_dir.display().to_string(), e))?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir() && p.join("manifest.txt").exists())
            .collect();
        subdirs.sort();
        let mut any = false;
        for dir in subdirs {
            archives.push(crate::attacks::read_archive(&dir)?);
            any = true;
        }
        if any {
            model_names.push(name);
        }
    }
    if archives.is_empty() {
        return Err(DimError::Invalid(format!(
            "no archives under {}",
            archives_root.display()
        )));
    }
    model_names.sort();
    // Clean predictions per model define the 0-distance convention.
    let mut models = Vec::new();
    for name in &model_names {
        let model = load_model(&cfg.out_dir.join("models").join(name))?;
        let preds = predict_all(model.as_target(), &subset)?;
        let clean: Vec<bool> = preds
            .iter()
            .zip(&subset.labels)
            .map(|(p, y)| *p == *y as usize)
            .collect();
        models.push((name.clone(), clean));
    }
    let table = DistanceTable::from_archives(models, &archives, &cfg.thresholds)?;
    let summaries = summarize(&table, &cfg.thresholds);
    let report_dir = cfg.out_dir.join("report");
    emit_report(&table, &summaries, &cfg.thresholds, &report_dir)?;
    write_manifest(&report_dir, "report", cfg, &[])?;
    Ok(report_dir)
}

pub fn predict_all(model: &dyn crate::models::TargetModel, batch: &ImageBatch) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(batch.len());
    let idx: Vec<usize> = (0..batch.len()).collect();
    for chunk in idx.chunks(256) {
        let sub = batch.select(chunk)?;
        out.extend(model.predict(&sub.images)?);
    }
    Ok(out)
}

/// t-SNE over the latents of every internal model of a trained bundle; one
/// scatter (SVG + CSV) per model plus a summary CSV.
pub fn cmd_tsne(cfg: &RunConfig, model_name: &str, data_flag: Option<&Path>) -> Result<PathBuf> {
    let data_dir = resolve_data_dir(cfg, data_flag);
    let model = load_model(&cfg.out_dir.join("models").join(model_name))?;
    let AnyModel::Dim(dim) = &model else {
        return Err(DimError::Config(format!(
            "{model_name} has no internal models to embed"
        )));
    };
    let test = load_test(&data_dir)?;
    let subset = eval_subset(&test, cfg.seed, cfg.tsne.samples)?;
    let out = cfg.out_dir.join("tsne").join(model_name);
    std::fs::create_dir_all(&out).map_err(|e| DimError::io(out.display().to_string(), e))?;
    let mut summary = String::from("model_index,initial_kl,final_kl,own_class_silhouette\n");
    for k in 0..dim.bank.num_classes() {
        let latents = extract_latents(dim, &subset, k)?;
        let tcfg = TsneConfig {
            perplexity: cfg.tsne.perplexity,
            iters: cfg.tsne.iters,
            seed: rng::derive(cfg.seed, &format!("tsne-{k}")),
            ..Default::default()
        };
        let embedding = tsne_embed(&latents, &subset.labels, k, &tcfg)?;
        let sil = class_silhouette(&embedding.points, &embedding.labels, k as u8);
        writeln!(
            summary,
            "{k},{},{},{sil}",
            embedding.initial_kl, embedding.final_kl
        )
        .unwrap();
        emit_scatter(&embedding, &out, &format!("model_{k}"))?;
    }
    std::fs::write(out.join("summary.csv"), summary)
        .map_err(|e| DimError::io(out.join("summary.csv").display().to_string(), e))?;
    write_manifest(&out, "tsne", cfg, &[("model".to_string(), model_name.to_string())])?;
    Ok(out)
}

/// Clean test accuracy of a stored bundle (handy for quick checks).
pub fn cmd_accuracy(cfg: &RunConfig, model_name: &str, data_flag: Option<&Path>) -> Result<f64> {
    let data_dir = resolve_data_dir(cfg, data_flag);
    let model = load_model(&cfg.out_dir.join("models").join(model_name))?;
    let test = load_test(&data_dir)?;
    clean_accuracy(model.as_target(), &test, 256)
}
