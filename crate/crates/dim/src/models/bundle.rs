//! Model persistence: a bundle is a directory holding a human-readable
//! `manifest.txt` plus one checkpoint file per network.

use super::{AnyModel, DimClassifier, ImBank, LogitClassifier};
use crate::error::{DimError, Result};
use crate::nn::{load_checkpoint_file, save_checkpoint_file};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

fn parse_manifest(text: &str) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    map
}

/// Write `model` into `dir` (created if missing).
pub fn save_model(model: &AnyModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DimError::io(dir.display().to_string(), e))?;
    let mut manifest = String::new();
    match model {
        AnyModel::Logit(m) => {
            writeln!(manifest, "kind = logit").unwrap();
            writeln!(manifest, "name = {}", m.name).unwrap();
            writeln!(manifest, "binarize_input = {}", m.binarize_input).unwrap();
            writeln!(manifest, "net = model.dimc").unwrap();
            save_checkpoint_file(&m.net, &dir.join("model.dimc"))?;
        }
        AnyModel::Dim(m) => {
            writeln!(manifest, "kind = dim_family").unwrap();
            writeln!(manifest, "name = {}", m.name).unwrap();
            writeln!(manifest, "binarize_input = {}", m.binarize_input).unwrap();
            writeln!(manifest, "binarize_denoised = {}", m.binarize_denoised).unwrap();
            if let Some(dn) = &m.denoiser {
                writeln!(manifest, "denoiser = denoiser.dimc").unwrap();
                save_checkpoint_file(dn, &dir.join("denoiser.dimc"))?;
            }
            match &m.bank {
                ImBank::Separate(models) => {
                    writeln!(manifest, "bank = separate").unwrap();
                    for (i, net) in models.iter().enumerate() {
                        writeln!(manifest, "im_{i} = im_{i}.dimc").unwrap();
                        save_checkpoint_file(net, &dir.join(format!("im_{i}.dimc")))?;
                    }
                }
                ImBank::SingleHead { encoder, decoders } => {
                    writeln!(manifest, "bank = single_head").unwrap();
                    writeln!(manifest, "encoder = encoder.dimc").unwrap();
                    save_checkpoint_file(encoder, &dir.join("encoder.dimc"))?;
                    for (i, net) in decoders.iter().enumerate() {
                        writeln!(manifest, "dec_{i} = dec_{i}.dimc").unwrap();
                        save_checkpoint_file(net, &dir.join(format!("dec_{i}.dimc")))?;
                    }
                }
            }
        }
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).map_err(|e| DimError::io(path.display().to_string(), e))
}

/// Load a bundle previously written by [`save_model`].
pub fn load_model(dir: &Path) -> Result<AnyModel> {
    let path = dir.join("manifest.txt");
    let text =
        std::fs::read_to_string(&path).map_err(|e| DimError::io(path.display().to_string(), e))?;
    let map = parse_manifest(&text);
    let get = |k: &str| -> Result<&String> {
        map.get(k)
            .ok_or_else(|| DimError::Config(format!("{}: missing key '{k}'", path.display())))
    };
    let flag = |k: &str| -> Result<bool> {
        get(k)?
            .parse::<bool>()
            .map_err(|_| DimError::Config(format!("{}: key '{k}' is not a bool", path.display())))
    };
    let name = get("name")?.clone();
    match get("kind")?.as_str() {
        "logit" => {
            let net = load_checkpoint_file(&dir.join(get("net")?))?;
            Ok(AnyModel::Logit(LogitClassifier::new(
                &name,
                net,
                flag("binarize_input")?,
            )))
        }
        "dim_family" => {
            let denoiser = match map.get("denoiser") {
                Some(file) => Some(load_checkpoint_file(&dir.join(file))?),
                None => None,
            };
            let bank = match get("bank")?.as_str() {
                "separate" => {
                    let mut models = Vec::new();
                    for i in 0.. {
                        match map.get(&format!("im_{i}")) {
                            Some(file) => models.push(load_checkpoint_file(&dir.join(file))?),
                            None => break,
                        }
                    }
                    if models.is_empty() {
                        return Err(DimError::Config(format!(
                            "{}: no internal-model checkpoints listed",
                            path.display()
                        )));
                    }
                    ImBank::Separate(models)
                }
                "single_head" => {
                    let encoder = load_checkpoint_file(&dir.join(get("encoder")?))?;
                    let mut decoders = Vec::new();
                    for i in 0.. {
                        match map.get(&format!("dec_{i}")) {
                            Some(file) => decoders.push(load_checkpoint_file(&dir.join(file))?),
                            None => break,
                        }
                    }
                    ImBank::SingleHead { encoder, decoders }
                }
                other => {
                    return Err(DimError::Config(format!(
                        "{}: unknown bank kind '{other}'",
                        path.display()
                    )))
                }
            };
            Ok(AnyModel::Dim(DimClassifier {
                name,
                denoiser,
                bank,
                binarize_input: flag("binarize_input")?,
                binarize_denoised: flag("binarize_denoised")?,
                attack_loss: Default::default(),
            }))
        }
        other => Err(DimError::Config(format!(
            "{}: unknown model kind '{other}'",
            path.display()
        ))),
    }
}
