//! Adversarial archives: one directory per (model, attack) holding a
//! key-value manifest and fixed-width binary per-sample records
//! (u32 index, u8 success, four f32 distances, 784 f32 pixels, all LE).
//! The same format serves as the import path for externally computed
//! attacks.

use super::{AttackConfig, AttackResult, Distances, Norm};
use crate::data::IMAGE_PIXELS;
use crate::error::{DimError, Result};
use std::fmt::Write as _;
use std::path::Path;

const RECORD_LEN: usize = 4 + 1 + 4 * 4 + IMAGE_PIXELS * 4;

#[derive(Debug, Clone)]
pub struct ArchiveRecord {
    pub index: u32,
    pub success: bool,
    pub distances: Distances,
    pub image: Option<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct AttackArchive {
    pub model: String,
    pub attack: String,
    pub norm: Norm,
    pub epsilon: Option<f32>,
    pub records: Vec<ArchiveRecord>,
}

impl AttackArchive {
    pub fn from_results(
        model: &str,
        attack: &str,
        cfg: &AttackConfig,
        results: &[AttackResult],
    ) -> AttackArchive {
        AttackArchive {
            model: model.into(),
            attack: attack.into(),
            norm: cfg.norm,
            epsilon: cfg.epsilon,
            records: results
                .iter()
                .enumerate()
                .map(|(i, r)| ArchiveRecord {
                    index: i as u32,
                    success: r.success,
                    distances: r.distances,
                    image: r.adversarial.clone(),
                })
                .collect(),
        }
    }
}

pub fn write_archive(archive: &AttackArchive, dir: &Path, cfg_echo: Option<&AttackConfig>) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| DimError::io(dir.display().to_string(), e))?;
    let mut manifest = String::new();
    writeln!(manifest, "model = {}", archive.model).unwrap();
    writeln!(manifest, "attack = {}", archive.attack).unwrap();
    writeln!(manifest, "norm = {}", archive.norm.as_str()).unwrap();
    match archive.epsilon {
        Some(e) => writeln!(manifest, "epsilon = {e}").unwrap(),
        None => writeln!(manifest, "epsilon = unbounded").unwrap(),
    }
    writeln!(manifest, "samples = {}", archive.records.len()).unwrap();
    if let Some(cfg) = cfg_echo {
        writeln!(manifest, "steps = {}", cfg.steps).unwrap();
        if let Some(s) = cfg.step_size {
            writeln!(manifest, "step_size = {s}").unwrap();
        }
        writeln!(manifest, "random_start = {}", cfg.random_start).unwrap();
        writeln!(manifest, "repeats = {}", cfg.repeats).unwrap();
        writeln!(manifest, "seed = {}", cfg.seed).unwrap();
    }
    let mpath = dir.join("manifest.txt");
    std::fs::write(&mpath, manifest).map_err(|e| DimError::io(mpath.display().to_string(), e))?;

    let mut bytes = Vec::with_capacity(archive.records.len() * RECORD_LEN);
    for r in &archive.records {
        bytes.extend_from_slice(&r.index.to_le_bytes());
        bytes.push(u8::from(r.success));
        for d in [r.distances.l0, r.distances.l1, r.distances.l2, r.distances.linf] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        match &r.image {
            Some(img) => {
                if img.len() != IMAGE_PIXELS {
                    return Err(DimError::Archive(format!(
                        "record {} image has {} pixels",
                        r.index,
                        img.len()
                    )));
                }
                for px in img {
                    bytes.extend_from_slice(&px.to_le_bytes());
                }
            }
            None => bytes.extend(std::iter::repeat(0u8).take(IMAGE_PIXELS * 4)),
        }
    }
    let rpath = dir.join("records.bin");
    std::fs::write(&rpath, bytes).map_err(|e| DimError::io(rpath.display().to_string(), e))
}

pub fn read_archive(dir: &Path) -> Result<AttackArchive> {
    let mpath = dir.join("manifest.txt");
    let text =
        std::fs::read_to_string(&mpath).map_err(|e| DimError::io(mpath.display().to_string(), e))?;
    let mut model = None;
    let mut attack = None;
    let mut norm = None;
    let mut epsilon = None;
    let mut samples = None;
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        let (k, v) = (k.trim(), v.trim());
        match k {
            "model" => model = Some(v.to_string()),
            "attack" => attack = Some(v.to_string()),
            "norm" => norm = Some(Norm::parse(v)?),
            "epsilon" => {
                if v != "unbounded" {
                    epsilon = Some(v.parse::<f32>().map_err(|_| {
                        DimError::Archive(format!("{}: bad epsilon '{v}'", mpath.display()))
                    })?);
                }
            }
            "samples" => {
                samples = Some(v.parse::<usize>().map_err(|_| {
                    DimError::Archive(format!("{}: bad sample count '{v}'", mpath.display()))
                })?)
            }
            _ => {}
        }
    }
    let (Some(model), Some(attack), Some(norm)) = (model, attack, norm) else {
        return Err(DimError::Archive(format!(
            "{}: manifest missing model/attack/norm",
            mpath.display()
        )));
    };

    let rpath = dir.join("records.bin");
    let bytes = std::fs::read(&rpath).map_err(|e| DimError::io(rpath.display().to_string(), e))?;
    if bytes.len() % RECORD_LEN != 0 {
        return Err(DimError::Archive(format!(
            "{}: {} bytes is not a whole number of {RECORD_LEN}-byte records",
            rpath.display(),
            bytes.len()
        )));
    }
    let count = bytes.len() / RECORD_LEN;
    if let Some(s) = samples {
        if s != count {
            return Err(DimError::Archive(format!(
                "{}: manifest says {s} samples, file holds {count}",
                rpath.display()
            )));
        }
    }
    let mut records = Vec::with_capacity(count);
    for rec in bytes.chunks_exact(RECORD_LEN) {
        let index = u32::from_le_bytes(rec[0..4].try_into().unwrap());
        let success = rec[4] != 0;
        let f = |at: usize| f32::from_le_bytes(rec[at..at + 4].try_into().unwrap());
        let distances = Distances { l0: f(5), l1: f(9), l2: f(13), linf: f(17) };
        let image = if success {
            let mut img = Vec::with_capacity(IMAGE_PIXELS);
            for p in 0..IMAGE_PIXELS {
                img.push(f(21 + 4 * p));
            }
            Some(img)
        } else {
            None
        };
        records.push(ArchiveRecord { index, success, distances, image });
    }
    Ok(AttackArchive { model, attack, norm, epsilon, records })
}
