//! Run configuration: a small sectioned key-value file plus CLI/env
//! overrides. Defaults reproduce the reference training and evaluation
//! setup, so `train --model dim` works with no config at all.

use crate::attacks::{AttackKind, Norm};
use crate::error::{DimError, Result};
use crate::eval::Thresholds;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
pub struct TrainSection {
    pub denoiser_epochs: usize,
    pub im_epochs: usize,
    pub baseline_epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub linf_noise: f32,
    pub l0_flip_prob: f32,
    pub madry_steps: usize,
    pub madry_eps: f32,
    pub madry_step_size: f32,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            denoiser_epochs: 20,
            im_epochs: 20,
            baseline_epochs: 20,
            batch_size: 128,
            lr: 1e-3,
            linf_noise: 0.5,
            l0_flip_prob: 1.0 / 12.0,
            madry_steps: 40,
            madry_eps: 0.3,
            madry_step_size: 0.01,
        }
    }
}

/// Attack hyperparameters. The iterative-attack schedules default to the
/// era defaults of the reference attack toolkit: L2 PGD 50 steps at
/// 0.025*eps, Linf PGD 40 steps at eps/30, basic iterative 10 steps at
/// 0.2*eps.
#[derive(Debug, Clone)]
pub struct AttackSection {
    pub samples: usize,
    pub attacks: Vec<(Norm, AttackKind)>,
    /// Loss for gradient attacks on intensity models: "ce" (scores consumed
    /// as logits, the reference protocol) or "margin" (sharper surrogate).
    pub dim_loss: String,
    pub pgd_steps_l2: usize,
    pub pgd_steps_linf: usize,
    pub pgd_rel_step_l2: f32,
    pub pgd_rel_step_linf: f32,
    pub bim_steps: usize,
    pub bim_rel_step: f32,
    pub deepfool_steps: usize,
    pub ddn_steps: usize,
    pub cw_steps: usize,
    pub boundary_queries: usize,
    pub blend_steps: usize,
    pub saltpepper_levels: usize,
    pub noise_repeats: usize,
    pub pointwise_repeats: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        AttackSection {
            samples: 1000,
            attacks: preset_attacks("fast").expect("fast preset exists"),
            dim_loss: "ce".into(),
            pgd_steps_l2: 50,
            pgd_steps_linf: 40,
            pgd_rel_step_l2: 0.025,
            pgd_rel_step_linf: 1.0 / 30.0,
            bim_steps: 10,
            bim_rel_step: 0.2,
            deepfool_steps: 50,
            ddn_steps: 100,
            cw_steps: 200,
            boundary_queries: 5000,
            blend_steps: 1000,
            saltpepper_levels: 50,
            noise_repeats: 10,
            pointwise_repeats: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TsneSection {
    pub samples: usize,
    pub perplexity: f64,
    pub iters: usize,
}

impl Default for TsneSection {
    fn default() -> Self {
        TsneSection { samples: 1000, perplexity: 30.0, iters: 1000 }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub train: TrainSection,
    pub attack: AttackSection,
    pub thresholds: Thresholds,
    pub tsne: TsneSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data/mnist"),
            out_dir: PathBuf::from("runs/default"),
            seed: 0,
            train: TrainSection::default(),
            attack: AttackSection::default(),
            thresholds: Thresholds::default(),
            tsne: TsneSection::default(),
        }
    }
}

/// Named attack suites. `fast` covers the gradient subset; `full` the whole
/// implemented registry laid out per norm.
pub fn preset_attacks(name: &str) -> Result<Vec<(Norm, AttackKind)>> {
    use AttackKind::*;
    Ok(match name {
        "fast" => vec![
            (Norm::L2, FastGradient),
            (Norm::L2, Pgd),
            (Norm::L2, BasicIterative),
            (Norm::Linf, FastGradient),
            (Norm::Linf, Pgd),
            (Norm::Linf, BasicIterative),
        ],
        "full" => {
            use crate::attacks::BlendStrategy::{BinarySearch, Direct, LinearSearch};
            let mut v = Vec::new();
            // The L2 block of the appendix layout.
            for kind in [
                ContrastReduction { strategy: Direct },
                Ddn,
                Pgd,
                BasicIterative,
                FastGradient,
                GaussianNoise { clipping_aware: false, repeated: false },
                UniformNoise { clipping_aware: false, repeated: false },
                GaussianNoise { clipping_aware: true, repeated: false },
                UniformNoise { clipping_aware: true, repeated: false },
                GaussianNoise { clipping_aware: false, repeated: true },
                UniformNoise { clipping_aware: false, repeated: true },
                GaussianNoise { clipping_aware: true, repeated: true },
                UniformNoise { clipping_aware: true, repeated: true },
                DeepFool,
                Inversion,
                ContrastReduction { strategy: BinarySearch },
                ContrastReduction { strategy: LinearSearch },
                GaussianBlur,
                CarliniWagner,
                Boundary,
            ] {
                v.push((Norm::L2, kind));
            }
            // Linf block.
            for kind in [
                Pgd,
                BasicIterative,
                FastGradient,
                UniformNoise { clipping_aware: false, repeated: false },
                UniformNoise { clipping_aware: false, repeated: true },
                DeepFool,
                Inversion,
                ContrastReduction { strategy: BinarySearch },
                ContrastReduction { strategy: LinearSearch },
                GaussianBlur,
                BlendedUniformNoise,
            ] {
                v.push((Norm::Linf, kind));
            }
            // L0 block.
            v.push((Norm::L0, SaltAndPepper));
            v.push((Norm::L0, Pointwise));
            // L1 block.
            for kind in [
                Inversion,
                ContrastReduction { strategy: BinarySearch },
                ContrastReduction { strategy: LinearSearch },
                GaussianBlur,
                BlendedUniformNoise,
            ] {
                v.push((Norm::L1, kind));
            }
            v
        }
        other => return Err(DimError::Config(format!("unknown attack preset '{other}'"))),
    })
}

/// Parse an attack list: comma-separated `NORM:AttackName` entries or a
/// preset name.
pub fn parse_attack_list(spec: &str) -> Result<Vec<(Norm, AttackKind)>> {
    if !spec.contains(':') {
        return preset_attacks(spec);
    }
    let mut out = Vec::new();
    for entry in spec.split(',') {
        let entry = entry.trim();
        if entry.is_empty() {
            continue;
        }
        let (norm, name) = entry
            .split_once(':')
            .ok_or_else(|| DimError::Config(format!("attack entry '{entry}' is not NORM:Name")))?;
        out.push((Norm::parse(norm.trim())?, AttackKind::parse(name.trim())?));
    }
    if out.is_empty() {
        return Err(DimError::Config("empty attack list".into()));
    }
    Ok(out)
}

fn parse_sections(text: &str) -> BTreeMap<String, BTreeMap<String, String>> {
    let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut current = String::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
        } else if let Some((k, v)) = line.split_once('=') {
            sections
                .entry(current.clone())
                .or_default()
                .insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    sections
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DimError::io(path.display().to_string(), e))?;
        RunConfig::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<RunConfig> {
        let sections = parse_sections(text);
        let mut cfg = RunConfig::default();
        let get = |section: &str, key: &str| -> Option<&String> {
            sections.get(section).and_then(|s| s.get(key))
        };
        macro_rules! set {
            ($target:expr, $section:literal, $key:literal) => {
                if let Some(v) = get($section, $key) {
                    $target = v.parse().map_err(|_| {
                        DimError::Config(format!("[{}] {} = '{v}' does not parse", $section, $key))
                    })?;
                }
            };
        }
        if let Some(v) = get("data", "dir") {
            cfg.data_dir = PathBuf::from(v);
        }
        if let Some(v) = get("run", "out") {
            cfg.out_dir = PathBuf::from(v);
        }
        set!(cfg.seed, "run", "seed");
        set!(cfg.train.denoiser_epochs, "train", "denoiser_epochs");
        set!(cfg.train.im_epochs, "train", "im_epochs");
        set!(cfg.train.baseline_epochs, "train", "baseline_epochs");
        set!(cfg.train.batch_size, "train", "batch_size");
        set!(cfg.train.lr, "train", "lr");
        set!(cfg.train.linf_noise, "train", "linf_noise");
        set!(cfg.train.l0_flip_prob, "train", "l0_flip_prob");
        set!(cfg.train.madry_steps, "train", "madry_steps");
        set!(cfg.train.madry_eps, "train", "madry_eps");
        set!(cfg.train.madry_step_size, "train", "madry_step_size");
        set!(cfg.attack.samples, "attack", "samples");
        if let Some(v) = get("attack", "attacks") {
            cfg.attack.attacks = parse_attack_list(v)?;
        }
        if let Some(v) = get("attack", "dim_loss") {
            if v != "ce" && v != "margin" {
                return Err(DimError::Config(format!(
                    "[attack] dim_loss must be 'ce' or 'margin', got '{v}'"
                )));
            }
            cfg.attack.dim_loss = v.clone();
        }
        set!(cfg.attack.pgd_steps_l2, "attack", "pgd_steps_l2");
        set!(cfg.attack.pgd_steps_linf, "attack", "pgd_steps_linf");
        set!(cfg.attack.pgd_rel_step_l2, "attack", "pgd_rel_step_l2");
        set!(cfg.attack.pgd_rel_step_linf, "attack", "pgd_rel_step_linf");
        set!(cfg.attack.bim_steps, "attack", "bim_steps");
        set!(cfg.attack.bim_rel_step, "attack", "bim_rel_step");
        set!(cfg.attack.deepfool_steps, "attack", "deepfool_steps");
        set!(cfg.attack.ddn_steps, "attack", "ddn_steps");
        set!(cfg.attack.cw_steps, "attack", "cw_steps");
        set!(cfg.attack.boundary_queries, "attack", "boundary_queries");
        set!(cfg.attack.blend_steps, "attack", "blend_steps");
        set!(cfg.attack.saltpepper_levels, "attack", "saltpepper_levels");
        set!(cfg.attack.noise_repeats, "attack", "noise_repeats");
        set!(cfg.attack.pointwise_repeats, "attack", "pointwise_repeats");
        set!(cfg.thresholds.l0, "thresholds", "l0");
        set!(cfg.thresholds.l1, "thresholds", "l1");
        set!(cfg.thresholds.l2, "thresholds", "l2");
        set!(cfg.thresholds.linf, "thresholds", "linf");
        set!(cfg.tsne.samples, "tsne", "samples");
        set!(cfg.tsne.perplexity, "tsne", "perplexity");
        set!(cfg.tsne.iters, "tsne", "iters");
        if cfg.thresholds.l0 <= 0.0
            || cfg.thresholds.l1 <= 0.0
            || cfg.thresholds.l2 <= 0.0
            || cfg.thresholds.linf <= 0.0
        {
            return Err(DimError::Config("thresholds must be positive".into()));
        }
        Ok(cfg)
    }

    /// Echo the effective configuration (manifest contents).
    pub fn echo(&self) -> String {
        let mut s = String::new();
        writeln!(s, "[data]").unwrap();
        writeln!(s, "dir = {}", self.data_dir.display()).unwrap();
        writeln!(s, "[run]").unwrap();
        writeln!(s, "out = {}", self.out_dir.display()).unwrap();
        writeln!(s, "seed = {}", self.seed).unwrap();
        writeln!(s, "[train]").unwrap();
        writeln!(s, "denoiser_epochs = {}", self.train.denoiser_epochs).unwrap();
        writeln!(s, "im_epochs = {}", self.train.im_epochs).unwrap();
        writeln!(s, "baseline_epochs = {}", self.train.baseline_epochs).unwrap();
        writeln!(s, "batch_size = {}", self.train.batch_size).unwrap();
        writeln!(s, "lr = {}", self.train.lr).unwrap();
        writeln!(s, "linf_noise = {}", self.train.linf_noise).unwrap();
        writeln!(s, "l0_flip_prob = {}", self.train.l0_flip_prob).unwrap();
        writeln!(s, "madry_steps = {}", self.train.madry_steps).unwrap();
        writeln!(s, "madry_eps = {}", self.train.madry_eps).unwrap();
        writeln!(s, "madry_step_size = {}", self.train.madry_step_size).unwrap();
        writeln!(s, "[attack]").unwrap();
        writeln!(s, "samples = {}", self.attack.samples).unwrap();
        let list: Vec<String> = self
            .attack
            .attacks
            .iter()
            .map(|(n, k)| format!("{}:{}", n.as_str(), k.name()))
            .collect();
        writeln!(s, "attacks = {}", list.join(",")).unwrap();
        writeln!(s, "dim_loss = {}", self.attack.dim_loss).unwrap();
        writeln!(s, "pgd_steps_l2 = {}", self.attack.pgd_steps_l2).unwrap();
        writeln!(s, "pgd_steps_linf = {}", self.attack.pgd_steps_linf).unwrap();
        writeln!(s, "pgd_rel_step_l2 = {}", self.attack.pgd_rel_step_l2).unwrap();
        writeln!(s, "pgd_rel_step_linf = {}", self.attack.pgd_rel_step_linf).unwrap();
        writeln!(s, "bim_steps = {}", self.attack.bim_steps).unwrap();
        writeln!(s, "bim_rel_step = {}", self.attack.bim_rel_step).unwrap();
        writeln!(s, "deepfool_steps = {}", self.attack.deepfool_steps).unwrap();
        writeln!(s, "ddn_steps = {}", self.attack.ddn_steps).unwrap();
        writeln!(s, "cw_steps = {}", self.attack.cw_steps).unwrap();
        writeln!(s, "boundary_queries = {}", self.attack.boundary_queries).unwrap();
        writeln!(s, "blend_steps = {}", self.attack.blend_steps).unwrap();
        writeln!(s, "saltpepper_levels = {}", self.attack.saltpepper_levels).unwrap();
        writeln!(s, "noise_repeats = {}", self.attack.noise_repeats).unwrap();
        writeln!(s, "pointwise_repeats = {}", self.attack.pointwise_repeats).unwrap();
        writeln!(s, "[thresholds]").unwrap();
        writeln!(s, "l0 = {}", self.thresholds.l0).unwrap();
        writeln!(s, "l1 = {}", self.thresholds.l1).unwrap();
        writeln!(s, "l2 = {}", self.thresholds.l2).unwrap();
        writeln!(s, "linf = {}", self.thresholds.linf).unwrap();
        writeln!(s, "[tsne]").unwrap();
        writeln!(s, "samples = {}", self.tsne.samples).unwrap();
        writeln!(s, "perplexity = {}", self.tsne.perplexity).unwrap();
        writeln!(s, "iters = {}", self.tsne.iters).unwrap();
        s
    }
}
