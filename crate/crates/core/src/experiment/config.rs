//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comments start with '#'
//! seed = 1
//! presets = base, base_kd, base_ul, base_kd_ul
//! student_arch = simple10:1/10
//! stage1.epochs = 20
//! ```
//!
//! Stage sections are `teacher_pretrain`, `teacher_finetune`, `stage1`
//! (unlabeled distillation), `stage2` (conditional distillation) and
//! `stage3` (hard labels); each takes `epochs`, `batch_size`,
//! `learning_rate`, `momentum`, `stop_accuracy` (`none` to disable) and an
//! optional `seed`. Unset stage seeds are derived from the master seed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::data::TargetStyle;
use crate::distill::{StageConfig, StudentStages};
use crate::error::{Error, Result};
use crate::model::Arch;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Preset {
    Base,
    BaseKd,
    BaseUl,
    BaseKdUl,
    /// Student with the teacher's architecture, conditional distillation only.
    Fig2SameSize,
}

impl Preset {
    pub const TABLE: [Preset; 4] = [Preset::Base, Preset::BaseKd, Preset::BaseUl, Preset::BaseKdUl];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Base => "base",
            Preset::BaseKd => "base_kd",
            Preset::BaseUl => "base_ul",
            Preset::BaseKdUl => "base_kd_ul",
            Preset::Fig2SameSize => "fig2_same_size",
        }
    }

    /// (unlabeled stage, conditional stage, hard stage)
    pub fn enabled(&self) -> (bool, bool, bool) {
        match self {
            Preset::Base => (false, false, true),
            Preset::BaseKd => (false, true, true),
            Preset::BaseUl => (true, false, true),
            Preset::BaseKdUl => (true, true, true),
            Preset::Fig2SameSize => (false, true, false),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Preset::Base, Preset::BaseKd, Preset::BaseUl, Preset::BaseKdUl, Preset::Fig2SameSize]
            .into_iter()
            .find(|p| p.name() == s.trim())
            .ok_or_else(|| Error::InvalidArgument(format!("unknown preset {s:?}")))
    }
}

/// Stage identifiers, also used as seed-derivation labels.
pub const STAGES: [&str; 5] = ["teacher_pretrain", "teacher_finetune", "stage1", "stage2", "stage3"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub presets: Vec<Preset>,
    pub student_arch: Arch,
    pub teacher_arch: Arch,
    pub num_classes: usize,
    pub target_n: usize,
    pub source_n: usize,
    pub source_classes: usize,
    pub unlabeled_m: usize,
    pub image_size: usize,
    pub channels: usize,
    /// Equalization tile side; `None` means a quarter of the image side.
    pub tile: Option<usize>,
    pub folds: usize,
    pub workers: usize,
    pub style: TargetStyle,
    /// Per-stage settings in [`STAGES`] order. A `None` seed is derived.
    pub stages: [StageSettings; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSettings {
    pub config: StageConfig,
    pub explicit_seed: Option<u64>,
}

impl StageSettings {
    fn new(epochs: usize, batch_size: usize, learning_rate: f64, stop_accuracy: Option<f64>) -> Self {
        Self {
            config: StageConfig { epochs, batch_size, learning_rate, momentum: 0.9, stop_accuracy, seed: 0 },
            explicit_seed: None,
        }
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            presets: Preset::TABLE.to_vec(),
            student_arch: Arch::Simple10("1/10".parse().expect("literal")),
            teacher_arch: Arch::Vgg16(16),
            num_classes: 3,
            target_n: 600,
            source_n: 1000,
            source_classes: 5,
            unlabeled_m: 2000,
            image_size: 32,
            channels: 3,
            tile: None,
            folds: 5,
            workers: 1,
            style: TargetStyle::default(),
            stages: [
                StageSettings::new(10, 32, 0.01, None),
                StageSettings::new(60, 32, 0.01, None),
                StageSettings::new(60, 32, 0.01, Some(0.9)),
                StageSettings::new(60, 32, 0.01, None),
                StageSettings::new(60, 32, 0.01, None),
            ],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, errors: &mut Vec<String>) -> Option<T> {
    match value.parse() {
        Ok(v) => Some(v),
        Err(_) => {
            errors.push(format!("{key}: cannot parse {value:?}"));
            None
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parses and validates; the error lists every problem found.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut errors = Vec::new();
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                errors.push(format!("line {}: expected key = value", lineno + 1));
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            if seen.insert(key.to_string(), lineno).is_some() {
                errors.push(format!("{key}: set more than once"));
            }
            cfg.set(key, value, &mut errors);
        }
        errors.extend(cfg.violations());
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(errors))
        }
    }

    fn set(&mut self, key: &str, value: &str, errors: &mut Vec<String>) {
        macro_rules! set {
            ($field:expr) => {
                if let Some(v) = parse(key, value, errors) {
                    $field = v;
                }
            };
        }
        match key {
            "seed" => set!(self.seed),
            "presets" | "preset" => {
                let parsed: Result<Vec<Preset>> = value.split(',').map(str::parse).collect();
                match parsed {
                    Ok(p) => self.presets = p,
                    Err(e) => errors.push(format!("{key}: {e}")),
                }
            }
            "student_arch" => set!(self.student_arch),
            "teacher_arch" => set!(self.teacher_arch),
            "classes" => set!(self.num_classes),
            "target_n" => set!(self.target_n),
            "source_n" => set!(self.source_n),
            "source_classes" => set!(self.source_classes),
            "unlabeled_m" => set!(self.unlabeled_m),
            "image_size" => set!(self.image_size),
            "channels" => set!(self.channels),
            "tile" => {
                if value == "auto" {
                    self.tile = None;
                } else if let Some(v) = parse(key, value, errors) {
                    self.tile = Some(v);
                }
            }
            "folds" => set!(self.folds),
            "workers" => set!(self.workers),
            "blobs_per_class" => set!(self.style.blobs_per_class),
            "blob_radius" => set!(self.style.blob_radius),
            "noise" => set!(self.style.noise),
            "vessels" => set!(self.style.vessels),
            _ => {
                let Some((section, field)) = key.split_once('.') else {
                    errors.push(format!("{key}: unknown key"));
                    return;
                };
                let Some(i) = STAGES.iter().position(|s| *s == section) else {
                    errors.push(format!("{key}: unknown stage section {section:?}"));
                    return;
                };
                let st = &mut self.stages[i];
                match field {
                    "epochs" => set!(st.config.epochs),
                    "batch_size" => set!(st.config.batch_size),
                    "learning_rate" | "lr" => set!(st.config.learning_rate),
                    "momentum" => set!(st.config.momentum),
                    "stop_accuracy" => {
                        if value == "none" {
                            st.config.stop_accuracy = None;
                        } else if let Some(v) = parse(key, value, errors) {
                            st.config.stop_accuracy = Some(v);
                        }
                    }
                    "seed" => {
                        if let Some(v) = parse(key, value, errors) {
                            st.explicit_seed = Some(v);
                        }
                    }
                    _ => errors.push(format!("{key}: unknown stage field {field:?}")),
                }
            }
        }
    }

    /// Every violated constraint, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.presets.is_empty() {
            v.push("presets: at least one preset required".into());
        }
        if self.num_classes < 2 {
            v.push("classes: need at least 2".into());
        }
        if self.target_n < self.num_classes * 10 {
            v.push(format!("target_n: need at least 10 images per class ({})", self.num_classes * 10));
        }
        if self.channels != 1 && self.channels != 3 {
            v.push("channels: must be 1 or 3".into());
        }
        if self.image_size < crate::data::MIN_SIDE {
            v.push(format!("image_size: must be at least {}", crate::data::MIN_SIDE));
        }
        if self.tile_side() < 2 {
            v.push("tile: must be at least 2".into());
        }
        if self.folds < 2 || self.folds > self.target_n {
            v.push("folds: must be in 2..=target_n".into());
        }
        if self.workers == 0 {
            v.push("workers: must be positive".into());
        }
        if !(1..=8).contains(&self.source_classes) {
            v.push("source_classes: must be in 1..=8".into());
        }
        if self.presets.iter().any(|p| p.enabled().0) && self.unlabeled_m == 0 {
            v.push("unlabeled_m: presets with unlabeled distillation need unlabeled images".into());
        }
        if self.style.blobs_per_class == 0 {
            v.push("blobs_per_class: must be positive".into());
        }
        if !(self.style.noise >= 0.0 && self.style.noise.is_finite()) {
            v.push("noise: must be non-negative".into());
        }
        if !(self.style.blob_radius > 0.0 && self.style.blob_radius.is_finite()) {
            v.push("blob_radius: must be positive".into());
        }
        let shape = [self.channels, self.image_size, self.image_size];
        for (name, arch) in [("student_arch", self.student_arch), ("teacher_arch", self.teacher_arch)] {
            if let Err(e) = arch.build(shape, self.num_classes.max(1)) {
                v.push(format!("{name}: {e}"));
            }
        }
        for (name, st) in STAGES.iter().zip(&self.stages) {
            v.extend(st.config.violations(name));
        }
        v
    }

    pub fn tile_side(&self) -> usize {
        self.tile.unwrap_or(self.image_size / 4)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.image_size, self.image_size]
    }

    /// Stage config with its seed resolved for `fold` (`u64::MAX` for
    /// fold-independent stages).
    pub fn stage(&self, name: &str, fold: u64) -> StageConfig {
        let i = STAGES.iter().position(|s| *s == name).expect("known stage");
        let st = &self.stages[i];
        let mut c = st.config.clone();
        c.seed = st.explicit_seed.unwrap_or_else(|| derive_seed(self.seed, &[0x5747 + i as u64, fold]));
        c
    }

    pub fn student_stages(&self, preset: Preset, fold: u64) -> StudentStages {
        let (ul, kd, hard) = preset.enabled();
        StudentStages {
            unlabeled: ul.then(|| self.stage("stage1", fold)),
            conditional: kd.then(|| self.stage("stage2", fold)),
            hard: hard.then(|| self.stage("stage3", fold)),
        }
    }

    pub fn student_arch_for(&self, preset: Preset) -> Arch {
        match preset {
            Preset::Fig2SameSize => self.teacher_arch,
            _ => self.student_arch,
        }
    }

    /// Canonical text form; parsing it yields an identical config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let presets: Vec<&str> = self.presets.iter().map(Preset::name).collect();
        let lines = [
            ("seed", self.seed.to_string()),
            ("presets", presets.join(",")),
            ("student_arch", self.student_arch.to_string()),
            ("teacher_arch", self.teacher_arch.to_string()),
            ("classes", self.num_classes.to_string()),
            ("target_n", self.target_n.to_string()),
            ("source_n", self.source_n.to_string()),
            ("source_classes", self.source_classes.to_string()),
            ("unlabeled_m", self.unlabeled_m.to_string()),
            ("image_size", self.image_size.to_string()),
            ("channels", self.channels.to_string()),
            ("tile", self.tile.map_or("auto".to_string(), |t| t.to_string())),
            ("folds", self.folds.to_string()),
            ("workers", self.workers.to_string()),
            ("blobs_per_class", self.style.blobs_per_class.to_string()),
            ("blob_radius", self.style.blob_radius.to_string()),
            ("noise", self.style.noise.to_string()),
            ("vessels", self.style.vessels.to_string()),
        ];
        for (k, v) in lines {
            s.push_str(&format!("{k} = {v}\n"));
        }
        for (name, st) in STAGES.iter().zip(&self.stages) {
            let c = &st.config;
            s.push_str(&format!("{name}.epochs = {}\n", c.epochs));
            s.push_str(&format!("{name}.batch_size = {}\n", c.batch_size));
            s.push_str(&format!("{name}.learning_rate = {}\n", c.learning_rate));
            s.push_str(&format!("{name}.momentum = {}\n", c.momentum));
            let stop = c.stop_accuracy.map_or("none".to_string(), |v| v.to_string());
            s.push_str(&format!("{name}.stop_accuracy = {stop}\n"));
            if let Some(seed) = st.explicit_seed {
                s.push_str(&format!("{name}.seed = {seed}\n"));
            }
        }
        s
    }
}
