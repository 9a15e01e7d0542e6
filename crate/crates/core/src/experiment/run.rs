//! Dataset generation and the cross-validated teacher/student runner.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::config::ExperimentConfig;
use crate::checksum::crc64;
use crate::data::{
    gen_source_set, gen_target_set, gen_unlabeled_set, kfold, preprocess, read_dataset, write_dataset, Dataset,
    LabeledSet, UnlabeledSet,
};
use crate::distill::{finetune_teacher, pretrain_teacher, train_student, EpochStats};
use crate::error::{Error, Result};
use crate::eval::MetricReport;
use crate::model::{forward, write_parameters, ModelSpec, Parameters};
use crate::rng::derive_seed;

pub const TARGET_FILE: &str = "target.kdds";
pub const SOURCE_FILE: &str = "source.kdds";
pub const UNLABELED_FILE: &str = "unlabeled.kdds";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CURVES_FILE: &str = "curves.csv";
pub const CONFIG_ECHO_FILE: &str = "config.txt";
pub const DATASETS_FILE: &str = "datasets.txt";

/// Row label used for the teacher in `metrics.csv`.
pub const TEACHER_ROW: &str = "teacher";

const TARGET_DATA: u64 = 0x10;
const SOURCE_DATA: u64 = 0x11;
const UNLABELED_DATA: u64 = 0x12;
const FOLD_PLAN: u64 = 0x13;
const STUDENT_INIT: u64 = 0x14;

/// Builds the three synthetic datasets described by `cfg`.
pub fn generate_datasets(cfg: &ExperimentConfig) -> Result<(LabeledSet, LabeledSet, UnlabeledSet)> {
    let (c, s) = (cfg.channels, cfg.image_size);
    let target =
        gen_target_set(cfg.target_n, cfg.num_classes, c, s, derive_seed(cfg.seed, &[TARGET_DATA]), &cfg.style)?;
    let source = gen_source_set(cfg.source_n, cfg.source_classes, c, s, derive_seed(cfg.seed, &[SOURCE_DATA]))?;
    let unlabeled = gen_unlabeled_set(cfg.unlabeled_m, c, s, derive_seed(cfg.seed, &[UNLABELED_DATA]), &cfg.style)?;
    Ok((target, source, unlabeled))
}

/// CRC-64 of a sealed file's content, equal to its stored trailer.
fn file_checksum(bytes: &[u8]) -> u64 {
    crc64(&bytes[..bytes.len().saturating_sub(8)])
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes target, source and unlabeled `KDDS` files into `out_dir` and
/// returns `(file name, content CRC-64)` for each.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<(String, u64)>> {
    create_dir(out_dir)?;
    let (target, source, unlabeled) = generate_datasets(cfg)?;
    let sets: [(&str, Dataset); 3] = [
        (TARGET_FILE, Dataset::Labeled(target)),
        (SOURCE_FILE, Dataset::Labeled(source)),
        (UNLABELED_FILE, Dataset::Unlabeled(unlabeled)),
    ];
    let mut sums = Vec::new();
    for (name, set) in sets {
        let bytes = write_dataset(&set)?;
        write_file(&out_dir.join(name), &bytes)?;
        sums.push((name.to_string(), file_checksum(&bytes)));
    }
    Ok(sums)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub preset: String,
    pub arch: String,
    pub fold: usize,
    pub accuracy: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub preset: String,
    pub fold: usize,
    pub stage: String,
    pub stats: EpochStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub metrics: Vec<MetricRow>,
    pub curves: Vec<CurveRow>,
    pub dataset_checksums: Vec<(String, u64)>,
    pub teacher_checksums: Vec<u64>,
}

impl RunReport {
    /// Mean accuracy and AUC over folds for a row label.
    pub fn mean(&self, preset: &str) -> Option<(f64, f64)> {
        let rows: Vec<_> = self.metrics.iter().filter(|r| r.preset == preset).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some((rows.iter().map(|r| r.accuracy).sum::<f64>() / n, rows.iter().map(|r| r.auc).sum::<f64>() / n))
    }

    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("preset,arch,fold,accuracy,auc\n");
        for r in &self.metrics {
            let _ = writeln!(s, "{},{},{},{},{}", r.preset, r.arch, r.fold, r.accuracy, r.auc);
        }
        s
    }

    pub fn curves_csv(&self) -> String {
        let mut s = String::from("preset,fold,stage,epoch,loss,train_acc\n");
        for r in &self.curves {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.preset, r.fold, r.stage, r.stats.epoch, r.stats.loss, r.stats.train_acc
            );
        }
        s
    }
}

struct Prepared {
    target: LabeledSet,
    source: LabeledSet,
    unlabeled: UnlabeledSet,
    checksums: Vec<(String, u64)>,
}

fn load_prepared(cfg: &ExperimentConfig, data_dir: &Path) -> Result<Prepared> {
    let mut checksums = Vec::new();
    let mut load = |name: &str| -> Result<Dataset> {
        let path = data_dir.join(name);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        checksums.push((name.to_string(), file_checksum(&bytes)));
        read_dataset(&bytes)
    };
    let target = load(TARGET_FILE)?.into_labeled()?;
    let source = load(SOURCE_FILE)?.into_labeled()?;
    let unlabeled = load(UNLABELED_FILE)?.into_unlabeled()?;
    let shape = cfg.input_shape();
    let mut problems = Vec::new();
    for (name, s) in [
        (TARGET_FILE, target.image_shape()),
        (SOURCE_FILE, source.image_shape()),
        (UNLABELED_FILE, unlabeled.image_shape()),
    ] {
        if s.is_some_and(|s| s != shape) {
            problems.push(format!("{name}: images are {s:?}, config expects {shape:?}"));
        }
    }
    if target.num_classes() != cfg.num_classes {
        problems.push(format!("{TARGET_FILE}: {} classes, config expects {}", target.num_classes(), cfg.num_classes));
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    // training-time preprocessing of the non-target sets is equalization only
    let tile = cfg.tile_side();
    let source = source.map(|s| preprocess(s, tile).expect("tile validated"));
    let unlabeled = unlabeled.map(|s| preprocess(s, tile).expect("tile validated"));
    Ok(Prepared { target, source, unlabeled, checksums })
}

struct FoldOutcome {
    metrics: Vec<MetricRow>,
    curves: Vec<CurveRow>,
    files: Vec<(String, Vec<u8>)>,
    teacher_checksum: u64,
}

fn evaluate(spec: &ModelSpec, params: &Parameters, test: &LabeledSet) -> Result<MetricReport> {
    let probs = forward(spec, params, &test.to_tensor()?)?;
    MetricReport::evaluate(&probs, &test.labels(), None)
}

fn curve_rows(preset: &str, fold: usize, stage: &str, history: &[EpochStats]) -> Vec<CurveRow> {
    history.iter().map(|&stats| CurveRow { preset: preset.into(), fold, stage: stage.into(), stats }).collect()
}

fn run_fold(
    cfg: &ExperimentConfig,
    data: &Prepared,
    pretrained: Option<&Parameters>,
    teacher_spec: &ModelSpec,
    fold: usize,
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<FoldOutcome> {
    let tile = cfg.tile_side();
    let f = fold as u64;
    let (train, _) = data.target.select(train_idx).augmented(tile)?;
    let test = data.target.select(test_idx).map(|s| preprocess(s, tile).expect("tile validated"));

    let mut out = FoldOutcome { metrics: Vec::new(), curves: Vec::new(), files: Vec::new(), teacher_checksum: 0 };
    let (teacher, history) = finetune_teacher(pretrained, &train, teacher_spec, &cfg.stage("teacher_finetune", f))?;
    out.curves.extend(curve_rows(TEACHER_ROW, fold, "teacher_finetune", &history));
    let report = evaluate(&teacher.spec, &teacher.params, &test)?;
    out.metrics.push(MetricRow {
        preset: TEACHER_ROW.into(),
        arch: cfg.teacher_arch.to_string(),
        fold,
        accuracy: report.accuracy,
        auc: report.auc,
    });
    out.files.push((format!("fold{fold}_teacher.kdlp"), write_parameters(&teacher.spec, &teacher.params)));
    let frozen = teacher.params.checksum();
    out.teacher_checksum = frozen;

    for &preset in &cfg.presets {
        let arch = cfg.student_arch_for(preset);
        let spec = arch.build(cfg.input_shape(), cfg.num_classes)?;
        let init_seed = derive_seed(cfg.seed, &[STUDENT_INIT, f]);
        let stages = cfg.student_stages(preset, f);
        let run = train_student(&spec, init_seed, &teacher, &data.unlabeled, &train, &stages)?;
        if teacher.params.checksum() != frozen {
            return Err(Error::InvalidArgument("teacher parameters changed during student training".into()));
        }
        for rec in &run.records {
            out.curves.extend(curve_rows(preset.name(), fold, rec.stage, &rec.history));
        }
        let report = evaluate(&spec, &run.params, &test)?;
        out.metrics.push(MetricRow {
            preset: preset.name().into(),
            arch: arch.to_string(),
            fold,
            accuracy: report.accuracy,
            auc: report.auc,
        });
        out.files.push((format!("fold{fold}_{}.kdlp", preset.name()), write_parameters(&spec, &run.params)));
    }
    Ok(out)
}

/// Trains the teacher (source pretraining once, fine-tuning per fold) and
/// every configured student preset under k-fold cross-validation, then
/// writes the run directory.
///
/// Folds run on up to `cfg.workers` threads; all files are written here
/// after the folds finish, in fold order.
pub fn cmd_run(cfg: &ExperimentConfig, data_dir: &Path, out_dir: &Path) -> Result<RunReport> {
    let violations = cfg.violations();
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let data = load_prepared(cfg, data_dir)?;
    create_dir(out_dir)?;

    let teacher_spec = cfg.teacher_arch.build(cfg.input_shape(), cfg.num_classes)?;
    let pre = pretrain_teacher(&data.source, &teacher_spec, &cfg.stage("teacher_pretrain", u64::MAX))?;
    let mut curves = Vec::new();
    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    if let Some((spec, params, history)) = &pre {
        curves.extend(curve_rows(TEACHER_ROW, 0, "teacher_pretrain", history));
        files.push(("teacher_pretrained.kdlp".into(), write_parameters(spec, params)));
    }
    let pretrained = pre.as_ref().map(|(_, p, _)| p);

    let plan = kfold(data.target.len(), cfg.folds, derive_seed(cfg.seed, &[FOLD_PLAN]))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let outcomes: Vec<FoldOutcome> = pool.install(|| {
        (0..plan.k)
            .into_par_iter()
            .map(|f| run_fold(cfg, &data, pretrained, &teacher_spec, f, &plan.train_indices(f), &plan.test_indices(f)))
            .collect::<Result<_>>()
    })?;

    let mut metrics = Vec::new();
    let mut teacher_checksums = Vec::new();
    for o in outcomes {
        metrics.extend(o.metrics);
        curves.extend(o.curves);
        files.extend(o.files);
        teacher_checksums.push(o.teacher_checksum);
    }
    let report = RunReport { metrics, curves, dataset_checksums: data.checksums, teacher_checksums };

    write_file(&out_dir.join(CONFIG_ECHO_FILE), cfg.to_text().as_bytes())?;
    let mut sums = String::new();
    for (name, sum) in &report.dataset_checksums {
        let _ = writeln!(sums, "{name} {sum:016x}");
    }
    write_file(&out_dir.join(DATASETS_FILE), sums.as_bytes())?;
    write_file(&out_dir.join(METRICS_FILE), report.metrics_csv().as_bytes())?;
    write_file(&out_dir.join(CURVES_FILE), report.curves_csv().as_bytes())?;
    for (name, bytes) in &files {
        write_file(&out_dir.join(name), bytes)?;
    }
    Ok(report)
}
