//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Criterion 5 trains 5 seeds × 5 folds and takes most of the time.

#[path = "../common/mod.rs"]
mod common;

use std::collections::HashSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::grad::{whole_network, OPS};
use common::{
    distributions, first_max, ref_auc_pairs, ref_auc_trapezoid, ref_loss_conditional, ref_loss_hard,
    ref_loss_unlabeled, rng,
};
use kdlab::data::{
    gen_target_set, gen_unlabeled_set, kfold, preprocess, read_dataset, write_dataset, Dataset, TargetStyle,
};
use kdlab::distill::{
    finetune_teacher, loss_conditional, loss_hard, loss_unlabeled, train_student, StageConfig, StudentStages,
};
use kdlab::eval::{roc_auc_binary, roc_auc_multiclass};
use kdlab::experiment::{cmd_gen_data, cmd_run, generate_datasets, ExperimentConfig, Preset, TEACHER_ROW};
use kdlab::model::{build_vgg16, init_parameters, read_parameters, write_parameters, Arch, WidthScale};
use kdlab::{Error, Tape, Tensor, Var};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

const TREND_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn trend_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/acceptance/trend.conf")
}

fn loss_value(student: &[Vec<f64>], f: impl FnOnce(&mut Tape, Var) -> kdlab::Result<Var>) -> f64 {
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::from_rows(student).unwrap());
    let l = f(&mut tape, s).unwrap();
    tape.value(l).data()[0]
}

fn loss_oracles() -> Outcome {
    let mut worst = 0.0f64;
    let (mut soft_rows, mut hard_rows) = (0, 0);
    for seed in 0..500 {
        let mut r = rng(seed);
        let (n, c) = (r.gen_range(1..=8), r.gen_range(2..=5));
        let teacher = distributions(&mut r, n, c, seed % 3 == 0);
        let student = distributions(&mut r, n, c, seed % 4 == 0);
        // each row independently lands in the soft or the hard branch
        let labels: Vec<usize> = teacher
            .iter()
            .map(|row| if r.gen_bool(0.5) { first_max(row) } else { (first_max(row) + r.gen_range(1..c)) % c })
            .collect();
        for (row, &l) in teacher.iter().zip(&labels) {
            if first_max(row) == l {
                soft_rows += 1;
            } else {
                hard_rows += 1;
            }
        }
        let t = Tensor::from_rows(&teacher).unwrap();
        let checks = [
            (loss_value(&student, |tp, s| loss_unlabeled(tp, &t, s)), ref_loss_unlabeled(&teacher, &student)),
            (
                loss_value(&student, |tp, s| loss_conditional(tp, &t, s, &labels)),
                ref_loss_conditional(&teacher, &student, &labels),
            ),
        ];
        for (got, want) in checks {
            ensure!((got - want).abs() <= 1e-9, "instance {seed}: {got} vs {want}");
            worst = worst.max((got - want).abs());
        }
    }

    let rows = |v: &[&[f64]]| v.iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    let hand = [
        ("unlabeled uniform", rows(&[&[0.5, 0.5]]), rows(&[&[0.5, 0.5]]), None, 2f64.ln()),
        ("unlabeled identity", rows(&[&[1.0, 0.0]]), rows(&[&[1.0, 0.0]]), None, 0.0),
        ("unlabeled two rows", rows(&[&[0.8, 0.2], &[0.3, 0.7]]), rows(&[&[0.6, 0.4], &[0.5, 0.5]]), None, 0.64253),
        ("conditional correct", rows(&[&[0.9, 0.1]]), rows(&[&[0.7, 0.3]]), Some(vec![0]), 0.44141),
        ("conditional wrong", rows(&[&[0.9, 0.1]]), rows(&[&[0.7, 0.3]]), Some(vec![1]), 1.20397),
        ("conditional one-hot", rows(&[&[0.0, 1.0]]), rows(&[&[0.0, 1.0]]), Some(vec![1]), 0.0),
    ];
    for (name, teacher, student, labels, want) in hand {
        let t = Tensor::from_rows(&teacher).unwrap();
        let got = match &labels {
            None => loss_value(&student, |tp, s| loss_unlabeled(tp, &t, s)),
            Some(l) => loss_value(&student, |tp, s| loss_conditional(tp, &t, s, l)),
        };
        ensure!((got - want).abs() <= 1e-4, "{name}: {got} vs {want}");
    }
    Ok(format!(
        "500 instances, max deviation {worst:.1e}, {soft_rows} soft-branch and {hard_rows} hard-branch rows, 6 hand examples"
    ))
}

fn gradient_suite() -> Outcome {
    for (name, op) in OPS {
        for seed in 0..20 {
            op(seed).map_err(|e| format!("{name} seed {seed}: {e}"))?;
        }
    }
    for seed in 0..3 {
        whole_network(seed).map_err(|e| format!("network seed {seed}: {e}"))?;
    }
    Ok(format!("{} operations × 20 seeds plus 3 whole-network spot checks", OPS.len()))
}

fn branch_equivalence() -> Outcome {
    for seed in 0..200 {
        let mut r = rng(10_000 + seed);
        let (n, c) = (r.gen_range(1..=8), r.gen_range(2..=5));
        let teacher = distributions(&mut r, n, c, seed % 2 == 0);
        let student = distributions(&mut r, n, c, seed % 5 == 0);
        let t = Tensor::from_rows(&teacher).unwrap();
        let correct: Vec<usize> = teacher.iter().map(|row| first_max(row)).collect();
        let wrong: Vec<usize> = correct.iter().map(|&y| (y + r.gen_range(1..c)) % c).collect();

        let cond = loss_value(&student, |tp, s| loss_conditional(tp, &t, s, &correct));
        let soft = loss_value(&student, |tp, s| loss_unlabeled(tp, &t, s));
        ensure!(cond == soft, "instance {seed}: all-correct {cond} != {soft}");
        let cond = loss_value(&student, |tp, s| loss_conditional(tp, &t, s, &wrong));
        let hard = loss_value(&student, |tp, s| loss_hard(tp, s, &wrong));
        ensure!(cond == hard, "instance {seed}: all-wrong {cond} != {hard}");
        ensure!((hard - ref_loss_hard(&student, &wrong)).abs() <= 1e-9, "instance {seed}: hard loss off reference");
    }
    Ok("200 all-correct and 200 all-wrong instances bit-equal".into())
}

fn auc_oracle() -> Outcome {
    let mut ties = 0;
    for seed in 0..100 {
        let mut r = rng(20_000 + seed);
        let n = r.gen_range(2..=200);
        let levels = r.gen_range(2..=20);
        let mut labels: Vec<bool> = (0..n).map(|_| r.gen_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| r.gen_range(0..levels) as f64 / levels as f64).collect();
        ties += usize::from(scores.iter().map(|s| s.to_bits()).collect::<HashSet<_>>().len() < n);
        let got = roc_auc_binary(&scores, &labels).map_err(|e| e.to_string())?;
        let want = ref_auc_pairs(&scores, &labels);
        ensure!(got == want, "binary instance {seed}: {got} vs {want}");
    }
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let mut r = rng(30_000 + seed);
        let c = r.gen_range(2..=5);
        let n = r.gen_range(2 * c..=200);
        let labels: Vec<usize> = (0..n).map(|i| if i < c { i } else { r.gen_range(0..c) }).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..c).map(|_| r.gen_range(0..10) as f64 + 0.5).collect();
                let total: f64 = raw.iter().sum();
                raw.iter().map(|v| v / total).collect()
            })
            .collect();
        let want = (0..c)
            .map(|k| {
                let s: Vec<f64> = rows.iter().map(|row| row[k]).collect();
                let y: Vec<bool> = labels.iter().map(|&l| l == k).collect();
                ref_auc_trapezoid(&s, &y)
            })
            .sum::<f64>()
            / c as f64;
        let got = roc_auc_multiclass(&Tensor::from_rows(&rows).unwrap(), &labels).map_err(|e| e.to_string())?;
        ensure!((got - want).abs() <= 1e-9, "multiclass instance {seed}: {got} vs {want}");
        worst = worst.max((got - want).abs());
    }
    Ok(format!("100 binary instances exact ({ties} with ties), 50 multiclass within {worst:.1e}"))
}

fn trend() -> Outcome {
    let base_cfg = ExperimentConfig::load(trend_config()).map_err(|e| e.to_string())?;
    let table: Vec<&str> = Preset::TABLE.iter().map(Preset::name).collect();
    let mut rows: Vec<&str> = table.clone();
    rows.push(TEACHER_ROW);
    let mut sums = vec![0.0; rows.len()];
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    for seed in TREND_SEEDS {
        let cfg = ExperimentConfig { seed, workers: 1, ..base_cfg.clone() };
        let dir = root.path().join(format!("seed{seed}"));
        cmd_gen_data(&cfg, &dir).map_err(|e| e.to_string())?;
        let report = cmd_run(&cfg, &dir, &dir).map_err(|e| e.to_string())?;
        let means: Vec<f64> = rows.iter().map(|r| report.mean(r).map_or(f64::NAN, |m| m.0)).collect();
        println!(
            "  seed {seed}: {}",
            rows.iter().zip(&means).map(|(r, m)| format!("{r} {:.2}%", 100.0 * m)).collect::<Vec<_>>().join(", ")
        );
        sums.iter_mut().zip(&means).for_each(|(s, m)| *s += m);
    }
    let mean = |name: &str| 100.0 * sums[rows.iter().position(|r| *r == name).unwrap()] / TREND_SEEDS.len() as f64;
    let (base, kd_ul, ul, teacher) = (mean("base"), mean("base_kd_ul"), mean("base_ul"), mean(TEACHER_ROW));
    let summary = format!(
        "mean accuracy base {base:.2}%, base_kd {:.2}%, base_ul {ul:.2}%, base_kd_ul {kd_ul:.2}%, teacher {teacher:.2}%",
        mean("base_kd")
    );
    ensure!(kd_ul > base + 1.0, "base_kd_ul not > base + 1pp; {summary}");
    ensure!(ul > base + 1.0, "base_ul not > base + 1pp; {summary}");
    for p in &table {
        ensure!(teacher >= mean(p), "teacher below {p}; {summary}");
    }
    Ok(summary)
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn stage(epochs: usize, seed: u64) -> StageConfig {
    StageConfig { epochs, batch_size: 16, learning_rate: 0.005, momentum: 0.9, stop_accuracy: None, seed }
}

fn pipeline_invariants() -> Outcome {
    // frozen teacher through every student stage
    let cfg = ExperimentConfig { target_n: 60, source_n: 30, unlabeled_m: 40, ..ExperimentConfig::default() };
    let (target, _, unlabeled) = generate_datasets(&cfg).map_err(|e| e.to_string())?;
    let (train, _) = target.augmented(8).unwrap();
    let unlabeled = unlabeled.map(|s| preprocess(s, 8).unwrap());
    let spec = cfg.teacher_arch.build(cfg.input_shape(), 3).unwrap();
    let (teacher, _) = finetune_teacher(None, &train, &spec, &stage(2, 1)).map_err(|e| e.to_string())?;
    let frozen = teacher.params.checksum();
    let student = cfg.student_arch.build(cfg.input_shape(), 3).unwrap();
    let all = StudentStages { unlabeled: Some(stage(2, 2)), conditional: Some(stage(2, 3)), hard: Some(stage(2, 4)) };
    train_student(&student, 9, &teacher, &unlabeled, &train, &all).map_err(|e| e.to_string())?;
    ensure!(teacher.params.checksum() == frozen, "teacher checksum changed during student training");

    // augmentation and fold plans
    ensure!(train.len() == 4 * target.len(), "augmentation gave {} of {}", train.len(), target.len());
    let plan = kfold(target.len(), 5, 3).unwrap();
    let mut tested = vec![0; target.len()];
    for f in 0..5 {
        let (train_idx, test_idx) = (plan.train_indices(f), plan.test_indices(f));
        test_idx.iter().for_each(|&i| tested[i] += 1);
        let (aug, origin) = target.select(&train_idx).augmented(8).unwrap();
        ensure!(aug.len() == 4 * train_idx.len(), "fold {f} augmentation size");
        let sources: HashSet<usize> = origin.iter().map(|&o| train_idx[o]).collect();
        ensure!(test_idx.iter().all(|i| !sources.contains(i)), "fold {f}: test image among training sources");
        let pixels: HashSet<&[u8]> = aug.samples().iter().map(|s| s.pixels()).collect();
        for &i in &test_idx {
            let eq = preprocess(&target.samples()[i], 8).unwrap();
            for v in [eq.clone(), eq.flip_rows(), eq.flip_cols(), eq.flip_rows().flip_cols()] {
                ensure!(!pixels.contains(v.pixels()), "fold {f}: variant of test image {i} in training data");
            }
        }
    }
    ensure!(tested.iter().all(|&c| c == 1), "folds do not partition the set");

    // byte-identical runs
    let mut cfg = ExperimentConfig {
        seed: 3,
        target_n: 30,
        source_n: 20,
        unlabeled_m: 20,
        folds: 2,
        student_arch: Arch::Simple10(WidthScale::new(1, 10).unwrap()),
        ..ExperimentConfig::default()
    };
    for s in &mut cfg.stages {
        s.config.epochs = 2;
    }
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = root.path().join("data");
    cmd_gen_data(&cfg, &data).map_err(|e| e.to_string())?;
    for run in ["a", "b"] {
        cmd_run(&cfg, &data, &root.path().join(run)).map_err(|e| e.to_string())?;
    }
    let (a, b) = (dir_contents(&root.path().join("a")), dir_contents(&root.path().join("b")));
    ensure!(!a.is_empty() && a == b, "two runs differ");
    Ok(format!("teacher frozen, 4× augmentation, 5 leak-free folds, {} output files byte-identical", a.len()))
}

fn serialization() -> Outcome {
    let spec = build_vgg16(16, [3, 32, 32], 3).unwrap();
    let params = init_parameters(&spec, 4);
    let bytes = write_parameters(&spec, &params);
    let back = read_parameters(&bytes, &spec).map_err(|e| e.to_string())?;
    let bits = |p: &kdlab::model::Parameters| -> Vec<u64> {
        p.tensors().flat_map(|t| t.data().iter().map(|v| v.to_bits())).collect()
    };
    ensure!(bits(&back) == bits(&params), "parameters changed in round trip");

    let mut flipped = bytes.clone();
    flipped[bytes.len() / 2] ^= 0x20;
    ensure!(matches!(read_parameters(&flipped, &spec), Err(Error::Checksum { .. })), "flipped byte accepted");
    ensure!(
        matches!(read_parameters(&bytes[..bytes.len() - 1], &spec), Err(Error::Truncated(_))),
        "truncation accepted"
    );
    let mut magic = bytes.clone();
    magic[0] ^= 0xff;
    ensure!(matches!(read_parameters(&magic, &spec), Err(Error::BadMagic { .. })), "bad magic accepted");
    let mut version = bytes.clone();
    version[4] = 7;
    ensure!(
        matches!(read_parameters(&version, &spec), Err(Error::UnsupportedVersion { .. })),
        "unknown version accepted"
    );
    let other = build_vgg16(8, [3, 32, 32], 3).unwrap();
    ensure!(matches!(read_parameters(&bytes, &other), Err(Error::SpecMismatch(_))), "wrong spec accepted");

    let style = TargetStyle::default();
    let sets = [
        Dataset::Labeled(gen_target_set(30, 3, 3, 32, 2, &style).unwrap()),
        Dataset::Unlabeled(gen_unlabeled_set(10, 1, 16, 3, &style).unwrap()),
    ];
    for set in sets {
        let bytes = write_dataset(&set).unwrap();
        ensure!(read_dataset(&bytes).map_err(|e| e.to_string())? == set, "dataset changed in round trip");
        let mut flipped = bytes.clone();
        flipped[bytes.len() / 3] ^= 0x01;
        ensure!(matches!(read_dataset(&flipped), Err(Error::Checksum { .. })), "flipped dataset byte accepted");
        ensure!(
            matches!(read_dataset(&bytes[..bytes.len() - 3]), Err(Error::Truncated(_))),
            "dataset truncation accepted"
        );
        let mut magic = bytes.clone();
        magic[0] ^= 0xff;
        ensure!(matches!(read_dataset(&magic), Err(Error::BadMagic { .. })), "bad dataset magic accepted");
        let mut version = bytes.clone();
        version[4] = 7;
        ensure!(
            matches!(read_dataset(&version), Err(Error::UnsupportedVersion { .. })),
            "unknown dataset version accepted"
        );
    }
    Ok("parameters and datasets bit-exact; checksum, truncation, magic, version and spec errors raised".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("1 loss oracles", loss_oracles, Duration::from_secs(5)),
        ("2 gradient suite", gradient_suite, Duration::from_secs(60)),
        ("3 branch equivalence", branch_equivalence, Duration::MAX),
        ("4 AUC oracle", auc_oracle, Duration::MAX),
        ("6 pipeline invariants", pipeline_invariants, Duration::MAX),
        ("7 serialization", serialization, Duration::MAX),
        ("5 trend reproduction", trend, Duration::from_secs(30 * 60)),
    ];
    // optional criterion numbers select a subset, e.g. `-- 1 4`
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check, budget) in criteria {
        if !only.is_empty() && !only.iter().any(|n| name.split(' ').next() == Some(n.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= budget {
                Ok(detail)
            } else {
                Err(format!("took {elapsed:.1?}, budget {budget:?}; {detail}"))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{elapsed:.2?}]"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why} [{elapsed:.2?}]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
