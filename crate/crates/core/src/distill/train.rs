use rand::seq::SliceRandom;

use super::loss::{stage_loss, LossKind};
use super::{compute_soft_labels, SoftLabelSet};
use crate::autodiff::Tape;
use crate::data::{LabeledSet, UnlabeledSet};
use crate::error::{Error, Result};
use crate::model::{forward_on_tape, init_parameters, ModelSpec, Parameters};
use crate::rng::{derive_seed, rng_for};
use crate::tensor::{argmax, Tensor};

const SHUFFLE_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const HEAD_STREAM: u64 = 3;

/// Hyperparameters of one minibatch SGD-with-momentum stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Stop once the epoch's training accuracy reaches this value.
    pub stop_accuracy: Option<f64>,
    pub seed: u64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { epochs: 60, batch_size: 32, learning_rate: 0.01, momentum: 0.9, stop_accuracy: None, seed: 0 }
    }
}

impl StageConfig {
    /// Every violated constraint, empty when valid.
    pub fn violations(&self, name: &str) -> Vec<String> {
        let mut v = Vec::new();
        if self.batch_size == 0 {
            v.push(format!("{name}.batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push(format!("{name}.learning_rate must be a positive number"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            v.push(format!("{name}.momentum must be in [0, 1)"));
        }
        if let Some(s) = self.stop_accuracy {
            if !(s > 0.0 && s <= 1.0) {
                v.push(format!("{name}.stop_accuracy must be in (0, 1]"));
            }
        }
        v
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let v = self.violations(name);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Sample-weighted mean loss over the epoch's minibatches.
    pub loss: f64,
    /// Fraction of training samples whose argmax matched the reference
    /// (labels, or the teacher's argmax for unlabeled loss) during the epoch.
    pub train_acc: f64,
}

/// Data for one stage. Unlabeled loss needs `soft_labels`; hard loss needs
/// `labels`; conditional needs both.
#[derive(Debug, Clone, Copy)]
pub struct StageInput<'a> {
    pub images: &'a Tensor,
    pub labels: Option<&'a [usize]>,
    pub soft_labels: Option<&'a SoftLabelSet>,
}

/// Trains a copy of `params` for up to `cfg.epochs` epochs and returns it
/// with the per-epoch history. `params` itself is never modified.
pub fn train_stage(
    spec: &ModelSpec,
    params: &Parameters,
    input: StageInput<'_>,
    kind: LossKind,
    cfg: &StageConfig,
) -> Result<(Parameters, Vec<EpochStats>)> {
    cfg.validate("stage")?;
    let n = input.images.shape()[0];
    if kind.needs_soft_labels() {
        let soft = input
            .soft_labels
            .ok_or_else(|| Error::InvalidArgument(format!("{} loss needs soft labels", kind.name())))?;
        if soft.len() != n {
            return Err(Error::shape(format!("{} soft labels for {n} images", soft.len())));
        }
    }
    if kind.needs_labels() {
        let labels =
            input.labels.ok_or_else(|| Error::InvalidArgument(format!("{} loss needs labels", kind.name())))?;
        if labels.len() != n {
            return Err(Error::shape(format!("{} labels for {n} images", labels.len())));
        }
    }
    let reference: &[usize] = match kind {
        LossKind::Unlabeled => input.soft_labels.expect("checked").argmax(),
        _ => input.labels.expect("checked"),
    };

    let mut current = params.clone();
    let mut velocity: Vec<Vec<f64>> = current.tensors().map(|t| vec![0.0; t.numel()]).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, &[SHUFFLE_STREAM, epoch as u64]));
        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let x = tape.constant(input.images.gather_outer(batch)?);
            let (probs, leaves) = forward_on_tape(spec, &current, &mut tape, x, true)?;
            let teacher = match input.soft_labels {
                Some(s) if kind.needs_soft_labels() => Some(s.gather(batch)?),
                _ => None,
            };
            let labels: Option<Vec<usize>> = input.labels.map(|l| batch.iter().map(|&i| l[i]).collect());
            let loss = stage_loss(&mut tape, kind, probs, teacher.as_ref(), labels.as_deref())?;

            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::InvalidArgument(format!("loss diverged at epoch {epoch}")));
            }
            loss_sum += value * batch.len() as f64;
            hits += tape.value(probs).rows().zip(batch).filter(|(row, &i)| argmax(row) == reference[i]).count();

            let mut grads = tape.backward(loss)?;
            let slots = current.layers_mut().iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]);
            let vars = leaves.iter().flat_map(|&(w, b)| [w, b]);
            for ((param, var), vel) in slots.zip(vars).zip(velocity.iter_mut()) {
                let g = grads.take(var).ok_or_else(|| Error::shape("missing parameter gradient"))?;
                for ((p, v), gi) in param.data_mut().iter_mut().zip(vel.iter_mut()).zip(g.data()) {
                    *v = cfg.momentum * *v + gi;
                    *p -= cfg.learning_rate * *v;
                }
            }
        }
        let stats = EpochStats { epoch: epoch + 1, loss: loss_sum / n as f64, train_acc: hits as f64 / n as f64 };
        history.push(stats);
        if cfg.stop_accuracy.is_some_and(|s| stats.train_acc >= s) {
            break;
        }
    }
    Ok((current, history))
}

/// A frozen, trained teacher.
#[derive(Debug, Clone, PartialEq)]
pub struct Teacher {
    pub spec: ModelSpec,
    pub params: Parameters,
}

/// Named stage history for curve export.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: &'static str,
    pub history: Vec<EpochStats>,
}

/// Phase 1: hard-label training on the source set with a head sized for the
/// source classes. Returns `None` for an empty source set.
pub fn pretrain_teacher(
    source: &LabeledSet,
    spec: &ModelSpec,
    cfg: &StageConfig,
) -> Result<Option<(ModelSpec, Parameters, Vec<EpochStats>)>> {
    if source.is_empty() {
        return Ok(None);
    }
    check_input_shape(spec, source.image_shape())?;
    let source_spec = spec.with_num_classes(source.num_classes())?;
    let init = init_parameters(&source_spec, derive_seed(cfg.seed, &[INIT_STREAM]));
    let images = source.to_tensor()?;
    let labels = source.labels();
    let input = StageInput { images: &images, labels: Some(&labels), soft_labels: None };
    let (params, history) = train_stage(&source_spec, &init, input, LossKind::Hard, cfg)?;
    Ok(Some((source_spec, params, history)))
}

/// Phase 2: swap in a fresh classifier for the target classes (or start from
/// scratch without a pretrained body) and fine-tune on the target set.
pub fn finetune_teacher(
    pretrained: Option<&Parameters>,
    target: &LabeledSet,
    spec: &ModelSpec,
    cfg: &StageConfig,
) -> Result<(Teacher, Vec<EpochStats>)> {
    check_input_shape(spec, target.image_shape())?;
    if target.num_classes() != spec.num_classes() {
        return Err(Error::shape(format!(
            "teacher spec has {} classes, target set {}",
            spec.num_classes(),
            target.num_classes()
        )));
    }
    if target.is_empty() {
        return Err(Error::Empty("teacher target set"));
    }
    let init = match pretrained {
        Some(p) => p.with_new_head(spec, derive_seed(cfg.seed, &[HEAD_STREAM]))?,
        None => init_parameters(spec, derive_seed(cfg.seed, &[INIT_STREAM])),
    };
    let images = target.to_tensor()?;
    let labels = target.labels();
    let input = StageInput { images: &images, labels: Some(&labels), soft_labels: None };
    let (params, history) = train_stage(spec, &init, input, LossKind::Hard, cfg)?;
    Ok((Teacher { spec: spec.clone(), params }, history))
}

/// Pretrain on `source`, then fine-tune on `target`. An empty source set
/// reduces this to plain target training.
pub fn train_teacher(
    source: &LabeledSet,
    target: &LabeledSet,
    spec: &ModelSpec,
    cfg_pretrain: &StageConfig,
    cfg_finetune: &StageConfig,
) -> Result<(Teacher, Vec<StageRecord>)> {
    if let (Some(s), Some(t)) = (source.image_shape(), target.image_shape()) {
        if s != t {
            return Err(Error::shape(format!("source images {s:?} differ from target images {t:?}")));
        }
    }
    let mut records = Vec::new();
    let pre = pretrain_teacher(source, spec, cfg_pretrain)?;
    if let Some((_, _, history)) = &pre {
        records.push(StageRecord { stage: "teacher_pretrain", history: history.clone() });
    }
    let (teacher, history) = finetune_teacher(pre.as_ref().map(|(_, p, _)| p), target, spec, cfg_finetune)?;
    records.push(StageRecord { stage: "teacher_finetune", history });
    Ok((teacher, records))
}

fn check_input_shape(spec: &ModelSpec, shape: Option<[usize; 3]>) -> Result<()> {
    match shape {
        Some(s) if s != spec.input_shape() => {
            Err(Error::shape(format!("images {s:?} do not match model input {:?}", spec.input_shape())))
        }
        _ => Ok(()),
    }
}

/// Which student stages run, each with its own config. Stages run in field
/// order on the evolving student parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudentStages {
    /// Stage 1: unlabeled-data distillation.
    pub unlabeled: Option<StageConfig>,
    /// Stage 2: conditional distillation on the labeled set.
    pub conditional: Option<StageConfig>,
    /// Stage 3: hard-label fine-tuning.
    pub hard: Option<StageConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentRun {
    pub params: Parameters,
    pub records: Vec<StageRecord>,
}

/// Multi-stage student training against a frozen teacher.
///
/// Soft labels are computed once per stage from `teacher` and reused for
/// every epoch. Stage 1 stops once the student's argmax agrees with the
/// teacher's on `unlabeled.stop_accuracy` of the unlabeled images.
pub fn train_student(
    student_spec: &ModelSpec,
    init_seed: u64,
    teacher: &Teacher,
    unlabeled: &UnlabeledSet,
    labeled: &LabeledSet,
    stages: &StudentStages,
) -> Result<StudentRun> {
    if stages.unlabeled.is_none() && stages.conditional.is_none() && stages.hard.is_none() {
        return Err(Error::InvalidArgument("at least one student stage must be enabled".into()));
    }
    if teacher.spec.num_classes() != student_spec.num_classes() {
        return Err(Error::shape("teacher and student class counts differ"));
    }
    let mut params = init_parameters(student_spec, init_seed);
    let mut records = Vec::new();

    if let Some(cfg) = &stages.unlabeled {
        if unlabeled.is_empty() {
            return Err(Error::Empty("unlabeled set for stage 1"));
        }
        let images = unlabeled.to_tensor()?;
        let soft = compute_soft_labels(&teacher.spec, &teacher.params, &images)?;
        let input = StageInput { images: &images, labels: None, soft_labels: Some(&soft) };
        let (p, history) = train_stage(student_spec, &params, input, LossKind::Unlabeled, cfg)?;
        params = p;
        records.push(StageRecord { stage: "stage1_unlabeled", history });
    }

    let labeled_cfgs = [
        (&stages.conditional, LossKind::Conditional, "stage2_conditional"),
        (&stages.hard, LossKind::Hard, "stage3_hard"),
    ];
    if labeled_cfgs.iter().any(|(c, _, _)| c.is_some()) {
        if labeled.is_empty() {
            return Err(Error::Empty("labeled set for stages 2-3"));
        }
        let images = labeled.to_tensor()?;
        let labels = labeled.labels();
        let soft = match stages.conditional {
            Some(_) => Some(compute_soft_labels(&teacher.spec, &teacher.params, &images)?),
            None => None,
        };
        for (cfg, kind, stage) in labeled_cfgs {
            let Some(cfg) = cfg else { continue };
            let input = StageInput { images: &images, labels: Some(&labels), soft_labels: soft.as_ref() };
            let (p, history) = train_stage(student_spec, &params, input, kind, cfg)?;
            params = p;
            records.push(StageRecord { stage, history });
        }
    }
    Ok(StudentRun { params, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_source_set, gen_target_set, gen_unlabeled_set, TargetStyle};
    use crate::model::{build_vgg16, ModelSpec};

    fn tiny_spec(classes: usize) -> ModelSpec {
        build_vgg16(32, [1, 32, 32], classes).unwrap()
    }

    fn cfg(epochs: usize) -> StageConfig {
        StageConfig { epochs, batch_size: 8, learning_rate: 0.01, momentum: 0.9, stop_accuracy: None, seed: 3 }
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let spec = tiny_spec(3);
        let params = init_parameters(&spec, 1);
        let set = gen_target_set(30, 3, 1, 32, 1, &TargetStyle::default()).unwrap();
        let images = set.to_tensor().unwrap();
        let labels = set.labels();
        let input = StageInput { images: &images, labels: Some(&labels), soft_labels: None };
        let (out, history) = train_stage(&spec, &params, input, LossKind::Hard, &cfg(0)).unwrap();
        assert_eq!(out, params);
        assert!(history.is_empty());
    }

    #[test]
    fn distillation_without_soft_labels_is_rejected() {
        let spec = tiny_spec(3);
        let params = init_parameters(&spec, 1);
        let images = Tensor::zeros([2, 1, 32, 32]);
        let labels = [0, 1];
        for kind in [LossKind::Unlabeled, LossKind::Conditional] {
            let input = StageInput { images: &images, labels: Some(&labels), soft_labels: None };
            assert!(train_stage(&spec, &params, input, kind, &cfg(1)).is_err());
        }
    }

    #[test]
    fn invalid_config_lists_every_field() {
        let bad = StageConfig { batch_size: 0, learning_rate: -1.0, momentum: 1.0, stop_accuracy: Some(0.0), ..cfg(1) };
        match bad.validate("s") {
            Err(Error::Config(v)) => assert_eq!(v.len(), 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn stop_accuracy_ends_training_early() {
        let spec = tiny_spec(3);
        let params = init_parameters(&spec, 1);
        let images = Tensor::zeros([4, 1, 32, 32]);
        let labels = [0, 0, 0, 0];
        let input = StageInput { images: &images, labels: Some(&labels), soft_labels: None };
        let c = StageConfig { stop_accuracy: Some(0.01), ..cfg(10) };
        let (_, history) = train_stage(&spec, &params, input, LossKind::Hard, &c).unwrap();
        assert!(history.len() < 10);
    }

    #[test]
    fn stage_training_is_deterministic() {
        let spec = tiny_spec(3);
        let params = init_parameters(&spec, 1);
        let set = gen_target_set(30, 3, 1, 32, 2, &TargetStyle::default()).unwrap();
        let images = set.to_tensor().unwrap();
        let labels = set.labels();
        let input = StageInput { images: &images, labels: Some(&labels), soft_labels: None };
        let a = train_stage(&spec, &params, input, LossKind::Hard, &cfg(2)).unwrap();
        let b = train_stage(&spec, &params, input, LossKind::Hard, &cfg(2)).unwrap();
        assert_eq!(a.0.checksum(), b.0.checksum());
        assert_eq!(a.1, b.1);
        assert_ne!(a.0.checksum(), params.checksum());
    }

    #[test]
    fn student_pipeline_rejects_bad_requests() {
        let spec = tiny_spec(3);
        let teacher = Teacher { spec: spec.clone(), params: init_parameters(&spec, 1) };
        let labeled = gen_target_set(30, 3, 1, 32, 2, &TargetStyle::default()).unwrap();
        let empty = UnlabeledSet::new(vec![]).unwrap();
        assert!(train_student(&spec, 0, &teacher, &empty, &labeled, &StudentStages::default()).is_err());
        let stage1 = StudentStages { unlabeled: Some(cfg(1)), ..Default::default() };
        assert!(matches!(train_student(&spec, 0, &teacher, &empty, &labeled, &stage1), Err(Error::Empty(_))));
    }

    #[test]
    fn teacher_rejects_mismatched_shapes() {
        let spec = tiny_spec(3);
        let source = gen_source_set(20, 4, 3, 32, 1).unwrap();
        let target = gen_target_set(30, 3, 1, 32, 1, &TargetStyle::default()).unwrap();
        assert!(matches!(train_teacher(&source, &target, &spec, &cfg(1), &cfg(1)), Err(Error::Shape(_))));
    }

    #[test]
    fn full_student_pipeline_smoke() {
        let spec = tiny_spec(3);
        let teacher = Teacher { spec: spec.clone(), params: init_parameters(&spec, 9) };
        let labeled = gen_target_set(30, 3, 1, 32, 2, &TargetStyle::default()).unwrap();
        let unlabeled = gen_unlabeled_set(16, 1, 32, 2, &TargetStyle::default()).unwrap();
        let stages = StudentStages { unlabeled: Some(cfg(1)), conditional: Some(cfg(1)), hard: Some(cfg(1)) };
        let before = teacher.params.checksum();
        let run = train_student(&spec, 5, &teacher, &unlabeled, &labeled, &stages).unwrap();
        assert_eq!(teacher.params.checksum(), before);
        assert!(run.params.all_finite());
        assert_eq!(
            run.records.iter().map(|r| r.stage).collect::<Vec<_>>(),
            ["stage1_unlabeled", "stage2_conditional", "stage3_hard"]
        );
    }
}
