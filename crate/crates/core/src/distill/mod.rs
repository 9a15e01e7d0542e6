//! Knowledge transfer from a frozen teacher: soft labels, the unlabeled and
//! conditional distillation losses, and the teacher/student pipelines.

mod loss;
mod train;

pub use loss::{
    conditional_targets, loss_conditional, loss_hard, loss_unlabeled, stage_loss, weighted_cross_entropy, LossKind,
    PROB_EPS,
};
pub use train::{
    finetune_teacher, pretrain_teacher, train_stage, train_student, train_teacher, EpochStats, StageConfig, StageInput,
    StageRecord, StudentRun, StudentStages, Teacher,
};

use crate::error::{Error, Result};
use crate::model::{forward, ModelSpec, Parameters};
use crate::tensor::{argmax, Tensor};

/// Frozen teacher class probabilities for a fixed sample list.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelSet {
    probs: Tensor,
    argmax: Vec<usize>,
    teacher_checksum: u64,
}

impl SoftLabelSet {
    pub fn new(probs: Tensor, teacher_checksum: u64) -> Result<Self> {
        if probs.rank() != 2 {
            return Err(Error::shape(format!("soft labels must be M×C, got {:?}", probs.shape())));
        }
        for (i, row) in probs.rows().enumerate() {
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-9 || row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::InvalidArgument(format!("soft label row {i} is not a distribution")));
            }
        }
        let argmax = probs.rows().map(argmax).collect();
        Ok(Self { probs, argmax, teacher_checksum })
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    pub fn teacher_checksum(&self) -> u64 {
        self.teacher_checksum
    }

    pub fn len(&self) -> usize {
        self.argmax.len()
    }

    pub fn is_empty(&self) -> bool {
        self.argmax.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.shape()[1]
    }

    /// Rows for a minibatch.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        self.probs.gather_outer(indices)
    }
}

/// Runs the teacher over `images` (an `N×C×H×W` batch) once. The teacher
/// parameters are only read.
pub fn compute_soft_labels(spec: &ModelSpec, params: &Parameters, images: &Tensor) -> Result<SoftLabelSet> {
    let probs = forward(spec, params, images)?;
    SoftLabelSet::new(probs, params.checksum())
}
