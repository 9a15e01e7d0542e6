//! Distillation and hard-label losses, recorded on a tape so gradients flow
//! into the student probabilities.
//!
//! All three share one form, `−(1/N) Σᵢ Σⱼ Wᵢⱼ · ln max(pSᵢⱼ, ε)`, and differ
//! only in the constant target matrix `W`:
//!
//! * unlabeled: `W = pT`
//! * conditional: row `i` is `pT[i]` where the teacher's argmax equals the
//!   label, else the one-hot label
//! * hard: one-hot labels

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{argmax, Tensor};

/// Floor applied to student probabilities before the logarithm.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Hard,
    Unlabeled,
    Conditional,
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Hard => "hard",
            LossKind::Unlabeled => "unlabeled",
            LossKind::Conditional => "conditional",
        }
    }

    pub fn needs_soft_labels(&self) -> bool {
        !matches!(self, LossKind::Hard)
    }

    pub fn needs_labels(&self) -> bool {
        !matches!(self, LossKind::Unlabeled)
    }
}

fn student_dims(tape: &Tape, student: Var) -> Result<(usize, usize)> {
    let s = tape.value(student).shape();
    if s.len() != 2 {
        return Err(Error::shape(format!("student probabilities must be N×C, got {s:?}")));
    }
    if s[0] == 0 {
        return Err(Error::Empty("loss over zero samples"));
    }
    Ok((s[0], s[1]))
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Empty("loss over zero labels"));
    }
    if labels.len() != rows {
        return Err(Error::shape(format!("{} labels for {rows} rows", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, num_classes: classes });
    }
    Ok(())
}

fn check_teacher(teacher: &Tensor, rows: usize, classes: usize) -> Result<()> {
    if teacher.shape() != [rows, classes] {
        return Err(Error::shape(format!(
            "teacher probabilities {:?} do not match student {rows}×{classes}",
            teacher.shape()
        )));
    }
    Ok(())
}

fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros([labels.len(), classes]);
    for (row, &l) in t.data_mut().chunks_exact_mut(classes).zip(labels) {
        row[l] = 1.0;
    }
    t
}

/// `−(1/N) Σ W ⊙ ln max(pS, ε)` for a constant target matrix `W`.
pub fn weighted_cross_entropy(tape: &mut Tape, student: Var, targets: Tensor) -> Result<Var> {
    let (rows, _) = student_dims(tape, student)?;
    let logp = tape.log_clamped(student, PROB_EPS);
    let weighted = tape.mul_const(logp, targets)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0 / rows as f64))
}

/// Soft-label cross-entropy against the teacher on unlabeled images.
pub fn loss_unlabeled(tape: &mut Tape, teacher: &Tensor, student: Var) -> Result<Var> {
    let (rows, classes) = student_dims(tape, student)?;
    check_teacher(teacher, rows, classes)?;
    weighted_cross_entropy(tape, student, teacher.clone())
}

/// Target matrix of the conditional loss: teacher soft label where the
/// teacher's argmax (lowest index on ties) matches the label, one-hot label
/// elsewhere.
pub fn conditional_targets(teacher: &Tensor, labels: &[usize]) -> Tensor {
    let classes = teacher.shape()[1];
    let mut w = teacher.clone();
    for (row, &l) in w.data_mut().chunks_exact_mut(classes).zip(labels) {
        if argmax(row) != l {
            row.fill(0.0);
            row[l] = 1.0;
        }
    }
    w
}

/// Conditional distillation on labeled images.
pub fn loss_conditional(tape: &mut Tape, teacher: &Tensor, student: Var, labels: &[usize]) -> Result<Var> {
    let (rows, classes) = student_dims(tape, student)?;
    check_labels(labels, rows, classes)?;
    check_teacher(teacher, rows, classes)?;
    weighted_cross_entropy(tape, student, conditional_targets(teacher, labels))
}

/// Plain cross-entropy against integer labels.
pub fn loss_hard(tape: &mut Tape, student: Var, labels: &[usize]) -> Result<Var> {
    let (rows, classes) = student_dims(tape, student)?;
    check_labels(labels, rows, classes)?;
    weighted_cross_entropy(tape, student, one_hot(labels, classes))
}

/// Dispatches on `kind`; `teacher` is ignored for hard loss and `labels`
/// for unlabeled loss.
pub fn stage_loss(
    tape: &mut Tape,
    kind: LossKind,
    student: Var,
    teacher: Option<&Tensor>,
    labels: Option<&[usize]>,
) -> Result<Var> {
    let missing_teacher = || Error::InvalidArgument(format!("{} loss needs teacher soft labels", kind.name()));
    let missing_labels = || Error::InvalidArgument(format!("{} loss needs labels", kind.name()));
    match kind {
        LossKind::Unlabeled => loss_unlabeled(tape, teacher.ok_or_else(missing_teacher)?, student),
        LossKind::Conditional => {
            loss_conditional(tape, teacher.ok_or_else(missing_teacher)?, student, labels.ok_or_else(missing_labels)?)
        }
        LossKind::Hard => loss_hard(tape, student, labels.ok_or_else(missing_labels)?),
    }
}
