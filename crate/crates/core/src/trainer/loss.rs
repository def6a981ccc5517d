// SPDX-License-Identifier: Apache-2.0

use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};

/// Tolerance on row norms accepted by the contrastive loss.
pub const UNIT_NORM_TOL: f64 = 1e-6;

/// Paired target-layer embeddings: row `i` of `anchors` (source words) and
/// of `positives` (their translations) form one training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    anchors: Tensor,
    positives: Tensor,
}

impl EmbeddingBatch {
    pub fn new(anchors: Tensor, positives: Tensor) -> Result<Self> {
        if !anchors.is_matrix() || anchors.shape() != positives.shape() {
            return Err(Error::shape(
                "embedding batch",
                anchors.shape(),
                positives.shape(),
            ));
        }
        check_unit_rows("anchors", &anchors)?;
        check_unit_rows("positives", &positives)?;
        Ok(Self { anchors, positives })
    }

    pub fn anchors(&self) -> &Tensor {
        &self.anchors
    }

    pub fn positives(&self) -> &Tensor {
        &self.positives
    }

    pub fn len(&self) -> usize {
        self.anchors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Loss value with the hardest negative chosen for each anchor row.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveLoss {
    pub loss: f64,
    pub negatives: Vec<Option<usize>>,
}

fn check_unit_rows(what: &str, t: &Tensor) -> Result<()> {
    for i in 0..t.rows() {
        let n = crate::numcore::norm(t.row(i));
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::Contract(format!(
                "{what} row {i} has norm {n}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Mean over anchors of `max(0, margin + S[i, n(i)] − S[i, i])` with
/// `S = anchors · positivesᵀ` and `n(i)` the first-index argmax of row `i`
/// off the diagonal. A batch of one has no negatives and costs 0.
pub fn in_batch_contrastive_loss(batch: &EmbeddingBatch, margin: f64) -> Result<ContrastiveLoss> {
    let mut tape = Tape::new();
    let a = tape.constant(batch.anchors.clone());
    let p = tape.constant(batch.positives.clone());
    let (loss, negatives) = contrastive_loss_tape(&mut tape, a, p, margin)?;
    Ok(ContrastiveLoss {
        loss: tape.value(loss).item()?,
        negatives,
    })
}

/// Differentiable form of [`in_batch_contrastive_loss`] over tape values.
pub fn contrastive_loss_tape(
    tape: &mut Tape,
    anchors: Var,
    positives: Var,
    margin: f64,
) -> Result<(Var, Vec<Option<usize>>)> {
    if !(margin >= 0.0) {
        return Err(Error::Config(format!(
            "margin must be non-negative, got {margin}"
        )));
    }
    if tape.shape(anchors) != tape.shape(positives) || tape.shape(anchors).len() != 2 {
        return Err(Error::shape(
            "contrastive loss",
            tape.shape(anchors),
            tape.shape(positives),
        ));
    }
    check_unit_rows("anchors", tape.value(anchors))?;
    check_unit_rows("positives", tape.value(positives))?;
    let s = tape.matmul_with(anchors, positives, true)?;
    tape.hardest_negative_hinge(s, margin)
}
