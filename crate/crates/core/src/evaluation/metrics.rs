use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::simulator::N_CLASSES;

/// Counts of true class (row) against predicted class (column).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..N_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_total(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_total(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Rows scaled to sum to one; rows without samples are `None`.
    pub fn row_normalized(&self) -> [Option<[f64; N_CLASSES]>; N_CLASSES] {
        std::array::from_fn(|i| {
            let n = self.row_total(i);
            (n > 0).then(|| self.counts[i].map(|c| c as f64 / n as f64))
        })
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for i in 0..N_CLASSES {
            for j in 0..N_CLASSES {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }
}

pub fn confusion(preds: &[usize], labels: &[usize]) -> Result<ConfusionMatrix, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &y) in preds.iter().zip(labels) {
        if p >= N_CLASSES || y >= N_CLASSES {
            return Err(EvalError::LabelOutOfRange(p.max(y)));
        }
        cm.counts[y][p] += 1;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub precision: [f64; N_CLASSES],
    pub recall: [f64; N_CLASSES],
    pub f1: [f64; N_CLASSES],
    /// Classes that occur as a label or a prediction; macro means run over these.
    pub active: [bool; N_CLASSES],
    /// Zero-denominator cells that were defined as 0.
    pub warnings: Vec<String>,
}

fn ratio(num: u64, den: u64, what: &str, class: usize, warnings: &mut Vec<String>) -> f64 {
    if den == 0 {
        let msg = format!("{what} of class {class} has an empty denominator, set to 0");
        tracing::warn!("{msg}");
        warnings.push(msg);
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy and macro precision, recall and F1. Macro values are unweighted
/// means over the classes that appear as a label or as a prediction.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyConfusion);
    }
    let mut warnings = Vec::new();
    let mut precision = [0.0; N_CLASSES];
    let mut recall = [0.0; N_CLASSES];
    let mut f1 = [0.0; N_CLASSES];
    let mut active = [false; N_CLASSES];
    for c in 0..N_CLASSES {
        let (tp, row, col) = (cm.counts[c][c], cm.row_total(c), cm.col_total(c));
        active[c] = row > 0 || col > 0;
        if !active[c] {
            continue;
        }
        precision[c] = ratio(tp, col, "precision", c, &mut warnings);
        recall[c] = ratio(tp, row, "recall", c, &mut warnings);
        let s = precision[c] + recall[c];
        f1[c] = if s > 0.0 { 2.0 * precision[c] * recall[c] / s } else { 0.0 };
    }
    let n_active = active.iter().filter(|&&a| a).count() as f64;
    let mean = |v: &[f64; N_CLASSES]| (0..N_CLASSES).filter(|&c| active[c]).map(|c| v[c]).sum::<f64>() / n_active;
    Ok(MetricReport {
        accuracy: cm.correct() as f64 / total as f64,
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        precision,
        recall,
        f1,
        active,
        warnings,
    })
}
