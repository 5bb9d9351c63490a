//! Linear soft-margin SVM trained by dual coordinate descent.
//!
//! The bias is learned as the weight of an appended constant feature whose
//! value is the largest training-row norm, so rescaling all features by `a`
//! and the penalty by `1/a²` leaves the predicted labels unchanged.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Label;
use crate::error::{Error, Result};

pub const GAP_TOLERANCE: f64 = 1e-6;
pub const MAX_EPOCHS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    /// One weight vector per separating function (one for binary problems).
    weights: Vec<DVector<f64>>,
    bias: Vec<f64>,
    c: f64,
    classes: Vec<Label>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub labels: Vec<Label>,
    /// N×K decision values, one column per class in `classes` order.
    pub decision: DMatrix<f64>,
}

impl Prediction {
    /// Gap between the winning and runner-up decision values of sample `i`.
    pub fn margin(&self, i: usize) -> f64 {
        let row = self.decision.row(i);
        let mut top = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for &v in row.iter() {
            if v > top {
                second = top;
                top = v;
            } else if v > second {
                second = v;
            }
        }
        top - second
    }
}

impl SvmModel {
    pub fn classes(&self) -> &[Label] {
        &self.classes
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn n_features(&self) -> usize {
        self.weights[0].len()
    }

    pub fn weights(&self) -> &[DVector<f64>] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

/// Dual coordinate descent on `min ½‖w‖² + c·Σ max(0, 1 − yᵢ·w·x̂ᵢ)`, with
/// x̂ the feature row extended by the bias feature. Returns (w, bias weight).
fn train_binary(x: &DMatrix<f64>, y: &[f64], c: f64, bias_feature: f64) -> (DVector<f64>, f64) {
    let (n, dim) = x.shape();
    let rows: Vec<DVector<f64>> = x.row_iter().map(|r| r.transpose()).collect();
    let q_diag: Vec<f64> = rows
        .iter()
        .map(|r| r.norm_squared() + bias_feature * bias_feature)
        .collect();
    let mut alpha = vec![0.0; n];
    let mut w = DVector::zeros(dim);
    let mut wb = 0.0;

    for _ in 0..MAX_EPOCHS {
        for i in 0..n {
            let g = y[i] * (w.dot(&rows[i]) + wb * bias_feature) - 1.0;
            let next = (alpha[i] - g / q_diag[i]).clamp(0.0, c);
            let delta = next - alpha[i];
            if delta != 0.0 {
                alpha[i] = next;
                w.axpy(delta * y[i], &rows[i], 1.0);
                wb += delta * y[i] * bias_feature;
            }
        }
        let reg = 0.5 * (w.norm_squared() + wb * wb);
        let hinge: f64 = (0..n)
            .map(|i| (1.0 - y[i] * (w.dot(&rows[i]) + wb * bias_feature)).max(0.0))
            .sum();
        let primal = reg + c * hinge;
        let dual = alpha.iter().sum::<f64>() - reg;
        if primal - dual <= GAP_TOLERANCE * primal.abs() {
            break;
        }
    }
    (w, wb * bias_feature)
}

/// Trains a linear SVM; multiclass problems use one-vs-rest.
pub fn svm_train(features: &DMatrix<f64>, labels: &[Label], c: f64) -> Result<SvmModel> {
    let n = features.nrows();
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{n} feature rows but {} labels",
            labels.len()
        )));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::Input(format!("regularisation c = {c} must be positive")));
    }
    if n < 2 {
        return Err(Error::Input(format!("training needs at least 2 samples, got {n}")));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("training features contain non-finite values".into()));
    }
    let mut classes: Vec<Label> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::DegenerateTraining(format!("label {}", classes[0])));
    }
    let max_norm = features
        .row_iter()
        .map(|r| r.norm())
        .fold(0.0, f64::max);
    let bias_feature = if max_norm > 0.0 { max_norm } else { 1.0 };

    let targets: Vec<Label> = if classes.len() == 2 {
        vec![classes[1]]
    } else {
        classes.clone()
    };
    let mut weights = Vec::with_capacity(targets.len());
    let mut bias = Vec::with_capacity(targets.len());
    for &positive in &targets {
        let y: Vec<f64> = labels
            .iter()
            .map(|&l| if l == positive { 1.0 } else { -1.0 })
            .collect();
        let (w, b) = train_binary(features, &y, c, bias_feature);
        weights.push(w);
        bias.push(b);
    }
    Ok(SvmModel {
        weights,
        bias,
        c,
        classes,
    })
}

/// One-vs-rest argmax; ties go to the earliest class in `m.classes()`.
pub fn svm_predict(m: &SvmModel, features: &DMatrix<f64>) -> Result<Prediction> {
    if features.ncols() != m.n_features() {
        return Err(Error::Dimension(format!(
            "model expects {} features, got {}",
            m.n_features(),
            features.ncols()
        )));
    }
    let n = features.nrows();
    let k = m.classes.len();
    let mut decision = DMatrix::zeros(n, k);
    for (i, row) in features.row_iter().enumerate() {
        if k == 2 {
            let f = row.dot(&m.weights[0].transpose()) + m.bias[0];
            decision[(i, 0)] = -f;
            decision[(i, 1)] = f;
        } else {
            for j in 0..k {
                decision[(i, j)] = row.dot(&m.weights[j].transpose()) + m.bias[j];
            }
        }
    }
    let labels = decision
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..k {
                if row[j] > row[best] {
                    best = j;
                }
            }
            m.classes[best]
        })
        .collect();
    Ok(Prediction { labels, decision })
}
