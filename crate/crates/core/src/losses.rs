//! Objective functions and their epoch-dependent mixing weights.
//!
//! Every loss returns its value together with the gradients with respect to
//! each differentiable input, so callers never re-derive them.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stabilizer added to the CCC denominator.
pub const CCC_EPS: f64 = 1e-8;
/// Probabilities entering the AU cross-entropy are clipped to `[eps, 1 - eps]`.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct CeGrad {
    pub loss: f64,
    pub d_logits: Array2<f64>,
    pub d_alphas: Array1<f64>,
}

/// Mean negative log-likelihood of softmax over confidence-scaled logits.
///
/// Sample `i` contributes `logsumexp(a_i * l_i) - a_i * l_{i,y_i}`, optionally
/// multiplied by `class_weights[y_i]`.
pub fn confidence_weighted_ce(
    logits: ArrayView2<f64>,
    labels: &[usize],
    alphas: ArrayView1<f64>,
    class_weights: Option<&[f64]>,
) -> Result<CeGrad> {
    let (n, c) = logits.dim();
    if n == 0 || labels.len() != n || alphas.len() != n {
        return Err(Error::Contract(format!(
            "weighted CE shape mismatch: {n} logit rows, {} labels, {} alphas",
            labels.len(),
            alphas.len()
        )));
    }
    if logits.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidInput("NaN logits".into()));
    }
    if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
        return Err(Error::Contract(format!("confidence {a} outside (0, 1]")));
    }
    if let Some(w) = class_weights {
        if w.len() != c {
            return Err(Error::Contract(format!("{} class weights for {c} classes", w.len())));
        }
    }

    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut d_logits = Array2::zeros((n, c));
    let mut d_alphas = Array1::zeros(n);
    for i in 0..n {
        let y = labels[i];
        if y >= c {
            return Err(Error::Contract(format!("label {y} out of range for {c} classes")));
        }
        let a = alphas[i];
        let row = logits.row(i);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(a * x));
        let exps: Vec<f64> = row.iter().map(|&x| (a * x - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let weight = class_weights.map_or(1.0, |w| w[y]);
        loss += weight * (max + total.ln() - a * row[y]);

        // d/dz of the per-sample term, z = a * l
        let mut dz_dot_l = 0.0;
        for j in 0..c {
            let dz = weight * inv_n * (exps[j] / total - if j == y { 1.0 } else { 0.0 });
            d_logits[[i, j]] = a * dz;
            dz_dot_l += dz * row[j];
        }
        d_alphas[i] = dz_dot_l;
    }
    Ok(CeGrad {
        loss: loss * inv_n,
        d_logits,
        d_alphas,
    })
}

struct Moments {
    mean_y: f64,
    mean_p: f64,
    var_y: f64,
    var_p: f64,
    cov: f64,
}

fn moments(y: ArrayView1<f64>, p: ArrayView1<f64>) -> Moments {
    let k = y.len() as f64;
    let mean_y = y.sum() / k;
    let mean_p = p.sum() / k;
    let (mut var_y, mut var_p, mut cov) = (0.0, 0.0, 0.0);
    for (&a, &b) in y.iter().zip(p.iter()) {
        var_y += (a - mean_y) * (a - mean_y);
        var_p += (b - mean_p) * (b - mean_p);
        cov += (a - mean_y) * (b - mean_p);
    }
    Moments {
        mean_y,
        mean_p,
        var_y: var_y / k,
        var_p: var_p / k,
        cov: cov / k,
    }
}

fn check_ccc_inputs(y: ArrayView1<f64>, yhat: ArrayView1<f64>) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Contract(format!("CCC length mismatch {} vs {}", y.len(), yhat.len())));
    }
    if y.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "CCC needs at least 2 points, got {}",
            y.len()
        )));
    }
    Ok(())
}

/// Concordance correlation coefficient with population statistics.
pub fn ccc(y: ArrayView1<f64>, yhat: ArrayView1<f64>) -> Result<f64> {
    check_ccc_inputs(y, yhat)?;
    let m = moments(y, yhat);
    let den = m.var_y + m.var_p + (m.mean_y - m.mean_p).powi(2) + CCC_EPS;
    Ok(2.0 * m.cov / den)
}

/// CCC and its gradient with respect to the predictions.
pub fn ccc_with_grad(y: ArrayView1<f64>, yhat: ArrayView1<f64>) -> Result<(f64, Array1<f64>)> {
    check_ccc_inputs(y, yhat)?;
    let k = y.len() as f64;
    let m = moments(y, yhat);
    let num = 2.0 * m.cov;
    let den = m.var_y + m.var_p + (m.mean_y - m.mean_p).powi(2) + CCC_EPS;
    let rho = num / den;
    let grad = y
        .iter()
        .zip(yhat.iter())
        .map(|(&a, &b)| {
            let d_num = 2.0 * (a - m.mean_y) / k;
            let d_den = 2.0 * (b - m.mean_p) / k + 2.0 * (m.mean_p - m.mean_y) / k;
            (d_num * den - num * d_den) / (den * den)
        })
        .collect();
    Ok((rho, grad))
}

/// Per-class imbalance weights `1 - N_j / N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub gamma: Vec<f64>,
    pub source_counts: Vec<usize>,
    pub population: usize,
}

impl ClassWeights {
    /// All-ones weights, used when class balancing is switched off.
    pub fn uniform(classes: usize) -> Self {
        Self {
            gamma: vec![1.0; classes],
            source_counts: vec![0; classes],
            population: 0,
        }
    }
}

pub fn class_weights(counts: &[usize]) -> Result<ClassWeights> {
    let population: usize = counts.iter().sum();
    if population == 0 {
        return Err(Error::InvalidInput("class counts are all zero".into()));
    }
    let n = population as f64;
    Ok(ClassWeights {
        gamma: counts.iter().map(|&c| (population - c) as f64 / n).collect(),
        source_counts: counts.to_vec(),
        population,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CccLossGrad {
    pub loss: f64,
    pub d_pred: Array2<f64>,
    /// Classes that contributed (at least two samples in the batch).
    pub active_classes: Vec<usize>,
}

/// Class-weighted CCC loss over valence and arousal.
///
/// Classes with fewer than two samples in the batch contribute nothing.
pub fn weighted_ccc_loss(
    va_pred: ArrayView2<f64>,
    va_label: ArrayView2<f64>,
    labels: &[usize],
    gamma: &ClassWeights,
) -> Result<CccLossGrad> {
    let n = va_pred.nrows();
    if va_pred.dim() != (n, 2) || va_label.dim() != (n, 2) || labels.len() != n {
        return Err(Error::Contract("weighted CCC expects N x 2 predictions and labels".into()));
    }
    let classes = gamma.gamma.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Contract(format!("label {y} out of range for {classes} classes")));
        }
        members[y].push(i);
    }

    let mut loss = 0.0;
    let mut d_pred = Array2::zeros((n, 2));
    let mut active_classes = Vec::new();
    for (j, idx) in members.iter().enumerate() {
        if idx.len() < 2 {
            continue;
        }
        active_classes.push(j);
        let g = gamma.gamma[j];
        let mut rho_sum = 0.0;
        for dim in 0..2 {
            let y: Array1<f64> = idx.iter().map(|&i| va_label[[i, dim]]).collect();
            let p: Array1<f64> = idx.iter().map(|&i| va_pred[[i, dim]]).collect();
            let (rho, grad) = ccc_with_grad(y.view(), p.view())?;
            rho_sum += rho;
            for (&i, d) in idx.iter().zip(grad.iter()) {
                d_pred[[i, dim]] = -0.5 * g * d;
            }
        }
        loss += g * (1.0 - 0.5 * rho_sum);
    }
    Ok(CccLossGrad {
        loss,
        d_pred,
        active_classes,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BceGrad {
    pub loss: f64,
    pub d_pred: Array2<f64>,
    pub d_alphas: Array1<f64>,
}

/// Confidence-weighted binary cross-entropy summed over AUs, averaged over
/// the batch. Predictions are clipped to `[BCE_EPS, 1 - BCE_EPS]`; clipped
/// entries receive zero gradient.
pub fn weighted_au_bce(au_pred: ArrayView2<f64>, au_label: ArrayView2<u8>, alphas: ArrayView1<f64>) -> Result<BceGrad> {
    let (n, m) = au_pred.dim();
    if au_label.dim() != (n, m) || alphas.len() != n || n == 0 {
        return Err(Error::Contract("weighted BCE shape mismatch".into()));
    }
    if au_label.iter().any(|&z| z > 1) {
        return Err(Error::Contract("AU labels must be 0 or 1".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut d_pred = Array2::zeros((n, m));
    let mut d_alphas = Array1::zeros(n);
    for i in 0..n {
        let a = alphas[i];
        let mut row_loss = 0.0;
        for k in 0..m {
            let raw = au_pred[[i, k]];
            let p = raw.clamp(BCE_EPS, 1.0 - BCE_EPS);
            let z = f64::from(au_label[[i, k]]);
            row_loss -= z * p.ln() + (1.0 - z) * (1.0 - p).ln();
            if raw == p {
                d_pred[[i, k]] = a * inv_n * (-z / p + (1.0 - z) / (1.0 - p));
            }
        }
        loss += a * row_loss;
        d_alphas[i] = row_loss * inv_n;
    }
    Ok(BceGrad {
        loss: loss * inv_n,
        d_pred,
        d_alphas,
    })
}

/// Epoch-indexed mixing weights for the target/VA group and the AU branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampSchedule {
    pub horizon: usize,
}

impl RampSchedule {
    pub fn new(horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("ramp horizon H must be at least 1".into()));
        }
        Ok(Self { horizon })
    }

    pub fn weights(&self, epoch: f64) -> Result<(f64, f64)> {
        ramp_weights(epoch, self.horizon)
    }
}

/// `(lambda_1, lambda_2)` at epoch `beta` for horizon `h`.
pub fn ramp_weights(beta: f64, h: usize) -> Result<(f64, f64)> {
    if h == 0 {
        return Err(Error::Config("ramp horizon H must be at least 1".into()));
    }
    if beta.is_nan() || beta < 0.0 {
        return Err(Error::InvalidInput(format!("epoch index {beta} must be non-negative")));
    }
    let h = h as f64;
    if beta <= h {
        Ok(((-(1.0 - beta / h).powi(2)).exp(), 1.0))
    } else {
        Ok((1.0, (-(1.0 - h / beta).powi(2)).exp()))
    }
}

/// Ramp-weighted sum of the three branch losses. Disabled branches pass 0.
pub fn total_loss(l_wce: f64, l_w3c: f64, l_wau: f64, beta: f64, h: usize) -> Result<f64> {
    let (l1, l2) = ramp_weights(beta, h)?;
    Ok(l1 * (l_wce + l_w3c) + l2 * l_wau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ce_uniform_logits_is_ln_c() {
        let g = confidence_weighted_ce(Array2::zeros((1, 7)).view(), &[3], arr1(&[1.0]).view(), None).unwrap();
        assert!(close(g.loss, 7f64.ln(), 1e-12));
        assert!(close(g.loss, 1.945910, 1e-6));
    }

    #[test]
    fn ce_two_class_hand_value() {
        let g = confidence_weighted_ce(arr2(&[[2.0, 0.0]]).view(), &[0], arr1(&[1.0]).view(), None).unwrap();
        assert!(close(g.loss, 0.126928, 1e-6));
        assert!(close(g.loss, -(2f64.exp() / (2f64.exp() + 1.0)).ln(), 1e-14));
    }

    #[test]
    fn ce_vanishing_alpha_tends_to_ln_c() {
        let logits = arr2(&[[5.0, -3.0, 0.5, 9.0]]);
        let g = confidence_weighted_ce(logits.view(), &[1], arr1(&[1e-12]).view(), None).unwrap();
        assert!(close(g.loss, 4f64.ln(), 1e-9));
    }

    #[test]
    fn ce_rejects_bad_alpha_and_nan() {
        let l = arr2(&[[1.0, 0.0]]);
        assert!(matches!(
            confidence_weighted_ce(l.view(), &[0], arr1(&[0.0]).view(), None),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            confidence_weighted_ce(l.view(), &[0], arr1(&[1.5]).view(), None),
            Err(Error::Contract(_))
        ));
        let nan = arr2(&[[f64::NAN, 0.0]]);
        assert!(confidence_weighted_ce(nan.view(), &[0], arr1(&[0.5]).view(), None).is_err());
    }

    #[test]
    fn ccc_examples() {
        let y = arr1(&[-1.0, 0.0, 1.0]);
        assert!(close(ccc(y.view(), y.view()).unwrap(), 1.0, 1e-7));
        let rev = arr1(&[1.0, 0.0, -1.0]);
        assert!(close(ccc(y.view(), rev.view()).unwrap(), -1.0, 1e-7));
        let a = arr1(&[0.0, 0.0, 1.0, 1.0]);
        let b = arr1(&[0.5; 4]);
        assert_eq!(ccc(a.view(), b.view()).unwrap(), 0.0);
    }

    #[test]
    fn ccc_degenerate_input() {
        let one = arr1(&[0.3]);
        assert!(matches!(ccc(one.view(), one.view()), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn class_weight_examples() {
        assert_eq!(class_weights(&[50, 30, 20]).unwrap().gamma, vec![0.5, 0.7, 0.8]);
        assert_eq!(class_weights(&[100]).unwrap().gamma, vec![0.0]);
        assert_eq!(class_weights(&[25; 4]).unwrap().gamma, vec![0.75; 4]);
        assert!(class_weights(&[0, 0]).is_err());
    }

    #[test]
    fn weighted_ccc_examples() {
        // class 0: perfect; class 1: perfect valence, reversed arousal
        let labels = [0, 0, 0, 1, 1, 1];
        let y = arr2(&[[-1.0, 0.2], [0.0, 0.4], [1.0, 0.9], [-1.0, -1.0], [0.0, 0.0], [1.0, 1.0]]);
        let mut p = y.clone();
        p[[3, 1]] = 1.0;
        p[[5, 1]] = -1.0;
        let gamma = ClassWeights {
            gamma: vec![0.3, 0.5],
            source_counts: vec![],
            population: 0,
        };
        let perfect = weighted_ccc_loss(y.view(), y.view(), &labels, &gamma).unwrap();
        assert!(perfect.loss.abs() < 1e-7);
        let half = weighted_ccc_loss(p.view(), y.view(), &labels, &gamma).unwrap();
        assert!(close(half.loss, 0.5, 1e-7));

        let singletons = weighted_ccc_loss(p.view().slice_move(ndarray::s![..2, ..]), y.view().slice_move(ndarray::s![..2, ..]), &[0, 1], &gamma).unwrap();
        assert_eq!(singletons.loss, 0.0);
        assert!(singletons.active_classes.is_empty());
    }

    #[test]
    fn bce_examples() {
        let z = arr2(&[[1u8, 0, 1]]);
        let exact = weighted_au_bce(arr2(&[[1.0, 0.0, 1.0]]).view(), z.view(), arr1(&[1.0]).view()).unwrap();
        assert!(exact.loss <= 3.0 * BCE_EPS * 2.0);

        let p = Array::from_elem((4, 3), 0.3);
        let zeros = weighted_au_bce(p.view(), Array2::<u8>::ones((4, 3)).view(), Array1::zeros(4).view()).unwrap();
        assert_eq!(zeros.loss, 0.0);

        let half = weighted_au_bce(arr2(&[[0.5]]).view(), arr2(&[[1u8]]).view(), arr1(&[1.0]).view()).unwrap();
        assert!(close(half.loss, std::f64::consts::LN_2, 1e-12));

        assert!(weighted_au_bce(arr2(&[[0.5]]).view(), arr2(&[[2u8]]).view(), arr1(&[1.0]).view()).is_err());
    }

    #[test]
    fn ramp_examples() {
        assert_eq!(ramp_weights(5.0, 5).unwrap(), (1.0, 1.0));
        let (l1, l2) = ramp_weights(0.0, 5).unwrap();
        assert!(close(l1, 0.367879, 1e-6) && l2 == 1.0);
        let (l1, l2) = ramp_weights(1e12, 5).unwrap();
        assert!(l1 == 1.0 && close(l2, (-1f64).exp(), 1e-9));
        assert!(ramp_weights(-1.0, 5).is_err());
        assert!(RampSchedule::new(0).is_err());
    }

    #[test]
    fn total_examples() {
        assert_eq!(total_loss(1.0, 1.0, 1.0, 5.0, 5).unwrap(), 3.0);
        assert!(close(total_loss(2.0, 0.0, 4.0, 0.0, 5).unwrap(), 4.735759, 1e-6));
        let (l1, _) = ramp_weights(3.0, 5).unwrap();
        assert_eq!(total_loss(0.7, 0.0, 0.0, 3.0, 5).unwrap(), l1 * 0.7);
    }
}
