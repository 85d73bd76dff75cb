//! Voxel-wise cross-entropy and Lovász-Softmax, both with analytic
//! gradients.

use serde::Serialize;

use crate::error::{Error, Result};

/// Row-major `voxels x classes` probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProbs {
    pub num_classes: usize,
    pub data: Vec<f64>,
}

impl ClassProbs {
    pub fn num_voxels(&self) -> usize {
        self.data.len() / self.num_classes
    }

    pub fn voxel(&self, v: usize) -> &[f64] {
        &self.data[v * self.num_classes..(v + 1) * self.num_classes]
    }
}

/// Per-voxel softmax over `channels` (row-major, `num_classes` per voxel).
pub fn softmax_probs(channels: &[f64], num_classes: usize) -> ClassProbs {
    let mut data = Vec::with_capacity(channels.len());
    for row in channels.chunks_exact(num_classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = data.len();
        let mut sum = 0.0;
        for x in row {
            let e = (x - max).exp();
            sum += e;
            data.push(e);
        }
        data[start..].iter_mut().for_each(|e| *e /= sum);
    }
    ClassProbs { num_classes, data }
}

/// Pulls a gradient w.r.t. probabilities back to the softmax inputs.
pub fn softmax_backward(probs: &ClassProbs, d_probs: &[f64]) -> Vec<f64> {
    let c = probs.num_classes;
    let mut out = vec![0.0; d_probs.len()];
    for ((p, d), o) in probs
        .data
        .chunks_exact(c)
        .zip(d_probs.chunks_exact(c))
        .zip(out.chunks_exact_mut(c))
    {
        let inner: f64 = p.iter().zip(d).map(|(a, b)| a * b).sum();
        for i in 0..c {
            o[i] = p[i] * (d[i] - inner);
        }
    }
    out
}

fn check_labels(probs: &ClassProbs, labels: &[u8]) -> Result<()> {
    if labels.len() != probs.num_voxels() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for {} voxels",
            labels.len(),
            probs.num_voxels()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l as usize >= probs.num_classes) {
        return Err(Error::InvalidLabel {
            label,
            num_classes: probs.num_classes,
        });
    }
    Ok(())
}

/// Mean negative log-probability of the true class, and its gradient
/// w.r.t. the softmax inputs: `(p - onehot) / N`.
pub fn cross_entropy(probs: &ClassProbs, labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    check_labels(probs, labels)?;
    let c = probs.num_classes;
    let n = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = probs.data.clone();
    for (v, &l) in labels.iter().enumerate() {
        let p = probs.data[v * c + l as usize].max(f64::MIN_POSITIVE);
        loss -= p.ln();
        grad[v * c + l as usize] -= 1.0;
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((loss / n, grad))
}

/// Lovász-Softmax averaged over the classes present in `labels`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lovasz {
    pub loss: f64,
    /// Per-class term; zero for classes absent from `labels`.
    pub per_class: Vec<f64>,
    pub present: Vec<bool>,
    /// Gradient w.r.t. the probabilities.
    pub grad: Vec<f64>,
}

pub fn lovasz_softmax(probs: &ClassProbs, labels: &[u8]) -> Result<Lovasz> {
    check_labels(probs, labels)?;
    if labels.is_empty() {
        return Err(Error::InvalidArgument("Lovász loss needs at least one voxel".into()));
    }
    let c = probs.num_classes;
    let n = labels.len();
    let mut present = vec![false; c];
    for &l in labels {
        present[l as usize] = true;
    }
    let n_present = present.iter().filter(|p| **p).count() as f64;
    let mut per_class = vec![0.0; c];
    let mut grad = vec![0.0; probs.data.len()];
    let mut fg = vec![false; n];
    let mut errors = vec![0.0; n];
    for class in 0..c {
        if !present[class] {
            continue;
        }
        for v in 0..n {
            fg[v] = labels[v] as usize == class;
            let p = probs.data[v * c + class];
            errors[v] = if fg[v] { 1.0 - p } else { p };
        }
        let (value, d_err) = lovasz_extension(&errors, &fg);
        per_class[class] = value;
        for v in 0..n {
            let sign = if fg[v] { -1.0 } else { 1.0 };
            grad[v * c + class] = sign * d_err[v] / n_present;
        }
    }
    let loss = per_class.iter().sum::<f64>() / n_present;
    Ok(Lovasz {
        loss,
        per_class,
        present,
        grad,
    })
}

/// Lovász extension of the Jaccard loss for one class, evaluated at
/// `errors`, with its gradient w.r.t. each error. Ties in the descending
/// sort are broken by index.
pub fn lovasz_extension(errors: &[f64], fg: &[bool]) -> (f64, Vec<f64>) {
    let n = errors.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));
    let gts = fg.iter().filter(|f| **f).count() as f64;
    let mut jaccard = Vec::with_capacity(n);
    let mut cum_fg = 0.0;
    let mut cum_bg = 0.0;
    for &i in &order {
        if fg[i] {
            cum_fg += 1.0;
        } else {
            cum_bg += 1.0;
        }
        let inter = gts - cum_fg;
        let union = gts + cum_bg;
        jaccard.push(1.0 - inter / union);
    }
    // sum_i e_(i) (J_i - J_(i-1)) rewritten as sum_i (e_(i) - e_(i+1)) J_i,
    // which is exact at hypercube vertices
    let mut loss = 0.0;
    let mut d = vec![0.0; n];
    for r in 0..n {
        let e = errors[order[r]];
        let next = if r + 1 < n { errors[order[r + 1]] } else { 0.0 };
        loss += (e - next) * jaccard[r];
        d[order[r]] = if r == 0 {
            jaccard[0]
        } else {
            jaccard[r] - jaccard[r - 1]
        };
    }
    (loss, d)
}

/// Combined loss for one prediction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossReport {
    pub ce: f64,
    pub lovasz: f64,
    pub total: f64,
    pub per_class_lovasz: Vec<f64>,
}

/// CE + Lovász on softmax(`channels`), with the gradient w.r.t. `channels`.
pub fn total_loss(channels: &[f64], num_classes: usize, labels: &[u8]) -> Result<(LossReport, Vec<f64>)> {
    let probs = softmax_probs(channels, num_classes);
    let (ce, mut grad) = cross_entropy(&probs, labels)?;
    let lov = lovasz_softmax(&probs, labels)?;
    let lov_grad = softmax_backward(&probs, &lov.grad);
    grad.iter_mut().zip(&lov_grad).for_each(|(g, l)| *g += l);
    let report = LossReport {
        ce,
        lovasz: lov.loss,
        total: ce + lov.loss,
        per_class_lovasz: lov.per_class,
    };
    Ok((report, grad))
}
