//! Change-detection accuracy (PCC1) and semantic accuracy (PCC2).

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::synthdata::NUM_CLASSES;
use crate::tensor::Tensor;

/// Per-pixel index of the most probable channel, laid out (N, H, W).
/// Ties resolve to the lowest index.
pub fn argmax_map(probs: &Tensor) -> Vec<u8> {
    let [n, c, h, w] = probs.shape();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * plane);
    for s in 0..n {
        let sample = probs.sample(s);
        for i in 0..plane {
            let mut best = 0;
            for ch in 1..c {
                if sample[ch * plane + i] > sample[best * plane + i] {
                    best = ch;
                }
            }
            out.push(best as u8);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ChangeConfusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ChangeConfusion {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// `(TP + TN) / (TP + TN + FP + FN)` over predicted vs. true change flags.
pub fn pcc1(pred: &[bool], truth: &[bool]) -> Result<(f64, ChangeConfusion)> {
    check_dim("mask length", truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("PCC1 over zero pixels".into()));
    }
    let mut m = ChangeConfusion::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (true, true) => m.tp += 1,
            (false, false) => m.tn += 1,
            (true, false) => m.fp += 1,
            (false, true) => m.fn_ += 1,
        }
    }
    Ok(((m.tp + m.tn) as f64 / m.total() as f64, m))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub correct: usize,
    pub incorrect: usize,
}

/// Correct/incorrect counts, overall and broken down by true class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ClassConfusion {
    pub correct: usize,
    pub incorrect: usize,
    pub per_class: [ClassCounts; NUM_CLASSES],
}

/// `CC / (CC + IC)` over all pixels, or only those selected by `mask`.
pub fn pcc2(pred: &[u8], truth: &[u8], mask: Option<&[bool]>) -> Result<(f64, ClassConfusion)> {
    check_dim("class map length", truth.len(), pred.len())?;
    if let Some(m) = mask {
        check_dim("mask length", truth.len(), m.len())?;
    }
    let mut conf = ClassConfusion::default();
    for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let counts = conf.per_class.get_mut(usize::from(t)).ok_or(Error::Class {
            index: usize::from(t),
            num_classes: NUM_CLASSES,
        })?;
        if p == t {
            conf.correct += 1;
            counts.correct += 1;
        } else {
            conf.incorrect += 1;
            counts.incorrect += 1;
        }
    }
    let total = conf.correct + conf.incorrect;
    if total == 0 {
        return Err(Error::UndefinedMetric("PCC2 over an empty pixel set".into()));
    }
    Ok((conf.correct as f64 / total as f64, conf))
}
