use crate::error::{CobraError, Result};
use crate::numerics::Rng;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub fn mean_cosine(pred: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter()
        .zip(target)
        .map(|(p, t)| cosine(p, t))
        .sum::<f64>()
        / pred.len() as f64
}

/// Per-sample outcome of n-way identification: sample `i` is a hit when its
/// own target has a strictly higher cosine than each of `n_way - 1` distinct
/// distractor targets drawn from the rest of the batch. Ties are misses.
pub fn retrieval_hits(
    pred: &[Vec<f64>],
    target: &[Vec<f64>],
    n_way: usize,
    rng: &mut Rng,
) -> Result<Vec<bool>> {
    if n_way < 2 {
        return Err(CobraError::Parameter(format!(
            "n_way must be at least 2, got {n_way}"
        )));
    }
    if pred.len() != target.len() {
        return Err(CobraError::dim(
            "retrieval",
            format!("{} predictions for {} targets", pred.len(), target.len()),
        ));
    }
    let n = pred.len();
    if n < n_way {
        return Err(CobraError::Parameter(format!(
            "{n}-sample batch is smaller than n_way {n_way}"
        )));
    }
    Ok((0..n)
        .map(|i| {
            let own = cosine(&pred[i], &target[i]);
            rng.sample_indices(n - 1, n_way - 1)
                .into_iter()
                .map(|j| if j >= i { j + 1 } else { j })
                .all(|j| own > cosine(&pred[i], &target[j]))
        })
        .collect())
}

pub fn retrieval_accuracy(
    pred: &[Vec<f64>],
    target: &[Vec<f64>],
    n_way: usize,
    seed: u64,
) -> Result<f64> {
    let hits = retrieval_hits(pred, target, n_way, &mut Rng::new(seed))?;
    Ok(fraction(&hits))
}

pub fn fraction(hits: &[bool]) -> f64 {
    if hits.is_empty() {
        return 0.0;
    }
    hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64
}

/// Counts for micro-averaged F1; a prediction is positive when `p > 0.5`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct F1Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl F1Counts {
    pub fn add(&mut self, probs: &[f64], labels: &[u8]) {
        for (&p, &y) in probs.iter().zip(labels) {
            match (p > 0.5, y == 1) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => {}
            }
        }
    }

    /// `2tp / (2tp + fp + fn)`; 1 when there is nothing to find and nothing
    /// was predicted.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

pub fn micro_f1(probs: &[Vec<f64>], labels: &[Vec<u8>]) -> f64 {
    let mut c = F1Counts::default();
    for (p, y) in probs.iter().zip(labels) {
        c.add(p, y);
    }
    c.f1()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Standard deviation of a binomial proportion with success rate `p` over
/// `n` trials.
pub fn binomial_sigma(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}
