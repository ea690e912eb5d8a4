use alloc::vec::Vec;

use crate::{Error, Result, Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct LossOutput<T> {
    /// Mean negative log-probability of the true class.
    pub loss: T,
    pub probs: Tensor<T>,
    /// `(probs - onehot) / n`.
    pub grad: Tensor<T>,
}

/// Row-wise softmax of `n x k x 1 x 1` logits, max-subtracted.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.shape().sample_len();
    let mut probs = logits.clone();
    if k == 0 {
        return probs;
    }
    for row in probs.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(row[0], T::max);
        let mut sum = T::ZERO;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    probs
}

pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<LossOutput<T>> {
    let s = logits.shape();
    let k = s.sample_len();
    if labels.len() != s.n {
        return Err(Error::Dimension {
            axis: "labels",
            expected: s.n,
            actual: labels.len(),
        });
    }
    if s.n == 0 {
        return Err(Error::Empty("softmax_cross_entropy batch"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidLabel(bad));
    }

    let probs = softmax(logits);
    let n = T::from_usize(s.n);
    let mut total = T::ZERO;
    let mut grad = probs.clone();
    for ((row, g), &label) in logits
        .data()
        .chunks_exact(k)
        .zip(grad.data_mut().chunks_exact_mut(k))
        .zip(labels)
    {
        // log-sum-exp split as max + log1p(sum of the other terms)
        let (arg, max) = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, row[0]), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        let rest = row
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != arg)
            .fold(T::ZERO, |a, (_, &v)| a + (v - max).exp());
        total += rest.ln_1p() - (row[label] - max);

        g[label] -= T::ONE;
        for v in g.iter_mut() {
            *v = *v / n;
        }
    }
    Ok(LossOutput {
        loss: total / n,
        probs,
        grad,
    })
}

/// Index of the larger probability per row; ties go to the lower index.
pub fn argmax_rows<T: Scalar>(probs: &Tensor<T>) -> Vec<usize> {
    let k = probs.shape().sample_len();
    probs
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, row[0]), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0
        })
        .collect()
}
