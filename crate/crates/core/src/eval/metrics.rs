use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::shape(
            "metric",
            format!("{} scores vs {} labels", scores.len(), labels.len()),
        ));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    Ok(())
}

/// Indices sorted by descending score; ties keep input order.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half (Mann–Whitney U over average ranks).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Invalid("auroc needs both positives and negatives".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * idx[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Average precision: `Σ_k (R_k − R_{k−1}) · P_k` over a descending-score
/// sweep in which a block of tied scores is one threshold.
pub fn aupr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::Invalid("aupr needs at least one positive".into()));
    }
    let idx = descending(scores);
    let (mut tp, mut seen, mut ap, mut last_recall) = (0usize, 0usize, 0.0, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        tp += idx[i..=j].iter().filter(|&&k| labels[k]).count();
        seen += j - i + 1;
        let recall = tp as f64 / pos as f64;
        ap += (recall - last_recall) * tp as f64 / seen as f64;
        last_recall = recall;
        i = j + 1;
    }
    Ok(ap)
}

/// One-vs-rest metric per class on the columns of `probs` `[N, K]`,
/// macro-averaged over classes where it is defined. `None` if it is defined
/// for no class.
fn macro_average(
    probs: &Tensor,
    labels: &[usize],
    metric: fn(&[f64], &[bool]) -> Result<f64>,
    defined: impl Fn(usize, usize) -> bool,
) -> Result<Option<f64>> {
    if probs.ndim() != 2 || probs.shape()[0] != labels.len() {
        return Err(Error::shape(
            "macro_metric",
            format!("probs {:?} vs {} labels", probs.shape(), labels.len()),
        ));
    }
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    let mut total = 0.0;
    let mut classes = 0;
    for c in 0..k {
        let truth: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let pos = truth.iter().filter(|&&t| t).count();
        if !defined(pos, n - pos) {
            continue;
        }
        let scores: Vec<f64> = (0..n).map(|i| probs.data()[i * k + c]).collect();
        total += metric(&scores, &truth)?;
        classes += 1;
    }
    Ok((classes > 0).then(|| total / classes as f64))
}

/// Macro one-vs-rest AUROC; classes lacking positives or negatives are skipped.
pub fn macro_auroc(probs: &Tensor, labels: &[usize]) -> Result<Option<f64>> {
    macro_average(probs, labels, auroc, |p, n| p > 0 && n > 0)
}

/// Macro one-vs-rest average precision; classes without positives are skipped.
pub fn macro_aupr(probs: &Tensor, labels: &[usize]) -> Result<Option<f64>> {
    macro_average(probs, labels, aupr, |p, _| p > 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn auroc_examples() {
        let s = [0.9, 0.8, 0.3, 0.1];
        assert_eq!(auroc(&s, &b(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auroc(&s, &b(&[0, 0, 1, 1])).unwrap(), 0.0);
        assert_eq!(auroc(&[0.9, 0.5, 0.5, 0.1], &b(&[1, 0, 1, 0])).unwrap(), 0.875);
        assert!(auroc(&s, &b(&[1, 1, 1, 1])).is_err());
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&[0.9, 0.8, 0.3, 0.1], &b(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert!((aupr(&[0.9, 0.8, 0.3], &b(&[1, 0, 1])).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((aupr(&[0.4; 5], &b(&[1, 0, 0, 1, 0])).unwrap() - 0.4).abs() < 1e-15);
        assert!(aupr(&[0.1, 0.2], &b(&[0, 0])).is_err());
    }

    #[test]
    fn macro_skips_absent_classes() {
        let probs = Tensor::new(vec![3, 3], vec![0.8, 0.1, 0.1, 0.2, 0.7, 0.1, 0.6, 0.3, 0.1]).unwrap();
        let labels = [0, 1, 0];
        // Class 2 has no positives and is skipped; classes 0 and 1 rank perfectly.
        assert_eq!(macro_auroc(&probs, &labels).unwrap(), Some(1.0));
        assert_eq!(macro_aupr(&probs, &labels).unwrap(), Some(1.0));
        assert_eq!(macro_auroc(&probs.slice_outer(0, 1), &labels[..1]).unwrap(), None);
    }
}
