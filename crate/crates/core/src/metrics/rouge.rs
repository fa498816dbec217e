use super::{f1, MetricError, MetricId, MetricScore, NGramCounts};
use crate::scalar::Real;
use crate::vocab::TokenId;

/// ROUGE-n F1 over clipped n-gram overlap, `n` in {1, 2}.
pub fn rouge_n<F: Real>(
    candidate: &[TokenId],
    reference: &[TokenId],
    n: usize,
) -> Result<MetricScore<F>, MetricError> {
    let metric = match n {
        1 => MetricId::Rouge1,
        2 => MetricId::Rouge2,
        _ => return Err(MetricError::BadOrder(n)),
    };
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let cand = NGramCounts::new(candidate, n);
    let refr = NGramCounts::new(reference, n);
    let overlap = F::count(cand.overlap(&refr));
    let ratio = |total: usize| {
        if total == 0 {
            F::zero()
        } else {
            overlap / F::count(total)
        }
    };
    Ok(MetricScore {
        value: f1(ratio(cand.total()), ratio(refr.total())),
        metric,
    })
}

/// Length of the longest common subsequence, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_len(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for &x in a {
        let mut diag = 0;
        for (j, &y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 from the longest common subsequence.
pub fn rouge_l<F: Real>(
    candidate: &[TokenId],
    reference: &[TokenId],
) -> Result<MetricScore<F>, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let value = if candidate.is_empty() {
        F::zero()
    } else {
        let l = F::count(lcs_len(candidate, reference));
        f1(
            l / F::count(candidate.len()),
            l / F::count(reference.len()),
        )
    };
    Ok(MetricScore {
        value,
        metric: MetricId::RougeL,
    })
}
