use super::{MetricError, MetricId, MetricScore, NGramCounts};
use crate::scalar::Real;
use crate::vocab::TokenId;

/// Sentence-level BLEU with uniform weights `1/max_n` and a brevity penalty.
///
/// Unigram precision is never smoothed, so a candidate sharing no token with
/// the reference scores exactly 0. For orders above one, a precision with a
/// zero clipped match count becomes `(0 + 1) / (total + 1)`.
pub fn bleu<F: Real>(
    candidate: &[TokenId],
    reference: &[TokenId],
    max_n: usize,
) -> Result<MetricScore<F>, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    if max_n == 0 {
        return Err(MetricError::BadOrder(max_n));
    }
    let zero = MetricScore {
        value: F::zero(),
        metric: MetricId::Bleu,
    };
    if candidate.is_empty() {
        return Ok(zero);
    }

    let mut log_sum = F::zero();
    for n in 1..=max_n {
        let cand = NGramCounts::new(candidate, n);
        let refr = NGramCounts::new(reference, n);
        let matches = cand.overlap(&refr);
        let total = cand.total();
        let p = if matches > 0 {
            F::count(matches) / F::count(total)
        } else if n == 1 {
            return Ok(zero);
        } else {
            F::one() / F::count(total + 1)
        };
        log_sum += p.ln();
    }
    let geo = (log_sum / F::count(max_n)).exp();

    let c = F::count(candidate.len());
    let r = F::count(reference.len());
    let bp = if c > r {
        F::one()
    } else {
        (F::one() - r / c).exp()
    };
    let value = (bp * geo).min(F::one()).max(F::zero());
    Ok(MetricScore {
        value,
        metric: MetricId::Bleu,
    })
}
