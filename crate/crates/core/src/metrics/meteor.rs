use super::{MetricError, MetricId, MetricScore};
use crate::scalar::Real;
use crate::vocab::TokenId;

/// Exact-match METEOR parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeteorParams {
    pub alpha: f64,
    pub gamma: f64,
    pub theta: f64,
}

impl Default for MeteorParams {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            gamma: 0.5,
            theta: 3.0,
        }
    }
}

/// Greedy left-to-right exact unigram alignment.
///
/// Every candidate token with an unused matching reference position is
/// aligned, so the match count is maximal. Among the available positions the
/// one continuing the previous chunk is preferred; otherwise the position
/// opening the longest contiguous run, earliest first.
fn align(candidate: &[TokenId], reference: &[TokenId]) -> Vec<Option<usize>> {
    let mut used = vec![false; reference.len()];
    let mut out: Vec<Option<usize>> = Vec::with_capacity(candidate.len());
    for (i, &tok) in candidate.iter().enumerate() {
        let continued = i
            .checked_sub(1)
            .and_then(|p| out[p])
            .map(|j| j + 1)
            .filter(|&j| j < reference.len() && !used[j] && reference[j] == tok);
        let pick = continued.or_else(|| {
            let mut best: Option<(usize, usize)> = None;
            for j in (0..reference.len()).filter(|&j| !used[j] && reference[j] == tok) {
                let run = candidate[i..]
                    .iter()
                    .zip(&reference[j..])
                    .zip(&used[j..])
                    .take_while(|((c, r), u)| c == r && !**u)
                    .count();
                if best.is_none_or(|(_, b)| run > b) {
                    best = Some((j, run));
                }
            }
            best.map(|(j, _)| j)
        });
        if let Some(j) = pick {
            used[j] = true;
        }
        out.push(pick);
    }
    out
}

fn count_chunks(alignment: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<usize> = None;
    for a in alignment {
        match (*a, prev) {
            (Some(j), Some(p)) if j == p + 1 => {}
            (Some(_), _) => chunks += 1,
            (None, _) => {}
        }
        prev = *a;
    }
    chunks
}

/// METEOR restricted to the exact-match stage (no stemming or synonyms).
pub fn meteor_lite<F: Real>(
    candidate: &[TokenId],
    reference: &[TokenId],
    params: &MeteorParams,
) -> Result<MetricScore<F>, MetricError> {
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let zero = MetricScore {
        value: F::zero(),
        metric: MetricId::Meteor,
    };
    let alignment = align(candidate, reference);
    let m = alignment.iter().flatten().count();
    if m == 0 {
        return Ok(zero);
    }
    let chunks = count_chunks(&alignment);
    let mf = F::count(m);
    let p = mf / F::count(candidate.len());
    let r = mf / F::count(reference.len());
    let alpha = F::lit(params.alpha);
    let f_mean = p * r / (alpha * p + (F::one() - alpha) * r);
    let frag = F::count(chunks) / mf;
    let penalty = F::lit(params.gamma) * frag.powf(F::lit(params.theta));
    Ok(MetricScore {
        value: (f_mean * (F::one() - penalty)).max(F::zero()).min(F::one()),
        metric: MetricId::Meteor,
    })
}
