//! Temperature scaling and nucleus (top-p) truncation over a next-token
//! distribution.

use std::cmp::Ordering;

/// Rescales `probs` by `1 / temperature` in log space and renormalizes.
pub fn apply_temperature(probs: &[f64], temperature: f64) -> Vec<f64> {
    if temperature == 1.0 {
        return probs.to_vec();
    }
    let logits: Vec<f64> = probs
        .iter()
        .map(|&p| {
            if p > 0.0 {
                p.ln() / temperature
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Smallest set of tokens, taken in descending probability order (ties by
/// index), whose temperature-scaled mass reaches `top_p`. Returned
/// probabilities are renormalized over the kept set.
pub fn nucleus(probs: &[f64], top_p: f64, temperature: f64) -> Vec<(usize, f64)> {
    let scaled = apply_temperature(probs, temperature);
    let mut order: Vec<usize> = (0..scaled.len()).collect();
    order.sort_by(|&a, &b| {
        scaled[b]
            .partial_cmp(&scaled[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut kept = Vec::new();
    let mut mass = 0.0;
    for idx in order {
        kept.push((idx, scaled[idx]));
        mass += scaled[idx];
        if mass >= top_p {
            break;
        }
    }
    let total: f64 = kept.iter().map(|(_, p)| p).sum();
    for (_, p) in &mut kept {
        *p /= total;
    }
    kept
}

/// Draws from a (normalized) categorical given a uniform `u` in [0, 1).
pub fn draw(kept: &[(usize, f64)], u: f64) -> usize {
    let mut acc = 0.0;
    for &(idx, p) in kept {
        acc += p;
        if u < acc {
            return idx;
        }
    }
    kept.last()
        .map(|&(idx, _)| idx)
        .expect("non-empty distribution")
}
