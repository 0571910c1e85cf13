use std::cmp::Ordering;

use crate::autodiff::log_sum_exp;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
}

/// Log-probabilities of the allowed tokens under a softmax restricted to them.
pub fn restricted_log_softmax(logits: &[f64], allowed: &[usize]) -> Vec<f64> {
    let sub: Vec<f64> = allowed.iter().map(|&a| logits[a]).collect();
    let z = log_sum_exp(&sub);
    sub.iter().map(|x| x - z).collect()
}

fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.log_prob.total_cmp(&a.log_prob).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search of `len` steps in which every step may only emit a token of
/// `allowed`. `step(prefix)` returns the next-token logits after `prefix`.
/// Results are ordered by descending log-probability, ties by token ids.
pub fn constrained_beam<F>(mut step: F, allowed: &[usize], beam: usize, len: usize) -> Result<Vec<Hypothesis>>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    let mut allowed = allowed.to_vec();
    allowed.sort_unstable();
    allowed.dedup();
    if allowed.is_empty() {
        return Err(Error::Config("constrained decoding needs a non-empty allowed set".into()));
    }
    if beam == 0 || len == 0 {
        return Err(Error::Config("beam size and length must be positive".into()));
    }
    let mut beams = vec![Hypothesis { tokens: Vec::new(), log_prob: 0.0 }];
    for _ in 0..len {
        let mut next = Vec::with_capacity(beams.len() * allowed.len());
        for h in &beams {
            let logits = step(&h.tokens)?;
            for (&tok, lp) in allowed.iter().zip(restricted_log_softmax(&logits, &allowed)) {
                let mut tokens = h.tokens.clone();
                tokens.push(tok);
                next.push(Hypothesis { tokens, log_prob: h.log_prob + lp });
            }
        }
        next.sort_by(rank);
        next.truncate(beam);
        beams = next;
    }
    Ok(beams)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_allowed_set() {
        let out = constrained_beam(|_| Ok(vec![5.0, -3.0, 9.0]), &[1], 4, 1).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tokens, vec![1]);
        assert_eq!(out[0].log_prob, 0.0);
    }

    #[test]
    fn three_way_order() {
        // B > A > C with A = 0, B = 1, C = 2
        let out = constrained_beam(|_| Ok(vec![1.0, 2.0, 0.5, 100.0]), &[2, 0, 1], 3, 1).unwrap();
        let ids: Vec<usize> = out.iter().map(|h| h.tokens[0]).collect();
        assert_eq!(ids, vec![1, 0, 2]);
        let total: f64 = out.iter().map(|h| h.log_prob.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ties_break_by_id() {
        let out = constrained_beam(|_| Ok(vec![0.0; 6]), &[4, 2, 5], 2, 1).unwrap();
        assert_eq!(out.iter().map(|h| h.tokens[0]).collect::<Vec<_>>(), vec![2, 4]);
    }

    #[test]
    fn two_step_search_matches_exhaustive_enumeration() {
        let logits = |p: &[usize]| -> Result<Vec<f64>> {
            let s = p.iter().sum::<usize>() as f64;
            Ok((0..5).map(|k| ((k as f64 + 1.0) * (s + 0.3)).sin()).collect())
        };
        let allowed = [0, 2, 3];
        let out = constrained_beam(logits, &allowed, 9, 2).unwrap();
        let mut all = Vec::new();
        for &a in &allowed {
            for &b in &allowed {
                let lp = restricted_log_softmax(&logits(&[]).unwrap(), &allowed)[allowed.iter().position(|&x| x == a).unwrap()]
                    + restricted_log_softmax(&logits(&[a]).unwrap(), &allowed)[allowed.iter().position(|&x| x == b).unwrap()];
                all.push(Hypothesis { tokens: vec![a, b], log_prob: lp });
            }
        }
        all.sort_by(rank);
        assert_eq!(out, all);
    }

    #[test]
    fn empty_allowed_set_is_an_error() {
        assert!(constrained_beam(|_| Ok(vec![0.0]), &[], 1, 1).is_err());
    }
}
