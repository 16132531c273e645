use super::ForwardResult;
use crate::error::{Error, Result};

/// `ln softmax(logits)[target]`, computed in `f64`.
pub fn log_softmax_at(logits: &[f32], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let log_total = logits
        .iter()
        .map(|&z| (z as f64 - max).exp())
        .sum::<f64>()
        .ln();
    logits[target] as f64 - max - log_total
}

fn check_len(result: &ForwardResult, tokens: &[u32]) -> Result<()> {
    if result.seq_len != tokens.len() {
        return Err(Error::LengthMismatch {
            expected: result.seq_len,
            got: tokens.len(),
        });
    }
    Ok(())
}

/// Negative log-likelihood of every token after the first. Element `k` is
/// position `k + 1`; position 0 has no prediction.
pub fn sequence_nll(result: &ForwardResult, tokens: &[u32]) -> Result<Vec<f64>> {
    check_len(result, tokens)?;
    Ok((1..tokens.len())
        .map(|i| -log_softmax_at(result.logits_row(i - 1), tokens[i] as usize))
        .collect())
}

/// `exp(mean(nlls))`.
pub fn perplexity(nlls: &[f64]) -> Result<f64> {
    if nlls.is_empty() {
        return Err(Error::Empty("nll sequence"));
    }
    if nlls.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("nll sequence".into()));
    }
    Ok((nlls.iter().sum::<f64>() / nlls.len() as f64).exp())
}

/// Top-1 correctness for every position after the first (element `k` is
/// position `k + 1`). Ties resolve to the lowest token id.
pub fn top1_flags(result: &ForwardResult, tokens: &[u32]) -> Result<Vec<bool>> {
    check_len(result, tokens)?;
    Ok((1..tokens.len())
        .map(|i| argmax(result.logits_row(i - 1)) == tokens[i] as usize)
        .collect())
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (idx, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = idx;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result_from_logits(rows: Vec<Vec<f32>>, tokens: &[u32]) -> ForwardResult {
        let vocab_size = rows[0].len();
        let logits: Vec<f32> = rows.concat();
        let target_log_probs = (1..tokens.len())
            .map(|i| {
                log_softmax_at(
                    &logits[(i - 1) * vocab_size..i * vocab_size],
                    tokens[i] as usize,
                )
            })
            .collect();
        ForwardResult {
            seq_len: tokens.len(),
            vocab_size,
            logits,
            target_log_probs,
            trace: None,
        }
    }

    #[test]
    fn uniform_logits_give_ln_vocab() {
        let tokens = [1, 2, 3, 1];
        let r = result_from_logits(vec![vec![0.5; 4]; 4], &tokens);
        let nll = sequence_nll(&r, &tokens).unwrap();
        assert_eq!(nll.len(), 3);
        for v in nll {
            assert!((v - 4f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn certain_prediction_has_zero_nll() {
        let tokens = [0, 2];
        let r = result_from_logits(vec![vec![-1e4, -1e4, 0.0], vec![0.0; 3]], &tokens);
        assert_eq!(sequence_nll(&r, &tokens).unwrap(), vec![0.0]);
        assert_eq!(r.probability_at(1), Some(1.0));
        assert_eq!(r.probability_at(0), None);
        assert_eq!(top1_flags(&r, &tokens).unwrap(), vec![true]);
    }

    #[test]
    fn perplexity_examples() {
        let l4 = 4f64.ln();
        assert!((perplexity(&[l4, l4]).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(perplexity(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(perplexity(&[]), Err(Error::Empty(_))));
        assert!(perplexity(&[f64::NAN]).is_err());
    }

    #[test]
    fn uniform_ties_pick_lowest_id() {
        let tokens = [3, 1, 2, 3];
        let r = result_from_logits(vec![vec![0.0; 4]; 4], &tokens);
        assert_eq!(top1_flags(&r, &tokens).unwrap(), vec![false, false, false]);
        let tokens = [3, 0, 0];
        let r = result_from_logits(vec![vec![0.0; 4]; 3], &tokens);
        assert_eq!(top1_flags(&r, &tokens).unwrap(), vec![true, true]);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let tokens = [1, 2];
        let r = result_from_logits(vec![vec![0.0; 3]; 2], &tokens);
        assert!(matches!(
            sequence_nll(&r, &[1, 2, 0]),
            Err(Error::LengthMismatch {
                expected: 2,
                got: 3
            })
        ));
        assert!(top1_flags(&r, &[1]).is_err());
    }
}
