use super::{AnswerSpace, Posterior};
use crate::error::BackendError;

/// Reads a posterior over answer letters from candidate-token log-probabilities.
///
/// Tokens are matched case-sensitively after trimming whitespace; `" B"` counts
/// for `B` but `"(B"` and `"b"` do not. Tokens that map to the same label have
/// their probabilities summed. Labels with no matching token get zero mass.
pub fn letter_posterior_from_logprobs<S: AsRef<str>>(
    token_logprobs: &[(S, f64)],
    answer_space: &AnswerSpace,
) -> Result<Posterior, BackendError> {
    let mut matched: Vec<(usize, f64)> = Vec::new();
    for (token, logprob) in token_logprobs {
        if let Some(i) = answer_space.index_of(token.as_ref().trim()) {
            if logprob.is_nan() || *logprob == f64::INFINITY {
                return Err(BackendError::Protocol(format!(
                    "invalid log-probability {logprob} for token {:?}",
                    token.as_ref()
                )));
            }
            matched.push((i, *logprob));
        }
    }
    let peak = matched
        .iter()
        .map(|&(_, lp)| lp)
        .fold(f64::NEG_INFINITY, f64::max);
    if matched.is_empty() || peak == f64::NEG_INFINITY {
        return Err(BackendError::Unscorable {
            tokens: token_logprobs
                .iter()
                .map(|(t, _)| t.as_ref().to_string())
                .collect(),
        });
    }
    let mut mass = vec![0.0; answer_space.len()];
    for (i, lp) in matched {
        mass[i] += (lp - peak).exp();
    }
    let total: f64 = mass.iter().sum();
    Posterior::new(mass.into_iter().map(|m| m / total).collect())
}
