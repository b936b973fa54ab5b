use crate::error::{GmdaError, Result};

/// Fraction of positions where `predicted` and `reference` disagree.
pub fn error_rate(predicted: &[usize], reference: &[usize]) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(GmdaError::LengthMismatch {
            left: predicted.len(),
            right: reference.len(),
        });
    }
    if predicted.is_empty() {
        return Err(GmdaError::EmptyInput);
    }
    let wrong = predicted.iter().zip(reference).filter(|(a, b)| a != b).count();
    Ok(wrong as f64 / predicted.len() as f64)
}

/// Predicts the most frequent reference label for every sample (lowest label on ties).
pub fn majority_baseline(reference: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; classes];
    for &l in reference {
        counts[l] += 1;
    }
    let best = (0..classes).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
    vec![best; reference.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_rates() {
        assert_eq!(error_rate(&[0, 1, 1], &[0, 1, 1]).unwrap(), 0.0);
        assert_eq!(error_rate(&[0, 1, 0, 1], &[1, 0, 1, 0]).unwrap(), 1.0);
        let p = [0, 0, 0, 1, 1, 1, 1, 1, 1, 1];
        let r = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1];
        assert_eq!(error_rate(&p, &r).unwrap(), 0.3);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            error_rate(&[0], &[0, 1]),
            Err(GmdaError::LengthMismatch { .. })
        ));
        assert!(error_rate(&[], &[]).is_err());
    }

    #[test]
    fn majority_error_is_one_minus_max_frequency() {
        let r = [2, 0, 2, 1, 2, 2, 0];
        let pred = majority_baseline(&r, 3);
        let e = error_rate(&pred, &r).unwrap();
        assert_eq!(e, 3.0 / 7.0);
        assert!((e - (1.0 - 4.0 / 7.0)).abs() < 1e-15);
    }
}
