//! Candidate-list length from the depth re-rankers actually reach.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("no re-ranker statistics to calibrate from")]
    Empty,
    #[error("re-ranker `{0}` has no user samples")]
    NoSamples(String),
}

/// Greatest candidate rank each user's list drew from, for one re-ranker.
/// Lists made only of random fills contribute no sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    pub reranker: String,
    pub greatest_ranks: Vec<usize>,
}

impl CalibrationStats {
    pub fn mean(&self) -> f64 {
        self.greatest_ranks.iter().map(|&r| r as f64).sum::<f64>() / self.greatest_ranks.len() as f64
    }

    /// Population standard deviation.
    pub fn std_dev(&self) -> f64 {
        let mu = self.mean();
        let var = self
            .greatest_ranks
            .iter()
            .map(|&r| (r as f64 - mu).powi(2))
            .sum::<f64>()
            / self.greatest_ranks.len() as f64;
        var.sqrt()
    }

    pub fn bound(&self) -> f64 {
        self.mean() + self.std_dev()
    }
}

/// Slack absorbing rounding error before taking the ceiling of an integral bound.
const CEIL_SLACK: f64 = 1e-9;

/// Largest mean-plus-deviation over re-rankers, rounded up.
pub fn calibrate_m(stats: &[CalibrationStats]) -> Result<usize, CalibrationError> {
    if stats.is_empty() {
        return Err(CalibrationError::Empty);
    }
    let mut best = f64::NEG_INFINITY;
    for s in stats {
        if s.greatest_ranks.is_empty() {
            return Err(CalibrationError::NoSamples(s.reranker.clone()));
        }
        best = best.max(s.bound());
    }
    Ok((best - CEIL_SLACK).ceil().max(1.0) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(name: &str, ranks: &[usize]) -> CalibrationStats {
        CalibrationStats {
            reranker: name.into(),
            greatest_ranks: ranks.to_vec(),
        }
    }

    #[test]
    fn three_sample_example() {
        let s = stats("mmr", &[10, 20, 30]);
        assert_eq!(s.mean(), 20.0);
        assert!((s.std_dev() - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(calibrate_m(&[s]), Ok(29));
    }

    #[test]
    fn constant_ranks_give_that_rank() {
        assert_eq!(calibrate_m(&[stats("x", &[17; 9])]), Ok(17));
    }

    #[test]
    fn takes_the_largest_reranker() {
        let m = calibrate_m(&[stats("a", &[5, 5]), stats("b", &[10, 20, 30])]).unwrap();
        assert_eq!(m, 29);
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert_eq!(calibrate_m(&[]), Err(CalibrationError::Empty));
        assert_eq!(
            calibrate_m(&[stats("a", &[])]),
            Err(CalibrationError::NoSamples("a".into()))
        );
    }

    #[test]
    fn a_sample_between_mean_and_m_can_lower_m() {
        let mut ranks = vec![0];
        ranks.extend([1000; 100]);
        assert_eq!(calibrate_m(&[stats("a", &ranks)]), Ok(1090));
        ranks.push(1001);
        assert_eq!(calibrate_m(&[stats("a", &ranks)]), Ok(1089));
    }

    proptest! {
        #[test]
        fn adding_a_sample_at_or_above_m_never_lowers_it(
            ranks in proptest::collection::vec(1usize..300, 1..60),
            extra in 0usize..100,
        ) {
            let m = calibrate_m(&[stats("a", &ranks)]).unwrap();
            let mut grown = ranks.clone();
            grown.push(m + extra);
            prop_assert!(calibrate_m(&[stats("a", &grown)]).unwrap() >= m);
        }

        #[test]
        fn m_covers_the_bound(ranks in proptest::collection::vec(1usize..300, 1..60)) {
            let s = stats("a", &ranks);
            let m = calibrate_m(std::slice::from_ref(&s)).unwrap() as f64;
            prop_assert!(m + 1e-9 >= s.bound() && m < s.bound() + 1.0);
        }
    }
}
