//! Order-stable reductions shared by the ensemble and statistics code.

const BLOCK: usize = 32;

/// Pairwise (cascade) summation. The result depends only on the input order,
/// never on how work was scheduled.
pub(crate) fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

pub(crate) fn pairwise_sum_by<T, F: Fn(&T) -> f64>(values: &[T], f: &F) -> f64 {
    if values.len() <= BLOCK {
        values.iter().map(f).sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum_by(&values[..mid], f) + pairwise_sum_by(&values[mid..], f)
    }
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(values) / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_integers() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
        assert_eq!(pairwise_sum_by(&v, &|x: &f64| 2.0 * x), 1_001_000.0);
        assert!(mean(&[]).is_nan());
    }
}
