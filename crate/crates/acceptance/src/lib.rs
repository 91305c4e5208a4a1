//! Shared pieces of the acceptance report.

/// Result of one criterion.
#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

/// Nearest-rank percentile (`p` in `[0, 100]`); sorts `values` in place.
pub fn percentile(values: &mut [f32], p: f64) -> f32 {
    assert!(!values.is_empty(), "percentile of an empty sample");
    values.sort_by(f32::total_cmp);
    let rank = ((p / 100.0) * values.len() as f64).ceil() as usize;
    values[rank.clamp(1, values.len()) - 1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let mut v: Vec<f32> = (1..=200).rev().map(|i| i as f32).collect();
        assert_eq!(percentile(&mut v, 5.0), 10.0);
        assert_eq!(percentile(&mut v, 0.0), 1.0);
        assert_eq!(percentile(&mut v, 100.0), 200.0);
    }
}
