use crate::error::{BenchError, Result};

/// Sample mean and standard error (`n - 1` denominator). A single value has
/// standard error zero by convention.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(BenchError::InvalidSpec("cannot aggregate an empty set".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        assert_eq!(aggregate(&[2.0, 4.0]).unwrap(), (3.0, 1.0));
        assert_eq!(aggregate(&[5.0]).unwrap(), (5.0, 0.0));
        let (m, se) = aggregate(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((se - 0.577_350_269_189_625_8).abs() < 1e-12);
        assert!(aggregate(&[]).is_err());
    }

    proptest! {
        #[test]
        fn matches_two_pass_textbook(values in prop::collection::vec(-1e3f64..1e3, 2..50)) {
            let n = values.len() as f64;
            let mut sum = 0.0;
            for v in &values { sum += v; }
            let mean = sum / n;
            let mut ss = 0.0;
            for v in &values { ss += (v - mean) * (v - mean); }
            let se = (ss / (n - 1.0)).sqrt() / n.sqrt();
            let (m, s) = aggregate(&values).unwrap();
            prop_assert!((m - mean).abs() < 1e-12 * (1.0 + mean.abs()));
            prop_assert!((s - se).abs() < 1e-12 * (1.0 + se));
        }
    }
}
