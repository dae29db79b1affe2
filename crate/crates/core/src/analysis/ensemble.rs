use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Allowed deviation of a probability row sum from 1.
pub const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct EnsemblePrediction {
    /// Mean class probabilities, `N×K`.
    pub proba: Tensor,
    pub predicted: Vec<usize>,
}

impl EnsemblePrediction {
    pub fn error_pct(&self, labels: &[usize]) -> Result<f64> {
        if labels.len() != self.predicted.len() || labels.is_empty() {
            return Err(Error::dim("ensemble labels", &[labels.len()], &[self.predicted.len()]));
        }
        let wrong = self.predicted.iter().zip(labels).filter(|(p, l)| p != l).count();
        Ok(100.0 * wrong as f64 / labels.len() as f64)
    }
}

fn check_rows(p: &Tensor, which: usize) -> Result<usize> {
    let [_, k] = p.dims2("ensemble member probabilities")?;
    for (i, row) in p.data().chunks_exact(k).enumerate() {
        let s: f64 = row.iter().sum();
        if !((s - 1.0).abs() <= ROW_SUM_TOL) || row.iter().any(|&v| v < 0.0) {
            return Err(Error::Config(format!(
                "member {which} row {i} is not a probability vector (sums to {s})"
            )));
        }
    }
    Ok(k)
}

/// Element-wise mean of member probability matrices.
pub fn ensemble_average(members: &[Tensor]) -> Result<Tensor> {
    let first = members
        .first()
        .ok_or_else(|| Error::Config("ensemble needs at least one member".into()))?;
    let mut acc = Tensor::zeros(first.shape());
    for (i, p) in members.iter().enumerate() {
        check_rows(p, i)?;
        acc.add_assign(p)?;
    }
    Ok(acc.scale(1.0 / members.len() as f64))
}

pub fn ensemble_predict(members: &[Tensor]) -> Result<EnsemblePrediction> {
    let proba = ensemble_average(members)?;
    let predicted = proba.argmax_rows();
    Ok(EnsemblePrediction { proba, predicted })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_member_is_identity() {
        let p = Tensor::new(vec![2, 2], vec![0.2, 0.8, 0.6, 0.4]).unwrap();
        let e = ensemble_predict(std::slice::from_ref(&p)).unwrap();
        assert_eq!(e.proba, p);
        assert_eq!(e.predicted, vec![1, 0]);
    }

    #[test]
    fn mean_of_two() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let b = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        let e = ensemble_average(&[a, b]).unwrap();
        assert_eq!(e.data(), &[0.5, 0.5]);
    }

    #[test]
    fn rejects_non_probabilities() {
        let bad = Tensor::new(vec![1, 2], vec![0.7, 0.7]).unwrap();
        assert!(ensemble_average(&[bad]).is_err());
        let a = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        let b = Tensor::new(vec![1, 3], vec![0.2, 0.3, 0.5]).unwrap();
        assert!(ensemble_average(&[a, b]).is_err());
        assert!(ensemble_average(&[]).is_err());
    }
}
