use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::search::CovarianceTemplate;

/// Per-update mean and population standard deviation of a scalar curve
/// across trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub mean: f64,
    pub std: f64,
}

/// Elementwise mean and population std over equally long curves.
pub fn aggregate_curves(curves: &[Vec<f64>]) -> Result<Vec<CurvePoint>> {
    let Some(first) = curves.first() else {
        return Err(invalid("no trials to aggregate"));
    };
    let len = first.len();
    if curves.iter().any(|c| c.len() != len) {
        return Err(invalid("trial curves have different lengths"));
    }
    let k = curves.len() as f64;
    Ok((0..len)
        .map(|u| {
            let mean = curves.iter().map(|c| c[u]).sum::<f64>() / k;
            let var = curves.iter().map(|c| (c[u] - mean).powi(2)).sum::<f64>() / k;
            CurvePoint {
                mean,
                std: var.sqrt(),
            }
        })
        .collect())
}

/// Fraction of off-diagonal absolute covariance mass that sits on the
/// template's non-zero pattern. `1.0` when there is no off-diagonal mass.
pub fn structure_score(cov: &DMatrix<f64>, template: &CovarianceTemplate) -> Result<f64> {
    let t = template.matrix();
    if cov.shape() != t.shape() {
        return Err(invalid(format!(
            "covariance is {:?}, template is {:?}",
            cov.shape(),
            t.shape()
        )));
    }
    let (mut total, mut off_template) = (0.0, 0.0);
    for r in 0..cov.nrows() {
        for c in 0..cov.ncols() {
            if r == c {
                continue;
            }
            let m = cov[(r, c)].abs();
            total += m;
            if t[(r, c)] == 0.0 {
                off_template += m;
            }
        }
    }
    if total == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - off_template / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{build_template, scale_template, GaitSpec, PARAM_DIM};

    #[test]
    fn aggregate_single_and_identical() {
        let c = vec![0.5, -1.0, 2.0];
        let a = aggregate_curves(std::slice::from_ref(&c)).unwrap();
        assert!(a.iter().zip(&c).all(|(p, v)| p.mean == *v && p.std == 0.0));
        let a = aggregate_curves(&[c.clone(), c]).unwrap();
        assert!(a.iter().all(|p| p.std == 0.0));
    }

    #[test]
    fn aggregate_zero_and_two() {
        let a = aggregate_curves(&[vec![0.0; 4], vec![2.0; 4]]).unwrap();
        assert!(a.iter().all(|p| p.mean == 1.0 && p.std == 1.0));
    }

    #[test]
    fn aggregate_errors() {
        assert!(aggregate_curves(&[]).is_err());
        assert!(aggregate_curves(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn scores() {
        let t = build_template(&GaitSpec::walk());
        let scaled = scale_template(&t, 1.3, 0.6).unwrap();
        assert_eq!(structure_score(&scaled, &t).unwrap(), 1.0);
        let ones = DMatrix::from_element(PARAM_DIM, PARAM_DIM, 1.0);
        let s = structure_score(&ones, &t).unwrap();
        assert!(s < 1.0 && s > 0.0);
        let id = DMatrix::identity(PARAM_DIM, PARAM_DIM);
        assert_eq!(structure_score(&id, &t).unwrap(), 1.0);
        assert!(structure_score(&DMatrix::identity(3, 3), &t).is_err());
    }
}
