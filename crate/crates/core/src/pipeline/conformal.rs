//! Split conformal regression around a ridge least-squares point model.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct ConformalModel {
    /// Intercept first, then one coefficient per feature.
    pub coefficients: Vec<f64>,
    pub alpha: f64,
    /// Half-width of every interval; infinite when the calibration set is
    /// too small for the requested coverage.
    pub quantile: f64,
    pub calibration_size: usize,
}

/// Ridge regression with an intercept via the normal equations.
pub fn ridge_fit(x: &[f64], y: &[f64], width: usize, ridge: f64) -> Vec<f64> {
    let n = y.len();
    let p = width + 1;
    let mut design = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for j in 0..width {
            design[(i, j + 1)] = x[i * width + j];
        }
    }
    let target = DVector::from_column_slice(y);
    let mut gram = design.transpose() * &design;
    for j in 0..p {
        gram[(j, j)] += ridge;
    }
    let rhs = design.transpose() * target;
    let beta = gram
        .clone()
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| gram.lu().solve(&rhs))
        .unwrap_or_else(|| DVector::zeros(p));
    beta.iter().copied().collect()
}

/// The `ceil((n + 1)(1 - alpha))`-th smallest residual, or infinity when
/// that rank exceeds `n`.
pub fn conformal_quantile(residuals: &[f64], alpha: f64) -> f64 {
    let n = residuals.len();
    let rank = ((n as f64 + 1.0) * (1.0 - alpha)).ceil() as usize;
    if rank == 0 {
        return 0.0;
    }
    if rank > n {
        return f64::INFINITY;
    }
    let mut sorted = residuals.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[rank - 1]
}

impl ConformalModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.coefficients[0]
            + row
                .iter()
                .zip(&self.coefficients[1..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub fn interval(&self, row: &[f64]) -> (f64, f64) {
        let y = self.predict(row);
        (y - self.quantile, y + self.quantile)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_rank() {
        assert_eq!(conformal_quantile(&[4.0, 2.0, 1.0, 3.0], 0.2), 4.0);
        assert_eq!(conformal_quantile(&[0.0; 10], 0.1), 0.0);
        assert_eq!(conformal_quantile(&[1.0, 2.0], 0.05), f64::INFINITY);
    }

    #[test]
    fn ridge_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 + 2.0 * v).collect();
        let b = ridge_fit(&x, &y, 1, 1e-6);
        assert!((b[0] - 3.0).abs() < 1e-4 && (b[1] - 2.0).abs() < 1e-5);
    }
}
