//! L2-regularized logistic regression fitted by full-batch gradient descent
//! from a zero initialization.

#[derive(Debug, Clone)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    /// `x` is row-major with `width` columns; `y` holds 0/1 targets.
    pub fn fit(x: &[f64], y: &[f64], width: usize, l2: f64, lr: f64, iters: usize) -> Self {
        let n = y.len();
        // one-hot blocks are mostly zero; keep only the non-zero entries
        let mut starts = Vec::with_capacity(n + 1);
        let mut cols: Vec<u32> = Vec::new();
        let mut vals: Vec<f64> = Vec::new();
        starts.push(0);
        for row in x.chunks_exact(width.max(1)).take(n) {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    cols.push(j as u32);
                    vals.push(v);
                }
            }
            starts.push(cols.len());
        }
        let mut w = vec![0.0; width];
        let mut b = 0.0;
        let mut grad = vec![0.0; width];
        let inv_n = 1.0 / n.max(1) as f64;
        for _ in 0..iters {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for (i, &target) in y.iter().enumerate() {
                let (c, v) = (&cols[starts[i]..starts[i + 1]], &vals[starts[i]..starts[i + 1]]);
                let z = b + c.iter().zip(v).map(|(&j, &a)| a * w[j as usize]).sum::<f64>();
                let r = sigmoid(z) - target;
                grad_b += r;
                for (&j, &a) in c.iter().zip(v) {
                    grad[j as usize] += r * a;
                }
            }
            for (wi, g) in w.iter_mut().zip(&grad) {
                *wi -= lr * (g * inv_n + l2 * *wi);
            }
            b -= lr * grad_b * inv_n;
        }
        Self { weights: w, bias: b }
    }

    #[inline]
    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(self.bias + row.iter().zip(&self.weights).map(|(a, c)| a * c).sum::<f64>())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_points_are_ranked_perfectly() {
        let x = vec![-2.0, -1.0, -1.5, -0.5, 1.0, 0.7, 2.0, 1.2];
        let y = vec![0.0, 0.0, 1.0, 1.0];
        let m = LogisticModel::fit(&x, &y, 2, 1e-4, 0.1, 500);
        let s: Vec<f64> = x.chunks(2).map(|r| m.predict(r)).collect();
        assert!(s[0] < 0.5 && s[1] < 0.5 && s[2] > 0.5 && s[3] > 0.5);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert_eq!(sigmoid(0.0), 0.5);
    }
}
