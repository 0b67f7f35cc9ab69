//! Neural network primitives: linear layers, ReLU, softmax cross-entropy,
//! Glorot initialization, and gradient-checking utilities.
//!
//! Conventions, fixed once and used everywhere:
//! - inputs are batches of row vectors (B×m), weights are m×n, biases length n;
//! - the ReLU subgradient at exactly 0 is 0;
//! - the loss is averaged over the batch, so its logit gradient carries a 1/B.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A scalar loss together with its gradient w.r.t. the logits.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad: Matrix,
}

/// Gradients of a linear layer.
#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub grad_input: Matrix,
    pub grad_weight: Matrix,
    pub grad_bias: Vec<f64>,
}

/// `input (B×m) · weight (m×n) + bias (n)`, one row per example.
pub fn linear_forward(input: &Matrix, weight: &Matrix, bias: &[f64]) -> Result<Matrix> {
    if bias.len() != weight.cols() {
        return Err(Error::Dimension(format!(
            "bias of len {} for a {}x{} weight",
            bias.len(),
            weight.rows(),
            weight.cols()
        )));
    }
    let mut out = input.matmul(weight)?;
    out.add_row_vector(bias)?;
    Ok(out)
}

/// Backward pass of [`linear_forward`] given the upstream gradient.
pub fn linear_backward(input: &Matrix, weight: &Matrix, grad_out: &Matrix) -> Result<LinearGrads> {
    if grad_out.rows() != input.rows() || grad_out.cols() != weight.cols() {
        return Err(Error::Dimension(format!(
            "grad_out {}x{} for input {}x{} and weight {}x{}",
            grad_out.rows(),
            grad_out.cols(),
            input.rows(),
            input.cols(),
            weight.rows(),
            weight.cols()
        )));
    }
    let grad_input = grad_out.matmul_bt(weight)?;
    let grad_weight = input.matmul_at(grad_out)?;
    let mut grad_bias = vec![0.0; weight.cols()];
    for r in 0..grad_out.rows() {
        for (b, &g) in grad_bias.iter_mut().zip(grad_out.row(r)) {
            *b += g;
        }
    }
    Ok(LinearGrads { grad_input, grad_weight, grad_bias })
}

pub fn relu_forward(input: &Matrix) -> Matrix {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Forward and input-gradient of ReLU in one call. The subgradient at 0 is 0.
pub fn relu_forward_backward(input: &Matrix, grad_out: &Matrix) -> Result<(Matrix, Matrix)> {
    if input.rows() != grad_out.rows() || input.cols() != grad_out.cols() {
        return Err(Error::Dimension(format!(
            "relu grad {}x{} for input {}x{}",
            grad_out.rows(),
            grad_out.cols(),
            input.rows(),
            input.cols()
        )));
    }
    let output = relu_forward(input);
    let mut grad_input = grad_out.clone();
    for (g, &x) in grad_input.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok((output, grad_input))
}

/// Gradient of ReLU given its *output* (valid because output > 0 ⇔ input > 0).
pub fn relu_backward_from_output(output: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    if output.rows() != grad_out.rows() || output.cols() != grad_out.cols() {
        return Err(Error::Dimension("relu backward shape mismatch".into()));
    }
    let mut grad_input = grad_out.clone();
    for (g, &y) in grad_input.data_mut().iter_mut().zip(output.data()) {
        if y <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(grad_input)
}

/// Mean softmax cross-entropy over the batch, with the logit gradient.
///
/// Numerically stabilized by subtracting the per-row max before
/// exponentiation; the value is invariant to a constant shift of a row.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<LossValue> {
    let (b, k) = (logits.rows(), logits.cols());
    if labels.len() != b {
        return Err(Error::Dimension(format!("{} labels for {} logit rows", labels.len(), b)));
    }
    if b == 0 {
        return Err(Error::Invalid("empty batch".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::Invalid(format!("label {bad} out of range for {k} classes")));
    }
    let mut grad = Matrix::zeros(b, k);
    let mut total = 0.0;
    for r in 0..b {
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut sum = 0.0;
        for &v in row {
            sum += (v - max).exp();
        }
        let log_sum = sum.ln();
        total += log_sum - (row[labels[r]] - max);
        let g_row = grad.row_mut(r);
        for (c, &v) in row.iter().enumerate() {
            let p = (v - max).exp() / sum;
            g_row[c] = (p - if c == labels[r] { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok(LossValue { value: total / b as f64, grad })
}

/// Argmax per row; ties resolve to the lowest index.
pub fn predictions(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let preds = predictions(logits);
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    correct as f64 / labels.len() as f64
}

/// Glorot-uniform weight init: U(−a, a) with a = √(6/(fan_in+fan_out)).
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.gen_range(-a..a))
}

/// Gradient-checking utilities: central finite differences against analytic
/// gradients. Used by the test suite as an independent oracle.
pub mod gradcheck {
    /// Central difference of a scalar function at `x`.
    pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    /// Relative error with a unit floor, so near-zero gradients compare
    /// absolutely.
    pub fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;
    use gradcheck::{central_diff, rel_err};
    use rand::Rng;

    const H: f64 = 1e-5;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut r = rng(seed);
        Matrix::from_fn(rows, cols, |_, _| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn linear_identity_passes_through() {
        let x = random_matrix(4, 3, 1);
        let eye = Matrix::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        let y = linear_forward(&x, &eye, &[0.0; 3]).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn linear_hand_example() {
        let x = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let w = Matrix::from_rows(&[vec![2.0, 3.0], vec![4.0, 5.0]]).unwrap();
        let y = linear_forward(&x, &w, &[1.0, 1.0]).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
    }

    #[test]
    fn linear_rejects_mismatched_shapes() {
        let x = Matrix::zeros(1, 3);
        let w = Matrix::zeros(2, 2);
        assert!(matches!(linear_forward(&x, &w, &[0.0; 2]), Err(Error::Dimension(_))));
        assert!(linear_forward(&x, &Matrix::zeros(3, 2), &[0.0; 3]).is_err());
    }

    #[test]
    fn linear_backward_zero_grad_gives_zeros() {
        let x = random_matrix(3, 4, 2);
        let w = random_matrix(4, 2, 3);
        let g = linear_backward(&x, &w, &Matrix::zeros(3, 2)).unwrap();
        assert!(g.grad_input.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_weight.data().iter().all(|&v| v == 0.0));
        assert!(g.grad_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_backward_identity_weight_passes_grad_through() {
        let x = random_matrix(2, 3, 4);
        let eye = Matrix::from_fn(3, 3, |r, c| if r == c { 1.0 } else { 0.0 });
        let go = random_matrix(2, 3, 5);
        let g = linear_backward(&x, &eye, &go).unwrap();
        assert_eq!(g.grad_input, go);
    }

    // Finite-difference oracle: perturb every parameter of a linear layer and
    // compare against the analytic gradients of a quadratic readout.
    #[test]
    fn linear_backward_matches_finite_differences() {
        let (b, m, n) = (3, 4, 2);
        let x = random_matrix(b, m, 10);
        let w = random_matrix(m, n, 11);
        let bias: Vec<f64> = rng(12).sample_iter(rand::distributions::Uniform::new(-1.0, 1.0)).take(n).collect();
        // scalar readout: sum of squares of outputs
        let loss = |x: &Matrix, w: &Matrix, bias: &[f64]| -> f64 {
            let y = linear_forward(x, w, bias).unwrap();
            y.data().iter().map(|v| v * v).sum::<f64>()
        };
        let y = linear_forward(&x, &w, &bias).unwrap();
        let grad_out = Matrix::from_fn(b, n, |r, c| 2.0 * y.get(r, c));
        let g = linear_backward(&x, &w, &grad_out).unwrap();

        for r in 0..m {
            for c in 0..n {
                let fd = central_diff(
                    |v| {
                        let mut w2 = w.clone();
                        w2.set(r, c, v);
                        loss(&x, &w2, &bias)
                    },
                    w.get(r, c),
                    H,
                );
                assert!(rel_err(g.grad_weight.get(r, c), fd) < 1e-5);
            }
        }
        for r in 0..b {
            for c in 0..m {
                let fd = central_diff(
                    |v| {
                        let mut x2 = x.clone();
                        x2.set(r, c, v);
                        loss(&x2, &w, &bias)
                    },
                    x.get(r, c),
                    H,
                );
                assert!(rel_err(g.grad_input.get(r, c), fd) < 1e-5);
            }
        }
        for c in 0..n {
            let fd = central_diff(
                |v| {
                    let mut b2 = bias.clone();
                    b2[c] = v;
                    loss(&x, &w, &b2)
                },
                bias[c],
                H,
            );
            assert!(rel_err(g.grad_bias[c], fd) < 1e-5);
        }
    }

    #[test]
    fn relu_basics() {
        let x = Matrix::from_rows(&[vec![-1.0, 2.0]]).unwrap();
        let g = Matrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let (y, gi) = relu_forward_backward(&x, &g).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
        assert_eq!(gi.data(), &[0.0, 1.0]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let x = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let g = Matrix::from_rows(&[vec![5.0]]).unwrap();
        let (_, gi) = relu_forward_backward(&x, &g).unwrap();
        assert_eq!(gi.data(), &[0.0]);
    }

    #[test]
    fn relu_matches_finite_differences_away_from_kink() {
        let mut r = rng(13);
        for _ in 0..20 {
            let x = Matrix::from_fn(2, 5, |_, _| {
                // keep inputs away from the kink so the FD stencil is valid
                let v: f64 = r.gen_range(0.05..1.0);
                if r.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            });
            let go = Matrix::from_fn(2, 5, |_, _| r.gen_range(-1.0..1.0));
            let (_, gi) = relu_forward_backward(&x, &go).unwrap();
            for i in 0..x.rows() {
                for j in 0..x.cols() {
                    let fd = central_diff(
                        |v| {
                            let mut x2 = x.clone();
                            x2.set(i, j, v);
                            let y = relu_forward(&x2);
                            y.data().iter().zip(go.data()).map(|(a, b)| a * b).sum::<f64>()
                        },
                        x.get(i, j),
                        H,
                    );
                    assert!(rel_err(gi.get(i, j), fd) < 1e-5);
                }
            }
        }
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let logits = Matrix::zeros(1, 5);
        let l = softmax_cross_entropy(&logits, &[2]).unwrap();
        assert!((l.value - 5.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_confident_correct_is_small() {
        let logits = Matrix::from_rows(&[vec![10.0, 0.0]]).unwrap();
        let l = softmax_cross_entropy(&logits, &[0]).unwrap();
        let expected = (1.0 + (-10.0_f64).exp()).ln();
        assert!((l.value - expected).abs() < 1e-15);
        assert!(l.value < 5e-5);
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let logits = Matrix::zeros(2, 3);
        assert!(matches!(softmax_cross_entropy(&logits, &[0, 3]), Err(Error::Invalid(_))));
        assert!(softmax_cross_entropy(&logits, &[0]).is_err());
    }

    #[test]
    fn cross_entropy_is_shift_invariant() {
        let mut r = rng(14);
        for _ in 0..50 {
            let logits = Matrix::from_fn(3, 4, |_, _| r.gen_range(-1.0..1.0));
            let labels = [0, 3, 1];
            let shift: f64 = r.gen_range(-5.0..5.0);
            let mut shifted = logits.clone();
            for row in 0..3 {
                for v in shifted.row_mut(row) {
                    *v += shift;
                }
            }
            let a = softmax_cross_entropy(&logits, &labels).unwrap();
            let b = softmax_cross_entropy(&shifted, &labels).unwrap();
            assert!((a.value - b.value).abs() < 1e-10);
        }
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut r = rng(15);
        for trial in 0..10 {
            let (b, k) = (3, 5);
            let logits = Matrix::from_fn(b, k, |_, _| r.gen_range(-1.0..1.0));
            let labels: Vec<usize> = (0..b).map(|_| r.gen_range(0..k)).collect();
            let l = softmax_cross_entropy(&logits, &labels).unwrap();
            for i in 0..b {
                for j in 0..k {
                    let fd = central_diff(
                        |v| {
                            let mut z = logits.clone();
                            z.set(i, j, v);
                            softmax_cross_entropy(&z, &labels).unwrap().value
                        },
                        logits.get(i, j),
                        H,
                    );
                    assert!(
                        rel_err(l.grad.get(i, j), fd) < 1e-5,
                        "trial {trial}: grad[{i}][{j}]"
                    );
                }
            }
        }
    }

    #[test]
    fn predictions_break_ties_toward_lowest_index() {
        let logits = Matrix::from_rows(&[vec![1.0, 1.0, 0.0]]).unwrap();
        assert_eq!(predictions(&logits), vec![0]);
    }

    #[test]
    fn glorot_bounds_hold() {
        let mut r = rng(16);
        let w = glorot_uniform(30, 10, &mut r);
        let a = (6.0 / 40.0_f64).sqrt();
        assert!(w.data().iter().all(|&v| v > -a && v < a));
        // not degenerate
        assert!(w.data().iter().any(|&v| v.abs() > a / 2.0));
    }
}
