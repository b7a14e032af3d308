use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{usage, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Euclidean,
    Cosine,
}

/// Euclidean distance or cosine similarity between two vectors.
pub fn pairwise_metric(a: &[f64], b: &[f64], kind: MetricKind) -> Result<f64> {
    if a.len() != b.len() {
        return usage(format!("dimension mismatch: {} vs {}", a.len(), b.len()));
    }
    match kind {
        MetricKind::Euclidean => Ok(euclidean(a, b)),
        MetricKind::Cosine => {
            let (na, nb) = (super::norm(a), super::norm(b));
            if na == 0.0 || nb == 0.0 {
                return usage("cosine similarity is undefined for a zero vector");
            }
            Ok((super::dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
        }
    }
}

/// Euclidean distance without shape checking, for hot loops over validated keys.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// One step of gradient descent with L2 weight decay:
/// `θ' = θ − lr·(g + weight_decay·θ)`.
pub fn sgd_step(params: &Matrix, grads: &Matrix, lr: f64, weight_decay: f64) -> Result<Matrix> {
    if params.shape() != grads.shape() {
        return usage(format!(
            "parameter shape {:?} does not match gradient shape {:?}",
            params.shape(),
            grads.shape()
        ));
    }
    if lr.is_nan() || lr < 0.0 {
        return usage(format!("learning rate must be non-negative, got {lr}"));
    }
    if weight_decay.is_nan() || weight_decay < 0.0 {
        return usage(format!("weight decay must be non-negative, got {weight_decay}"));
    }
    let mut out = params.clone();
    for (t, g) in out.data_mut().iter_mut().zip(grads.data()) {
        *t -= lr * (g + weight_decay * *t);
    }
    Ok(out)
}

/// Clamps every entry of `delta` to `[-bound, bound]`.
pub fn linf_project(delta: &Matrix, bound: f64) -> Result<Matrix> {
    if bound.is_nan() || bound <= 0.0 {
        return usage(format!("projection bound must be positive, got {bound}"));
    }
    let mut out = delta.clone();
    out.data_mut().iter_mut().for_each(|x| *x = x.clamp(-bound, bound));
    Ok(out)
}

/// Adam with decoupled weight decay, kept per parameter tensor.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, step: 0, moments: Vec::new() }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    /// Advances the step counter; call once before updating every tensor of a step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates the `slot`-th parameter slice in place.
    pub fn update(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert!(self.step > 0, "begin_step must be called before update");
        while self.moments.len() <= slot {
            self.moments.push((Vec::new(), Vec::new()));
        }
        let (m, v) = &mut self.moments[slot];
        if m.is_empty() {
            m.resize(params.len(), 0.0);
            v.resize(params.len(), 0.0);
        }
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            params[i] -= self.lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(v: &[f64]) -> Matrix {
        Matrix::row_vector(v)
    }

    #[test]
    fn euclidean_pythagorean() {
        assert_eq!(pairwise_metric(&[3.0, 4.0], &[0.0, 0.0], MetricKind::Euclidean).unwrap(), 5.0);
    }

    #[test]
    fn cosine_self_similarity() {
        let x = [0.3, -1.2, 4.0];
        let c = pairwise_metric(&x, &x, MetricKind::Cosine).unwrap();
        assert!((c - 1.0).abs() < 1e-15);
    }

    #[test]
    fn metric_errors() {
        assert!(pairwise_metric(&[1.0], &[1.0, 2.0], MetricKind::Euclidean).is_err());
        assert!(pairwise_metric(&[0.0, 0.0], &[1.0, 2.0], MetricKind::Cosine).is_err());
    }

    #[test]
    fn euclidean_matches_elementwise_summation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut acc = 0.0;
        for i in 0..8 {
            let d = a[i] - b[i];
            acc += d * d;
        }
        let got = pairwise_metric(&a, &b, MetricKind::Euclidean).unwrap();
        assert!((got - acc.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn sgd_examples() {
        let out = sgd_step(&m(&[1.0]), &m(&[2.0]), 0.1, 0.0).unwrap();
        assert!((out.data()[0] - 0.8).abs() < 1e-15);
        let out = sgd_step(&m(&[1.5, -2.0]), &m(&[0.0, 0.0]), 0.1, 0.0).unwrap();
        assert_eq!(out.data(), &[1.5, -2.0]);
        // 1 - 0.1 * (2 + 0.1 * 1) = 0.79
        let out = sgd_step(&m(&[1.0]), &m(&[2.0]), 0.1, 0.1).unwrap();
        assert!((out.data()[0] - 0.79).abs() < 1e-15);
        assert!(sgd_step(&m(&[1.0]), &m(&[1.0, 2.0]), 0.1, 0.0).is_err());
    }

    #[test]
    fn linf_examples() {
        let out = linf_project(&m(&[0.2, -3e-5]), 1e-4).unwrap();
        assert_eq!(out.data(), &[1e-4, -3e-5]);
        let z = Matrix::zeros(3, 3);
        assert_eq!(linf_project(&z, 1e-4).unwrap(), z);
        assert!(linf_project(&z, 0.0).is_err());
    }

    #[test]
    fn linf_random_matrix_bounded() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Matrix::from_fn(16, 9, |_, _| rng.gen_range(-1.0..1.0));
        let p = linf_project(&x, 0.05).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..16 {
            for j in 0..9 {
                worst = worst.max(p[(i, j)].abs());
            }
        }
        assert!(worst <= 0.05);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut opt = Adam::new(0.1);
        let mut x = vec![3.0, -2.0];
        for _ in 0..300 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
            opt.begin_step();
            opt.update(0, &mut x, &g);
        }
        assert!(x.iter().all(|v| v.abs() < 1e-2), "{x:?}");
    }

    proptest! {
        #[test]
        fn linf_is_idempotent(v in prop::collection::vec(-10.0f64..10.0, 1..40), b in 1e-6f64..5.0) {
            let x = m(&v);
            let once = linf_project(&x, b).unwrap();
            let twice = linf_project(&once, b).unwrap();
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn euclidean_symmetric_and_triangle(
            a in prop::collection::vec(-5.0f64..5.0, 6),
            b in prop::collection::vec(-5.0f64..5.0, 6),
            c in prop::collection::vec(-5.0f64..5.0, 6),
        ) {
            let e = |x: &[f64], y: &[f64]| pairwise_metric(x, y, MetricKind::Euclidean).unwrap();
            prop_assert_eq!(e(&a, &b), e(&b, &a));
            prop_assert!(e(&a, &c) <= e(&a, &b) + e(&b, &c) + 1e-12);
        }

        #[test]
        fn sgd_zero_lr_is_identity(v in prop::collection::vec(-5.0f64..5.0, 1..20), wd in 0.0f64..1.0) {
            let p = m(&v);
            let g = Matrix::filled(1, v.len(), 3.0);
            prop_assert_eq!(sgd_step(&p, &g, 0.0, wd).unwrap(), p);
        }
    }
}
