//! Small fully connected network with batch normalization, trained by Adam
//! on a two-class cross-entropy.
//!
//! Layout: `BN → Dense(16d) → ReLU → Dense(32d) → ReLU → Dense(16d) → ReLU →
//! BN → Dense(2) → softmax`, where `d` is the input dimension.

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive, NumAssign};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Floating-point types the network runs in.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + LinalgScalar + ScalarOperand + Debug + Send + Sync + Serialize + DeserializeOwned
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

fn c<F: Scalar>(v: f64) -> F {
    F::from_f64(v).expect("representable constant")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Dense<F> {
    /// `inputs × outputs`.
    pub w: Array2<F>,
    pub b: Array1<F>,
}

impl<F: Scalar> Dense<F> {
    /// Uniform weights on `±sqrt(6 / fan_in)`, zero biases.
    fn he_uniform(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        Self {
            w: Array2::from_shape_simple_fn((inputs, outputs), || c(rng.random_range(-limit..limit))),
            b: Array1::zeros(outputs),
        }
    }

    fn forward(&self, x: &ArrayView2<F>) -> Array2<F> {
        x.dot(&self.w) + &self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct BatchNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
    /// Population statistics used at inference.
    pub mean: Array1<F>,
    pub var: Array1<F>,
    pub eps: F,
}

impl<F: Scalar> BatchNorm<F> {
    fn new(width: usize, eps: F) -> Self {
        Self {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            mean: Array1::zeros(width),
            var: Array1::ones(width),
            eps,
        }
    }

    fn infer(&self, x: &ArrayView2<F>) -> Array2<F> {
        let scale = Zip::from(&self.gamma)
            .and(&self.var)
            .map_collect(|&g, &v| g / (v + self.eps).sqrt());
        let shift = Zip::from(&self.beta)
            .and(&self.mean)
            .and(&scale)
            .map_collect(|&b, &m, &s| b - m * s);
        x * &scale + &shift
    }

    /// Normalizes with the batch statistics; returns the output, the
    /// normalized input, the reciprocal standard deviation and the batch
    /// mean and variance.
    fn train_forward(&self, x: &ArrayView2<F>) -> (Array2<F>, Array2<F>, Array1<F>, Array1<F>, Array1<F>) {
        let n: F = c(x.nrows() as f64);
        let mean = x.sum_axis(Axis(0)) / n;
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| F::one() / (v + self.eps).sqrt());
        let xhat = centered * &inv_std;
        let out = &xhat * &self.gamma + &self.beta;
        (out, xhat, inv_std, mean, var)
    }

    /// Gradient with respect to the input given the output gradient; also
    /// returns the gradients of `gamma` and `beta`.
    fn backward(&self, dout: &Array2<F>, xhat: &Array2<F>, inv_std: &Array1<F>) -> (Array2<F>, Array1<F>, Array1<F>) {
        let n: F = c(dout.nrows() as f64);
        let dgamma = (dout * xhat).sum_axis(Axis(0));
        let dbeta = dout.sum_axis(Axis(0));
        let dxhat = dout * &self.gamma;
        let sum_d = dxhat.sum_axis(Axis(0));
        let sum_dx = (&dxhat * xhat).sum_axis(Axis(0));
        let mut dx = dxhat * n - &sum_d - &(xhat * &sum_dx);
        dx *= &(inv_std / n);
        (dx, dgamma, dbeta)
    }
}

/// Layer sizes and normalization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub inputs: usize,
    pub bn_eps: f64,
}

impl Architecture {
    pub fn widths(&self) -> [usize; 3] {
        [16 * self.inputs, 32 * self.inputs, 16 * self.inputs]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Mlp<F> {
    pub input_norm: BatchNorm<F>,
    pub hidden: [Dense<F>; 3],
    pub output_norm: BatchNorm<F>,
    pub head: Dense<F>,
}

/// Gradients of every trainable array, in [`Mlp::visit_params`] order.
pub type Grads<F> = Vec<Vec<F>>;

/// Intermediate values of a training-mode forward pass.
struct Cache<F> {
    xhat_in: Array2<F>,
    inv_in: Array1<F>,
    acts: Vec<Array2<F>>,
    pre: Vec<Array2<F>>,
    xhat_out: Array2<F>,
    inv_out: Array1<F>,
    normed: Array2<F>,
    probs: Array2<F>,
    /// Batch statistics of the two normalization layers.
    stats: [(Array1<F>, Array1<F>); 2],
}

impl<F: Scalar> Mlp<F> {
    pub fn new(arch: Architecture, rng: &mut impl Rng) -> Self {
        let [a, b, w3] = arch.widths();
        let eps = c(arch.bn_eps);
        Self {
            input_norm: BatchNorm::new(arch.inputs, eps),
            hidden: [
                Dense::he_uniform(arch.inputs, a, rng),
                Dense::he_uniform(a, b, rng),
                Dense::he_uniform(b, w3, rng),
            ],
            output_norm: BatchNorm::new(w3, eps),
            head: Dense::he_uniform(w3, 2, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.input_norm.gamma.len()
    }

    /// Class probabilities `[continue, exercise]` per row, with the frozen
    /// normalization statistics.
    pub fn predict(&self, x: &ArrayView2<F>) -> Array2<F> {
        let mut h = self.input_norm.infer(x);
        for layer in &self.hidden {
            h = layer.forward(&h.view()).mapv(|v| v.max(F::zero()));
        }
        let h = self.output_norm.infer(&h.view());
        softmax(self.head.forward(&h.view()))
    }

    fn train_forward(&self, x: &ArrayView2<F>) -> Cache<F> {
        let (a0, xhat_in, inv_in, m0, v0) = self.input_norm.train_forward(x);
        let mut acts = vec![a0];
        let mut pre = Vec::with_capacity(3);
        for layer in &self.hidden {
            let z = layer.forward(&acts.last().expect("non-empty").view());
            acts.push(z.mapv(|v| v.max(F::zero())));
            pre.push(z);
        }
        let (normed, xhat_out, inv_out, m1, v1) = self.output_norm.train_forward(&acts[3].view());
        let probs = softmax(self.head.forward(&normed.view()));
        Cache {
            xhat_in,
            inv_in,
            acts,
            pre,
            xhat_out,
            inv_out,
            normed,
            probs,
            stats: [(m0, v0), (m1, v1)],
        }
    }

    /// Mean cross-entropy of `labels` (1 = exercise) under training-mode
    /// normalization.
    pub fn train_loss(&self, x: &ArrayView2<F>, labels: &[u8]) -> F {
        cross_entropy(&self.train_forward(x).probs, labels)
    }

    /// Loss, gradients and batch statistics of one training-mode pass.
    fn loss_and_grads(&self, x: &ArrayView2<F>, labels: &[u8]) -> (F, Grads<F>, [(Array1<F>, Array1<F>); 2]) {
        let cache = self.train_forward(x);
        let loss = cross_entropy(&cache.probs, labels);
        let n: F = c(labels.len() as f64);
        let mut dlogits = cache.probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            dlogits[[i, y as usize]] -= F::one();
        }
        dlogits /= n;

        let d_head_w = cache.normed.t().dot(&dlogits);
        let d_head_b = dlogits.sum_axis(Axis(0));
        let dnormed = dlogits.dot(&self.head.w.t());
        let (mut dh, d_out_g, d_out_b) = self.output_norm.backward(&dnormed, &cache.xhat_out, &cache.inv_out);

        let mut dense_grads = Vec::with_capacity(3);
        for l in (0..3).rev() {
            Zip::from(&mut dh).and(&cache.pre[l]).for_each(|d, &z| {
                if z <= F::zero() {
                    *d = F::zero();
                }
            });
            let dw = cache.acts[l].t().dot(&dh);
            let db = dh.sum_axis(Axis(0));
            let dprev = dh.dot(&self.hidden[l].w.t());
            dense_grads.push((dw, db));
            dh = dprev;
        }
        dense_grads.reverse();
        let (_, d_in_g, d_in_b) = self.input_norm.backward(&dh, &cache.xhat_in, &cache.inv_in);

        let mut grads: Grads<F> = vec![d_in_g.to_vec(), d_in_b.to_vec()];
        for (dw, db) in dense_grads {
            grads.push(dw.iter().copied().collect());
            grads.push(db.to_vec());
        }
        grads.push(d_out_g.to_vec());
        grads.push(d_out_b.to_vec());
        grads.push(d_head_w.iter().copied().collect());
        grads.push(d_head_b.to_vec());
        (loss, grads, cache.stats)
    }

    /// Calls `f` on every trainable array as a flat slice, in a fixed order.
    pub fn visit_params(&mut self, mut f: impl FnMut(usize, &mut [F])) {
        let mut i = 0;
        let mut go = |s: &mut [F]| {
            f(i, s);
            i += 1;
        };
        go(self.input_norm.gamma.as_slice_mut().expect("contiguous"));
        go(self.input_norm.beta.as_slice_mut().expect("contiguous"));
        for layer in &mut self.hidden {
            go(layer.w.as_slice_mut().expect("contiguous"));
            go(layer.b.as_slice_mut().expect("contiguous"));
        }
        go(self.output_norm.gamma.as_slice_mut().expect("contiguous"));
        go(self.output_norm.beta.as_slice_mut().expect("contiguous"));
        go(self.head.w.as_slice_mut().expect("contiguous"));
        go(self.head.b.as_slice_mut().expect("contiguous"));
    }

    /// Analytic gradients of [`Mlp::train_loss`].
    pub fn gradients(&self, x: &ArrayView2<F>, labels: &[u8]) -> Grads<F> {
        self.loss_and_grads(x, labels).1
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        let mut copy = self.clone();
        copy.visit_params(|_, s| ok &= s.iter().all(|v| v.is_finite()));
        ok
    }
}

fn softmax<F: Scalar>(mut logits: Array2<F>) -> Array2<F> {
    for mut row in logits.rows_mut() {
        let m = row.fold(F::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    logits
}

fn cross_entropy<F: Scalar>(probs: &Array2<F>, labels: &[u8]) -> F {
    let tiny: F = F::min_positive_value();
    let total = labels
        .iter()
        .enumerate()
        .fold(F::zero(), |acc, (i, &y)| acc - probs[[i, y as usize]].max(tiny).ln());
    total / c(labels.len() as f64)
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Optimizer and running-statistics state of one training run.
pub struct Trainer<F: Scalar> {
    pub net: Mlp<F>,
    adam: AdamConfig,
    momentum: F,
    m: Grads<F>,
    v: Grads<F>,
    /// Zero-started moving averages of the batch statistics.
    run: [(Array1<F>, Array1<F>); 2],
    step: i32,
}

impl<F: Scalar> Trainer<F> {
    pub fn new(mut net: Mlp<F>, adam: AdamConfig, bn_momentum: f64) -> Self {
        let mut m = Vec::new();
        net.visit_params(|_, s| m.push(vec![F::zero(); s.len()]));
        let v = m.clone();
        let widths = [net.inputs(), net.output_norm.gamma.len()];
        let run = widths.map(|w| (Array1::zeros(w), Array1::zeros(w)));
        Self {
            net,
            adam,
            momentum: c(bn_momentum),
            m,
            v,
            run,
            step: 0,
        }
    }

    /// One Adam step on a batch; returns the batch loss before the update.
    pub fn step(&mut self, x: &ArrayView2<F>, labels: &[u8]) -> F {
        let (loss, grads, stats) = self.net.loss_and_grads(x, labels);
        self.step += 1;
        let (b1, b2) = (self.adam.beta1, self.adam.beta2);
        let lr_t: F = c(self.adam.learning_rate * (1.0 - b2.powi(self.step)).sqrt() / (1.0 - b1.powi(self.step)));
        let (b1, b2, eps): (F, F, F) = (c(b1), c(b2), c(self.adam.epsilon));
        let one = F::one();
        let (m, v) = (&mut self.m, &mut self.v);
        self.net.visit_params(|i, p| {
            for (j, w) in p.iter_mut().enumerate() {
                let g = grads[i][j];
                m[i][j] = b1 * m[i][j] + (one - b1) * g;
                v[i][j] = b2 * v[i][j] + (one - b2) * g * g;
                *w -= lr_t * m[i][j] / (v[i][j].sqrt() + eps);
            }
        });
        for (run, (mean, var)) in self.run.iter_mut().zip(stats) {
            run.0 = &run.0 * self.momentum + &(mean * (one - self.momentum));
            run.1 = &run.1 * self.momentum + &(var * (one - self.momentum));
        }
        loss
    }

    pub fn steps(&self) -> usize {
        self.step as usize
    }

    /// The trained network with bias-corrected moving statistics frozen into
    /// its normalization layers.
    pub fn finish(mut self) -> Mlp<F> {
        if self.step > 0 {
            let corr = F::one() - self.momentum.powi(self.step);
            let [(m0, v0), (m1, v1)] = self.run;
            self.net.input_norm.mean = m0 / corr;
            self.net.input_norm.var = v0 / corr;
            self.net.output_norm.mean = m1 / corr;
            self.net.output_norm.var = v1 / corr;
        }
        self.net
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Array2<f64>, Vec<u8>) {
        let x = Array2::from_shape_simple_fn((n, d), || rng.random_range(-2.0..2.0));
        let y = (0..n).map(|i| (i % 2) as u8).collect();
        (x, y)
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for d in [2usize, 4] {
            let mut net: Mlp<f64> = Mlp::new(
                Architecture {
                    inputs: d,
                    bn_eps: 1e-3,
                },
                &mut rng,
            );
            // move off the initialization so BN affine terms matter
            net.input_norm.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
            net.output_norm.beta.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            let (x, y) = batch(&mut rng, 12, d);
            let analytic = net.gradients(&x.view(), &y);
            let h = 1e-6;
            let mut worst = 0.0f64;
            let mut probe = net.clone();
            let mut sizes = Vec::new();
            probe.visit_params(|_, s| sizes.push(s.len()));
            for (i, &len) in sizes.iter().enumerate() {
                for j in (0..len).step_by(len.div_ceil(7)) {
                    let eval = |delta: f64| {
                        let mut n2 = net.clone();
                        n2.visit_params(|k, s| {
                            if k == i {
                                s[j] += delta;
                            }
                        });
                        n2.train_loss(&x.view(), &y)
                    };
                    let fd = (eval(h) - eval(-h)) / (2.0 * h);
                    let err = (fd - analytic[i][j]).abs() / (fd.abs() + analytic[i][j].abs()).max(1e-6);
                    worst = worst.max(err);
                }
            }
            assert!(worst < 1e-5, "d={d}: worst relative error {worst:e}");
        }
    }

    #[test]
    fn probabilities_are_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net: Mlp<f32> = Mlp::new(
            Architecture {
                inputs: 4,
                bn_eps: 1e-3,
            },
            &mut rng,
        );
        let x = Array2::from_shape_simple_fn((500, 4), || rng.random_range(-50.0f32..50.0));
        for row in net.predict(&x.view()).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn running_statistics_are_bias_corrected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net: Mlp<f64> = Mlp::new(
            Architecture {
                inputs: 2,
                bn_eps: 1e-3,
            },
            &mut rng,
        );
        let mut t = Trainer::new(
            net,
            AdamConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            0.99,
        );
        let x = Array2::from_shape_fn((4, 2), |(i, j)| (i as f64) * (j as f64 + 1.0) + 10.0);
        let y = [0u8, 1, 0, 1];
        for _ in 0..3 {
            t.step(&x.view(), &y);
        }
        let net = t.finish();
        // constant batches: corrected averages equal the batch statistics
        assert!((net.input_norm.mean[0] - 11.5).abs() < 1e-12);
        assert!((net.input_norm.var[1] - 5.0).abs() < 1e-12);
    }
}
