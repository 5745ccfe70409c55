//! Small dense networks with hand-written backpropagation.
//!
//! Parameters of a model live in one flat `Vec<f64>`; layouts such as
//! [`Mlp`] only describe how to slice it. That keeps the optimizer, the
//! checkpoint format and finite-difference checks generic over models.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::seq::SliceRandom;

use crate::par::rng_stream;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross entropy of `sigmoid(logit)` against target `y`, computed
/// without forming the probability.
#[inline]
pub fn bce_with_logits(logit: f64, y: f64) -> f64 {
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// d bce / d logit.
#[inline]
pub fn bce_grad(logit: f64, y: f64) -> f64 {
    sigmoid(logit) - y
}

/// Fully connected stack: `sizes[0] -> sizes[1] -> ... -> sizes[n]`, ReLU
/// after every layer except the last unless `relu_last` is set.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub relu_last: bool,
}

/// Activations recorded by [`Mlp::forward`]; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct MlpTape {
    acts: Vec<Vec<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("tape has input")
    }
}

impl Mlp {
    pub fn new(sizes: Vec<usize>, relu_last: bool) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs at least one layer");
        Self { sizes, relu_last }
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// He-uniform weights, zero biases.
    pub fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut theta = Vec::with_capacity(self.num_params());
        for w in self.sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                theta.push(rng.random_range(-bound..bound));
            }
            theta.extend(std::iter::repeat_n(0.0, fan_out));
        }
        theta
    }

    fn relu_at(&self, layer: usize) -> bool {
        layer + 1 < self.num_layers() || self.relu_last
    }

    pub fn forward(&self, theta: &[f64], x: &[f64]) -> MlpTape {
        debug_assert_eq!(theta.len(), self.num_params());
        debug_assert_eq!(x.len(), self.input_dim());
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &theta[off..off + n_in * n_out];
            let b = &theta[off + n_in * n_out..off + n_in * n_out + n_out];
            off += n_in * n_out + n_out;
            let input = acts.last().unwrap();
            let relu = self.relu_at(l);
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let z = b[o] + dot(row, input);
                    if relu { z.max(0.0) } else { z }
                })
                .collect();
            acts.push(out);
        }
        MlpTape { acts }
    }

    /// Output only.
    pub fn apply(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        self.forward(theta, x).acts.pop().unwrap()
    }

    /// Accumulate parameter gradients into `grad` given d loss / d output and
    /// return d loss / d input.
    pub fn backward(&self, theta: &[f64], tape: &MlpTape, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.num_params());
        let mut offsets = Vec::with_capacity(self.num_layers());
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }
        let mut delta = dout.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if self.relu_at(l) {
                for (d, &a) in delta.iter_mut().zip(&tape.acts[l + 1]) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let input = &tape.acts[l];
            let off = offsets[l];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let w = &theta[off..off + n_in * n_out];
            let mut dinput = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for (g, &x) in grow.iter_mut().zip(input) {
                    *g += d * x;
                }
                for (di, &wv) in dinput.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *di += d * wv;
                }
            }
            delta = dinput;
        }
        delta
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adam with L2 weight decay folded into the gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..theta.len() {
            let g = grad[i] + self.weight_decay * theta[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            theta[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Step schedule: `base` until `milestone` epochs have completed, then
/// `base * gamma`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepLr {
    pub base: f64,
    pub milestone: usize,
    pub gamma: f64,
}

impl StepLr {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            milestone: usize::MAX,
            gamma: 1.0,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        if epoch >= self.milestone {
            self.base * self.gamma
        } else {
            self.base
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Optim {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: StepLr,
    pub weight_decay: f64,
    pub seed: u64,
}

/// Mini-batch training loop over a seeded shuffle.
///
/// `loss_grad(theta, sample, grad)` adds the sample's unnormalised gradient
/// into `grad` and returns `(loss_sum, weight)`. Each batch is normalised by
/// the total weight it accumulated; batches with zero weight are skipped.
/// Returns the weighted mean loss of every epoch.
pub fn train_loop<S, F>(theta: &mut [f64], samples: &[S], opt: &Optim, mut loss_grad: F) -> Vec<f64>
where
    F: FnMut(&[f64], &S, &mut [f64]) -> (f64, f64),
{
    let mut adam = Adam::new(theta.len(), opt.weight_decay);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = rng_stream(opt.seed, 0x7472_6169_6e);
    let mut grad = vec![0.0; theta.len()];
    let mut history = Vec::with_capacity(opt.epochs);
    for epoch in 0..opt.epochs {
        order.shuffle(&mut rng);
        let lr = opt.lr.at(epoch);
        let (mut epoch_loss, mut epoch_weight) = (0.0, 0.0);
        for batch in order.chunks(opt.batch_size.max(1)) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let (mut loss, mut weight) = (0.0, 0.0);
            for &i in batch {
                let (l, w) = loss_grad(theta, &samples[i], &mut grad);
                loss += l;
                weight += w;
            }
            if weight <= 0.0 {
                continue;
            }
            grad.iter_mut().for_each(|g| *g /= weight);
            adam.step(theta, &grad, lr);
            epoch_loss += loss;
            epoch_weight += weight;
        }
        history.push(if epoch_weight > 0.0 { epoch_loss / epoch_weight } else { 0.0 });
    }
    history
}

/// Central finite-difference gradient of `f` at `theta`, used by tests.
pub fn numeric_grad(theta: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut t = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            let orig = t[i];
            t[i] = orig + h;
            let up = f(&t);
            t[i] = orig - h;
            let down = f(&t);
            t[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Max relative error between two gradient vectors, with a floor on the
/// denominator so near-zero components compare absolutely.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
