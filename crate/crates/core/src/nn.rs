//! Minimal dense layers with hand-written backward passes, a parameter visitor and Adam.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Scalar;

/// Structured access to every learnable array of a module, in a fixed order.
///
/// Gradient buffers reuse the module type itself, so a gradient is a module of the same
/// shape whose parameters hold partial derivatives.
pub trait Parameters<T: Scalar> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T]));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.len());
        n
    }

    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit_params("", &mut |_, p| out.extend_from_slice(p));
        out
    }

    fn load_flat(&mut self, flat: &[T]) {
        let mut offset = 0;
        self.visit_params_mut("", &mut |_, p| {
            let n = p.len();
            p.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        });
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    fn fill_zero(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.iter_mut().for_each(|v| *v = T::zero()));
    }

    fn named_arrays(&self, prefix: &str) -> Vec<(String, Vec<T>)> {
        let mut out = Vec::new();
        self.visit_params(prefix, &mut |name, p| out.push((name.to_string(), p.to_vec())));
        out
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit_params("", &mut |_, p| ok &= p.iter().all(|v| v.is_finite()));
        ok
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Fully connected layer `y = x · W + b` with `W` of shape `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weight: Array2::zeros((inputs, outputs)), bias: Array1::zeros(outputs) }
    }

    /// Uniform init in `±1/sqrt(inputs)` for weights and bias.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((inputs, outputs), || T::lit(rng.random_range(-bound..bound)));
        let bias = Array1::from_shape_simple_fn(outputs, || T::lit(rng.random_range(-bound..bound)));
        Self { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients into `grad` and returns the input gradient.
    pub fn backward(&self, x: &Array2<T>, grad_out: &Array2<T>, grad: &mut Linear<T>) -> Array2<T> {
        self.accumulate(x, grad_out, grad);
        grad_out.dot(&self.weight.t())
    }

    pub fn accumulate(&self, x: &Array2<T>, grad_out: &Array2<T>, grad: &mut Linear<T>) {
        grad.weight += &x.t().dot(grad_out);
        grad.bias += &grad_out.sum_axis(Axis(0));
    }
}

impl<T: Scalar> Parameters<T> for Linear<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        f(&join(prefix, "weight"), self.weight.as_slice().expect("standard layout"));
        f(&join(prefix, "bias"), self.bias.as_slice().expect("standard layout"));
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        f(&join(prefix, "weight"), self.weight.as_slice_mut().expect("standard layout"));
        f(&join(prefix, "bias"), self.bias.as_slice_mut().expect("standard layout"));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::LeakyRelu { slope } => {
                if x > T::zero() {
                    x
                } else {
                    x * T::lit(slope)
                }
            }
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation `x` and the activation value `y`.
    #[inline]
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::LeakyRelu { slope } => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::lit(slope)
                }
            }
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - y * y,
        }
    }

    pub fn map<T: Scalar>(self, pre: &Array2<T>) -> Array2<T> {
        pre.mapv(|v| self.apply(v))
    }

    pub fn backward<T: Scalar>(self, pre: &Array2<T>, post: &Array2<T>, grad_post: &Array2<T>) -> Array2<T> {
        let mut g = grad_post.clone();
        Zip::from(&mut g).and(pre).and(post).for_each(|g, &x, &y| *g *= self.derivative(x, y));
        g
    }
}

/// Stack of linear layers with an activation between consecutive layers (none after the
/// last).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    pub activation: Activation,
}

/// Values saved by [`Mlp::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    inputs: Vec<Array2<T>>,
    pre: Vec<Array2<T>>,
}

impl<T: Scalar> Mlp<T> {
    /// `sizes = [in, h1, ..., out]`; the last layer is zero-initialised when `zero_last`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, zero_last: bool, rng: &mut R) -> Self {
        let mut layers: Vec<Linear<T>> = sizes.windows(2).map(|w| Linear::init(w[0], w[1], rng)).collect();
        if zero_last {
            if let Some(last) = layers.last_mut() {
                last.fill_zero();
            }
        }
        Self { layers, activation }
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let mut h = x.clone();
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i + 1 < n {
                h.mapv_inplace(|v| self.activation.apply(v));
            }
        }
        h
    }

    pub fn forward_cached(&self, x: &Array2<T>) -> (Array2<T>, MlpCache<T>) {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            if i + 1 < n {
                h = self.activation.map(&z);
                pre.push(z);
            } else {
                h = z;
            }
        }
        (h, MlpCache { inputs, pre })
    }

    /// Returns the gradient w.r.t. the input; parameter gradients accumulate into `grad`.
    pub fn backward(&self, cache: &MlpCache<T>, grad_out: &Array2<T>, grad: &mut Mlp<T>) -> Array2<T> {
        let n = self.layers.len();
        let mut g = grad_out.clone();
        for i in (0..n).rev() {
            g = self.layers[i].backward(&cache.inputs[i], &g, &mut grad.layers[i]);
            if i > 0 {
                let pre = &cache.pre[i - 1];
                let post = &cache.inputs[i];
                g = self.activation.backward(pre, post, &g);
            }
        }
        g
    }
}

impl<T: Scalar> Parameters<T> for Mlp<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_params(&join(prefix, &format!("layer{i}")), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params_mut(&join(prefix, &format!("layer{i}")), f);
        }
    }
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize, learning_rate: T) -> Self {
        Self {
            learning_rate,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let one = T::one();
        let bc1 = one - self.beta1.powi(self.t);
        let bc2 = one - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Rescales `grads` in place so its Euclidean norm is at most `max_norm`; returns the
/// original norm.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [T], max_norm: T) -> T {
    let norm = grads.iter().map(|&g| g * g).sum::<T>().sqrt();
    if norm > max_norm && norm > T::zero() {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::rng_from_seed;

    fn loss(mlp: &Mlp<f64>, x: &Array2<f64>) -> f64 {
        mlp.forward(x).iter().enumerate().map(|(i, v)| v * (i as f64 + 1.0)).sum()
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(3);
        for act in [Activation::Tanh, Activation::LeakyRelu { slope: 0.2 }] {
            let mlp: Mlp<f64> = Mlp::new(&[3, 5, 4, 2], act, false, &mut rng);
            let x = Array2::from_shape_fn((4, 3), |(i, j)| (i as f64 - 1.3) * 0.4 + j as f64 * 0.3);
            let (y, cache) = mlp.forward_cached(&x);
            let gout = Array2::from_shape_fn(y.dim(), |(i, j)| (i * y.ncols() + j) as f64 + 1.0);
            let mut grad = mlp.clone();
            grad.fill_zero();
            let gx = mlp.backward(&cache, &gout, &mut grad);
            let analytic = grad.flatten();
            let base = mlp.flatten();
            let h = 1e-6;
            for i in 0..base.len() {
                let mut p = mlp.clone();
                let mut v = base.clone();
                v[i] += h;
                p.load_flat(&v);
                let up = loss(&p, &x);
                v[i] -= 2.0 * h;
                p.load_flat(&v);
                let down = loss(&p, &x);
                let fd = (up - down) / (2.0 * h);
                assert!((fd - analytic[i]).abs() <= 1e-6 * fd.abs().max(1.0), "param {i}: {fd} vs {}", analytic[i]);
            }
            for r in 0..x.nrows() {
                for c in 0..x.ncols() {
                    let mut xp = x.clone();
                    xp[[r, c]] += h;
                    let up = loss(&mlp, &xp);
                    xp[[r, c]] -= 2.0 * h;
                    let down = loss(&mlp, &xp);
                    let fd = (up - down) / (2.0 * h);
                    assert!((fd - gx[[r, c]]).abs() <= 1e-6 * fd.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn adam_with_zero_rate_is_noop() {
        let mut p = vec![1.0, -2.0];
        let before = p.clone();
        let mut opt = Adam::new(2, 0.0);
        opt.step(&mut p, &[0.5, 3.0]);
        assert_eq!(p, before);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut p = vec![3.0f64, -4.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            opt.step(&mut p, &g);
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0f64, 4.0];
        let n = clip_grad_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15 && (g[1] - 0.8).abs() < 1e-15);
    }
}
