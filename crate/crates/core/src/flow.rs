//! Invertible map between representation space `z` and a standard-normal sampling space
//! `z0`, with exact log-determinants.
//!
//! The stack is made of affine coupling layers with alternating masks, interleaved with
//! fixed permutations. Every layer supports forward, inverse and a backward pass for the
//! forward direction, which is all the prior needs for density evaluation and training.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{join, Activation, Mlp, MlpCache, Parameters};
use crate::random::{normal, rng_from_seed};
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub coupling_layers: usize,
    pub hidden_width: usize,
    pub permutation_seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { coupling_layers: 6, hidden_width: 64, permutation_seed: 17 }
    }
}

/// Affine coupling: dimensions in `transformed` are scaled and shifted by functions of the
/// dimensions in `conditioning`. The raw scale is squashed with `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling<T> {
    pub conditioning: Vec<usize>,
    pub transformed: Vec<usize>,
    pub net: Mlp<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FlowLayer<T> {
    /// `y = z ⊙ exp(log_scale) + shift`
    ElementwiseAffine {
        log_scale: Array1<T>,
        shift: Array1<T>,
    },
    Coupling(Coupling<T>),
    /// `y[i] = z[perm[i]]`
    Permutation {
        perm: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowPrior<T> {
    pub latent_dim: usize,
    pub layers: Vec<FlowLayer<T>>,
}

enum LayerCache<T> {
    Elementwise { input: Array1<T> },
    Coupling { input: Array1<T>, net: MlpCache<T>, scale: Array1<T> },
    Permutation,
}

/// Saved activations of a forward pass.
pub struct FlowCache<T> {
    layers: Vec<LayerCache<T>>,
}

impl<T: Scalar> Coupling<T> {
    fn scale_shift(&self, z: &Array1<T>) -> (Array1<T>, Array1<T>, Array2<T>, MlpCache<T>) {
        let cond = Array2::from_shape_fn((1, self.conditioning.len()), |(_, i)| z[self.conditioning[i]]);
        let (out, cache) = self.net.forward_cached(&cond);
        let d = self.transformed.len();
        let scale = Array1::from_shape_fn(d, |i| out[[0, i]].tanh());
        let shift = Array1::from_shape_fn(d, |i| out[[0, d + i]]);
        (scale, shift, out, cache)
    }
}

fn standard_normal_log_density<T: Scalar>(z: &Array1<T>) -> T {
    let half = T::lit(0.5);
    let c = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    z.iter().map(|&v| -half * v * v - c).sum()
}

impl<T: Scalar> FlowPrior<T> {
    /// A flow with no layers: `z0 = z`.
    pub fn identity(latent_dim: usize) -> Self {
        Self { latent_dim, layers: Vec::new() }
    }

    pub fn from_layers(latent_dim: usize, layers: Vec<FlowLayer<T>>) -> Result<Self> {
        let flow = Self { latent_dim, layers };
        flow.validate()?;
        Ok(flow)
    }

    /// Coupling stack that starts as the identity map (zero-initialised output layers).
    pub fn new<R: Rng + ?Sized>(config: &FlowConfig, latent_dim: usize, rng: &mut R) -> Result<Self> {
        if latent_dim < 2 {
            return Err(Error::invalid("flow: latent_dim must be >= 2"));
        }
        if config.hidden_width == 0 {
            return Err(Error::invalid("flow: hidden_width must be positive"));
        }
        let half = latent_dim / 2;
        let first: Vec<usize> = (0..half).collect();
        let second: Vec<usize> = (half..latent_dim).collect();
        let mut perm_rng = rng_from_seed(config.permutation_seed);
        let mut layers = Vec::new();
        for i in 0..config.coupling_layers {
            let (conditioning, transformed) =
                if i % 2 == 0 { (first.clone(), second.clone()) } else { (second.clone(), first.clone()) };
            let net = Mlp::new(
                &[conditioning.len(), config.hidden_width, 2 * transformed.len()],
                Activation::Tanh,
                true,
                rng,
            );
            layers.push(FlowLayer::Coupling(Coupling { conditioning, transformed, net }));
            let mut perm: Vec<usize> = (0..latent_dim).collect();
            perm.shuffle(&mut perm_rng);
            layers.push(FlowLayer::Permutation { perm });
        }
        Self::from_layers(latent_dim, layers)
    }

    fn validate(&self) -> Result<()> {
        let l = self.latent_dim;
        for (i, layer) in self.layers.iter().enumerate() {
            let ok = match layer {
                FlowLayer::ElementwiseAffine { log_scale, shift } => log_scale.len() == l && shift.len() == l,
                FlowLayer::Coupling(c) => {
                    let mut seen = vec![false; l];
                    let disjoint = c.conditioning.iter().chain(&c.transformed).all(|&d| {
                        let fresh = d < l && !seen[d];
                        if d < l {
                            seen[d] = true;
                        }
                        fresh
                    });
                    disjoint
                        && seen.iter().all(|&s| s)
                        && c.net.layers.first().is_some_and(|f| f.inputs() == c.conditioning.len())
                        && c.net.layers.last().is_some_and(|f| f.outputs() == 2 * c.transformed.len())
                }
                FlowLayer::Permutation { perm } => {
                    let mut sorted = perm.clone();
                    sorted.sort_unstable();
                    sorted == (0..l).collect::<Vec<_>>()
                }
            };
            if !ok {
                return Err(Error::invalid(format!("flow layer {i} is inconsistent with latent_dim {l}")));
            }
        }
        Ok(())
    }

    fn check_input(&self, z: &Array1<T>) -> Result<()> {
        if z.len() != self.latent_dim {
            return Err(Error::invalid(format!("flow: input has length {}, expected {}", z.len(), self.latent_dim)));
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("flow: input must be finite"));
        }
        Ok(())
    }

    /// `z0 = g(z)` and `log|det ∂g/∂z|`.
    pub fn forward(&self, z: &Array1<T>) -> Result<(Array1<T>, T)> {
        let (z0, logdet, _) = self.forward_cached(z)?;
        Ok((z0, logdet))
    }

    pub fn forward_cached(&self, z: &Array1<T>) -> Result<(Array1<T>, T, FlowCache<T>)> {
        self.check_input(z)?;
        let mut x = z.clone();
        let mut logdet = T::zero();
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                FlowLayer::ElementwiseAffine { log_scale, shift } => {
                    caches.push(LayerCache::Elementwise { input: x.clone() });
                    x = &(&x * &log_scale.mapv(|v| v.exp())) + shift;
                    logdet += log_scale.sum();
                }
                FlowLayer::Coupling(c) => {
                    let (scale, shift, _, net) = c.scale_shift(&x);
                    let input = x.clone();
                    for (k, &d) in c.transformed.iter().enumerate() {
                        x[d] = input[d] * scale[k].exp() + shift[k];
                    }
                    logdet += scale.sum();
                    caches.push(LayerCache::Coupling { input, net, scale });
                }
                FlowLayer::Permutation { perm } => {
                    caches.push(LayerCache::Permutation);
                    x = Array1::from_shape_fn(self.latent_dim, |k| x[perm[k]]);
                }
            }
            if !x.iter().all(|v| v.is_finite()) || !logdet.is_finite() {
                return Err(Error::NonFinite { stage: "flow", layer: i });
            }
        }
        Ok((x, logdet, FlowCache { layers: caches }))
    }

    /// `z = g⁻¹(z0)`.
    pub fn inverse(&self, z0: &Array1<T>) -> Result<Array1<T>> {
        self.check_input(z0)?;
        let mut x = z0.clone();
        for layer in self.layers.iter().rev() {
            match layer {
                FlowLayer::ElementwiseAffine { log_scale, shift } => {
                    x = &(&x - shift) * &log_scale.mapv(|v| (-v).exp());
                }
                FlowLayer::Coupling(c) => {
                    let (scale, shift, _, _) = c.scale_shift(&x);
                    for (k, &d) in c.transformed.iter().enumerate() {
                        x[d] = (x[d] - shift[k]) * (-scale[k]).exp();
                    }
                }
                FlowLayer::Permutation { perm } => {
                    let mut out = Array1::zeros(self.latent_dim);
                    for (k, &p) in perm.iter().enumerate() {
                        out[p] = x[k];
                    }
                    x = out;
                }
            }
        }
        Ok(x)
    }

    /// Inverse-direction log-determinant `log|det ∂g⁻¹/∂z0|` at `z0`.
    pub fn inverse_logdet(&self, z0: &Array1<T>) -> Result<T> {
        let z = self.inverse(z0)?;
        Ok(-self.forward(&z)?.1)
    }

    /// `log p(z) = log N(g(z); 0, I) + log|det ∂g/∂z|`.
    pub fn log_prob(&self, z: &Array1<T>) -> Result<T> {
        let (z0, logdet) = self.forward(z)?;
        Ok(standard_normal_log_density(&z0) + logdet)
    }

    /// `log p(z)` and `scale · ∂ log p / ∂z`; `scale · ∂ log p / ∂η` is added to `grad`.
    pub fn log_prob_backward(&self, z: &Array1<T>, scale: T, grad: &mut FlowPrior<T>) -> Result<(T, Array1<T>)> {
        let (z0, logdet, cache) = self.forward_cached(z)?;
        let lp = standard_normal_log_density(&z0) + logdet;
        let d_z0 = z0.mapv(|v| -v * scale);
        let d_z = self.backward(&cache, &d_z0, scale, grad);
        Ok((lp, d_z))
    }

    /// Backpropagates `dL/dz0` and `dL/dlogdet` through the forward direction.
    pub fn backward(&self, cache: &FlowCache<T>, d_z0: &Array1<T>, d_logdet: T, grad: &mut FlowPrior<T>) -> Array1<T> {
        let mut g = d_z0.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            match (layer, &cache.layers[i], &mut grad.layers[i]) {
                (
                    FlowLayer::ElementwiseAffine { log_scale, .. },
                    LayerCache::Elementwise { input },
                    FlowLayer::ElementwiseAffine { log_scale: g_ls, shift: g_sh },
                ) => {
                    let e = log_scale.mapv(|v| v.exp());
                    for d in 0..self.latent_dim {
                        g_ls[d] += g[d] * input[d] * e[d] + d_logdet;
                        g_sh[d] += g[d];
                    }
                    g = &g * &e;
                }
                (FlowLayer::Coupling(c), LayerCache::Coupling { input, net, scale }, FlowLayer::Coupling(gc)) => {
                    let d = c.transformed.len();
                    let mut d_out = Array2::zeros((1, 2 * d));
                    let mut next = g.clone();
                    for (k, &dim) in c.transformed.iter().enumerate() {
                        let e = scale[k].exp();
                        let d_scale = g[dim] * input[dim] * e + d_logdet;
                        d_out[[0, k]] = d_scale * (T::one() - scale[k] * scale[k]);
                        d_out[[0, d + k]] = g[dim];
                        next[dim] = g[dim] * e;
                    }
                    let d_cond = c.net.backward(net, &d_out, &mut gc.net);
                    for (k, &dim) in c.conditioning.iter().enumerate() {
                        next[dim] += d_cond[[0, k]];
                    }
                    g = next;
                }
                (FlowLayer::Permutation { perm }, LayerCache::Permutation, _) => {
                    let mut out = Array1::zeros(self.latent_dim);
                    for (k, &p) in perm.iter().enumerate() {
                        out[p] += g[k];
                    }
                    g = out;
                }
                _ => unreachable!("gradient buffer must mirror the flow structure"),
            }
        }
        g
    }

    /// `n` draws `z0 ~ N(0, I)` mapped through the inverse; rows are samples.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Array2<T>> {
        if n == 0 {
            return Err(Error::invalid("flow.sample: n must be >= 1"));
        }
        let mut rng = rng_from_seed(seed);
        let mut out = Array2::zeros((n, self.latent_dim));
        for r in 0..n {
            let z0 = Array1::from_shape_simple_fn(self.latent_dim, || normal::<T, _>(&mut rng));
            let z = self.inverse(&z0)?;
            out.row_mut(r).assign(&z);
        }
        Ok(out)
    }
}

impl<T: Scalar> Parameters<T> for FlowPrior<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        for (i, layer) in self.layers.iter().enumerate() {
            let p = join(prefix, &format!("layer{i}"));
            match layer {
                FlowLayer::ElementwiseAffine { log_scale, shift } => {
                    f(&join(&p, "log_scale"), log_scale.as_slice().expect("contiguous"));
                    f(&join(&p, "shift"), shift.as_slice().expect("contiguous"));
                }
                FlowLayer::Coupling(c) => c.net.visit_params(&p, f),
                FlowLayer::Permutation { .. } => {}
            }
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = join(prefix, &format!("layer{i}"));
            match layer {
                FlowLayer::ElementwiseAffine { log_scale, shift } => {
                    f(&join(&p, "log_scale"), log_scale.as_slice_mut().expect("contiguous"));
                    f(&join(&p, "shift"), shift.as_slice_mut().expect("contiguous"));
                }
                FlowLayer::Coupling(c) => c.net.visit_params_mut(&p, f),
                FlowLayer::Permutation { .. } => {}
            }
        }
    }
}
