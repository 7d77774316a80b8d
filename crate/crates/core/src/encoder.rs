//! Permutation-invariant EdgeConv mesh encoder producing a diagonal Gaussian posterior over
//! the representation space.

use ndarray::{s, Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::{euclidean_neighborhood, feature_knn, surface_neighborhood, Neighborhood, SurfaceMesh};
use crate::nn::{join, Activation, Linear, Parameters};
use crate::{Error, Result, Scalar};

const LOG_SIGMA_BOUND: f64 = 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighborMetric {
    Geodesic,
    Euclidean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub k_neighbors: usize,
    pub edgeconv_widths: Vec<usize>,
    pub latent_dim: usize,
    pub first_block_metric: NeighborMetric,
    /// Width of the hidden layer between the pooled feature and the two heads.
    pub head_width: usize,
    pub leaky_slope: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 10,
            edgeconv_widths: vec![64, 64, 128, 256],
            latent_dim: 32,
            first_block_metric: NeighborMetric::Geodesic,
            head_width: 256,
            leaky_slope: 0.2,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 2 {
            return Err(Error::invalid("encoder: latent_dim must be >= 2"));
        }
        if self.k_neighbors < 3 {
            return Err(Error::invalid("encoder: k_neighbors must be >= 3"));
        }
        if self.edgeconv_widths.is_empty() || self.edgeconv_widths.contains(&0) {
            return Err(Error::invalid("encoder: edgeconv_widths must be non-empty and positive"));
        }
        if self.head_width == 0 {
            return Err(Error::invalid("encoder: head_width must be positive"));
        }
        Ok(())
    }
}

/// Diagonal Gaussian `q(z | X)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPosterior<T> {
    pub mu: Array1<T>,
    pub sigma: Array1<T>,
}

impl<T: Scalar> LatentPosterior<T> {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `Σ log N(z_i; mu_i, sigma_i)`.
    pub fn log_density(&self, z: &Array1<T>) -> T {
        let half_log_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
        let half = T::lit(0.5);
        z.iter()
            .zip(self.mu.iter().zip(self.sigma.iter()))
            .map(|(&zi, (&m, &s))| {
                let e = (zi - m) / s;
                -half * e * e - s.ln() - half_log_2pi
            })
            .sum()
    }
}

/// `z = mu + eps ⊙ sigma`.
pub fn reparameterize<T: Scalar>(post: &LatentPosterior<T>, eps: &Array1<T>) -> Result<Array1<T>> {
    if eps.len() != post.dim() {
        return Err(Error::invalid(format!(
            "reparameterize: eps has length {}, latent dim is {}",
            eps.len(),
            post.dim()
        )));
    }
    if !eps.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("reparameterize: eps must be finite"));
    }
    Ok(&post.mu + &(eps * &post.sigma))
}

/// Point positions plus the neighbor graph for the first EdgeConv block.
#[derive(Debug, Clone)]
pub struct EncoderInput<T> {
    pub points: Array2<T>,
    pub first_graph: Neighborhood<T>,
}

impl<T: Scalar> EncoderInput<T> {
    /// Geodesic graphs fall back to Euclidean top-up on disconnected pieces so masked
    /// training copies stay encodable.
    pub fn from_mesh(mesh: &SurfaceMesh<T>, cfg: &EncoderConfig) -> Result<Self> {
        let first_graph = match cfg.first_block_metric {
            NeighborMetric::Geodesic => surface_neighborhood(mesh, cfg.k_neighbors)?,
            NeighborMetric::Euclidean => euclidean_neighborhood(mesh, cfg.k_neighbors)?,
        };
        Ok(Self { points: mesh.vertex_matrix(), first_graph })
    }
}

/// One EdgeConv block: `h'_i = max_j LeakyReLU(W · [h_i, h_j - h_i] + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeConv<T> {
    /// `2·c_in × c_out`
    pub lin: Linear<T>,
}

struct EdgeConvCache<T> {
    input: Array2<T>,
    argmax: Vec<usize>,
    pre: Array2<T>,
}

impl<T: Scalar> EdgeConv<T> {
    fn c_in(&self) -> usize {
        self.lin.inputs() / 2
    }

    // W·[h_i, h_j - h_i] = h_i·(W_top - W_bot) + h_j·W_bot, and LeakyReLU is monotone, so
    // the max over neighbors only needs the neighbor term.
    fn forward(&self, input: &Array2<T>, graph: &Neighborhood<T>, act: Activation) -> (Array2<T>, EdgeConvCache<T>) {
        let c_in = self.c_in();
        let top = self.lin.weight.slice(s![..c_in, ..]);
        let bot = self.lin.weight.slice(s![c_in.., ..]);
        let center_w = &top - &bot;
        let a = input.dot(&center_w);
        let b = input.dot(&bot);
        let n = input.nrows();
        let c_out = self.lin.outputs();
        let k = graph.k;
        let bs = b.as_slice().expect("standard layout");
        let mut argmax = vec![0usize; n * c_out];
        let mut pre = Array2::zeros((n, c_out));
        for i in 0..n {
            let row = graph.row(i);
            for c in 0..c_out {
                let mut best_j = row[0];
                let mut best = bs[best_j * c_out + c];
                for &j in &row[1..k] {
                    let v = bs[j * c_out + c];
                    if v > best {
                        best = v;
                        best_j = j;
                    }
                }
                argmax[i * c_out + c] = best_j;
                pre[[i, c]] = a[[i, c]] + self.lin.bias[c] + best;
            }
        }
        let out = act.map(&pre);
        (out, EdgeConvCache { input: input.clone(), argmax, pre })
    }

    fn backward(
        &self,
        cache: &EdgeConvCache<T>,
        out: &Array2<T>,
        grad_out: &Array2<T>,
        act: Activation,
        grad: &mut EdgeConv<T>,
    ) -> Array2<T> {
        let c_in = self.c_in();
        let c_out = self.lin.outputs();
        let n = cache.input.nrows();
        let d_pre = act.backward(&cache.pre, out, grad_out);
        let mut d_b = Array2::<T>::zeros((n, c_out));
        for i in 0..n {
            for c in 0..c_out {
                let j = cache.argmax[i * c_out + c];
                d_b[[j, c]] += d_pre[[i, c]];
            }
        }
        let ht = cache.input.t();
        let d_center = ht.dot(&d_pre);
        let d_bot_direct = ht.dot(&d_b);
        {
            let mut gtop = grad.lin.weight.slice_mut(s![..c_in, ..]);
            gtop += &d_center;
        }
        {
            let mut gbot = grad.lin.weight.slice_mut(s![c_in.., ..]);
            gbot += &(&d_bot_direct - &d_center);
        }
        grad.lin.bias += &d_pre.sum_axis(ndarray::Axis(0));
        let top = self.lin.weight.slice(s![..c_in, ..]);
        let bot = self.lin.weight.slice(s![c_in.., ..]);
        let center_w = &top - &bot;
        d_pre.dot(&center_w.t()) + d_b.dot(&bot.t())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub config: EncoderConfig,
    pub blocks: Vec<EdgeConv<T>>,
    pub hidden: Linear<T>,
    pub mu_head: Linear<T>,
    pub log_sigma_head: Linear<T>,
}

/// Intermediate values of one forward pass, consumed by [`Encoder::backward`].
pub struct EncoderCache<T> {
    blocks: Vec<EdgeConvCache<T>>,
    outputs: Vec<Array2<T>>,
    pool_argmax: Vec<usize>,
    pooled: Array2<T>,
    hidden_pre: Array2<T>,
    hidden: Array2<T>,
    log_sigma_raw: Array1<T>,
    sigma: Array1<T>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut blocks = Vec::new();
        let mut c_in = 3;
        for &w in &config.edgeconv_widths {
            blocks.push(EdgeConv { lin: Linear::init(2 * c_in, w, rng) });
            c_in = w;
        }
        let pooled: usize = config.edgeconv_widths.iter().sum();
        let hidden = Linear::init(pooled, config.head_width, rng);
        let mu_head = Linear::init(config.head_width, config.latent_dim, rng);
        let mut log_sigma_head = Linear::init(config.head_width, config.latent_dim, rng);
        // start with small posterior spread
        log_sigma_head.weight.mapv_inplace(|w| w * T::lit(0.1));
        log_sigma_head.bias.fill(T::lit(-3.0));
        Ok(Self { config, blocks, hidden, mu_head, log_sigma_head })
    }

    fn act(&self) -> Activation {
        Activation::LeakyRelu { slope: self.config.leaky_slope }
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    /// Encodes a mesh; the first-block graph is rebuilt from the mesh itself.
    pub fn encode(&self, mesh: &SurfaceMesh<T>) -> Result<LatentPosterior<T>> {
        let input = EncoderInput::from_mesh(mesh, &self.config)?;
        Ok(self.forward(&input)?.0)
    }

    pub fn forward(&self, input: &EncoderInput<T>) -> Result<(LatentPosterior<T>, EncoderCache<T>)> {
        let act = self.act();
        let k = self.config.k_neighbors;
        let mut h = input.points.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut outputs = Vec::with_capacity(self.blocks.len());
        for (b, block) in self.blocks.iter().enumerate() {
            let dynamic;
            let graph = if b == 0 {
                &input.first_graph
            } else {
                dynamic = feature_knn(&h, k);
                &dynamic
            };
            let (out, cache) = block.forward(&h, graph, act);
            if !out.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { stage: "encoder", layer: b });
            }
            caches.push(cache);
            outputs.push(out.clone());
            h = out;
        }
        let total: usize = self.config.edgeconv_widths.iter().sum();
        let n = input.points.nrows();
        let mut pooled = Array2::from_elem((1, total), T::neg_infinity());
        let mut pool_argmax = vec![0usize; total];
        let mut offset = 0;
        for out in &outputs {
            for c in 0..out.ncols() {
                for i in 0..n {
                    let v = out[[i, c]];
                    if v > pooled[[0, offset + c]] {
                        pooled[[0, offset + c]] = v;
                        pool_argmax[offset + c] = i;
                    }
                }
            }
            offset += out.ncols();
        }
        let hidden_pre = self.hidden.forward(&pooled);
        let hidden = act.map(&hidden_pre);
        let mu = self.mu_head.forward(&hidden).row(0).to_owned();
        let log_sigma_raw = self.log_sigma_head.forward(&hidden).row(0).to_owned();
        let bound = T::lit(LOG_SIGMA_BOUND);
        let sigma = log_sigma_raw.mapv(|v| v.max(-bound).min(bound).exp());
        let layer = self.blocks.len();
        if !mu.iter().chain(sigma.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite { stage: "encoder", layer });
        }
        let post = LatentPosterior { mu, sigma: sigma.clone() };
        Ok((
            post,
            EncoderCache { blocks: caches, outputs, pool_argmax, pooled, hidden_pre, hidden, log_sigma_raw, sigma },
        ))
    }

    /// Backpropagates `dL/dmu` and `dL/dsigma`, accumulating into `grad`.
    pub fn backward(&self, cache: &EncoderCache<T>, d_mu: &Array1<T>, d_sigma: &Array1<T>, grad: &mut Encoder<T>) {
        let act = self.act();
        let bound = T::lit(LOG_SIGMA_BOUND);
        let d_ls = Array1::from_iter(cache.log_sigma_raw.iter().zip(cache.sigma.iter()).zip(d_sigma.iter()).map(
            |((&raw, &s), &g)| {
                if raw > -bound && raw < bound {
                    g * s
                } else {
                    T::zero()
                }
            },
        ));
        let d_mu2 = d_mu.clone().insert_axis(ndarray::Axis(0));
        let d_ls2 = d_ls.insert_axis(ndarray::Axis(0));
        let mut d_hidden = self.mu_head.backward(&cache.hidden, &d_mu2, &mut grad.mu_head);
        d_hidden += &self.log_sigma_head.backward(&cache.hidden, &d_ls2, &mut grad.log_sigma_head);
        let d_hidden_pre = act.backward(&cache.hidden_pre, &cache.hidden, &d_hidden);
        let d_pooled = self.hidden.backward(&cache.pooled, &d_hidden_pre, &mut grad.hidden);

        let mut offset = 0;
        let mut d_outputs: Vec<Array2<T>> = Vec::with_capacity(self.blocks.len());
        for out in &cache.outputs {
            let mut d = Array2::zeros(out.dim());
            for c in 0..out.ncols() {
                d[[cache.pool_argmax[offset + c], c]] = d_pooled[[0, offset + c]];
            }
            offset += out.ncols();
            d_outputs.push(d);
        }
        for b in (0..self.blocks.len()).rev() {
            let d_in =
                self.blocks[b].backward(&cache.blocks[b], &cache.outputs[b], &d_outputs[b], act, &mut grad.blocks[b]);
            if b > 0 {
                d_outputs[b - 1] += &d_in;
            }
        }
    }
}

impl<T: Scalar> Parameters<T> for Encoder<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.lin.visit_params(&join(prefix, &format!("edgeconv{i}")), f);
        }
        self.hidden.visit_params(&join(prefix, "hidden"), f);
        self.mu_head.visit_params(&join(prefix, "mu_head"), f);
        self.log_sigma_head.visit_params(&join(prefix, "log_sigma_head"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.lin.visit_params_mut(&join(prefix, &format!("edgeconv{i}")), f);
        }
        self.hidden.visit_params_mut(&join(prefix, "hidden"), f);
        self.mu_head.visit_params_mut(&join(prefix, "mu_head"), f);
        self.log_sigma_head.visit_params_mut(&join(prefix, "log_sigma_head"), f);
    }
}
