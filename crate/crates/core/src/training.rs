//! End-to-end optimisation of encoder, flow prior and deformer.
//!
//! The per-sample objective is
//! `CD(V, proj(deform(template, z))) + w · (log q(z | X) − log p(z))` with
//! `z = mu + eps ⊙ sigma`, and every gradient is computed analytically.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::deformer::{
    chamfer_distance, chamfer_with_grad, project_points, project_points_backward, ChamferNorm, CorrespondenceSet,
    Deformer, DeformerConfig, ProjectionConfig,
};
use crate::encoder::{reparameterize, Encoder, EncoderConfig, EncoderInput, LatentPosterior};
use crate::flow::{FlowConfig, FlowPrior};
use crate::mesh::{
    select_medoid, subsample_template, Cohort, Split, SurfaceMesh, TemplatePointCloud, TemplateProvenance,
};
use crate::nn::{clip_grad_norm, join, Adam, Parameters};
use crate::random::{derive_seed, normal, normal_vec, rng_from_seed};
use crate::{Error, Result, Scalar};

const STREAM_INIT: u64 = 11;
const STREAM_ORDER: u64 = 12;
const STREAM_AUGMENT: u64 = 13;
const STREAM_EPS: u64 = 14;
const STREAM_TEMPLATE: u64 = 15;

/// Architecture of the three networks plus template and projection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub flow: FlowConfig,
    pub deformer: DeformerConfig,
    /// Number of template points `M`.
    pub template_points: usize,
    /// Absolute softmin temperature; when unset it is derived from the template mesh.
    pub projection_sigma: Option<f64>,
    /// Temperature as a multiple of the template mesh's mean edge length.
    pub projection_sigma_edge_fraction: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            flow: FlowConfig::default(),
            deformer: DeformerConfig::default(),
            template_points: 256,
            projection_sigma: None,
            projection_sigma_edge_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Epochs of pure Chamfer training before the prior term and template updates start.
    pub burn_in_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub kl_weight: f64,
    /// The prior weight ramps linearly to `kl_weight` over this many post-burn-in epochs.
    pub kl_warmup_epochs: usize,
    pub mask_ratio: f64,
    pub perturb_sigma: f64,
    /// Update cadence in epochs; 0 disables template updates.
    pub template_update_every: usize,
    pub template_samples: usize,
    pub grad_clip: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            burn_in_epochs: 50,
            batch_size: 4,
            learning_rate: 1e-3,
            kl_weight: 1e-3,
            kl_warmup_epochs: 10,
            mask_ratio: 0.1,
            perturb_sigma: 0.0,
            template_update_every: 50,
            template_samples: 500,
            grad_clip: Some(10.0),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.burn_in_epochs >= self.epochs {
            return Err(Error::invalid("train config: need epochs >= 1 and burn_in_epochs < epochs"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train config: batch_size must be >= 1"));
        }
        let non_neg = [self.learning_rate, self.kl_weight, self.perturb_sigma];
        if non_neg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("train config: learning_rate, kl_weight and perturb_sigma must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::invalid("train config: mask_ratio must lie in [0, 1)"));
        }
        if self.template_update_every > 0 && self.template_samples == 0 {
            return Err(Error::invalid("train config: template_samples must be >= 1"));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::invalid("train config: grad_clip must be positive"));
        }
        Ok(())
    }

    /// Prior weight in effect during `epoch` (0-based).
    pub fn kl_weight_at(&self, epoch: usize) -> f64 {
        if epoch < self.burn_in_epochs {
            return 0.0;
        }
        let since = (epoch - self.burn_in_epochs + 1) as f64;
        let ramp = if self.kl_warmup_epochs == 0 { 1.0 } else { (since / self.kl_warmup_epochs as f64).min(1.0) };
        self.kl_weight * ramp
    }
}

/// Encoder, flow prior and deformer together with the template they share.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel<T> {
    pub encoder: Encoder<T>,
    pub flow: FlowPrior<T>,
    pub deformer: Deformer<T>,
    pub template: TemplatePointCloud<T>,
    pub projection: ProjectionConfig<T>,
    pub config: ModelConfig,
    pub epoch: usize,
}

impl<T: Scalar> ShapeModel<T> {
    pub fn new(
        config: ModelConfig,
        template: TemplatePointCloud<T>,
        projection: ProjectionConfig<T>,
        seed: u64,
    ) -> Result<Self> {
        if template.is_empty() {
            return Err(Error::Empty("shape model: template has no points".into()));
        }
        let mut rng = rng_from_seed(derive_seed(seed, STREAM_INIT, 0));
        let encoder = Encoder::new(config.encoder.clone(), &mut rng)?;
        let latent = config.encoder.latent_dim;
        let flow = FlowPrior::new(&config.flow, latent, &mut rng)?;
        let deformer = Deformer::new(&config.deformer, latent, &mut rng)?;
        Ok(Self { encoder, flow, deformer, template, projection, config, epoch: 0 })
    }

    /// Medoid training mesh, farthest-point template and derived projection temperature.
    pub fn initialize(cohort: &Cohort<T>, config: ModelConfig, seed: u64) -> Result<Self> {
        let medoid = select_medoid(cohort)?;
        let template = subsample_template(medoid, config.template_points)?;
        let sigma = match config.projection_sigma {
            Some(s) => T::lit(s),
            None => medoid.mean_edge_length() * T::lit(config.projection_sigma_edge_fraction),
        };
        let projection = ProjectionConfig::new(sigma)?;
        for id in cohort.check_alignment(&template) {
            log::debug!("alignment warning for {id}");
        }
        Self::new(config, template, projection, seed)
    }

    pub fn latent_dim(&self) -> usize {
        self.config.encoder.latent_dim
    }

    pub fn posterior(&self, mesh: &SurfaceMesh<T>) -> Result<LatentPosterior<T>> {
        self.encoder.encode(mesh)
    }

    /// Raw decode of `z` on the current template (no projection).
    pub fn decode(&self, z: &Array1<T>) -> Result<Array2<T>> {
        Ok(self.deformer.forward(&self.template.points, z)?.0)
    }

    /// Decode of `z` projected onto the vertices of `mesh`.
    pub fn decode_projected(&self, z: &Array1<T>, mesh: &SurfaceMesh<T>) -> Result<Array2<T>> {
        let raw = self.decode(z)?;
        Ok(project_points(&raw, &mesh.vertex_matrix(), self.projection.sigma()).0)
    }

    /// Point prediction: posterior mean, decode, projection onto the input mesh.
    pub fn predict(&self, mesh: &SurfaceMesh<T>) -> Result<CorrespondenceSet<T>> {
        let post = self.posterior(mesh)?;
        let points = self.decode_projected(&post.mu, mesh)?;
        Ok(CorrespondenceSet { points, subject_id: mesh.subject_id.clone(), projected: true })
    }

    /// L2 Chamfer between the mesh vertices and its point prediction.
    pub fn reconstruction_chamfer(&self, mesh: &SurfaceMesh<T>) -> Result<T> {
        let pred = self.predict(mesh)?;
        chamfer_distance(&mesh.vertex_matrix(), &pred.points, ChamferNorm::L2)
    }

    /// A zeroed buffer with the same parameter layout, for gradients.
    pub fn zero_grad(&self) -> Self {
        let mut g = self.clone();
        g.fill_zero();
        g
    }
}

impl<T: Scalar> Parameters<T> for ShapeModel<T> {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &[T])) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.flow.visit_params(&join(prefix, "flow"), f);
        self.deformer.visit_params(&join(prefix, "deformer"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [T])) {
        self.encoder.visit_params_mut(&join(prefix, "encoder"), f);
        self.flow.visit_params_mut(&join(prefix, "flow"), f);
        self.deformer.visit_params_mut(&join(prefix, "deformer"), f);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts<T> {
    pub chamfer: T,
    /// Single-sample estimate `log q(z | X) − log p(z)`.
    pub kl: T,
}

fn check_loss<T: Scalar>(parts: LossParts<T>) -> Result<()> {
    if parts.chamfer.is_finite() && parts.kl.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteLoss { chamfer: parts.chamfer.as_f64(), kl: parts.kl.as_f64() })
    }
}

/// Objective on `mesh`, which is both the encoder input and the reconstruction target.
pub fn objective<T: Scalar>(
    model: &ShapeModel<T>,
    mesh: &SurfaceMesh<T>,
    eps: &Array1<T>,
    kl_weight: T,
) -> Result<(T, LossParts<T>)> {
    let input = EncoderInput::from_mesh(mesh, &model.config.encoder)?;
    objective_on(model, &input, &mesh.vertex_matrix(), eps, kl_weight)
}

/// Objective with a separate encoder input (for example an augmented copy) and target
/// vertex matrix.
pub fn objective_on<T: Scalar>(
    model: &ShapeModel<T>,
    input: &EncoderInput<T>,
    target: &Array2<T>,
    eps: &Array1<T>,
    kl_weight: T,
) -> Result<(T, LossParts<T>)> {
    let (post, _) = model.encoder.forward(input)?;
    let z = reparameterize(&post, eps)?;
    let (corr, _) = model.deformer.forward(&model.template.points, &z)?;
    let (proj, _) = project_points(&corr, target, model.projection.sigma());
    let chamfer = chamfer_distance(target, &proj, ChamferNorm::L2)?;
    let kl = post.log_density(&z) - model.flow.log_prob(&z)?;
    let parts = LossParts { chamfer, kl };
    check_loss(parts)?;
    Ok((chamfer + kl_weight * kl, parts))
}

/// [`objective_on`] plus gradients, accumulated into `grad`.
///
/// With `kl_weight = 0` the prior term is evaluated for reporting only and contributes
/// no gradient.
pub fn objective_with_grad<T: Scalar>(
    model: &ShapeModel<T>,
    input: &EncoderInput<T>,
    target: &Array2<T>,
    eps: &Array1<T>,
    kl_weight: T,
    grad: &mut ShapeModel<T>,
) -> Result<(T, LossParts<T>)> {
    let (post, enc_cache) = model.encoder.forward(input)?;
    let z = reparameterize(&post, eps)?;
    let (corr, def_cache) = model.deformer.forward(&model.template.points, &z)?;
    let (proj, proj_cache) = project_points(&corr, target, model.projection.sigma());
    let (chamfer, _, d_proj) = chamfer_with_grad(target, &proj, ChamferNorm::L2)?;
    let log_q = post.log_density(&z);

    let (d_corr, _) = project_points_backward(&proj_cache, &d_proj);
    let mut d_z = model.deformer.backward(&def_cache, &d_corr, &mut grad.deformer);
    let mut d_sigma = Array1::zeros(post.dim());
    let log_p = if kl_weight != T::zero() {
        // d/dz of −w·log p(z); log q has zero total derivative w.r.t. mu and −1/sigma w.r.t. sigma
        let (lp, d_neg_lp) = model.flow.log_prob_backward(&z, -kl_weight, &mut grad.flow)?;
        d_z += &d_neg_lp;
        d_sigma -= &post.sigma.mapv(|s| kl_weight / s);
        lp
    } else {
        model.flow.log_prob(&z)?
    };
    d_sigma += &(&d_z * eps);
    model.encoder.backward(&enc_cache, &d_z, &d_sigma, &mut grad.encoder);

    let parts = LossParts { chamfer, kl: log_q - log_p };
    check_loss(parts)?;
    Ok((chamfer + kl_weight * parts.kl, parts))
}

/// Encoder-input augmentation: drops `floor(mask_ratio · K)` uniformly chosen vertices
/// with their incident faces and perturbs the rest with Gaussian noise.
pub fn augment<T: Scalar>(
    mesh: &SurfaceMesh<T>,
    mask_ratio: f64,
    perturb_sigma: f64,
    seed: u64,
) -> Result<SurfaceMesh<T>> {
    if !(0.0..1.0).contains(&mask_ratio) {
        return Err(Error::invalid("augment: mask_ratio must lie in [0, 1)"));
    }
    if !(perturb_sigma >= 0.0) {
        return Err(Error::invalid("augment: perturb_sigma must be >= 0"));
    }
    let k = mesh.num_vertices();
    let n_mask = (mask_ratio * k as f64).floor() as usize;
    if n_mask == 0 && perturb_sigma == 0.0 {
        return Ok(mesh.clone());
    }
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    let mut keep = vec![true; k];
    for &i in &order[..n_mask] {
        keep[i] = false;
    }
    let mut remap = vec![usize::MAX; k];
    let mut vertices = Vec::with_capacity(k - n_mask);
    for i in 0..k {
        if keep[i] {
            remap[i] = vertices.len();
            vertices.push(mesh.vertices[i]);
        }
    }
    let faces: Vec<[usize; 3]> = mesh
        .faces
        .iter()
        .filter(|f| f.iter().all(|&v| keep[v]))
        .map(|f| [remap[f[0]], remap[f[1]], remap[f[2]]])
        .collect();
    if faces.is_empty() && !mesh.faces.is_empty() {
        return Err(Error::invalid("augment: masking removed every face"));
    }
    if perturb_sigma > 0.0 {
        let s = T::lit(perturb_sigma);
        for v in &mut vertices {
            for c in v.iter_mut() {
                *c += s * normal::<T, _>(&mut rng);
            }
        }
    }
    SurfaceMesh::new(vertices, faces, mesh.subject_id.clone())
}

/// Mean of `samples` prior draws decoded on the current template.
pub fn update_template<T: Scalar>(model: &ShapeModel<T>, samples: usize, seed: u64) -> Result<TemplatePointCloud<T>> {
    let zs = model.flow.sample(samples, seed)?;
    let mut acc = Array2::zeros(model.template.points.dim());
    for z in zs.axis_iter(Axis(0)) {
        acc += &model.decode(&z.to_owned())?;
    }
    acc /= T::from_usize_lossy(samples);
    Ok(TemplatePointCloud { points: acc, provenance: TemplateProvenance::DataInformed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub chamfer: f64,
    pub kl: f64,
    pub val_chamfer: f64,
    pub kl_weight: f64,
    pub template_updated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainStatus {
    Completed,
    Diverged { epoch: usize, reason: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Checkpoint with the lowest validation Chamfer.
    pub model: ShapeModel<T>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
    pub status: TrainStatus,
}

/// `epoch,chamfer,kl,val_chamfer` rows.
pub fn loss_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,chamfer,kl,val_chamfer\n");
    for e in log {
        writeln!(out, "{},{},{},{}", e.epoch, e.chamfer, e.kl, e.val_chamfer).expect("write to string");
    }
    out
}

pub fn train<T: Scalar>(cohort: &Cohort<T>, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    let model = ShapeModel::initialize(cohort, model_cfg.clone(), cfg.seed)?;
    train_model(model, cohort, cfg, &mut |_| {})
}

/// Trains an existing model; `observer` sees every epoch's log entry as it completes.
pub fn train_model<T: Scalar>(
    mut model: ShapeModel<T>,
    cohort: &Cohort<T>,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let train_idx = cohort.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::Empty("train: cohort has no training meshes".into()));
    }
    let mut val_idx = cohort.indices(Split::Val);
    if val_idx.is_empty() {
        val_idx = train_idx.clone();
    }
    let enc_cfg = model.config.encoder.clone();
    let augmenting = cfg.mask_ratio > 0.0 || cfg.perturb_sigma > 0.0;
    let targets: Vec<Array2<T>> = cohort.meshes.iter().map(|m| m.vertex_matrix()).collect();
    let mut clean_inputs: Vec<Option<EncoderInput<T>>> = vec![None; cohort.len()];
    for &i in train_idx.iter().chain(&val_idx) {
        if clean_inputs[i].is_none() && (!augmenting || val_idx.contains(&i)) {
            clean_inputs[i] = Some(EncoderInput::from_mesh(&cohort.meshes[i], &enc_cfg)?);
        }
    }

    let mut adam = Adam::new(model.num_params(), T::lit(cfg.learning_rate));
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let start_epoch = model.epoch;
    let latent = model.latent_dim();
    let n_train = train_idx.len() as u64;

    let validate = |m: &ShapeModel<T>| -> Result<f64> {
        let mut total = 0.0;
        for &i in &val_idx {
            let input = clean_inputs[i].as_ref().expect("validation inputs are prepared");
            let post = m.encoder.forward(input)?.0;
            let raw = m.decode(&post.mu)?;
            let proj = project_points(&raw, &targets[i], m.projection.sigma()).0;
            total += chamfer_distance(&targets[i], &proj, ChamferNorm::L2)?.as_f64();
        }
        Ok(total / val_idx.len() as f64)
    };

    for e in 0..cfg.epochs {
        let epoch = start_epoch + e;
        let w = cfg.kl_weight_at(e);
        let kl_weight = T::lit(w);
        let mut order = train_idx.clone();
        order.shuffle(&mut rng_from_seed(derive_seed(cfg.seed, STREAM_ORDER, epoch as u64)));
        let mut sum_cd = 0.0;
        let mut sum_kl = 0.0;
        let mut failure: Option<String> = None;

        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grad = model.zero_grad();
            for (j, &i) in batch.iter().enumerate() {
                let step = epoch as u64 * n_train + (b * cfg.batch_size + j) as u64;
                let augmented;
                let input = if augmenting {
                    let mesh = augment(
                        &cohort.meshes[i],
                        cfg.mask_ratio,
                        cfg.perturb_sigma,
                        derive_seed(cfg.seed, STREAM_AUGMENT, step),
                    )?;
                    augmented = EncoderInput::from_mesh(&mesh, &enc_cfg)?;
                    &augmented
                } else {
                    clean_inputs[i].as_ref().expect("clean inputs are prepared")
                };
                let mut eps_rng = rng_from_seed(derive_seed(cfg.seed, STREAM_EPS, step));
                let eps = Array1::from(normal_vec::<T, _>(&mut eps_rng, latent));
                match objective_with_grad(&model, input, &targets[i], &eps, kl_weight, &mut grad) {
                    Ok((_, parts)) => {
                        sum_cd += parts.chamfer.as_f64();
                        sum_kl += parts.kl.as_f64();
                    }
                    Err(err @ (Error::NonFinite { .. } | Error::NonFiniteLoss { .. })) => {
                        failure = Some(err.to_string());
                        break;
                    }
                    Err(err) => return Err(err),
                }
            }
            if failure.is_some() {
                break;
            }
            let mut g = grad.flatten();
            let inv = T::one() / T::from_usize_lossy(batch.len());
            g.iter_mut().for_each(|v| *v *= inv);
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut g, T::lit(c));
            }
            if !g.iter().all(|v| v.is_finite()) {
                failure = Some("non-finite gradient".into());
                break;
            }
            let mut p = model.flatten();
            adam.step(&mut p, &g);
            model.load_flat(&p);
        }

        let mut template_updated = false;
        if failure.is_none()
            && cfg.template_update_every > 0
            && e >= cfg.burn_in_epochs
            && (e + 1 - cfg.burn_in_epochs) % cfg.template_update_every == 0
        {
            match update_template(&model, cfg.template_samples, derive_seed(cfg.seed, STREAM_TEMPLATE, epoch as u64)) {
                Ok(t) if t.points.iter().all(|v| v.is_finite()) => {
                    model.template = t;
                    template_updated = true;
                }
                Ok(_) => failure = Some("template update produced non-finite points".into()),
                Err(err) => failure = Some(err.to_string()),
            }
        }
        model.epoch = epoch + 1;
        let val = match failure {
            None => match validate(&model) {
                Ok(v) if v.is_finite() => Some(v),
                Ok(_) => {
                    failure = Some("non-finite validation chamfer".into());
                    None
                }
                Err(err) => {
                    failure = Some(err.to_string());
                    None
                }
            },
            Some(_) => None,
        };
        if let Some(reason) = failure {
            log::warn!("training diverged at epoch {epoch}: {reason}");
            return Ok(TrainOutcome { model: best, best_epoch, log, status: TrainStatus::Diverged { epoch, reason } });
        }
        let val = val.expect("set when no failure");
        let n = n_train as f64;
        let entry =
            EpochLog { epoch, chamfer: sum_cd / n, kl: sum_kl / n, val_chamfer: val, kl_weight: w, template_updated };
        log::debug!("epoch {epoch}: chamfer {:.6e} kl {:.4} val {:.6e}", entry.chamfer, entry.kl, entry.val_chamfer);
        observer(&entry);
        log.push(entry);
        if val < best_val {
            best_val = val;
            best = model.clone();
            best_epoch = epoch;
        }
    }
    Ok(TrainOutcome { model: best, best_epoch, log, status: TrainStatus::Completed })
}
