//! Supervised fitting of the feature unit and gradient head against the
//! oracle displacement field, with hand-written backpropagation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{Dense, FieldNetwork, DESCRIPTOR_DIM, FEATURE_DIM, FEATURE_HIDDEN, HEAD_HIDDEN};
use super::{GradientField, LearnedField, OracleField};
use crate::error::{Error, Result};
use crate::geometry::{NeighborIndex, Point3, PointCloud, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// `|U|` minus the anchor itself, which is always appended.
    pub samples_per_point: usize,
    /// Ball radius for neighborhood samples; `None` means twice the frame's
    /// mean nearest-neighbor spacing.
    pub sample_radius: Option<f64>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Anchors averaged per query by the trained field.
    pub k_ensemble: usize,
    /// Neighborhood size for the local-geometry descriptor.
    pub k_feat: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            samples_per_point: 8,
            sample_radius: None,
            learning_rate: 0.05,
            epochs: 50,
            batch_size: 16,
            seed: 1,
            k_ensemble: 32,
            k_feat: 16,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples_per_point == 0 {
            return Err(Error::config("samples_per_point", "must be >= 1"));
        }
        if let Some(r) = self.sample_radius {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::config("sample_radius", "must be > 0"));
            }
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        if self.k_ensemble == 0 {
            return Err(Error::config("k_ensemble", "must be >= 1"));
        }
        if self.k_feat == 0 {
            return Err(Error::config("k_feat", "must be >= 1"));
        }
        Ok(())
    }

    fn radius_for(&self, frame: &PointCloud) -> Result<f64> {
        match self.sample_radius {
            Some(r) => Ok(r),
            None => Ok(2.0 * frame.mean_spacing()?),
        }
    }
}

/// `count` points uniform in the ball of `radius` around `center`
/// (rejection sampling), followed by `center` itself.
pub fn sample_neighborhood(center: &Point3, count: usize, radius: f64, rng: &mut impl Rng) -> Vec<Point3> {
    let mut out = Vec::with_capacity(count + 1);
    while out.len() < count {
        let d = Vec3::new(
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
            rng.gen_range(-1.0..=1.0),
        );
        if d.norm_squared() <= 1.0 {
            out.push(center + d * radius);
        }
    }
    out.push(*center);
    out
}

/// Anchors, fixed descriptors and one draw of neighborhood samples with
/// their oracle targets.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub anchors: Vec<Point3>,
    pub descriptors: Vec<[f64; DESCRIPTOR_DIM]>,
    pub samples: Vec<Vec<Point3>>,
    pub targets: Vec<Vec<Vec3>>,
}

/// Gradient of the loss with respect to every network parameter.
pub type NetworkGradient = FieldNetwork;

impl TrainingSet {
    pub fn new(
        frame: &PointCloud,
        clean: &PointCloud,
        k_feat: usize,
        samples_per_point: usize,
        radius: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        frame.ensure_non_empty()?;
        clean.ensure_non_empty()?;
        if k_feat > frame.len() {
            return Err(Error::KExceedsCloudSize {
                k: k_feat,
                n: frame.len(),
            });
        }
        let index = NeighborIndex::new(frame)?;
        let probe = FieldNetwork::zeros(k_feat);
        let descriptors = probe.descriptors(frame, &index)?;
        let oracle = OracleField::new(clean)?;
        let mut set = Self {
            anchors: frame.points.clone(),
            descriptors,
            samples: Vec::new(),
            targets: Vec::new(),
        };
        set.resample(&oracle, samples_per_point, radius, rng);
        Ok(set)
    }

    pub fn resample(&mut self, oracle: &OracleField, count: usize, radius: f64, rng: &mut impl Rng) {
        self.samples = self
            .anchors
            .iter()
            .map(|a| sample_neighborhood(a, count, radius, rng))
            .collect();
        self.targets = self
            .samples
            .iter()
            .map(|u| u.iter().map(|x| oracle.eval(x)).collect())
            .collect();
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// `ℒ = (1/N) Σᵢ (1/|U|) Σ_{x∈Uᵢ} ‖g(x) − 𝒢ᵢ(x)‖²`.
    pub fn loss(&self, network: &FieldNetwork) -> f64 {
        let total: f64 = (0..self.len()).map(|i| self.point_loss(network, i)).sum();
        total / self.len() as f64
    }

    fn point_loss(&self, network: &FieldNetwork, i: usize) -> f64 {
        let feature = network.feature_forward(&self.descriptors[i]).feature;
        let u = &self.samples[i];
        let sum: f64 = u
            .iter()
            .zip(&self.targets[i])
            .map(|(x, g)| {
                let out = network.head_forward(&(x - self.anchors[i]), &feature).output;
                (out - g).norm_squared()
            })
            .sum();
        sum / u.len() as f64
    }

    /// Mean loss over `points` and its gradient.
    pub fn loss_and_gradient(&self, network: &FieldNetwork, points: &[usize]) -> (f64, NetworkGradient) {
        let mut grad = FieldNetwork::zeros(network.k_feat);
        let mut loss = 0.0;
        let batch = points.len().max(1) as f64;
        let mut d_hidden = [0.0; HEAD_HIDDEN];
        let mut d_head_in = [0.0; 3 + FEATURE_DIM];
        let mut d_fhidden = [0.0; FEATURE_HIDDEN];
        let mut d_desc = [0.0; DESCRIPTOR_DIM];

        for &i in points {
            let ft = network.feature_forward(&self.descriptors[i]);
            let u = &self.samples[i];
            let scale = 2.0 / (u.len() as f64 * batch);
            let mut d_feature = [0.0; FEATURE_DIM];
            for (x, g) in u.iter().zip(&self.targets[i]) {
                let ht = network.head_forward(&(x - self.anchors[i]), &ft.feature);
                let err = ht.output - g;
                loss += err.norm_squared() / (u.len() as f64 * batch);
                let d_out = [err.x * scale, err.y * scale, err.z * scale];
                network
                    .head_out
                    .backward(&ht.hidden, &d_out, &mut grad.head_out, &mut d_hidden);
                tanh_backward(&mut d_hidden, &ht.hidden);
                network
                    .head_in
                    .backward(&ht.input, &d_hidden, &mut grad.head_in, &mut d_head_in);
                for (acc, d) in d_feature.iter_mut().zip(&d_head_in[3..]) {
                    *acc += d;
                }
            }
            tanh_backward(&mut d_feature, &ft.feature);
            network
                .feature_out
                .backward(&ft.hidden, &d_feature, &mut grad.feature_out, &mut d_fhidden);
            tanh_backward(&mut d_fhidden, &ft.hidden);
            network
                .feature_in
                .backward(&self.descriptors[i], &d_fhidden, &mut grad.feature_in, &mut d_desc);
        }
        (loss, grad)
    }
}

fn tanh_backward(d: &mut [f64], activated: &[f64]) {
    for (g, a) in d.iter_mut().zip(activated) {
        *g *= 1.0 - a * a;
    }
}

fn sgd_step(network: &mut FieldNetwork, grad: &NetworkGradient, lr: f64) {
    let grads: [&Dense; 4] = [&grad.feature_in, &grad.feature_out, &grad.head_in, &grad.head_out];
    for (layer, g) in network.layers_mut().into_iter().zip(grads) {
        for (w, dw) in layer.weights.iter_mut().zip(&g.weights) {
            *w -= lr * dw;
        }
        for (b, db) in layer.bias.iter_mut().zip(&g.bias) {
            *b -= lr * db;
        }
    }
}

/// Loss of `network` on `frame` against the oracle field of `clean`, with
/// neighborhood samples drawn from `config.seed`.
pub fn field_loss(
    frame: &PointCloud,
    clean: &PointCloud,
    network: &FieldNetwork,
    config: &TrainingConfig,
) -> Result<f64> {
    config.validate()?;
    let radius = config.radius_for(frame)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let set = TrainingSet::new(frame, clean, network.k_feat, config.samples_per_point, radius, &mut rng)?;
    Ok(set.loss(network))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Loss on a fixed evaluation draw before training and after each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainingReport {
    pub fn initial_loss(&self) -> f64 {
        self.epoch_losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().expect("at least the initial loss")
    }
}

/// Plain minibatch SGD on the field loss, starting from seeded random weights.
pub fn train_field(
    frame: &PointCloud,
    clean: &PointCloud,
    config: &TrainingConfig,
) -> Result<(LearnedField, TrainingReport)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let network = FieldNetwork::random(config.k_feat, &mut rng);
    train_network(network, frame, clean, config)
}

/// Continues training from an existing network.
pub fn train_network(
    mut network: FieldNetwork,
    frame: &PointCloud,
    clean: &PointCloud,
    config: &TrainingConfig,
) -> Result<(LearnedField, TrainingReport)> {
    config.validate()?;
    let radius = config.radius_for(frame)?;
    let oracle = OracleField::new(clean)?;

    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_e7a1);
    let eval_set = TrainingSet::new(
        frame,
        clean,
        network.k_feat,
        config.samples_per_point,
        radius,
        &mut eval_rng,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut train_set = eval_set.clone();

    let mut losses = vec![eval_set.loss(&network)];
    if !losses[0].is_finite() {
        return Err(Error::NonFinite("initial training loss".into()));
    }
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        train_set.resample(&oracle, config.samples_per_point, radius, &mut rng);
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = train_set.loss_and_gradient(&network, batch);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at epoch {epoch} (lr {})",
                    config.learning_rate
                )));
            }
            sgd_step(&mut network, &grad, config.learning_rate);
        }
        let loss = eval_set.loss(&network);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("evaluation loss after epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: loss {loss:.6e}");
        losses.push(loss);
    }

    let field = LearnedField::new(network, frame, config.k_ensemble)?;
    Ok((field, TrainingReport { epoch_losses: losses }))
}
