//! Generator/discriminator pair, adversarial losses, training and scoring.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::mlp::{
    self, backward, clamp_probability, forward_trace, HiddenActivation, MlpError, MlpSpec,
    OutputActivation, ParamVector,
};

/// Noise dimension of the default generator.
pub const DEFAULT_NOISE_DIM: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum GanError {
    #[error(transparent)]
    Mlp(#[from] MlpError),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch sample {index} has dimension {got}, expected {expected}")]
    SampleDim {
        index: usize,
        expected: usize,
        got: usize,
    },
    #[error("batch has {samples} samples but {labels} labels")]
    LabelCount { samples: usize, labels: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("no genuine samples to train on")]
    NoGenuineSamples,
    #[error("threshold {0} is outside (0, 1)")]
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Genuine,
    Malicious,
}

impl Label {
    pub fn flipped(self) -> Self {
        match self {
            Label::Genuine => Label::Malicious,
            Label::Malicious => Label::Genuine,
        }
    }
}

/// A set of equally sized feature vectors, optionally labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    samples: Vec<Vec<f64>>,
    labels: Option<Vec<Label>>,
}

impl Batch {
    pub fn new(samples: Vec<Vec<f64>>) -> Result<Self, GanError> {
        Self::build(samples, None)
    }

    pub fn labelled(samples: Vec<Vec<f64>>, labels: Vec<Label>) -> Result<Self, GanError> {
        Self::build(samples, Some(labels))
    }

    fn build(samples: Vec<Vec<f64>>, labels: Option<Vec<Label>>) -> Result<Self, GanError> {
        let first = samples.first().ok_or(GanError::EmptyBatch)?;
        let dim = first.len();
        if let Some((index, s)) = samples.iter().enumerate().find(|(_, s)| s.len() != dim) {
            return Err(GanError::SampleDim {
                index,
                expected: dim,
                got: s.len(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != samples.len() {
                return Err(GanError::LabelCount {
                    samples: samples.len(),
                    labels: l.len(),
                });
            }
        }
        Ok(Self { samples, labels })
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    /// Label of sample `i`; unlabelled batches count as genuine.
    pub fn label(&self, i: usize) -> Label {
        self.labels.as_ref().map_or(Label::Genuine, |l| l[i])
    }

    pub fn with_label(&self, label: Label) -> Vec<&[f64]> {
        (0..self.len())
            .filter(|&i| self.label(i) == label)
            .map(|i| self.samples[i].as_slice())
            .collect()
    }

    fn check_dim(&self, expected: usize) -> Result<(), GanError> {
        if self.dim() != expected {
            return Err(GanError::SampleDim {
                index: 0,
                expected,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

/// Generator and discriminator parameters travelling together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub generator: ParamVector,
    pub discriminator: ParamVector,
}

/// Short content hash of a model, used for provenance traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelHash(pub u64);

impl std::fmt::Display for ModelHash {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl Serialize for ModelHash {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelHash {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        u64::from_str_radix(&s, 16)
            .map(ModelHash)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    generator_spec: MlpSpec,
    discriminator_spec: MlpSpec,
    params: ModelParams,
}

impl GanModel {
    pub fn new(
        generator_spec: MlpSpec,
        discriminator_spec: MlpSpec,
        params: ModelParams,
    ) -> Result<Self, GanError> {
        if generator_spec.output_dim() != discriminator_spec.input_dim() {
            return Err(GanError::InvalidModel(format!(
                "generator emits {} features, discriminator reads {}",
                generator_spec.output_dim(),
                discriminator_spec.input_dim()
            )));
        }
        if discriminator_spec.output_dim() != 1
            || discriminator_spec.output_activation() != OutputActivation::Sigmoid
        {
            return Err(GanError::InvalidModel(
                "discriminator must have a single sigmoid output".into(),
            ));
        }
        generator_spec.check_params(&params.generator)?;
        discriminator_spec.check_params(&params.discriminator)?;
        if !params.generator.is_finite() || !params.discriminator.is_finite() {
            return Err(GanError::InvalidModel("non-finite parameters".into()));
        }
        Ok(Self {
            generator_spec,
            discriminator_spec,
            params,
        })
    }

    /// Default architecture for `feature_dim` features: discriminator
    /// `[d, 16, 8, 1]` (relu, sigmoid) and generator `[4, 16, d]` (tanh,
    /// identity), seeded Glorot initialisation.
    pub fn init_default(feature_dim: usize, seed: u64) -> Result<Self, GanError> {
        let generator_spec = MlpSpec::new(
            vec![DEFAULT_NOISE_DIM, 16, feature_dim],
            HiddenActivation::Tanh,
            OutputActivation::Identity,
        )?;
        let discriminator_spec = MlpSpec::new(
            vec![feature_dim, 16, 8, 1],
            HiddenActivation::Relu,
            OutputActivation::Sigmoid,
        )?;
        Self::init(generator_spec, discriminator_spec, seed)
    }

    pub fn init(
        generator_spec: MlpSpec,
        discriminator_spec: MlpSpec,
        seed: u64,
    ) -> Result<Self, GanError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams {
            generator: generator_spec.init_params(&mut rng),
            discriminator: discriminator_spec.init_params(&mut rng),
        };
        Self::new(generator_spec, discriminator_spec, params)
    }

    pub fn generator_spec(&self) -> &MlpSpec {
        &self.generator_spec
    }

    pub fn discriminator_spec(&self) -> &MlpSpec {
        &self.discriminator_spec
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn noise_dim(&self) -> usize {
        self.generator_spec.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.discriminator_spec.input_dim()
    }

    /// Same architecture, new parameters.
    pub fn with_params(&self, params: ModelParams) -> Result<Self, GanError> {
        Self::new(
            self.generator_spec.clone(),
            self.discriminator_spec.clone(),
            params,
        )
    }

    pub fn hash(&self) -> ModelHash {
        let mut bytes = Vec::new();
        self.params
            .generator
            .write_bytes(&self.generator_spec, &mut bytes);
        self.params
            .discriminator
            .write_bytes(&self.discriminator_spec, &mut bytes);
        let digest = Sha256::digest(&bytes);
        ModelHash(u64::from_le_bytes(digest[..8].try_into().unwrap()))
    }

    /// D(x), clamped to `[1e-7, 1 - 1e-7]`.
    pub fn discriminate(&self, x: &[f64]) -> Result<f64, GanError> {
        Ok(mlp::forward(&self.discriminator_spec, &self.params.discriminator, x)?[0])
    }

    /// G(z).
    pub fn generate(&self, noise: &[f64]) -> Result<Vec<f64>, GanError> {
        Ok(mlp::forward(
            &self.generator_spec,
            &self.params.generator,
            noise,
        )?)
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                (0..self.noise_dim())
                    .map(|_| rng.sample(StandardNormal))
                    .collect()
            })
            .collect()
    }
}

fn mean_log<'a>(
    model: &GanModel,
    samples: impl IntoIterator<Item = &'a [f64]>,
    complement: bool,
) -> Result<f64, GanError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for x in samples {
        let d = clamp_probability(model.discriminate(x)?);
        sum += if complement { (1.0 - d).ln() } else { d.ln() };
        n += 1;
    }
    if n == 0 {
        return Err(GanError::EmptyBatch);
    }
    Ok(sum / n as f64)
}

/// Mean of `ln D(x)` over a batch.
pub fn real_term(model: &GanModel, batch: &Batch) -> Result<f64, GanError> {
    batch.check_dim(model.feature_dim())?;
    mean_log(model, batch.samples.iter().map(Vec::as_slice), false)
}

/// Mean of `ln(1 - D(x))` over a batch.
pub fn fake_term(model: &GanModel, batch: &Batch) -> Result<f64, GanError> {
    batch.check_dim(model.feature_dim())?;
    mean_log(model, batch.samples.iter().map(Vec::as_slice), true)
}

/// Empirical adversarial value: `mean ln D(real) + mean ln(1 - D(fake))`.
pub fn value_function(model: &GanModel, real: &Batch, fake: &Batch) -> Result<f64, GanError> {
    Ok(real_term(model, real)? + fake_term(model, fake)?)
}

/// The discriminator maximises the value function, so its loss is the negation.
pub fn discriminator_loss(model: &GanModel, real: &Batch, fake: &Batch) -> Result<f64, GanError> {
    Ok(-value_function(model, real, fake)?)
}

/// Non-saturating generator loss `-mean ln D(x)` over generated samples.
pub fn generator_loss(model: &GanModel, fake: &Batch) -> Result<f64, GanError> {
    Ok(-real_term(model, fake)?)
}

/// Which loss to differentiate, and with respect to which network.
#[derive(Debug, Clone, Copy)]
pub enum LossKind<'a> {
    /// [`discriminator_loss`] w.r.t. discriminator parameters.
    Discriminator { real: &'a Batch, fake: &'a Batch },
    /// Non-saturating generator loss of `G(noise)` w.r.t. generator
    /// parameters; the discriminator is held fixed.
    Generator { noise: &'a Batch },
}

/// Exact gradient of the chosen empirical loss.
pub fn backprop(model: &GanModel, loss: LossKind<'_>) -> Result<ParamVector, GanError> {
    match loss {
        LossKind::Discriminator { real, fake } => {
            real.check_dim(model.feature_dim())?;
            fake.check_dim(model.feature_dim())?;
            discriminator_gradient(
                model,
                real.samples.iter().map(Vec::as_slice),
                real.len(),
                fake.samples.iter().map(Vec::as_slice),
                fake.len(),
            )
        }
        LossKind::Generator { noise } => {
            noise.check_dim(model.noise_dim())?;
            generator_gradient(model, noise.samples())
        }
    }
}

fn discriminator_gradient<'a>(
    model: &GanModel,
    real: impl Iterator<Item = &'a [f64]>,
    real_len: usize,
    fake: impl Iterator<Item = &'a [f64]>,
    fake_len: usize,
) -> Result<ParamVector, GanError> {
    let spec = &model.discriminator_spec;
    let params = &model.params.discriminator;
    let mut grad = vec![0.0; params.len()];
    // d/dD of -ln D / R and of -ln(1 - D) / F
    for x in real {
        let trace = forward_trace(spec, params, x)?;
        let d = trace.output()[0];
        backward(
            spec,
            params,
            &trace,
            &[-1.0 / (real_len as f64 * d)],
            &mut grad,
        )?;
    }
    for x in fake {
        let trace = forward_trace(spec, params, x)?;
        let d = trace.output()[0];
        backward(
            spec,
            params,
            &trace,
            &[1.0 / (fake_len as f64 * (1.0 - d))],
            &mut grad,
        )?;
    }
    Ok(ParamVector(grad))
}

fn generator_gradient(model: &GanModel, noise: &[Vec<f64>]) -> Result<ParamVector, GanError> {
    let (g_spec, d_spec) = (&model.generator_spec, &model.discriminator_spec);
    let (g_params, d_params) = (&model.params.generator, &model.params.discriminator);
    let mut g_grad = vec![0.0; g_params.len()];
    let mut d_scratch = vec![0.0; d_params.len()];
    let n = noise.len() as f64;
    for z in noise {
        let g_trace = forward_trace(g_spec, g_params, z)?;
        let d_trace = forward_trace(d_spec, d_params, g_trace.output())?;
        let d = d_trace.output()[0];
        let x_grad = backward(
            d_spec,
            d_params,
            &d_trace,
            &[-1.0 / (n * d)],
            &mut d_scratch,
        )?;
        backward(g_spec, g_params, &g_trace, &x_grad, &mut g_grad)?;
    }
    Ok(ParamVector(g_grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainHyper {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Append malicious-labelled local samples to the discriminator's fake pool.
    pub semi_supervised: bool,
    /// Reference points per discriminator step, as a fraction of
    /// `batch_size`, drawn uniformly from a box of half-width
    /// [`REFERENCE_SPAN`] standard deviations around the genuine pool and
    /// added to the fake pool. Zero gives plain GAN training.
    #[serde(default)]
    pub reference_fraction: f64,
}

/// Half-width, in per-feature standard deviations, of the reference box.
pub const REFERENCE_SPAN: f64 = 6.0;

impl TrainHyper {
    fn validate(&self) -> Result<(), GanError> {
        if self.steps == 0 {
            return Err(GanError::InvalidHyper("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(GanError::InvalidHyper(
                "batch_size must be at least 1".into(),
            ));
        }
        if !(0.0..=4.0).contains(&self.reference_fraction) {
            return Err(GanError::InvalidHyper(format!(
                "reference_fraction {} outside [0, 4]",
                self.reference_fraction
            )));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(GanError::InvalidHyper(format!(
                "learning rate {} must be finite and non-negative",
                self.lr
            )));
        }
        Ok(())
    }
}

/// Losses measured before the updates of one alternating step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub discriminator: f64,
    pub generator: f64,
}

fn sgd_step(params: &mut ParamVector, grad: &ParamVector, lr: f64) {
    for (p, g) in params.0.iter_mut().zip(&grad.0) {
        *p -= lr * g;
    }
}

fn sample_rows<'a, R: Rng + ?Sized>(rng: &mut R, pool: &[&'a [f64]], n: usize) -> Vec<&'a [f64]> {
    (0..n)
        .map(|_| pool[rng.random_range(0..pool.len())])
        .collect()
}

fn reference_box(pool: &[&[f64]]) -> Vec<(f64, f64)> {
    let n = pool.len() as f64;
    (0..pool[0].len())
        .map(|j| {
            let mean = pool.iter().map(|x| x[j]).sum::<f64>() / n;
            let var = pool.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n;
            let half = REFERENCE_SPAN * var.sqrt().max(1e-3);
            (mean - half, mean + half)
        })
        .collect()
}

/// Runs `steps` alternating updates (one discriminator SGD step, then one
/// generator SGD step) on minibatches drawn with replacement from the
/// genuine-labelled part of `local_data`.
pub fn train_round(
    model: &GanModel,
    local_data: &Batch,
    hyper: &TrainHyper,
) -> Result<(GanModel, Vec<StepLoss>), GanError> {
    hyper.validate()?;
    local_data.check_dim(model.feature_dim())?;
    let genuine = local_data.with_label(Label::Genuine);
    if genuine.is_empty() {
        return Err(GanError::NoGenuineSamples);
    }
    let malicious = if hyper.semi_supervised {
        local_data.with_label(Label::Malicious)
    } else {
        Vec::new()
    };

    let reference_count = (hyper.reference_fraction * hyper.batch_size as f64).ceil() as usize;
    let reference_box = reference_box(&genuine);

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut current = model.clone();
    let mut trace = Vec::with_capacity(hyper.steps);
    let b = hyper.batch_size;

    for _ in 0..hyper.steps {
        let real = sample_rows(&mut rng, &genuine, b);
        let noise = current.sample_noise(&mut rng, b);
        let mut generated = Vec::with_capacity(b);
        for z in &noise {
            generated.push(current.generate(z)?);
        }
        let mut fake: Vec<&[f64]> = generated.iter().map(Vec::as_slice).collect();
        if !malicious.is_empty() {
            fake.extend(sample_rows(&mut rng, &malicious, b));
        }
        let reference: Vec<Vec<f64>> = (0..reference_count)
            .map(|_| {
                reference_box
                    .iter()
                    .map(|&(lo, hi)| rng.random_range(lo..=hi))
                    .collect()
            })
            .collect();
        fake.extend(reference.iter().map(Vec::as_slice));
        let d_loss = -(mean_log(&current, real.iter().copied(), false)?
            + mean_log(&current, fake.iter().copied(), true)?);
        let d_grad = discriminator_gradient(
            &current,
            real.iter().copied(),
            real.len(),
            fake.iter().copied(),
            fake.len(),
        )?;
        sgd_step(&mut current.params.discriminator, &d_grad, hyper.lr);

        let noise = current.sample_noise(&mut rng, b);
        let mut g_loss = 0.0;
        for z in &noise {
            let x = current.generate(z)?;
            g_loss -= clamp_probability(current.discriminate(&x)?).ln();
        }
        g_loss /= b as f64;
        let g_grad = generator_gradient(&current, &noise)?;
        sgd_step(&mut current.params.generator, &g_grad, hyper.lr);

        trace.push(StepLoss {
            discriminator: d_loss,
            generator: g_loss,
        });
    }
    if !current.params.generator.is_finite() || !current.params.discriminator.is_finite() {
        return Err(GanError::Mlp(MlpError::NonFinite {
            layer: current.discriminator_spec.depth() - 1,
        }));
    }
    Ok((current, trace))
}

/// `1 - D(x)`: high for traffic unlike the genuine distribution.
pub fn anomaly_score(model: &GanModel, x: &[f64]) -> Result<f64, GanError> {
    Ok(1.0 - model.discriminate(x)?)
}

/// Malicious iff the anomaly score reaches the threshold (ties alert).
pub fn classify(model: &GanModel, x: &[f64], threshold: f64) -> Result<Label, GanError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(GanError::Threshold(threshold));
    }
    Ok(if anomaly_score(model, x)? >= threshold {
        Label::Malicious
    } else {
        Label::Genuine
    })
}
