use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{NormalizationParams, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::intervals::{ScenarioSet, Units};
use crate::nn::{
    adam_step, bce_with_logits, clip_global_norm, moment_loss, mse, sample_gaussian, Activation,
    AdamConfig, Gradients, NoiseSpec, ParameterStore, RecurrentNet, Tensor,
};
use crate::seed::{self, domain};

/// Architecture and optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyperparams {
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub seq_len: usize,
    /// Width of the per-step condition vector.
    pub cond_dim: usize,
    /// Width of the per-step noise vector.
    pub noise_dim: usize,
    pub batch_size: usize,
    pub lr_reconstruction: f64,
    pub lr_supervised: f64,
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    /// Weight of the supervised latent loss in the joint stage.
    pub eta: f64,
    /// Weight of the moment-matching loss in the joint stage.
    pub lambda: f64,
    /// Global-norm gradient clip in the joint stage.
    pub clip_norm: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            latent_dim: 8,
            hidden_dim: 16,
            seq_len: 24,
            cond_dim: 0,
            noise_dim: 8,
            batch_size: 32,
            lr_reconstruction: 5e-3,
            lr_supervised: 5e-3,
            lr_generator: 1e-3,
            lr_discriminator: 1e-2,
            eta: 10.0,
            lambda: 1.0,
            clip_norm: 5.0,
        }
    }
}

/// Width of the modelled series; only the target channel is generated.
pub const DATA_DIM: usize = 1;

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("hidden_dim", self.hidden_dim),
            ("seq_len", self.seq_len),
            ("noise_dim", self.noise_dim),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("lr_reconstruction", self.lr_reconstruction),
            ("lr_supervised", self.lr_supervised),
            ("lr_generator", self.lr_generator),
            ("lr_discriminator", self.lr_discriminator),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.eta >= 0.0 && self.lambda >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Stage {
    Initialized = 0,
    Reconstruction = 1,
    Supervised = 2,
    Joint = 3,
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        s as u8
    }
}

impl TryFrom<u8> for Stage {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Ok(match v {
            0 => Stage::Initialized,
            1 => Stage::Reconstruction,
            2 => Stage::Supervised,
            3 => Stage::Joint,
            _ => return Err(Error::Config(format!("unknown training stage {v}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkKind {
    Embedder,
    Recovery,
    Generator,
    Discriminator,
}

impl NetworkKind {
    pub const ALL: [NetworkKind; 4] = [
        NetworkKind::Embedder,
        NetworkKind::Recovery,
        NetworkKind::Generator,
        NetworkKind::Discriminator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NetworkKind::Embedder => "embedder",
            NetworkKind::Recovery => "recovery",
            NetworkKind::Generator => "generator",
            NetworkKind::Discriminator => "discriminator",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Stage3Trace {
    pub discriminator: Vec<f64>,
    /// Total generator objective.
    pub generator: Vec<f64>,
    pub adversarial: Vec<f64>,
    pub supervised: Vec<f64>,
    pub moment: Vec<f64>,
}

/// Per-step training losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTraces {
    pub reconstruction: Vec<f64>,
    pub supervised: Vec<f64>,
    pub joint: Stage3Trace,
}

/// One minibatch laid out per time step.
struct Batch {
    /// `[B, 1]` target values per step.
    x: Vec<Tensor>,
    /// `[B, cond_dim]` conditions per step.
    c: Vec<Tensor>,
}

fn hcat_steps(parts: &[&[Tensor]]) -> Result<Vec<Tensor>> {
    let steps = parts[0].len();
    (0..steps)
        .map(|t| {
            let row: Vec<&Tensor> = parts.iter().map(|p| &p[t]).collect();
            Tensor::hcat(&row)
        })
        .collect()
}

fn first_cols(ts: &[Tensor], n: usize) -> Vec<Tensor> {
    ts.iter().map(|t| t.col_slice(0, n)).collect()
}

fn add_grads(acc: &mut Gradients, other: &Gradients, k: f64) {
    for (name, g) in other {
        let mut g = g.clone();
        g.scale(k);
        match acc.get_mut(name) {
            Some(a) => a.add_assign(&g),
            None => {
                acc.insert(name.clone(), g);
            }
        }
    }
}

/// The four networks, their parameters, and the training-stage marker.
#[derive(Debug, Clone, PartialEq)]
pub struct CtsganModel {
    pub(crate) hp: Hyperparams,
    pub(crate) seed: u64,
    pub(crate) stage: Stage,
    pub(crate) norm: Option<NormalizationParams>,
    pub(crate) embedder: RecurrentNet,
    pub(crate) recovery: RecurrentNet,
    pub(crate) generator: RecurrentNet,
    pub(crate) discriminator: RecurrentNet,
    pub(crate) embedder_params: ParameterStore,
    pub(crate) recovery_params: ParameterStore,
    pub(crate) generator_params: ParameterStore,
    pub(crate) discriminator_params: ParameterStore,
    pub(crate) traces: LossTraces,
    /// Adversarial steps run after the joint stage completed.
    pub(crate) fine_tune_steps: u64,
}

impl CtsganModel {
    pub(crate) fn architecture(hp: &Hyperparams) -> [RecurrentNet; 4] {
        let (l, h, c) = (hp.latent_dim, hp.hidden_dim, hp.cond_dim);
        [
            RecurrentNet::new("embedder", DATA_DIM + c, h, l, Activation::Sigmoid),
            RecurrentNet::new("recovery", l + c, h, DATA_DIM, Activation::Sigmoid),
            RecurrentNet::new("generator", hp.noise_dim + c + l, h, l, Activation::Sigmoid),
            RecurrentNet::new("discriminator", l + c, h, 1, Activation::Identity),
        ]
    }

    /// Initializes all four networks from `seed`.
    pub fn build(hp: Hyperparams, seed_value: u64) -> Result<Self> {
        hp.validate()?;
        let [embedder, recovery, generator, discriminator] = Self::architecture(&hp);
        let mut rng = seed::rng(seed::mix(seed_value, domain::INIT));
        let mut stores: [ParameterStore; 4] = Default::default();
        for (net, store) in [&embedder, &recovery, &generator, &discriminator]
            .into_iter()
            .zip(stores.iter_mut())
        {
            net.init(store, &mut rng)?;
        }
        let [embedder_params, recovery_params, generator_params, discriminator_params] = stores;
        Ok(Self {
            hp,
            seed: seed_value,
            stage: Stage::Initialized,
            norm: None,
            embedder,
            recovery,
            generator,
            discriminator,
            embedder_params,
            recovery_params,
            generator_params,
            discriminator_params,
            traces: LossTraces::default(),
            fine_tune_steps: 0,
        })
    }

    pub fn hyperparams(&self) -> &Hyperparams {
        &self.hp
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn normalization(&self) -> Option<&NormalizationParams> {
        self.norm.as_ref()
    }

    pub fn set_normalization(&mut self, norm: NormalizationParams) {
        self.norm = Some(norm);
    }

    pub fn traces(&self) -> &LossTraces {
        &self.traces
    }

    pub fn params(&self, kind: NetworkKind) -> &ParameterStore {
        match kind {
            NetworkKind::Embedder => &self.embedder_params,
            NetworkKind::Recovery => &self.recovery_params,
            NetworkKind::Generator => &self.generator_params,
            NetworkKind::Discriminator => &self.discriminator_params,
        }
    }

    pub(crate) fn params_mut(&mut self, kind: NetworkKind) -> &mut ParameterStore {
        match kind {
            NetworkKind::Embedder => &mut self.embedder_params,
            NetworkKind::Recovery => &mut self.recovery_params,
            NetworkKind::Generator => &mut self.generator_params,
            NetworkKind::Discriminator => &mut self.discriminator_params,
        }
    }

    pub fn checksum(&self, kind: NetworkKind) -> String {
        self.params(kind).checksum()
    }

    pub fn num_params(&self) -> usize {
        NetworkKind::ALL
            .iter()
            .map(|&k| self.params(k).num_scalars())
            .sum()
    }

    fn require_stage(&self, expected: Stage, op: &str) -> Result<()> {
        if self.stage != expected {
            return Err(Error::StageOrder(format!(
                "{op} requires stage {} but the model is at stage {}",
                expected as u8, self.stage as u8
            )));
        }
        Ok(())
    }

    fn check_dataset(&self, ds: &TimeSeriesDataset) -> Result<()> {
        if ds.is_empty() {
            return Err(Error::Empty("training dataset".into()));
        }
        if ds.seq_len != self.hp.seq_len {
            return Err(Error::length("dataset seq_len", self.hp.seq_len, ds.seq_len));
        }
        if ds.cond_dim != self.hp.cond_dim {
            return Err(Error::length("dataset condition width", self.hp.cond_dim, ds.cond_dim));
        }
        Ok(())
    }

    fn step_rng(&self, stage_domain: u64, step: u64) -> seed::Rng {
        seed::rng(seed::mix(seed::mix(self.seed, stage_domain), step))
    }

    fn sample_batch(&self, ds: &TimeSeriesDataset, rng: &mut seed::Rng) -> Result<Batch> {
        let b = self.hp.batch_size;
        let picks: Vec<usize> = (0..b).map(|_| rng.random_range(0..ds.len())).collect();
        let t_len = self.hp.seq_len;
        let c_dim = self.hp.cond_dim;
        let mut x = Vec::with_capacity(t_len);
        let mut c = Vec::with_capacity(t_len);
        for t in 0..t_len {
            x.push(Tensor::matrix(
                b,
                DATA_DIM,
                picks.iter().map(|&i| ds.windows[i].values[t]).collect(),
            )?);
            let mut cond = Vec::with_capacity(b * c_dim);
            for &i in &picks {
                cond.extend_from_slice(&ds.windows[i].conditions[t]);
            }
            c.push(Tensor::matrix(b, c_dim, cond)?);
        }
        Ok(Batch { x, c })
    }

    fn noise(&self, spec: &NoiseSpec, batch: usize, rng: &mut seed::Rng) -> Result<Vec<Tensor>> {
        (0..self.hp.seq_len)
            .map(|_| sample_gaussian(spec, &[batch, self.hp.noise_dim], rng))
            .collect()
    }

    fn embed(&self, batch: &Batch) -> Result<Vec<Tensor>> {
        let inputs = hcat_steps(&[&batch.x, &batch.c])?;
        Ok(self.embedder.forward(&self.embedder_params, &inputs)?.0)
    }

    /// Generator rollout fed with its own previous latent output.
    fn rollout(
        &self,
        noise: &[Tensor],
        cond: &[Tensor],
    ) -> Result<(Vec<Tensor>, crate::nn::SeqCache)> {
        let external = hcat_steps(&[noise, cond])?;
        self.generator.forward_feedback(&self.generator_params, &external)
    }

    /// Generator fed with the embedded latent of the previous step.
    fn teacher_forced(
        &self,
        noise: &[Tensor],
        cond: &[Tensor],
        latent: &[Tensor],
    ) -> Result<(Vec<Tensor>, crate::nn::SeqCache)> {
        let batch = latent[0].rows();
        let mut prev = Vec::with_capacity(latent.len());
        prev.push(Tensor::zeros(&[batch, self.hp.latent_dim]));
        prev.extend(latent[..latent.len() - 1].iter().cloned());
        let inputs = hcat_steps(&[noise, cond, &prev])?;
        self.generator.forward(&self.generator_params, &inputs)
    }

    fn discriminate(
        &self,
        latent: &[Tensor],
        cond: &[Tensor],
    ) -> Result<(Tensor, crate::nn::SeqCache)> {
        let inputs = hcat_steps(&[latent, cond])?;
        let (outputs, cache) = self.discriminator.forward(&self.discriminator_params, &inputs)?;
        Ok((outputs.last().cloned().expect("seq_len > 0"), cache))
    }

    /// `∂L/∂logit` placed at the last step only.
    fn last_step_grads(&self, d_logit: Tensor) -> Vec<Tensor> {
        let mut d = vec![Tensor::zeros(d_logit.shape()); self.hp.seq_len];
        d[self.hp.seq_len - 1] = d_logit;
        d
    }

    /// Reconstruction MSE of one batch and the embedder/recovery gradients.
    fn reconstruction_grads(&self, batch: &Batch) -> Result<(f64, Gradients, Gradients)> {
        let e_in = hcat_steps(&[&batch.x, &batch.c])?;
        let (latent, e_cache) = self.embedder.forward(&self.embedder_params, &e_in)?;
        let r_in = hcat_steps(&[&latent, &batch.c])?;
        let (recon, r_cache) = self.recovery.forward(&self.recovery_params, &r_in)?;
        let (loss, d_recon) = mse_steps(&recon, &batch.x)?;
        let (d_r_in, r_grads) = self.recovery.backward(&self.recovery_params, &r_cache, &d_recon)?;
        let d_latent = first_cols(&d_r_in, self.hp.latent_dim);
        let (_, e_grads) = self.embedder.backward(&self.embedder_params, &e_cache, &d_latent)?;
        Ok((loss, e_grads, r_grads))
    }

    /// Mean reconstruction MSE over the whole dataset.
    pub fn reconstruction_mse(&self, ds: &TimeSeriesDataset) -> Result<f64> {
        self.check_dataset(ds)?;
        let batch = full_batch(ds)?;
        let e_in = hcat_steps(&[&batch.x, &batch.c])?;
        let latent = self.embedder.forward(&self.embedder_params, &e_in)?.0;
        let r_in = hcat_steps(&[&latent, &batch.c])?;
        let recon = self.recovery.forward(&self.recovery_params, &r_in)?.0;
        Ok(mse_steps(&recon, &batch.x)?.0)
    }

    /// Runs reconstruction steps without closing the stage.
    pub fn fit_stage1(&mut self, ds: &TimeSeriesDataset, steps: usize) -> Result<()> {
        self.require_stage(Stage::Initialized, "reconstruction training")?;
        self.check_dataset(ds)?;
        if self.traces.reconstruction.is_empty() {
            self.embedder_params.reset_optimizer();
            self.recovery_params.reset_optimizer();
        }
        let adam = AdamConfig::with_lr(self.hp.lr_reconstruction);
        for _ in 0..steps {
            let step = self.traces.reconstruction.len() as u64;
            let mut rng = self.step_rng(domain::STAGE1, step);
            let batch = self.sample_batch(ds, &mut rng)?;
            let (loss, e_grads, r_grads) = self.reconstruction_grads(&batch)?;
            finite(loss, "reconstruction loss")?;
            adam_step(&mut self.embedder_params, &e_grads, &adam)?;
            adam_step(&mut self.recovery_params, &r_grads, &adam)?;
            self.traces.reconstruction.push(loss);
        }
        Ok(())
    }

    /// Closes the reconstruction stage.
    pub fn complete_stage1(&mut self) -> Result<()> {
        self.require_stage(Stage::Initialized, "completing reconstruction")?;
        self.stage = Stage::Reconstruction;
        Ok(())
    }

    /// Embedder/recovery training on reconstruction MSE; stage 0 → 1.
    pub fn train_stage1(&mut self, ds: &TimeSeriesDataset, steps: usize) -> Result<()> {
        self.fit_stage1(ds, steps)?;
        self.complete_stage1()
    }

    fn supervised_grads(
        &self,
        batch: &Batch,
        latent: &[Tensor],
        noise: &[Tensor],
    ) -> Result<(f64, Gradients)> {
        let (pred, cache) = self.teacher_forced(noise, &batch.c, latent)?;
        let (loss, d_pred) = mse_steps(&pred, latent)?;
        let (_, grads) = self.generator.backward(&self.generator_params, &cache, &d_pred)?;
        Ok((loss, grads))
    }

    pub fn fit_stage2(&mut self, ds: &TimeSeriesDataset, steps: usize) -> Result<()> {
        self.require_stage(Stage::Reconstruction, "supervised training")?;
        self.check_dataset(ds)?;
        if self.traces.supervised.is_empty() {
            self.generator_params.reset_optimizer();
        }
        let adam = AdamConfig::with_lr(self.hp.lr_supervised);
        let standard = NoiseSpec::standard();
        for _ in 0..steps {
            let step = self.traces.supervised.len() as u64;
            let mut rng = self.step_rng(domain::STAGE2, step);
            let batch = self.sample_batch(ds, &mut rng)?;
            let noise = self.noise(&standard, self.hp.batch_size, &mut rng)?;
            let latent = self.embed(&batch)?;
            let (loss, grads) = self.supervised_grads(&batch, &latent, &noise)?;
            finite(loss, "supervised loss")?;
            adam_step(&mut self.generator_params, &grads, &adam)?;
            self.traces.supervised.push(loss);
        }
        Ok(())
    }

    pub fn complete_stage2(&mut self) -> Result<()> {
        self.require_stage(Stage::Reconstruction, "completing supervised training")?;
        self.stage = Stage::Supervised;
        Ok(())
    }

    /// Teacher-forced next-latent training of the generator; stage 1 → 2.
    pub fn train_stage2(&mut self, ds: &TimeSeriesDataset, steps: usize) -> Result<()> {
        self.fit_stage2(ds, steps)?;
        self.complete_stage2()
    }

    /// Mean teacher-forced latent MSE over the whole dataset.
    pub fn supervised_mse(&self, ds: &TimeSeriesDataset, seed_value: u64) -> Result<f64> {
        self.check_dataset(ds)?;
        let batch = full_batch(ds)?;
        let mut rng = seed::rng(seed_value);
        let noise = self.noise(&NoiseSpec::standard(), ds.len(), &mut rng)?;
        let latent = self.embed(&batch)?;
        let pred = self.teacher_forced(&noise, &batch.c, &latent)?.0;
        Ok(mse_steps(&pred, &latent)?.0)
    }

    /// One discriminator update on a real and a generated batch. Returns the
    /// discriminator loss.
    pub fn discriminator_step(&mut self, ds: &TimeSeriesDataset, rng: &mut seed::Rng) -> Result<f64> {
        let b = self.hp.batch_size;
        let batch = self.sample_batch(ds, rng)?;
        let noise = self.noise(&NoiseSpec::standard(), b, rng)?;
        let real = self.embed(&batch)?;
        let fake = self.rollout(&noise, &batch.c)?.0;

        let (logit_real, cache_real) = self.discriminate(&real, &batch.c)?;
        let (logit_fake, cache_fake) = self.discriminate(&fake, &batch.c)?;
        let (loss_real, d_real) = bce_with_logits(&logit_real, &Tensor::full(logit_real.shape(), 1.0))?;
        let (loss_fake, d_fake) = bce_with_logits(&logit_fake, &Tensor::full(logit_fake.shape(), 0.0))?;
        let loss = loss_real + loss_fake;
        finite(loss, "discriminator loss")?;

        let (_, mut grads) =
            self.discriminator
                .backward(&self.discriminator_params, &cache_real, &self.last_step_grads(d_real))?;
        let (_, g_fake) =
            self.discriminator
                .backward(&self.discriminator_params, &cache_fake, &self.last_step_grads(d_fake))?;
        add_grads(&mut grads, &g_fake, 1.0);
        clip_global_norm(&mut grads, self.hp.clip_norm);
        adam_step(
            &mut self.discriminator_params,
            &grads,
            &AdamConfig::with_lr(self.hp.lr_discriminator),
        )?;
        Ok(loss)
    }

    /// One generator update against the current (frozen) discriminator.
    /// Returns `(total, adversarial, supervised, moment)`.
    pub fn generator_step(
        &mut self,
        ds: &TimeSeriesDataset,
        rng: &mut seed::Rng,
    ) -> Result<(f64, f64, f64, f64)> {
        let (losses, grads) = self.generator_objective(ds, rng)?;
        let mut grads = grads;
        clip_global_norm(&mut grads, self.hp.clip_norm);
        adam_step(
            &mut self.generator_params,
            &grads,
            &AdamConfig::with_lr(self.hp.lr_generator),
        )?;
        Ok(losses)
    }

    /// Joint-stage generator objective and its gradient, without updating.
    fn generator_objective(
        &self,
        ds: &TimeSeriesDataset,
        rng: &mut seed::Rng,
    ) -> Result<((f64, f64, f64, f64), Gradients)> {
        let b = self.hp.batch_size;
        let l = self.hp.latent_dim;
        let batch = self.sample_batch(ds, rng)?;
        let noise = self.noise(&NoiseSpec::standard(), b, rng)?;
        let real = self.embed(&batch)?;

        let (fake, g_cache) = self.rollout(&noise, &batch.c)?;
        let (logit, d_cache) = self.discriminate(&fake, &batch.c)?;
        let (adversarial, d_logit) = bce_with_logits(&logit, &Tensor::full(logit.shape(), 1.0))?;
        let (d_disc_in, _) =
            self.discriminator
                .backward(&self.discriminator_params, &d_cache, &self.last_step_grads(d_logit))?;
        let mut d_fake = first_cols(&d_disc_in, l);

        let mut moment = 0.0;
        if self.hp.lambda > 0.0 {
            let r_in = hcat_steps(&[&fake, &batch.c])?;
            let (recovered, r_cache) = self.recovery.forward(&self.recovery_params, &r_in)?;
            let (m, d_rec) = moment_loss(&recovered, &batch.x)?;
            moment = m;
            let (d_r_in, _) = self.recovery.backward(&self.recovery_params, &r_cache, &d_rec)?;
            for (d, extra) in d_fake.iter_mut().zip(first_cols(&d_r_in, l)) {
                let mut extra = extra;
                extra.scale(self.hp.lambda);
                d.add_assign(&extra);
            }
        }
        let (_, mut grads) = self.generator.backward(&self.generator_params, &g_cache, &d_fake)?;

        let mut supervised = 0.0;
        if self.hp.eta > 0.0 {
            let (s, s_grads) = self.supervised_grads(&batch, &real, &noise)?;
            supervised = s;
            add_grads(&mut grads, &s_grads, self.hp.eta);
        }
        let total = adversarial + self.hp.eta * supervised + self.hp.lambda * moment;
        finite(total, "generator loss")?;
        Ok(((total, adversarial, supervised, moment), grads))
    }

    fn adversarial_round(&mut self, ds: &TimeSeriesDataset, rng_domain: u64, step: u64) -> Result<()> {
        let mut rng = self.step_rng(rng_domain, step);
        let d_loss = self.discriminator_step(ds, &mut rng)?;
        let (total, adv, sup, mom) = self.generator_step(ds, &mut rng)?;
        let tr = &mut self.traces.joint;
        tr.discriminator.push(d_loss);
        tr.generator.push(total);
        tr.adversarial.push(adv);
        tr.supervised.push(sup);
        tr.moment.push(mom);
        Ok(())
    }

    pub fn fit_stage3(&mut self, ds: &TimeSeriesDataset, steps: usize) -> Result<()> {
        self.require_stage(Stage::Supervised, "joint training")?;
        self.check_dataset(ds)?;
        if self.traces.joint.generator.is_empty() {
            self.generator_params.reset_optimizer();
            self.discriminator_params.reset_optimizer();
        }
        for _ in 0..steps {
            let step = self.traces.joint.generator.len() as u64;
            self.adversarial_round(ds, domain::STAGE3, step)?;
        }
        Ok(())
    }

    pub fn complete_stage3(&mut self) -> Result<()> {
        self.require_stage(Stage::Supervised, "completing joint training")?;
        self.stage = Stage::Joint;
        Ok(())
    }

    /// Alternating discriminator/generator training; stage 2 → 3.
    pub fn train_stage3(&mut self, ds: &TimeSeriesDataset, steps: usize) -> Result<()> {
        self.fit_stage3(ds, steps)?;
        self.complete_stage3()
    }

    /// Extra adversarial rounds on a trained model, on a stream derived
    /// from `lineage` so repeated fine-tunes are independent.
    pub fn fine_tune(&mut self, ds: &TimeSeriesDataset, steps: usize, lineage: u64) -> Result<()> {
        self.require_stage(Stage::Joint, "fine-tuning")?;
        self.check_dataset(ds)?;
        let stream = seed::mix(domain::FINE_TUNE, lineage);
        for _ in 0..steps {
            self.adversarial_round(ds, stream, self.fine_tune_steps)?;
            self.fine_tune_steps += 1;
        }
        Ok(())
    }

    /// Fraction of a fresh real batch and a fresh generated batch (each of
    /// `n` sequences) that the discriminator classifies correctly.
    pub fn discriminator_accuracy(&self, ds: &TimeSeriesDataset, n: usize, seed_value: u64) -> Result<f64> {
        self.check_dataset(ds)?;
        let mut rng = seed::rng(seed_value);
        let mut model = self.clone();
        model.hp.batch_size = n;
        let batch = model.sample_batch(ds, &mut rng)?;
        let noise = model.noise(&NoiseSpec::standard(), n, &mut rng)?;
        let real = model.embed(&batch)?;
        let fake = model.rollout(&noise, &batch.c)?.0;
        let logit_real = model.discriminate(&real, &batch.c)?.0;
        let logit_fake = model.discriminate(&fake, &batch.c)?.0;
        let correct = logit_real.data().iter().filter(|&&v| v > 0.0).count()
            + logit_fake.data().iter().filter(|&&v| v < 0.0).count();
        Ok(correct as f64 / (2 * n) as f64)
    }

    fn check_conditions(&self, conditions: &[Vec<f64>]) -> Result<()> {
        if conditions.len() != self.hp.seq_len {
            return Err(Error::length("generation conditions", self.hp.seq_len, conditions.len()));
        }
        if let Some(row) = conditions.iter().find(|r| r.len() != self.hp.cond_dim) {
            return Err(Error::length("condition vector", self.hp.cond_dim, row.len()));
        }
        Ok(())
    }

    fn generate_chunk(&self, conditions: &[Vec<f64>], indices: &[u64], noise: &NoiseSpec, seed_value: u64) -> Result<Vec<Vec<f64>>> {
        let b = indices.len();
        let t_len = self.hp.seq_len;
        // Each scenario draws all of its noise from its own stream, so rows
        // do not depend on how scenarios are chunked.
        let mut per_row: Vec<Vec<f64>> = Vec::with_capacity(b);
        for &i in indices {
            let mut rng = seed::rng(seed::mix(seed_value, i));
            per_row.push(sample_gaussian(noise, &[t_len * self.hp.noise_dim], &mut rng)?.into_data());
        }
        let nd = self.hp.noise_dim;
        let mut z = Vec::with_capacity(t_len);
        let mut c = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut data = Vec::with_capacity(b * nd);
            for row in &per_row {
                data.extend_from_slice(&row[t * nd..(t + 1) * nd]);
            }
            z.push(Tensor::matrix(b, nd, data)?);
            let cond: Vec<f64> = (0..b).flat_map(|_| conditions[t].iter().copied()).collect();
            c.push(Tensor::matrix(b, self.hp.cond_dim, cond)?);
        }
        let latent = self.rollout(&z, &c)?.0;
        let r_in = hcat_steps(&[&latent, &c])?;
        let out = self.recovery.forward(&self.recovery_params, &r_in)?.0;
        Ok((0..b)
            .map(|r| (0..t_len).map(|t| out[t].at(r, 0)).collect())
            .collect())
    }

    /// `count` scenarios (normalized units) from autoregressive latent
    /// rollouts under `noise`. Scenario `i` uses the stream `mix(seed, i)`.
    pub fn generate_scenarios(
        &self,
        conditions: &[Vec<f64>],
        count: usize,
        noise: &NoiseSpec,
        seed_value: u64,
    ) -> Result<ScenarioSet> {
        if self.stage != Stage::Joint {
            return Err(Error::UntrainedModel(format!(
                "generation requires a fully trained model (stage 3), model is at stage {}",
                self.stage as u8
            )));
        }
        self.check_conditions(conditions)?;
        noise.validate()?;
        if count == 0 {
            return Err(Error::Config("scenario count must be positive".into()));
        }
        const CHUNK: usize = 64;
        let indices: Vec<u64> = (0..count as u64).collect();
        let chunks: Vec<Vec<Vec<f64>>> = indices
            .par_chunks(CHUNK)
            .map(|chunk| self.generate_chunk(conditions, chunk, noise, seed_value))
            .collect::<Result<_>>()?;
        let scenarios: Vec<Vec<f64>> = chunks.into_iter().flatten().collect();
        ScenarioSet::single_pattern(scenarios, noise.sigma, Units::Normalized)
    }

    /// Pattern-diverse generation: one group of `per_pattern` scenarios for
    /// each standard deviation in `sigma_list`, group `k` seeded with
    /// `mix(seed, k)`.
    pub fn pd_generate(
        &self,
        conditions: &[Vec<f64>],
        per_pattern: usize,
        sigma_list: &[f64],
        mu: f64,
        seed_value: u64,
    ) -> Result<ScenarioSet> {
        if sigma_list.is_empty() {
            return Err(Error::Config("sigma list is empty".into()));
        }
        if let Some(s) = sigma_list.iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::Config(format!("sigma {s} must be positive")));
        }
        let groups = sigma_list
            .iter()
            .enumerate()
            .map(|(k, &sigma)| {
                self.generate_scenarios(
                    conditions,
                    per_pattern,
                    &NoiseSpec { mu, sigma },
                    seed::mix(seed_value, k as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        ScenarioSet::concat(groups)
    }
}

fn finite(v: f64, what: &str) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// MSE over a whole sequence, averaged over steps and elements.
fn mse_steps(pred: &[Tensor], target: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
    let n = pred.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let (l, mut g) = mse(p, t)?;
        total += l;
        g.scale(1.0 / n);
        grads.push(g);
    }
    Ok((total / n, grads))
}

fn full_batch(ds: &TimeSeriesDataset) -> Result<Batch> {
    let b = ds.len();
    let mut x = Vec::with_capacity(ds.seq_len);
    let mut c = Vec::with_capacity(ds.seq_len);
    for t in 0..ds.seq_len {
        x.push(Tensor::matrix(b, DATA_DIM, ds.windows.iter().map(|w| w.values[t]).collect())?);
        c.push(Tensor::matrix(
            b,
            ds.cond_dim,
            ds.windows.iter().flat_map(|w| w.conditions[t].iter().copied()).collect(),
        )?);
    }
    Ok(Batch { x, c })
}
