//! Composite reconstruction/prior/adversarial objective and the alternating
//! generator/discriminator schedule.
//!
//! Each minibatch performs
//!
//! 1. a generator step: gradients of `λ1·L_rec + λ2·L_prior` are applied to
//!    encoder and decoder at `lr_rec`, gradients of `λ3·L_adv` at `lr_adv`,
//!    each through its own Adam state;
//! 2. for adversarial kinds, one discriminator step on `L_Dis` at `lr_adv`,
//!    using reconstructions from step 1 as fakes.

mod adam;
mod losses;
mod report;

pub use adam::{adam_step, AdamState};
pub use losses::{adv_loss, disc_loss, kl_loss, rec_loss, LOG_CLAMP};
pub use report::{EpochLoss, LossReport, StepLoss};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{reparameterize, EncoderOutput, ModelKind, ModelParams, SampleMode};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f32,
    pub lambda2: f32,
    pub lambda3: f32,
}

impl LossWeights {
    /// Weight 1 for every term the kind has, 0 for the others.
    pub fn for_kind(kind: ModelKind) -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: if kind.variational() { 1.0 } else { 0.0 },
            lambda3: if kind.adversarial() { 1.0 } else { 0.0 },
        }
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3];
        if all.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::config(format!("loss weights must be finite and >= 0, got {all:?}")));
        }
        if !kind.variational() && self.lambda2 != 0.0 {
            return Err(Error::config(format!("{kind} has no prior term but lambda2 = {}", self.lambda2)));
        }
        if !kind.adversarial() && self.lambda3 != 0.0 {
            return Err(Error::config(format!(
                "{kind} has no discriminator but lambda3 = {}",
                self.lambda3
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate for reconstruction and prior gradients.
    pub lr_rec: f32,
    /// Learning rate for the adversarial term and the discriminator.
    pub lr_adv: f32,
    pub seed: u64,
    pub weights: LossWeights,
}

impl TrainConfig {
    /// Batch size 8 and learning rates 1e-3 / 1e-4; epochs default to a
    /// desk-scale budget of 40.
    pub fn for_kind(kind: ModelKind, seed: u64) -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 8,
            lr_rec: 1e-3,
            lr_adv: 1e-4,
            seed,
            weights: LossWeights::for_kind(kind),
        }
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch_size must be at least 1"));
        }
        if !(self.lr_rec > 0.0 && self.lr_adv > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        self.weights.validate(kind)
    }
}

/// Gradients for each parameter tensor (None where unreachable).
type Grads = Vec<Option<Tensor>>;

fn collect_grads(tape: &Tape, vars: &[Var]) -> Grads {
    vars.iter().map(|&v| tape.grad(v).cloned()).collect()
}

fn check_finite(value: f64, term: &str, step: usize, epoch: usize) -> Result<f32> {
    if value.is_finite() {
        Ok(value as f32)
    } else {
        Err(Error::Numerical(format!(
            "{term} became {value} at step {step} (epoch {epoch})"
        )))
    }
}

fn is_generator(name: &str) -> bool {
    !name.starts_with("dis.")
}

/// Optimizer state across the whole run.
struct Optimizers {
    rec: AdamState,
    adv: AdamState,
    dis: AdamState,
}

/// Trains `params` on normal-only images, each shaped `[1, 1, H, W]`.
pub fn train(params: ModelParams, data: &[Tensor], cfg: &TrainConfig) -> Result<(ModelParams, LossReport)> {
    train_with(params, data, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    mut params: ModelParams,
    data: &[Tensor],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<(ModelParams, LossReport)> {
    let kind = params.kind;
    cfg.validate(kind)?;
    if data.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let side = params.config.input_size;
    if let Some(bad) = data.iter().find(|t| t.shape() != [1, 1, side, side]) {
        return Err(Error::dim(format!(
            "training images must be [1,1,{side},{side}], found {:?}",
            bad.shape()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizers {
        rec: AdamState::new(params.tensors()),
        adv: AdamState::new(params.tensors()),
        dis: AdamState::new(params.tensors()),
    };
    let mut report = LossReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let parts: Vec<&Tensor> = chunk.iter().map(|&i| &data[i]).collect();
            let batch = Tensor::concat_batch(&parts)?;
            let noise_seed = rng.random::<u64>();
            let loss = train_step(&mut params, &mut opt, &batch, cfg, noise_seed, step, epoch)?;
            report.push(loss);
            step += 1;
        }
        on_epoch(report.close_epoch(epoch));
    }
    Ok((params, report))
}

fn train_step(
    params: &mut ModelParams,
    opt: &mut Optimizers,
    batch: &Tensor,
    cfg: &TrainConfig,
    noise_seed: u64,
    step: usize,
    epoch: usize,
) -> Result<StepLoss> {
    let kind = params.kind;
    let w = cfg.weights;
    let mut out = StepLoss {
        step,
        epoch,
        ..StepLoss::default()
    };

    // Generator / VAE step.
    let mut tape = Tape::new();
    let bound = params.bind_with(&mut tape, is_generator);
    let x = tape.constant(batch.clone());
    let enc = params.encode(&mut tape, &bound, x)?;
    let z = match enc {
        EncoderOutput::Code(z) => z,
        gaussian => reparameterize(&mut tape, &gaussian, SampleMode::Sample(noise_seed))?,
    };
    let x_hat = params.decode(&mut tape, &bound, z)?;

    let rec = rec_loss(&mut tape, x, x_hat)?;
    out.l_rec = Some(check_finite(tape.scalar(rec)?, "l_rec", step, epoch)?);
    let mut objective = (w.lambda1 > 0.0).then(|| tape.scale(rec, w.lambda1));
    if let EncoderOutput::Gaussian { mu, logvar } = enc {
        let prior = kl_loss(&mut tape, mu, logvar)?;
        out.l_prior = Some(check_finite(tape.scalar(prior)?, "l_prior", step, epoch)?);
        if w.lambda2 > 0.0 {
            let weighted = tape.scale(prior, w.lambda2);
            objective = Some(match objective {
                Some(o) => tape.add(o, weighted)?,
                None => weighted,
            });
        }
    }
    let rec_grads = match objective {
        Some(o) => {
            tape.backward(o)?;
            Some(collect_grads(&tape, bound.vars()))
        }
        None => None,
    };

    let mut adv_grads = None;
    if kind.adversarial() {
        let d_fake = params.discriminate(&mut tape, &bound, x_hat)?;
        let adv = adv_loss(&mut tape, d_fake);
        out.l_adv = Some(check_finite(tape.scalar(adv)?, "l_adv", step, epoch)?);
        if w.lambda3 > 0.0 {
            let weighted = tape.scale(adv, w.lambda3);
            tape.backward(weighted)?;
            adv_grads = Some(collect_grads(&tape, bound.vars()));
        }
    }
    let fakes = tape.value(x_hat).clone();
    drop(tape);

    if let Some(g) = rec_grads {
        adam_step(params.tensors_mut(), &g, &mut opt.rec, cfg.lr_rec)?;
    }
    if let Some(g) = adv_grads {
        adam_step(params.tensors_mut(), &g, &mut opt.adv, cfg.lr_adv)?;
    }

    // Discriminator step on real images versus this step's reconstructions.
    if kind.adversarial() {
        let mut tape = Tape::new();
        let bound = params.bind_with(&mut tape, |n| !is_generator(n));
        let real = tape.constant(batch.clone());
        let fake = tape.constant(fakes);
        let d_real = params.discriminate(&mut tape, &bound, real)?;
        let d_fake = params.discriminate(&mut tape, &bound, fake)?;
        let dis = disc_loss(&mut tape, d_real, d_fake)?;
        out.l_dis = Some(check_finite(tape.scalar(dis)?, "l_dis", step, epoch)?);
        tape.backward(dis)?;
        let g = collect_grads(&tape, bound.vars());
        adam_step(params.tensors_mut(), &g, &mut opt.dis, cfg.lr_adv)?;
    }

    if let Some(bad) = params.iter().find(|(_, t)| !t.is_finite()) {
        return Err(Error::Numerical(format!(
            "parameter {} became non-finite at step {step} (epoch {epoch})",
            bad.0
        )));
    }
    Ok(out)
}
