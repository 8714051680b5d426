use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{decoder_width, LatentSpec, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Clamp range applied to the logvar head before it is exponentiated.
pub const LOGVAR_RANGE: (f32, f32) = (-10.0, 10.0);

/// Parameters registered on one tape, in [`ModelParams`] order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps vars already registered on a tape, one per parameter in
    /// [`ModelParams`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

#[derive(Clone, Copy, Debug)]
pub enum EncoderOutput {
    Code(Var),
    Gaussian { mu: Var, logvar: Var },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    /// `z = mu + exp(logvar / 2) * eps` with `eps` drawn from this seed.
    Sample(u64),
    /// `z = mu`.
    Mean,
}

/// Draws a latent code from a variational encoder output.
pub fn reparameterize(tape: &mut Tape, out: &EncoderOutput, mode: SampleMode) -> Result<Var> {
    let EncoderOutput::Gaussian { mu, logvar } = *out else {
        return Err(Error::contract("reparameterize called on a deterministic encoder output"));
    };
    match mode {
        SampleMode::Mean => Ok(mu),
        SampleMode::Sample(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shape = tape.shape(mu).to_vec();
            let eps = Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng));
            let eps = tape.constant(eps);
            let half = tape.scale(logvar, 0.5);
            let std = tape.exp(half);
            let noise = tape.mul(std, eps)?;
            tape.add(mu, noise)
        }
    }
}

impl ModelParams {
    /// Registers every tensor on `tape`; `trainable` selects which ones
    /// receive gradients.
    pub fn bind_with(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .iter()
            .map(|(name, t)| tape.leaf(t.clone(), trainable(name)))
            .collect();
        Bound { vars }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        self.bind_with(tape, |_| trainable)
    }

    fn var(&self, bound: &Bound, name: &str) -> Result<Var> {
        self.index_of(name)
            .and_then(|i| bound.vars.get(i).copied())
            .ok_or_else(|| Error::contract(format!("model {} has no parameter '{name}'", self.kind)))
    }

    fn conv(&self, tape: &mut Tape, bound: &Bound, prefix: &str, x: Var, stride: usize) -> Result<Var> {
        let w = self.var(bound, &format!("{prefix}.weight"))?;
        let b = self.var(bound, &format!("{prefix}.bias"))?;
        let pad = tape.shape(w)[2] / 2;
        let y = tape.conv2d(x, w, stride, pad)?;
        tape.channel_bias(y, b)
    }

    fn dense(&self, tape: &mut Tape, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let w = self.var(bound, &format!("{prefix}.weight"))?;
        let b = self.var(bound, &format!("{prefix}.bias"))?;
        tape.dense(x, w, b)
    }

    fn check_image(&self, tape: &Tape, x: Var) -> Result<usize> {
        let s = self.config.input_size;
        match *tape.shape(x) {
            [n, 1, h, w] if h == s && w == s => Ok(n),
            ref other => Err(Error::dim(format!(
                "expected image batch [N,1,{s},{s}], got {other:?}"
            ))),
        }
    }

    /// Strided conv stack shared in layout by encoder and discriminator.
    fn trunk(&self, tape: &mut Tape, bound: &Bound, prefix: &str, x: Var) -> Result<Var> {
        let mut h = x;
        for stage in 0..self.config.stages {
            h = self.conv(tape, bound, &format!("{prefix}.conv{stage}"), h, 2)?;
            h = tape.leaky_relu(h, self.config.leaky_slope);
        }
        Ok(h)
    }

    fn head(&self, tape: &mut Tape, bound: &Bound, name: &str, features: Var) -> Result<Var> {
        match self.latent {
            LatentSpec::Spatial { .. } => self.conv(tape, bound, name, features, 1),
            LatentSpec::Dense { .. } => {
                let n = tape.shape(features)[0];
                let flat: usize = tape.shape(features)[1..].iter().product();
                let flat = tape.reshape(features, &[n, flat])?;
                self.dense(tape, bound, name, flat)
            }
        }
    }

    /// Maps an image batch `[N,1,H,W]` to its latent code or posterior.
    pub fn encode(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<EncoderOutput> {
        self.check_image(tape, x)?;
        let features = self.trunk(tape, bound, "enc", x)?;
        if self.kind.variational() {
            let mu = self.head(tape, bound, "enc.mu", features)?;
            let raw = self.head(tape, bound, "enc.logvar", features)?;
            let logvar = tape.clamp(raw, LOGVAR_RANGE.0, LOGVAR_RANGE.1);
            Ok(EncoderOutput::Gaussian { mu, logvar })
        } else {
            Ok(EncoderOutput::Code(self.head(tape, bound, "enc.code", features)?))
        }
    }

    /// Maps a latent batch back to images in (0, 1).
    pub fn decode(&self, tape: &mut Tape, bound: &Bound, z: Var) -> Result<Var> {
        let n = tape.shape(z)[0];
        let mut expected = vec![n];
        expected.extend(self.latent.shape());
        if tape.shape(z) != expected.as_slice() {
            return Err(Error::dim(format!(
                "decoder expects latent {expected:?} for {}, got {:?}",
                self.latent,
                tape.shape(z)
            )));
        }
        let slope = self.config.leaky_slope;
        let side = self.config.bottleneck_size();
        let top = self.config.width(self.config.stages - 1);
        let mut h = match self.latent {
            LatentSpec::Spatial { .. } => self.conv(tape, bound, "dec.entry", z, 1)?,
            LatentSpec::Dense { .. } => {
                let flat = self.dense(tape, bound, "dec.entry", z)?;
                tape.reshape(flat, &[n, top, side, side])?
            }
        };
        h = tape.leaky_relu(h, slope);
        for j in 0..self.config.stages {
            debug_assert_eq!(tape.shape(h)[1], if j == 0 { top } else { decoder_width(&self.config, j - 1) });
            h = tape.upsample_nearest(h, 2)?;
            h = self.conv(tape, bound, &format!("dec.up{j}"), h, 1)?;
            h = tape.leaky_relu(h, slope);
        }
        let logits = self.conv(tape, bound, "dec.out", h, 1)?;
        Ok(tape.sigmoid(logits))
    }

    /// Per-sample probability `[N]` that the input is a real image.
    pub fn discriminate(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        if !self.kind.adversarial() {
            return Err(Error::contract(format!("{} has no discriminator", self.kind)));
        }
        let n = self.check_image(tape, x)?;
        let features = self.trunk(tape, bound, "dis", x)?;
        let pooled = tape.global_avg_pool(features)?;
        let logit = self.dense(tape, bound, "dis.fc", pooled)?;
        let p = tape.sigmoid(logit);
        tape.reshape(p, &[n])
    }

    /// Deterministic reconstruction; variational kinds decode the posterior mean.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let input = tape.constant(x.clone());
        let out = self.encode(&mut tape, &bound, input)?;
        let z = match out {
            EncoderOutput::Code(z) => z,
            gaussian => reparameterize(&mut tape, &gaussian, SampleMode::Mean)?,
        };
        let xhat = self.decode(&mut tape, &bound, z)?;
        Ok(tape.value(xhat).clone())
    }
}
