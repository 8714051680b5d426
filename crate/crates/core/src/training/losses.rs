//! Loss terms recorded on a tape. All return one-element tensors.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Probabilities are clamped into `[LOG_CLAMP, 1 - LOG_CLAMP]` before logs.
pub const LOG_CLAMP: f32 = 1e-7;

fn batch_size(tape: &Tape, v: Var) -> f32 {
    tape.shape(v)[0] as f32
}

/// Per-image sum of `|x - x_hat|`, averaged over the batch.
pub fn rec_loss(tape: &mut Tape, x: Var, x_hat: Var) -> Result<Var> {
    let diff = tape.sub(x, x_hat)?;
    let abs = tape.abs(diff);
    let total = tape.sum(abs);
    let n = batch_size(tape, x);
    Ok(tape.scale(total, 1.0 / n))
}

/// `KL(N(mu, exp(logvar)) || N(0, I))` summed over latent dimensions and
/// averaged over the batch.
pub fn kl_loss(tape: &mut Tape, mu: Var, logvar: Var) -> Result<Var> {
    if tape.shape(mu) != tape.shape(logvar) {
        return Err(Error::dim(format!(
            "kl_loss: mu {:?} and logvar {:?} differ",
            tape.shape(mu),
            tape.shape(logvar)
        )));
    }
    let numel = tape.value(mu).numel() as f32;
    let mu2 = tape.square(mu);
    let var = tape.exp(logvar);
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, logvar)?;
    let total = tape.sum(b);
    let total = tape.add_scalar(total, -numel);
    let n = batch_size(tape, mu);
    Ok(tape.scale(total, 0.5 / n))
}

fn clamped_log(tape: &mut Tape, p: Var) -> Var {
    let p = tape.clamp(p, LOG_CLAMP, 1.0 - LOG_CLAMP);
    tape.ln(p)
}

/// Generator objective `mean(-log D(x_hat))`.
pub fn adv_loss(tape: &mut Tape, d_on_recon: Var) -> Var {
    let logs = clamped_log(tape, d_on_recon);
    let m = tape.mean(logs);
    tape.scale(m, -1.0)
}

/// Discriminator objective `mean(-log D(x) - log(1 - D(x_hat)))`.
pub fn disc_loss(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var> {
    let real = clamped_log(tape, d_real);
    let fake = tape.clamp(d_fake, LOG_CLAMP, 1.0 - LOG_CLAMP);
    let neg = tape.scale(fake, -1.0);
    let one_minus = tape.add_scalar(neg, 1.0);
    let fake = tape.ln(one_minus);
    let both = tape.add(real, fake)?;
    let m = tape.mean(both);
    Ok(tape.scale(m, -1.0))
}
