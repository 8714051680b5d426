//! Checks shared by the focused test targets and the acceptance run.
#![allow(dead_code)]

use aeseg::data::{MaskVolume, Volume};
use aeseg::models::{
    reparameterize, Bound, EncoderOutput, LatentSpec, ModelConfig, ModelKind, ModelParams, SampleMode,
};
use aeseg::pipeline::{erode_mask, fit_threshold, median_filter_3d, remove_small_components, Connectivity};
use aeseg::training::{adv_loss, disc_loss, kl_loss, rec_loss, train, LossWeights, TrainConfig};
use aeseg::{finite_diff_check, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type UnaryOp = fn(&mut Tape, Var) -> Var;

pub const GRAD_TOL: f32 = 1e-2;
/// Step for single ops.
const OP_EPS: f32 = 1e-3;
/// Step for whole models: small enough to stay clear of activation kinks,
/// which the f64 re-evaluation in the check makes affordable.
const MODEL_EPS: f32 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// `sum(w ⊙ y)` for a fixed random `w`, so every output element gets a
/// distinct upstream gradient.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let w = uniform(&mut rng(seed), tape.shape(y), -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

type OpFn = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

/// `(name, input, function of that input)` for every differentiable op and
/// loss, one entry per differentiable argument.
fn op_cases() -> Vec<(&'static str, Tensor, OpFn)> {
    let mut r = rng(11);
    let x4 = uniform(&mut r, &[2, 2, 6, 6], -2.0, 2.0);
    let k = uniform(&mut r, &[3, 2, 3, 3], -2.0, 2.0);
    let bias = uniform(&mut r, &[2], -2.0, 2.0);
    let x2 = uniform(&mut r, &[3, 5], -2.0, 2.0);
    let wd = uniform(&mut r, &[5, 4], -2.0, 2.0);
    let bd = uniform(&mut r, &[4], -2.0, 2.0);
    let v = uniform(&mut r, &[4, 6], -2.0, 2.0);
    let u = uniform(&mut r, &[4, 6], -2.0, 2.0);
    let pos = uniform(&mut r, &[4, 6], 0.2, 2.0);
    let prob = uniform(&mut r, &[5], 0.05, 0.95);
    let prob2 = uniform(&mut r, &[5], 0.05, 0.95);
    let img = uniform(&mut r, &[2, 1, 4, 4], 0.0, 1.0);
    let img2 = uniform(&mut r, &[2, 1, 4, 4], 0.0, 1.0);

    let mut cases: Vec<(&'static str, Tensor, OpFn)> = Vec::new();
    for (stride, pad) in [(1, 1), (2, 1), (1, 0)] {
        let kc = k.clone();
        cases.push((
            "conv2d/input",
            x4.clone(),
            Box::new(move |t, x| {
                let kv = t.constant(kc.clone());
                let y = t.conv2d(x, kv, stride, pad)?;
                project(t, y, 1)
            }),
        ));
        let xc = x4.clone();
        cases.push((
            "conv2d/kernel",
            k.clone(),
            Box::new(move |t, kv| {
                let x = t.constant(xc.clone());
                let y = t.conv2d(x, kv, stride, pad)?;
                project(t, y, 1)
            }),
        ));
    }
    let bc = bias.clone();
    cases.push((
        "channel_bias/input",
        x4.clone(),
        Box::new(move |t, x| {
            let b = t.constant(bc.clone());
            let y = t.channel_bias(x, b)?;
            project(t, y, 2)
        }),
    ));
    let xc = x4.clone();
    cases.push((
        "channel_bias/bias",
        bias,
        Box::new(move |t, b| {
            let x = t.constant(xc.clone());
            let y = t.channel_bias(x, b)?;
            project(t, y, 2)
        }),
    ));
    cases.push((
        "upsample_nearest",
        x4.clone(),
        Box::new(|t, x| {
            let y = t.upsample_nearest(x, 2)?;
            project(t, y, 3)
        }),
    ));
    cases.push((
        "global_avg_pool",
        x4.clone(),
        Box::new(|t, x| {
            let y = t.global_avg_pool(x)?;
            project(t, y, 4)
        }),
    ));
    let (w1, b1) = (wd.clone(), bd.clone());
    cases.push((
        "dense/input",
        x2.clone(),
        Box::new(move |t, x| {
            let (w, b) = (t.constant(w1.clone()), t.constant(b1.clone()));
            let y = t.dense(x, w, b)?;
            project(t, y, 5)
        }),
    ));
    let (x1, b1) = (x2.clone(), bd.clone());
    cases.push((
        "dense/weight",
        wd.clone(),
        Box::new(move |t, w| {
            let (x, b) = (t.constant(x1.clone()), t.constant(b1.clone()));
            let y = t.dense(x, w, b)?;
            project(t, y, 5)
        }),
    ));
    let (x1, w1) = (x2, wd);
    cases.push((
        "dense/bias",
        bd,
        Box::new(move |t, b| {
            let (x, w) = (t.constant(x1.clone()), t.constant(w1.clone()));
            let y = t.dense(x, w, b)?;
            project(t, y, 5)
        }),
    ));
    cases.push((
        "reshape",
        v.clone(),
        Box::new(|t, x| {
            let y = t.reshape(x, &[2, 12])?;
            project(t, y, 6)
        }),
    ));

    let unary: [(&'static str, UnaryOp, &Tensor); 8] = [
        ("leaky_relu", |t, x| t.leaky_relu(x, 0.2), &v),
        ("sigmoid", |t, x| t.sigmoid(x), &v),
        ("scale", |t, x| t.scale(x, -1.7), &v),
        ("add_scalar", |t, x| t.add_scalar(x, 0.3), &v),
        ("abs", |t, x| t.abs(x), &v),
        ("square", |t, x| t.square(x), &v),
        ("exp", |t, x| t.exp(x), &v),
        ("ln", |t, x| t.ln(x), &pos),
    ];
    for (name, f, input) in unary {
        cases.push((name, input.clone(), Box::new(move |t, x| {
            let y = f(t, x);
            project(t, y, 7)
        })));
    }
    cases.push(("clamp", v.clone(), Box::new(|t, x| {
        let y = t.clamp(x, -1.0, 1.0);
        project(t, y, 8)
    })));
    cases.push(("sum", v.clone(), Box::new(|t, x| {
        let s = t.sum(x);
        Ok(t.scale(s, 0.5))
    })));
    cases.push(("mean", v.clone(), Box::new(|t, x| {
        let s = t.square(x);
        Ok(t.mean(s))
    })));

    type Binary = fn(&mut Tape, Var, Var) -> Result<Var>;
    let binary: [(&'static str, Binary); 3] = [
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
    ];
    for (name, f) in binary {
        let uc = u.clone();
        cases.push((name, v.clone(), Box::new(move |t, a| {
            let b = t.constant(uc.clone());
            let y = f(t, a, b)?;
            project(t, y, 9)
        })));
        let vc = v.clone();
        cases.push((name, u.clone(), Box::new(move |t, b| {
            let a = t.constant(vc.clone());
            let y = f(t, a, b)?;
            project(t, y, 9)
        })));
    }

    let target = img.clone();
    cases.push(("rec_loss", img2, Box::new(move |t, xh| {
        let x = t.constant(target.clone());
        rec_loss(t, x, xh)
    })));
    let lv = u.clone();
    cases.push(("kl_loss/mu", v.clone(), Box::new(move |t, mu| {
        let l = t.constant(lv.clone());
        kl_loss(t, mu, l)
    })));
    let mu = v.clone();
    cases.push(("kl_loss/logvar", u.clone(), Box::new(move |t, l| {
        let m = t.constant(mu.clone());
        kl_loss(t, m, l)
    })));
    cases.push(("adv_loss", prob.clone(), Box::new(|t, d| Ok(adv_loss(t, d)))));
    let fake = prob2.clone();
    cases.push(("disc_loss/real", prob.clone(), Box::new(move |t, d| {
        let f = t.constant(fake.clone());
        disc_loss(t, d, f)
    })));
    let real = prob;
    cases.push(("disc_loss/fake", prob2, Box::new(move |t, f| {
        let d = t.constant(real.clone());
        disc_loss(t, d, f)
    })));
    let lv = u.clone();
    cases.push(("reparameterize/mu", v.clone(), Box::new(move |t, mu| {
        let logvar = t.constant(lv.clone());
        let z = reparameterize(t, &EncoderOutput::Gaussian { mu, logvar }, SampleMode::Sample(5))?;
        project(t, z, 10)
    })));
    let mu = v;
    cases.push(("reparameterize/logvar", u, Box::new(move |t, logvar| {
        let m = t.constant(mu.clone());
        let z = reparameterize(t, &EncoderOutput::Gaussian { mu: m, logvar }, SampleMode::Sample(5))?;
        project(t, z, 10)
    })));
    cases
}

/// Worst relative gradient error of every op, by name.
pub fn op_gradient_errors() -> Vec<(&'static str, f32)> {
    op_cases()
        .into_iter()
        .map(|(name, x, f)| (name, finite_diff_check(f, &x, OP_EPS).expect("op evaluates")))
        .collect()
}

/// Two-stage model with fewer than 5k parameters on 8x8 inputs.
pub fn toy_model(kind: ModelKind, latent: LatentSpec, seed: u64) -> ModelParams {
    let config = ModelConfig {
        input_size: 8,
        stages: 2,
        base_width: 3,
        logvar_bias_init: -1.0,
        ..ModelConfig::default()
    };
    ModelParams::build(kind, latent, config, seed).expect("toy model")
}

pub fn param_count(p: &ModelParams) -> usize {
    p.tensors().iter().map(Tensor::numel).sum()
}

/// `λ1·L_rec + λ2·L_prior + λ3·L_adv` with a fixed noise draw, as seen by
/// the generator.
fn composite(params: &ModelParams, tape: &mut Tape, bound: &Bound, batch: &Tensor) -> Result<Var> {
    let x = tape.constant(batch.clone());
    let enc = params.encode(tape, bound, x)?;
    let (z, prior) = match enc {
        EncoderOutput::Code(z) => (z, None),
        EncoderOutput::Gaussian { mu, logvar } => (
            reparameterize(tape, &enc, SampleMode::Sample(3))?,
            Some(kl_loss(tape, mu, logvar)?),
        ),
    };
    let xh = params.decode(tape, bound, z)?;
    let mut total = rec_loss(tape, x, xh)?;
    if let Some(p) = prior {
        total = tape.add(total, p)?;
    }
    if params.kind.adversarial() {
        let d = params.discriminate(tape, bound, xh)?;
        let a = adv_loss(tape, d);
        total = tape.add(total, a)?;
    }
    Ok(total)
}

fn discriminator_objective(params: &ModelParams, tape: &mut Tape, bound: &Bound, batch: &Tensor) -> Result<Var> {
    let real = tape.constant(batch.clone());
    let fake = tape.constant(params.reconstruct(batch)?);
    let dr = params.discriminate(tape, bound, real)?;
    let df = params.discriminate(tape, bound, fake)?;
    disc_loss(tape, dr, df)
}

/// Worst relative error of the full objective with respect to each
/// parameter tensor in turn.
pub fn composite_gradient_error(params: &ModelParams, discriminator: bool) -> f32 {
    let batch = uniform(&mut rng(4), &[2, 1, 8, 8], 0.05, 0.95);
    let mut worst = 0.0f32;
    for (i, (name, t)) in params.iter().enumerate() {
        if name.starts_with("dis.") != discriminator {
            continue;
        }
        let f = |tape: &mut Tape, v: Var| -> Result<Var> {
            let vars = params
                .tensors()
                .iter()
                .enumerate()
                .map(|(j, p)| if j == i { v } else { tape.constant(p.clone()) })
                .collect();
            let bound = Bound::from_vars(vars);
            if discriminator {
                discriminator_objective(params, tape, &bound, &batch)
            } else {
                composite(params, tape, &bound, &batch)
            }
        };
        let err = finite_diff_check(f, t, MODEL_EPS).expect("objective evaluates");
        worst = worst.max(err);
    }
    worst
}

// ---- brute-force pipeline oracles ----

fn clampi(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

pub fn median_oracle(r: &Volume<f32>, size: usize) -> Vec<f32> {
    let [d, h, w] = r.dims();
    let half = (size / 2) as isize;
    let mut out = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let mut win = Vec::new();
                for dz in -half..=half {
                    for dy in -half..=half {
                        for dx in -half..=half {
                            win.push(r.get(
                                clampi(z as isize + dz, d),
                                clampi(y as isize + dy, h),
                                clampi(x as isize + dx, w),
                            ));
                        }
                    }
                }
                win.sort_by(|a, b| a.partial_cmp(b).unwrap());
                out.push(win[win.len() / 2]);
            }
        }
    }
    out
}

pub fn erode_oracle(m: &MaskVolume, radius: usize) -> Vec<u8> {
    let [d, h, w] = m.dims();
    let r = radius as isize;
    let mut out = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let mut keep = m.get(z, y, x) != 0;
                for dz in -r..=r {
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let (zz, yy, xx) = (z as isize + dz, y as isize + dy, x as isize + dx);
                            let inside = (0..d as isize).contains(&zz)
                                && (0..h as isize).contains(&yy)
                                && (0..w as isize).contains(&xx);
                            if inside && m.get(zz as usize, yy as usize, xx as usize) == 0 {
                                keep = false;
                            }
                        }
                    }
                }
                out.push(u8::from(keep));
            }
        }
    }
    out
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Union-find over face neighbours.
pub fn components_oracle(m: &MaskVolume, min: usize) -> Vec<u8> {
    let [d, h, w] = m.dims();
    let mut parent: Vec<usize> = (0..m.len()).collect();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = m.index(z, y, x);
                if m.data()[i] == 0 {
                    continue;
                }
                let mut join = |j: usize| {
                    if m.data()[j] != 0 {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        parent[a] = b;
                    }
                };
                if x + 1 < w {
                    join(m.index(z, y, x + 1));
                }
                if y + 1 < h {
                    join(m.index(z, y + 1, x));
                }
                if z + 1 < d {
                    join(m.index(z + 1, y, x));
                }
            }
        }
    }
    let mut size = vec![0usize; m.len()];
    for i in 0..m.len() {
        if m.data()[i] != 0 {
            size[find(&mut parent, i)] += 1;
        }
    }
    (0..m.len())
        .map(|i| u8::from(m.data()[i] != 0 && size[find(&mut parent, i)] >= min))
        .collect()
}

/// Smallest sorted value whose 1-based rank k satisfies `100·k ≥ p·n`.
pub fn percentile_oracle(values: &[f32], p: f32) -> f32 {
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    let k = (1..=n).find(|&k| 100.0 * k as f64 >= f64::from(p) * n as f64).unwrap_or(n);
    s[k - 1]
}

fn random_dims(r: &mut ChaCha8Rng, max: usize) -> [usize; 3] {
    [r.random_range(1..=max), r.random_range(1..=max), r.random_range(1..=max)]
}

/// Mismatch counts `[median, erode, components, threshold]` over
/// `instances` random cases each.
pub fn pipeline_oracle_mismatches(instances: usize) -> [usize; 4] {
    let mut bad = [0usize; 4];
    let mut r = rng(99);
    for _ in 0..instances {
        let dims = random_dims(&mut r, 7);
        let n: usize = dims.iter().product();
        // coarse values force ties
        let vals: Vec<f32> = (0..n).map(|_| r.random_range(0..20) as f32 / 7.0).collect();
        let vol = Volume::new(dims, vals).unwrap();
        let size = [1, 3, 5][r.random_range(0..3)];
        if median_filter_3d(&vol, size).unwrap().data() != median_oracle(&vol, size).as_slice() {
            bad[0] += 1;
        }

        let dims = random_dims(&mut r, 9);
        let n: usize = dims.iter().product();
        let density = r.random_range(0.5..0.95);
        let mask = Volume::new(dims, (0..n).map(|_| u8::from(r.random_bool(density))).collect()).unwrap();
        let radius = r.random_range(0..3);
        if erode_mask(&mask, radius).data() != erode_oracle(&mask, radius).as_slice() {
            bad[1] += 1;
        }

        let dims = random_dims(&mut r, 16);
        let n: usize = dims.iter().product();
        let density = r.random_range(0.05..0.4);
        let mask = Volume::new(dims, (0..n).map(|_| u8::from(r.random_bool(density))).collect()).unwrap();
        let min = r.random_range(1..10);
        let got = remove_small_components(&mask, min, Connectivity::Six).unwrap();
        if got.data() != components_oracle(&mask, min).as_slice() {
            bad[2] += 1;
        }

        let n = r.random_range(1..300);
        let vals: Vec<f32> = (0..n).map(|_| r.random_range(0..50) as f32 * 0.01).collect();
        let p = if r.random_bool(0.5) {
            r.random_range(1..=100) as f32
        } else {
            r.random_range(0.01f32..100.0)
        };
        if fit_threshold(vals.iter().copied(), p, "oracle").unwrap().value != percentile_oracle(&vals, p) {
            bad[3] += 1;
        }
    }
    bad
}

/// `0.5·Σ(μ² + e^lv − 1 − lv)` in f64.
pub fn kl_closed_form(mu: &[f32], lv: &[f32]) -> f64 {
    mu.iter()
        .zip(lv)
        .map(|(&m, &l)| {
            let (m, l) = (f64::from(m), f64::from(l));
            0.5 * (m * m + l.exp() - 1.0 - l)
        })
        .sum()
}

/// Largest absolute gap between `kl_loss` and the closed form over the
/// worked values and `pairs` random pairs, each scored as a batch of one.
pub fn kl_max_error(pairs: usize) -> f64 {
    let mut cases: Vec<(f32, f32)> = vec![(0.0, 0.0), (1.0, 0.0), (0.0, 4f32.ln())];
    let mut r = rng(5);
    cases.extend((0..pairs).map(|_| (r.random_range(-3.0..3.0), r.random_range(-3.0..3.0))));
    cases
        .iter()
        .map(|&(m, l)| {
            let mut tape = Tape::new();
            let mu = tape.constant(Tensor::new(vec![1, 1], vec![m]).unwrap());
            let lv = tape.constant(Tensor::new(vec![1, 1], vec![l]).unwrap());
            let k = kl_loss(&mut tape, mu, lv).unwrap();
            (tape.scalar(k).unwrap() - kl_closed_form(&[m], &[l])).abs()
        })
        .fold(0.0, f64::max)
}


/// One generator step with only the prior active. Returns whether the
/// decoder stayed bitwise identical and whether the encoder moved.
pub fn prior_only_step(kind: ModelKind) -> (bool, bool) {
    let latent = if kind.default_latent_for(&ModelConfig::default()).is_spatial() {
        LatentSpec::Spatial { h: 2, w: 2, c: 3 }
    } else {
        LatentSpec::Dense { d: 5 }
    };
    let before = toy_model(kind, latent, 1);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        weights: LossWeights {
            lambda1: 0.0,
            lambda2: 1.0,
            lambda3: 0.0,
        },
        ..TrainConfig::for_kind(kind, 1)
    };
    let mut r = rng(8);
    let data: Vec<Tensor> = (0..4).map(|_| uniform(&mut r, &[1, 1, 8, 8], 0.0, 1.0)).collect();
    let (after, _) = train(before.clone(), &data, &cfg).expect("one step");
    let (mut decoder_same, mut encoder_moved) = (true, false);
    for ((name, a), (_, b)) in before.iter().zip(after.iter()) {
        let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        if name.starts_with("dec.") {
            decoder_same &= same;
        }
        encoder_moved |= name.starts_with("enc.") && !same;
    }
    (decoder_same, encoder_moved)
}
