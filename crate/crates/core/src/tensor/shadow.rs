//! f64 re-evaluation of the forward pass, kept alongside the f32 values on
//! tapes built with [`Tape::precise`](super::Tape::precise).

use super::tape::{Node, Op};
use super::Tensor;

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// The f64 value of a node with operation `op` and f32 value `value`,
/// computed from its inputs' shadows.
pub(super) fn eval(nodes: &[Node], op: &Op, value: &Tensor) -> Vec<f64> {
    let s = |v: super::Var| -> &[f64] { nodes[v.index()].shadow.as_deref().expect("precise tape") };
    let shape = |v: super::Var| nodes[v.index()].value.shape();
    let map = |v: super::Var, f: &dyn Fn(f64) -> f64| s(v).iter().map(|&x| f(x)).collect::<Vec<f64>>();
    let zip = |a: super::Var, b: super::Var, f: &dyn Fn(f64, f64) -> f64| {
        s(a).iter().zip(s(b)).map(|(&x, &y)| f(x, y)).collect::<Vec<f64>>()
    };
    match *op {
        Op::Leaf => value.data().iter().map(|&x| f64::from(x)).collect(),
        Op::Conv2d { input, kernel, geom: g } => {
            let (x, k) = (s(input), s(kernel));
            let n = shape(input)[0];
            let mut out = vec![0.0; n * g.out_plane()];
            let ks = g.ksize;
            for b in 0..n {
                for f in 0..g.filters {
                    for oy in 0..g.out_h {
                        for ox in 0..g.out_w {
                            let mut acc = 0.0;
                            for c in 0..g.channels {
                                for ky in 0..ks {
                                    for kx in 0..ks {
                                        let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                        if iy < 0 || ix < 0 || iy >= g.height as isize || ix >= g.width as isize {
                                            continue;
                                        }
                                        let xi = ((b * g.channels + c) * g.height + iy as usize) * g.width + ix as usize;
                                        acc += x[xi] * k[((f * g.channels + c) * ks + ky) * ks + kx];
                                    }
                                }
                            }
                            out[((b * g.filters + f) * g.out_h + oy) * g.out_w + ox] = acc;
                        }
                    }
                }
            }
            out
        }
        Op::ChannelBias { input, bias } => {
            let sh = shape(input);
            let plane = sh[2] * sh[3];
            let b = s(bias);
            s(input)
                .iter()
                .enumerate()
                .map(|(i, &x)| x + b[(i / plane) % sh[1]])
                .collect()
        }
        Op::Upsample { input, factor } => {
            let sh = shape(input);
            let (h, w) = (sh[2], sh[3]);
            let (oh, ow) = (h * factor, w * factor);
            let x = s(input);
            (0..value.numel())
                .map(|i| {
                    let (plane, oy, ox) = (i / (oh * ow), (i / ow) % oh, i % ow);
                    x[plane * h * w + (oy / factor) * w + ox / factor]
                })
                .collect()
        }
        Op::LeakyRelu { input, slope } => {
            let slope = f64::from(slope);
            map(input, &|x| if x >= 0.0 { x } else { slope * x })
        }
        Op::Sigmoid { input } => map(input, &stable_sigmoid),
        Op::Dense { input, weight, bias } => {
            let (n, d) = (shape(input)[0], shape(input)[1]);
            let e = shape(weight)[1];
            let (x, w, b) = (s(input), s(weight), s(bias));
            let mut out = Vec::with_capacity(n * e);
            for r in 0..n {
                for c in 0..e {
                    out.push(b[c] + (0..d).map(|j| x[r * d + j] * w[j * e + c]).sum::<f64>());
                }
            }
            out
        }
        Op::Reshape { input } => s(input).to_vec(),
        Op::Add(a, b) => zip(a, b, &|x, y| x + y),
        Op::Sub(a, b) => zip(a, b, &|x, y| x - y),
        Op::Mul(a, b) => zip(a, b, &|x, y| x * y),
        Op::Scale { input, factor } => {
            let f = f64::from(factor);
            map(input, &|x| x * f)
        }
        Op::AddScalar { input, value: c } => {
            let c = f64::from(c);
            map(input, &|x| x + c)
        }
        Op::Abs { input } => map(input, &f64::abs),
        Op::Square { input } => map(input, &|x| x * x),
        Op::Exp { input } => map(input, &f64::exp),
        Op::Log { input } => map(input, &f64::ln),
        Op::Clamp { input, lo, hi } => {
            let (lo, hi) = (f64::from(lo), f64::from(hi));
            map(input, &|x| x.clamp(lo, hi))
        }
        Op::Sum { input } => vec![s(input).iter().sum()],
        Op::Mean { input } => vec![s(input).iter().sum::<f64>() / s(input).len() as f64],
        Op::GlobalAvgPool { input } => {
            let sh = shape(input);
            let plane = sh[2] * sh[3];
            s(input).chunks(plane).map(|c| c.iter().sum::<f64>() / plane as f64).collect()
        }
    }
}
