//! Encoder/decoder/discriminator graphs for the six autoencoding variants.
//!
//! Layout for `S` stages with widths `w_s = base * 2^s`:
//!
//! ```text
//! encoder        S x [conv3x3 stride 2 -> leaky_relu]
//! bottleneck     spatial: conv1x1 -> c channels     dense: flatten -> dense(d)
//!                (variational kinds have a second head for logvar)
//! decoder        spatial: conv3x3 c -> w_{S-1}       dense: dense(d) -> w_{S-1}*h*w
//!                S x [upsample x2 -> conv3x3 -> leaky_relu]
//!                conv3x3 -> 1 channel -> sigmoid
//! discriminator  S x [conv3x3 stride 2 -> leaky_relu] -> global mean -> dense(1) -> sigmoid
//! ```

mod checkpoint;
mod network;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use network::{reparameterize, Bound, EncoderOutput, SampleMode, LOGVAR_RANGE};

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "dae")]
    Dae,
    #[serde(rename = "sae")]
    Sae,
    #[serde(rename = "dvae")]
    Dvae,
    #[serde(rename = "svae")]
    Svae,
    #[serde(rename = "saegan")]
    SaeGan,
    #[serde(rename = "anovaegan")]
    AnoVaeGan,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Dae,
        ModelKind::Sae,
        ModelKind::Dvae,
        ModelKind::Svae,
        ModelKind::SaeGan,
        ModelKind::AnoVaeGan,
    ];

    /// Has a KL prior term and a stochastic encoder.
    pub fn variational(self) -> bool {
        matches!(self, ModelKind::Dvae | ModelKind::Svae | ModelKind::AnoVaeGan)
    }

    /// Has a discriminator.
    pub fn adversarial(self) -> bool {
        matches!(self, ModelKind::SaeGan | ModelKind::AnoVaeGan)
    }

    /// Lowercase identifier used on the command line and in files.
    pub fn id(self) -> &'static str {
        match self {
            ModelKind::Dae => "dae",
            ModelKind::Sae => "sae",
            ModelKind::Dvae => "dvae",
            ModelKind::Svae => "svae",
            ModelKind::SaeGan => "saegan",
            ModelKind::AnoVaeGan => "anovaegan",
        }
    }

    /// Bottleneck of the variant's family sized for `config`: dense kinds
    /// get `8 * base_width` units, spatial kinds the last feature map with
    /// `2 * base_width` channels (128 and 8x8x32 for the default config).
    pub fn default_latent_for(self, config: &ModelConfig) -> LatentSpec {
        match self {
            ModelKind::Dae | ModelKind::Dvae => LatentSpec::Dense {
                d: 8 * config.base_width,
            },
            _ => {
                let side = config.bottleneck_size();
                LatentSpec::Spatial {
                    h: side,
                    w: side,
                    c: 2 * config.base_width,
                }
            }
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            ModelKind::Dae => "dAE",
            ModelKind::Sae => "sAE",
            ModelKind::Dvae => "dVAE",
            ModelKind::Svae => "sVAE",
            ModelKind::SaeGan => "sAE-GAN",
            ModelKind::AnoVaeGan => "AnoVAEGAN",
        };
        f.write_str(name)
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.id().eq_ignore_ascii_case(s) || k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown model '{s}', expected one of dae, sae, dvae, svae, saegan, anovaegan"
                ))
            })
    }
}

/// Shape of the bottleneck code. Written as `dense:D` or `spatial:HxWxC`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LatentSpec {
    Dense { d: usize },
    Spatial { h: usize, w: usize, c: usize },
}

impl LatentSpec {
    pub fn is_spatial(&self) -> bool {
        matches!(self, LatentSpec::Spatial { .. })
    }

    /// Per-sample tensor shape of the code.
    pub fn shape(&self) -> Vec<usize> {
        match *self {
            LatentSpec::Dense { d } => vec![d],
            LatentSpec::Spatial { h, w, c } => vec![c, h, w],
        }
    }

    pub fn numel(&self) -> usize {
        self.shape().iter().product()
    }
}

impl fmt::Display for LatentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            LatentSpec::Dense { d } => write!(f, "dense:{d}"),
            LatentSpec::Spatial { h, w, c } => write!(f, "spatial:{h}x{w}x{c}"),
        }
    }
}

impl FromStr for LatentSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("invalid latent '{s}', expected dense:D or spatial:HxWxC"));
        let positive = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0).ok_or_else(bad);
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind.trim() {
            "dense" => Ok(LatentSpec::Dense { d: positive(rest)? }),
            "spatial" => {
                let parts: Vec<&str> = rest.split('x').collect();
                match parts.as_slice() {
                    [h, w, c] => Ok(LatentSpec::Spatial {
                        h: positive(h)?,
                        w: positive(w)?,
                        c: positive(c)?,
                    }),
                    _ => Err(bad()),
                }
            }
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for LatentSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<LatentSpec> for String {
    fn from(l: LatentSpec) -> String {
        l.to_string()
    }
}

/// Network geometry shared by encoder, decoder and discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Square input side length in pixels.
    pub input_size: usize,
    /// Number of stride-2 stages.
    pub stages: usize,
    /// Channel width of the first stage; doubles every stage.
    pub base_width: usize,
    pub leaky_slope: f32,
    /// Initial bias of the logvar head. A negative value starts the
    /// posterior narrow so the code carries the input's layout from the
    /// first steps instead of being drowned in unit-variance noise.
    pub logvar_bias_init: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 64,
            stages: 3,
            base_width: 16,
            leaky_slope: 0.2,
            logvar_bias_init: -6.0,
        }
    }
}

impl ModelConfig {
    pub fn width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    /// Side length of the encoder's last feature map.
    pub fn bottleneck_size(&self) -> usize {
        self.input_size >> self.stages
    }

    pub fn validate(&self, latent: &LatentSpec) -> Result<()> {
        if self.stages == 0 || self.base_width == 0 || self.input_size == 0 {
            return Err(Error::config("stages, base_width and input_size must be positive"));
        }
        if !self.logvar_bias_init.is_finite() {
            return Err(Error::config("logvar_bias_init must be finite"));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::config(format!(
                "leaky_slope {} outside [0, 1)",
                self.leaky_slope
            )));
        }
        if self.stages >= usize::BITS as usize || !self.input_size.is_multiple_of(1 << self.stages) {
            return Err(Error::config(format!(
                "input size {} is not divisible by 2^{} for {} stages",
                self.input_size, self.stages, self.stages
            )));
        }
        let side = self.bottleneck_size();
        match *latent {
            LatentSpec::Dense { d: 0 } => Err(Error::config("dense latent needs d > 0")),
            LatentSpec::Spatial { h, w, c } if h != side || w != side || c == 0 => Err(Error::config(format!(
                "spatial latent {latent} inconsistent with config: expected feature-map size \
                 {side}x{side} (input {} / 2^{}) and c > 0",
                self.input_size, self.stages
            ))),
            _ => Ok(()),
        }
    }
}

/// Named parameter tensors plus the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub kind: ModelKind,
    pub latent: LatentSpec,
    pub config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// How a layer's weights are drawn at initialisation.
#[derive(Clone, Copy)]
enum Init {
    /// He-normal scaled for leaky ReLU.
    Leaky,
    /// Variance 1/fan_in, for layers feeding a sigmoid or a code.
    Linear,
    /// Linear, shrunk so the logvar head starts near zero.
    Small,
}

struct Builder {
    rng: ChaCha8Rng,
    slope: f32,
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Builder {
    fn weight(&mut self, name: String, shape: Vec<usize>, fan_in: usize, init: Init) {
        let gain = match init {
            Init::Leaky => 2.0 / (1.0 + self.slope * self.slope),
            Init::Linear => 1.0,
            Init::Small => 0.01,
        };
        let std = (gain / fan_in as f32).sqrt();
        let normal = Normal::new(0.0f32, std).expect("finite std");
        let rng = &mut self.rng;
        self.names.push(name);
        self.tensors.push(Tensor::from_fn(shape, |_| normal.sample(rng)));
    }

    fn conv(&mut self, prefix: &str, in_c: usize, out_c: usize, k: usize, init: Init) {
        self.weight(format!("{prefix}.weight"), vec![out_c, in_c, k, k], in_c * k * k, init);
        self.names.push(format!("{prefix}.bias"));
        self.tensors.push(Tensor::zeros(vec![out_c]));
    }

    fn dense(&mut self, prefix: &str, d_in: usize, d_out: usize, init: Init) {
        self.weight(format!("{prefix}.weight"), vec![d_in, d_out], d_in, init);
        self.names.push(format!("{prefix}.bias"));
        self.tensors.push(Tensor::zeros(vec![d_out]));
    }
}

impl ModelParams {
    /// Deterministically initialised parameters for `kind`.
    pub fn build(kind: ModelKind, latent: LatentSpec, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate(&latent)?;
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            slope: config.leaky_slope,
            names: Vec::new(),
            tensors: Vec::new(),
        };
        let s = config.stages;
        let side = config.bottleneck_size();
        let top = config.width(s - 1);

        let mut in_c = 1;
        for stage in 0..s {
            b.conv(&format!("enc.conv{stage}"), in_c, config.width(stage), 3, Init::Leaky);
            in_c = config.width(stage);
        }
        let heads: &[(&str, Init)] = if kind.variational() {
            &[("enc.mu", Init::Linear), ("enc.logvar", Init::Small)]
        } else {
            &[("enc.code", Init::Linear)]
        };
        for &(head, init) in heads {
            match latent {
                LatentSpec::Spatial { c, .. } => b.conv(head, top, c, 1, init),
                LatentSpec::Dense { d } => b.dense(head, top * side * side, d, init),
            }
        }
        if kind.variational() {
            let bias = b.tensors.last_mut().expect("logvar head");
            bias.data_mut().fill(config.logvar_bias_init);
        }

        match latent {
            LatentSpec::Spatial { c, .. } => b.conv("dec.entry", c, top, 3, Init::Leaky),
            LatentSpec::Dense { d } => b.dense("dec.entry", d, top * side * side, Init::Leaky),
        }
        let mut in_c = top;
        for j in 0..s {
            let out_c = decoder_width(&config, j);
            b.conv(&format!("dec.up{j}"), in_c, out_c, 3, Init::Leaky);
            in_c = out_c;
        }
        b.conv("dec.out", in_c, 1, 3, Init::Linear);

        if kind.adversarial() {
            let mut in_c = 1;
            for stage in 0..s {
                b.conv(&format!("dis.conv{stage}"), in_c, config.width(stage), 3, Init::Leaky);
                in_c = config.width(stage);
            }
            b.dense("dis.fc", top, 1, Init::Linear);
        }

        Ok(ModelParams {
            kind,
            latent,
            config,
            names: b.names,
            tensors: b.tensors,
        })
    }

    pub(crate) fn from_parts(
        kind: ModelKind,
        latent: LatentSpec,
        config: ModelConfig,
        names: Vec<String>,
        tensors: Vec<Tensor>,
    ) -> Self {
        ModelParams {
            kind,
            latent,
            config,
            names,
            tensors,
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total scalar parameter count of the tensors whose name starts with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Short identifier such as `svae_spatial:8x8x32`.
    pub fn model_id(&self) -> String {
        format!("{}_{}", self.kind.id(), self.latent)
    }
}

/// Output width of decoder upsampling stage `j` (mirror of the encoder).
fn decoder_width(config: &ModelConfig, j: usize) -> usize {
    let s = config.stages;
    if j + 1 < s {
        config.width(s - 2 - j)
    } else {
        config.width(0)
    }
}
