use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::PhantomParams;
use crate::error::{Error, Result};
use crate::models::{LatentSpec, ModelConfig, ModelKind};
use crate::pipeline::PipelineConfig;
use crate::training::{LossWeights, TrainConfig};

/// Everything a run needs. Every field has a default, so `{}` is a valid
/// configuration; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; patient, split, initialisation and shuffling seeds are
    /// derived from it.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub pipeline: PipelineConfig,
    pub histogram_bins: usize,
    /// Default output directory when `--out` is not given.
    pub out_dir: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_healthy: usize,
    pub n_lesion: usize,
    /// Share of healthy subjects used for training.
    pub train_frac: f64,
    /// Phantom parameters; `seed` is replaced by a per-subject seed derived
    /// from the master seed.
    pub phantom: PhantomParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    /// Defaults to the kind's desk-scale bottleneck for `config`.
    pub latent: Option<LatentSpec>,
    pub config: ModelConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_rec: f32,
    pub lr_adv: f32,
    /// Defaults to 1 for every term the model has.
    pub weights: Option<LossWeights>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataConfig::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            pipeline: PipelineConfig::default(),
            histogram_bins: 64,
            out_dir: None,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_healthy: 40,
            n_lesion: 10,
            train_frac: 0.8,
            phantom: PhantomParams::default(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Svae,
            latent: None,
            config: ModelConfig::default(),
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::for_kind(ModelKind::Svae, 0);
        TrainSection {
            epochs: DEFAULT_EPOCHS,
            batch_size: t.batch_size,
            lr_rec: t.lr_rec,
            lr_adv: t.lr_adv,
            weights: None,
        }
    }
}

/// Epoch budget of the default configuration.
pub const DEFAULT_EPOCHS: usize = 40;

/// Independent seed streams derived from the master seed.
#[derive(Clone, Copy, Debug)]
pub(crate) enum SeedStream {
    Phantom = 1,
    Split = 2,
    Init = 3,
    Shuffle = 4,
}

/// The `index`-th seed of `stream` under `master`.
pub(crate) fn derive_seed(master: u64, stream: SeedStream, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream as u64);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies `key=value`
    /// overrides with dotted paths, resolves defaults and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text =
                    fs::read_to_string(p).map_err(|e| Error::io(format!("reading config {}", p.display()), e))?;
                let v: Value = serde_json::from_str(&text)
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
                // Reject unknown keys before defaults fill the gaps.
                serde_json::from_value::<RunConfig>(v.clone())
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?;
                let mut full = serde_json::to_value(RunConfig::default())?;
                merge(&mut full, v);
                full
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::config(format!("after overrides: {e}")))?;
        cfg.resolved()
    }

    /// Fills the optional fields and validates the whole document.
    pub fn resolved(mut self) -> Result<Self> {
        let kind = self.model.kind;
        if self.model.latent.is_none() {
            self.model.latent = Some(kind.default_latent_for(&self.model.config));
        }
        if self.train.weights.is_none() {
            self.train.weights = Some(LossWeights::for_kind(kind));
        }
        self.data.phantom.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let latent = self.latent();
        self.model.config.validate(&latent)?;
        self.train_config().validate(self.model.kind)?;
        self.pipeline.validate().map_err(|e| Error::config(e.to_string()))?;
        self.data.phantom.validate()?;
        if self.data.n_healthy == 0 || self.data.n_lesion == 0 {
            return Err(Error::config("n_healthy and n_lesion must be at least 1"));
        }
        if self.histogram_bins < 2 {
            return Err(Error::config("histogram_bins must be at least 2"));
        }
        let [_, h, w] = self.data.phantom.dims;
        let side = self.model.config.input_size;
        if h != side || w != side {
            return Err(Error::config(format!(
                "phantom slices are {h}x{w} but the model expects {side}x{side}"
            )));
        }
        Ok(())
    }

    pub fn latent(&self) -> LatentSpec {
        self.model
            .latent
            .unwrap_or_else(|| self.model.kind.default_latent_for(&self.model.config))
    }

    pub fn train_config(&self) -> TrainConfig {
        let kind = self.model.kind;
        TrainConfig {
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr_rec: self.train.lr_rec,
            lr_adv: self.train.lr_adv,
            seed: derive_seed(self.seed, SeedStream::Shuffle, 0),
            weights: self.train.weights.unwrap_or_else(|| LossWeights::for_kind(kind)),
        }
    }

    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, SeedStream::Init, 0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Applies `a.b.c=value`; the value is parsed as JSON and falls back to a
/// plain string.
fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{spec}' is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("'{}' is not a section", keys[..i].join("."))))?;
        // Optional sections serialise as null until set; open them up.
        if i + 1 < keys.len() && obj.get(*key).is_some_and(Value::is_null) {
            obj.insert(key.to_string(), Value::Object(Default::default()));
        }
        node = obj
            .get_mut(*key)
            .ok_or_else(|| Error::config(format!("unknown config key '{path}'")))?;
    }
    *node = value;
    Ok(())
}
