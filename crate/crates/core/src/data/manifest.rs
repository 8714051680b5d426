use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Cohort;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of healthy subjects used for training.
    pub train_frac: f64,
    pub seed: u64,
}

/// One subject; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub image: String,
    pub brain_mask: String,
    pub lesion_mask: String,
    pub cohort: Cohort,
    pub split: Split,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub patients: Vec<ManifestEntry>,
}

/// Assigns splits: a seeded `train_frac` share of the healthy subjects goes
/// to training, everything else (all lesion subjects included) to testing.
/// `entries` carry their ids, paths and cohorts; incoming splits are ignored.
pub fn build_manifest(mut entries: Vec<ManifestEntry>, split: SplitConfig) -> Result<Manifest> {
    if !(0.0..=1.0).contains(&split.train_frac) {
        return Err(Error::config(format!("train_frac {} outside [0, 1]", split.train_frac)));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = entries.iter().find(|e| !seen.insert(e.id.as_str())) {
        return Err(Error::config(format!("duplicate patient id '{}'", dup.id)));
    }
    let mut healthy: Vec<usize> = (0..entries.len())
        .filter(|&i| entries[i].cohort == Cohort::Healthy)
        .collect();
    let lesion = entries.len() - healthy.len();
    if healthy.is_empty() || lesion == 0 {
        return Err(Error::config(format!(
            "need at least one healthy and one lesion subject, got {} and {lesion}",
            healthy.len()
        )));
    }
    let n_train = (split.train_frac * healthy.len() as f64).round() as usize;
    if n_train == 0 {
        return Err(Error::config(format!(
            "train_frac {} leaves no healthy subject for training",
            split.train_frac
        )));
    }
    healthy.shuffle(&mut ChaCha8Rng::seed_from_u64(split.seed));
    let train: HashSet<usize> = healthy[..n_train].iter().copied().collect();
    for (i, e) in entries.iter_mut().enumerate() {
        e.split = if train.contains(&i) { Split::Train } else { Split::Test };
    }
    Ok(Manifest { patients: entries })
}

impl Manifest {
    pub fn train(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.patients.iter().filter(|p| p.split == Split::Train)
    }

    pub fn test(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.patients.iter().filter(|p| p.split == Split::Test)
    }

    /// Checks the split invariants: lesion subjects never train.
    pub fn validate(&self) -> Result<()> {
        if let Some(p) = self
            .patients
            .iter()
            .find(|p| p.cohort == Cohort::Lesion && p.split == Split::Train)
        {
            return Err(Error::config(format!("lesion subject '{}' is in the training split", p.id)));
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}
