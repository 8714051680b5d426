//! End-to-end runs: phantom generation, training, segmentation and
//! evaluation, each reading and writing plain files.
//!
//! Directory layouts:
//!
//! ```text
//! gen-data  OUT/manifest.json  OUT/config.json  OUT/<id>/{image,brain_mask,lesion_mask}.vol
//! train     OUT/model.ckpt  OUT/loss.csv  OUT/config.json
//! segment   OUT/masks/<id>.vol  OUT/results.csv  OUT/histogram.csv  OUT/segment.json  OUT/config.json
//! eval      OUT/summary.csv
//! ```

mod config;

pub use config::{DataConfig, ModelSection, RunConfig, TrainSection, DEFAULT_EPOCHS};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use config::{derive_seed, SeedStream};

use crate::data::{
    build_manifest, generate_phantom, read_volume, write_volume, Cohort, ImageVolume, Manifest, ManifestEntry,
    MaskVolume, PatientRecord, Split, SplitConfig, Volume,
};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, dice, parse_results_csv, results_csv, split_residuals, summary_csv, DiceReport, ResidualHistogram,
    ResultRow,
};
use crate::models::{read_checkpoint, write_checkpoint, ModelParams};
use crate::pipeline::{fit_threshold, residual, segment, threshold_sample, Threshold};
use crate::training::{train_with, EpochLoss, LossReport};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const SEGMENT_FILE: &str = "segment.json";
pub const SUMMARY_FILE: &str = "summary.csv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Generates the phantom cohort and its manifest; returns the manifest path.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    create_dir(out)?;
    let d = &cfg.data;
    let subjects = (0..d.n_healthy)
        .map(|i| (Cohort::Healthy, i))
        .chain((0..d.n_lesion).map(|i| (Cohort::Lesion, d.n_healthy + i)));
    let mut entries = Vec::new();
    for (cohort, i) in subjects {
        let params = crate::data::PhantomParams {
            seed: derive_seed(cfg.seed, SeedStream::Phantom, i as u64),
            ..d.phantom.clone()
        };
        let mut rec = generate_phantom(&params, cohort)?;
        rec.id = format!("{}_{i:03}", cohort_name(cohort));
        entries.push(write_record(out, &rec)?);
    }
    let split = SplitConfig {
        train_frac: d.train_frac,
        seed: derive_seed(cfg.seed, SeedStream::Split, 0),
    };
    let manifest = build_manifest(entries, split)?;
    let path = out.join(MANIFEST_FILE);
    manifest.write(&path)?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_json()?)?;
    Ok(path)
}

fn cohort_name(c: Cohort) -> &'static str {
    match c {
        Cohort::Healthy => "healthy",
        Cohort::Lesion => "lesion",
    }
}

fn write_record(root: &Path, rec: &PatientRecord) -> Result<ManifestEntry> {
    let dir = root.join(&rec.id);
    create_dir(&dir)?;
    let rel = |name: &str| format!("{}/{name}.vol", rec.id);
    write_volume(&rec.image, &dir.join("image.vol"))?;
    write_volume(&rec.brain_mask, &dir.join("brain_mask.vol"))?;
    write_volume(&rec.lesion_mask, &dir.join("lesion_mask.vol"))?;
    Ok(ManifestEntry {
        id: rec.id.clone(),
        image: rel("image"),
        brain_mask: rel("brain_mask"),
        lesion_mask: rel("lesion_mask"),
        cohort: rec.cohort,
        split: Split::Test,
    })
}

/// A manifest together with the directory its paths are relative to.
pub struct Dataset {
    pub manifest: Manifest,
    root: PathBuf,
}

impl Dataset {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::read(manifest_path)?;
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Dataset { manifest, root })
    }

    pub fn load(&self, e: &ManifestEntry) -> Result<PatientRecord> {
        let image: ImageVolume = read_volume(&self.root.join(&e.image))?;
        let brain_mask: MaskVolume = read_volume(&self.root.join(&e.brain_mask))?;
        let lesion_mask: MaskVolume = read_volume(&self.root.join(&e.lesion_mask))?;
        image.ensure_same_dims(&brain_mask, &e.id)?;
        image.ensure_same_dims(&lesion_mask, &e.id)?;
        Ok(PatientRecord {
            id: e.id.clone(),
            image,
            brain_mask,
            lesion_mask,
            cohort: e.cohort,
        })
    }

    fn load_split(&self, split: Split) -> Result<Vec<PatientRecord>> {
        self.manifest
            .patients
            .iter()
            .filter(|p| p.split == split)
            .map(|p| self.load(p))
            .collect()
    }
}

fn check_geometry(params: &ModelParams, rec: &PatientRecord) -> Result<()> {
    let [_, h, w] = rec.image.dims();
    let side = params.config.input_size;
    if h != side || w != side {
        return Err(Error::config(format!(
            "model {} expects {side}x{side} slices, patient {} has {h}x{w}",
            params.model_id(),
            rec.id
        )));
    }
    Ok(())
}

/// Trains on the healthy training split; returns the checkpoint path.
pub fn cmd_train(
    cfg: &RunConfig,
    manifest_path: &Path,
    out: &Path,
    on_epoch: impl FnMut(&EpochLoss),
) -> Result<PathBuf> {
    cfg.validate()?;
    let ds = Dataset::open(manifest_path)?;
    let train = ds.load_split(Split::Train)?;
    if train.is_empty() {
        return Err(Error::config(format!("{} has no training subjects", manifest_path.display())));
    }
    let params = ModelParams::build(cfg.model.kind, cfg.latent(), cfg.model.config.clone(), cfg.init_seed())?;
    let mut slices = Vec::new();
    for rec in &train {
        check_geometry(&params, rec)?;
        slices.extend((0..rec.image.dims()[0]).map(|z| rec.image.slice_tensor(z)));
    }
    create_dir(out)?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_json()?)?;
    let (params, report) = train_with(params, &slices, &cfg.train_config(), on_epoch)?;
    write_text(&out.join(LOSS_FILE), &report.to_csv())?;
    let path = out.join(CHECKPOINT_FILE);
    write_checkpoint(&params, &path)?;
    Ok(path)
}

pub fn read_loss_report(path: &Path) -> Result<LossReport> {
    LossReport::from_csv(&read_text(path)?)
        .ok_or_else(|| Error::config(format!("{} is not a loss CSV", path.display())))
}

/// Metadata of a segmentation run, read back by evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub model: String,
    pub latent_spec: String,
    pub threshold: Threshold,
    /// Mean raw residual over normal brain voxels of the test subjects.
    pub mean_residual_normal: f64,
    /// Mean raw residual over lesion voxels of the test subjects.
    pub mean_residual_lesion: f64,
}

fn mean(v: &[f32]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().map(|&x| f64::from(x)).sum::<f64>() / v.len() as f64
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(f))
}

struct Segmented {
    row: ResultRow,
    mask: MaskVolume,
    normal: Vec<f32>,
    anomalous: Vec<f32>,
}

/// Fits the threshold on the training split, then segments every test
/// subject with up to `jobs` workers. Returns the output directory's
/// summary.
pub fn cmd_segment(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest_path: &Path,
    out: &Path,
    jobs: usize,
) -> Result<SegmentSummary> {
    cfg.validate()?;
    let params = read_checkpoint(checkpoint)?;
    let ds = Dataset::open(manifest_path)?;
    let pc = &cfg.pipeline;
    let recon = |rec: &PatientRecord| -> Result<ImageVolume> {
        check_geometry(&params, rec)?;
        Volume::from_batch(&params.reconstruct(&rec.image.to_batch())?)
    };

    let train_entries: Vec<&ManifestEntry> = ds.manifest.train().collect();
    if train_entries.is_empty() {
        return Err(Error::config("manifest has no training subjects to fit the threshold on"));
    }
    let samples = with_pool(jobs, || {
        train_entries
            .par_iter()
            .map(|e| {
                let rec = ds.load(e)?;
                threshold_sample(&rec.image, &recon(&rec)?, &rec.brain_mask, pc)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let source = format!("{}:train", params.model_id());
    let thr = fit_threshold(samples.into_iter().flatten(), pc.percentile, source)?;

    let model = params.kind.to_string();
    let latent_spec = params.latent.to_string();
    let test_entries: Vec<&ManifestEntry> = ds.manifest.test().collect();
    let segmented = with_pool(jobs, || {
        test_entries
            .par_iter()
            .map(|e| -> Result<Segmented> {
                let rec = ds.load(e)?;
                let start = Instant::now();
                let x_hat = recon(&rec)?;
                let seg = segment(&rec.image, &x_hat, &rec.brain_mask, &thr, pc)?;
                let seconds = start.elapsed().as_secs_f64() / rec.image.dims()[0] as f64;
                let (normal, anomalous) =
                    split_residuals(&residual(&rec.image, &x_hat)?, &rec.lesion_mask, &rec.brain_mask)?;
                Ok(Segmented {
                    row: ResultRow {
                        model: model.clone(),
                        latent_spec: latent_spec.clone(),
                        patient_id: rec.id.clone(),
                        dice: dice(&seg.mask, &rec.lesion_mask)?,
                        seconds,
                    },
                    mask: seg.mask,
                    normal,
                    anomalous,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let masks = out.join("masks");
    create_dir(&masks)?;
    let mut rows = Vec::new();
    let (mut normal, mut anomalous) = (Vec::new(), Vec::new());
    for s in segmented {
        write_volume(&s.mask, &masks.join(format!("{}.vol", s.row.patient_id)))?;
        normal.extend(s.normal);
        anomalous.extend(s.anomalous);
        rows.push(s.row);
    }
    write_text(&out.join(RESULTS_FILE), &results_csv(&rows))?;
    let hist = ResidualHistogram::from_samples(&normal, &anomalous, cfg.histogram_bins)?;
    write_text(&out.join(HISTOGRAM_FILE), &hist.to_csv())?;
    let summary = SegmentSummary {
        model,
        latent_spec,
        threshold: thr,
        mean_residual_normal: mean(&normal),
        mean_residual_lesion: mean(&anomalous),
    };
    write_text(&out.join(SEGMENT_FILE), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_json()?)?;
    Ok(summary)
}

/// Scores the masks in `predictions/masks` against the manifest. The Dice
/// summary covers the lesion subjects of the test split; timings come from
/// `predictions/results.csv` when present.
pub fn cmd_eval(predictions: &Path, manifest_path: &Path, out: &Path) -> Result<DiceReport> {
    let ds = Dataset::open(manifest_path)?;
    let test: Vec<&ManifestEntry> = ds.manifest.test().filter(|e| e.cohort == Cohort::Lesion).collect();
    if test.is_empty() {
        return Err(Error::config("manifest has no lesion subjects in the test split"));
    }
    let mask_path = |e: &ManifestEntry| predictions.join("masks").join(format!("{}.vol", e.id));
    let missing: Vec<&str> = test
        .iter()
        .filter(|e| !mask_path(e).is_file())
        .map(|e| e.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::contract(format!("no prediction for test subjects: {}", missing.join(", "))));
    }
    let mut scores = Vec::new();
    for e in &test {
        let pred: MaskVolume = read_volume(&mask_path(e))?;
        let truth: MaskVolume = read_volume(&ds.root.join(&e.lesion_mask))?;
        scores.push(dice(&pred, &truth)?);
    }

    let results = predictions.join(RESULTS_FILE);
    let timings: Vec<f64> = if results.is_file() {
        let rows = parse_results_csv(&read_text(&results)?)?;
        test.iter()
            .filter_map(|e| rows.iter().find(|r| r.patient_id == e.id).map(|r| r.seconds))
            .collect()
    } else {
        Vec::new()
    };
    let timings = if timings.is_empty() { vec![0.0] } else { timings };
    let meta = predictions.join(SEGMENT_FILE);
    let (model, latent) = if meta.is_file() {
        let s: SegmentSummary = serde_json::from_str(&read_text(&meta)?)?;
        (s.model, s.latent_spec)
    } else {
        ("unknown".to_string(), "unknown".to_string())
    };
    let report = aggregate(&scores, &timings)?.with_model(model, latent);
    create_dir(out)?;
    write_text(&out.join(SUMMARY_FILE), &summary_csv(std::slice::from_ref(&report)))?;
    Ok(report)
}
