//! Overlap scores, per-model summaries, residual histograms and their CSV
//! forms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{MaskVolume, Volume};
use crate::error::{Error, Result};

/// `2|P∩T| / (|P|+|T|)`, 1.0 when both masks are empty.
pub fn dice(pred: &MaskVolume, truth: &MaskVolume) -> Result<f32> {
    pred.ensure_same_dims(truth, "dice")?;
    let (mut p, mut t, mut both) = (0u64, 0u64, 0u64);
    for (&a, &b) in pred.data().iter().zip(truth.data()) {
        let (a, b) = (a != 0, b != 0);
        p += u64::from(a);
        t += u64::from(b);
        both += u64::from(a && b);
    }
    if p + t == 0 {
        return Ok(1.0);
    }
    Ok((2.0 * both as f64 / (p + t) as f64) as f32)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiceReport {
    pub model: String,
    pub latent_spec: String,
    pub per_patient: Vec<f32>,
    pub mean: f32,
    /// Population standard deviation.
    pub std: f32,
    pub avg_seconds: f64,
}

pub fn aggregate(per_patient: &[f32], timings: &[f64]) -> Result<DiceReport> {
    if per_patient.is_empty() || timings.is_empty() {
        return Err(Error::contract("cannot aggregate an empty set of patients"));
    }
    let n = per_patient.len() as f64;
    let mean = per_patient.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = per_patient.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    Ok(DiceReport {
        per_patient: per_patient.to_vec(),
        mean: mean as f32,
        std: var.sqrt() as f32,
        avg_seconds: timings.iter().sum::<f64>() / timings.len() as f64,
        ..DiceReport::default()
    })
}

impl DiceReport {
    pub fn with_model(mut self, model: impl Into<String>, latent_spec: impl Into<String>) -> Self {
        self.model = model.into();
        self.latent_spec = latent_spec.into();
        self
    }
}

/// Counts of normal-brain and lesion residuals over shared bins spanning
/// `[0, max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualHistogram {
    /// `bins + 1` ascending edges.
    pub edges: Vec<f32>,
    pub normal: Vec<u64>,
    pub anomalous: Vec<u64>,
}

impl ResidualHistogram {
    pub fn from_samples(normal: &[f32], anomalous: &[f32], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::param(format!("histogram needs at least 2 bins, got {bins}")));
        }
        let max = normal.iter().chain(anomalous).fold(0.0f32, |m, &v| m.max(v));
        let edges = (0..=bins).map(|i| max * i as f32 / bins as f32).collect();
        let count = |vals: &[f32]| {
            let mut c = vec![0u64; bins];
            for &v in vals {
                let b = if max > 0.0 { (v / max * bins as f32) as usize } else { 0 };
                c[b.min(bins - 1)] += 1;
            }
            c
        };
        Ok(ResidualHistogram {
            edges,
            normal: count(normal),
            anomalous: count(anomalous),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count_normal,count_anomalous\n");
        for i in 0..self.normal.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.edges[i],
                self.edges[i + 1],
                self.normal[i],
                self.anomalous[i]
            );
        }
        out
    }
}

/// Splits residuals into normal-brain voxels (brain, not lesion) and lesion
/// voxels.
pub fn split_residuals(
    residuals: &Volume<f32>,
    lesion_mask: &MaskVolume,
    brain_mask: &MaskVolume,
) -> Result<(Vec<f32>, Vec<f32>)> {
    residuals.ensure_same_dims(lesion_mask, "lesion mask")?;
    residuals.ensure_same_dims(brain_mask, "brain mask")?;
    let mut normal = Vec::new();
    let mut anomalous = Vec::new();
    for ((&r, &l), &b) in residuals.data().iter().zip(lesion_mask.data()).zip(brain_mask.data()) {
        if l != 0 {
            anomalous.push(r);
        } else if b != 0 {
            normal.push(r);
        }
    }
    Ok((normal, anomalous))
}

pub fn residual_histogram(
    residuals: &Volume<f32>,
    lesion_mask: &MaskVolume,
    brain_mask: &MaskVolume,
    bins: usize,
) -> Result<ResidualHistogram> {
    let (normal, anomalous) = split_residuals(residuals, lesion_mask, brain_mask)?;
    ResidualHistogram::from_samples(&normal, &anomalous, bins)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub model: String,
    pub latent_spec: String,
    pub patient_id: String,
    pub dice: f32,
    pub seconds: f64,
}

pub const RESULTS_HEADER: &str = "model,latent_spec,patient_id,dice,seconds";
pub const SUMMARY_HEADER: &str = "model,latent_spec,dice_mean,dice_std,avg_seconds";

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.model, r.latent_spec, r.patient_id, r.dice, r.seconds);
    }
    out
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, RESULTS_HEADER)) => {}
        _ => return Err(Error::config(format!("results CSV must start with '{RESULTS_HEADER}'"))),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let bad = || Error::config(format!("results CSV line {}: malformed row '{line}'", n + 1));
            let c: Vec<&str> = line.split(',').collect();
            if c.len() != 5 {
                return Err(bad());
            }
            Ok(ResultRow {
                model: c[0].to_string(),
                latent_spec: c[1].to_string(),
                patient_id: c[2].to_string(),
                dice: c[3].parse().map_err(|_| bad())?,
                seconds: c[4].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn summary_csv(reports: &[DiceReport]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in reports {
        let _ = writeln!(out, "{},{},{},{},{}", r.model, r.latent_spec, r.mean, r.std, r.avg_seconds);
    }
    out
}
