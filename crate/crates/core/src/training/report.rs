use std::fmt::Write as _;

/// Loss values of one minibatch; `None` for terms the model does not have.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepLoss {
    pub step: usize,
    pub epoch: usize,
    pub l_rec: Option<f32>,
    pub l_prior: Option<f32>,
    pub l_adv: Option<f32>,
    pub l_dis: Option<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub steps: usize,
    pub l_rec: Option<f32>,
    pub l_prior: Option<f32>,
    pub l_adv: Option<f32>,
    pub l_dis: Option<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub steps: Vec<StepLoss>,
    pub epochs: Vec<EpochLoss>,
}

fn mean_of(rows: &[StepLoss], f: impl Fn(&StepLoss) -> Option<f32>) -> Option<f32> {
    let vals: Vec<f64> = rows.iter().filter_map(|r| f(r).map(f64::from)).collect();
    (!vals.is_empty()).then(|| (vals.iter().sum::<f64>() / vals.len() as f64) as f32)
}

impl LossReport {
    pub(crate) fn push(&mut self, step: StepLoss) {
        self.steps.push(step);
    }

    pub(crate) fn close_epoch(&mut self, epoch: usize) -> &EpochLoss {
        let rows: Vec<StepLoss> = self.steps.iter().filter(|s| s.epoch == epoch).cloned().collect();
        self.epochs.push(EpochLoss {
            epoch,
            steps: rows.len(),
            l_rec: mean_of(&rows, |r| r.l_rec),
            l_prior: mean_of(&rows, |r| r.l_prior),
            l_adv: mean_of(&rows, |r| r.l_adv),
            l_dis: mean_of(&rows, |r| r.l_dis),
        });
        self.epochs.last().expect("just pushed")
    }

    /// Per-step CSV: `step,epoch,l_rec,l_prior,l_adv,l_dis`, inactive
    /// terms left empty.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f32>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("step,epoch,l_rec,l_prior,l_adv,l_dis\n");
        for s in &self.steps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.step,
                s.epoch,
                cell(s.l_rec),
                cell(s.l_prior),
                cell(s.l_adv),
                cell(s.l_dis)
            );
        }
        out
    }

    /// Parses the output of [`LossReport::to_csv`] back into step rows and
    /// recomputes epoch means.
    pub fn from_csv(text: &str) -> Option<Self> {
        let mut lines = text.lines();
        if lines.next()? != "step,epoch,l_rec,l_prior,l_adv,l_dis" {
            return None;
        }
        let mut report = LossReport::default();
        for line in lines.filter(|l| !l.is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return None;
            }
            let opt = |s: &str| -> Option<Option<f32>> {
                if s.is_empty() {
                    Some(None)
                } else {
                    s.parse().ok().map(Some)
                }
            };
            report.steps.push(StepLoss {
                step: cols[0].parse().ok()?,
                epoch: cols[1].parse().ok()?,
                l_rec: opt(cols[2])?,
                l_prior: opt(cols[3])?,
                l_adv: opt(cols[4])?,
                l_dis: opt(cols[5])?,
            });
        }
        let last = report.steps.last().map_or(0, |s| s.epoch + 1);
        for e in 0..last {
            report.close_epoch(e);
        }
        Some(report)
    }
}
