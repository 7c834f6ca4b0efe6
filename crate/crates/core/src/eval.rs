//! Error rates, the relative corruption error, benchmark reports and
//! per-set feature change under corruption.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corrupt::CorruptionKind;
use crate::error::{Error, Result};
use crate::geom::{Point3, PointCloud};
use crate::model::{plan_with_frozen, CloudPlan, Model};
use crate::rng::rng_for;
use crate::train::argmax_rows;

pub const METRICS_SCHEMA: &str = "setmix-metrics-1";

/// Fraction of mismatched predictions.
pub fn error_rate(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let wrong = predictions.iter().zip(labels).filter(|(p, l)| p != l).count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Unweighted mean of the per-class error rates over the classes present in `labels`.
pub fn class_mean_error(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions, labels)?;
    let mut per: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (p, l) in predictions.iter().zip(labels) {
        let e = per.entry(*l).or_default();
        e.0 += usize::from(p != l);
        e.1 += 1;
    }
    Ok(per.values().map(|&(w, n)| w as f64 / n as f64).sum::<f64>() / per.len() as f64)
}

fn check_lengths(predictions: &[usize], labels: &[usize]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Empty);
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            "error_rate",
            format!("{} predictions for {} labels", predictions.len(), labels.len()),
        ));
    }
    Ok(())
}

/// Corruption-induced error increase relative to a baseline model's increase.
pub fn rmce(er_noise: f64, er_clean: f64, bm_noise: f64, bm_clean: f64) -> Result<f64> {
    let denom = bm_noise - bm_clean;
    if denom == 0.0 {
        return Err(Error::DegenerateBaseline);
    }
    Ok((er_noise - er_clean) / denom)
}

/// Clean and noise error rates of the reference model used to normalize RmCE.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConstants {
    pub bm_clean: f64,
    pub bm_noise: f64,
}

impl Default for BaselineConstants {
    fn default() -> Self {
        BaselineConstants { bm_clean: 0.07, bm_noise: 0.215 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub config_hash: Option<String>,
    pub er_clean: f64,
    /// Class-wise mean error on the clean set.
    pub mer: f64,
    pub er_by: BTreeMap<CorruptionKind, BTreeMap<u8, f64>>,
    /// Mean over every (kind, severity) cell.
    pub er_noise: f64,
    /// Mean over the severity-5 cells, if any were evaluated.
    pub er_5: Option<f64>,
    pub rmce: f64,
    pub baseline_constants: BaselineConstants,
}

impl MetricsReport {
    pub fn from_cells(
        er_clean: f64,
        mer: f64,
        er_by: BTreeMap<CorruptionKind, BTreeMap<u8, f64>>,
        baseline: BaselineConstants,
        config_hash: Option<String>,
    ) -> Result<Self> {
        let er_noise = mean(er_by.values().flat_map(|m| m.values().copied())).ok_or(Error::Empty)?;
        let er_5 = mean(er_by.values().filter_map(|m| m.get(&5).copied()));
        let rmce = rmce(er_noise, er_clean, baseline.bm_noise, baseline.bm_clean)?;
        Ok(MetricsReport {
            schema: METRICS_SCHEMA.to_string(),
            config_hash,
            er_clean,
            mer,
            er_by,
            er_noise,
            er_5,
            rmce,
            baseline_constants: baseline,
        })
    }

    /// Recomputes the aggregates from the cells; true when they agree bit for bit.
    pub fn audit(&self) -> bool {
        match MetricsReport::from_cells(
            self.er_clean,
            self.mer,
            self.er_by.clone(),
            self.baseline_constants,
            self.config_hash.clone(),
        ) {
            Ok(r) => {
                r.er_noise.to_bits() == self.er_noise.to_bits()
                    && r.er_5.map(f64::to_bits) == self.er_5.map(f64::to_bits)
                    && r.rmce.to_bits() == self.rmce.to_bits()
            }
            Err(_) => false,
        }
    }

    /// Mean error of one corruption kind over its evaluated severities.
    pub fn kind_mean(&self, kind: CorruptionKind) -> Option<f64> {
        self.er_by.get(&kind).and_then(|m| mean(m.values().copied()))
    }

    /// Aligned text: a one-row summary by corruption kind, then the per-severity breakdown.
    pub fn text_table(&self, model: &str) -> String {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
        let kinds = CorruptionKind::ALL;
        let mut out = String::new();
        let name_w = model.len().max(8);
        let _ = write!(out, "{:<name_w$} {:>7}", "Model", "Clean");
        for k in kinds {
            let _ = write!(out, " {:>8}", k.short_label());
        }
        let _ = writeln!(out, " {:>8} {:>7}", "ER_noise", "RmCE");
        let _ = write!(out, "{:<name_w$} {:>7}", model, pct(Some(self.er_clean)));
        for k in kinds {
            let _ = write!(out, " {:>8}", pct(self.kind_mean(k)));
        }
        let _ = writeln!(out, " {:>8} {:>7.2}", pct(Some(self.er_noise)), self.rmce);
        let _ = writeln!(out);
        let _ = write!(out, "{:<8}", "Severity");
        for k in kinds {
            let _ = write!(out, " {:>8}", k.short_label());
        }
        let _ = writeln!(out);
        for s in 1..=5u8 {
            let _ = write!(out, "{:<8}", s);
            for k in kinds {
                let _ = write!(out, " {:>8}", pct(self.er_by.get(&k).and_then(|m| m.get(&s)).copied()));
            }
            let _ = writeln!(out);
        }
        let _ = writeln!(
            out,
            "\nmER {}  ER_5 {}  baseline clean {} noise {}",
            pct(Some(self.mer)),
            pct(self.er_5),
            pct(Some(self.baseline_constants.bm_clean)),
            pct(Some(self.baseline_constants.bm_noise))
        );
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Fails with `ChecksumMismatch` unless the model's config hashes to `expected`.
pub fn verify_config(model: &Model, expected: &str) -> Result<()> {
    let found = model.config().hash();
    if found != expected {
        return Err(Error::ChecksumMismatch { expected: expected.to_string(), found });
    }
    Ok(())
}

/// Clouds evaluated together per forward pass.
const EVAL_CHUNK: usize = 32;

/// Eval-mode class predictions.
pub fn predict(model: &Model, clouds: &[PointCloud]) -> Result<Vec<usize>> {
    let chunks: Vec<&[PointCloud]> = clouds.chunks(EVAL_CHUNK).collect();
    let per_chunk = crate::par::map(&chunks, |chunk| -> Result<Vec<usize>> {
        let plans = chunk.iter().map(|c| model.plan(c)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&PointCloud> = chunk.iter().collect();
        let prefs: Vec<&CloudPlan> = plans.iter().collect();
        Ok(argmax_rows(&model.logits_batch(&refs, &prefs)?))
    });
    let mut out = Vec::with_capacity(clouds.len());
    for p in per_chunk {
        out.extend(p?);
    }
    Ok(out)
}

fn labels_of(clouds: &[PointCloud]) -> Result<Vec<usize>> {
    clouds
        .iter()
        .map(|c| c.label().ok_or_else(|| Error::config("evaluation clouds must be labelled")))
        .collect()
}

/// Error rate of the model on labelled clouds.
pub fn evaluate_error(model: &Model, clouds: &[PointCloud]) -> Result<f64> {
    error_rate(&predict(model, clouds)?, &labels_of(clouds)?)
}

/// Clouds of one corruption cell.
#[derive(Clone, Debug)]
pub struct CorruptedCell {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub clouds: Vec<PointCloud>,
}

/// Evaluates the clean set and every corruption cell.
pub fn benchmark(
    model: &Model,
    expected_hash: Option<&str>,
    clean: &[PointCloud],
    cells: &[CorruptedCell],
    baseline: BaselineConstants,
) -> Result<MetricsReport> {
    if let Some(h) = expected_hash {
        verify_config(model, h)?;
    }
    let labels = labels_of(clean)?;
    let preds = predict(model, clean)?;
    let er_clean = error_rate(&preds, &labels)?;
    let mer = class_mean_error(&preds, &labels)?;
    let mut er_by: BTreeMap<CorruptionKind, BTreeMap<u8, f64>> = BTreeMap::new();
    for cell in cells {
        let er = evaluate_error(model, &cell.clouds)?;
        er_by.entry(cell.kind).or_default().insert(cell.severity, er);
    }
    MetricsReport::from_cells(er_clean, mer, er_by, baseline, Some(model.config().hash()))
}

/// Feature change of one set at the inspected level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetChange {
    pub set: usize,
    /// Spatial center of the set in the clean cloud.
    pub center: Point3,
    pub magnitude: f64,
}

/// L2 change of each level-`level` set feature between a clean cloud and a
/// count-preserving corruption of it, with group membership frozen to the
/// clean cloud's grouping.
pub fn feature_diff(model: &Model, clean: &PointCloud, corrupted: &PointCloud, level: usize) -> Result<Vec<SetChange>> {
    if clean.len() != corrupted.len() {
        return Err(Error::CountMismatch { clean: clean.len(), corrupted: corrupted.len() });
    }
    let levels = model.config().sa_layers.len();
    if level >= levels {
        return Err(Error::BadCount { requested: level + 1, available: levels });
    }
    let clean_plan = model.plan(clean)?;
    let frozen = CloudPlan { levels: clean_plan.levels[..=level].to_vec() };
    let noisy_plan = plan_with_frozen(corrupted.coords(), model.config(), Some(&frozen))?;
    let a = model.level_features(clean, &clean_plan, level)?;
    let b = model.level_features(corrupted, &noisy_plan, level)?;
    let centers = &clean_plan.levels[level].groups.spatial_centers;
    Ok((0..a.rows())
        .map(|s| SetChange {
            set: s,
            center: centers[s],
            magnitude: a.row(s).iter().zip(b.row(s)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
        })
        .collect())
}

/// CSV with columns `set,x,y,z,magnitude`.
pub fn feature_diff_csv(rows: &[SetChange]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["set", "x", "y", "z", "magnitude"])?;
    for r in rows {
        w.write_record([
            r.set.to_string(),
            r.center[0].to_string(),
            r.center[1].to_string(),
            r.center[2].to_string(),
            r.magnitude.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format { what: "feature diff", detail: e.to_string() })?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Relative change `‖Δf‖ / ‖f‖` of the global feature when one random point of
/// each cloud is displaced by `±magnitude` per coordinate.
pub fn impulse_sensitivity(model: &Model, clouds: &[PointCloud], magnitude: f64, seed: u64) -> Result<Vec<f64>> {
    let last = model.config().sa_layers.len() - 1;
    let jobs: Vec<(usize, &PointCloud)> = clouds.iter().enumerate().collect();
    crate::par::map(&jobs, |&(i, cloud)| {
        let mut rng = rng_for(seed, &[i as u64]);
        let mut coords = cloud.coords().to_vec();
        let j = rng.random_range(0..coords.len());
        for v in coords[j].iter_mut() {
            *v += if rng.random::<bool>() { magnitude } else { -magnitude };
        }
        let moved = PointCloud::new(coords, cloud.feats().cloned(), cloud.label())?;
        let f = model.level_features(cloud, &model.plan(cloud)?, last)?;
        let g = model.level_features(&moved, &model.plan(&moved)?, last)?;
        let norm = f.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = f.data().iter().zip(g.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        Ok(diff / norm.max(f64::MIN_POSITIVE))
    })
    .into_iter()
    .collect()
}
