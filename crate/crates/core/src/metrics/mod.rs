//! Saliency evaluation: precision-recall curves, F-measure, MAE and the
//! structure measure, with explicit aggregation policies.

mod smeasure;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, data_err};
use crate::tensor::Tensor;
use crate::Result;

pub use smeasure::{s_measure_with, Plane, StructureMeasure, SubMeasures};

pub const NUM_THRESHOLDS: usize = 256;

/// How images whose mask has no foreground enter the aggregates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyGtPolicy {
    /// Left out of precision, recall, F and S; still counted in MAE.
    #[default]
    ExcludeFromPrfS,
    Include,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    pub beta2: f64,
    pub alpha: f64,
    pub thresholds: usize,
    pub epsilon: f64,
    pub empty_gt_policy: EmptyGtPolicy,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            beta2: 0.3,
            alpha: 0.5,
            thresholds: NUM_THRESHOLDS,
            epsilon: 1e-12,
            empty_gt_policy: EmptyGtPolicy::default(),
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta2 > 0.0) {
            return Err(config_err!("beta2 must be positive, got {}", self.beta2));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(config_err!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.thresholds != NUM_THRESHOLDS {
            return Err(config_err!("thresholds is fixed at 256 (t = 0..255), got {}", self.thresholds));
        }
        if !(self.epsilon > 0.0) {
            return Err(config_err!("epsilon must be positive"));
        }
        Ok(())
    }
}

/// A map/mask pair checked and converted to f64.
struct Pair {
    height: usize,
    width: usize,
    map: Vec<f64>,
    gt: Vec<bool>,
}

impl Pair {
    fn new(map: &Tensor<f32>, gt: &Tensor<f32>) -> Result<Self> {
        if map.shape() != gt.shape() {
            return Err(data_err!("map {:?} and mask {:?} differ in shape", map.shape(), gt.shape()));
        }
        let [n, height, width, c] = map.dims4()?;
        if n != 1 || c != 1 {
            return Err(data_err!("expected single (1, H, W, 1) maps, got {:?}", map.shape()));
        }
        if let Some(v) = map.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(data_err!("saliency value {v} is outside [0, 1]"));
        }
        let gt = gt
            .data()
            .iter()
            .map(|&g| match g {
                0.0 => Ok(false),
                1.0 => Ok(true),
                v => Err(data_err!("mask value {v} is not binary")),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            height,
            width,
            map: map.data().iter().map(|&v| f64::from(v)).collect(),
            gt,
        })
    }

    fn plane(&self) -> Plane<'_> {
        Plane {
            height: self.height,
            width: self.width,
            map: &self.map,
            gt: &self.gt,
        }
    }

    fn is_empty_gt(&self) -> bool {
        !self.gt.iter().any(|&g| g)
    }

    fn precision_recall(&self, positive: impl Fn(f64) -> bool, eps: f64) -> (f64, f64) {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&v, &g) in self.map.iter().zip(&self.gt) {
            match (positive(v), g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let tp = tp as f64;
        (tp / (tp + fp as f64 + eps), tp / (tp + fn_ as f64 + eps))
    }

    /// Per-threshold `(precision, recall)` from a histogram of 8-bit levels.
    fn pr_curve(&self, eps: f64) -> Vec<(f64, f64)> {
        let mut fg = [0usize; NUM_THRESHOLDS];
        let mut bg = [0usize; NUM_THRESHOLDS];
        for (&v, &g) in self.map.iter().zip(&self.gt) {
            let q = quantize(v) as usize;
            if g {
                fg[q] += 1;
            } else {
                bg[q] += 1;
            }
        }
        let total_fg: usize = fg.iter().sum();
        let mut curve = vec![(0.0, 0.0); NUM_THRESHOLDS];
        let (mut tp, mut fp) = (0usize, 0usize);
        for t in (0..NUM_THRESHOLDS).rev() {
            tp += fg[t];
            fp += bg[t];
            let tpf = tp as f64;
            curve[t] = (tpf / (tpf + fp as f64 + eps), tpf / (total_fg as f64 + eps));
        }
        curve
    }
}

/// `round(255 s)` as an 8-bit level.
pub fn quantize(s: f64) -> u8 {
    (s.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Weighted harmonic mean of precision and recall; 0 when both are 0.
pub fn f_measure(precision: f64, recall: f64, beta2: f64) -> f64 {
    let denom = beta2 * precision + recall;
    if denom == 0.0 {
        0.0
    } else {
        (1.0 + beta2) * precision * recall / denom
    }
}

/// Mean absolute difference over all pixels.
pub fn mae(map: &Tensor<f32>, gt: &Tensor<f32>) -> Result<f64> {
    if map.shape() != gt.shape() {
        return Err(data_err!("map {:?} and mask {:?} differ in shape", map.shape(), gt.shape()));
    }
    if map.is_empty() {
        return Err(data_err!("cannot score an empty map"));
    }
    let sum: f64 = map
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs())
        .sum();
    Ok(sum / map.len() as f64)
}

/// The 256-point curve of one image.
pub fn image_pr_curve(map: &Tensor<f32>, gt: &Tensor<f32>, cfg: &MetricConfig) -> Result<Vec<(f64, f64)>> {
    Ok(Pair::new(map, gt)?.pr_curve(cfg.epsilon))
}

/// Mean of per-image curves over the images admitted by the empty-mask policy.
/// If no image is admitted every point is `(0, 0)`.
pub fn pr_curve(maps: &[Tensor<f32>], gts: &[Tensor<f32>], cfg: &MetricConfig) -> Result<Vec<(f64, f64)>> {
    if maps.len() != gts.len() {
        return Err(data_err!("{} maps vs {} masks", maps.len(), gts.len()));
    }
    let curves = maps
        .par_iter()
        .zip(gts)
        .map(|(m, g)| {
            let pair = Pair::new(m, g)?;
            Ok(admitted(&pair, cfg).then(|| pair.pr_curve(cfg.epsilon)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_curve(curves.iter().flatten()))
}

fn admitted(pair: &Pair, cfg: &MetricConfig) -> bool {
    cfg.empty_gt_policy == EmptyGtPolicy::Include || !pair.is_empty_gt()
}

fn mean_curve<'a>(curves: impl Iterator<Item = &'a Vec<(f64, f64)>>) -> Vec<(f64, f64)> {
    let mut acc = vec![(0.0, 0.0); NUM_THRESHOLDS];
    let mut n = 0usize;
    for c in curves {
        for (a, &(p, r)) in acc.iter_mut().zip(c) {
            a.0 += p;
            a.1 += r;
        }
        n += 1;
    }
    if n > 0 {
        for a in &mut acc {
            *a = (a.0 / n as f64, a.1 / n as f64);
        }
    }
    acc
}

/// Threshold used by [`adaptive_f`]: twice the mean saliency, capped at 1.
pub fn adaptive_threshold(map: &Tensor<f32>) -> f64 {
    let mean = map.data().iter().map(|&v| f64::from(v)).sum::<f64>() / map.len().max(1) as f64;
    (2.0 * mean).min(1.0)
}

/// F-measure after binarising at [`adaptive_threshold`]. A pixel is positive
/// iff its saliency reaches the threshold and is non-zero, so an all-zero map
/// predicts nothing.
pub fn adaptive_f(map: &Tensor<f32>, gt: &Tensor<f32>, cfg: &MetricConfig) -> Result<f64> {
    let pair = Pair::new(map, gt)?;
    Ok(adaptive_f_pair(&pair, adaptive_threshold(map), cfg))
}

fn adaptive_f_pair(pair: &Pair, threshold: f64, cfg: &MetricConfig) -> f64 {
    let (p, r) = pair.precision_recall(|v| v > 0.0 && v >= threshold, cfg.epsilon);
    f_measure(p, r, cfg.beta2)
}

/// Structure measure with the standard object and region terms.
pub fn s_measure(map: &Tensor<f32>, gt: &Tensor<f32>, alpha: f64) -> Result<f64> {
    let pair = Pair::new(map, gt)?;
    Ok(s_measure_with(pair.plane(), alpha, &StructureMeasure))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub mae: f64,
    pub s_measure: f64,
    /// Best F over this image's own curve.
    pub f_best: f64,
    pub f_adaptive: f64,
    pub empty_gt: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub t: u8,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: Vec<ImageRecord>,
    pub pr_curve: Vec<PrPoint>,
    /// Maximum F along the mean curve, with the point where it occurs.
    pub f_best: f64,
    pub f_best_threshold: u8,
    pub precision_at_best: f64,
    pub recall_at_best: f64,
    /// Mean of per-image adaptive-threshold F.
    pub f_adaptive: f64,
    /// Mean over every image, empty masks included.
    pub mae: f64,
    pub s_measure: f64,
    pub empty_gt_policy: EmptyGtPolicy,
    /// Always "mean_of_per_image": curves are averaged, not pixel-pooled.
    pub pr_aggregation: String,
    pub beta2: f64,
    pub alpha: f64,
    pub images: usize,
    pub images_in_prfs: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    /// `id,mae,s,f_best,f_adaptive`, one row per image.
    pub fn per_image_csv(&self) -> String {
        let mut out = String::from("id,mae,s,f_best,f_adaptive\n");
        for r in &self.per_image {
            let _ = writeln!(out, "{},{},{},{},{}", r.id, r.mae, r.s_measure, r.f_best, r.f_adaptive);
        }
        out
    }

    /// `t,precision,recall`, 256 rows.
    pub fn pr_curve_csv(&self) -> String {
        let mut out = String::from("t,precision,recall\n");
        for p in &self.pr_curve {
            let _ = writeln!(out, "{},{},{}", p.t, p.precision, p.recall);
        }
        out
    }
}

/// Scores aligned lists of maps and masks.
pub fn evaluate_dataset(
    ids: &[String],
    maps: &[Tensor<f32>],
    gts: &[Tensor<f32>],
    cfg: &MetricConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if maps.is_empty() {
        return Err(data_err!("cannot evaluate an empty dataset"));
    }
    if maps.len() != gts.len() || ids.len() != maps.len() {
        return Err(data_err!("{} ids, {} maps and {} masks are not aligned", ids.len(), maps.len(), gts.len()));
    }
    struct Scored {
        record: ImageRecord,
        curve: Vec<(f64, f64)>,
        admitted: bool,
    }
    let scored = (0..maps.len())
        .into_par_iter()
        .map(|i| {
            let pair = Pair::new(&maps[i], &gts[i]).map_err(|e| data_err!("image {}: {e}", ids[i]))?;
            let curve = pair.pr_curve(cfg.epsilon);
            let f_best = curve.iter().map(|&(p, r)| f_measure(p, r, cfg.beta2)).fold(0.0, f64::max);
            let record = ImageRecord {
                id: ids[i].clone(),
                mae: mae(&maps[i], &gts[i])?,
                s_measure: s_measure_with(pair.plane(), cfg.alpha, &StructureMeasure),
                f_best,
                f_adaptive: adaptive_f_pair(&pair, adaptive_threshold(&maps[i]), cfg),
                empty_gt: pair.is_empty_gt(),
            };
            Ok(Scored {
                record,
                curve,
                admitted: admitted(&pair, cfg),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let included: Vec<&Scored> = scored.iter().filter(|s| s.admitted).collect();
    let mean_of = |f: &dyn Fn(&ImageRecord) -> f64| {
        if included.is_empty() {
            0.0
        } else {
            included.iter().map(|s| f(&s.record)).sum::<f64>() / included.len() as f64
        }
    };
    let curve = mean_curve(included.iter().map(|s| &s.curve));
    let (best_t, best_f) = curve
        .iter()
        .enumerate()
        .map(|(t, &(p, r))| (t, f_measure(p, r, cfg.beta2)))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    Ok(EvalReport {
        pr_curve: curve
            .iter()
            .enumerate()
            .map(|(t, &(precision, recall))| PrPoint {
                t: t as u8,
                precision,
                recall,
            })
            .collect(),
        f_best: best_f,
        f_best_threshold: best_t as u8,
        precision_at_best: curve[best_t].0,
        recall_at_best: curve[best_t].1,
        f_adaptive: mean_of(&|r| r.f_adaptive),
        mae: scored.iter().map(|s| s.record.mae).sum::<f64>() / scored.len() as f64,
        s_measure: mean_of(&|r| r.s_measure),
        empty_gt_policy: cfg.empty_gt_policy,
        pr_aggregation: "mean_of_per_image".into(),
        beta2: cfg.beta2,
        alpha: cfg.alpha,
        images: scored.len(),
        images_in_prfs: included.len(),
        per_image: scored.into_iter().map(|s| s.record).collect(),
    })
}
