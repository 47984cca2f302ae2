//! Downstream evaluation: pose error (MPJPE, PCKh@50) and PASCAL-VOC-style
//! detection precision / recall / AP with easy, hard and don't-care ground
//! truth.
//!
//! File formats (comma-separated, `#` comments, one header line):
//!
//! ```text
//! poses:       sample,joint,pred_x,pred_y,gt_x,gt_y
//! detections:  image,x1,y1,x2,y2,confidence
//! truth:       image,x1,y1,x2,y2,difficulty      (easy | hard | dont_care)
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_joints(pred: &[Point], gt: &[Point]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} predicted joints, {} ground truth", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("no joints".into()));
    }
    if pred.iter().chain(gt).any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::NonFinite("joint coordinates"));
    }
    Ok(())
}

/// Mean Euclidean joint error in pixels.
pub fn mpjpe(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_joints(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(&p, &g)| dist(p, g)).sum::<f64>() / pred.len() as f64)
}

/// Head size used by PCKh: 0.6 times the distance from the head keypoint to
/// the midpoint of the shoulders.
pub fn head_size(gt: &[Point], head: usize, shoulders: (usize, usize)) -> Result<f64> {
    let n = gt.len();
    if head >= n || shoulders.0 >= n || shoulders.1 >= n {
        return Err(Error::InvalidArgument(format!("keypoint index out of range for {n} joints")));
    }
    let (l, r) = (gt[shoulders.0], gt[shoulders.1]);
    let mid = [(l[0] + r[0]) / 2.0, (l[1] + r[1]) / 2.0];
    Ok(0.6 * dist(gt[head], mid))
}

/// Percentage of joints whose error is strictly below half the head size.
pub fn pckh50(pred: &[Point], gt: &[Point], head: usize, shoulders: (usize, usize)) -> Result<f64> {
    let hits = pckh_hits(pred, gt, head, shoulders)?;
    Ok(100.0 * hits as f64 / pred.len() as f64)
}

fn pckh_hits(pred: &[Point], gt: &[Point], head: usize, shoulders: (usize, usize)) -> Result<usize> {
    check_joints(pred, gt)?;
    let threshold = 0.5 * head_size(gt, head, shoulders)?;
    Ok(pred.iter().zip(gt).filter(|(&p, &g)| dist(p, g) < threshold).count())
}

/// One annotated pose.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSample {
    pub pred: Vec<Point>,
    pub gt: Vec<Point>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseSet {
    pub samples: Vec<PoseSample>,
    pub head: usize,
    pub shoulders: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoseReport {
    pub mpjpe: f64,
    pub pckh50: f64,
    pub joints: usize,
}

impl PoseSet {
    /// Both metrics pooled over all joints of all samples.
    pub fn evaluate(&self) -> Result<PoseReport> {
        let (mut err, mut hits, mut joints) = (0.0, 0, 0);
        for s in &self.samples {
            err += mpjpe(&s.pred, &s.gt)? * s.pred.len() as f64;
            hits += pckh_hits(&s.pred, &s.gt, self.head, self.shoulders)?;
            joints += s.pred.len();
        }
        if joints == 0 {
            return Err(Error::InvalidArgument("no pose samples".into()));
        }
        Ok(PoseReport { mpjpe: err / joints as f64, pckh50: 100.0 * hits as f64 / joints as f64, joints })
    }
}

fn csv_rows(text: &str, columns: usize) -> impl Iterator<Item = Result<(usize, Vec<&str>)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .skip(1)
        .map(move |(n, l)| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            if f.len() != columns {
                return Err(Error::Parse { location: format!("line {}", n + 1), message: format!("expected {columns} fields, got {}", f.len()) });
            }
            Ok((n + 1, f))
        })
}

fn num(line: usize, s: &str) -> Result<f64> {
    s.parse().map_err(|e| Error::Parse { location: format!("line {line}"), message: format!("{s:?}: {e}") })
}

/// Parses a pose file. Joints of a sample must be listed as `0..J` in order.
pub fn parse_poses(text: &str, head: usize, shoulders: (usize, usize)) -> Result<PoseSet> {
    let mut by_sample: BTreeMap<String, Vec<(usize, Point, Point)>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in csv_rows(text, 6) {
        let (line, f) = r?;
        let joint: usize = f[1].parse().map_err(|e| Error::Parse { location: format!("line {line}"), message: format!("joint: {e}") })?;
        let entry = by_sample.entry(f[0].to_string()).or_insert_with(|| {
            order.push(f[0].to_string());
            Vec::new()
        });
        if joint != entry.len() {
            return Err(Error::Parse { location: format!("line {line}"), message: format!("expected joint {}, got {joint}", entry.len()) });
        }
        entry.push((joint, [num(line, f[2])?, num(line, f[3])?], [num(line, f[4])?, num(line, f[5])?]));
    }
    let samples = order
        .iter()
        .map(|k| {
            let j = &by_sample[k];
            PoseSample { pred: j.iter().map(|x| x.1).collect(), gt: j.iter().map(|x| x.2).collect() }
        })
        .collect();
    Ok(PoseSet { samples, head, shoulders })
}

// ---- detection ----

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.x1, self.y1, self.x2, self.y2];
        if all.iter().any(|v| !v.is_finite()) || !(self.x1 < self.x2) || !(self.y1 < self.y2) {
            return Err(Error::MalformedBox(format!("{self:?} needs finite x1 < x2 and y1 < y2")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }
}

/// Intersection over union of two boxes in continuous coordinates.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    inter / (a.area() + b.area() - inter)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub image: String,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Hard,
    DontCare,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub image: String,
    pub bbox: BBox,
    pub difficulty: Difficulty,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApInterpolation {
    /// Area under the monotone precision envelope.
    #[default]
    AllPoint,
    ElevenPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocConfig {
    pub conf_thresh: f64,
    pub nms_iou: f64,
    pub match_iou: f64,
    pub interpolation: ApInterpolation,
}

impl Default for VocConfig {
    fn default() -> Self {
        Self { conf_thresh: 0.2, nms_iou: 0.2, match_iou: 0.5, interpolation: ApInterpolation::AllPoint }
    }
}

/// Metrics with a 0/0 denominator are reported as 0 and listed in `undefined`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VocReport {
    pub precision: f64,
    pub recall_easy: f64,
    pub recall_hard: f64,
    pub recall_combined: f64,
    pub ap: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub ignored: usize,
    pub undefined: Vec<&'static str>,
}

impl VocReport {
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("precision", self.precision),
            ("recall_easy", self.recall_easy),
            ("recall_hard", self.recall_hard),
            ("recall_combined", self.recall_combined),
            ("ap", self.ap),
            ("f1", self.f1),
        ] {
            s.push_str(&format!("{k}={v}\n"));
        }
        s.push_str(&format!("true_positives={}\nfalse_positives={}\nignored={}\n", self.true_positives, self.false_positives, self.ignored));
        s.push_str(&format!("undefined={}\n", self.undefined.join(";")));
        s
    }
}

fn by_confidence(dets: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| dets[b].confidence.total_cmp(&dets[a].confidence).then(a.cmp(&b)));
    idx
}

/// Greedy per-image suppression: boxes are visited by decreasing confidence
/// and dropped if their IoU with a kept box exceeds `iou_thresh`.
pub fn nms(dets: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut kept: Vec<&Detection> = Vec::new();
    for i in by_confidence(dets) {
        let d = &dets[i];
        if kept.iter().all(|k| k.image != d.image || iou(&k.bbox, &d.bbox) <= iou_thresh) {
            kept.push(d);
        }
    }
    kept.into_iter().cloned().collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    TruePositive(Difficulty),
    FalsePositive,
    Ignored,
}

/// Walks `order` assigning each detection to its highest-IoU ground truth in
/// the same image. An overlap of at least `match_iou` with an unclaimed easy
/// or hard box is a true positive, with an already claimed one a false
/// positive, and with a don't-care box neither.
fn match_detections(dets: &[Detection], order: &[usize], gts: &[GroundTruth], match_iou: f64) -> Vec<Outcome> {
    let mut claimed = vec![false; gts.len()];
    order
        .iter()
        .map(|&i| {
            let d = &dets[i];
            let best = gts
                .iter()
                .enumerate()
                .filter(|(_, g)| g.image == d.image)
                .map(|(j, g)| (j, iou(&g.bbox, &d.bbox)))
                .fold(None, |acc: Option<(usize, f64)>, (j, o)| match acc {
                    Some((_, bo)) if bo >= o => acc,
                    _ => Some((j, o)),
                });
            match best {
                Some((j, o)) if o >= match_iou => {
                    if gts[j].difficulty == Difficulty::DontCare {
                        Outcome::Ignored
                    } else if claimed[j] {
                        Outcome::FalsePositive
                    } else {
                        claimed[j] = true;
                        Outcome::TruePositive(gts[j].difficulty)
                    }
                }
                _ => Outcome::FalsePositive,
            }
        })
        .collect()
}

fn ratio(num: usize, den: usize, name: &'static str, undefined: &mut Vec<&'static str>) -> f64 {
    if den == 0 {
        undefined.push(name);
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Average precision from per-rank precision/recall points.
pub fn average_precision(precision: &[f64], recall: &[f64], interpolation: ApInterpolation) -> f64 {
    match interpolation {
        ApInterpolation::AllPoint => {
            let mut env = precision.to_vec();
            for i in (0..env.len().saturating_sub(1)).rev() {
                env[i] = env[i].max(env[i + 1]);
            }
            let mut prev = 0.0;
            let mut ap = 0.0;
            for (p, &r) in env.iter().zip(recall) {
                ap += (r - prev) * p;
                prev = r;
            }
            ap
        }
        ApInterpolation::ElevenPoint => {
            (0..=10)
                .map(|k| {
                    let t = k as f64 / 10.0;
                    precision.iter().zip(recall).filter(|(_, &r)| r >= t).map(|(&p, _)| p).fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    }
}

pub fn voc_detection_eval(dets: &[Detection], gts: &[GroundTruth], cfg: &VocConfig) -> Result<VocReport> {
    for d in dets {
        d.bbox.validate()?;
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(Error::MalformedBox(format!("confidence {} outside [0, 1]", d.confidence)));
        }
    }
    for g in gts {
        g.bbox.validate()?;
    }
    let kept: Vec<Detection> = dets.iter().filter(|d| d.confidence >= cfg.conf_thresh).cloned().collect();
    let kept = nms(&kept, cfg.nms_iou);
    let order = by_confidence(&kept);
    let outcomes = match_detections(&kept, &order, gts, cfg.match_iou);

    let n_easy = gts.iter().filter(|g| g.difficulty == Difficulty::Easy).count();
    let n_hard = gts.iter().filter(|g| g.difficulty == Difficulty::Hard).count();
    let npos = n_easy + n_hard;
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prec, mut rec) = (Vec::new(), Vec::new());
    for o in &outcomes {
        match o {
            Outcome::TruePositive(_) => tp += 1,
            Outcome::FalsePositive => fp += 1,
            Outcome::Ignored => continue,
        }
        prec.push(tp as f64 / (tp + fp) as f64);
        rec.push(if npos > 0 { tp as f64 / npos as f64 } else { 0.0 });
    }
    let tp_easy = outcomes.iter().filter(|o| **o == Outcome::TruePositive(Difficulty::Easy)).count();
    let tp_hard = outcomes.iter().filter(|o| **o == Outcome::TruePositive(Difficulty::Hard)).count();
    let mut undefined = Vec::new();
    let precision = ratio(tp, tp + fp, "precision", &mut undefined);
    let recall_easy = ratio(tp_easy, n_easy, "recall_easy", &mut undefined);
    let recall_hard = ratio(tp_hard, n_hard, "recall_hard", &mut undefined);
    let recall_combined = ratio(tp, npos, "recall_combined", &mut undefined);
    let ap = if npos == 0 {
        undefined.push("ap");
        0.0
    } else {
        average_precision(&prec, &rec, cfg.interpolation)
    };
    let f1 = if precision + recall_combined > 0.0 {
        2.0 * precision * recall_combined / (precision + recall_combined)
    } else {
        undefined.push("f1");
        0.0
    };
    Ok(VocReport {
        precision,
        recall_easy,
        recall_hard,
        recall_combined,
        ap,
        f1,
        true_positives: tp,
        false_positives: fp,
        ignored: outcomes.len() - tp - fp,
        undefined,
    })
}

fn parse_box(line: usize, f: &[&str]) -> Result<BBox> {
    let b = BBox { x1: num(line, f[1])?, y1: num(line, f[2])?, x2: num(line, f[3])?, y2: num(line, f[4])? };
    b.validate().map_err(|e| match e {
        Error::MalformedBox(m) => Error::MalformedBox(format!("line {line}: {m}")),
        other => other,
    })?;
    Ok(b)
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection>> {
    csv_rows(text, 6)
        .map(|r| {
            let (line, f) = r?;
            Ok(Detection { image: f[0].to_string(), bbox: parse_box(line, &f)?, confidence: num(line, f[5])? })
        })
        .collect()
}

pub fn parse_ground_truth(text: &str) -> Result<Vec<GroundTruth>> {
    csv_rows(text, 6)
        .map(|r| {
            let (line, f) = r?;
            let difficulty = match f[5] {
                "easy" => Difficulty::Easy,
                "hard" => Difficulty::Hard,
                "dont_care" => Difficulty::DontCare,
                other => return Err(Error::Parse { location: format!("line {line}"), message: format!("unknown difficulty {other:?}") }),
            };
            Ok(GroundTruth { image: f[0].to_string(), bbox: parse_box(line, &f)?, difficulty })
        })
        .collect()
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::file(path, e))
}
