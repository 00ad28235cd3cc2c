//! Identity-based evaluation.
//!
//! `id_metrics` follows the identity-measure construction: ground-truth and
//! predicted identities are matched one-to-one by a minimum-cost bipartite
//! assignment that minimizes `IDFP + IDFN`, where a gt box and a predicted
//! box may correspond in a camera-frame only when their IoU clears the
//! threshold. `IDF1 = 2 IDTP / (2 IDTP + IDFP + IDFN)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numeric::{iou, min_cost_assignment, CostMatrix};
use crate::types::TrackRecord;
use crate::{Result, Scalar};

/// Identity-level counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IdCounts {
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdMetrics {
    pub idf1: Scalar,
    pub idp: Scalar,
    pub idr: Scalar,
    pub counts: IdCounts,
}

/// Full metric report as emitted to JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub idf1: Scalar,
    pub idp: Scalar,
    pub idr: Scalar,
    pub precision: Scalar,
    pub recall: Scalar,
    pub idtp: u64,
    pub idfp: u64,
    pub idfn: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// IoU at or above which a gt box and a predicted box may correspond.
    pub iou_threshold: Scalar,
    /// Restrict ground truth to identities seen in at least two cameras.
    pub multi_cam_gt_only: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            multi_cam_gt_only: false,
        }
    }
}

fn ratio(num: u64, den: u64, degenerate: Scalar) -> Scalar {
    if den == 0 {
        degenerate
    } else {
        num as Scalar / den as Scalar
    }
}

/// gt and prediction boxes grouped per (camera, frame).
type FrameCells<'a> = BTreeMap<(u32, u32), (Vec<&'a TrackRecord>, Vec<&'a TrackRecord>)>;

/// Identity metrics under an optimal gt-to-prediction identity assignment.
pub fn id_metrics(gt: &[TrackRecord], pred: &[TrackRecord], iou_threshold: Scalar) -> Result<IdMetrics> {
    if gt.is_empty() && pred.is_empty() {
        return Ok(IdMetrics {
            idf1: 1.0,
            idp: 1.0,
            idr: 1.0,
            counts: IdCounts::default(),
        });
    }

    let mut gt_ids: Vec<u32> = gt.iter().map(|r| r.id).collect();
    gt_ids.sort_unstable();
    gt_ids.dedup();
    let mut pred_ids: Vec<u32> = pred.iter().map(|r| r.id).collect();
    pred_ids.sort_unstable();
    pred_ids.dedup();
    let gt_index: BTreeMap<u32, usize> = gt_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let pred_index: BTreeMap<u32, usize> =
        pred_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let n_gt = gt_ids.len();
    let n_pred = pred_ids.len();

    let mut gt_len = vec![0u64; n_gt];
    for r in gt {
        gt_len[gt_index[&r.id]] += 1;
    }
    let mut pred_len = vec![0u64; n_pred];
    for r in pred {
        pred_len[pred_index[&r.id]] += 1;
    }

    // count per-(camera, frame) correspondences for every id pair
    let mut cells: FrameCells = BTreeMap::new();
    for r in gt {
        cells.entry((r.camera_id, r.frame)).or_default().0.push(r);
    }
    for r in pred {
        cells.entry((r.camera_id, r.frame)).or_default().1.push(r);
    }
    let mut overlap: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    for (_, (gs, ps)) in cells {
        for g in &gs {
            for p in &ps {
                if iou(&g.bbox, &p.bbox) >= iou_threshold {
                    *overlap
                        .entry((gt_index[&g.id], pred_index[&p.id]))
                        .or_default() += 1;
                }
            }
        }
    }

    // square cost matrix: real pairs, then dummy rows/cols absorbing
    // unmatched identities at the cost of all their boxes
    let n = n_gt + n_pred;
    let inf = Scalar::INFINITY;
    let cost = CostMatrix::from_fn(n, n, |i, j| {
        match (i < n_gt, j < n_pred) {
            (true, true) => {
                let o = overlap.get(&(i, j)).copied().unwrap_or(0);
                (gt_len[i] - o + pred_len[j] - o) as Scalar
            }
            (true, false) => {
                if j - n_pred == i {
                    gt_len[i] as Scalar
                } else {
                    inf
                }
            }
            (false, true) => {
                if i - n_gt == j {
                    pred_len[j] as Scalar
                } else {
                    inf
                }
            }
            (false, false) => 0.0,
        }
    })?;
    let pairs = min_cost_assignment(&cost);

    let mut idtp = 0u64;
    for (i, j) in pairs {
        if i < n_gt && j < n_pred {
            idtp += overlap.get(&(i, j)).copied().unwrap_or(0);
        }
    }
    let total_gt: u64 = gt_len.iter().sum();
    let total_pred: u64 = pred_len.iter().sum();
    let counts = IdCounts {
        idtp,
        idfp: total_pred - idtp,
        idfn: total_gt - idtp,
    };

    if pred.is_empty() {
        log::warn!("empty prediction set: IDP defined as 1.0 by convention");
    }
    let idp = ratio(counts.idtp, counts.idtp + counts.idfp, 1.0);
    let idr = ratio(counts.idtp, counts.idtp + counts.idfn, 1.0);
    let idf1 = ratio(2 * counts.idtp, 2 * counts.idtp + counts.idfp + counts.idfn, 1.0);
    Ok(IdMetrics {
        idf1,
        idp,
        idr,
        counts,
    })
}

/// Detection-level precision/recall: per-frame greedy IoU matching, ids
/// ignored.
pub fn detection_pr(gt: &[TrackRecord], pred: &[TrackRecord], iou_threshold: Scalar) -> (Scalar, Scalar) {
    let mut cells: FrameCells = BTreeMap::new();
    for r in gt {
        cells.entry((r.camera_id, r.frame)).or_default().0.push(r);
    }
    for r in pred {
        cells.entry((r.camera_id, r.frame)).or_default().1.push(r);
    }
    let mut tp = 0u64;
    for (_, (gs, ps)) in cells {
        let mut candidates: Vec<(Scalar, usize, usize)> = Vec::new();
        for (gi, g) in gs.iter().enumerate() {
            for (pi, p) in ps.iter().enumerate() {
                let v = iou(&g.bbox, &p.bbox);
                if v >= iou_threshold {
                    candidates.push((v, gi, pi));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut g_used = vec![false; gs.len()];
        let mut p_used = vec![false; ps.len()];
        for (_, gi, pi) in candidates {
            if !g_used[gi] && !p_used[pi] {
                g_used[gi] = true;
                p_used[pi] = true;
                tp += 1;
            }
        }
    }
    let total_gt = gt.len() as u64;
    let total_pred = pred.len() as u64;
    if total_pred == 0 {
        log::warn!("empty prediction set: precision defined as 1.0 by convention");
    }
    let precision = ratio(tp, total_pred, 1.0);
    let recall = ratio(tp, total_gt, 1.0);
    (precision, recall)
}

/// Compute the full metric report, honoring the evaluation flags.
pub fn evaluate(gt: &[TrackRecord], pred: &[TrackRecord], cfg: &EvalConfig) -> Result<MetricReport> {
    let filtered_gt: Vec<TrackRecord>;
    let gt = if cfg.multi_cam_gt_only {
        let mut cams: BTreeMap<u32, std::collections::BTreeSet<u32>> = BTreeMap::new();
        for r in gt {
            cams.entry(r.id).or_default().insert(r.camera_id);
        }
        filtered_gt = gt
            .iter()
            .filter(|r| cams[&r.id].len() >= 2)
            .copied()
            .collect();
        &filtered_gt[..]
    } else {
        gt
    };
    let id = id_metrics(gt, pred, cfg.iou_threshold)?;
    let (precision, recall) = detection_pr(gt, pred, cfg.iou_threshold);
    Ok(MetricReport {
        idf1: id.idf1,
        idp: id.idp,
        idr: id.idr,
        precision,
        recall,
        idtp: id.counts.idtp,
        idfp: id.counts.idfp,
        idfn: id.counts.idfn,
    })
}
