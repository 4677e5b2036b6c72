"""Point-threshold lane detection metrics.

A predicted slot counts as a lane when its probability clears the cutoff;
each such lane is evaluated at the rows of the ground-truth lane it is
matched to.  A point is true when the predicted column is within the pixel
threshold of the labelled one.  Lanes are paired one-to-one by a
minimum-cost assignment that maximizes the total number of true points;
lane-level false positives / negatives apply a per-lane point-accuracy
cutoff to the matched pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .matching import GroundTruthSet, PredictionSet, hungarian_solve

BASE_THRESHOLD_PX = 20.0
BASE_IMAGE_H = 720.0


class AlignmentError(ValueError):
    """Prediction and ground-truth lists have different lengths."""


@dataclass
class EvalResult:
    accuracy: float
    fp_rate: float
    fn_rate: float
    per_clip: dict[str, dict] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "fp_rate": self.fp_rate,
                "fn_rate": self.fn_rate, "per_clip": self.per_clip}


def scaled_threshold(image_h: float, base_px: float = BASE_THRESHOLD_PX,
                     base_h: float = BASE_IMAGE_H) -> float:
    """The benchmark threshold is defined at 720-row images; scale with height."""
    return base_px * image_h / base_h


def _true_point_counts(gt_items, pred_items, threshold_px: float) -> np.ndarray:
    """counts[g, p] = rows of gt lane g where prediction p is within threshold."""
    counts = np.zeros((len(gt_items), len(pred_items)), dtype=np.int64)
    for gi, gt in enumerate(gt_items):
        rows = gt.polyline.v
        u_gt = gt.polyline.u
        for pi, pred in enumerate(pred_items):
            g = pred.params
            d = rows - g.horizon
            with np.errstate(divide="ignore", invalid="ignore"):
                u = (g.inv_sq / (d * d) + g.inv / d + g.const
                     + g.lin * rows - g.shift)
            err = np.abs(u - u_gt)
            err[~np.isfinite(err)] = np.inf
            counts[gi, pi] = int(np.sum(err <= threshold_px))
    return counts


def evaluate(
    preds: list[PredictionSet],
    gts: list[GroundTruthSet],
    image_h: float,
    threshold_px: float | None = None,
    prob_threshold: float = 0.5,
    lane_match_threshold: float = 0.85,
    clip_keys: list[str] | None = None,
) -> EvalResult:
    """Accuracy over ground-truth points plus lane-level FP/FN rates.

    threshold_px defaults to the height-scaled benchmark threshold.
    """
    if len(preds) != len(gts):
        raise AlignmentError(
            f"{len(preds)} prediction sets vs {len(gts)} ground-truth sets")
    if clip_keys is None:
        clip_keys = [str(i) for i in range(len(preds))]
    elif len(clip_keys) != len(preds):
        raise AlignmentError("clip_keys misaligned with predictions")
    if threshold_px is None:
        threshold_px = scaled_threshold(image_h)

    per_clip: dict[str, dict] = {}
    for pred_set, gt_set, key in zip(preds, gts, clip_keys):
        pred_items = [it for it in pred_set.items if it.lane_prob > prob_threshold]
        gt_items = [it for it in gt_set.items if it.is_lane]
        stats = per_clip.setdefault(key, {
            "tp_points": 0, "gt_points": 0,
            "fp_lanes": 0, "pred_lanes": 0,
            "fn_lanes": 0, "gt_lanes": 0,
        })
        stats["pred_lanes"] += len(pred_items)
        stats["gt_lanes"] += len(gt_items)
        stats["gt_points"] += sum(len(it.polyline) for it in gt_items)
        if not gt_items and not pred_items:
            continue
        counts = _true_point_counts(gt_items, pred_items, threshold_px)
        n = max(len(gt_items), len(pred_items))
        padded = np.zeros((n, n))
        padded[:counts.shape[0], :counts.shape[1]] = counts
        assignment = hungarian_solve(-padded)
        matched_pred = set()
        for gi in range(len(gt_items)):
            pi = assignment.perm[gi] if gi < n else None
            if pi is None or pi >= len(pred_items):
                stats["fn_lanes"] += 1
                continue
            matched_pred.add(pi)
            tp = int(counts[gi, pi])
            stats["tp_points"] += tp
            if tp / len(gt_items[gi].polyline) < lane_match_threshold:
                stats["fn_lanes"] += 1
                stats["fp_lanes"] += 1
        stats["fp_lanes"] += len(pred_items) - len(matched_pred)

    tp = sum(s["tp_points"] for s in per_clip.values())
    gt_pts = sum(s["gt_points"] for s in per_clip.values())
    fp = sum(s["fp_lanes"] for s in per_clip.values())
    pred_lanes = sum(s["pred_lanes"] for s in per_clip.values())
    fn = sum(s["fn_lanes"] for s in per_clip.values())
    gt_lanes = sum(s["gt_lanes"] for s in per_clip.values())
    return EvalResult(
        accuracy=tp / gt_pts if gt_pts else 1.0,
        fp_rate=fp / pred_lanes if pred_lanes else 0.0,
        fn_rate=fn / gt_lanes if gt_lanes else 0.0,
        per_clip=per_clip,
    )
