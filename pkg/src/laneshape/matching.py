"""Set matching between predicted curves and ground-truth lanes.

Predictions come as a fixed number of slots, each a lane probability plus
tilted-curve parameters; ground truth is padded with non-lane entries to the
same size.  A minimum-cost bipartite assignment (Kuhn-Munkres) pairs them,
then a matched regression loss scores classification, curve fit at the
ground-truth rows, and boundary agreement.

Two views of the loss exist: a plain-number one for reporting, and a graph
one over autograd tensors used for training, where the assignment found on
the forward pass is treated as a constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .geometry import LanePolyline, SingularRowError, TiltedCurveParams

PROB_CLAMP = 1e-12          # floor before log; the loss is undefined at p = 0
SINGULAR_ROW_TOL = 1e-6     # rows this close to the pole count as singular
SINGULAR_ROW_NUDGE = 1e-3   # pixels added to singular rows in "perturb" mode


class NonFiniteCostError(ValueError):
    """The assignment cost matrix contains NaN or infinity."""


@dataclass(frozen=True)
class PredictionItem:
    """One output slot: probability that it is a lane, plus its curve."""

    lane_prob: float
    params: TiltedCurveParams

    def __post_init__(self) -> None:
        if not 0.0 <= self.lane_prob <= 1.0:
            raise ValueError(f"lane_prob must be in [0, 1], got {self.lane_prob}")


@dataclass(frozen=True)
class PredictionSet:
    items: tuple[PredictionItem, ...]

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class GroundTruthItem:
    """One ground-truth slot; padding entries have is_lane False and no polyline."""

    is_lane: bool
    polyline: LanePolyline | None
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if self.is_lane and self.polyline is None:
            raise ValueError("a real lane needs a polyline")


def padding_item() -> GroundTruthItem:
    return GroundTruthItem(is_lane=False, polyline=None, alpha=0.0, beta=0.0)


@dataclass(frozen=True)
class GroundTruthSet:
    """Fixed-size label set: real lanes first, non-lane padding after."""

    items: tuple[GroundTruthItem, ...]

    def __len__(self) -> int:
        return len(self.items)

    @property
    def n_lanes(self) -> int:
        return sum(1 for it in self.items if it.is_lane)

    @staticmethod
    def from_lanes(lanes, alphas, betas, n_slots: int) -> "GroundTruthSet":
        if len(lanes) > n_slots:
            raise ValueError(f"{len(lanes)} lanes exceed {n_slots} slots")
        items = [GroundTruthItem(True, lane, a, b)
                 for lane, a, b in zip(lanes, alphas, betas)]
        items += [padding_item() for _ in range(n_slots - len(lanes))]
        return GroundTruthSet(tuple(items))


@dataclass(frozen=True)
class Assignment:
    """perm[i] is the prediction slot assigned to ground-truth entry i."""

    perm: tuple[int, ...]

    def __post_init__(self) -> None:
        if sorted(self.perm) != list(range(len(self.perm))):
            raise ValueError("assignment must be a permutation")


@dataclass(frozen=True)
class LossWeights:
    """Nonnegative weights for classification, curve, and boundary terms."""

    w1: float = 3.0
    w2: float = 5.0
    w3: float = 2.0

    def __post_init__(self) -> None:
        if self.w1 < 0 or self.w2 < 0 or self.w3 < 0:
            raise ValueError("loss weights must be nonnegative")


def _guard_rows(rows: np.ndarray, horizon: float, singular: str) -> np.ndarray:
    """Ground-truth row coordinates, guarded against the prediction's pole."""
    near = np.abs(rows - horizon) < SINGULAR_ROW_TOL
    if not near.any():
        return rows
    if singular == "perturb":
        return np.where(near, rows + SINGULAR_ROW_NUDGE, rows)
    raise SingularRowError(
        "a ground-truth row coincides with the predicted curve's pole")


def matching_cost(
    pred: PredictionItem,
    gt: GroundTruthItem,
    w: LossWeights,
    singular: str = "error",
) -> float:
    """Assignment cost between one prediction and one ground-truth entry.

    Uses the raw class probability (not its log) so the term stays on the
    same scale as the fitting terms; fitting terms vanish for padding.
    """
    p_class = pred.lane_prob if gt.is_lane else 1.0 - pred.lane_prob
    cost = -w.w1 * p_class
    if gt.is_lane:
        rows = _guard_rows(gt.polyline.v, pred.params.horizon, singular)
        d = rows - pred.params.horizon
        u = (pred.params.inv_sq / (d * d) + pred.params.inv / d
             + pred.params.const + pred.params.lin * rows - pred.params.shift)
        cost += w.w2 * float(np.mean(np.abs(u - gt.polyline.u)))
        cost += w.w3 * 0.5 * (abs(gt.alpha - pred.params.alpha)
                              + abs(gt.beta - pred.params.beta))
    return cost


def hungarian_solve(cost: np.ndarray) -> Assignment:
    """Minimum-cost perfect matching on a square matrix (Kuhn-Munkres).

    Shortest augmenting paths with dual potentials; O(n^3), exact, and fine
    with negative entries.  Row i of the matrix is matched to column perm[i].
    """
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"cost matrix must be square, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise NonFiniteCostError("cost matrix contains non-finite entries")
    n = c.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match_col = np.zeros(n + 1, dtype=np.int64)  # row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match_col[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            delta = inf
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = c[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[match_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1
    perm = [0] * n
    for j in range(1, n + 1):
        perm[match_col[j] - 1] = j - 1
    return Assignment(tuple(perm))


def build_cost_matrix(
    preds: PredictionSet,
    gts: GroundTruthSet,
    w: LossWeights,
    singular: str = "error",
) -> np.ndarray:
    """cost[i, j] = matching cost of ground truth i against prediction j."""
    if len(preds) != len(gts):
        raise ValueError(
            f"set sizes differ: {len(preds)} predictions vs {len(gts)} labels")
    probs = np.array([[1.0 - it.lane_prob, it.lane_prob] for it in preds.items])
    params = np.stack([it.params.as_array() for it in preds.items])
    return cost_matrix_arrays(probs, params, gts, w, singular)


def cost_matrix_arrays(
    probs: np.ndarray,
    params: np.ndarray,
    gts: GroundTruthSet,
    w: LossWeights,
    singular: str = "error",
) -> np.ndarray:
    """Assignment cost matrix straight from (N, 2) / (N, 8) arrays.

    Same values as matching_cost pair by pair, vectorized over prediction
    slots; used on raw network outputs where boundary ordering may not hold.
    """
    n = len(gts)
    if probs.shape[0] != n:
        raise ValueError(
            f"set sizes differ: {probs.shape[0]} predictions vs {n} labels")
    cost = np.empty((n, n))
    horizons = params[:, 1]
    for i, gt in enumerate(gts.items):
        if not gt.is_lane:
            cost[i, :] = -w.w1 * probs[:, 0]
            continue
        rows = gt.polyline.v
        d = rows[None, :] - horizons[:, None]
        near = np.abs(d) < SINGULAR_ROW_TOL
        if near.any():
            if singular != "perturb":
                raise SingularRowError(
                    "a ground-truth row coincides with a predicted curve's pole")
            d = np.where(near, d + SINGULAR_ROW_NUDGE, d)
        u = (params[:, 0:1] / (d * d) + params[:, 2:3] / d + params[:, 3:4]
             + params[:, 4:5] * rows[None, :] - params[:, 5:6])
        curve = np.mean(np.abs(u - gt.polyline.u[None, :]), axis=1)
        bnd = 0.5 * (np.abs(gt.alpha - params[:, 6]) + np.abs(gt.beta - params[:, 7]))
        cost[i, :] = -w.w1 * probs[:, 1] + w.w2 * curve + w.w3 * bnd
    return cost


def fitting_loss_graph(
    class_probs: Tensor,
    params: Tensor,
    gts: GroundTruthSet,
    w: LossWeights,
    assignment: Assignment,
    singular: str = "error",
) -> Tensor:
    """Matched regression loss as an autograd graph, assignment held fixed.

    class_probs: (N, 2) rows (non-lane, lane) probabilities.
    params: (N, 8) rows (inv_sq, horizon, inv, const, lin, shift, alpha, beta).
    Classification contributes -w1*log(p) with p clamped away from zero;
    curve and boundary terms are mean absolute errors over each real lane's
    own rows and its two boundaries.  All lanes of the set are evaluated in
    one padded batch of tensor ops.
    """
    n = len(gts)
    cls_col = np.array([1 if gt.is_lane else 0 for gt in gts.items])
    slot = np.asarray(assignment.perm)
    p = class_probs[slot, cls_col]
    total = (-w.w1) * ag.tensor_sum(ag.log(ag.clamp_min(p, PROB_CLAMP)))

    lane_idx = [i for i, gt in enumerate(gts.items) if gt.is_lane]
    if not lane_idx:
        return total
    lane_slots = slot[lane_idx]
    lanes = [gts.items[i] for i in lane_idx]
    counts = np.array([len(gt.polyline) for gt in lanes], dtype=np.float64)
    r_max = int(counts.max())
    # Padded row positions sit far from any plausible pole so masked entries
    # stay finite before the mask zeroes them.
    rows = np.full((len(lanes), r_max), -1e9)
    targets = np.zeros((len(lanes), r_max))
    mask = np.zeros((len(lanes), r_max))
    for t, gt in enumerate(lanes):
        r = len(gt.polyline)
        horizon = float(params.data[lane_slots[t], 1])
        rows[t, :r] = _guard_rows(gt.polyline.v, horizon, singular)
        targets[t, :r] = gt.polyline.u
        mask[t, :r] = 1.0

    matched = ag.gather_rows(params, lane_slots)      # (T, 8)
    rows_t = Tensor(rows)
    d = rows_t - matched[:, 1:2]
    u = (matched[:, 0:1] / (d * d) + matched[:, 2:3] / d + matched[:, 3:4]
         + matched[:, 4:5] * rows_t - matched[:, 5:6])
    err = ag.absolute(u - Tensor(targets)) * Tensor(mask)
    per_lane_mean = ag.tensor_sum(err, axis=1) * Tensor(1.0 / counts)
    total = total + w.w2 * ag.tensor_sum(per_lane_mean)

    bounds_target = np.array([[gt.alpha, gt.beta] for gt in lanes])
    bnd = ag.absolute(matched[:, 6:8] - Tensor(bounds_target))
    total = total + (w.w3 * 0.5) * ag.tensor_sum(bnd)
    return total


def prediction_tensors(preds: PredictionSet) -> tuple[Tensor, Tensor]:
    """Constant (N, 2) class probabilities and (N, 8) parameters."""
    probs = np.array([[1.0 - it.lane_prob, it.lane_prob] for it in preds.items])
    params = np.stack([it.params.as_array() for it in preds.items])
    return Tensor(probs), Tensor(params)


def hungarian_fitting_loss(
    preds: PredictionSet,
    gts: GroundTruthSet,
    w: LossWeights,
    singular: str = "error",
) -> tuple[float, Assignment]:
    """Full set loss: optimal assignment, then the matched regression loss."""
    cost = build_cost_matrix(preds, gts, w, singular)
    assignment = hungarian_solve(cost)
    probs, params = prediction_tensors(preds)
    loss = fitting_loss_graph(probs, params, gts, w, assignment, singular)
    return loss.item(), assignment
