"""Match a padded prediction set against ground-truth lanes and score it.

Shows the assignment cost matrix, the optimal permutation found by the
Kuhn-Munkres solver, and how the matched regression loss reacts as the
predictions improve.
"""

import numpy as np

from laneshape import (
    GroundTruthSet,
    LossWeights,
    PredictionItem,
    PredictionSet,
    TiltedCurveParams,
    hungarian_fitting_loss,
    hungarian_solve,
    sample_lane,
)
from laneshape.matching import build_cost_matrix

weights = LossWeights()  # classification 3, curve 5, boundary 2
print("weights:", weights)

# Two true lanes sharing shape, sampled into polylines.
shared = dict(inv_sq=250.0, horizon=18.0, inv=-4.0, const=120.0)
truth = [
    TiltedCurveParams(lin=0.6, shift=10.0, alpha=0.35, beta=0.95, **shared),
    TiltedCurveParams(lin=-0.5, shift=-12.0, alpha=0.4, beta=0.9, **shared),
]
lanes = [sample_lane(g, 128.0, 10) for g in truth]
gts = GroundTruthSet.from_lanes(lanes, [g.alpha for g in truth],
                                [g.beta for g in truth], n_slots=4)

# Predictions: slot 2 is nearly lane 0, slot 0 is nearly lane 1, rest junk.
def noisy(g, du):
    return TiltedCurveParams(g.inv_sq, g.horizon, g.inv, g.const + du,
                             g.lin, g.shift, g.alpha, g.beta)

preds = PredictionSet((
    PredictionItem(0.85, noisy(truth[1], 2.0)),
    PredictionItem(0.10, noisy(truth[0], 80.0)),
    PredictionItem(0.90, noisy(truth[0], -1.5)),
    PredictionItem(0.05, noisy(truth[1], -60.0)),
))

cost = build_cost_matrix(preds, gts, weights)
np.set_printoptions(precision=2, suppress=True)
print("\ncost matrix (rows: ground truth, cols: prediction slots):")
print(cost)

assignment = hungarian_solve(cost)
print("optimal assignment gt_i -> slot:", assignment.perm)

loss, _ = hungarian_fitting_loss(preds, gts, weights)
print("matched regression loss:", round(loss, 4))

# Perfect predictions drive the loss to zero.
perfect = PredictionSet(tuple(
    [PredictionItem(1.0, g) for g in truth]
    + [PredictionItem(0.0, truth[0]) for _ in range(2)]))
loss_perfect, _ = hungarian_fitting_loss(perfect, gts, weights)
print("loss with exact predictions:", loss_perfect)
