"""Bipartite matching and the set loss, checked against brute force.

The oracle for the solver is exhaustive enumeration of permutations; the
oracle for gradients is central finite differences.
"""

import itertools
import math

import numpy as np
import pytest

from laneshape import autograd as ag
from laneshape.autograd import ParameterStore, backward, finite_difference_check
from laneshape.geometry import LanePolyline, SingularRowError, TiltedCurveParams, sample_lane
from laneshape.matching import (
    Assignment,
    GroundTruthItem,
    GroundTruthSet,
    LossWeights,
    NonFiniteCostError,
    PredictionItem,
    PredictionSet,
    build_cost_matrix,
    fitting_loss_graph,
    hungarian_fitting_loss,
    hungarian_solve,
    matching_cost,
    padding_item,
    prediction_tensors,
)


def brute_force_min(cost: np.ndarray) -> float:
    n = cost.shape[0]
    best = math.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, sum(cost[i, perm[i]] for i in range(n)))
    return best


def total_cost(cost: np.ndarray, assignment: Assignment) -> float:
    return float(sum(cost[i, j] for i, j in enumerate(assignment.perm)))


def straight_curve(const: float, alpha=0.2, beta=0.9) -> TiltedCurveParams:
    return TiltedCurveParams(0.0, -50.0, 0.0, const, 0.0, 0.0, alpha, beta)


def lane_from_curve(g: TiltedCurveParams, image_h=128.0, n=10):
    return sample_lane(g, image_h, n)


def make_sets(rng, n_slots=5, n_lanes=3, image_h=128.0):
    """A coherent (PredictionSet, GroundTruthSet) pair with noisy predictions."""
    gts, preds = [], []
    for t in range(n_lanes):
        g = TiltedCurveParams(
            inv_sq=rng.uniform(50.0, 300.0), horizon=rng.uniform(0.0, 20.0),
            inv=rng.uniform(-10.0, 10.0), const=rng.uniform(60.0, 200.0),
            lin=rng.uniform(-1.0, 1.0), shift=rng.uniform(-10.0, 10.0),
            alpha=rng.uniform(0.25, 0.4), beta=rng.uniform(0.6, 0.95),
        )
        poly = sample_lane(g, image_h, 12)
        gts.append(GroundTruthItem(True, poly, g.alpha, g.beta))
        noisy = TiltedCurveParams(*(g.as_array()[:6] + rng.normal(0, 2.0, 6)).tolist(),
                                  alpha=min(g.alpha + 0.05, 0.5), beta=g.beta)
        preds.append(PredictionItem(rng.uniform(0.5, 0.95), noisy))
    for _ in range(n_slots - n_lanes):
        gts.append(padding_item())
        preds.append(PredictionItem(rng.uniform(0.05, 0.5), straight_curve(rng.uniform(0, 256))))
    order = rng.permutation(n_slots)
    return (PredictionSet(tuple(preds[i] for i in order)),
            GroundTruthSet(tuple(gts)))


class TestMatchingCost:
    def test_perfect_lane_prediction(self):
        w = LossWeights(3.0, 5.0, 2.0)
        g = straight_curve(100.0)
        gt = GroundTruthItem(True, lane_from_curve(g), g.alpha, g.beta)
        assert matching_cost(PredictionItem(1.0, g), gt, w) == pytest.approx(-3.0)

    def test_padding_ignores_curve(self):
        w = LossWeights(3.0, 5.0, 2.0)
        pred = PredictionItem(0.0, straight_curve(1234.0))
        assert matching_cost(pred, padding_item(), w) == pytest.approx(-3.0)

    def test_hand_value_with_errors(self):
        w = LossWeights(1.0, 1.0, 1.0)
        g = straight_curve(100.0, alpha=0.3, beta=0.8)
        poly = lane_from_curve(straight_curve(98.0, alpha=0.3, beta=0.8))
        gt = GroundTruthItem(True, poly, g.alpha + 0.1, g.beta - 0.1)
        # -1*0.5 + 1*2 + 1*0.1
        assert matching_cost(PredictionItem(0.5, g), gt, w) == pytest.approx(1.6)

    def test_singular_row_raises_then_perturbs(self):
        w = LossWeights()
        g = TiltedCurveParams(10.0, 64.0, 0.0, 0.0, 0.0, 0.0, 0.1, 0.9)
        rows = np.array([40.0, 64.0, 90.0])
        gt = GroundTruthItem(True, LanePolyline(np.column_stack([rows * 0, rows])),
                             0.3, 0.7)
        pred = PredictionItem(0.9, g)
        with pytest.raises(SingularRowError):
            matching_cost(pred, gt, w)
        assert math.isfinite(matching_cost(pred, gt, w, singular="perturb"))


class TestHungarianSolve:
    def test_identity_on_diagonal(self):
        cost = np.ones((3, 3))
        np.fill_diagonal(cost, 0.0)
        assert hungarian_solve(cost).perm == (0, 1, 2)

    def test_anti_diagonal(self):
        n = 5
        cost = np.ones((n, n)) * 10.0
        for i in range(n):
            cost[i, n - 1 - i] = -5.0
        assert hungarian_solve(cost).perm == (4, 3, 2, 1, 0)

    def test_matches_brute_force_random(self):
        rng = np.random.default_rng(42)
        for _ in range(60):
            cost = rng.normal(size=(7, 7)) * rng.uniform(0.1, 50.0)
            got = total_cost(cost, hungarian_solve(cost))
            assert got == pytest.approx(brute_force_min(cost), abs=1e-9)

    def test_negative_entries(self):
        rng = np.random.default_rng(43)
        cost = rng.uniform(-100.0, -1.0, size=(6, 6))
        got = total_cost(cost, hungarian_solve(cost))
        assert got == pytest.approx(brute_force_min(cost), abs=1e-9)

    def test_non_finite_rejected(self):
        cost = np.zeros((3, 3))
        cost[1, 1] = np.nan
        with pytest.raises(NonFiniteCostError):
            hungarian_solve(cost)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            hungarian_solve(np.zeros((2, 3)))


class TestHungarianFittingLoss:
    def test_perfect_predictions_zero_loss(self):
        gs = [straight_curve(60.0), straight_curve(160.0, alpha=0.3, beta=0.85)]
        lanes = [lane_from_curve(g) for g in gs]
        gts = GroundTruthSet.from_lanes(lanes, [g.alpha for g in gs],
                                        [g.beta for g in gs], n_slots=4)
        preds = PredictionSet(tuple(
            [PredictionItem(1.0, g) for g in gs]
            + [PredictionItem(0.0, straight_curve(0.0)) for _ in range(2)]))
        loss, assignment = hungarian_fitting_loss(preds, gts, LossWeights())
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert assignment.perm[0] == 0 and assignment.perm[1] == 1

    def test_all_non_lane_prediction_hits_clamp(self):
        w = LossWeights(3.0, 5.0, 2.0)
        gs = [straight_curve(60.0), straight_curve(160.0)]
        lanes = [lane_from_curve(g) for g in gs]
        gts = GroundTruthSet.from_lanes(lanes, [g.alpha for g in gs],
                                        [g.beta for g in gs], n_slots=3)
        # confident non-lane everywhere, but exact curves: only the
        # classification term survives, at the probability clamp.
        preds = PredictionSet(tuple(PredictionItem(0.0, g)
                                    for g in gs + [straight_curve(0.0)]))
        loss, _ = hungarian_fitting_loss(preds, gts, w)
        expected = 2 * w.w1 * -math.log(1e-12)
        assert math.isfinite(loss) and loss > 0
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_gt_order_invariance(self):
        rng = np.random.default_rng(44)
        preds, gts = make_sets(rng)
        w = LossWeights()
        base, _ = hungarian_fitting_loss(preds, gts, w)
        for _ in range(5):
            order = rng.permutation(len(gts))
            shuffled = GroundTruthSet(tuple(gts.items[i] for i in order))
            loss, _ = hungarian_fitting_loss(preds, shuffled, w)
            assert loss == pytest.approx(base, rel=1e-12)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(45)
        for _ in range(10):
            preds, gts = make_sets(rng)
            loss, _ = hungarian_fitting_loss(preds, gts, LossWeights())
            assert loss >= 0.0

    def test_set_size_mismatch(self):
        preds, gts = make_sets(np.random.default_rng(46))
        small = PredictionSet(preds.items[:-1])
        with pytest.raises(ValueError):
            hungarian_fitting_loss(small, gts, LossWeights())

    def test_assignment_beats_every_permutation(self):
        rng = np.random.default_rng(47)
        w = LossWeights()
        for _ in range(20):
            preds, gts = make_sets(rng, n_slots=5, n_lanes=3)
            cost = build_cost_matrix(preds, gts, w)
            best = total_cost(cost, hungarian_solve(cost))
            for perm in itertools.permutations(range(5)):
                other = sum(cost[i, perm[i]] for i in range(5))
                assert best <= other + 1e-9


class TestLossGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(48)
        preds, gts = make_sets(rng, n_slots=4, n_lanes=2)
        w = LossWeights()
        cost = build_cost_matrix(preds, gts, w)
        assignment = hungarian_solve(cost)
        probs0, params0 = prediction_tensors(preds)

        store = ParameterStore()
        probs = store.add("probs", probs0.data * 0.9 + 0.05)
        params = store.add("params", params0.data)

        def f():
            return fitting_loss_graph(probs, params, gts, w, assignment)

        assert finite_difference_check(f, store, 1e-6) < 1e-4

    def test_loss_value_matches_graph(self):
        rng = np.random.default_rng(49)
        preds, gts = make_sets(rng)
        w = LossWeights()
        loss, assignment = hungarian_fitting_loss(preds, gts, w)
        probs, params = prediction_tensors(preds)
        graph = fitting_loss_graph(probs, params, gts, w, assignment)
        assert graph.item() == pytest.approx(loss, rel=1e-15)

    def test_backward_populates_parameter_grads(self):
        rng = np.random.default_rng(50)
        preds, gts = make_sets(rng)
        w = LossWeights()
        cost = build_cost_matrix(preds, gts, w)
        assignment = hungarian_solve(cost)
        store = ParameterStore()
        probs0, params0 = prediction_tensors(preds)
        probs = store.add("probs", probs0.data * 0.8 + 0.1)
        params = store.add("params", params0.data)
        backward(fitting_loss_graph(probs, params, gts, w, assignment))
        assert probs.grad is not None and np.any(probs.grad != 0)
        assert params.grad is not None and np.any(params.grad != 0)


class TestTypes:
    def test_prediction_prob_range(self):
        with pytest.raises(ValueError):
            PredictionItem(1.5, straight_curve(0.0))

    def test_assignment_must_be_permutation(self):
        with pytest.raises(ValueError):
            Assignment((0, 0, 1))

    def test_weights_nonnegative(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 0.0, 0.0)

    def test_gt_lane_needs_polyline(self):
        with pytest.raises(ValueError):
            GroundTruthItem(True, None, 0.0, 1.0)

    def test_from_lanes_pads(self):
        g = straight_curve(10.0)
        gts = GroundTruthSet.from_lanes([lane_from_curve(g)], [0.2], [0.9], 7)
        assert len(gts) == 7
        assert gts.n_lanes == 1
        assert not gts.items[-1].is_lane
