"""Training loop: batching determinism, logging, checkpoint resume."""

import numpy as np
import pytest

from laneshape.config import RunConfig
from laneshape.synthetic import GenConfig, save_dataset, synth_generate
from laneshape.training import (
    batch_indices,
    evaluate_model,
    load_checkpoint,
    run_training,
    save_checkpoint,
)

DESK = {
    "model.hidden_c": 16, "model.input_h": 64, "model.input_w": 128,
    "model.backbone_channels": [2, 4, 8, 16], "model.n_queries": 5,
    "train.batch_size": 2, "train.log_interval": 1,
    "train.checkpoint_interval": 0, "seed": 9,
}
GEN = GenConfig(image_h=64, image_w=128, n_slots=5, focal_min=80.0,
                focal_max=120.0, horizon_margin=6.0, row_step=4)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    scenes = synth_generate(9, 5, GEN)
    return save_dataset(tmp_path_factory.mktemp("ds"), scenes, GEN, 9)


class TestBatching:
    def test_deterministic_in_step(self):
        a = batch_indices(3, 17, 100, 8)
        b = batch_indices(3, 17, 100, 8)
        assert np.array_equal(a, b)

    def test_varies_with_step(self):
        assert not np.array_equal(batch_indices(3, 1, 100, 8),
                                  batch_indices(3, 2, 100, 8))

    def test_small_dataset_allows_replacement(self):
        idx = batch_indices(3, 0, 2, 8)
        assert len(idx) == 2


class TestRunTraining:
    def test_training_runs_and_logs(self, dataset, tmp_path):
        cfg = RunConfig({**DESK, "train.dataset": str(dataset),
                         "train.steps": 3, "out": str(tmp_path)})
        result = run_training(cfg)
        assert result.steps_run == 3
        assert result.checkpoint.exists()
        assert result.log_path.exists()
        assert np.isfinite(result.final_loss)

    def test_input_size_mismatch_rejected(self, dataset, tmp_path):
        cfg = RunConfig({**DESK, "model.input_h": 128, "model.input_w": 256,
                         "train.dataset": str(dataset), "out": str(tmp_path)})
        with pytest.raises(ValueError, match="does not match"):
            run_training(cfg)

    def test_resume_reproduces_loss(self, dataset, tmp_path):
        base = {**DESK, "train.dataset": str(dataset)}
        full_cfg = RunConfig({**base, "train.steps": 4,
                              "out": str(tmp_path / "full")})
        full = run_training(full_cfg)
        half_cfg = RunConfig({**base, "train.steps": 2,
                              "out": str(tmp_path / "half")})
        half = run_training(half_cfg)
        resume_cfg = RunConfig({**base, "train.steps": 4,
                                "train.resume": str(half.checkpoint),
                                "out": str(tmp_path / "res")})
        resumed = run_training(resume_cfg)
        assert resumed.final_loss == full.final_loss

    def test_evaluate_model_bounds(self, dataset, tmp_path):
        from laneshape.synthetic import load_dataset
        cfg = RunConfig({**DESK, "train.dataset": str(dataset),
                         "train.steps": 1, "out": str(tmp_path)})
        result = run_training(cfg)
        model, _, _ = load_checkpoint(result.checkpoint)
        out = evaluate_model(model, load_dataset(dataset), cfg)
        assert 0.0 <= out.accuracy <= 1.0
        assert 0.0 <= out.fp_rate <= 1.0
        assert 0.0 <= out.fn_rate <= 1.0


class TestCheckpointHelpers:
    def test_optimizer_state_round_trip(self, dataset, tmp_path):
        from laneshape.model import LaneCurveModel
        from laneshape.optim import Adam
        cfg = RunConfig({**DESK, "train.dataset": str(dataset),
                         "out": str(tmp_path)})
        model = LaneCurveModel(cfg.model_config(), seed=1)
        opt = Adam(model.params, lr=1e-3)
        for _, t in model.params.items():
            t.grad = np.ones_like(t.data)
        opt.step()
        path = tmp_path / "ck.tensors"
        save_checkpoint(path, model, opt, step=1, seed=1)
        model2, optim_arrays, meta = load_checkpoint(path)
        opt2 = Adam(model2.params, lr=1e-3)
        opt2.load_state_arrays(optim_arrays)
        assert opt2.t == 1
        for name in model.params.names():
            assert np.array_equal(opt2.m[name], opt.m[name])
            assert np.array_equal(opt2.v[name], opt.v[name])
