"""Training loop over a synthetic dataset directory.

Batches are a pure function of (seed, step), so interrupting a run and
resuming from its checkpoint replays the identical sequence; checkpoints
carry the optimizer moments next to the model tensors.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_tensors, save_tensors
from .config import RunConfig
from .matching import LossWeights
from .metrics import EvalResult, evaluate, scaled_threshold
from .model import LaneCurveModel, ModelConfig, train_step
from .optim import Adam
from .synthetic import DatasetBundle, load_dataset


def batch_indices(seed: int, step: int, n: int, batch_size: int) -> np.ndarray:
    """Deterministic per-step sample of scene indices."""
    rng = np.random.default_rng([seed, 0x5A17, step])
    return rng.choice(n, size=min(batch_size, n), replace=n < batch_size)


def make_batch(bundle: DatasetBundle, idx: np.ndarray):
    return [(bundle.images[i].astype(np.float64) / 255.0, bundle.gt_sets[i])
            for i in idx]


def save_checkpoint(path, model: LaneCurveModel, optimizer: Adam | None,
                    step: int, seed: int) -> None:
    arrays = {f"model/{k}": v for k, v in model.params.arrays().items()}
    if optimizer is not None:
        arrays.update({f"optim/{k}": v for k, v in optimizer.state_arrays().items()})
    meta = {"model_config": model.config.to_dict(), "step": step, "seed": seed}
    save_tensors(path, arrays, meta)


def load_checkpoint(path) -> tuple[LaneCurveModel, dict[str, np.ndarray], dict]:
    arrays, meta = load_tensors(path)
    config = ModelConfig.from_dict(meta["model_config"])
    model = LaneCurveModel(config, seed=0)
    model.params.load_arrays({k[len("model/"):]: v for k, v in arrays.items()
                              if k.startswith("model/")})
    optim_arrays = {k[len("optim/"):]: v for k, v in arrays.items()
                    if k.startswith("optim/")}
    return model, optim_arrays, meta


def evaluate_model(model: LaneCurveModel, bundle: DatasetBundle,
                   cfg: RunConfig) -> EvalResult:
    preds = [model.predict(img.astype(np.float64) / 255.0)[-1]
             for img in bundle.images]
    threshold = cfg["eval.threshold_px"]
    if threshold is None:
        threshold = scaled_threshold(bundle.image_h)
    return evaluate(
        preds, bundle.gt_sets, bundle.image_h, float(threshold),
        prob_threshold=float(cfg["eval.prob_threshold"]),
        lane_match_threshold=float(cfg["eval.lane_match_threshold"]),
        clip_keys=bundle.clip_keys,
    )


@dataclass
class TrainResult:
    checkpoint: Path
    final_loss: float
    steps_run: int
    log_path: Path


def run_training(cfg: RunConfig, log_fn=None) -> TrainResult:
    """Train per config; emits line-delimited JSON logs and checkpoints."""
    seed = cfg.require_seed()
    dataset_path = cfg["train.dataset"]
    if not dataset_path:
        raise ValueError("train.dataset must point at a generated dataset")
    bundle = load_dataset(dataset_path)
    model_cfg = cfg.model_config()
    if (model_cfg.input_h, model_cfg.input_w) != (bundle.image_h, bundle.image_w):
        raise ValueError(
            f"model input {model_cfg.input_h}x{model_cfg.input_w} does not match "
            f"dataset images {bundle.image_h}x{bundle.image_w}")
    weights = cfg.loss_weights()
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"

    model = LaneCurveModel(model_cfg, seed=seed + int(cfg["train.seed_offset"]))
    optimizer = Adam(model.params, lr=float(cfg["train.lr"]),
                     beta1=float(cfg["train.beta1"]),
                     beta2=float(cfg["train.beta2"]),
                     eps=float(cfg["train.eps"]))
    start_step = 0
    resume = cfg["train.resume"]
    if resume:
        model, optim_arrays, meta = load_checkpoint(resume)
        if meta["model_config"] != model_cfg.to_dict():
            raise ValueError("checkpoint model config differs from the run config")
        optimizer = Adam(model.params, lr=float(cfg["train.lr"]),
                         beta1=float(cfg["train.beta1"]),
                         beta2=float(cfg["train.beta2"]),
                         eps=float(cfg["train.eps"]))
        if optim_arrays:
            optimizer.load_state_arrays(optim_arrays)
        start_step = int(meta["step"])

    eval_bundle = None
    if cfg["train.eval_interval"] and cfg["train.eval_dataset"]:
        eval_bundle = load_dataset(cfg["train.eval_dataset"])

    steps = int(cfg["train.steps"])
    grad_clip = cfg["train.grad_clip"]
    grad_clip = float(grad_clip) if grad_clip is not None else None
    batch_size = int(cfg["train.batch_size"])
    log_interval = int(cfg["train.log_interval"])
    ckpt_interval = int(cfg["train.checkpoint_interval"])
    loss = float("nan")
    mode = "a" if start_step else "w"
    with open(log_path, mode) as log:
        def emit(record: dict) -> None:
            log.write(json.dumps(record, sort_keys=True) + "\n")
            log.flush()
            if log_fn:
                log_fn(record)

        t0 = time.time()
        for step in range(start_step, steps):
            idx = batch_indices(seed, step, len(bundle), batch_size)
            loss = train_step(model, optimizer, make_batch(bundle, idx),
                              weights, grad_clip=grad_clip)
            now = step + 1
            if now % log_interval == 0 or now == steps:
                emit({"event": "train", "step": now, "loss": loss,
                      "elapsed_s": round(time.time() - t0, 3)})
            if eval_bundle is not None and now % int(cfg["train.eval_interval"]) == 0:
                result = evaluate_model(model, eval_bundle, cfg)
                emit({"event": "eval", "step": now,
                      "accuracy": result.accuracy, "fp_rate": result.fp_rate,
                      "fn_rate": result.fn_rate})
            if ckpt_interval and now % ckpt_interval == 0:
                save_checkpoint(out_dir / f"ckpt_{now:07d}.tensors",
                                model, optimizer, now, seed)
    final = out_dir / "ckpt_final.tensors"
    save_checkpoint(final, model, optimizer, steps, seed)
    return TrainResult(final, loss, steps - start_step, log_path)
