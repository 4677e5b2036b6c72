"""Flat dotted-key run configuration.

One text file drives every command: lines of ``section.key = value`` with
JSON-encoded values, ``#`` comments, and command-line ``-s key=value``
overrides.  Unknown keys are rejected so typos fail loudly.  Defaults mirror
the reference training recipe (learning rate 1e-4, batch 16, 7 slots, loss
weights 3/5/2, 360x640 input); desk-scale runs override the sizes.
"""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

from .matching import LossWeights
from .model import ModelConfig
from .synthetic import GenConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, object] = {
    "seed": None,                      # mandatory for synth/train
    "out": "out",

    "model.hidden_c": 32,
    "model.enc_layers": 2,
    "model.dec_layers": 2,
    "model.n_heads": 2,
    "model.n_queries": 7,
    "model.input_h": 360,
    "model.input_w": 640,
    "model.downsample": 8,
    "model.backbone_channels": None,   # default derives (8, 16, 32, hidden_c)
    "model.share_shape": True,
    "model.ffn_mult": 4,
    "model.param_scale": None,         # default derives from input size
    "model.param_offset": None,

    "loss.w1": 3.0,
    "loss.w2": 5.0,
    "loss.w3": 2.0,

    # generator: field-for-field the GenConfig defaults
    **{f"gen.{f.name}": f.default for f in fields(GenConfig)},
    "gen.n_scenes": 100,

    "train.dataset": "",
    "train.lr": 1e-4,
    "train.batch_size": 16,
    "train.steps": 2000,
    "train.beta1": 0.9,
    "train.beta2": 0.999,
    "train.eps": 1e-8,
    "train.grad_clip": 10.0,
    "train.log_interval": 25,
    "train.checkpoint_interval": 500,
    "train.eval_interval": 0,          # 0 disables in-training evaluation
    "train.eval_dataset": "",
    "train.resume": "",
    "train.seed_offset": 0,

    "eval.threshold_px": None,         # None: 20 px scaled by image_h / 720
    "eval.prob_threshold": 0.5,
    "eval.lane_match_threshold": 0.85,

    "fit.image_h": 720.0,
    "fit.n_slots": 7,
    "fit.share_shape": True,
    "fit.quadratic": False,
    "fit.tol": 1e-6,
    "fit.bracket": None,

    "attn.point": None,                # "row,col" in the feature grid
    "attn.slot": None,

    "bench.repetitions": 20,
    "bench.warmup": 3,
}


class RunConfig:
    """Validated key-value view over DEFAULTS with file/CLI overrides."""

    def __init__(self, values: dict[str, object] | None = None):
        self._values = dict(DEFAULTS)
        for key, value in (values or {}).items():
            self.set(key, value)

    def set(self, key: str, value: object) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key: {key!r}")
        self._values[key] = value

    def __getitem__(self, key: str):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key: {key!r}")
        return self._values[key]

    def require_seed(self) -> int:
        seed = self._values["seed"]
        if seed is None:
            raise ConfigError("seed is mandatory for this command "
                              "(set it in the config file or pass --seed)")
        return int(seed)

    # -- typed sub-configs ---------------------------------------------------

    def model_config(self) -> ModelConfig:
        bc = self["model.backbone_channels"]
        scale = self["model.param_scale"]
        offset = self["model.param_offset"]
        return ModelConfig(
            hidden_c=int(self["model.hidden_c"]),
            enc_layers=int(self["model.enc_layers"]),
            dec_layers=int(self["model.dec_layers"]),
            n_heads=int(self["model.n_heads"]),
            n_queries=int(self["model.n_queries"]),
            input_h=int(self["model.input_h"]),
            input_w=int(self["model.input_w"]),
            downsample=int(self["model.downsample"]),
            backbone_channels=None if bc is None else tuple(int(c) for c in bc),
            share_shape=bool(self["model.share_shape"]),
            ffn_mult=int(self["model.ffn_mult"]),
            param_scale=None if scale is None else tuple(float(v) for v in scale),
            param_offset=None if offset is None else tuple(float(v) for v in offset),
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(float(self["loss.w1"]), float(self["loss.w2"]),
                           float(self["loss.w3"]))

    def gen_config(self) -> GenConfig:
        kwargs = {}
        for f in fields(GenConfig):
            value = self[f"gen.{f.name}"]
            kwargs[f.name] = type(f.default)(value)
        return GenConfig(**kwargs)

    def dump(self) -> dict[str, object]:
        return dict(self._values)


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"value {text!r} is not valid JSON") from e


def load_config_file(path) -> dict[str, object]:
    values: dict[str, object] = {}
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, _, text = line.partition("=")
        try:
            values[key.strip()] = parse_value(text.strip())
        except ConfigError as e:
            raise ConfigError(f"{path}:{lineno}: {e}") from e
    return values


def build_config(config_path=None, overrides: list[str] | None = None,
                 seed: int | None = None, out: str | None = None) -> RunConfig:
    cfg = RunConfig(load_config_file(config_path) if config_path else {})
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, _, text = item.partition("=")
        cfg.set(key.strip(), parse_value(text.strip()))
    if seed is not None:
        cfg.set("seed", seed)
    if out is not None:
        cfg.set("out", out)
    return cfg
