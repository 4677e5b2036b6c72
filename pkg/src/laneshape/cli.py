"""Command-line surface: synth, fit, train, eval, attn, bench.

Every command is driven by one flat dotted-key config file plus overrides;
all of them are deterministic given config and seed (bench timing aside) and
exit nonzero on any error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .annotations import parse_annotations
from .config import ConfigError, RunConfig, build_config
from .bench import bench_forward
from .geometry import UnderdeterminedFitError, fit_tilted_curve
from .synthetic import load_dataset, read_pgm, save_dataset, synth_generate, write_pgm
from .training import evaluate_model, load_checkpoint, run_training


def cmd_synth(cfg: RunConfig) -> int:
    seed = cfg.require_seed()
    gen = cfg.gen_config()
    n = int(cfg["gen.n_scenes"])
    scenes = synth_generate(seed, n, gen)
    out = save_dataset(cfg["out"], scenes, gen, seed)
    print(f"wrote {n} scenes to {out}")
    return 0


def cmd_fit(cfg: RunConfig, annotations_path: str) -> int:
    image_h = float(cfg["fit.image_h"])
    records, gt_sets = parse_annotations(
        annotations_path, image_h=image_h, n_slots=int(cfg["fit.n_slots"]))
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "fit_report.jsonl"
    bracket = cfg["fit.bracket"]
    n_fit = 0
    with open(report_path, "w") as out:
        for record, gts in zip(records, gt_sets):
            lanes = [it.polyline for it in gts.items if it.is_lane]
            entry: dict = {"raw_file": record.raw_file, "n_lanes": len(lanes)}
            if lanes:
                try:
                    fit = fit_tilted_curve(
                        lanes, share_shape=bool(cfg["fit.share_shape"]),
                        image_h=image_h, quadratic=bool(cfg["fit.quadratic"]),
                        bracket=None if bracket is None else tuple(bracket),
                        tol=float(cfg["fit.tol"]))
                    entry["rms_residual"] = fit.rms_residual
                    entry["shared"] = fit.shared
                    entry["lanes"] = [g.as_array().tolist() for g in fit.params]
                    n_fit += 1
                except UnderdeterminedFitError as e:
                    entry["error"] = str(e)
            out.write(json.dumps(entry, sort_keys=True) + "\n")
    print(f"fit {n_fit}/{len(records)} records -> {report_path}")
    return 0


def cmd_train(cfg: RunConfig) -> int:
    result = run_training(cfg, log_fn=lambda rec: print(json.dumps(rec, sort_keys=True)))
    print(f"checkpoint: {result.checkpoint}")
    return 0


def cmd_eval(cfg: RunConfig, checkpoint: str, dataset: str) -> int:
    model, _, _ = load_checkpoint(checkpoint)
    bundle = load_dataset(dataset)
    if (model.config.input_h, model.config.input_w) != (bundle.image_h, bundle.image_w):
        raise ValueError("checkpoint input size does not match the dataset")
    result = evaluate_model(model, bundle, cfg)
    print(json.dumps(result.as_dict(), sort_keys=True, indent=1))
    return 0


def _save_map_files(out_dir: Path, stem: str, grid: np.ndarray) -> None:
    peak = float(grid.max())
    scaled = np.zeros_like(grid) if peak == 0 else grid / peak
    write_pgm(out_dir / f"{stem}.pgm",
              np.clip(np.rint(scaled * 255), 0, 255).astype(np.uint8))
    np.savetxt(out_dir / f"{stem}.txt", grid, delimiter="\t")


def cmd_attn(cfg: RunConfig, checkpoint: str, image_path: str) -> int:
    model, _, _ = load_checkpoint(checkpoint)
    image = read_pgm(image_path).astype(np.float64) / 255.0
    result = model.forward(image)
    fh, fw = model.config.feat_h, model.config.feat_w
    out_dir = Path(cfg["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    point = cfg["attn.point"]
    slot = cfg["attn.slot"]
    if point is None and slot is None:
        raise ConfigError("select attn.point=\"row,col\" or attn.slot=index")
    wrote = []
    if point is not None:
        if isinstance(point, str):
            r, c = (int(p) for p in point.split(","))
        else:
            r, c = (int(p) for p in point)
        if not (0 <= r < fh and 0 <= c < fw):
            raise ConfigError(f"point ({r},{c}) outside feature grid {fh}x{fw}")
        maps = result.encoder_attn[-1]
        row = np.mean([m[r * fw + c] for m in maps], axis=0)
        stem = f"enc_attn_r{r}_c{c}"
        _save_map_files(out_dir, stem, row.reshape(fh, fw))
        wrote.append(stem)
    if slot is not None:
        slot = int(slot)
        if not 0 <= slot < model.config.n_queries:
            raise ConfigError(
                f"slot {slot} out of range (N={model.config.n_queries})")
        maps = result.decoder_cross_attn[-1]
        row = np.mean([m[slot] for m in maps], axis=0)
        stem = f"dec_attn_slot{slot}"
        _save_map_files(out_dir, stem, row.reshape(fh, fw))
        wrote.append(stem)
    print(f"wrote {', '.join(wrote)} under {out_dir}")
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    report = bench_forward(
        cfg.model_config(),
        repetitions=int(cfg["bench.repetitions"]),
        warmup=int(cfg["bench.warmup"]),
        seed=int(cfg["seed"] or 0),
    )
    print(json.dumps(report, sort_keys=True, indent=1))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="laneshape",
        description="curve-set lane prediction: data generation, fitting, "
                    "training, evaluation, attention dumps, benchmarks")
    parser.add_argument("--config", help="dotted-key config file")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("-s", "--set", action="append", default=[],
                        metavar="KEY=VALUE", help="override one config key")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", help="generate a synthetic dataset")
    p_fit = sub.add_parser("fit", help="fit curve parameters to annotations")
    p_fit.add_argument("annotations", help="line-delimited annotation file")
    sub.add_parser("train", help="train a model on a generated dataset")
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("dataset")
    p_attn = sub.add_parser("attn", help="dump attention maps")
    p_attn.add_argument("checkpoint")
    p_attn.add_argument("image", help="PGM image")
    p_attn.add_argument("--point", help="encoder map at feature cell 'row,col'")
    p_attn.add_argument("--slot", type=int, help="decoder map for one slot")
    sub.add_parser("bench", help="latency and MAC counts for the model config")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        cfg = build_config(args.config, args.set, args.seed, args.out)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "fit":
            return cmd_fit(cfg, args.annotations)
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "eval":
            return cmd_eval(cfg, args.checkpoint, args.dataset)
        if args.command == "attn":
            if args.point is not None:
                cfg.set("attn.point", args.point)
            if args.slot is not None:
                cfg.set("attn.slot", args.slot)
            return cmd_attn(cfg, args.checkpoint, args.image)
        if args.command == "bench":
            return cmd_bench(cfg)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
