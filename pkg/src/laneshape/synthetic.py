"""Synthetic road scenes with exact curve ground truth.

Each scene draws a camera (focal length, downward pitch, height), one shared
ground-plane shape, and per-lane lateral offsets; lanes are projected through
the pinhole + tilt pipeline into image-row coordinates, rendered as
anti-aliased bright strokes on a noisy background, and stored together with
the exact tilted-curve parameters and row-grid polylines.  Because all lanes
of a scene share the ground shape, the shared-parameter constraint of the
prediction head is exactly satisfiable on this data.

Scenes are deterministic given (seed, index): every scene uses its own
generator seeded by the pair, so generation order or parallelism cannot
change the output.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .geometry import (
    CameraModel,
    GroundCurve,
    LanePolyline,
    TiltedCurveParams,
    project_ground_to_image,
    sample_lane,
    tilt_reparameterize,
    translate_curve,
)
from .matching import GroundTruthSet


@dataclass(frozen=True)
class GenConfig:
    image_h: int = 128
    image_w: int = 256
    n_slots: int = 7
    n_lanes_min: int = 2
    n_lanes_max: int = 4
    focal_min: float = 150.0
    focal_max: float = 250.0
    pitch_min: float = -0.20      # radians; negative pitch looks down
    pitch_max: float = -0.08
    cam_height: float = 1.5       # meters
    curv_cubic: float = 8e-5      # |c3| bound, shared ground shape
    curv_quad: float = 2e-3       # |c2| bound
    heading: float = 0.04         # |c1| bound
    lane_spacing: float = 3.5     # meters between lane lines
    offset_jitter: float = 0.3    # meters, per-lane
    stroke_half_min: float = 1.0  # px; stroke width 2*half
    stroke_half_max: float = 2.0
    stroke_intensity: float = 200.0
    stroke_jitter: float = 30.0
    noise_sigma: float = 10.0
    background: float = 30.0
    row_step: int = 8             # ground-truth polyline row spacing
    horizon_margin: float = 10.0  # px between pole row and first lane row

    def __post_init__(self) -> None:
        if not (-0.3 <= self.pitch_min <= self.pitch_max <= 0.3):
            raise ValueError("pitch range must lie within [-0.3, 0.3] radians")
        if not (2 <= self.n_lanes_min <= self.n_lanes_max <= 5):
            raise ValueError("lane count range must lie within [2, 5]")
        if self.n_lanes_max > self.n_slots:
            raise ValueError("n_slots must cover the maximum lane count")
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not math.isfinite(v):
                raise ValueError(f"{f.name} must be finite")
        if self.focal_min <= 0 or self.focal_min > self.focal_max:
            raise ValueError("bad focal range")
        if self.row_step < 1:
            raise ValueError("row_step must be >= 1")


@dataclass(frozen=True)
class SyntheticScene:
    camera: CameraModel
    shared_shape: tuple[float, float, float]   # ground (c3, c2, c1)
    lane_offsets: tuple[float, ...]            # ground c0 per lane
    params: tuple[TiltedCurveParams, ...]      # exact per-lane image curves
    image: np.ndarray                          # uint8 (H, W)
    gts: GroundTruthSet
    seed: int
    index: int

    @property
    def clip_key(self) -> str:
        return f"{self.seed}/{self.index}"


def _scene_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def generate_scene(seed: int, index: int, cfg: GenConfig) -> SyntheticScene:
    rng = _scene_rng(seed, index)
    h, w = cfg.image_h, cfg.image_w
    f_px = rng.uniform(cfg.focal_min, cfg.focal_max)
    pitch = rng.uniform(cfg.pitch_min, cfg.pitch_max)
    cam = CameraModel(focal_px=f_px, pitch=pitch, height=cfg.cam_height,
                      fu=1.0 / f_px, fv=1.0 / f_px)
    t = int(rng.integers(cfg.n_lanes_min, cfg.n_lanes_max + 1))
    c3 = rng.uniform(-cfg.curv_cubic, cfg.curv_cubic)
    c2 = rng.uniform(-cfg.curv_quad, cfg.curv_quad)
    c1 = rng.uniform(-cfg.heading, cfg.heading)
    offsets = tuple(
        (k - (t - 1) / 2.0) * cfg.lane_spacing
        + rng.uniform(-cfg.offset_jitter, cfg.offset_jitter)
        for k in range(t)
    )

    # Centered camera coordinates -> image indices: optical axis at the image
    # center.  The curve family is closed under this translation.
    horizon_row = f_px * math.sin(pitch) + h / 2.0
    first_row = max(0, int(math.ceil(horizon_row + cfg.horizon_margin)))
    last_row = h - 2
    params = []
    polylines = []
    kept_offsets = []
    for b in offsets:
        ground = GroundCurve(c3, c2, c1, b)
        image_curve = project_ground_to_image(ground, cam)
        r0 = first_row + int(rng.integers(0, cfg.row_step))
        n_rows = (last_row - r0) // cfg.row_step
        if n_rows < 1:
            raise ValueError("image too short for the configured horizon margin")
        r1 = r0 + cfg.row_step * n_rows
        tilted = tilt_reparameterize(image_curve, cam, alpha=r0 / h, beta=r1 / h)
        tilted = translate_curve(tilted, d_row=h / 2.0, d_col=w / 2.0)
        trimmed = _trim_to_view(tilted, h, w, cfg.row_step)
        if trimmed is None:
            continue  # lane never meaningfully enters the frame
        params.append(trimmed)
        n_kept = round((trimmed.beta - trimmed.alpha) * h / cfg.row_step)
        polylines.append(sample_lane(trimmed, float(h), n_kept + 1))
        kept_offsets.append(b)
    if not params:
        raise ValueError("no lane stayed inside the frame; widen the image "
                         "or narrow the offset range")
    offsets = tuple(kept_offsets)
    t = len(offsets)

    image = _render(rng, cfg, params)
    gts = GroundTruthSet.from_lanes(
        polylines, [g.alpha for g in params], [g.beta for g in params],
        n_slots=cfg.n_slots)
    return SyntheticScene(
        camera=cam, shared_shape=(c3, c2, c1), lane_offsets=offsets,
        params=tuple(params), image=image, gts=gts, seed=seed, index=index)


def _trim_to_view(g: TiltedCurveParams, image_h: int, image_w: int,
                  row_step: int, min_rows: int = 5) -> TiltedCurveParams | None:
    """Restrict a lane to its longest in-frame run of grid rows.

    Lanes exit the frame sides near the bottom of the image like real
    annotations do; the stored curve keeps only rows whose column lies inside
    [0, image_w).  Returns None when fewer than min_rows rows survive.
    """
    rows = np.arange(round(g.alpha * image_h), round(g.beta * image_h) + 1,
                     row_step, dtype=np.float64)
    d = rows - g.horizon
    u = g.inv_sq / (d * d) + g.inv / d + g.const + g.lin * rows - g.shift
    ok = (u >= 0.0) & (u <= image_w - 1)
    best_len, best_start, run, start = 0, 0, 0, 0
    for i, flag in enumerate(ok):
        if flag:
            if run == 0:
                start = i
            run += 1
            if run > best_len:
                best_len, best_start = run, start
        else:
            run = 0
    if best_len < min_rows:
        return None
    r0 = rows[best_start]
    r1 = rows[best_start + best_len - 1]
    return replace(g, alpha=r0 / image_h, beta=r1 / image_h)


def _render(rng: np.random.Generator, cfg: GenConfig,
            params: list[TiltedCurveParams]) -> np.ndarray:
    h, w = cfg.image_h, cfg.image_w
    canvas = np.full((h, w), cfg.background)
    cols = np.arange(w, dtype=np.float64)
    for g in params:
        half = rng.uniform(cfg.stroke_half_min, cfg.stroke_half_max)
        level = cfg.stroke_intensity + rng.uniform(-cfg.stroke_jitter,
                                                   cfg.stroke_jitter)
        r0 = int(round(g.alpha * h))
        r1 = int(round(g.beta * h))
        rows = np.arange(r0, r1 + 1, dtype=np.float64)
        d = rows - g.horizon
        u = g.inv_sq / (d * d) + g.inv / d + g.const + g.lin * rows - g.shift
        for r, uc in zip(rows.astype(int), u):
            if uc < -half - 1 or uc > w + half:
                continue
            weight = np.clip(half + 0.5 - np.abs(cols - uc), 0.0, 1.0)
            stroke = cfg.background + weight * (level - cfg.background)
            canvas[r] = np.maximum(canvas[r], stroke)
    canvas = canvas + rng.normal(0.0, cfg.noise_sigma, size=(h, w))
    return np.clip(np.rint(canvas), 0, 255).astype(np.uint8)


def synth_generate(seed: int, n_scenes: int, cfg: GenConfig) -> list[SyntheticScene]:
    if n_scenes < 0:
        raise ValueError("n_scenes must be nonnegative")
    return [generate_scene(seed, i, cfg) for i in range(n_scenes)]


# -- on-disk dataset --------------------------------------------------------

def write_pgm(path, image: np.ndarray) -> None:
    """Binary portable graymap, maxval 255."""
    img = np.asarray(image)
    if img.dtype != np.uint8 or img.ndim != 2:
        raise ValueError("expected a uint8 grayscale image")
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM file")
    fields_out = []
    pos = 2
    while len(fields_out) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        fields_out.append(int(data[start:pos]))
    pos += 1  # single whitespace after maxval
    w, h, maxval = fields_out
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(data, dtype=np.uint8, count=h * w, offset=pos).reshape(h, w)


def scene_sidecar(scene: SyntheticScene) -> dict:
    return {
        "camera": {
            "focal_px": scene.camera.focal_px, "pitch": scene.camera.pitch,
            "height": scene.camera.height, "fu": scene.camera.fu,
            "fv": scene.camera.fv,
        },
        "shared_shape": list(scene.shared_shape),
        "lane_offsets": list(scene.lane_offsets),
        "params": [g.as_array().tolist() for g in scene.params],
        "polylines": [
            it.polyline.points.tolist()
            for it in scene.gts.items if it.is_lane
        ],
        "image_h": int(scene.image.shape[0]),
        "image_w": int(scene.image.shape[1]),
        "n_slots": len(scene.gts),
        "seed": scene.seed,
        "index": scene.index,
    }


def save_dataset(out_dir, scenes: list[SyntheticScene], cfg: GenConfig,
                 seed: int) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for scene in scenes:
        stem = f"scene_{scene.index:05d}"
        write_pgm(out / f"{stem}.pgm", scene.image)
        with open(out / f"{stem}.json", "w") as f:
            json.dump(scene_sidecar(scene), f, sort_keys=True, indent=1)
        names.append(stem)
    manifest = {
        "format": "laneshape-dataset-1",
        "seed": seed,
        "n_scenes": len(scenes),
        "gen_config": asdict(cfg),
        "scenes": names,
    }
    with open(out / "manifest.json", "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
    return out


@dataclass
class DatasetBundle:
    """Loaded dataset: images plus label sets, aligned by index."""

    images: list[np.ndarray]            # uint8 (H, W)
    gt_sets: list[GroundTruthSet]
    params: list[tuple[TiltedCurveParams, ...]]
    clip_keys: list[str]
    image_h: int
    image_w: int
    manifest: dict

    def __len__(self) -> int:
        return len(self.images)


def load_dataset(path) -> DatasetBundle:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json under {root}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    images, gt_sets, params, clip_keys = [], [], [], []
    image_h = image_w = None
    for stem in manifest["scenes"]:
        img = read_pgm(root / f"{stem}.pgm")
        with open(root / f"{stem}.json") as f:
            side = json.load(f)
        image_h, image_w = side["image_h"], side["image_w"]
        lanes = [LanePolyline(np.array(p)) for p in side["polylines"]]
        gs = [TiltedCurveParams.from_array(np.array(p)) for p in side["params"]]
        gt_sets.append(GroundTruthSet.from_lanes(
            lanes, [g.alpha for g in gs], [g.beta for g in gs],
            n_slots=side["n_slots"]))
        images.append(img)
        params.append(tuple(gs))
        clip_keys.append(f"{side['seed']}/{side['index']}")
    return DatasetBundle(images, gt_sets, params, clip_keys,
                         image_h or 0, image_w or 0, manifest)
