"""Benchmark-style lane annotation ingestion.

Input is line-delimited JSON; each record carries the frame path, a list of
sample rows, and one column list per lane aligned with those rows, with -2
marking rows where the lane is absent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .geometry import LanePolyline
from .matching import GroundTruthSet

ABSENT = -2


class AnnotationError(ValueError):
    """Malformed annotation input; the message carries the line number."""


@dataclass(frozen=True)
class AnnotationRecord:
    raw_file: str
    h_samples: tuple[float, ...]
    lanes: tuple[tuple[float, ...], ...]


def _parse_line(line: str, lineno: int) -> AnnotationRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise AnnotationError(f"line {lineno}: invalid JSON ({e.msg})") from e
    if not isinstance(obj, dict):
        raise AnnotationError(f"line {lineno}: record must be an object")
    for field in ("raw_file", "h_samples", "lanes"):
        if field not in obj:
            raise AnnotationError(f"line {lineno}: missing field '{field}'")
    h_samples = obj["h_samples"]
    lanes = obj["lanes"]
    if not isinstance(h_samples, list) or not all(
            isinstance(v, (int, float)) for v in h_samples):
        raise AnnotationError(f"line {lineno}: h_samples must be a numeric list")
    if not isinstance(lanes, list):
        raise AnnotationError(f"line {lineno}: lanes must be a list of lists")
    for k, lane in enumerate(lanes):
        if not isinstance(lane, list) or len(lane) != len(h_samples):
            raise AnnotationError(
                f"line {lineno}: lane {k} length does not match h_samples")
    return AnnotationRecord(
        raw_file=str(obj["raw_file"]),
        h_samples=tuple(float(v) for v in h_samples),
        lanes=tuple(tuple(float(u) for u in lane) for lane in lanes),
    )


def record_to_lanes(record: AnnotationRecord) -> list[LanePolyline]:
    """Drop absent samples; lanes with fewer than 2 valid points vanish."""
    rows = np.asarray(record.h_samples)
    out = []
    for lane in record.lanes:
        u = np.asarray(lane)
        keep = u != ABSENT
        if keep.sum() < 2:
            continue
        out.append(LanePolyline(np.column_stack([u[keep], rows[keep]])))
    return out


def parse_annotations(
    path, image_h: float = 720.0, n_slots: int = 7,
) -> tuple[list[AnnotationRecord], list[GroundTruthSet]]:
    """Read a line-delimited annotation file.

    Returns the raw records plus derived fixed-size ground-truth sets with
    lane boundaries normalized by image_h.
    """
    records: list[AnnotationRecord] = []
    gt_sets: list[GroundTruthSet] = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            record = _parse_line(line, lineno)
            lanes = record_to_lanes(record)
            if len(lanes) > n_slots:
                raise AnnotationError(
                    f"line {lineno}: {len(lanes)} lanes exceed {n_slots} slots")
            alphas = [lane.v[0] / image_h for lane in lanes]
            betas = [lane.v[-1] / image_h for lane in lanes]
            records.append(record)
            gt_sets.append(GroundTruthSet.from_lanes(lanes, alphas, betas, n_slots))
    return records, gt_sets
