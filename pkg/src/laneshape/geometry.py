"""Lane curve geometry.

A lane centerline on flat ground is modelled as a cubic ``x = c3*z**3 + c2*z**2
+ c1*z + c0`` (x lateral, z forward, both in meters).  Under a pinhole camera
whose optical axis is parallel to the ground, that cubic projects to an
image-plane curve

    u = inv_sq / v**2 + inv / v + const + lin * v

in pixel coordinates centered on the optical axis (v grows downward).  When the
camera is pitched, rows shift as ``v = (v' - f*sin(phi)) / cos(phi)``, which
turns the curve into

    u' = inv_sq / (v' - horizon)**2 + inv / (v' - horizon) + const
         + lin * v' - shift

with a pole at ``v' = horizon`` (the vanishing row).  The curve family is
closed under row/column translation, so the same parameterization works in
raw image-index coordinates; only the coefficients move.

This module holds the parameter types, the forward maps between them, curve
sampling, and a least-squares fitter that recovers the tilted-curve
coefficients from observed polylines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

# Shared-across-lanes parameter names, in the order used throughout the
# package (network heads, loss, checkpoints).  The remaining four
# (lin, shift, alpha, beta) are per-lane.
SHARED_PARAM_NAMES = ("inv_sq", "horizon", "inv", "const")
PER_LANE_PARAM_NAMES = ("lin", "shift", "alpha", "beta")
PARAM_NAMES = SHARED_PARAM_NAMES + PER_LANE_PARAM_NAMES


class SingularRowError(ValueError):
    """A curve was evaluated at (or too close to) its pole row."""


class UnderdeterminedFitError(ValueError):
    """Fewer observations than free parameters in a curve fit."""


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with pitch.

    focal_px : focal length in pixels
    pitch    : angle between optical axis and ground plane, radians
    height   : camera height above the ground plane, meters
    fu, fv   : pixel width / height on the focal plane divided by the focal
               length (1/m); for square pixels both equal 1/focal_px * m-per-px
    """

    focal_px: float
    pitch: float
    height: float
    fu: float
    fv: float

    def __post_init__(self) -> None:
        if not (self.focal_px > 0 and self.height > 0 and self.fu > 0 and self.fv > 0):
            raise ValueError("focal_px, height, fu, fv must all be positive")
        if not abs(self.pitch) < math.pi / 2:
            raise ValueError("|pitch| must be < pi/2")


@dataclass(frozen=True)
class GroundCurve:
    """Ground-plane cubic x = c3*z**3 + c2*z**2 + c1*z + c0.

    c3 = 0 is allowed so straight lanes stay expressible.
    """

    c3: float
    c2: float
    c1: float
    c0: float


@dataclass(frozen=True)
class ImageCurveParams:
    """Untilted image-plane curve u = inv_sq/v**2 + inv/v + const + lin*v."""

    inv_sq: float
    inv: float
    const: float
    lin: float


@dataclass(frozen=True)
class TiltedCurveParams:
    """Tilted image-plane curve with visibility bounds.

    u' = inv_sq/(v'-horizon)**2 + inv/(v'-horizon) + const + lin*v' - shift

    alpha, beta are the lower/upper row boundaries of the visible lane,
    normalized by image height to [0, 1]; alpha < beta.  Two constants
    (const, shift) are kept separate because const is shared across lanes
    of one image while shift is per-lane.
    """

    inv_sq: float
    horizon: float
    inv: float
    const: float
    lin: float
    shift: float
    alpha: float
    beta: float

    def __post_init__(self) -> None:
        if not self.alpha < self.beta:
            raise ValueError(f"alpha ({self.alpha}) must be < beta ({self.beta})")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.inv_sq, self.horizon, self.inv, self.const,
             self.lin, self.shift, self.alpha, self.beta],
            dtype=np.float64,
        )

    @staticmethod
    def from_array(a) -> "TiltedCurveParams":
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (8,):
            raise ValueError(f"expected 8 values, got shape {a.shape}")
        return TiltedCurveParams(*a.tolist())


@dataclass(frozen=True)
class LanePolyline:
    """Ordered (u, v) pixel samples of one lane; v strictly increasing, >= 2 points."""

    points: np.ndarray  # (R, 2) float64, columns (u, v)

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError(f"points must have shape (R, 2), got {pts.shape}")
        if pts.shape[0] < 2:
            raise ValueError("a polyline needs at least 2 points")
        if not np.all(np.diff(pts[:, 1]) > 0):
            raise ValueError("row coordinates must be strictly increasing")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    @property
    def u(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def v(self) -> np.ndarray:
        return self.points[:, 1]

    def __len__(self) -> int:
        return self.points.shape[0]


def project_ground_to_image(curve: GroundCurve, cam: CameraModel) -> ImageCurveParams:
    """Composite image-plane coefficients of a ground cubic under perspective.

    Substituting x = u*fu*z, z = height/(v*fv) into the ground cubic and
    collecting powers of v gives the four composites below.
    """
    h = cam.height
    return ImageCurveParams(
        inv_sq=curve.c3 * h * h / (cam.fu * cam.fv * cam.fv),
        inv=curve.c2 * h / (cam.fu * cam.fv),
        const=curve.c1 / cam.fu,
        lin=curve.c0 * cam.fv / (cam.fu * h),
    )


def eval_image_curve(p: ImageCurveParams, v):
    """Evaluate u(v) on the untilted image plane.  v = 0 is the pole."""
    v = np.asarray(v, dtype=np.float64)
    if np.any(v == 0.0):
        raise SingularRowError("image curve is undefined at v = 0")
    return p.inv_sq / (v * v) + p.inv / v + p.const + p.lin * v


def tilt_reparameterize(
    p: ImageCurveParams, cam: CameraModel, alpha: float, beta: float
) -> TiltedCurveParams:
    """Rewrite an untilted curve in the pitched camera's row coordinate.

    Row substitution v = (v' - focal*sin(pitch)) / cos(pitch) folds the pitch
    into the coefficients; the pole moves to horizon = focal*sin(pitch).
    """
    c, s = math.cos(cam.pitch), math.sin(cam.pitch)
    return TiltedCurveParams(
        inv_sq=p.inv_sq * c * c,
        horizon=cam.focal_px * s,
        inv=p.inv * c,
        const=p.const,
        lin=p.lin / c,
        shift=p.lin * cam.focal_px * s / c,
        alpha=alpha,
        beta=beta,
    )


def eval_tilted_curve(g: TiltedCurveParams, v_prime):
    """Evaluate u'(v') on the tilted image plane.  v' = horizon is the pole."""
    v_prime = np.asarray(v_prime, dtype=np.float64)
    d = v_prime - g.horizon
    if np.any(d == 0.0):
        raise SingularRowError("tilted curve is undefined at v' = horizon")
    return g.inv_sq / (d * d) + g.inv / d + g.const + g.lin * v_prime - g.shift


def untilt_pixel(v_prime, cam: CameraModel):
    """Map a tilted-plane row back to the untilted plane."""
    v_prime = np.asarray(v_prime, dtype=np.float64)
    return (v_prime - cam.focal_px * math.sin(cam.pitch)) / math.cos(cam.pitch)


def tilt_pixel(v, cam: CameraModel):
    """Map an untilted-plane row to the tilted plane (inverse of untilt_pixel)."""
    v = np.asarray(v, dtype=np.float64)
    return cam.focal_px * math.sin(cam.pitch) + v * math.cos(cam.pitch)


def translate_curve(g: TiltedCurveParams, d_row: float, d_col: float) -> TiltedCurveParams:
    """Shift a tilted curve by (d_row, d_col) in pixel coordinates.

    The family is closed under translation: rows move the pole and fold a
    lin-proportional constant into shift, columns move const.  alpha/beta are
    normalized and left untouched; callers re-derive them when the image frame
    changes.
    """
    return replace(
        g,
        horizon=g.horizon + d_row,
        shift=g.shift + g.lin * d_row,
        const=g.const + d_col,
        lin=g.lin,
    )


def sample_lane(g: TiltedCurveParams, image_h: float, n_samples: int) -> LanePolyline:
    """Sample the curve on a uniform row grid between alpha and beta.

    Rows span [alpha*image_h, beta*image_h] inclusive.  Raises if any grid row
    hits the pole.
    """
    if n_samples < 2:
        raise ValueError("need at least 2 samples")
    rows = np.linspace(g.alpha * image_h, g.beta * image_h, n_samples)
    if np.any(rows == g.horizon):
        raise SingularRowError("sample grid hits the curve pole row")
    u = eval_tilted_curve(g, rows)
    return LanePolyline(np.column_stack([u, rows]))


@dataclass(frozen=True)
class FitResult:
    """Output of fit_tilted_curve: per-lane parameters plus residual stats."""

    params: tuple[TiltedCurveParams, ...]
    shared: tuple[float, float, float, float] | None  # (inv_sq, horizon, inv, const)
    rms_residual: float


def _design_columns(rows: np.ndarray, horizon: float, quadratic: bool) -> np.ndarray:
    d = rows - horizon
    cols = [1.0 / (d * d), 1.0 / d]
    if quadratic:
        cols = cols[1:]  # pin the inverse-square coefficient to zero
    return np.column_stack(cols)


def _solve_at_horizon(
    lanes_uv: list[tuple[np.ndarray, np.ndarray]],
    horizon: float,
    share_shape: bool,
    quadratic: bool,
):
    """Linear least squares for all coefficients except the pole row.

    Returns (ssr, coefficient vector, column layout).  With the pole fixed the
    model is linear: shared columns are the inverse powers (plus a shared
    constant when share_shape), per-lane columns are a constant and the linear
    row term.
    """
    n_lanes = len(lanes_uv)
    n_shape = 1 if quadratic else 2
    if share_shape:
        # columns: [shape terms | per-lane const | per-lane row]
        n_cols = n_shape + 2 * n_lanes
    else:
        n_cols = (n_shape + 2) * n_lanes
    total = sum(len(u) for u, _ in lanes_uv)
    rows_out = np.zeros((total, n_cols))
    rhs = np.concatenate([u for u, _ in lanes_uv])
    at = 0
    for t, (u, v) in enumerate(lanes_uv):
        r = len(u)
        shape_cols = _design_columns(v, horizon, quadratic)
        if share_shape:
            rows_out[at:at + r, :n_shape] = shape_cols
            rows_out[at:at + r, n_shape + 2 * t] = 1.0
            rows_out[at:at + r, n_shape + 2 * t + 1] = v
        else:
            base = (n_shape + 2) * t
            rows_out[at:at + r, base:base + n_shape] = shape_cols
            rows_out[at:at + r, base + n_shape] = 1.0
            rows_out[at:at + r, base + n_shape + 1] = v
        at += r
    coef, _, _, _ = np.linalg.lstsq(rows_out, rhs, rcond=None)
    resid = rows_out @ coef - rhs
    return float(resid @ resid), coef


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    """Minimize a 1-D function by golden-section search on [lo, hi]."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    x1 = b - invphi * (b - a)
    x2 = a + invphi * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 < f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - invphi * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + invphi * (b - a)
            f2 = f(x2)
    return 0.5 * (a + b)


def _parabolic_refine(f, x: float, step: float, iters: int = 4) -> float:
    """Polish a minimum by fitting a parabola through (x-step, x, x+step)."""
    for _ in range(iters):
        f0, fm, fp = f(x), f(x - step), f(x + step)
        denom = fp - 2.0 * f0 + fm
        if denom <= 0.0 or not math.isfinite(denom):
            break
        delta = 0.5 * step * (fm - fp) / denom
        if not math.isfinite(delta) or abs(delta) > step:
            break
        x = x + delta
        step = max(abs(delta), step * 1e-2)
        if step == 0.0:
            break
    return x


def fit_tilted_curve(
    lanes: list[LanePolyline],
    share_shape: bool = False,
    *,
    image_h: float,
    quadratic: bool = False,
    bracket: tuple[float, float] | None = None,
    tol: float = 1e-6,
    grid_points: int = 65,
) -> FitResult:
    """Least-squares fit of tilted-curve parameters to observed polylines.

    With the pole row fixed the model is linear in the remaining
    coefficients, so the fit is a 1-D search over the pole (coarse grid, then
    golden-section, then a parabolic polish) wrapping linear least squares.

    share_shape fits one (inv_sq, horizon, inv, const) across all lanes with
    per-lane (lin, shift); the constant split is gauged so per-lane shifts
    average to zero.  Without sharing each lane is fit independently and the
    two constants are not separately identifiable, so the difference lands in
    const and shift is reported as zero.

    The search bracket defaults to [-image_h, image_h]; grid rows that land on
    a candidate pole are excluded by nudging the candidate.
    """
    if not lanes:
        raise ValueError("no lanes to fit")
    for lane in lanes:
        if len(lane) < 5:
            raise UnderdeterminedFitError("each polyline needs at least 5 points")

    if not share_shape and len(lanes) > 1:
        # Independent per-lane fits share no parameters; recurse per lane.
        results = [
            fit_tilted_curve([lane], False, image_h=image_h, quadratic=quadratic,
                             bracket=bracket, tol=tol, grid_points=grid_points)
            for lane in lanes
        ]
        total = sum(len(lane) for lane in lanes)
        ssr = sum(r.rms_residual ** 2 * len(lane) for r, lane in zip(results, lanes))
        return FitResult(
            params=tuple(r.params[0] for r in results),
            shared=None,
            rms_residual=math.sqrt(ssr / total),
        )

    lanes_uv = [(lane.u.copy(), lane.v.copy()) for lane in lanes]
    total = sum(len(u) for u, _ in lanes_uv)
    n_shape = 1 if quadratic else 2
    n_free = 1 + n_shape + 2 * len(lanes)  # pole + shape + per-lane (const, row)
    if total < n_free:
        raise UnderdeterminedFitError(
            f"{total} points cannot determine {n_free} parameters"
        )

    lo, hi = bracket if bracket is not None else (-image_h, image_h)
    all_rows = np.concatenate([v for _, v in lanes_uv])

    def ssr_at(h: float) -> float:
        if np.any(np.abs(all_rows - h) < 1e-9):
            h = h + 1e-6
        return _solve_at_horizon(lanes_uv, h, share_shape, quadratic)[0]

    # Coarse scan to bracket the global minimum; the objective can have
    # several basins when the data barely constrains the pole.
    grid = np.linspace(lo, hi, grid_points)
    vals = [ssr_at(h) for h in grid]
    k = int(np.argmin(vals))
    g_lo = grid[max(0, k - 1)]
    g_hi = grid[min(len(grid) - 1, k + 1)]
    horizon = _golden_section(ssr_at, g_lo, g_hi, tol)
    horizon = _parabolic_refine(ssr_at, horizon, max(tol, 1e-9))

    ssr, coef = _solve_at_horizon(lanes_uv, horizon, share_shape, quadratic)
    rms = math.sqrt(ssr / total)

    def bounds(v: np.ndarray) -> tuple[float, float]:
        return float(v[0] / image_h), float(v[-1] / image_h)

    if share_shape:
        inv_sq = 0.0 if quadratic else float(coef[0])
        inv = float(coef[0 if quadratic else 1])
        lane_consts = coef[n_shape::2]
        lane_lins = coef[n_shape + 1::2]
        # Gauge: the shared constant is the mean per-lane constant, so
        # per-lane shifts (const - lane_const) average to zero.
        const = float(np.mean(lane_consts))
        params = []
        for t, (_, v) in enumerate(lanes_uv):
            a, b = bounds(v)
            params.append(TiltedCurveParams(
                inv_sq=inv_sq, horizon=horizon, inv=inv, const=const,
                lin=float(lane_lins[t]), shift=const - float(lane_consts[t]),
                alpha=a, beta=b,
            ))
        return FitResult(tuple(params), (inv_sq, horizon, inv, const), rms)

    inv_sq = 0.0 if quadratic else float(coef[0])
    inv = float(coef[0 if quadratic else 1])
    a, b = bounds(lanes_uv[0][1])
    g = TiltedCurveParams(
        inv_sq=inv_sq, horizon=horizon, inv=inv, const=float(coef[n_shape]),
        lin=float(coef[n_shape + 1]), shift=0.0, alpha=a, beta=b,
    )
    return FitResult((g,), None, rms)
