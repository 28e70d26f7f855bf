"""SM-partition calibration curves for colocating an attention executor
with a prefill engine on one GPU.

Two piecewise-linear curves describe the partition behavior as functions of
the SM fraction given to a side:

* ``attn_bw_fraction(r)``: fraction of HBM bandwidth the attention executor
  achieves with SM ratio r. Anchored at (0,0) and (1,1) and superlinear
  (f(r) >= r): attention saturates bandwidth with relatively few SMs.
* ``prefill_slowdown(r)``: latency multiplier for the prefill engine running
  on SM ratio r. Anchored at (1.0, 1.0), non-increasing in r, and sub-linear
  (f(r) <= 1/r): shrinking the partition never helps and never costs more
  than the proportional share.

Curve shape violations are hard errors at load time, not warnings: a curve
that breaks monotonicity or the bounds would silently invalidate the
offload-bound math built on top of it.
"""
from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

__all__ = [
    "CurveValidationError",
    "PiecewiseCurve",
    "CalibrationCurves",
    "min_sm_ratio_for_slo",
    "fit_curves_from_samples",
    "DEFAULT_BW_POINTS",
    "DEFAULT_SLOWDOWN_POINTS",
]

# Synthetic defaults, shape-consistent with measured partition behavior on an
# 80 GB datacenter GPU. The (0.2, 0.6) bandwidth point and the (0.5, 1.4) /
# (0.8, 1.12) slowdown points are the calibrated anchors; the rest interpolate
# smoothly between them.
DEFAULT_BW_POINTS: tuple[tuple[float, float], ...] = (
    (0.0, 0.0), (0.1, 0.35), (0.2, 0.6), (0.3, 0.66), (0.4, 0.7),
    (0.5, 0.72), (0.6, 0.78), (0.7, 0.83), (0.8, 0.88), (0.9, 0.94), (1.0, 1.0),
)
DEFAULT_SLOWDOWN_POINTS: tuple[tuple[float, float], ...] = (
    (0.05, 9.0), (0.1, 5.5), (0.2, 3.0), (0.3, 2.1), (0.4, 1.65), (0.5, 1.4),
    (0.6, 1.28), (0.7, 1.19), (0.8, 1.12), (0.9, 1.05), (1.0, 1.0),
)


class CurveValidationError(ValueError):
    """A calibration curve violates its required shape."""


@dataclass(frozen=True)
class PiecewiseCurve:
    """Monotone piecewise-linear interpolation over (x, y) knots."""

    points: tuple[tuple[float, float], ...]
    xs: tuple[float, ...] = field(init=False, repr=False)
    ys: tuple[float, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if len(self.points) < 2:
            raise CurveValidationError("curve needs at least two points")
        xs = tuple(p[0] for p in self.points)
        ys = tuple(p[1] for p in self.points)
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise CurveValidationError("curve x values must be strictly increasing")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    def __call__(self, x: float) -> float:
        xs, ys = self.xs, self.ys
        if x <= xs[0]:
            return ys[0]
        if x >= xs[-1]:
            return ys[-1]
        i = bisect.bisect_right(xs, x)
        x0, x1 = xs[i - 1], xs[i]
        y0, y1 = ys[i - 1], ys[i]
        return y0 + (y1 - y0) * (x - x0) / (x1 - x0)


def _validate_bw(curve: PiecewiseCurve) -> None:
    pts = curve.points
    if pts[0] != (0.0, 0.0) or pts[-1] != (1.0, 1.0):
        raise CurveValidationError("bandwidth curve must run from (0,0) to (1,1)")
    for i, ((_, y0), (_, y1)) in enumerate(zip(pts, pts[1:])):
        if y1 < y0:
            raise CurveValidationError(
                f"bandwidth curve not monotone at segment {i}: {y0} -> {y1}")
    for i, (x, y) in enumerate(pts):
        if y < x - 1e-12:
            raise CurveValidationError(
                f"bandwidth curve sublinear at point {i}: f({x}) = {y} < {x}")


def _validate_slowdown(curve: PiecewiseCurve) -> None:
    pts = curve.points
    if pts[-1] != (1.0, 1.0):
        raise CurveValidationError("slowdown curve must end at (1.0, 1.0)")
    for i, ((_, y0), (_, y1)) in enumerate(zip(pts, pts[1:])):
        if y1 > y0:
            raise CurveValidationError(
                f"slowdown curve must be non-increasing, violated at segment {i}")
    for i, (x, y) in enumerate(pts):
        if y < 1.0 - 1e-12:
            raise CurveValidationError(
                f"slowdown below 1.0 at point {i}: f({x}) = {y}")
        if x > 0 and y > 1.0 / x + 1e-9:
            raise CurveValidationError(
                f"slowdown superlinear at point {i}: f({x}) = {y} > 1/{x}")


@dataclass(frozen=True)
class CalibrationCurves:
    """Validated pair of partition curves."""

    bw: PiecewiseCurve
    slowdown: PiecewiseCurve

    def __post_init__(self) -> None:
        _validate_bw(self.bw)
        _validate_slowdown(self.slowdown)

    def attn_bw_fraction(self, attn_sm_ratio: float) -> float:
        """HBM bandwidth fraction achieved by the attention executor."""
        if not 0.0 <= attn_sm_ratio <= 1.0:
            raise ValueError("attn_sm_ratio must be in [0, 1]")
        return self.bw(attn_sm_ratio)

    def prefill_slowdown(self, prefill_sm_ratio: float) -> float:
        """Prefill latency multiplier at the given SM ratio."""
        if not 0.0 < prefill_sm_ratio <= 1.0:
            raise ValueError("prefill_sm_ratio must be in (0, 1]")
        return self.slowdown(prefill_sm_ratio)

    @classmethod
    def default(cls) -> "CalibrationCurves":
        return cls(PiecewiseCurve(DEFAULT_BW_POINTS),
                   PiecewiseCurve(DEFAULT_SLOWDOWN_POINTS))

    @classmethod
    def from_dict(cls, data: dict) -> "CalibrationCurves":
        try:
            bw_pts = tuple((float(x), float(y)) for x, y in data["bw"])
            slow_pts = tuple((float(x), float(y)) for x, y in data["slowdown"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CurveValidationError(f"malformed curve data: {exc}") from exc
        return cls(PiecewiseCurve(bw_pts), PiecewiseCurve(slow_pts))

    @classmethod
    def from_json_file(cls, path: str) -> "CalibrationCurves":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {"bw": [list(p) for p in self.bw.points],
                "slowdown": [list(p) for p in self.slowdown.points]}


SM_GRID_STEP = 0.05


def min_sm_ratio_for_slo(curves: CalibrationCurves, base_prefill_latency: float,
                         ttft_slo: float) -> float:
    """Smallest prefill SM ratio (0.05 grid) whose slowdown still meets the SLO.

    Returns the grid floor when even it satisfies the SLO, and 1.0 when no
    partition smaller than the whole GPU does.
    """
    if base_prefill_latency <= 0:
        raise ValueError("base_prefill_latency must be positive")
    if ttft_slo <= 0:
        raise ValueError("ttft_slo must be positive")
    budget = ttft_slo / base_prefill_latency
    for step in range(1, 21):
        r = round(step * SM_GRID_STEP, 2)
        if curves.prefill_slowdown(r) <= budget + 1e-12:
            return r
    return 1.0


def fit_curves_from_samples(bw_samples: Sequence[Sequence[float]],
                            slowdown_samples: Sequence[Sequence[float]]) -> CalibrationCurves:
    """Build validated curves from measured (ratio, value) samples.

    Samples are sorted, deduplicated on x, and the required endpoints are added
    when missing ((0,0)/(1,1) for bandwidth, (1,1) for slowdown). Shape
    violations raise CurveValidationError with the offending point.
    """
    def prep(samples: Sequence[Sequence[float]]) -> list[tuple[float, float]]:
        seen: dict[float, float] = {}
        for pair in samples:
            if len(pair) != 2:
                raise CurveValidationError(f"sample {pair!r} is not an (x, y) pair")
            x, y = float(pair[0]), float(pair[1])
            if not (math.isfinite(x) and math.isfinite(y)):
                raise CurveValidationError(f"non-finite sample ({x}, {y})")
            seen[x] = y
        return sorted(seen.items())

    bw_pts = prep(bw_samples)
    if not bw_pts:
        raise CurveValidationError("no bandwidth samples")
    if bw_pts[0][0] > 0.0:
        bw_pts.insert(0, (0.0, 0.0))
    if bw_pts[-1][0] < 1.0:
        bw_pts.append((1.0, 1.0))

    slow_pts = prep(slowdown_samples)
    if not slow_pts:
        raise CurveValidationError("no slowdown samples")
    if slow_pts[-1][0] < 1.0:
        slow_pts.append((1.0, 1.0))

    return CalibrationCurves(PiecewiseCurve(tuple(bw_pts)),
                             PiecewiseCurve(tuple(slow_pts)))
