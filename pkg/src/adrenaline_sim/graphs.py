"""Launch-graph shape grid for decode steps.

Decode kernels are captured into fixed-shape graphs keyed by two batch axes:
requests doing attention locally and requests whose attention runs on a
remote executor. A step replays the smallest captured shape covering its real
batches. Padded slots still pay the non-attention compute of the captured
shape but carry zero KV, so attention cost follows the real residents.

Capturing every shape is too expensive, so capacities are quantized to an
interval per axis and the interval doubles until the grid fits the capture
budget.
"""
from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass

__all__ = ["GraphGrid", "build_grid", "select_graph"]


def _axis_caps(max_batch: int, interval: int) -> tuple[int, ...]:
    if max_batch == 0:
        # axis disabled (e.g. no offloading); keep a single zero-width slot
        return (0,)
    top = math.ceil(max_batch / interval) * interval
    return tuple(range(interval, top + 1, interval))


@dataclass(frozen=True)
class GraphGrid:
    interval: int
    decode_caps: tuple[int, ...]
    offload_caps: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.decode_caps) * len(self.offload_caps)


def build_grid(base_interval: int, max_decode_batch: int,
               max_offload_batch: int, budget: int) -> GraphGrid:
    """Quantized capacity grid covering both batch axes within ``budget``.

    Starts from ``base_interval`` and doubles it until the number of captured
    shapes is at most the budget. The last capacity on each axis rounds up to
    cover the axis maximum.
    """
    if base_interval < 1:
        raise ValueError("base_interval must be >= 1")
    if max_decode_batch < 1:
        raise ValueError("max_decode_batch must be >= 1")
    if max_offload_batch < 0:
        raise ValueError("max_offload_batch must be >= 0")
    if budget < 1:
        raise ValueError("budget must be >= 1")

    interval = base_interval
    while True:
        decode_caps = _axis_caps(max_decode_batch, interval)
        offload_caps = _axis_caps(max_offload_batch, interval)
        if len(decode_caps) * len(offload_caps) <= budget:
            return GraphGrid(interval, decode_caps, offload_caps)
        interval *= 2


def _pick(caps: tuple[int, ...], batch: int) -> int | None:
    i = bisect_left(caps, batch)
    if i == len(caps):
        return None
    return caps[i]


def select_graph(grid: GraphGrid, decode_batch: int,
                 offload_batch: int) -> tuple[int, int] | None:
    """Smallest captured shape covering both real batches, or None when either
    axis overflows the grid and the step must run ungraphed."""
    if decode_batch < 0 or offload_batch < 0:
        raise ValueError("batch sizes must be non-negative")
    d = _pick(grid.decode_caps, decode_batch)
    o = _pick(grid.offload_caps, offload_batch)
    if d is None or o is None:
        return None
    return (d, o)
