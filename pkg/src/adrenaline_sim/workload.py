"""Workload generation and trace I/O.

Arrivals are Poisson at a cluster-wide rate; prompt and output lengths come
from per-preset distributions. Everything is driven by one seeded RNG in a
fixed draw order, so a (spec, seed) pair always yields the same request list.

Traces serialize as JSONL, one request per line:

    {"arrival_time": 0.41, "prompt_tokens": 934, "output_tokens": 612}
"""
from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from .scheduling import Request

__all__ = [
    "Constant", "Uniform", "LogNormal", "LengthDist",
    "WorkloadSpec", "synth_requests", "preset", "PRESET_NAMES",
    "load_trace_jsonl", "save_trace_jsonl",
]


@dataclass(frozen=True)
class Constant:
    value: int

    def __post_init__(self) -> None:
        if self.value < 1:
            raise ValueError("constant length must be >= 1")

    def sample(self, rng: random.Random) -> int:
        return self.value

    def to_dict(self) -> dict:
        return {"kind": "constant", "value": self.value}


@dataclass(frozen=True)
class Uniform:
    low: int
    high: int

    def __post_init__(self) -> None:
        if not 1 <= self.low <= self.high:
            raise ValueError("need 1 <= low <= high")

    def sample(self, rng: random.Random) -> int:
        return rng.randint(self.low, self.high)

    def to_dict(self) -> dict:
        return {"kind": "uniform", "low": self.low, "high": self.high}


@dataclass(frozen=True)
class LogNormal:
    """Lognormal with the given arithmetic mean, clipped to [min_value, max_value]."""

    mean: float
    sigma: float
    min_value: int = 16
    max_value: int = 32768

    def __post_init__(self) -> None:
        if self.mean <= 0 or self.sigma <= 0:
            raise ValueError("mean and sigma must be positive")
        if not 1 <= self.min_value <= self.max_value:
            raise ValueError("need 1 <= min_value <= max_value")

    def sample(self, rng: random.Random) -> int:
        mu = math.log(self.mean) - 0.5 * self.sigma * self.sigma
        v = int(round(rng.lognormvariate(mu, self.sigma)))
        return max(self.min_value, min(self.max_value, v))

    def to_dict(self) -> dict:
        return {"kind": "lognormal", "mean": self.mean, "sigma": self.sigma,
                "min_value": self.min_value, "max_value": self.max_value}


LengthDist = Union[Constant, Uniform, LogNormal]

_DIST_KINDS = {"constant": Constant, "uniform": Uniform, "lognormal": LogNormal}


def dist_from_dict(data: dict) -> LengthDist:
    kind = data.get("kind")
    if kind not in _DIST_KINDS:
        raise ValueError(f"unknown distribution kind {kind!r}")
    kwargs = {k: v for k, v in data.items() if k != "kind"}
    return _DIST_KINDS[kind](**kwargs)


@dataclass(frozen=True)
class WorkloadSpec:
    rate: float                 # cluster-wide arrivals per second
    num_requests: int
    prompt_dist: LengthDist
    output_dist: LengthDist
    name: str = "custom"

    def __post_init__(self) -> None:
        if self.rate <= 0:
            raise ValueError("rate must be positive")
        if self.num_requests < 1:
            raise ValueError("num_requests must be >= 1")

    def to_dict(self) -> dict:
        return {"name": self.name, "rate": self.rate,
                "num_requests": self.num_requests,
                "prompt_dist": self.prompt_dist.to_dict(),
                "output_dist": self.output_dist.to_dict()}


def synth_requests(spec: WorkloadSpec, seed: int) -> list[Request]:
    """Deterministic Poisson arrivals with sampled lengths.

    Per request the draw order is fixed (gap, prompt, output), so adding a
    distribution parameter never perturbs earlier requests of the same seed.
    """
    rng = random.Random(seed)
    reqs: list[Request] = []
    t = 0.0
    for i in range(spec.num_requests):
        t += rng.expovariate(spec.rate)
        p = spec.prompt_dist.sample(rng)
        o = spec.output_dist.sample(rng)
        reqs.append(Request(req_id=i, arrival_time=t, prompt_tokens=p, output_tokens=o))
    return reqs


# Desk-scale stand-ins for common public request traces: a chat-style mix
# with mid-length prompts and outputs, a reasoning-style mix dominated by
# long generations, and a retrieval-style mix with long fixed prompts and
# short answers.
_PRESETS: dict[str, tuple[LengthDist, LengthDist]] = {
    "sharegpt_like": (LogNormal(1100.0, 0.6, 16, 8192),
                      LogNormal(800.0, 0.6, 16, 4096)),
    "openthoughts_like": (LogNormal(320.0, 0.5, 16, 4096),
                          LogNormal(2600.0, 0.45, 64, 16384)),
    "long_prompt": (Constant(4000), Constant(220)),
}

PRESET_NAMES = tuple(_PRESETS)


def preset(name: str, rate: float, num_requests: int) -> WorkloadSpec:
    if name not in _PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    p_dist, o_dist = _PRESETS[name]
    return WorkloadSpec(rate=rate, num_requests=num_requests,
                        prompt_dist=p_dist, output_dist=o_dist, name=name)


def load_trace_jsonl(path: str | Path) -> list[Request]:
    """Read a JSONL trace, validate it, and return requests sorted by arrival.

    Request ids are assigned by arrival order regardless of any id field in
    the file; ties keep file order.
    """
    rows: list[tuple[float, int, int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                arrival = float(obj["arrival_time"])
                prompt = int(obj["prompt_tokens"])
                output = int(obj["output_tokens"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad trace row: {exc}") from exc
            if arrival < 0 or prompt < 1 or output < 1:
                raise ValueError(f"{path}:{lineno}: out-of-range trace row")
            rows.append((arrival, prompt, output))
    if not rows:
        raise ValueError(f"{path}: empty trace")
    rows.sort(key=lambda r: r[0])
    return [Request(req_id=i, arrival_time=a, prompt_tokens=p, output_tokens=o)
            for i, (a, p, o) in enumerate(rows)]


def save_trace_jsonl(path: str | Path, requests: list[Request]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in requests:
            fh.write(json.dumps({"arrival_time": r.arrival_time,
                                 "prompt_tokens": r.prompt_tokens,
                                 "output_tokens": r.output_tokens}) + "\n")
