"""Cluster configuration and derived planner quantities.

``SimConfig`` pins everything the simulator needs besides the workload: the
hardware pair, instance counts, the SM split on prefill GPUs, memory policy,
SLOs, and launch-graph settings. Derived values (KV pool sizes, batch limits,
the offloading bound) are computed here so the engine and the planner agree
by construction.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .calibration import CalibrationCurves
from .costs import b_max
from .scheduling import (combined_offload_bound, estimate_b_tpot,
                         offload_bound_comp, offload_bound_mem)
from .specs import A100_80G, GPU_PRESETS, LLAMA2_7B, MODEL_PRESETS, GpuSpec, ModelSpec

__all__ = ["SimConfig"]


@dataclass(frozen=True)
class SimConfig:
    gpu: GpuSpec = A100_80G
    model: ModelSpec = LLAMA2_7B
    num_prefill: int = 1
    num_decode: int = 1

    # SM fraction of each prefill GPU given to its attention executor
    attn_sm_ratio: float = 0.5
    # None lets the planner derive the bound; a number pins it; 0 disables
    offload_ratio: float | None = None
    c1_uses_max_tokens: bool = False

    tpot_slo: float = 0.05
    ttft_slo: float = 2.0
    avg_context_tokens: int = 2048

    # memory policy, as fractions of raw HBM capacity
    mem_util: float = 0.8
    activation_reserve: float = 0.1
    # share of the prefill-side KV pool reserved for in-flight prompts;
    # the rest is the executor's budget
    prefill_inflight_fraction: float = 0.3

    use_graphs: bool = True
    graph_interval: int = 16
    graph_budget: int = 20
    # largest batch captured per graph axis; None derives it from b_max
    graph_max_batch: int | None = None

    # HBM bandwidth fraction a prefill pass keeps busy (compute-bound phase)
    prefill_busy_fraction: float = 0.6

    curves: CalibrationCurves = field(default_factory=CalibrationCurves.default)
    horizon: float = 3600.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_prefill < 0 or self.num_decode < 1:
            raise ValueError("need num_decode >= 1 and num_prefill >= 0")
        if not 0.0 < self.attn_sm_ratio < 1.0:
            raise ValueError("attn_sm_ratio must be in (0, 1)")
        if self.offload_ratio is not None and self.offload_ratio < 0:
            raise ValueError("offload_ratio must be >= 0")
        if self.tpot_slo <= 0 or self.ttft_slo <= 0:
            raise ValueError("SLOs must be positive")
        if self.avg_context_tokens < 1:
            raise ValueError("avg_context_tokens must be >= 1")
        if not 0.0 < self.mem_util <= 1.0:
            raise ValueError("mem_util must be in (0, 1]")
        if not 0.0 <= self.activation_reserve < self.mem_util:
            raise ValueError("activation_reserve must be in [0, mem_util)")
        if not 0.0 <= self.prefill_inflight_fraction < 1.0:
            raise ValueError("prefill_inflight_fraction must be in [0, 1)")
        if not 0.0 < self.prefill_busy_fraction <= 1.0:
            raise ValueError("prefill_busy_fraction must be in (0, 1]")
        if self.graph_interval < 1 or self.graph_budget < 1:
            raise ValueError("graph_interval and graph_budget must be >= 1")
        if self.graph_max_batch is not None and self.graph_max_batch < 1:
            raise ValueError("graph_max_batch must be >= 1 when given")
        if self.horizon <= 0:
            raise ValueError("horizon must be positive")
        if self.pool_bytes <= 0:
            raise ValueError("memory policy leaves no room for KV")

    # -- derived memory budgets ------------------------------------------

    @property
    def pool_bytes(self) -> float:
        """KV pool per GPU: usable HBM minus weights minus activation reserve."""
        cap = self.gpu.hbm_capacity_bytes
        return self.mem_util * cap - self.model.weight_bytes - self.activation_reserve * cap

    @property
    def executor_budget_bytes(self) -> float:
        """KV budget of the attention executor on one prefill GPU."""
        return self.pool_bytes * (1.0 - self.prefill_inflight_fraction)

    @property
    def prefill_inflight_budget_bytes(self) -> float:
        return self.pool_bytes * self.prefill_inflight_fraction

    # -- derived planner quantities --------------------------------------

    @property
    def b_max_ideal(self) -> int:
        return b_max(self.gpu, self.model)

    @property
    def b_tpot(self) -> int:
        return estimate_b_tpot(self.gpu, self.model, self.tpot_slo,
                               self.avg_context_tokens)

    @property
    def graph_axis_max(self) -> int:
        if self.graph_max_batch is not None:
            return self.graph_max_batch
        return min(self.b_max_ideal, 512)

    @property
    def executor_bw(self) -> float:
        """Attainable HBM bandwidth of one executor at the configured SM split."""
        return self.curves.attn_bw_fraction(self.attn_sm_ratio) * self.gpu.hbm_bandwidth

    @property
    def prefill_slowdown_factor(self) -> float:
        return self.curves.prefill_slowdown(1.0 - self.attn_sm_ratio)

    def planner_bound(self) -> float:
        """Offloading bound per decoder, executor fleet split evenly."""
        if self.num_prefill == 0:
            return 0.0
        hbm = [self.executor_budget_bytes / self.num_decode] * self.num_prefill
        bw = [self.executor_bw / self.num_decode] * self.num_prefill
        mem = offload_bound_mem(hbm, bw, self.pool_bytes, self.gpu.hbm_bandwidth)
        comp = offload_bound_comp(self.b_max_ideal, self.b_tpot)
        return combined_offload_bound(mem, comp)

    def effective_bound(self) -> float:
        if self.offload_ratio is not None:
            return self.offload_ratio
        return self.planner_bound()

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        return {
            "gpu": dataclasses.asdict(self.gpu),
            "model": dataclasses.asdict(self.model),
            "num_prefill": self.num_prefill,
            "num_decode": self.num_decode,
            "attn_sm_ratio": self.attn_sm_ratio,
            "offload_ratio": self.offload_ratio,
            "c1_uses_max_tokens": self.c1_uses_max_tokens,
            "tpot_slo": self.tpot_slo,
            "ttft_slo": self.ttft_slo,
            "avg_context_tokens": self.avg_context_tokens,
            "mem_util": self.mem_util,
            "activation_reserve": self.activation_reserve,
            "prefill_inflight_fraction": self.prefill_inflight_fraction,
            "use_graphs": self.use_graphs,
            "graph_interval": self.graph_interval,
            "graph_budget": self.graph_budget,
            "graph_max_batch": self.graph_max_batch,
            "prefill_busy_fraction": self.prefill_busy_fraction,
            "curves": self.curves.to_dict(),
            "horizon": self.horizon,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SimConfig":
        data = dict(data)

        def resolve(key: str, presets: dict, ctor, default) -> Any:
            raw = data.pop(key, None)
            if raw is None:
                return default
            if isinstance(raw, str):
                if raw not in presets:
                    raise ValueError(f"unknown {key} preset {raw!r}")
                return presets[raw]
            if isinstance(raw, dict):
                raw = {k: v for k, v in raw.items() if k != "preset"}
                return ctor(**raw)
            raise ValueError(f"{key} must be a preset name or a mapping")

        gpu = resolve("gpu", GPU_PRESETS, GpuSpec, A100_80G)
        model = resolve("model", MODEL_PRESETS, ModelSpec, LLAMA2_7B)

        curves_raw = data.pop("curves", None)
        if curves_raw in (None, "default"):
            curves = CalibrationCurves.default()
        elif isinstance(curves_raw, dict):
            curves = CalibrationCurves.from_dict(curves_raw)
        else:
            raise ValueError("curves must be 'default' or a mapping")

        known = {f for f in cls.__dataclass_fields__} - {"gpu", "model", "curves"}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(gpu=gpu, model=model, curves=curves, **data)

    @classmethod
    def from_json_file(cls, path: str | Path) -> "SimConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
