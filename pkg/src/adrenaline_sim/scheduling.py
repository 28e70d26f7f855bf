"""Offloading bounds and the load-aware placement rule.

The planner decides, per request, whether its decode-phase attention lives on
the decoder itself (local) or on an attention executor carved out of a prefill
GPU (offloaded). Three bounds cap how much attention load may move:

* memory: spare executor HBM and attainable executor bandwidth, each summed
  over prefill instances and taken relative to the decoder,
* compute: headroom between the decoder's ideal non-attention batch and the
  largest batch that still meets the TPOT SLO,
* the effective bound is the minimum of the two.

The placement rule itself only compares resident and maximal KV token counts,
so it stays O(1) per decision given running sums.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .costs import attention_step_latency, b_max, launch_overhead, nonattn_step_latency
from .specs import GpuSpec, ModelSpec

__all__ = [
    "Request",
    "OffloadDecision",
    "offload_bound_mem",
    "offload_bound_comp",
    "combined_offload_bound",
    "estimate_b_tpot",
    "need_offload",
]


# eq=False: requests are identities, and field-wise comparison would break on
# NaN timestamps anyway.
@dataclass(eq=False)
class Request:
    """One inference request, tracked from arrival to completion.

    ``used_token`` counts KV tokens currently resident on the request's home
    device; ``max_token`` is the largest footprint it can ever reach. A fresh
    request has no resident KV, so placement sees ``used_token == 0`` until
    its prefill lands.
    """

    req_id: int
    arrival_time: float
    prompt_tokens: int
    output_tokens: int

    # mutable simulation state
    used_token: int = 0
    prefill_len: int = 0        # tokens the next prefill pass must process
    home: str = "unplaced"      # "local" | "offloaded" | "unplaced"
    executor_id: int = -1       # prefill instance hosting the KV, if offloaded
    decoder_id: int = -1
    first_token_time: float = math.nan
    finish_time: float = math.nan
    dispatch_time: float = math.nan
    preempt_count: int = 0
    phase: str = "waiting"
    reserved_tokens: int = 0    # KV slots held on the home device
    blocked: bool = False       # head-of-line blocked on a full pool

    def __post_init__(self) -> None:
        if self.prompt_tokens < 1:
            raise ValueError("prompt_tokens must be >= 1")
        if self.output_tokens < 1:
            raise ValueError("output_tokens must be >= 1")
        if self.arrival_time < 0:
            raise ValueError("arrival_time must be >= 0")
        self.prefill_len = self.prompt_tokens

    @property
    def max_token(self) -> int:
        return self.prompt_tokens + self.output_tokens

    @property
    def done(self) -> bool:
        return self.used_token >= self.max_token

    def tpot(self) -> float:
        """Mean inter-token latency over the decode phase, NaN if undefined."""
        if self.output_tokens < 2 or math.isnan(self.finish_time):
            return math.nan
        return (self.finish_time - self.first_token_time) / (self.output_tokens - 1)


def offload_bound_mem(executor_hbm_bytes: Sequence[float],
                      executor_bw_bytes_per_s: Sequence[float],
                      decode_hbm_bytes: float,
                      decode_bw_bytes_per_s: float) -> float:
    """Memory-side offloading bound for one decoder against its executors.

    Both resources must suffice, so the bound is the tighter of the HBM
    capacity ratio and the attainable bandwidth ratio. No executors means
    nothing can be offloaded.
    """
    if len(executor_hbm_bytes) != len(executor_bw_bytes_per_s):
        raise ValueError("executor HBM and bandwidth lists must align")
    if decode_hbm_bytes <= 0 or decode_bw_bytes_per_s <= 0:
        raise ValueError("decoder resources must be positive")
    if not executor_hbm_bytes:
        return 0.0
    if any(v < 0 for v in executor_hbm_bytes) or any(v < 0 for v in executor_bw_bytes_per_s):
        raise ValueError("executor resources must be non-negative")
    cap_ratio = sum(executor_hbm_bytes) / decode_hbm_bytes
    bw_ratio = sum(executor_bw_bytes_per_s) / decode_bw_bytes_per_s
    return min(cap_ratio, bw_ratio)


def offload_bound_comp(b_max_ideal: int, b_tpot: int) -> float:
    """Compute-side bound: fraction of attention load worth moving so the
    decode batch can grow from its SLO-limited size toward the ideal one."""
    if b_max_ideal < 1:
        raise ValueError("b_max_ideal must be >= 1")
    if b_tpot < 0:
        raise ValueError("b_tpot must be >= 0")
    if b_tpot == 0:
        # SLO unattainable at any batch; compute imposes no offload limit.
        return math.inf
    return max(0.0, (b_max_ideal - b_tpot) / b_tpot)


def combined_offload_bound(mem_bound: float, comp_bound: float) -> float:
    if mem_bound < 0 or comp_bound < 0:
        raise ValueError("bounds must be non-negative")
    return min(mem_bound, comp_bound)


def estimate_b_tpot(gpu: GpuSpec, model: ModelSpec, tpot_slo: float,
                    avg_context_tokens: int) -> int:
    """Largest decode batch meeting the TPOT SLO with attention on-device.

    Uses the graphed launch cost and an average per-request context length;
    returns 0 when even a single request misses the SLO.
    """
    if tpot_slo <= 0:
        raise ValueError("tpot_slo must be positive")
    if avg_context_tokens < 1:
        raise ValueError("avg_context_tokens must be >= 1")
    kv_per_req = avg_context_tokens * model.kv_bytes_per_token

    def step(batch: int) -> float:
        return (launch_overhead(model.num_layers, True, gpu)
                + nonattn_step_latency(gpu, model, batch)
                + attention_step_latency(batch * kv_per_req, gpu.hbm_bandwidth))

    if step(1) > tpot_slo:
        return 0
    lo, hi = 1, 2
    while step(hi) <= tpot_slo:
        lo = hi
        hi *= 2
        if hi > (1 << 24):
            raise ValueError("b_tpot search diverged; check tpot_slo units")
    # invariant: step(lo) <= slo < step(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if step(mid) <= tpot_slo:
            lo = mid
        else:
            hi = mid
    return lo


@dataclass(frozen=True)
class OffloadDecision:
    offload: bool
    rule: str               # "C1", "C2", or "local"
    trace: dict = field(repr=False)


def need_offload(req: Request, offloaded: Iterable[Request],
                 local: Iterable[Request], bound: float, *,
                 c1_uses_max_tokens: bool = False) -> OffloadDecision:
    """Load-aware placement for one request against a decoder's current sets.

    C1 admits the request to the executor side while even its full eventual
    footprint keeps the executor below ``bound`` times the decoder's resident
    load. C2 is the softer fallback: current footprints still fit and the
    request-count ratio stays below the bound. Both comparisons are strict,
    so an idle decoder (``decode_used == 0``) always keeps the request local.

    ``c1_uses_max_tokens`` switches C1 to compare projected executor load
    (sum of max footprints) instead of resident load; the conservative form
    used when admission must guarantee the executor never saturates.
    """
    if bound < 0:
        raise ValueError("bound must be non-negative")
    attn_used = attn_max = 0
    n_offloaded = 0
    for r in offloaded:
        attn_used += r.used_token
        attn_max += r.max_token
        n_offloaded += 1
    decode_used = decode_max = 0
    n_local = 0
    for r in local:
        decode_used += r.used_token
        decode_max += r.max_token
        n_local += 1

    budget = decode_used * bound
    c1_load = attn_max if c1_uses_max_tokens else attn_used
    trace = {
        "attn_used": attn_used, "attn_max": attn_max,
        "decode_used": decode_used, "decode_max": decode_max,
        "n_offloaded": n_offloaded, "n_local": n_local,
        "bound": bound, "req_used": req.used_token, "req_max": req.max_token,
        "c1_lhs": c1_load + req.max_token, "c1_rhs": budget,
        "c2_lhs": attn_used + req.used_token, "c2_rhs": budget,
        "c2_count_lhs": n_offloaded + 1, "c2_count_rhs": n_local * bound,
    }
    if c1_load + req.max_token < budget:
        return OffloadDecision(True, "C1", trace)
    if attn_used + req.used_token < budget and n_offloaded + 1 < n_local * bound:
        return OffloadDecision(True, "C2", trace)
    return OffloadDecision(False, "local", trace)
