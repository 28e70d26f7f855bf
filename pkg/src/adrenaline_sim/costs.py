"""Roofline-style cost model for decode and prefill phases.

The decode step is split into a batch-insensitive non-attention part (GEMMs,
memory-bound up to the roofline crossover batch) and an attention part that
streams resident KV bytes at some fraction of HBM bandwidth. Launch overhead is
modeled separately so graphed and ungraphed execution can be compared.
"""
from __future__ import annotations

import math

from .specs import GpuSpec, ModelSpec

__all__ = [
    "kv_bytes",
    "arithmetic_intensity_nonattn",
    "b_max",
    "prefill_latency",
    "attention_step_latency",
    "nonattn_step_latency",
    "launch_overhead",
]

# Batches larger than any realistic crossover; used when the machine balance is
# at or past the hidden-size asymptote and the crossover diverges.
B_MAX_CAP = 1 << 20


def kv_bytes(model: ModelSpec, seq_len: int) -> int:
    """KV-cache bytes held for one sequence of seq_len tokens."""
    if seq_len < 0:
        raise ValueError("seq_len must be >= 0")
    return model.kv_bytes_per_token * seq_len


def arithmetic_intensity_nonattn(hidden_size: int, batch: int) -> float:
    """FLOP per byte of the batched non-attention GEMMs: 1 / (1/h + 1/b)."""
    if hidden_size <= 0 or batch <= 0:
        raise ValueError("hidden_size and batch must be positive")
    return 1.0 / (1.0 / hidden_size + 1.0 / batch)


def b_max(gpu: GpuSpec, model: ModelSpec) -> int:
    """Largest batch still in the memory-bound regime for non-attention kernels.

    Solves arithmetic_intensity_nonattn(h, b) = machine balance and floors.
    When the balance meets or exceeds the hidden size the kernels never become
    compute-bound at any batch, so a large cap is returned.
    """
    mb = gpu.machine_balance
    h = model.hidden_size
    if mb >= h:
        return B_MAX_CAP
    crossover = 1.0 / (1.0 / mb - 1.0 / h)
    return max(1, math.floor(crossover))


def prefill_latency(gpu: GpuSpec, model: ModelSpec, total_prompt_tokens: int,
                    slowdown: float = 1.0) -> float:
    """Compute-bound prefill time for a batch totalling total_prompt_tokens.

    slowdown is the colocation penalty factor (1.0 when the engine owns the
    whole GPU); latency is proportional to the token total, so batching two
    equal prompts costs exactly twice one prompt.
    """
    if total_prompt_tokens < 0:
        raise ValueError("total_prompt_tokens must be >= 0")
    if slowdown < 1.0:
        raise ValueError("slowdown must be >= 1.0")
    return total_prompt_tokens * model.flops_per_prompt_token / gpu.flops_peak * slowdown


def attention_step_latency(resident_kv_bytes: float, bandwidth: float,
                           bw_fraction: float = 1.0) -> float:
    """Time to stream resident KV bytes at bw_fraction of the given bandwidth."""
    if resident_kv_bytes < 0:
        raise ValueError("resident_kv_bytes must be >= 0")
    if bandwidth <= 0 or not 0.0 < bw_fraction <= 1.0:
        raise ValueError("bandwidth must be positive and bw_fraction in (0, 1]")
    return resident_kv_bytes / (bandwidth * bw_fraction)


def nonattn_step_latency(gpu: GpuSpec, model: ModelSpec, batch: int) -> float:
    """Non-attention decode step time: flat up to b_max, then scales with batch."""
    if batch <= 0:
        raise ValueError("batch must be positive")
    flat = model.bytes_per_decode_step_nonattn / gpu.hbm_bandwidth
    crossover = b_max(gpu, model)
    if batch <= crossover:
        return flat
    return flat * batch / crossover


def launch_overhead(num_layers: int, graphed: bool, gpu: GpuSpec,
                    gpu_time_per_layer: float = 0.0) -> float:
    """Kernel-launch overhead for one decode step.

    Ungraphed execution pays the per-layer CPU launch cost wherever it is not
    hidden behind that layer's GPU time; graphed execution pays one replay
    launch for the whole step.
    """
    if num_layers <= 0:
        raise ValueError("num_layers must be positive")
    if gpu_time_per_layer < 0:
        raise ValueError("gpu_time_per_layer must be >= 0")
    if graphed:
        return gpu.cpu_launch_per_layer
    return num_layers * max(0.0, gpu.cpu_launch_per_layer - gpu_time_per_layer)
