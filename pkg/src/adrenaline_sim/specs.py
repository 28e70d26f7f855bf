"""Hardware and model descriptions used by the cost model.

All quantities are plain SI units: bytes, bytes/s, FLOP/s, seconds.
"""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class GpuSpec:
    """Per-GPU capability numbers (dense peak, not achieved)."""

    name: str
    flops_peak: float
    hbm_capacity_bytes: float
    hbm_bandwidth: float
    interconnect_bandwidth: float
    cpu_launch_per_layer: float

    def __post_init__(self) -> None:
        for field in ("flops_peak", "hbm_capacity_bytes", "hbm_bandwidth",
                      "interconnect_bandwidth"):
            if getattr(self, field) <= 0:
                raise ValueError(f"GpuSpec.{field} must be positive")
        if self.cpu_launch_per_layer < 0:
            raise ValueError("GpuSpec.cpu_launch_per_layer must be >= 0")

    @property
    def machine_balance(self) -> float:
        """Peak FLOP per byte of HBM traffic."""
        return self.flops_peak / self.hbm_bandwidth


@dataclass(frozen=True)
class ModelSpec:
    """Transformer shape plus the per-token cost coefficients the simulator needs."""

    name: str
    num_layers: int
    hidden_size: int
    elem_bytes: int
    weight_bytes: float
    flops_per_prompt_token: float
    flops_per_decode_token_nonattn: float
    bytes_per_decode_step_nonattn: float

    def __post_init__(self) -> None:
        if self.num_layers <= 0 or self.hidden_size <= 0 or self.elem_bytes <= 0:
            raise ValueError("ModelSpec shape fields must be positive")
        if self.weight_bytes <= 0:
            raise ValueError("ModelSpec.weight_bytes must be positive")

    @property
    def kv_bytes_per_token(self) -> int:
        # K and V, one vector of hidden_size each, per layer.
        return 2 * self.elem_bytes * self.hidden_size * self.num_layers


# Defaults correspond to a single 80 GB datacenter GPU and a 7B-class
# decoder-only model in 16-bit weights. They are the reference desk-scale
# configuration for the shipped calibration.

A100_80G = GpuSpec(
    name="a100-80g",
    flops_peak=312e12,
    hbm_capacity_bytes=80e9,
    hbm_bandwidth=2039e9,
    interconnect_bandwidth=600e9,
    cpu_launch_per_layer=1.137e-3,
)

LLAMA2_7B = ModelSpec(
    name="llama2-7b",
    num_layers=32,
    hidden_size=4096,
    elem_bytes=2,
    weight_bytes=13.476e9,
    flops_per_prompt_token=1.3476e10,
    flops_per_decode_token_nonattn=1.3476e10,
    bytes_per_decode_step_nonattn=13.476e9,
)

GPU_PRESETS = {A100_80G.name: A100_80G}
MODEL_PRESETS = {LLAMA2_7B.name: LLAMA2_7B}
