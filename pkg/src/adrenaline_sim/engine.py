"""Discrete-event simulation of a prefill/decode-disaggregated cluster.

The cluster holds prefill instances (each optionally hosting an attention
executor on a static SM partition) and decode instances running continuous
batching. Requests are placed local or offloaded at dispatch time, prefill KV
for local requests is shipped over the interconnect, and every decode step is
priced with the roofline cost model. Remote attention overlaps the decoder's
local attention; whatever does not fit under it shows up as stall time.

Memory is gated before work is done: a request only enters prefill once its
KV home has room for the prefilled footprint, and per-step KV growth may evict
the youngest resident (recompute-style, progress preserved) when a pool fills.

Event ordering is a (time, sequence) heap and every container iteration is in
deterministic order, so a run is bit-reproducible for a given config and
request list.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from .config import SimConfig
from .costs import (attention_step_latency, launch_overhead,
                    nonattn_step_latency, prefill_latency)
from .graphs import build_grid, select_graph
from .scheduling import OffloadDecision, Request, need_offload

__all__ = [
    "StepRecord", "PrefillRecord", "TransferRecord", "SaturationEvent",
    "RunResult", "simulate",
]

_ARRIVAL, _PREFILL_DONE, _TRANSFER_DONE, _STEP_END = range(4)


@dataclass
class StepRecord:
    decoder: int
    t_start: float
    t_end: float
    batch_local: int
    batch_offload: int
    graph_shape: tuple[int, int] | None
    launch: float
    nonattn: float
    local_attn: float
    stall: float
    local_kv_bytes: float
    exec_kv_bytes: dict[int, float]
    exec_attn: dict[int, float]
    link_bytes: float
    completions: int = 0

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def batch(self) -> int:
        return self.batch_local + self.batch_offload


@dataclass(frozen=True)
class PrefillRecord:
    instance: int
    req_id: int
    t_start: float
    t_end: float
    tokens: int


@dataclass(frozen=True)
class TransferRecord:
    prefill: int
    decoder: int
    req_id: int
    t_start: float
    t_end: float
    num_bytes: float


@dataclass(frozen=True)
class SaturationEvent:
    time: float
    kind: str           # "preempt" or "blocked"
    decoder: int
    req_id: int


@dataclass
class RunResult:
    config: SimConfig
    bound: float
    requests: list[Request]
    steps: list[StepRecord]
    prefill_records: list[PrefillRecord]
    transfers: list[TransferRecord]
    saturation: list[SaturationEvent]
    decisions: dict[int, list[tuple[float, OffloadDecision]]]
    end_time: float

    @property
    def completed(self) -> int:
        return sum(1 for r in self.requests if r.phase == "done")


class _Prefill:
    __slots__ = ("idx", "queue", "current", "current_start", "inflight_bytes",
                 "exec_bytes", "busy_time")

    def __init__(self, idx: int) -> None:
        self.idx = idx
        self.queue: deque[Request] = deque()
        self.current: Request | None = None
        self.current_start = 0.0
        self.inflight_bytes = 0.0
        self.exec_bytes = 0.0
        self.busy_time = 0.0

    def pending_tokens(self) -> int:
        tok = sum(r.prefill_len for r in self.queue)
        if self.current is not None:
            tok += self.current.prefill_len
        return tok


class _Decoder:
    __slots__ = ("idx", "local", "offloaded", "ready", "run_local", "run_off",
                 "pool_bytes_used", "busy", "pending")

    def __init__(self, idx: int) -> None:
        self.idx = idx
        self.local: list[Request] = []       # assigned local set
        self.offloaded: list[Request] = []   # assigned offloaded set
        self.ready: deque[Request] = deque()
        self.run_local: list[Request] = []
        self.run_off: list[Request] = []
        self.pool_bytes_used = 0.0
        self.busy = False
        self.pending: StepRecord | None = None


class _Sim:
    def __init__(self, cfg: SimConfig, requests: Sequence[Request]) -> None:
        if cfg.num_prefill < 1:
            raise ValueError("simulation needs at least one prefill instance")
        ids = [r.req_id for r in requests]
        if len(set(ids)) != len(ids):
            raise ValueError("request ids must be unique")
        self.cfg = cfg
        self.kv_tok = cfg.model.kv_bytes_per_token
        self.bound = cfg.effective_bound()
        self.offload_on = self.bound > 0.0
        # the SM partition exists only when offloading is in use
        self.slowdown = cfg.prefill_slowdown_factor if self.offload_on else 1.0
        self.exec_bw_fraction = cfg.curves.attn_bw_fraction(cfg.attn_sm_ratio)
        self.grid = build_grid(cfg.graph_interval, cfg.graph_axis_max,
                               cfg.graph_axis_max if self.offload_on else 0,
                               cfg.graph_budget)
        self.prefills = [_Prefill(i) for i in range(cfg.num_prefill)]
        self.decoders = [_Decoder(i) for i in range(cfg.num_decode)]
        self.requests = sorted(
            (Request(r.req_id, r.arrival_time, r.prompt_tokens, r.output_tokens)
             for r in requests),
            key=lambda r: (r.arrival_time, r.req_id))
        self.wait_new: deque[Request] = deque()
        self.wait_pre: deque[Request] = deque()
        self.chan_free: dict[tuple[int, int], float] = {}
        self.heap: list = []
        self.seq = 0
        self.steps: list[StepRecord] = []
        self.prefill_records: list[PrefillRecord] = []
        self.transfers: list[TransferRecord] = []
        self.saturation: list[SaturationEvent] = []
        self.decisions: dict[int, list[tuple[float, OffloadDecision]]] = {}
        self.end_time = 0.0

    # -- plumbing ---------------------------------------------------------

    def _push(self, t: float, kind: int, payload) -> None:
        self.seq += 1
        heapq.heappush(self.heap, (t, self.seq, kind, payload))

    def run(self) -> RunResult:
        for r in self.requests:
            self._push(r.arrival_time, _ARRIVAL, r)
        while self.heap:
            t, _, kind, payload = heapq.heappop(self.heap)
            if t > self.cfg.horizon:
                raise RuntimeError(
                    f"simulation passed horizon {self.cfg.horizon}s with work pending; "
                    "likely livelocked or undersized memory")
            self.end_time = max(self.end_time, t)
            if kind == _ARRIVAL:
                payload.phase = "queued"
                self.wait_new.append(payload)
            elif kind == _PREFILL_DONE:
                self._on_prefill_done(t, payload)
            elif kind == _TRANSFER_DONE:
                self._on_transfer_done(t, payload)
            else:
                self._on_step_end(t, payload)
            self._pump(t)
        unfinished = [r.req_id for r in self.requests if r.phase != "done"]
        if unfinished:
            raise RuntimeError(
                f"deadlock: {len(unfinished)} requests never finished "
                f"(first: {unfinished[:5]}); check pool sizes vs request lengths")
        return RunResult(self.cfg, self.bound, self.requests, self.steps,
                         self.prefill_records, self.transfers, self.saturation,
                         self.decisions, self.end_time)

    # -- event handlers ---------------------------------------------------

    def _on_prefill_done(self, t: float, p_idx: int) -> None:
        p = self.prefills[p_idx]
        req = p.current
        assert req is not None
        p.current = None
        p.busy_time += t - p.current_start
        self.prefill_records.append(
            PrefillRecord(p.idx, req.req_id, p.current_start, t, req.prefill_len))
        if math.isnan(req.first_token_time):
            req.first_token_time = t
        req.used_token = req.prefill_len + 1
        d = self.decoders[req.decoder_id]
        if req.home == "local":
            req.phase = "transferring"
            nbytes = float(req.prefill_len * self.kv_tok)
            key = (p.idx, d.idx)
            start = max(t, self.chan_free.get(key, 0.0))
            end = start + nbytes / self.cfg.gpu.interconnect_bandwidth
            self.chan_free[key] = end
            self._push(end, _TRANSFER_DONE, (req, p.idx, start, nbytes))
        else:
            req.phase = "ready"
            d.ready.append(req)

    def _on_transfer_done(self, t: float, payload) -> None:
        req, p_idx, start, nbytes = payload
        self.transfers.append(
            TransferRecord(p_idx, req.decoder_id, req.req_id, start, t, nbytes))
        self.prefills[p_idx].inflight_bytes -= req.prefill_len * self.kv_tok
        req.phase = "ready"
        self.decoders[req.decoder_id].ready.append(req)

    def _on_step_end(self, t: float, d_idx: int) -> None:
        d = self.decoders[d_idx]
        rec = d.pending
        assert rec is not None
        d.pending = None
        done = 0
        for r in list(d.run_local):
            r.used_token += 1
            if r.used_token >= r.max_token:
                self._complete(r, d, t)
                done += 1
        for r in list(d.run_off):
            r.used_token += 1
            if r.used_token >= r.max_token:
                self._complete(r, d, t)
                done += 1
        rec.completions = done
        self.steps.append(rec)
        d.busy = False

    def _complete(self, r: Request, d: _Decoder, t: float) -> None:
        r.finish_time = t
        r.phase = "done"
        freed = r.reserved_tokens * self.kv_tok
        if r.home == "local":
            d.pool_bytes_used -= freed
            d.run_local.remove(r)
            d.local.remove(r)
        else:
            self.prefills[r.executor_id].exec_bytes -= freed
            d.run_off.remove(r)
            d.offloaded.remove(r)
        r.reserved_tokens = 0

    # -- scheduling pump --------------------------------------------------

    def _pump(self, t: float) -> None:
        progressed = True
        while progressed:
            progressed = False
            for d in self.decoders:
                if not d.busy and (d.ready or d.run_local or d.run_off):
                    self._start_step(d, t)
                    progressed = True
            while True:
                q = self.wait_pre if self.wait_pre else self.wait_new
                if not q:
                    break
                if not self._try_dispatch(q[0], t):
                    break
                q.popleft()
                progressed = True
            for p in self.prefills:
                if p.current is None and p.queue:
                    if self._start_prefill(p, t):
                        progressed = True

    def _start_prefill(self, p: _Prefill, t: float) -> bool:
        job = p.queue[0]
        if job.home == "local":
            need = job.prefill_len * self.kv_tok
            # the budget caps concurrency; a lone oversized prompt still runs
            if p.inflight_bytes > 0 and \
                    p.inflight_bytes + need > self.cfg.prefill_inflight_budget_bytes:
                return False
            p.inflight_bytes += need
        p.queue.popleft()
        p.current = job
        p.current_start = t
        job.phase = "prefilling"
        dur = prefill_latency(self.cfg.gpu, self.cfg.model, job.prefill_len,
                              self.slowdown)
        self._push(t + dur, _PREFILL_DONE, p.idx)
        return True

    def _try_dispatch(self, req: Request, t: float) -> bool:
        cfg = self.cfg
        d = min(self.decoders, key=lambda x: (x.pool_bytes_used, x.idx))
        decision = need_offload(req, d.offloaded, d.local, self.bound,
                                c1_uses_max_tokens=cfg.c1_uses_max_tokens)
        need = (req.prefill_len + 1) * self.kv_tok
        if decision.offload:
            e = min(self.prefills, key=lambda x: (x.exec_bytes, x.idx))
            if e.exec_bytes + need > cfg.executor_budget_bytes:
                return self._block(req, d, t)
            e.exec_bytes += need
            req.home = "offloaded"
            req.executor_id = e.idx
            d.offloaded.append(req)
            target = e
        else:
            if d.pool_bytes_used + need > cfg.pool_bytes:
                return self._block(req, d, t)
            d.pool_bytes_used += need
            req.home = "local"
            d.local.append(req)
            target = min(self.prefills, key=lambda x: (x.pending_tokens(), x.idx))
        req.decoder_id = d.idx
        req.reserved_tokens = req.prefill_len + 1
        req.dispatch_time = t
        req.phase = "prefill_queued"
        req.blocked = False
        target.queue.append(req)
        self.decisions.setdefault(req.req_id, []).append((t, decision))
        return True

    def _block(self, req: Request, d: _Decoder, t: float) -> bool:
        if not req.blocked:
            req.blocked = True
            self.saturation.append(SaturationEvent(t, "blocked", d.idx, req.req_id))
        return False

    def _preempt(self, victim: Request, d: _Decoder, t: float) -> None:
        freed = victim.reserved_tokens * self.kv_tok
        if victim.home == "local":
            d.pool_bytes_used -= freed
            d.run_local.remove(victim)
            d.local.remove(victim)
        else:
            self.prefills[victim.executor_id].exec_bytes -= freed
            d.run_off.remove(victim)
            d.offloaded.remove(victim)
        # recompute-style eviction: KV is dropped, progress is kept and will
        # be re-prefetched through a longer prefill pass
        victim.prefill_len = victim.used_token
        victim.used_token = 0
        victim.reserved_tokens = 0
        victim.home = "unplaced"
        victim.executor_id = -1
        victim.decoder_id = -1
        victim.phase = "preempted"
        victim.preempt_count += 1
        self.wait_pre.append(victim)
        self.saturation.append(SaturationEvent(t, "preempt", d.idx, victim.req_id))

    def _start_step(self, d: _Decoder, t: float) -> None:
        cfg = self.cfg
        while d.ready:
            r = d.ready.popleft()
            r.phase = "running"
            (d.run_local if r.home == "local" else d.run_off).append(r)
        if not d.run_local and not d.run_off:
            return

        # every running request appends one token this step; evict the newest
        # residents until the growth fits
        while d.run_local:
            need = len(d.run_local) * self.kv_tok
            if d.pool_bytes_used + need <= cfg.pool_bytes:
                break
            victim = max(d.run_local, key=lambda r: (r.arrival_time, r.req_id))
            self._preempt(victim, d, t)
        for e_idx in sorted({r.executor_id for r in d.run_off}):
            e = self.prefills[e_idx]
            while True:
                group = [r for r in d.run_off if r.executor_id == e_idx]
                if not group:
                    break
                if e.exec_bytes + len(group) * self.kv_tok <= cfg.executor_budget_bytes:
                    break
                victim = max(group, key=lambda r: (r.arrival_time, r.req_id))
                self._preempt(victim, d, t)
        if not d.run_local and not d.run_off:
            return

        d.pool_bytes_used += len(d.run_local) * self.kv_tok
        for r in d.run_local:
            r.reserved_tokens += 1
        for r in d.run_off:
            r.reserved_tokens += 1
            self.prefills[r.executor_id].exec_bytes += self.kv_tok

        bd, bo = len(d.run_local), len(d.run_off)
        kv_local = float(sum(r.used_token for r in d.run_local)) * self.kv_tok
        local_attn = attention_step_latency(kv_local, cfg.gpu.hbm_bandwidth)

        exec_kv: dict[int, float] = {}
        exec_attn: dict[int, float] = {}
        link_bytes = 0.0
        worst_path = 0.0
        ic = cfg.gpu.interconnect_bandwidth
        for e_idx in sorted({r.executor_id for r in d.run_off}):
            group = [r for r in d.run_off if r.executor_id == e_idx]
            kv_e = float(sum(r.used_token for r in group)) * self.kv_tok
            n_e = len(group)
            # per token: QKV out (1.5x a KV token), attention output back (0.5x)
            qkv = 1.5 * self.kv_tok * n_e / ic
            recv = 0.5 * self.kv_tok * n_e / ic
            attn_e = attention_step_latency(kv_e, cfg.gpu.hbm_bandwidth,
                                            self.exec_bw_fraction)
            worst_path = max(worst_path, qkv + attn_e + recv)
            exec_kv[e_idx] = kv_e
            exec_attn[e_idx] = attn_e
            link_bytes += 2.0 * self.kv_tok * n_e
        stall = max(0.0, worst_path - local_attn)

        shape = select_graph(self.grid, bd, bo) if cfg.use_graphs else None
        if shape is not None:
            nonattn = nonattn_step_latency(cfg.gpu, cfg.model, shape[0] + shape[1])
            launch = launch_overhead(cfg.model.num_layers, True, cfg.gpu)
        else:
            nonattn = nonattn_step_latency(cfg.gpu, cfg.model, bd + bo)
            work = nonattn + local_attn
            launch = launch_overhead(cfg.model.num_layers, False, cfg.gpu,
                                     work / cfg.model.num_layers)
        dur = launch + nonattn + local_attn + stall
        d.pending = StepRecord(d.idx, t, t + dur, bd, bo, shape, launch, nonattn,
                               local_attn, stall, kv_local, exec_kv, exec_attn,
                               link_bytes)
        d.busy = True
        self._push(t + dur, _STEP_END, d.idx)


def simulate(cfg: SimConfig, requests: Sequence[Request]) -> RunResult:
    """Run the cluster simulation to completion and return the full record.

    The input requests are not mutated; only their identity fields (id,
    arrival, lengths) are used.
    """
    return _Sim(cfg, requests).run()
