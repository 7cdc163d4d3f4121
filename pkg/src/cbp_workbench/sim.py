"""Trace-driven simulation loop and statistics.

The model is a retire-order standalone simulator: every conditional branch is
predicted, compared, and trained immediately; every taken branch (of any
kind) updates the path history. There is no speculation or delayed update.

Measurement: the first ``warmup_fraction`` of the records train the predictor
but are not counted. ``total_instructions``, ``cond_branches``,
``mispredictions``, and ``per_branch`` all refer to the measured region, so
``mpki = 1000 * mispredictions / total_instructions`` holds by construction.
The ``scatter`` map (distinct (pht, set, tag) entries each watched branch hit
or allocated) covers the whole run, since table occupancy accumulates from
the first record.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .configs import CbpConfig, initial_state_for, make_predictor
from .engine import Engine, EngineUnsupported
from .history import update_history
from .trace import KIND_COND, TraceBuffer


@dataclass(frozen=True)
class SimReport:
    config_name: str
    trace_name: str
    mispredictions: int
    cond_branches: int
    total_instructions: int
    mpki: float
    mispred_rate: float
    per_branch: dict = field(default_factory=dict)  # pc -> (executions, mispredictions)
    scatter: dict = field(default_factory=dict)     # pc -> frozenset of (pht, set, tag)

    def to_dict(self) -> dict:
        return {
            "config": self.config_name,
            "trace": self.trace_name,
            "mispredictions": self.mispredictions,
            "cond_branches": self.cond_branches,
            "total_instructions": self.total_instructions,
            "mpki": self.mpki,
            "mispred_rate": self.mispred_rate,
            "per_branch": {f"{pc:#x}": [n, m] for pc, (n, m) in sorted(self.per_branch.items())},
            "scatter": {f"{pc:#x}": sorted(map(list, entries))
                        for pc, entries in sorted(self.scatter.items())},
        }


def _aggregate(buf: TraceBuffer, mask: np.ndarray, warmup_fraction: float,
               config_name: str, trace_name: str, scatter: dict) -> SimReport:
    w = int(len(buf) * warmup_fraction)
    region = slice(w, len(buf))
    kinds = buf.kind[region]
    outcomes = mask[region]
    is_cond = kinds == KIND_COND
    cond_branches = int(is_cond.sum())
    mispredictions = int((outcomes == 1).sum())
    total_instructions = int(buf.gap[region].sum(dtype=np.int64)) + (len(buf) - w)

    pcs = buf.pc[region][is_cond]
    miss = (outcomes[is_cond] == 1).astype(np.int64)
    per_branch = {}
    if len(pcs):
        uniq, inv = np.unique(pcs, return_inverse=True)
        execs = np.bincount(inv, minlength=len(uniq))
        misses = np.bincount(inv, weights=miss, minlength=len(uniq)).astype(np.int64)
        per_branch = {int(pc): (int(n), int(m)) for pc, n, m in zip(uniq, execs, misses)}

    mpki = 1000.0 * mispredictions / total_instructions if total_instructions else 0.0
    rate = mispredictions / cond_branches if cond_branches else 0.0
    return SimReport(config_name=config_name, trace_name=trace_name,
                     mispredictions=mispredictions, cond_branches=cond_branches,
                     total_instructions=total_instructions, mpki=mpki,
                     mispred_rate=rate, per_branch=per_branch, scatter=scatter)


def _scatter_from_events(events) -> dict:
    ev_pc, ev_pht, ev_set, ev_tag = events
    out: dict[int, set] = {}
    if len(ev_pc) == 0:
        return out
    packed = np.stack([ev_pc, ev_pht.astype(np.uint64), ev_set.astype(np.uint64),
                       ev_tag.astype(np.uint64)], axis=1)
    for pc, pht, sidx, tag in np.unique(packed, axis=0):
        out.setdefault(int(pc), set()).add((int(pht), int(sidx), int(tag)))
    return {pc: frozenset(v) for pc, v in out.items()}


def _simulate_pure(config: CbpConfig, buf: TraceBuffer, seed: int,
                   collect_scatter: bool, watch) -> tuple[np.ndarray, dict]:
    predictor = make_predictor(config, seed)
    state = initial_state_for(config)
    mask = np.empty(len(buf), np.uint8)
    scatter: dict[int, set] = {}
    lo, hi = watch if watch is not None else (0, (1 << 64) - 1)
    for i, rec in enumerate(buf.records()):
        if rec.kind == KIND_COND:
            pred = predictor.predict(rec.pc, state)
            mask[i] = 1 if pred.taken != rec.taken else 0
            allocs = predictor.train(rec.pc, state, rec.taken, pred)
            if collect_scatter and lo <= rec.pc <= hi:
                entries = scatter.setdefault(rec.pc, set())
                for j, sidx, tag, _way in pred.hits:
                    entries.add((j, sidx, tag))
                for j, sidx, tag, _way in allocs:
                    entries.add((j, sidx, tag))
        else:
            mask[i] = 2
        state = update_history(state, config.scheme, rec)
    return mask, {pc: frozenset(v) for pc, v in scatter.items()}


def simulate(config: CbpConfig, buf: TraceBuffer, warmup_fraction: float = 0.1,
             seed: int = 0, *, trace_name: str = "trace", scatter: bool = False,
             watch: tuple[int, int] | None = None, force_pure: bool = False) -> SimReport:
    """Run one config over one trace and report statistics.

    ``scatter=True`` also collects per-branch distinct-entry occupancy
    (optionally restricted to the inclusive PC range ``watch``), at the cost
    of a second pass.
    """
    if not 0 <= warmup_fraction < 1:
        raise ValueError(f"warmup_fraction must be in [0, 1), got {warmup_fraction}")
    buf.validate()
    if force_pure or not Engine.supports(config):
        mask, scat = _simulate_pure(config, buf, seed, scatter, watch)
        return _aggregate(buf, mask, warmup_fraction, config.name, trace_name, scat)

    eng = Engine(config, seed)
    scat: dict = {}
    if scatter:
        _, _, extras = eng.run(buf, log_mode=1, watch=watch)
        eng.reset()
        _, _, extras = eng.run(buf, want_mask=True, log_mode=2, watch=watch,
                               log_cap=extras["n_events"])
        scat = _scatter_from_events(extras["events"])
        mask = extras["mask"]
    else:
        _, _, extras = eng.run(buf, want_mask=True)
        mask = extras["mask"]
    return _aggregate(buf, mask, warmup_fraction, config.name, trace_name, scat)


@dataclass(frozen=True)
class ComparisonRow:
    config_name: str
    trace_name: str
    mpki: float
    mispred_rate: float
    mispredictions: int


@dataclass(frozen=True)
class Comparison:
    rows: tuple[ComparisonRow, ...]
    geomean_mpki: dict  # config name -> geometric mean MPKI across traces

    def to_dict(self) -> dict:
        return {
            "rows": [{"config": r.config_name, "trace": r.trace_name, "mpki": r.mpki,
                      "mispred_rate": r.mispred_rate, "mispredictions": r.mispredictions}
                     for r in self.rows],
            "geomean_mpki": dict(sorted(self.geomean_mpki.items())),
        }


def compare(configs, traces, warmup_fraction: float = 0.1, seed: int = 0) -> Comparison:
    """Simulate every config over every (name, TraceBuffer) pair."""
    rows = []
    by_config: dict[str, list] = {}
    for config in configs:
        for name, buf in traces:
            rep = simulate(config, buf, warmup_fraction, seed, trace_name=name)
            rows.append(ComparisonRow(config.name, name, rep.mpki,
                                      rep.mispred_rate, rep.mispredictions))
            by_config.setdefault(config.name, []).append(rep.mpki)
    geo = {}
    for cname, values in by_config.items():
        if all(v > 0 for v in values):
            geo[cname] = math.exp(sum(math.log(v) for v in values) / len(values))
        else:
            geo[cname] = 0.0
    return Comparison(rows=tuple(rows), geomean_mpki=geo)
