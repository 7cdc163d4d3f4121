"""Compiled trace-execution engine (numba) for the reference predictor.

Semantics are defined by ``tage.Tage`` + ``history.update_history``; this
module reproduces them bit-for-bit on flattened numpy state so multi-million
record probe traces run at production speed. Equivalence against the pure
model is enforced by tests on both counters and per-record outcomes.

Supported configs (``Engine.supports``): contiguous footprint slices, PHRT
width <= 192, PHRB width <= 64, tag width <= 16. Everything the workbench
ships fits; exotic hand-written configs fall back to the pure simulator.

The per-record outcome mask uses 0 = correctly predicted conditional,
1 = mispredicted conditional, 2 = non-conditional record.

Event logging (for occupancy analysis) records one event per PHT tag hit at
predict time and one per allocation, as (pc, pht, set, tag) tuples filtered
by a PC range. A counting pass (log_mode=1) sizes the arrays, then a second
identical run from the same reset state fills them (log_mode=2).
"""

from __future__ import annotations

import numpy as np
from numba import njit

from . import rng
from .configs import CbpConfig
from .trace import KIND_COND, TraceBuffer

_U64 = np.uint64
_GAMMA = _U64(rng._GAMMA)
_MIX1 = _U64(rng._MIX1)
_MIX2 = _U64(rng._MIX2)

MASK_CORRECT, MASK_MISPREDICT, MASK_NONCOND = 0, 1, 2


def _contiguous(bits: tuple[int, ...]):
    if bits and bits == tuple(range(bits[0], bits[0] + len(bits))):
        return bits[0], len(bits)
    return None


class EngineUnsupported(ValueError):
    pass


@njit(cache=True, nogil=True, inline="always")
def _parity(x):
    x ^= x >> _U64(32)
    x ^= x >> _U64(16)
    x ^= x >> _U64(8)
    x ^= x >> _U64(4)
    x ^= x >> _U64(2)
    x ^= x >> _U64(1)
    return x & _U64(1)


@njit(cache=True, nogil=True, inline="always")
def _rng_u64(rng_state):
    s = rng_state[0] + _GAMMA
    rng_state[0] = s
    z = (s ^ (s >> _U64(30))) * _MIX1
    z = (z ^ (z >> _U64(27))) * _MIX2
    return z ^ (z >> _U64(31))


@njit(cache=True, nogil=True)
def _run(trace_pc, trace_target, trace_kind, trace_taken,
         split, shift, b_lo, b_mask, t_lo, t_mask,
         m0, m1, m2, bm,
         hstate,
         base, base_mask,
         assoc, ent_off, idx_off, idx_cnt, tag_off, tag_cnt,
         gmask,
         tags, ctrs, useful, valid,
         rng_state, counters,
         mask_out,
         log_mode, watch_lo, watch_hi, log_pc, log_pht, log_set, log_tag):
    n_phts = assoc.shape[0]
    sidx = np.empty(n_phts, np.uint64)
    stag = np.empty(n_phts, np.uint64)
    n_cond = 0
    n_misp = 0
    n_events = 0
    log_cap = log_pc.shape[0]
    want_mask = mask_out.shape[0] > 0
    one = _U64(1)
    sh = _U64(shift)
    rsh = _U64(64 - shift)

    for i in range(trace_pc.shape[0]):
        pc = trace_pc[i]
        kind = trace_kind[i]
        taken = trace_taken[i] != 0

        if kind == 0:  # conditional: predict, count, train
            watch = log_mode != 0 and watch_lo <= pc <= watch_hi
            h0 = hstate[0]
            h1 = hstate[1]
            h2 = hstate[2]
            bb = hstate[3]
            first_j = -1
            first_way = -1
            second_j = -1
            second_way = -1
            for j in range(n_phts):
                v = _U64(0)
                go = idx_off[j]
                for k in range(idx_cnt[j]):
                    g = go + k
                    acc = ((pc & gmask[g, 0]) ^ (h0 & gmask[g, 1]) ^
                           (h1 & gmask[g, 2]) ^ (h2 & gmask[g, 3]) ^
                           (bb & gmask[g, 4]))
                    v |= _parity(acc) << _U64(k)
                sidx[j] = v
                v = _U64(0)
                go = tag_off[j]
                for k in range(tag_cnt[j]):
                    g = go + k
                    acc = ((pc & gmask[g, 0]) ^ (h0 & gmask[g, 1]) ^
                           (h1 & gmask[g, 2]) ^ (h2 & gmask[g, 3]) ^
                           (bb & gmask[g, 4]))
                    v |= _parity(acc) << _U64(k)
                stag[j] = v
                slot = ent_off[j] + int(sidx[j]) * assoc[j]
                for w in range(assoc[j]):
                    e = slot + w
                    if valid[e] != 0 and tags[e] == np.uint16(stag[j]):
                        if first_j < 0:
                            first_j = j
                            first_way = w
                        elif second_j < 0:
                            second_j = j
                            second_way = w
                        if watch:
                            if log_mode == 2 and n_events < log_cap:
                                log_pc[n_events] = pc
                                log_pht[n_events] = np.uint8(j)
                                log_set[n_events] = np.uint32(sidx[j])
                                log_tag[n_events] = np.uint32(stag[j])
                            n_events += 1
                        break

            bidx = int((pc >> _U64(2)) & base_mask)
            base_taken = base[bidx] >= 2
            if first_j >= 0:
                e = ent_off[first_j] + int(sidx[first_j]) * assoc[first_j] + first_way
                pred_taken = ctrs[e] >= 0
                if second_j >= 0:
                    e2 = ent_off[second_j] + int(sidx[second_j]) * assoc[second_j] + second_way
                    alt_taken = ctrs[e2] >= 0
                else:
                    alt_taken = base_taken
            else:
                pred_taken = base_taken
                alt_taken = base_taken

            n_cond += 1
            misp = pred_taken != taken
            if misp:
                n_misp += 1
            if want_mask:
                mask_out[i] = 1 if misp else 0

            # -- train --
            if taken:
                if base[bidx] < 3:
                    base[bidx] += 1
            else:
                if base[bidx] > 0:
                    base[bidx] -= 1

            if first_j >= 0:
                e = ent_off[first_j] + int(sidx[first_j]) * assoc[first_j] + first_way
                if taken:
                    if ctrs[e] < 3:
                        ctrs[e] += 1
                else:
                    if ctrs[e] > -4:
                        ctrs[e] -= 1
                if (pred_taken == taken) and (alt_taken != taken):
                    useful[e] = 1

            if misp:
                upper = first_j if first_j >= 0 else n_phts
                allocated = False
                for j in range(upper - 1, -1, -1):
                    slot = ent_off[j] + int(sidx[j]) * assoc[j]
                    n_free = 0
                    for w in range(assoc[j]):
                        if useful[slot + w] == 0:
                            n_free += 1
                    if n_free > 0:
                        pick = int(_rng_u64(rng_state) % _U64(n_free))
                        chosen = -1
                        seen = 0
                        for w in range(assoc[j]):
                            if useful[slot + w] == 0:
                                if seen == pick:
                                    chosen = w
                                    break
                                seen += 1
                        e = slot + chosen
                        tags[e] = np.uint16(stag[j])
                        ctrs[e] = 0 if taken else -1
                        useful[e] = 0
                        valid[e] = 1
                        if watch:
                            if log_mode == 2 and n_events < log_cap:
                                log_pc[n_events] = pc
                                log_pht[n_events] = np.uint8(j)
                                log_set[n_events] = np.uint32(sidx[j])
                                log_tag[n_events] = np.uint32(stag[j])
                            n_events += 1
                        allocated = True
                        break
                if not allocated:
                    for j in range(upper - 1, -1, -1):
                        slot = ent_off[j] + int(sidx[j]) * assoc[j]
                        for w in range(assoc[j]):
                            useful[slot + w] = 0

            counters[0] += 1
            if counters[0] % 524288 == 0:
                phase = int(counters[1])
                for j in range(n_phts):
                    start = ent_off[j]
                    if j + 1 < n_phts:
                        stop = ent_off[j + 1]
                    else:
                        stop = useful.shape[0]
                    for e in range(start + phase, stop, 2):
                        useful[e] = 0
                counters[1] = 1 - counters[1]
        else:
            if want_mask:
                mask_out[i] = 2

        if taken:
            fp_t = (trace_target[i] >> t_lo) & t_mask
            fp_b = (pc >> b_lo) & b_mask
            h0 = hstate[0]
            h1 = hstate[1]
            h2 = hstate[2]
            if split != 0:
                hstate[2] = ((h2 << sh) | (h1 >> rsh)) & m2
                hstate[1] = ((h1 << sh) | (h0 >> rsh)) & m1
                hstate[0] = ((h0 << sh) & m0) ^ fp_t
                hstate[3] = ((hstate[3] << sh) & bm) ^ fp_b
            else:
                hstate[2] = ((h2 << sh) | (h1 >> rsh)) & m2
                hstate[1] = ((h1 << sh) | (h0 >> rsh)) & m1
                hstate[0] = ((h0 << sh) & m0) ^ fp_t ^ fp_b

    return n_cond, n_misp, n_events


def _word_masks(width: int):
    masks = []
    for w in range(3):
        lo = 64 * w
        hi = min(width, 64 * (w + 1))
        masks.append(_U64(0) if hi <= lo else _U64(((1 << (hi - lo)) - 1)))
    return masks


class Engine:
    """Stateful compiled predictor for one config + seed.

    ``run`` consumes a TraceBuffer, mutating predictor and history state, so
    consecutive calls model one continuous execution (warmup then measure).
    """

    def __init__(self, config: CbpConfig, seed: int):
        problem = self.why_unsupported(config)
        if problem:
            raise EngineUnsupported(f"{config.name}: {problem}")
        self.config = config
        self.seed = seed

        sch = config.scheme
        self._b_lo, b_width = _contiguous(sch.branch_bits)
        self._t_lo, t_width = _contiguous(sch.target_bits)
        self._b_mask = _U64((1 << b_width) - 1)
        self._t_mask = _U64((1 << t_width) - 1)
        self._split = 1 if sch.split else 0
        self._shift = sch.shift_amount
        self._m0, self._m1, self._m2 = _word_masks(config.phrt_width)
        self._bm = _U64((1 << config.phrb_width) - 1) if config.phrb_width else _U64(0)

        n = len(config.phts)
        self._assoc = np.array([p.assoc for p in config.phts], np.int64)
        ents = [p.n_entries for p in config.phts]
        self._ent_off = np.array([sum(ents[:j]) for j in range(n)], np.int64)
        self._n_entries = sum(ents)

        gmasks = []
        idx_off, idx_cnt, tag_off, tag_cnt = [], [], [], []
        for p in config.phts:
            idx_off.append(len(gmasks))
            idx_cnt.append(len(p.hash.index_groups))
            gmasks.extend(self._group_mask(g) for g in p.hash.index_groups)
            tag_off.append(len(gmasks))
            tag_cnt.append(len(p.hash.tag_groups))
            gmasks.extend(self._group_mask(g) for g in p.hash.tag_groups)
        self._gmask = (np.array(gmasks, np.uint64) if gmasks
                       else np.zeros((0, 5), np.uint64))
        self._idx_off = np.array(idx_off, np.int64)
        self._idx_cnt = np.array(idx_cnt, np.int64)
        self._tag_off = np.array(tag_off, np.int64)
        self._tag_cnt = np.array(tag_cnt, np.int64)
        self._base_mask = _U64(config.base_entries - 1)

        self.reset()

    @staticmethod
    def why_unsupported(config: CbpConfig) -> str | None:
        if _contiguous(config.scheme.branch_bits) is None:
            return "branch footprint bits are not one contiguous slice"
        if _contiguous(config.scheme.target_bits) is None:
            return "target footprint bits are not one contiguous slice"
        if config.scheme.shift_amount >= 64:
            return "shift too large"
        if config.phrt_width > 192:
            return "PHRT wider than 192 bits"
        if config.phrb_width > 64:
            return "PHRB wider than 64 bits"
        for i, p in enumerate(config.phts):
            if p.tag_bits > 16:
                return f"phts[{i}] tag wider than 16 bits"
            if p.index_bits > 32:
                return f"phts[{i}] index wider than 32 bits"
        return None

    @classmethod
    def supports(cls, config: CbpConfig) -> bool:
        return cls.why_unsupported(config) is None

    def _group_mask(self, group):
        pc = h0 = h1 = h2 = b = 0
        for src in group:
            if src.register == "pc":
                pc |= 1 << src.position
            elif src.register == "phrt":
                if src.position < 64:
                    h0 |= 1 << src.position
                elif src.position < 128:
                    h1 |= 1 << (src.position - 64)
                else:
                    h2 |= 1 << (src.position - 128)
            else:
                b |= 1 << src.position
        return (pc, h0, h1, h2, b)

    def reset(self) -> None:
        self.base = np.full(self.config.base_entries, 1, np.int8)
        self.tags = np.zeros(self._n_entries, np.uint16)
        self.ctrs = np.zeros(self._n_entries, np.int8)
        self.useful = np.zeros(self._n_entries, np.uint8)
        self.valid = np.zeros(self._n_entries, np.uint8)
        self.hstate = np.zeros(4, np.uint64)
        self.rng_state = np.array([rng.derive(self.seed, "tage-alloc")], np.uint64)
        self.counters = np.zeros(2, np.int64)  # train_events, reset_phase

    def history_state(self):
        """Current (phrt, phrb) as python ints (for cross-checks)."""
        h = int(self.hstate[0]) | (int(self.hstate[1]) << 64) | (int(self.hstate[2]) << 128)
        return h, int(self.hstate[3])

    def run(self, buf: TraceBuffer, *, want_mask: bool = False, log_mode: int = 0,
            watch: tuple[int, int] | None = None, log_cap: int = 0):
        """Execute a trace. Returns (n_cond, n_mispredict, extras dict)."""
        mask_out = np.empty(len(buf), np.uint8) if want_mask else np.empty(0, np.uint8)
        if log_mode == 2:
            log_pc = np.zeros(log_cap, np.uint64)
            log_pht = np.zeros(log_cap, np.uint8)
            log_set = np.zeros(log_cap, np.uint32)
            log_tag = np.zeros(log_cap, np.uint32)
        else:
            log_pc = np.zeros(0, np.uint64)
            log_pht = np.zeros(0, np.uint8)
            log_set = np.zeros(0, np.uint32)
            log_tag = np.zeros(0, np.uint32)
        if watch is None:
            watch_lo, watch_hi = _U64(0), _U64(0xFFFFFFFFFFFFFFFF)
        else:
            watch_lo, watch_hi = _U64(watch[0]), _U64(watch[1])

        n_cond, n_misp, n_events = _run(
            buf.pc, buf.target, buf.kind, buf.taken,
            self._split, self._shift, _U64(self._b_lo), self._b_mask,
            _U64(self._t_lo), self._t_mask,
            self._m0, self._m1, self._m2, self._bm,
            self.hstate,
            self.base, self._base_mask,
            self._assoc, self._ent_off, self._idx_off, self._idx_cnt,
            self._tag_off, self._tag_cnt,
            self._gmask,
            self.tags, self.ctrs, self.useful, self.valid,
            self.rng_state, self.counters,
            mask_out,
            log_mode, watch_lo, watch_hi, log_pc, log_pht, log_set, log_tag)

        extras = {"n_events": n_events}
        if want_mask:
            extras["mask"] = mask_out
        if log_mode == 2:
            if n_events > log_cap:
                raise RuntimeError(f"event log overflow: {n_events} > {log_cap}")
            extras["events"] = (log_pc[:n_events], log_pht[:n_events],
                                log_set[:n_events], log_tag[:n_events])
        return n_cond, n_misp, extras
