"""Synthetic workload generators.

``gen_binary_search`` emits the retired-branch stream of a compiled binary
search driven by Zipf-distributed keys, with optional single-NOP insertion
variants that shift addresses exactly as a linker would.

``gen_history_workload`` emits a long-history-correlated workload: every
conditional's direction is a random bit that entered the history stream tens
of taken-branches earlier via an unconditional carrier branch's target, and
nothing nearer carries information. Direction-dependent path divergence is
footprint-balanced, so the history stream every predictor sees is identical
regardless of prediction outcomes; what separates configs is whether their
tables can hold the (static x carrier-context) working set.
"""

from __future__ import annotations

from bisect import bisect_left

from .rng import Stream
from .trace import (KIND_CALL, KIND_COND, KIND_RET, KIND_UNCOND, TraceBuffer)

# --------------------------------------------------------------------------
# Compiled binary-search layout.
#
# Byte addresses of the loop (one instruction per 4 bytes):
#   0x00 subs            0x04 b.lt  -> 0x40 (empty table)
#   0x08 mov             0x0c b     -> 0x1c
#   0x10 add  (.L2)      0x14 cmp   0x18 b.gt -> 0x40 (exhausted: not found)
#   0x1c add  (.L3)      0x20 lsr   0x24 ldr   0x28 cmp
#   0x2c b.lt -> 0x10    (table[mid] < key)
#   0x30 b.le -> 0x44    (table[mid] == key: found)
#   0x34 sub             0x38 cmp   0x3c b.le -> 0x1c (lo <= hi: continue)
#   0x40 mov  (.L6)      0x44 mov (.L7)        0x48 ret
#
# NOP-insertion variants shift every address >= the insertion point by 4.
# --------------------------------------------------------------------------

NOP_VARIANTS = {
    "none": None,
    "L2_L3": 0x14,   # inside the .L2 block, after its first instruction
    "L3_blt": 0x20,  # inside the .L3 block, after its first instruction
}

_DRIVER_CALL = 0x200
_DRIVER_BACKEDGE = 0x20C


def _shifter(variant):
    if isinstance(variant, str):
        try:
            point = NOP_VARIANTS[variant]
        except KeyError:
            raise ValueError(f"unknown nop variant {variant!r}; expected one of "
                             f"{sorted(NOP_VARIANTS)} or an insertion address") from None
    else:
        point = variant
    if point is None:
        return lambda a: a, None
    if point % 4:
        raise ValueError(f"insertion point {point:#x} not 4-byte aligned")
    return (lambda a: a + 4 if a >= point else a), point


def critical_pcs(variant="none") -> tuple[int, int]:
    """(inner b.lt PC, loop back-edge b.le PC) for a layout variant."""
    addr, _ = _shifter(variant)
    return addr(0x2C), addr(0x3C)


def layout_branches(variant="none"):
    """Static (pc, target) of the two critical loop branches, variant-shifted."""
    addr, _ = _shifter(variant)
    return {"b.lt": (addr(0x2C), addr(0x10)), "b.le": (addr(0x3C), addr(0x1C))}


def zipf_cdf(n: int, s: float) -> list[float]:
    weights = [1.0 / (r ** s) for r in range(1, n + 1)]
    total = sum(weights)
    acc, cdf = 0.0, []
    for w in weights:
        acc += w
        cdf.append(acc / total)
    cdf[-1] = 1.0
    return cdf


def gen_binary_search(n_queries: int, table_size: int, zipf_s: float, seed: int,
                      nop_variant="none", miss_fraction: float = 0.25) -> TraceBuffer:
    """Branch trace of ``n_queries`` binary searches over a sorted table.

    Keys follow a Zipf(s) rank distribution; ranks map to table positions
    through a seeded permutation, so hot keys live at arbitrary depths of the
    search tree. A ``miss_fraction`` of lookups probe between-element keys
    that are absent, so the loop's exit branches stay data-dependent and both
    searched-path terminations (found / exhausted) occur.
    """
    if table_size < 2:
        raise ValueError("table_size must be >= 2")
    if zipf_s <= 0:
        raise ValueError("zipf_s must be positive")
    if not 0.0 <= miss_fraction < 1.0:
        raise ValueError("miss_fraction must be in [0, 1)")
    addr, point = _shifter(nop_variant)
    # Paths crossing the inserted NOP retire one extra instruction.
    l2_pad = 1 if point is not None and 0x10 < point <= 0x18 else 0
    l3_pad = 1 if point is not None and 0x1C < point <= 0x2C else 0

    keys = Stream(seed).spawn("bs-keys")
    misses = Stream(seed).spawn("bs-miss")
    perm = list(range(table_size))
    Stream(seed).spawn("bs-perm").shuffle(perm)
    cdf = zipf_cdf(table_size, zipf_s)

    pc, tg, kd, tk, gp = [], [], [], [], []

    def emit(p, t, kind, taken, gap):
        pc.append(addr(p))
        tg.append(addr(t))
        kd.append(kind)
        tk.append(1 if taken else 0)
        gp.append(gap)

    for q in range(n_queries):
        u = (keys.u64() >> 11) * (2.0 ** -53)
        rank = bisect_left(cdf, u)
        key = float(perm[min(rank, table_size - 1)])
        if (misses.u64() >> 11) * (2.0 ** -53) < miss_fraction:
            key += 0.5                              # probes between elements

        emit(_DRIVER_CALL, 0x00, KIND_CALL, True, 3)
        emit(0x04, 0x40, KIND_COND, False, 1)       # empty-table check: n >= 1
        emit(0x0C, 0x1C, KIND_UNCOND, True, 1)
        lo, hi = 0, table_size - 1
        exit_gap = None
        while True:
            mid = (lo + hi) >> 1                     # .L3 block: add, lsr, ldr, cmp
            goes_lt = mid < key                      # table[mid] = mid
            emit(0x2C, 0x10, KIND_COND, goes_lt, 4 + l3_pad)
            if goes_lt:
                lo = mid + 1                         # .L2 block: add, cmp
                exhausted = lo > hi
                emit(0x18, 0x40, KIND_COND, exhausted, 2 + l2_pad)
                if exhausted:
                    exit_gap = 2                     # .L6: mov, mov
                    break
                continue
            found = mid == key
            emit(0x30, 0x44, KIND_COND, found, 0)
            if found:
                exit_gap = 1                         # .L7: mov
                break
            hi = mid - 1                             # sub, cmp
            more = lo <= hi
            emit(0x3C, 0x1C, KIND_COND, more, 2)
            if not more:
                exit_gap = 2                         # fell through to .L6
                break
        emit(0x48, _DRIVER_CALL + 4, KIND_RET, True, exit_gap)
        emit(_DRIVER_BACKEDGE, _DRIVER_CALL, KIND_COND, q != n_queries - 1, 2)

    return TraceBuffer(pc, tg, kd, tk, gp)


# --------------------------------------------------------------------------
# Long-history-correlated synthetic workload
# --------------------------------------------------------------------------

_CARRIER_BASE = 0x100000
_STATIC_BASE = 0x200000
_CHAFF_BASE = 0x480000
_FILLER_PC = 0x600000
_ELSE_OFFSET = 1 << 20     # beyond every scheme's branch-address footprint
_FIXED_TARGET = 0x700000   # carrier target when no bit is injected
_FILLER_TARGET = 0x700800

# Slot residues (mod the injection period) that carry correlated
# conditionals. The residue IS the correlation distance in slots; at exactly
# two taken branches per slot the injected bit sits 40..50 taken branches
# deep at lookup — beyond every built-in's third-longest table, beyond a
# Skylake-class predictor's *second*-longest, and within every 24K clone's
# second-longest. Every equal-capacity clone therefore serves these branches
# from the same-ordinal table, while the Skylake-class built-in must fall
# back to its longest table alone.
_STATIC_RESIDUES = (20, 21, 22, 23, 24, 25)
# Residues carrying unpredictable "chaff" conditionals: fresh random
# directions never exposed to history, one fixed slot alignment per site so
# each site's (set, tag) working set stays tiny and resident. They set a
# config-independent misprediction floor.
_CHAFF_RESIDUES = (8, 12, 16)


def gen_history_workload(seed: int, n_slots: int = 1_600_000, n_static: int = 8192,
                         injection_period: int = 32) -> TraceBuffer:
    """Workload whose conditionals correlate only with deep history.

    Every slot retires exactly two taken branches: a carrier unconditional
    (every ``injection_period``-th slot XORs a fresh random bit into its
    target footprint) and then exactly one of: a correlated conditional (its
    direction equals the bit injected 20..25 slots = 40..50 taken branches
    earlier), a chaff conditional (fresh randomness, never learnable), or a
    fixed filler unconditional. A not-taken conditional is immediately
    followed by a twin unconditional whose address matches it in every
    scheme's branch-address footprint bits, so the history stream every
    predictor observes is independent of branch directions.

    ``n_static`` must be a multiple of ``injection_period`` so each static
    conditional keeps one fixed correlation depth and slot alignment.
    """
    if n_static % injection_period:
        raise ValueError("n_static must be a multiple of injection_period")
    if n_static > 8192:
        raise ValueError("n_static must be <= 8192 to fit the carrier target field")
    if max(_STATIC_RESIDUES + _CHAFF_RESIDUES) >= injection_period:
        raise ValueError("injection_period too small for the residue layout")
    bits = Stream(seed).spawn("hw-bits")
    chaff_bits = Stream(seed).spawn("hw-chaff")
    injected: dict[int, int] = {}
    pc, tg, kd, tk, gp = [], [], [], [], []

    def emit_balanced(cond_pc, next_pc, d):
        # Taken path: the conditional itself. Not-taken path: a twin
        # unconditional whose address matches cond_pc in every scheme's
        # branch-footprint bits. Either way one taken branch with one
        # footprint enters history.
        pc.append(cond_pc)
        tg.append(next_pc)
        kd.append(KIND_COND)
        tk.append(d)
        gp.append(4)
        if not d:
            pc.append(cond_pc + _ELSE_OFFSET)
            tg.append(next_pc)
            kd.append(KIND_UNCOND)
            tk.append(1)
            gp.append(1)

    for j in range(n_slots):
        s = j % n_static
        r = j % injection_period
        next_pc = _CARRIER_BASE + ((j + 1) % n_static) * 4 % 4096

        # The carrier's target low bits carry the slot identity, giving every
        # static conditional a distinct local-history neighbourhood (real code
        # has distinct surrounding branches per site; without this, all
        # same-residue statics would collapse into one history-indexed set of
        # each short table and the allocation ladder could never establish).
        # The xor-shift mixes high slot bits into the low target bits, which
        # are the only ones short-history tables can see; it is invertible, so
        # distinct slots keep distinct neighbourhoods.
        carrier_target = _FIXED_TARGET | ((s ^ (s >> 7)) << 3)
        if r == 0:
            b = bits.bit()
            injected[j] = b
            carrier_target |= b << 2
        pc.append(_CARRIER_BASE + s * 4 % 4096)
        tg.append(carrier_target)
        kd.append(KIND_UNCOND)
        tk.append(1)
        gp.append(3)

        if r in _STATIC_RESIDUES:
            emit_balanced(_STATIC_BASE + s * 4, next_pc, injected.get(j - r, 0))
        elif r in _CHAFF_RESIDUES:
            emit_balanced(_CHAFF_BASE + r * 64, next_pc, chaff_bits.bit())
        else:
            pc.append(_FILLER_PC)
            tg.append(_FILLER_TARGET)
            kd.append(KIND_UNCOND)
            tk.append(1)
            gp.append(4)

        if r == 0:
            injected.pop(j - 2 * injection_period, None)

    return TraceBuffer(pc, tg, kd, tk, gp)


def gen_history_suite(seeds) -> list[tuple[str, TraceBuffer]]:
    return [(f"history-w{seed}", gen_history_workload(seed)) for seed in seeds]
