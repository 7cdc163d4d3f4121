"""Seeded toy predictor families for end-to-end recovery validation.

``make_toy_config(seed)`` builds a small randomized predictor whose shape is
fully inside what the probe pipeline can recover, so a recovery run against
its black box must reproduce it *exactly*:

* shift-1 split footprints with contiguous slices from bit 2, and a target
  slice no wider than the longest history (every footprint bit observable);
* per table, disjoint single-membership XOR groups that densely cover the
  whole history window (no position unused, none reused);
* PC pass-through tag singletons on bits [5:2]; hole-free PC inputs on
  [6..pc_hi]; at most two PC bits routed to the index;
* the top history bit and the one right under it pinned as two singleton
  index groups, so the two-forcer probes always find their anchors in the
  table-exclusive window;
* history positions 0 and 1 never index-bearing (multi-entry set-pressure
  probes leave per-block residue there).

Separability is engineered, then *checked*: every noise window a recovery
run will use must touch enough distinct hash groups of every longer table
(with single-membership groups the GF(2) rank of a window's columns is
exactly the distinct-group count), and total table capacity is capped so a
noised table cannot hold enough stale contexts to answer through the noise.
Builds that miss a check are regenerated from a derived sub-seed; the same
seed always yields the same config.
"""

from __future__ import annotations

from ..configs import CbpConfig
from ..hashspec import HashSpec, XorGroup
from ..history import FootprintScheme
from ..rng import Stream, derive
from ..tage import PhtSpec
from .model import canonical_groups
from .probes import TOY_BUDGET

__all__ = ["SCAN_GAP", "make_toy_config", "validate_toy", "toy_recovery_kwargs"]

#: Scan step-down used when isolating toy tables (toy length gaps are >= 8,
#: so the scan always starts in the dead zone between two tables).
SCAN_GAP = 6

_N_TAG = 8            # history tag groups per table (plus 4 PC pass-throughs)
_B_RESIDUE_OFFSET = 4  # keeps T-rows and B-rows of a window on different groups
_SCAN_RANK_MIN = 8     # distinct groups in every [L-6, L) scan window
_PROBE_RANK_MIN = 10   # distinct groups in every [L_next, L) probing window


def toy_recovery_kwargs() -> dict:
    """Keyword arguments for ``recover_cbp`` scaled to toy families."""
    return {
        "max_depth": 40,
        "scan_gap": SCAN_GAP,
        "hash_tables": None,
        "budget": TOY_BUDGET,
        "pc_bit_range": range(2, 14),
    }


def make_toy_config(seed: int) -> CbpConfig:
    for attempt in range(64):
        rng = Stream(derive(seed, "toy", str(attempt)))
        config = _try_build(rng, f"toy-{seed}")
        if config is not None:
            validate_toy(config)
            return config
    raise ValueError(f"no valid toy configuration found for seed {seed}")


def _capacity_cap(n_pht: int) -> int:
    """Max log2(entries) per table so noised tables cannot answer probes.

    A noised table can only interfere through stale entries; with window
    rank >= 10 its context space is >= 2^11, so capping entries at
    2^(cap) bounds the stale-hit rate by 2^(cap-11) per noised table.
    """
    return {1: 9, 2: 8, 3: 7}[n_pht]


def _try_build(rng: Stream, name: str) -> CbpConfig | None:
    n_pht = rng.choice((1, 2, 3))
    if n_pht == 1:
        l1 = 12 + rng.below(21)          # 12..32
    elif n_pht == 2:
        l1 = 16 + rng.below(17)          # 16..32
    else:
        l1 = 24 + rng.below(9)           # 24..32
    lengths = [l1]
    for t in range(1, n_pht):
        remaining_after = n_pht - 1 - t
        prev = lengths[-1]
        slack = prev - 15 - 8 * remaining_after
        if slack < 0:
            return None
        lengths.append(prev - (8 + rng.below(1 + min(3, slack))))

    wt = 6 + rng.below(min(12, l1) - 5)   # 6..min(12, l1)
    wb = 3 + rng.below(2)                 # 3..4
    pc_hi = 7 + rng.below(min(12, wt + 2) - 6)  # 7..min(12, wt+2)
    assoc = rng.choice((2, 4))
    idx_max = min(7, _capacity_cap(n_pht) - assoc.bit_length() + 1)
    if idx_max < 5:
        return None

    scheme = FootprintScheme(name, tuple(range(2, 2 + wb)),
                             tuple(range(2, 2 + wt)),
                             split=True, shift_amount=1)
    phts = []
    for length in lengths:
        pht = _build_table(rng, length, pc_hi, assoc, idx_max)
        if pht is None:
            return None
        phts.append(pht)
    config = CbpConfig(
        name=name,
        scheme=scheme,
        phrt_width=l1,
        phrb_width=l1,
        pc_input_range=(2, pc_hi),
        base_entries=1024,
        phts=tuple(phts),
    )
    if not _windows_separable(config):
        return None
    return config


def _build_table(rng: Stream, length: int, pc_hi: int, assoc: int,
                 idx_max: int) -> PhtSpec | None:
    idx_bits = 5 + rng.below(idx_max - 4)
    n_idx_pc = rng.below(3)

    # Extra index members stay below the table's top-6 scan window, which
    # keeps that window on known groups (two anchors + round-robin tags).
    pool = ([("phrt", p) for p in range(2, length - 6)]
            + [("phrb", p) for p in range(length - 6)])
    pc_pool = list(range(6, pc_hi + 1))
    while idx_bits - 2 > len(pool) + n_idx_pc:
        if n_idx_pc < min(2, len(pc_pool)):
            n_idx_pc += 1
        elif idx_bits > 5:
            idx_bits -= 1
        else:
            return None
    rng.shuffle(pc_pool)
    idx_pc, tag_pc = pc_pool[:n_idx_pc], sorted(pc_pool[n_idx_pc:])
    rng.shuffle(pool)

    extras: list[list[tuple[str, int]]] = [[] for _ in range(idx_bits - 2)]
    for c in idx_pc:
        extras[rng.below(len(extras))].append(("pc", c))
    it = iter(pool)
    for group in extras:
        want = 1 + rng.below(3)
        while len(group) < want:
            member = next(it, None)
            if member is None:
                break
            group.append(member)
    if any(not g for g in extras):
        return None

    index_members = [[("phrt", length - 1)], [("phrt", length - 2)]] + extras
    used = {m for g in index_members for m in g}

    tag_members: list[list[tuple[str, int]]] = [[] for _ in range(_N_TAG)]
    for p in range(length):
        if ("phrt", p) not in used:
            tag_members[p % _N_TAG].append(("phrt", p))
        if ("phrb", p) not in used:
            tag_members[(p + _B_RESIDUE_OFFSET) % _N_TAG].append(("phrb", p))
    for c in tag_pc:
        tag_members[(3 * c + 1) % _N_TAG].append(("pc", c))
    if any(not g for g in tag_members):
        return None
    tag_members += [[("pc", c)] for c in (2, 3, 4, 5)]

    index_groups = canonical_groups(
        [XorGroup.of(*g) for g in index_members], "index")
    tag_groups = canonical_groups(
        [XorGroup.of(*g) for g in tag_members], "tag")
    return PhtSpec(
        phrt_len=length,
        phrb_len=length,
        assoc=assoc,
        index_bits=idx_bits,
        hash=HashSpec(tuple(index_groups), tuple(tag_groups)),
        synthesized=True,
    )


# ---------------------------------------------------------------------------
# Separability checks
# ---------------------------------------------------------------------------

def _window_rank(pht: PhtSpec, min_pos: int) -> int:
    """Distinct hash groups with a history member at position >= min_pos.

    With single-membership groups every column is a distinct basis vector,
    so the distinct-group count *is* the GF(2) rank of the noise window.
    """
    hit = set()
    for kind in ("index", "tag"):
        groups = getattr(pht.hash, f"{kind}_groups")
        for gi, group in enumerate(groups):
            if any(s.register in ("phrt", "phrb") and s.position >= min_pos
                   for s in group):
                hit.add((kind, gi))
    return len(hit)


def _windows_separable(config: CbpConfig) -> bool:
    lengths = [p.phrt_len for p in config.phts]
    for jp, pht in enumerate(config.phts):
        # Scan window right below this table: [L-SCAN_GAP, L).
        if _window_rank(pht, lengths[jp] - SCAN_GAP) < _SCAN_RANK_MIN:
            return False
        # Probing windows of every shorter table: [L_j, L_jp) and below,
        # all supersets of the binding window [L_{jp+1}, L_jp).
        if jp + 1 < len(lengths):
            if _window_rank(pht, lengths[jp + 1]) < _PROBE_RANK_MIN:
                return False
    return True


def validate_toy(config: CbpConfig) -> None:
    """Assert every structural property recovery relies on; raise otherwise."""
    s = config.scheme
    if s.shift_amount != 1 or not s.split:
        raise ValueError("toy schemes must be split with shift 1")
    if (s.branch_bits != tuple(range(2, 2 + len(s.branch_bits)))
            or s.target_bits != tuple(range(2, 2 + len(s.target_bits)))):
        raise ValueError("toy footprint slices must be contiguous from bit 2")
    if len(s.target_bits) > config.phts[0].phrt_len:
        raise ValueError("target slice wider than the longest history")
    if config.phrt_width != config.phts[0].phrt_len:
        raise ValueError("phrt_width must equal the longest history length")
    if config.phrb_width != config.phrt_width:
        raise ValueError("toy phrb_width must equal phrt_width")
    lo, hi = config.pc_input_range
    if lo != 2 or not 7 <= hi <= min(12, len(s.target_bits) + 2):
        raise ValueError(f"bad pc_input_range {config.pc_input_range}")
    cap = _capacity_cap(len(config.phts))
    prev_len = None
    for pht in config.phts:
        L = pht.phrt_len
        if pht.phrb_len != L:
            raise ValueError("toy tables must use phrb_len == phrt_len")
        if prev_len is not None and not 8 <= prev_len - L <= 11:
            raise ValueError("successive lengths must differ by 8..11")
        prev_len = L
        if pht.assoc not in (2, 4):
            raise ValueError("toy assoc must be 2 or 4")
        if pht.index_bits + (pht.assoc.bit_length() - 1) > cap:
            raise ValueError("table capacity too large for noise separation")
        seen: dict[tuple[str, int], str] = {}
        for kind in ("index", "tag"):
            for group in getattr(pht.hash, f"{kind}_groups"):
                for src in group:
                    key = (src.register, src.position)
                    if key in seen:
                        raise ValueError(f"{key} used twice in table hash")
                    seen[key] = kind
        for p in range(L):
            if seen.get(("phrt", p)) is None or seen.get(("phrb", p)) is None:
                raise ValueError(f"history position {p} unused (length {L})")
        passthrough = {tuple((s.register, s.position) for s in g)
                       for g in pht.hash.tag_groups if len(g) == 1}
        for c in (2, 3, 4, 5):
            if (("pc", c),) not in passthrough:
                raise ValueError(f"PC bit {c} must be a pass-through tag bit")
        for c in range(6, hi + 1):
            if seen.get(("pc", c)) is None:
                raise ValueError(f"PC bit {c} unused but inside the input range")
        if seen.get(("phrt", L - 1)) != "index":
            raise ValueError("top history bit must be index-bearing")
        if seen.get(("phrt", L - 2)) != "index":
            raise ValueError("second history bit must anchor a second index group")
        for p in (0, 1):
            if seen.get(("phrt", p)) == "index":
                raise ValueError(f"history position {p} must not be index-bearing")
        n_idx_pc = sum(1 for g in pht.hash.index_groups for s in g
                       if s.register == "pc")
        if n_idx_pc > 2:
            raise ValueError("at most two PC bits may feed the index")
        for g in pht.hash.index_groups:
            if not 1 <= len(g) <= 3:
                raise ValueError("index groups must have 1..3 members")
    if not _windows_separable(config):
        raise ValueError("noise windows touch too few groups to separate tables")
