"""Black-box predictor recovery: from misprediction counts to a hash spec.

The pipeline reads nothing but `bb.reset()` and `bb.run(trace) -> mispredict
count`.  Everything else is inference, staged so that each step only uses
facts established by earlier steps:

1. **History depth** — a direction-correlated bit is planted in the oldest
   history position reachable with D "dummy" taken branches after it; the
   largest D at which the predictor still tracks the direction is the
   longest table's history length.
2. **Footprint maps** — scheme-free single-bit patches on chain records
   locate which branch-address / target-address bits feed the history and
   how far each survives, which fixes the slice layout, the per-branch
   shift amount, and the branch-history register width.
3. **PC inputs** — two otherwise-identical windows ending at conditionals
   whose addresses differ in one bit: if the predictor keeps the two apart,
   that PC bit feeds the hash.
4. **Associativity** — N same-set, distinct-tag conditionals with a shared
   history signal stay predictable exactly while N fits in one set.
5. **Column algebra** — every remaining question is GF(2) linear: a
   position's *column* is its combined (index, tag) hash effect.  A
   zero-test probe (`rel`) tells whether a set of columns XORs to zero; a
   set-pressure probe (`ps`) tells whether the *index part* of the sum is
   zero by trying to crowd 2x associativity worth of consistent entries
   into one set (the quarter-rate signature) versus landing them in a
   different set.  Same-column classes, index groups, and the attachment
   of combo positions to tag groups all reduce to sequences of these two
   probes; shorter tables are isolated first by drowning every longer
   table in co-moving history noise.

Honesty rules: every probe rate must fall in an expected band (anything
else raises instead of guessing), descending scans accept a hit only after
a miss witnessed that the scan started above the answer, and whatever the
probes cannot separate is reported as unresolved rather than filled in.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..hashspec import XorGroup
from ..history import FootprintScheme
from .gadgets import (
    GENEROUS_SCHEME,
    BlockSpec,
    CondSpec,
    GadgetError,
    Injection,
    ProbeSpec,
    RawPatch,
    build_template,
    single_block,
)
from .model import RecoveredModel, RecoveredPht, canonical_groups, diff_against
from .probes import (
    BUILTIN_BUDGET,
    AmbiguousProbe,
    BandScheme,
    ProbeBudget,
    ProbeRunner,
    SCAN_BANDS,
    STRICT_BANDS,
)

__all__ = [
    "RecoveryError",
    "ProbeContext",
    "TableScope",
    "IsolatedPht",
    "RecoveryResult",
    "measure_phr_depth",
    "locate_footprint_bits",
    "find_pc_inputs",
    "find_assoc_and_index_pc_bits",
    "recover_tag_groups",
    "recover_index_groups",
    "isolate_shorter_pht",
    "recover_cbp",
]


class RecoveryError(RuntimeError):
    """The black box behaves outside the model this pipeline can recover."""


#: Conditional addresses live here; 1 KiB alignment leaves PC bits [9:2]
#: free for same-set tag variation and single-bit aliasing probes.
COND_BASE = 0x0010_0400

#: Associativity ladder bands: a rung "fits" while every entry survives;
#: one entry over capacity already forces at least 1/(2*(assoc+1)) misses.
ASSOC_BANDS = BandScheme("assoc", low_below=0.05, quarter=None, half_above=0.08)

DEFAULT_PC_BIT_RANGE = range(2, 20)
DEFAULT_BRANCH_BIT_RANGE = range(2, 8)
DEFAULT_TARGET_BIT_RANGE = range(2, 36)

Position = tuple[str, int]  # ("phrt" | "phrb" | "pc", bit position)


@dataclass
class ProbeContext:
    """Facts shared by every probe against one black box."""

    runner: ProbeRunner
    max_depth: int
    depth: int = 0
    chain_len: int = 0
    scheme: FootprintScheme = GENEROUS_SCHEME
    branch_map: dict = field(default_factory=dict)
    target_map: dict = field(default_factory=dict)
    shift: int = 0
    lb1: int = 0


@dataclass
class TableScope:
    """Probe framing for one prediction table.

    For the longest table no noise is needed; shorter tables are probed
    under co-moving noise at depth >= their own history length, which
    scrambles every longer table out of the picture.
    """

    position: int                    # 0 = longest table
    length: int                      # history length (phrt positions seen)
    lb: int                          # branch-history positions seen
    noise_min_depth: int | None
    forcer: int                      # exclusive index-bearing phrt position
    f2: int | None = None            # second forcer, different index group
    assoc: int = 0
    pc_inputs: tuple[int, ...] = ()


@dataclass(frozen=True)
class IsolatedPht:
    """Probe framing for the next-shorter table, as returned by the scan."""

    phrt_len: int
    phrb_len: int
    noise_min_depth: int
    forcer: int


@dataclass(frozen=True)
class RecoveryResult:
    model: RecoveredModel
    diff: dict | None
    probe_log: tuple


def _expect(band: str, allowed: tuple[str, ...], label: str) -> str:
    if band not in allowed:
        raise RecoveryError(
            f"probe {label!r} came back {band!r}; expected one of {allowed}")
    return band


def _classify(ctx: ProbeContext, spec: ProbeSpec, iters: int,
              bands: BandScheme, scheme: FootprintScheme | None = None) -> str:
    try:
        template = build_template(spec, scheme or ctx.scheme)
    except GadgetError as e:
        raise RecoveryError(str(e)) from e
    return ctx.runner.classify(template, iters, bands)


# ---------------------------------------------------------------------------
# Stage 1: history depth
# ---------------------------------------------------------------------------

def _probe_depth_visible(ctx: ProbeContext, chain_len: int, dummies: int,
                         iters: int) -> bool:
    """Plant a direction bit `dummies` taken branches before a conditional."""
    spec = single_block(f"depth:{dummies}", chain_len,
                        CondSpec(COND_BASE, ("k",)),
                        raw_patches=(RawPatch("k", "target", 2, dummies - 1),))
    band = _classify(ctx, spec, iters, STRICT_BANDS, GENEROUS_SCHEME)
    return _expect(band, ("low", "half"), spec.label) == "low"


def _measure_depth(ctx: ProbeContext, iters: int | None = None) -> int:
    iters = iters or ctx.runner.budget.binary
    chain_len = ctx.max_depth + 8
    if _probe_depth_visible(ctx, chain_len, ctx.max_depth, iters):
        raise RecoveryError(
            f"history still visible {ctx.max_depth} branches deep; "
            f"raise max_depth")
    for d in range(ctx.max_depth - 1, 0, -1):
        if _probe_depth_visible(ctx, chain_len, d, iters):
            ctx.depth = d
            ctx.chain_len = d + 8
            return d
    raise RecoveryError("no history position is visible at any depth; "
                        "the box does not look history-driven")


# ---------------------------------------------------------------------------
# Stage 2: footprint maps (scheme-free)
# ---------------------------------------------------------------------------

def _locate_channel(ctx: ProbeContext, channel: str, bit_range,
                    iters: int | None = None) -> dict[int, int]:
    """Map {address bit: deepest dummy count it survives} for one channel."""
    if channel not in ("branch", "target"):
        raise ValueError(f"channel must be 'branch' or 'target', got {channel!r}")
    fld = "pc" if channel == "branch" else "target"
    iters = iters or ctx.runner.budget.binary

    def visible(bit: int, depth: int) -> bool:
        spec = single_block(f"locate:{channel}:{bit}@{depth}", ctx.chain_len,
                            CondSpec(COND_BASE, ("k",)),
                            raw_patches=(RawPatch("k", fld, bit, depth),))
        band = _classify(ctx, spec, iters, STRICT_BANDS, GENEROUS_SCHEME)
        return _expect(band, ("low", "half"), spec.label) == "low"

    result: dict[int, int] = {}
    prev: tuple[int, int] | None = None
    for bit in bit_range:
        # Presence: a few shallow depths, because a single hash may skip one
        # history position (a hole) without the bit being absent overall.
        if not any(visible(bit, d) for d in range(4)):
            continue
        max_d = None
        if prev is not None:
            pred = prev[1] - (bit - prev[0])
            if pred >= 0 and visible(bit, pred) and not visible(bit, pred + 1):
                max_d = pred
        if max_d is None:
            for d in range(ctx.depth - 1, -1, -1):
                if visible(bit, d):
                    max_d = d
                    break
        if max_d is None:
            raise RecoveryError(
                f"{channel} bit {bit} answers shallow probes but has no "
                f"measurable survival depth")
        result[bit] = max_d
        prev = (bit, max_d)
    return result


def _assemble_scheme(ctx: ProbeContext) -> None:
    """Fuse depth + footprint maps into a footprint scheme; fail loudly."""
    t_bits = sorted(ctx.target_map)
    b_bits = sorted(ctx.branch_map)
    if len(t_bits) < 2:
        raise RecoveryError("fewer than two target-address bits feed the "
                            "history; cannot measure the shift amount")
    if not b_bits:
        raise RecoveryError("no branch-address bits feed the history")
    span_bits = t_bits[-1] - t_bits[0]
    span_depth = ctx.target_map[t_bits[0]] - ctx.target_map[t_bits[-1]]
    if span_depth <= 0:
        raise RecoveryError("target-channel survival depths do not decrease "
                            "with bit position; footprint map is inconsistent")
    ctx.shift = round(span_bits / span_depth)
    if ctx.shift == 1:
        for rank, bit in enumerate(t_bits):
            if rank + ctx.target_map[bit] != ctx.depth - 1:
                raise RecoveryError(
                    f"target bit {bit} survives {ctx.target_map[bit]} "
                    f"branches, inconsistent with depth {ctx.depth}")
    ctx.lb1 = max(rank + ctx.shift * ctx.branch_map[bit]
                  for rank, bit in enumerate(b_bits)) + 1
    ctx.scheme = FootprintScheme("recovered", tuple(b_bits), tuple(t_bits),
                                 split=True, shift_amount=ctx.shift)


def _require_structured(ctx: ProbeContext) -> None:
    t_bits, b_bits = ctx.scheme.target_bits, ctx.scheme.branch_bits
    if ctx.shift != 1:
        raise RecoveryError(
            f"measured shift amount is {ctx.shift}; hash recovery is only "
            f"defined for 1-per-branch shifts (lengths and maps above are "
            f"still valid)")
    if (t_bits != tuple(range(2, 2 + len(t_bits)))
            or b_bits != tuple(range(2, 2 + len(b_bits)))):
        raise RecoveryError(
            f"footprint slices T{list(t_bits)} / B{list(b_bits)} are not "
            f"contiguous from bit 2; hash recovery not supported")


# ---------------------------------------------------------------------------
# Stage 3+: structured probes against one table scope
# ---------------------------------------------------------------------------

def _pos_label(positions) -> str:
    return "+".join(f"{r}{p}" for r, p in positions)


def _find_pc_inputs_scope(ctx: ProbeContext, scope: TableScope,
                          pc_bit_range, iters: int | None = None) -> tuple[int, ...]:
    """PC bits the table's hash reads: dual-window aliasing test per bit."""
    iters = iters or ctx.runner.budget.binary
    found = []
    inj = (Injection("m", "phrt", scope.forcer),)
    for c in pc_bit_range:
        blocks = (
            BlockSpec(CondSpec(COND_BASE, ("m",)), injections=inj),
            BlockSpec(CondSpec(COND_BASE ^ (1 << c), ("m",), invert=True),
                      injections=inj),
        )
        spec = ProbeSpec(f"pc-alias:t{scope.position}:{c}", ctx.chain_len,
                         blocks, scope.noise_min_depth)
        band = _classify(ctx, spec, iters, STRICT_BANDS)
        if _expect(band, ("low", "half"), spec.label) == "low":
            found.append(c)
    return tuple(found)


def _find_assoc(ctx: ProbeContext, scope: TableScope,
                iters: int | None = None) -> int:
    """Largest number of same-set distinct-tag entries that all survive.

    The direction carries a jitter coin (see ProbeSpec): past the true
    associativity the set is thrashing by design, and a shorter table that
    picks up the evicted conditionals sees a direction that is constant
    given its own context — without the jitter it would predict the
    overflow perfectly and extend the ladder by a rung.
    """
    iters = iters or ctx.runner.budget.assoc
    fits = 0
    for n in range(1, 9):
        blocks = tuple(
            BlockSpec(CondSpec(COND_BASE + 4 * t, ("m", "w")),
                      injections=(Injection("m", "phrt", scope.forcer),))
            for t in range(n))
        spec = ProbeSpec(f"assoc:t{scope.position}:{n}", ctx.chain_len,
                         blocks, scope.noise_min_depth, jitter_vars=("w",))
        band = _classify(ctx, spec, iters, ASSOC_BANDS)
        if band == "low":
            fits = n
        else:
            if fits == 0:
                raise RecoveryError("a single trained entry does not survive "
                                    "in its set; not a set-associative table?")
            return fits
    raise RecoveryError("more than 8 surviving entries per set; "
                        "associativity out of supported range")


def _col_sum_is_zero(ctx: ProbeContext, scope: TableScope, positions,
                     iters: int | None = None) -> bool:
    """Zero-test: do the (index||tag) columns of `positions` XOR to zero?

    Forced by an always-visible index-bearing bit so the four variable
    combinations split across at least two sets and can never thrash.
    The test variable settles during warm-up and a jitter coin rides the
    direction (see ProbeSpec), so every forcer context is allocated before
    measurement and any shorter table that starts capturing a slice of the
    direction stream is knocked back out of its zero-misprediction lock.
    """
    iters = iters or ctx.runner.budget.binary
    inj = [Injection("m", "phrt", scope.forcer)]
    inj += [Injection("k", r, p) for r, p in positions]
    dispatch = any(r == "pc" for r, _ in positions)
    spec = single_block(f"rel:t{scope.position}:{_pos_label(positions)}",
                        ctx.chain_len, CondSpec(COND_BASE, ("k", "m", "w")),
                        injections=tuple(inj), dispatch=dispatch,
                        noise_min_depth=scope.noise_min_depth,
                        settle_vars=("k",), jitter_vars=("w",))
    band = _classify(ctx, spec, iters, STRICT_BANDS)
    return _expect(band, ("low", "half"), spec.label) == "half"


def _ps_class(ctx: ProbeContext, scope: TableScope, positions, forcer: int,
              iters: int | None = None) -> str:
    """Set-pressure verdict for the summed column of `positions`.

    "low": the sum moves lookups to a fresh set (index part differs from
    both 0 and the forcer's index) — or equals the forcer's full column.
    "quarter": the sum leaves the set alone but moves tags, doubling the
    set's population (index part is 0 or the forcer's own index).
    """
    iters = iters or ctx.runner.budget.band
    dispatch = any(r == "pc" for r, _ in positions)
    blocks = []
    for t in range(scope.assoc):
        inj = (Injection("m", "phrt", forcer),)
        inj += tuple(Injection("k", r, p) for r, p in positions)
        blocks.append(BlockSpec(CondSpec(COND_BASE + 4 * t, ("k", "m", "w")),
                                injections=inj, dispatch=dispatch))
    spec = ProbeSpec(f"ps:t{scope.position}:f{forcer}:{_pos_label(positions)}",
                     ctx.chain_len, tuple(blocks), scope.noise_min_depth,
                     settle_vars=("k",), jitter_vars=("w",))
    band = _classify(ctx, spec, iters, STRICT_BANDS)
    return _expect(band, ("low", "quarter"), spec.label)


def _cols_equal(ctx: ProbeContext, scope: TableScope, a: Position,
                b: Position) -> bool:
    return _col_sum_is_zero(ctx, scope, [a, b])


def _find_f2(ctx: ProbeContext, scope: TableScope) -> int:
    """Second forcer: an index-bearing position in a different index group.

    Scans down from just below the first forcer.  A position that lands in
    the forcer's own index group reads "quarter" and is skipped; one with
    the forcer's exact column would read "low" for the wrong reason, so
    column equality explicitly rejects it.
    """
    lo = max(0, scope.length - 2 - 16)
    for x in range(scope.length - 2, lo - 1, -1):
        if _ps_class(ctx, scope, [("phrt", x)], scope.forcer) == "low":
            if not _cols_equal(ctx, scope, ("phrt", x), ("phrt", scope.forcer)):
                return x
    raise RecoveryError(
        f"table {scope.position}: no second index group is visible in the "
        f"top {scope.length - 1 - lo} history positions")


def _is_index_bearing(ctx: ProbeContext, scope: TableScope,
                      pos: Position) -> bool:
    """Does this column touch any index bit?  Two-forcer disambiguation."""
    if _ps_class(ctx, scope, [pos], scope.forcer) == "low":
        return True
    # "quarter" under the first forcer: either index-free, or exactly the
    # forcer's index (its blind spot) — the second forcer separates them.
    return _ps_class(ctx, scope, [pos], scope.f2) == "low"


def _same_index_part(ctx: ProbeContext, scope: TableScope, a: Position,
                     b: Position) -> bool:
    if _ps_class(ctx, scope, [a, b], scope.forcer) == "low":
        return False
    return _ps_class(ctx, scope, [a, b], scope.f2) == "quarter"


# ---------------------------------------------------------------------------
# Column classes, index groups, tag attachment
# ---------------------------------------------------------------------------

def _partition_classes(ctx: ProbeContext, scope: TableScope) -> list[list[Position]]:
    """Group all hash inputs of this table into equal-column classes."""
    candidates: list[Position] = (
        [("phrt", p) for p in range(scope.length)]
        + [("phrb", p) for p in range(scope.lb)]
        + [("pc", c) for c in scope.pc_inputs]
    )
    classes: list[list[Position]] = []
    for pos in candidates:
        if pos[0] != "pc" and _col_sum_is_zero(ctx, scope, [pos]):
            continue  # not a hash input
        for cls in classes:
            if _col_sum_is_zero(ctx, scope, [pos, cls[0]]):
                cls.append(pos)
                break
        else:
            classes.append([pos])
    return classes


def _stride_model(units: list[list[Position]]):
    """Learn the tag groups' history stride from their pure members.

    Returns (stride, {residue: unit_index}, pc_offset) or None when the
    pure classes show no single consistent stride.  Used only to rank
    otherwise-tied attachment candidates, never to override a measurement.
    """
    diffs: list[int] = []
    for unit in units:
        phrts = sorted(p for r, p in unit if r == "phrt")
        diffs += [b - a for a, b in zip(phrts, phrts[1:])]
    if not diffs:
        return None
    stride = max(set(diffs), key=diffs.count)
    if stride < 2:
        return None
    residue_map: dict[int, int] = {}
    for h, unit in enumerate(units):
        residues = {p % stride for r, p in unit if r == "phrt"}
        if len(residues) != 1:
            continue
        (res,) = residues
        if res in residue_map:
            return None  # two units share a residue: stride model useless
        residue_map[res] = h
    offsets = []
    for res, h in residue_map.items():
        offsets += [c - res for r, c in units[h] if r == "pc"]
    pc_offset = max(set(offsets), key=offsets.count) if offsets else None
    return stride, residue_map, pc_offset


def _predict_units(cls: list[Position], model) -> set[int]:
    """Units a class would belong to if the stride pattern extends to it."""
    if model is None:
        return set()
    stride, residue_map, pc_offset = model
    preds = set()
    for r, p in cls:
        if r == "phrt" or r == "phrb":
            h = residue_map.get(p % stride)
        elif pc_offset is not None:
            h = residue_map.get((p - pc_offset) % stride)
        else:
            h = None
        if h is not None:
            preds.add(h)
    return preds


def _measure_delta(ctx: ProbeContext, scope: TableScope, anchor: Position,
                   other: Position, units: list[list[Position]],
                   order: list[int]) -> frozenset[int]:
    """Tag-part difference between two same-index classes, in unit basis."""
    for h in order:
        if _col_sum_is_zero(ctx, scope, [anchor, other, units[h][0]]):
            return frozenset((h,))
    pairs = [(g, h) for i, g in enumerate(order) for h in order[i + 1:]]
    for g, h in pairs:
        if _col_sum_is_zero(ctx, scope,
                            [anchor, other, units[g][0], units[h][0]]):
            return frozenset((g, h))
    raise RecoveryError(
        f"table {scope.position}: tag difference of {anchor} vs {other} is "
        f"not one or two tag units; hash is outside the supported shape")


def _resolve_attachments(ctx: ProbeContext, scope: TableScope,
                         idx_groups: list[list[list[Position]]],
                         units: list[list[Position]],
                         notes: list[str]):
    """Assign each index-bearing class its tag-side unit (or none).

    Within an index group only differences between classes are measurable,
    so the absolute assignment is the feasible candidate with the fewest
    attachments, tie-broken by the stride pattern the pure tag groups show.
    """
    model = _stride_model(units)
    assignments: list[dict[int, frozenset[int]]] = []  # per group: class idx -> units
    for group in idx_groups:
        anchor = group[0]
        deltas = [frozenset()]
        for other in group[1:]:
            pref = sorted(_predict_units(anchor, model)
                          | _predict_units(other, model))
            order = pref + [h for h in range(len(units)) if h not in pref]
            deltas.append(_measure_delta(ctx, scope, anchor[0], other[0],
                                         units, order))
        candidates = []
        for tau0 in [frozenset()] + [frozenset((h,)) for h in range(len(units))]:
            taus = [tau0 ^ d for d in deltas]
            if any(len(t) > 1 for t in taus):
                continue
            if len(set(taus)) != len(taus):
                continue
            n_attach = sum(1 for t in taus if t)
            score = 0
            for cls, tau in zip(group, taus):
                if tau and next(iter(tau)) in _predict_units(cls, model):
                    score += 1
            candidates.append((n_attach, -score, sorted(map(sorted, taus)), taus))
        if not candidates:
            raise RecoveryError(
                f"table {scope.position}: no consistent tag attachment for "
                f"index group containing {group[0][0]}")
        candidates.sort(key=lambda c: (c[0], c[1], c[2]))
        if (len(candidates) > 1
                and candidates[0][:2] == candidates[1][:2]):
            notes.append(
                f"table {scope.position}: tag attachment for the index group "
                f"containing {group[0][0]} chosen among "
                f"{sum(1 for c in candidates if c[:2] == candidates[0][:2])} "
                f"equally plausible candidates")
        assignments.append({i: tau for i, tau in enumerate(candidates[0][3])})
    return assignments


def _assemble_pht(scope: TableScope, idx_groups, units, assignments) -> RecoveredPht:
    tag_members: list[list[Position]] = [list(u) for u in units]
    for group, assign in zip(idx_groups, assignments):
        for i, cls in enumerate(group):
            tau = assign[i]
            if tau:
                (h,) = tau
                tag_members[h].extend(cls)
    tag_groups = canonical_groups(
        [XorGroup.of(*members) for members in tag_members], "tag")
    index_groups = canonical_groups(
        [XorGroup.of(*(pos for cls in group for pos in cls))
         for group in idx_groups], "index")
    index_pc_bits = tuple(sorted(
        s.position for g in index_groups for s in g.sources
        if s.register == "pc"))
    return RecoveredPht(
        phrt_len=scope.length,
        phrb_len=scope.lb,
        status="recovered",
        assoc=scope.assoc,
        pc_bits=tuple(scope.pc_inputs),
        index_pc_bits=index_pc_bits,
        tag_groups=tag_groups,
        index_groups=index_groups,
    )


def _analyze_table(ctx: ProbeContext, scope: TableScope, pc_bit_range,
                   notes: list[str]) -> RecoveredPht:
    scope.pc_inputs = _find_pc_inputs_scope(ctx, scope, pc_bit_range)
    scope.assoc = _find_assoc(ctx, scope)
    scope.f2 = _find_f2(ctx, scope)
    classes = _partition_classes(ctx, scope)
    idx_classes: list[list[Position]] = []
    units: list[list[Position]] = []
    for cls in classes:
        if _is_index_bearing(ctx, scope, cls[0]):
            idx_classes.append(cls)
        else:
            units.append(cls)
    idx_groups: list[list[list[Position]]] = []
    for cls in idx_classes:
        for group in idx_groups:
            if _same_index_part(ctx, scope, cls[0], group[0][0]):
                group.append(cls)
                break
        else:
            idx_groups.append([cls])
    assignments = _resolve_attachments(ctx, scope, idx_groups, units, notes)
    return _assemble_pht(scope, idx_groups, units, assignments)


# ---------------------------------------------------------------------------
# Shorter-table isolation
# ---------------------------------------------------------------------------

def _scan_below(ctx: ProbeContext, l_prev: int, scan_gap: int,
                iters: int | None = None) -> tuple[str, int | None]:
    """Descend the noise threshold looking for the next-shorter table.

    Returns ("found", length), ("exhausted", None) when nothing answers all
    the way down, or ("unresolved", x) when the very first probe already
    answers — a shorter table lives within `scan_gap` of the longer one and
    cannot be separated from it honestly.
    """
    iters = iters or ctx.runner.budget.binary
    x0 = l_prev - scan_gap
    if x0 < 1:
        return ("unresolved", None)
    saw_half = False
    for x in range(x0, 0, -1):
        spec = single_block(f"scan:{x}", ctx.chain_len,
                            CondSpec(COND_BASE, ("k",)),
                            injections=(Injection("k", "phrt", x - 1),),
                            noise_min_depth=x)
        band = _classify(ctx, spec, iters, SCAN_BANDS)
        if _expect(band, ("low", "half"), spec.label) == "low":
            return ("found", x) if saw_half else ("unresolved", x)
        saw_half = True
    return ("exhausted", None)


def _confirm_lb(ctx: ProbeContext, length: int, lb_prev: int,
                iters: int | None = None) -> int:
    """Branch-history length of the table isolated at `length`.

    Within the noise frame only tables at or below `length` are live, and
    none of them can see more branch history than min(lb_prev, length), so
    the confirm pair (visible at hyp-1, invisible at hyp) descends from
    there.
    """
    iters = iters or ctx.runner.budget.binary

    def visible(pos: int) -> bool:
        spec = single_block(f"lb:{length}:{pos}", ctx.chain_len,
                            CondSpec(COND_BASE, ("k",)),
                            injections=(Injection("k", "phrb", pos),),
                            noise_min_depth=length)
        band = _classify(ctx, spec, iters, STRICT_BANDS)
        return _expect(band, ("low", "half"), spec.label) == "low"

    hyp = min(lb_prev, length)
    while hyp >= 1:
        if visible(hyp - 1):
            if visible(hyp):
                raise RecoveryError(
                    f"branch history visible at position {hyp} though no "
                    f"live table should reach past {hyp}")
            return hyp
        hyp -= 1
    return 0


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def _new_context(bb, seed: int, budget: ProbeBudget | None,
                 max_depth: int) -> ProbeContext:
    return ProbeContext(ProbeRunner(bb, seed, budget or BUILTIN_BUDGET),
                        max_depth)


def _prepare(bb, seed: int, budget, max_depth,
             branch_bit_range=DEFAULT_BRANCH_BIT_RANGE,
             target_bit_range=DEFAULT_TARGET_BIT_RANGE) -> ProbeContext:
    ctx = _new_context(bb, seed, budget, max_depth)
    _measure_depth(ctx)
    ctx.branch_map = _locate_channel(ctx, "branch", branch_bit_range)
    ctx.target_map = _locate_channel(ctx, "target", target_bit_range)
    _assemble_scheme(ctx)
    return ctx


def _table1_scope(ctx: ProbeContext) -> TableScope:
    return TableScope(position=0, length=ctx.depth, lb=ctx.lb1,
                      noise_min_depth=None, forcer=ctx.depth - 1)


def measure_phr_depth(bb, max_depth: int = 128, iters: int | None = None,
                      seed: int = 0, *, budget: ProbeBudget | None = None) -> int:
    """Longest history length: deepest planted bit the box still tracks."""
    ctx = _new_context(bb, seed, budget, max_depth)
    return _measure_depth(ctx, iters)


def locate_footprint_bits(bb, channel: str, bit_range=None, seed: int = 0, *,
                          max_depth: int = 128, iters: int | None = None,
                          budget: ProbeBudget | None = None) -> dict[int, int]:
    """{address bit: deepest dummy count it survives} for one channel.

    Adjacent present bits whose survival depths differ by 1 pin the shift
    amount to 1; the largest (slice rank + depth) on the branch channel
    plus one is the branch-history register width.
    """
    if bit_range is None:
        bit_range = (DEFAULT_BRANCH_BIT_RANGE if channel == "branch"
                     else DEFAULT_TARGET_BIT_RANGE)
    ctx = _new_context(bb, seed, budget, max_depth)
    _measure_depth(ctx)
    return _locate_channel(ctx, channel, bit_range, iters)


def find_pc_inputs(bb, pc_bit_range=DEFAULT_PC_BIT_RANGE, seed: int = 0, *,
                   max_depth: int = 128,
                   budget: ProbeBudget | None = None) -> set[int]:
    """PC bits the longest table's hash reads."""
    ctx = _prepare(bb, seed, budget, max_depth)
    _require_structured(ctx)
    return set(_find_pc_inputs_scope(ctx, _table1_scope(ctx), pc_bit_range))


def find_assoc_and_index_pc_bits(bb, seed: int = 0, *, max_depth: int = 128,
                                 pc_bit_range=DEFAULT_PC_BIT_RANGE,
                                 budget: ProbeBudget | None = None
                                 ) -> tuple[int, set[int]]:
    """Associativity of the longest table and the PC bits its index reads."""
    ctx = _prepare(bb, seed, budget, max_depth)
    _require_structured(ctx)
    scope = _table1_scope(ctx)
    scope.pc_inputs = _find_pc_inputs_scope(ctx, scope, pc_bit_range)
    scope.assoc = _find_assoc(ctx, scope)
    scope.f2 = _find_f2(ctx, scope)
    index_pc = {c for c in scope.pc_inputs
                if _is_index_bearing(ctx, scope, ("pc", c))}
    return scope.assoc, index_pc


def _recover_table1(bb, seed, budget, max_depth, pc_bit_range,
                    notes: list[str]) -> tuple[ProbeContext, RecoveredPht]:
    ctx = _prepare(bb, seed, budget, max_depth)
    _require_structured(ctx)
    pht = _analyze_table(ctx, _table1_scope(ctx), pc_bit_range, notes)
    return ctx, pht


def recover_tag_groups(bb, seed: int = 0, *, max_depth: int = 128,
                       pc_bit_range=DEFAULT_PC_BIT_RANGE,
                       budget: ProbeBudget | None = None) -> list[XorGroup]:
    """Tag XOR groups of the longest table, in canonical order."""
    _, pht = _recover_table1(bb, seed, budget, max_depth, pc_bit_range, [])
    return list(pht.tag_groups)


def recover_index_groups(bb, tag_groups, seed: int = 0, *,
                         max_depth: int = 128,
                         pc_bit_range=DEFAULT_PC_BIT_RANGE,
                         budget: ProbeBudget | None = None) -> list[XorGroup]:
    """Index XOR groups of the longest table; cross-checks `tag_groups`.

    The supplied tag groups must match what this run measures (they pin the
    tag-unit basis); any inconsistency is an error, not a warning.
    """
    _, pht = _recover_table1(bb, seed, budget, max_depth, pc_bit_range, [])
    measured = {frozenset(g.sources) for g in pht.tag_groups}
    supplied = {frozenset(g.sources) for g in tag_groups}
    if measured != supplied:
        raise RecoveryError(
            "supplied tag groups do not match the measured ones; refusing "
            "to report index groups against a stale tag basis")
    return list(pht.index_groups)


def isolate_shorter_pht(bb, known_longer_phts, seed: int = 0, *,
                        max_depth: int = 128, scan_gap: int = 13,
                        budget: ProbeBudget | None = None) -> IsolatedPht | None:
    """Find the next-shorter table under co-moving noise.

    `known_longer_phts` is a sequence of already-known tables, each either a
    (phrt_len, phrb_len) pair or an object with those attributes.  Returns
    the probe framing for the newly isolated table, or None when no further
    table answers.  Raises when a shorter table exists but cannot be
    separated from the known ones.
    """
    lengths = []
    for p in known_longer_phts:
        if hasattr(p, "phrt_len"):
            lengths.append((int(p.phrt_len), int(p.phrb_len)))
        else:
            lt, lb = p
            lengths.append((int(lt), int(lb)))
    if not lengths:
        raise ValueError("known_longer_phts must name at least one table")
    l_prev = min(lt for lt, _ in lengths)
    lb_prev = min(lb for _, lb in lengths)
    ctx = _prepare(bb, seed, budget, max_depth)
    _require_structured(ctx)
    status, x = _scan_below(ctx, l_prev, scan_gap)
    if status == "exhausted":
        return None
    if status == "unresolved":
        raise RecoveryError(
            f"a table shorter than {l_prev} answers immediately at the scan "
            f"start; it cannot be separated with gap {scan_gap}")
    lb = _confirm_lb(ctx, x, lb_prev)
    return IsolatedPht(phrt_len=x, phrb_len=lb, noise_min_depth=x,
                       forcer=x - 1)


def recover_cbp(bb, seed: int = 0, *, max_depth: int = 128,
                hash_tables: int | None = 1, scan_gap: int = 13,
                pc_bit_range=DEFAULT_PC_BIT_RANGE,
                budget: ProbeBudget | None = None,
                reference=None) -> RecoveryResult:
    """Full recovery: history parameters, all separable tables, and the
    hash of the first `hash_tables` tables (None = every table found).

    When `reference` (a predictor config) is given, the result carries a
    machine-readable diff of everything recovered against it.
    """
    notes: list[str] = []
    ctx = _prepare(bb, seed, budget, max_depth)
    _require_structured(ctx)

    phts: list[RecoveredPht] = []
    truncated = False
    scope = _table1_scope(ctx)
    phts.append(_analyze_table(ctx, scope, pc_bit_range, notes))
    last_full_scope = scope

    l_prev, lb_prev = ctx.depth, ctx.lb1
    while True:
        status, x = _scan_below(ctx, l_prev, scan_gap)
        if status == "exhausted":
            break
        if status == "unresolved":
            truncated = True
            at = x if x is not None else l_prev - scan_gap
            notes.append(
                f"one or more tables with history length <= {max(at, 1)} "
                f"remain: they answer at the scan start and cannot be "
                f"separated (gap {scan_gap})")
            break
        length = x
        if last_full_scope is not None and last_full_scope.f2 is not None:
            if last_full_scope.f2 < length:
                raise RecoveryError(
                    f"table {last_full_scope.position}'s second forcer "
                    f"{last_full_scope.f2} is visible to the table of length "
                    f"{length}; its hash readout is unsound")
            last_full_scope = None
        lb = _confirm_lb(ctx, length, lb_prev)
        position = len(phts)
        if hash_tables is None or position < hash_tables:
            scope = TableScope(position=position, length=length, lb=lb,
                               noise_min_depth=length, forcer=length - 1)
            phts.append(_analyze_table(ctx, scope, pc_bit_range, notes))
            last_full_scope = scope
        else:
            phts.append(RecoveredPht(phrt_len=length, phrb_len=lb,
                                     status="lengths-only"))
        l_prev, lb_prev = length, lb

    runner = ctx.runner
    confidence = {
        "probes": len(runner.log),
        "iterations": sum(e["iters"] for e in runner.log),
    }
    model = RecoveredModel(
        phr_depth=ctx.depth,
        shift_amount=ctx.shift,
        branch_bits=tuple(sorted(ctx.branch_map)),
        target_bits=tuple(sorted(ctx.target_map)),
        phrb_width=ctx.lb1,
        phts=tuple(phts),
        truncated=truncated,
        confidence=confidence,
        notes=tuple(notes),
    )
    diff = diff_against(model, reference) if reference is not None else None
    return RecoveryResult(model=model, diff=diff, probe_log=tuple(runner.log))
