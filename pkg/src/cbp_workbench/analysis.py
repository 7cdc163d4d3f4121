"""Static analyzers for footprint collisions and PHT-entry scatter.

Three tools, all pure address math on top of the history and hash models:

``count_collisions``
    Counts unordered pairs of distinct static branches whose history
    footprints compare equal under a scheme, i.e. pairs the history registers
    cannot tell apart no matter when they retire. Same-function grouping is
    the caller's job (see ``parse_branch_list``); this module does not read
    binaries.

``scatter_report``
    Ranks the branches of a simulation by how many distinct tagged-PHT
    entries they touched, with a per-PHT breakdown — the footprint churn
    that spreads one static branch across many entries.

``nop_whatif``
    Answers "what if one NOP were inserted here": shifts every address at or
    past the insertion point by 4 bytes per NOP, recomputes each branch's
    footprint, and reports how far apart each pair's tag contributions land
    under the first (longest-history) PHT's tag hash. A pair whose
    contributions differ in a single bit keeps nearly identical tag streams
    through the loop, occupying far fewer entries than a pair that diverges
    in many bits.

The tag contribution of a branch is the image of its just-retired footprint
in a PHT's tag function: the parity, per tag group, of the footprint bits
sitting at history offset 0. PC sources belong to the *looked-up* branch,
not to the contributing one, so they are excluded from the image.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import combinations

from .configs import CbpConfig
from .hashspec import HashSpec
from .history import FootprintScheme, compute_footprint
from .sim import SimReport
from .trace import KIND_COND, KIND_NAMES, _KIND_BY_NAME

__all__ = [
    "StaticBranch", "CollisionReport", "ScatterRow", "BranchShift",
    "PairDelta", "NopWhatifReport", "BINARY_SEARCH_LAYOUT",
    "count_collisions", "scatter_report", "nop_whatif", "tag_contribution",
    "parse_branch_list", "load_branch_list",
]


@dataclass(frozen=True)
class StaticBranch:
    """A branch site stripped of dynamics: just addresses and kind."""

    pc: int
    target: int
    kind: int = KIND_COND

    def __post_init__(self):
        if self.pc < 0 or self.target < 0:
            raise ValueError(f"negative address in {self}")
        if not 0 <= self.kind < len(KIND_NAMES):
            raise ValueError(f"unknown branch kind {self.kind}")


# Control-flow instructions of the compiled binary-search kernel, in layout
# order (the same kernel the trace generator in ``workloads`` executes; the
# return at 0x48 is omitted because its target is dynamic).
BINARY_SEARCH_LAYOUT = (
    StaticBranch(0x04, 0x40, KIND_COND),        # empty range -> miss exit
    StaticBranch(0x0C, 0x1C, _KIND_BY_NAME["uncond"]),  # enter probe block
    StaticBranch(0x18, 0x40, KIND_COND),        # range exhausted -> miss exit
    StaticBranch(0x2C, 0x10, KIND_COND),        # probe below key -> upper half
    StaticBranch(0x30, 0x44, KIND_COND),        # exact hit -> found exit
    StaticBranch(0x3C, 0x1C, KIND_COND),        # keep searching lower half
)


# ---------------------------------------------------------------------------
# Footprint collisions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CollisionReport:
    """Unordered distinct-branch pairs whose footprints compare equal."""

    scheme: str
    colliding_pairs: int
    pairs: tuple | None = None
    counting: str = "unordered-pairs"

    def to_dict(self) -> dict:
        d = {"scheme": self.scheme, "counting": self.counting,
             "colliding_pairs": self.colliding_pairs}
        if self.pairs is not None:
            d["pairs"] = [[{"pc": f"{b.pc:#x}", "target": f"{b.target:#x}"}
                           for b in pair] for pair in self.pairs]
        return d


def count_collisions(branches, scheme: FootprintScheme, *,
                     keep_pairs: bool = False) -> CollisionReport:
    """Count unordered pairs of branches with equal footprints.

    Pairs with identical (pc, target) are duplicates of one site, not a
    collision, and are excluded. With ``keep_pairs`` the (quadratic-size)
    pair list is materialized, deterministically sorted by address.
    """
    by_footprint = Counter()
    by_site = Counter()
    for b in branches:
        fp = compute_footprint(scheme, b.pc, b.target)
        by_footprint[fp] += 1
        by_site[b.pc, b.target] += 1
    total = sum(k * (k - 1) // 2 for k in by_footprint.values())
    total -= sum(m * (m - 1) // 2 for m in by_site.values())

    pairs = None
    if keep_pairs:
        pairs = tuple(sorted(
            ((a, b) if (a.pc, a.target) <= (b.pc, b.target) else (b, a)
             for a, b in combinations(branches, 2)
             if (a.pc, a.target) != (b.pc, b.target)
             and compute_footprint(scheme, a.pc, a.target)
             == compute_footprint(scheme, b.pc, b.target)),
            key=lambda p: ((p[0].pc, p[0].target), (p[1].pc, p[1].target))))
        assert len(pairs) == total
    return CollisionReport(scheme=scheme.name, colliding_pairs=total,
                           pairs=pairs)


# ---------------------------------------------------------------------------
# Entry scatter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScatterRow:
    pc: int
    distinct_entries: int
    mispredictions: int
    executions: int
    per_pht: dict  # pht number -> distinct entries in that PHT

    def to_dict(self) -> dict:
        return {"pc": f"{self.pc:#x}", "distinct_entries": self.distinct_entries,
                "mispredictions": self.mispredictions,
                "executions": self.executions,
                "per_pht": {str(p): n for p, n in sorted(self.per_pht.items())}}


def scatter_report(sim_report: SimReport, top_k: int | None = None):
    """Branches ranked by distinct (pht, set, tag) entries touched.

    Requires a simulation run with scatter tracking; executions and
    misprediction counts come from the post-warmup per-branch statistics
    (0 for branches only seen during warmup).
    """
    rows = []
    for pc, entries in sim_report.scatter.items():
        execs, mispreds = sim_report.per_branch.get(pc, (0, 0))
        per_pht = dict(Counter(pht for pht, _set, _tag in entries))
        rows.append(ScatterRow(pc=pc, distinct_entries=len(entries),
                               mispredictions=mispreds, executions=execs,
                               per_pht=per_pht))
    rows.sort(key=lambda r: (-r.distinct_entries, r.pc))
    return rows[:top_k] if top_k is not None else rows


# ---------------------------------------------------------------------------
# NOP insertion what-if
# ---------------------------------------------------------------------------


def tag_contribution(hash_spec: HashSpec, scheme: FootprintScheme,
                     pc: int, target: int) -> int:
    """Image of a just-retired taken branch's footprint in a PHT tag.

    Bit j of the result is the parity of the footprint bits at the history
    positions named by ``tag_groups[j]``. The footprint sits at offset 0:
    slice bit i is history bit i. PC sources contribute nothing (they read
    the later lookup's address, not this branch's).
    """
    fp = compute_footprint(scheme, pc, target)
    if scheme.split:
        phrt_img, phrb_img = fp.t_part, fp.b_part
    else:
        phrt_img, phrb_img = fp.t_part ^ fp.b_part, 0
    mask = 0
    for j, group in enumerate(hash_spec.tag_groups):
        parity = 0
        for src in group:
            if src.register == "phrt":
                parity ^= (phrt_img >> src.position) & 1
            elif src.register == "phrb":
                parity ^= (phrb_img >> src.position) & 1
        mask |= parity << j
    return mask


@dataclass(frozen=True)
class BranchShift:
    before: StaticBranch
    after: StaticBranch
    contribution_before: int
    contribution_after: int


@dataclass(frozen=True)
class PairDelta:
    pcs: tuple  # original (unshifted) pcs, ascending
    distance_before: int
    distance_after: int

    @property
    def delta(self) -> int:
        return self.distance_after - self.distance_before


@dataclass(frozen=True)
class NopWhatifReport:
    config: str
    insertion_point: int | None
    count: int
    branches: tuple
    pairs: tuple

    def branch(self, pc: int) -> BranchShift:
        """Look up a shift row by the branch's original pc."""
        for s in self.branches:
            if s.before.pc == pc:
                return s
        raise KeyError(f"no branch at {pc:#x} in layout")

    def pair(self, pc_a: int, pc_b: int) -> PairDelta:
        """Look up a pair row by the branches' original pcs."""
        key = tuple(sorted((pc_a, pc_b)))
        for p in self.pairs:
            if p.pcs == key:
                return p
        raise KeyError(f"no pair ({pc_a:#x}, {pc_b:#x}) in layout")

    def to_dict(self) -> dict:
        point = None if self.insertion_point is None else f"{self.insertion_point:#x}"
        return {
            "config": self.config,
            "insertion_point": point,
            "count": self.count,
            "branches": [{
                "pc": f"{s.before.pc:#x}", "target": f"{s.before.target:#x}",
                "pc_after": f"{s.after.pc:#x}",
                "target_after": f"{s.after.target:#x}",
                "contribution_before": s.contribution_before,
                "contribution_after": s.contribution_after,
            } for s in self.branches],
            "pairs": [{
                "pcs": [f"{pc:#x}" for pc in p.pcs],
                "distance_before": p.distance_before,
                "distance_after": p.distance_after,
                "delta": p.delta,
            } for p in self.pairs],
        }


def nop_whatif(layout, insertion_point: int | None, config: CbpConfig, *,
               count: int = 1) -> NopWhatifReport:
    """Shift the layout as if ``count`` NOPs were inserted and re-derive tags.

    Every address (branch and target alike) at or past ``insertion_point``
    moves down by 4 bytes per NOP; ``None`` means no insertion. For every
    branch the footprint contribution to the first PHT's tag is recomputed,
    and every unordered pair's contribution Hamming distance is reported
    before and after the shift.
    """
    layout = tuple(layout)
    if not layout:
        raise ValueError("layout is empty")
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    if insertion_point is not None:
        lo = min(min(b.pc, b.target) for b in layout)
        hi = max(max(b.pc, b.target) for b in layout)
        if insertion_point % 4:
            raise ValueError(
                f"insertion point {insertion_point:#x} is not 4-byte aligned")
        if not lo <= insertion_point <= hi + 4:
            raise ValueError(
                f"insertion point {insertion_point:#x} outside layout span "
                f"[{lo:#x}, {hi + 4:#x}]")

    shift = 4 * count

    def move(addr: int) -> int:
        if insertion_point is not None and addr >= insertion_point:
            return addr + shift
        return addr

    pht0 = config.phts[0]
    shifts = []
    for b in layout:
        after = StaticBranch(move(b.pc), move(b.target), b.kind)
        shifts.append(BranchShift(
            before=b, after=after,
            contribution_before=tag_contribution(pht0.hash, config.scheme,
                                                 b.pc, b.target),
            contribution_after=tag_contribution(pht0.hash, config.scheme,
                                                after.pc, after.target)))

    pairs = []
    for a, b in combinations(shifts, 2):
        first, second = sorted((a, b), key=lambda s: s.before.pc)
        pairs.append(PairDelta(
            pcs=(first.before.pc, second.before.pc),
            distance_before=(first.contribution_before
                             ^ second.contribution_before).bit_count(),
            distance_after=(first.contribution_after
                            ^ second.contribution_after).bit_count()))

    return NopWhatifReport(config=config.name, insertion_point=insertion_point,
                           count=count, branches=tuple(shifts),
                           pairs=tuple(pairs))


# ---------------------------------------------------------------------------
# Branch-list text format: `pc target kind` lines, `#` group headers
# ---------------------------------------------------------------------------


def parse_branch_list(text: str):
    """Parse grouped branch lists.

    A ``#`` line starts a new group named by the rest of the line; branch
    lines are ``pc target kind`` with addresses in any base ``int(x, 0)``
    accepts and kinds by name (cond, uncond, indirect, call, ret). Branches
    before the first header land in a group called "default". Returns
    ``[(group_name, (StaticBranch, ...)), ...]`` in input order.
    """
    groups: list[tuple[str, list[StaticBranch]]] = []
    current: list[StaticBranch] | None = None

    def ensure_group(name: str) -> list[StaticBranch]:
        lst: list[StaticBranch] = []
        groups.append((name, lst))
        return lst

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            current = ensure_group(line.lstrip("#").strip())
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(
                f"line {lineno}: expected 'pc target kind', got {raw!r}")
        try:
            pc, target = int(parts[0], 0), int(parts[1], 0)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad address: {exc}") from None
        if parts[2] not in _KIND_BY_NAME:
            raise ValueError(
                f"line {lineno}: unknown kind {parts[2]!r} "
                f"(expected one of {', '.join(KIND_NAMES)})")
        if current is None:
            current = ensure_group("default")
        current.append(StaticBranch(pc, target, _KIND_BY_NAME[parts[2]]))

    return [(name, tuple(branches)) for name, branches in groups]


def load_branch_list(path):
    """Read and parse a branch-list file; see ``parse_branch_list``."""
    with open(path, encoding="utf-8") as fh:
        return parse_branch_list(fh.read())
