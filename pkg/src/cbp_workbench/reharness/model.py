"""Recovered-predictor model: what the black-box probing pipeline can claim.

A `RecoveredModel` holds exactly the facts that misprediction-count probing
can establish: global history parameters (depth, shift, footprint bit maps)
and, per prediction table, history lengths plus — where the hash was fully
read out — associativity, PC inputs, and the XOR tag/index groups.

Group recovery is exact only up to two symmetries of the black box:

* permuting whole tag groups (or whole index groups) relabels hash bits
  without changing any observable count, so groups compare as multisets;
* the presentation order used here (documented in `canonical_groups`) is a
  convention chosen so that recovered listings line up with the reference
  configs shipped in `configs.py`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from ..configs import CbpConfig
from ..hashspec import BitSource, XorGroup

__all__ = [
    "RecoveredPht",
    "RecoveredModel",
    "canonical_groups",
    "diff_against",
    "diff_is_clean",
]


def _group_key(group: XorGroup):
    """Sort key for canonical group presentation.

    Multi-source groups come first, ordered by their smallest PC bit (groups
    without a PC member sort after those with one, by smallest PHRT position,
    then smallest PHRB position).  Single-source groups (PC pass-through bits
    and the like) follow, with the same inner ordering.
    """
    pcs = [s.position for s in group.sources if s.register == "pc"]
    phrts = [s.position for s in group.sources if s.register == "phrt"]
    phrbs = [s.position for s in group.sources if s.register == "phrb"]
    big = 1 << 30
    return (
        1 if len(group.sources) == 1 else 0,
        min(phrts) if phrts else big,
        min(phrbs) if phrbs else big,
        min(pcs) if pcs else big,
    )


def _tag_group_key(group: XorGroup):
    pcs = [s.position for s in group.sources if s.register == "pc"]
    phrts = [s.position for s in group.sources if s.register == "phrt"]
    phrbs = [s.position for s in group.sources if s.register == "phrb"]
    big = 1 << 30
    return (
        1 if len(group.sources) == 1 else 0,
        min(pcs) if pcs else big,
        min(phrts) if phrts else big,
        min(phrbs) if phrbs else big,
    )


def canonical_groups(groups, kind: str) -> tuple[XorGroup, ...]:
    """Deterministic presentation order for recovered XOR groups.

    Tag groups: multi-source groups by smallest PC bit (PC-less groups after,
    by smallest PHRT position), then single-source groups ascending.  Index
    groups: multi-source groups by smallest PHRT position (PHRT-less groups
    after), then single-source groups.  This matches the ordering used by the
    built-in reference configs.
    """
    key = _tag_group_key if kind == "tag" else _group_key
    return tuple(sorted(groups, key=key))


@dataclass(frozen=True)
class RecoveredPht:
    """One prediction table as seen through the probe pipeline."""

    phrt_len: int
    phrb_len: int | None
    status: str  # "recovered" (full hash) or "lengths-only"
    assoc: int | None = None
    pc_bits: tuple[int, ...] | None = None
    index_pc_bits: tuple[int, ...] | None = None
    tag_groups: tuple[XorGroup, ...] | None = None
    index_groups: tuple[XorGroup, ...] | None = None

    @property
    def index_bits(self) -> int | None:
        return None if self.index_groups is None else len(self.index_groups)

    def to_dict(self) -> dict:
        d: dict = {
            "phrt_len": self.phrt_len,
            "phrb_len": self.phrb_len,
            "status": self.status,
        }
        if self.status == "recovered":
            d["assoc"] = self.assoc
            d["pc_bits"] = list(self.pc_bits or ())
            d["index_pc_bits"] = list(self.index_pc_bits or ())
            d["index_bits"] = self.index_bits
            d["tag_groups"] = [_group_dict(g) for g in self.tag_groups or ()]
            d["index_groups"] = [_group_dict(g) for g in self.index_groups or ()]
        return d


def _group_dict(group: XorGroup) -> list[dict]:
    return [{"register": s.register, "position": s.position} for s in group.sources]


@dataclass(frozen=True)
class RecoveredModel:
    """Everything the recovery pipeline established about a black box."""

    phr_depth: int
    shift_amount: int
    branch_bits: tuple[int, ...]
    target_bits: tuple[int, ...]
    phrb_width: int
    phts: tuple[RecoveredPht, ...]
    truncated: bool = False
    confidence: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "phr_depth": self.phr_depth,
            "shift_amount": self.shift_amount,
            "branch_bits": list(self.branch_bits),
            "target_bits": list(self.target_bits),
            "phrb_width": self.phrb_width,
            "phts": [p.to_dict() for p in self.phts],
            "truncated": self.truncated,
            "confidence": dict(sorted(self.confidence.items())),
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _sources_set(group: XorGroup) -> frozenset:
    return frozenset((s.register, s.position) for s in group.sources)


def _compare(section: dict, name: str, expected, recovered) -> None:
    if expected != recovered:
        section[name] = {"expected": expected, "recovered": recovered}


def _group_multiset(groups) -> list:
    return sorted(sorted(_sources_set(g)) for g in groups)


def diff_against(model: RecoveredModel, reference: CbpConfig) -> dict:
    """Machine-readable diff of a recovered model against a reference config.

    Returns ``{"phr": {...}, "phts": [{...}, ...], "pht_count": {...}}`` where
    each inner dict maps a field name to ``{"expected": ..., "recovered": ...}``
    and is empty when that section matches.  Groups compare as multisets of
    source sets (group order itself carries no black-box-visible information).
    Tables beyond what the pipeline resolved are reported in ``pht_count``
    only.
    """
    scheme = reference.scheme
    phr: dict = {}
    _compare(phr, "phr_depth", reference.phts[0].phrt_len, model.phr_depth)
    _compare(phr, "shift_amount", scheme.shift_amount, model.shift_amount)
    _compare(phr, "branch_bits", list(scheme.branch_bits), list(model.branch_bits))
    _compare(phr, "target_bits", list(scheme.target_bits), list(model.target_bits))
    _compare(phr, "phrb_width", reference.phts[0].phrb_len, model.phrb_width)

    phts: list[dict] = []
    for i, rec in enumerate(model.phts):
        section: dict = {}
        if i >= len(reference.phts):
            section["extra_table"] = {"expected": None, "recovered": rec.phrt_len}
            phts.append(section)
            continue
        ref = reference.phts[i]
        _compare(section, "phrt_len", ref.phrt_len, rec.phrt_len)
        _compare(section, "phrb_len", ref.phrb_len, rec.phrb_len)
        if rec.status == "recovered":
            _compare(section, "assoc", ref.assoc, rec.assoc)
            _compare(section, "index_bits", ref.index_bits, rec.index_bits)
            ref_pc = sorted(
                {s.position for g in (ref.hash.tag_groups + ref.hash.index_groups)
                 for s in g.sources if s.register == "pc"}
            )
            _compare(section, "pc_bits", ref_pc, sorted(rec.pc_bits or ()))
            ref_idx_pc = sorted(
                {s.position for g in ref.hash.index_groups
                 for s in g.sources if s.register == "pc"}
            )
            _compare(section, "index_pc_bits", ref_idx_pc, sorted(rec.index_pc_bits or ()))
            _compare(
                section,
                "tag_groups",
                _group_multiset(ref.hash.tag_groups),
                _group_multiset(rec.tag_groups or ()),
            )
            _compare(
                section,
                "index_groups",
                _group_multiset(ref.hash.index_groups),
                _group_multiset(rec.index_groups or ()),
            )
        phts.append(section)

    count: dict = {}
    if len(model.phts) != len(reference.phts):
        count = {
            "expected": len(reference.phts),
            "recovered": len(model.phts),
            "truncated": model.truncated,
        }
    return {"phr": phr, "phts": phts, "pht_count": count}


def diff_is_clean(diff: dict, *, require_all_tables: bool = False) -> bool:
    """True when every compared section is empty.

    With ``require_all_tables`` the table count must match too (no honest
    truncation allowed) — used for the seeded toy round-trips where every
    planted table must resolve.
    """
    if diff["phr"]:
        return False
    if any(section for section in diff["phts"]):
        return False
    if require_all_tables and diff["pht_count"]:
        return False
    return True
