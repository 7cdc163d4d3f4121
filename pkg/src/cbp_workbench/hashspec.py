"""XOR-group hash functions over (PC, PHRT, PHRB).

Every index bit and tag bit of a tagged PHT is the parity of a set of bit
sources; a bit source names one bit of the lookup PC or of a history register.
The whole hash is linear over GF(2), which is what the recovery harness's
zero-test probes rely on.

Bit ordering: index bit k is the parity of ``index_groups[k]``; tag bit j is
the parity of ``tag_groups[j]``. Pass-through tag bits (e.g. PC[5:2] on the
measured parts) are represented as singleton groups appended after the XOR
groups, so a 12-group XOR tag plus PC[5:2] occupies tag bits 0..11 and 12..15
(tag bit 12 = PC[2], ..., tag bit 15 = PC[5]).
"""

from __future__ import annotations

from dataclasses import dataclass

REGISTERS = ("pc", "phrt", "phrb")
_REG_RANK = {r: i for i, r in enumerate(REGISTERS)}


@dataclass(frozen=True)
class BitSource:
    register: str
    position: int

    def __post_init__(self):
        if self.register not in REGISTERS:
            raise ValueError(f"unknown register {self.register!r} (expected one of {REGISTERS})")
        if self.position < 0:
            raise ValueError(f"negative bit position {self.position}")

    def sort_key(self):
        return (_REG_RANK[self.register], self.position)

    def __repr__(self):
        return f"{self.register.upper()}[{self.position}]"


@dataclass(frozen=True)
class XorGroup:
    """Non-empty, duplicate-free, canonically ordered set of bit sources."""

    sources: tuple[BitSource, ...]

    def __post_init__(self):
        if not self.sources:
            raise ValueError("empty XOR group")
        canon = tuple(sorted(self.sources, key=BitSource.sort_key))
        if len(set(canon)) != len(canon):
            raise ValueError(f"duplicate bit source in group {canon}")
        object.__setattr__(self, "sources", canon)

    @classmethod
    def of(cls, *sources) -> "XorGroup":
        """Build from (register, position) pairs or BitSource objects."""
        return cls(tuple(s if isinstance(s, BitSource) else BitSource(*s) for s in sources))

    def __iter__(self):
        return iter(self.sources)

    def __len__(self):
        return len(self.sources)

    def __repr__(self):
        return " ^ ".join(repr(s) for s in self.sources)


@dataclass(frozen=True)
class HashSpec:
    index_groups: tuple[XorGroup, ...]
    tag_groups: tuple[XorGroup, ...]

    def __post_init__(self):
        for kind in ("index_groups", "tag_groups"):
            seen: dict[BitSource, int] = {}
            for gi, group in enumerate(getattr(self, kind)):
                for src in group:
                    if src in seen:
                        raise ValueError(
                            f"{kind}[{gi}] reuses {src!r} already in {kind}[{seen[src]}]")
                    seen[src] = gi

    @property
    def index_bits(self) -> int:
        return len(self.index_groups)

    @property
    def tag_bits(self) -> int:
        return len(self.tag_groups)

    def sources(self, kind: str):
        groups = self.index_groups if kind == "index" else self.tag_groups
        for group in groups:
            yield from group


def eval_group(group: XorGroup, pc: int, state) -> int:
    """Parity of the group's bits for a lookup at ``pc`` with history ``state``."""
    acc = 0
    for src in group:
        if src.register == "pc":
            acc ^= (pc >> src.position) & 1
        elif src.register == "phrt":
            acc ^= (state.phrt >> src.position) & 1
        else:
            acc ^= (state.phrb >> src.position) & 1
    return acc


def _eval_groups(groups, pc: int, state) -> int:
    value = 0
    for k, group in enumerate(groups):
        value |= eval_group(group, pc, state) << k
    return value


def compute_index(spec: HashSpec, pc: int, state) -> int:
    return _eval_groups(spec.index_groups, pc, state)


def compute_tag(spec: HashSpec, pc: int, state) -> int:
    return _eval_groups(spec.tag_groups, pc, state)


def folded_hash(value: int, width: int) -> int:
    """XOR-fold an arbitrarily wide bit vector into ``width`` bits.

    Segment i covers bits [i*width, (i+1)*width); a single set bit at position
    p lands at output bit p % width.
    """
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    out = 0
    mask = (1 << width) - 1
    while value:
        out ^= value & mask
        value >>= width
    return out
