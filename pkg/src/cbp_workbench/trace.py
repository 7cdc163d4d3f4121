"""Branch-trace records, in-memory buffers, and on-disk formats.

A trace is a sequence of retired-branch records. Each record carries the
branch PC, its (would-be) target, the branch kind, the taken flag, and
``inst_gap``: how many non-branch instructions retired since the previous
record (used for MPKI denominators).

On-disk formats
---------------
text    whitespace-separated ``pc target kind taken gap``, one record per
        line; ``#`` starts a comment; pc/target in hex (0x...) or decimal.
binary  magic header ``CBPT\\x01`` followed by little-endian 22-byte records
        ``(pc: u64, target: u64, kind: u8, taken: u8, inst_gap: u32)``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

KIND_COND = 0
KIND_UNCOND = 1
KIND_INDIRECT = 2
KIND_CALL = 3
KIND_RET = 4

KIND_NAMES = ("cond", "uncond", "indirect", "call", "ret")
_KIND_BY_NAME = {n: i for i, n in enumerate(KIND_NAMES)}

MAGIC = b"CBPT\x01"

RECORD_DTYPE = np.dtype([("pc", "<u8"), ("target", "<u8"), ("kind", "u1"),
                         ("taken", "u1"), ("gap", "<u4")])
assert RECORD_DTYPE.itemsize == 22


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class BranchRecord:
    pc: int
    target: int
    kind: int
    taken: bool
    inst_gap: int = 0

    def __post_init__(self):
        if not (0 <= self.pc < 1 << 64) or not (0 <= self.target < 1 << 64):
            raise TraceError(f"address out of range: pc={self.pc:#x} target={self.target:#x}")
        if not (0 <= self.kind <= KIND_RET):
            raise TraceError(f"unknown branch kind {self.kind}")
        if self.kind != KIND_COND and not self.taken:
            raise TraceError(
                f"{KIND_NAMES[self.kind]} branch at {self.pc:#x} cannot be not-taken")
        if self.inst_gap < 0:
            raise TraceError(f"negative inst_gap at {self.pc:#x}")


@dataclass(frozen=True)
class TraceMeta:
    name: str
    record_count: int
    total_instructions: int


class TraceBuffer:
    """Structure-of-arrays trace storage (what the simulation engine consumes)."""

    __slots__ = ("pc", "target", "kind", "taken", "gap")

    def __init__(self, pc, target, kind, taken, gap):
        self.pc = np.ascontiguousarray(pc, dtype=np.uint64)
        self.target = np.ascontiguousarray(target, dtype=np.uint64)
        self.kind = np.ascontiguousarray(kind, dtype=np.uint8)
        self.taken = np.ascontiguousarray(taken, dtype=np.uint8)
        self.gap = np.ascontiguousarray(gap, dtype=np.uint32)
        n = len(self.pc)
        if not all(len(a) == n for a in (self.target, self.kind, self.taken, self.gap)):
            raise TraceError("column length mismatch")

    @classmethod
    def from_records(cls, records) -> "TraceBuffer":
        cols = ([], [], [], [], [])
        for r in records:
            cols[0].append(r.pc)
            cols[1].append(r.target)
            cols[2].append(r.kind)
            cols[3].append(1 if r.taken else 0)
            cols[4].append(r.inst_gap)
        return cls(*cols)

    @classmethod
    def concat(cls, buffers) -> "TraceBuffer":
        buffers = list(buffers)
        return cls(*(np.concatenate([getattr(b, f) for b in buffers])
                     for f in ("pc", "target", "kind", "taken", "gap")))

    def __len__(self):
        return len(self.pc)

    def __getitem__(self, sl) -> "TraceBuffer":
        if not isinstance(sl, slice):
            raise TypeError("TraceBuffer supports slice indexing only")
        return TraceBuffer(self.pc[sl], self.target[sl], self.kind[sl],
                           self.taken[sl], self.gap[sl])

    @property
    def total_instructions(self) -> int:
        return int(self.gap.sum(dtype=np.int64)) + len(self)

    def meta(self, name: str) -> TraceMeta:
        return TraceMeta(name=name, record_count=len(self),
                         total_instructions=self.total_instructions)

    def validate(self) -> None:
        if len(self) and int(self.kind.max(initial=0)) > KIND_RET:
            bad = int(np.argmax(self.kind > KIND_RET))
            raise TraceError(f"record {bad}: unknown branch kind {self.kind[bad]}")
        contradict = (self.kind != KIND_COND) & (self.taken == 0)
        if contradict.any():
            bad = int(np.argmax(contradict))
            raise TraceError(f"record {bad}: {KIND_NAMES[self.kind[bad]]} branch "
                             f"at {int(self.pc[bad]):#x} cannot be not-taken")

    def records(self):
        for i in range(len(self)):
            yield BranchRecord(int(self.pc[i]), int(self.target[i]), int(self.kind[i]),
                               bool(self.taken[i]), int(self.gap[i]))

    def __eq__(self, other):
        if not isinstance(other, TraceBuffer):
            return NotImplemented
        return all(np.array_equal(getattr(self, f), getattr(other, f))
                   for f in ("pc", "target", "kind", "taken", "gap"))


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

def _parse_addr(tok: str, lineno: int) -> int:
    try:
        return int(tok, 0)
    except ValueError:
        raise TraceError(f"line {lineno}: bad address {tok!r}") from None


def iter_text(fh):
    """Yield validated BranchRecords from a text-format stream."""
    for lineno, line in enumerate(fh, start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if len(parts) != 5:
            raise TraceError(f"line {lineno}: expected 5 fields, got {len(parts)}")
        pc = _parse_addr(parts[0], lineno)
        target = _parse_addr(parts[1], lineno)
        if parts[2] not in _KIND_BY_NAME:
            raise TraceError(f"line {lineno}: unknown kind {parts[2]!r}")
        kind = _KIND_BY_NAME[parts[2]]
        if parts[3] not in ("0", "1"):
            raise TraceError(f"line {lineno}: taken must be 0 or 1, got {parts[3]!r}")
        try:
            gap = int(parts[4])
        except ValueError:
            raise TraceError(f"line {lineno}: bad inst_gap {parts[4]!r}") from None
        try:
            yield BranchRecord(pc, target, kind, parts[3] == "1", gap)
        except TraceError as exc:
            raise TraceError(f"line {lineno}: {exc}") from None


def write_text(fh, records) -> int:
    n = 0
    for r in records:
        fh.write(f"{r.pc:#x} {r.target:#x} {KIND_NAMES[r.kind]} "
                 f"{1 if r.taken else 0} {r.inst_gap}\n")
        n += 1
    return n


# ---------------------------------------------------------------------------
# Binary format
# ---------------------------------------------------------------------------

def read_binary(fh) -> TraceBuffer:
    header = fh.read(len(MAGIC))
    if header != MAGIC:
        raise TraceError(f"bad magic {header!r}; not a binary trace")
    payload = fh.read()
    if len(payload) % RECORD_DTYPE.itemsize:
        raise TraceError(f"truncated trace: {len(payload)} payload bytes is not a "
                         f"multiple of {RECORD_DTYPE.itemsize}")
    raw = np.frombuffer(payload, dtype=RECORD_DTYPE)
    buf = TraceBuffer(raw["pc"], raw["target"], raw["kind"], raw["taken"], raw["gap"])
    buf.validate()
    return buf


def write_binary(fh, buf: TraceBuffer) -> int:
    raw = np.empty(len(buf), dtype=RECORD_DTYPE)
    raw["pc"] = buf.pc
    raw["target"] = buf.target
    raw["kind"] = buf.kind
    raw["taken"] = buf.taken
    raw["gap"] = buf.gap
    fh.write(MAGIC)
    fh.write(raw.tobytes())
    return len(buf)


# ---------------------------------------------------------------------------
# Front door
# ---------------------------------------------------------------------------

def detect_format(path) -> str:
    with open(path, "rb") as fh:
        return "binary" if fh.read(len(MAGIC)) == MAGIC else "text"


def parse_trace(path, format: str = "auto") -> TraceBuffer:
    """Load a trace file into memory, validating every record."""
    if format == "auto":
        format = detect_format(path)
    if format == "binary":
        with open(path, "rb") as fh:
            return read_binary(fh)
    if format == "text":
        with open(path, encoding="utf-8") as fh:
            return TraceBuffer.from_records(iter_text(fh))
    raise TraceError(f"unknown trace format {format!r}")


def save_trace(path, buf: TraceBuffer, format: str = "binary") -> None:
    if format == "binary":
        with open(path, "wb") as fh:
            write_binary(fh, buf)
    elif format == "text":
        with open(path, "w", encoding="utf-8") as fh:
            write_text(fh, buf.records())
    else:
        raise TraceError(f"unknown trace format {format!r}")


def loads_text(text: str) -> TraceBuffer:
    return TraceBuffer.from_records(iter_text(io.StringIO(text)))
