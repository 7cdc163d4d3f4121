"""Path-history register (PHR) model.

A footprint scheme selects which bits of a taken branch's own address (B) and
of its target address (T) are XORed into the history registers. Split schemes
keep two registers: PHRT receives the target slice, PHRB the branch slice.
Unified schemes keep a single register (held in ``phrt``; ``phrb`` is 0 wide)
and XOR both slices in at offset 0.

Update rule for one retired branch: not-taken conditionals leave the state
untouched; every taken branch (conditional or not) first shifts each register
left by ``shift_amount`` (truncating at the register width, bit 0 = newest),
then XORs its footprint in at offset 0. Footprint slice bit i lands at
register bit i.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class FootprintScheme:
    """Which address bits feed the history registers, and the per-branch shift."""

    name: str
    branch_bits: tuple[int, ...]  # ascending bit positions of B
    target_bits: tuple[int, ...]  # ascending bit positions of T
    split: bool                   # True: (PHRT, PHRB); False: single register
    shift_amount: int = 1

    def __post_init__(self):
        for attr in ("branch_bits", "target_bits"):
            bits = getattr(self, attr)
            if list(bits) != sorted(set(bits)) or (bits and bits[0] < 0):
                raise ValueError(f"{attr} must be ascending, unique, non-negative: {bits!r}")
        if self.shift_amount < 1:
            raise ValueError(f"shift_amount must be >= 1, got {self.shift_amount}")


@dataclass(frozen=True)
class Footprint:
    """Per-branch history contribution: slice of T bits and slice of B bits."""

    t_part: int
    b_part: int


@dataclass(frozen=True)
class HistoryState:
    """Register contents plus widths. Bit 0 is the newest position."""

    phrt: int
    phrb: int
    phrt_width: int
    phrb_width: int

    def __post_init__(self):
        if self.phrt >> self.phrt_width or self.phrb >> self.phrb_width:
            raise ValueError("register value exceeds its width")

    def bit(self, register: str, position: int) -> int:
        _check_position(self, register, position)
        value = self.phrt if register == "phrt" else self.phrb
        return (value >> position) & 1


def initial_state(phrt_width: int, phrb_width: int) -> HistoryState:
    return HistoryState(0, 0, phrt_width, phrb_width)


def _extract(addr: int, bits: tuple[int, ...]) -> int:
    part = 0
    for i, b in enumerate(bits):
        part |= ((addr >> b) & 1) << i
    return part


def compute_footprint(scheme: FootprintScheme, branch: int, target: int) -> Footprint:
    """Slice the branch/target addresses per the scheme."""
    return Footprint(t_part=_extract(target, scheme.target_bits),
                     b_part=_extract(branch, scheme.branch_bits))


def update_history(state: HistoryState, scheme: FootprintScheme, record) -> HistoryState:
    """Advance the history by one retired branch record.

    ``record`` needs ``pc``, ``target`` and ``taken`` attributes. Not-taken
    branches are a no-op.
    """
    if not record.taken:
        return state
    fp = compute_footprint(scheme, record.pc, record.target)
    mask_t = (1 << state.phrt_width) - 1
    mask_b = (1 << state.phrb_width) - 1
    s = scheme.shift_amount
    if scheme.split:
        phrt = ((state.phrt << s) & mask_t) ^ (fp.t_part & mask_t)
        phrb = ((state.phrb << s) & mask_b) ^ (fp.b_part & mask_b)
    else:
        phrt = ((state.phrt << s) & mask_t) ^ ((fp.t_part ^ fp.b_part) & mask_t)
        phrb = 0
    return HistoryState(phrt, phrb, state.phrt_width, state.phrb_width)


def _check_position(state: HistoryState, register: str, position: int) -> None:
    widths = {"phrt": state.phrt_width, "phrb": state.phrb_width}
    if register not in widths:
        raise ValueError(f"unknown register {register!r} (expected 'phrt' or 'phrb')")
    if not 0 <= position < widths[register]:
        raise ValueError(
            f"position {position} out of range for {register} of width {widths[register]}")


def inject_bit(state: HistoryState, register: str, position: int, value: int) -> HistoryState:
    """Return a state with one register bit overwritten. Errors on out-of-range."""
    _check_position(state, register, position)
    if value not in (0, 1):
        raise ValueError(f"value must be 0 or 1, got {value!r}")
    if register == "phrt":
        phrt = (state.phrt & ~(1 << position)) | (value << position)
        return HistoryState(phrt, state.phrb, state.phrt_width, state.phrb_width)
    phrb = (state.phrb & ~(1 << position)) | (value << position)
    return HistoryState(state.phrt, phrb, state.phrt_width, state.phrb_width)
