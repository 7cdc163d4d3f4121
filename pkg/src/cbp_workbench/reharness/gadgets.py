"""Probe-trace construction for black-box predictor recovery.

A probe iteration is a short branch sequence executed thousands of times:

    [flush chain] (+ dispatcher) + conditional   ... repeated per block

* The **flush chain** is `chain_len` always-taken indirect branches at fixed
  pseudo-random addresses.  It pushes `chain_len` footprints through the
  history registers, so the state each conditional observes is a pure
  function of the iteration's own records — whatever ran before is gone.
* **Injections** flip one history bit (or one PC bit of the conditional)
  conditioned on a per-iteration random variable.  They compile down to
  XOR patches on specific records, placed so the flipped footprint bit lands
  exactly on the requested register position by prediction time.
* The **dispatcher** is an indirect branch just before the conditional whose
  target is the conditional's address.  Blocks that flip conditional-PC bits
  are dispatched: the dispatcher's target moves with the PC flip, and a
  compensation patch one branch earlier cancels the history contamination
  the moving target would otherwise introduce.
* **Noise** re-randomizes the footprints of all chain records at depth >=
  some threshold every iteration, which scrambles every history position at
  or above that threshold while leaving lower positions untouched.

Directions of the conditionals are XOR combinations of the same variables,
so a probe's misprediction rate reveals whether the predictor can see the
injected bits — the only signal the black box emits.

Every template is validated before use by an independent re-derivation: the
patched records are replayed through `history.update_history` and the
resulting state deltas must equal the template's claims exactly, and a
from-two-initial-states replay must agree at every conditional (flush
check).  Templates are cached by their full structural description.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np

from ..history import FootprintScheme, HistoryState, update_history
from ..rng import Stream, bulk_bits, bulk_u64, derive
from ..trace import KIND_COND, KIND_INDIRECT, TraceBuffer

__all__ = [
    "GadgetError",
    "GENEROUS_SCHEME",
    "JITTER_DUTY",
    "Injection",
    "RawPatch",
    "CondSpec",
    "BlockSpec",
    "ProbeSpec",
    "Patch",
    "NoisePatch",
    "VarClaim",
    "ProbeTemplate",
    "build_template",
    "single_block",
]


class GadgetError(ValueError):
    """A probe spec that cannot be compiled into a valid trace."""


#: Scheme used to interpret raw (scheme-free) patches: a 1-per-branch shift
#: with the widest footprint slices the workbench supports.  Raw probes are
#: defined purely by record-level patches; this scheme only provides their
#: bookkeeping claims for the self-check.
GENEROUS_SCHEME = FootprintScheme(
    name="probe-generic",
    branch_bits=tuple(range(2, 6)),
    target_bits=tuple(range(2, 32)),
    split=True,
    shift_amount=1,
)

_CHAIN_PC_BASE = 0x4000_0000
_CHAIN_TARGET_BASE = 0x2000_0000
_DISPATCH_PC = 0x0030_0040

_NOISE_T_WIDTH = 30  # slice bits randomized on chain targets
_NOISE_B_WIDTH = 4   # slice bits randomized on chain PCs

#: Measured-phase duty cycle of jitter variables (see ProbeSpec): low enough
#: that a true-low misprediction rate stays inside its band, high enough that
#: a pinned provider entry mispredicts within a few dozen iterations.
JITTER_DUTY = 0.025
_JITTER_THRESH = np.uint64(int(JITTER_DUTY * 2.0**64))


# ---------------------------------------------------------------------------
# Probe description (what the pipeline writes)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Injection:
    """Flip `register[position]` (or conditional PC bit) with variable `var`."""

    var: str
    register: str  # "phrt" | "phrb" | "pc"
    position: int


@dataclass(frozen=True)
class RawPatch:
    """Scheme-free patch: flip `field` bit `bit` on the chain record at `depth`."""

    var: str
    field: str  # "pc" | "target"
    bit: int
    depth: int


@dataclass(frozen=True)
class CondSpec:
    pc: int
    dir_vars: tuple[str, ...] = ()
    invert: bool = False


@dataclass(frozen=True)
class BlockSpec:
    cond: CondSpec
    injections: tuple[Injection, ...] = ()
    raw_patches: tuple[RawPatch, ...] = ()
    dispatch: bool = False


@dataclass(frozen=True)
class ProbeSpec:
    """A probe: flush chain plus one or more conditional blocks.

    `settle_vars` names variables held at 0 for the warm-up prefix of every
    batch (the iterations the runner discards anyway).  Holding the test
    variables down while the forcing variable runs lets the table under
    test allocate an entry for every forcer context before the measurement
    starts.  Without that, a shorter table can end up providing the
    predictions for a context the longer table never allocates: it then
    trains only on that captured slice, whose direction is deterministic
    given what it sees, stops mispredicting, and freezes the allocation
    that would have broken the loop — pinning the measured rate below its
    steady-state value for the whole run.

    `jitter_vars` are direction-only coins with a time-varying duty cycle:
    fair during the warm-up prefix, then down to a low duty for the
    measured window.  The fair phase makes the warm-up direction a coin
    from every table's point of view, so the allocation cascade reaches
    the table under test no matter what the other tables manage to learn.
    The low-duty phase guards against absorbing lock-ups: a shorter table
    that ends up providing a slice of iterations on which the direction is
    constant given its own context would otherwise stop mispredicting
    entirely, freezing the allocation flow and pinning the measured rate
    in a no-man's-land between bands.  The jitter gives every such pinned
    entry a steady trickle of mispredictions, so the allocation that
    dissolves the lock always fires; a true-low rate only rises by the
    duty, and a fair-coin rate stays exactly where it was.
    """

    label: str
    chain_len: int
    blocks: tuple[BlockSpec, ...]
    noise_min_depth: int | None = None
    settle_vars: tuple[str, ...] = ()
    jitter_vars: tuple[str, ...] = ()

    def __post_init__(self):
        if self.chain_len < 1:
            raise GadgetError("chain_len must be positive")
        if not self.blocks:
            raise GadgetError("probe needs at least one block")


def single_block(label: str, chain_len: int, cond: CondSpec, *,
                 injections: tuple[Injection, ...] = (),
                 raw_patches: tuple[RawPatch, ...] = (),
                 dispatch: bool = False,
                 noise_min_depth: int | None = None,
                 settle_vars: tuple[str, ...] = (),
                 jitter_vars: tuple[str, ...] = ()) -> ProbeSpec:
    """Convenience constructor for the common one-conditional probe."""
    block = BlockSpec(cond=cond, injections=injections,
                      raw_patches=raw_patches, dispatch=dispatch)
    return ProbeSpec(label=label, chain_len=chain_len, blocks=(block,),
                     noise_min_depth=noise_min_depth, settle_vars=settle_vars,
                     jitter_vars=jitter_vars)


# ---------------------------------------------------------------------------
# Compiled form (what materialization executes)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Patch:
    """``field[slot] ^= delta`` whenever XOR of `vars` (xor `invert`) is 1."""

    slot: int
    field: str  # "pc" | "target" | "taken"
    delta: int
    vars: tuple[str, ...] = ()
    invert: bool = False


@dataclass(frozen=True)
class NoisePatch:
    """``field[slot] ^= fresh_random(width) << shift`` every iteration."""

    slot: int
    field: str  # "pc" | "target"
    shift: int
    width: int


@dataclass(frozen=True)
class VarClaim:
    """Exact state effect of setting one variable, at each conditional slot."""

    phrt_deltas: tuple[int, ...]
    phrb_deltas: tuple[int, ...]
    pc_deltas: tuple[int, ...]

    @property
    def zero(self) -> bool:
        return not any(self.phrt_deltas + self.phrb_deltas + self.pc_deltas)


@functools.lru_cache(maxsize=16)
def _chain_addresses(n: int) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Fixed pseudo-random flush-chain addresses, shared by every probe."""
    s = Stream(derive(0, "probe-chain"))
    pcs = tuple(_CHAIN_PC_BASE | (s.below(1 << 22) << 2) for _ in range(n))
    targets = tuple(_CHAIN_TARGET_BASE | (s.below(1 << 22) << 2) for _ in range(n))
    return pcs, targets


class ProbeTemplate:
    """One compiled probe iteration plus its patch program and claims."""

    def __init__(self, spec: ProbeSpec, scheme: FootprintScheme,
                 base: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
                 cond_slots: tuple[int, ...],
                 patches: tuple[Patch, ...],
                 noise: tuple[NoisePatch, ...],
                 claims: dict):
        self.spec = spec
        self.scheme = scheme
        self.base_pc, self.base_target, self.base_kind, self.base_taken = base
        self.cond_slots = cond_slots
        self.patches = patches
        self.noise = noise
        self.claims = claims  # var name -> VarClaim
        self.n_records = len(self.base_pc)
        self.n_conds = len(cond_slots)
        self.var_names = tuple(sorted(claims))

    @property
    def label(self) -> str:
        return self.spec.label

    def materialize(self, seed: int, n_iters: int,
                    settle: int = 0) -> TraceBuffer:
        """Expand to `n_iters` iterations with fresh variable/noise draws.

        `settle` is the caller's warm-up length (the prefix it will discard
        from measurement).  The spec's `settle_vars` are held at 0 for the
        first half of it, so the predictor builds its forcer-only working
        set first and then absorbs the test variables' allocation transient
        while still inside the discarded window; `jitter_vars` run as fair
        coins through the warm-up and at a low duty cycle from `settle`
        onward.
        """
        stride = self.n_records
        pc = np.tile(self.base_pc, n_iters)
        target = np.tile(self.base_target, n_iters)
        kind = np.tile(self.base_kind, n_iters)
        taken = np.tile(self.base_taken, n_iters)
        bits = {v: bulk_bits(derive(seed, "var", v), n_iters)
                for v in self.var_names}
        if settle:
            for v in self.spec.settle_vars:
                if v in bits:
                    bits[v][: settle // 2] = 0
        for v in self.spec.jitter_vars:
            if v in bits:
                u = bulk_u64(derive(seed, "var", v), n_iters)
                bits[v][settle:] = u[settle:] < _JITTER_THRESH
        offsets = np.arange(n_iters, dtype=np.int64) * stride
        for p in self.patches:
            parity = np.zeros(n_iters, dtype=np.uint64)
            for v in p.vars:
                parity ^= bits[v]
            if p.invert:
                parity ^= np.uint64(1)
            idx = offsets[parity == 1] + p.slot
            if p.field == "taken":
                taken[idx] ^= np.uint8(p.delta)
            elif p.field == "pc":
                pc[idx] ^= np.uint64(p.delta)
            else:
                target[idx] ^= np.uint64(p.delta)
        for n in self.noise:
            vals = bulk_u64(derive(seed, "noise", f"{n.slot}:{n.field}"), n_iters)
            vals = (vals & np.uint64((1 << n.width) - 1)) << np.uint64(n.shift)
            arr = pc if n.field == "pc" else target
            arr[n.slot::stride] ^= vals
        return TraceBuffer(pc, target, kind, taken,
                           np.zeros(stride * n_iters, dtype=np.uint32))

    # -- self-check ---------------------------------------------------------

    def _iteration_states(self, assignment: dict, init: HistoryState | None = None):
        """Replay one iteration in the reference history model.

        Returns (states, pcs): history state and conditional PC observed at
        each conditional slot, honoring `assignment` (variable -> 0/1).
        """
        wt = min(192, self.spec.chain_len)
        wb = min(64, self.spec.chain_len)
        state = init if init is not None else HistoryState(0, 0, wt, wb)
        pc = [int(x) for x in self.base_pc]
        target = [int(x) for x in self.base_target]
        taken = [int(x) for x in self.base_taken]
        for p in self.patches:
            value = sum(assignment.get(v, 0) for v in p.vars) & 1
            if p.invert:
                value ^= 1
            if value:
                if p.field == "pc":
                    pc[p.slot] ^= p.delta
                elif p.field == "target":
                    target[p.slot] ^= p.delta
                else:
                    taken[p.slot] ^= p.delta
        states, pcs = [], []
        for slot in range(self.n_records):
            if slot in self.cond_slots:
                states.append(state)
                pcs.append(pc[slot])
            rec = SimpleNamespace(pc=pc[slot], target=target[slot], taken=taken[slot])
            state = update_history(state, self.scheme, rec)
        return states, pcs

    def self_check(self) -> None:
        """Re-derive every claim independently; raise GadgetError on mismatch."""
        wt = min(192, self.spec.chain_len)
        wb = min(64, self.spec.chain_len)
        mask_t = (1 << wt) - 1
        mask_b = (1 << wb) - 1
        base_states, base_pcs = self._iteration_states({})
        for var in self.var_names:
            states, pcs = self._iteration_states({var: 1})
            claim = self.claims[var]
            for i in range(self.n_conds):
                got_t = (states[i].phrt ^ base_states[i].phrt) & mask_t
                got_b = (states[i].phrb ^ base_states[i].phrb) & mask_b
                got_pc = pcs[i] ^ base_pcs[i]
                want_t = claim.phrt_deltas[i] & mask_t
                want_b = claim.phrb_deltas[i] & mask_b
                if (got_t, got_b, got_pc) != (want_t, want_b, claim.pc_deltas[i]):
                    raise GadgetError(
                        f"{self.label}: variable {var!r} effect at conditional {i} "
                        f"is (phrt={got_t:#x}, phrb={got_b:#x}, pc={got_pc:#x}), "
                        f"claimed (phrt={want_t:#x}, phrb={want_b:#x}, "
                        f"pc={claim.pc_deltas[i]:#x})")
        scrambled = HistoryState(0xAAAA_5555_AAAA_5555_AAAA_5555_AAAA_5555_AAAA_5555_AAAA_5555 & mask_t,
                                 0x5555_5555_5555_5555 & mask_b, wt, wb)
        alt_states, _ = self._iteration_states({}, init=scrambled)
        for i in range(self.n_conds):
            if ((alt_states[i].phrt ^ base_states[i].phrt) & mask_t
                    or (alt_states[i].phrb ^ base_states[i].phrb) & mask_b):
                raise GadgetError(
                    f"{self.label}: conditional {i} still sees pre-iteration "
                    f"state; flush chain of {self.spec.chain_len} is too short")


# ---------------------------------------------------------------------------
# Compilation
# ---------------------------------------------------------------------------

def _merge_patches(patches: list[Patch]) -> tuple[Patch, ...]:
    merged: dict = {}
    order: list = []
    for p in patches:
        vars_norm = tuple(sorted(set(p.vars)))
        if len(vars_norm) != len(p.vars):
            raise GadgetError(f"duplicate variable in patch vars {p.vars!r}")
        key = (p.slot, p.field, vars_norm, p.invert)
        if key not in merged:
            merged[key] = 0
            order.append(key)
        merged[key] ^= p.delta
    out = [Patch(slot, field, merged[(slot, field, vars, inv)], vars, inv)
           for (slot, field, vars, inv) in order
           if merged[(slot, field, vars, inv)] != 0]
    return tuple(sorted(out, key=lambda p: (p.slot, p.field, p.vars, p.invert)))


class _BlockLayout:
    """Slot arithmetic for one block within the iteration."""

    def __init__(self, start: int, chain_len: int, dispatch: bool):
        self.start = start
        self.chain_len = chain_len
        self.dispatch = dispatch
        self.n_disp = 1 if dispatch else 0
        self.min_depth = 1 if dispatch else 0
        self.max_depth = chain_len - 1 + self.n_disp
        self.dispatch_slot = start + chain_len if dispatch else None
        self.cond_slot = start + chain_len + self.n_disp
        self.end = self.cond_slot + 1

    def chain_slot_at_depth(self, depth: int) -> int:
        if not self.min_depth <= depth <= self.max_depth:
            raise GadgetError(
                f"no chain record at depth {depth} "
                f"(valid {self.min_depth}..{self.max_depth})")
        return self.start + (self.chain_len - 1 + self.n_disp - depth)


def _compile_injection(inj: Injection, layout: _BlockLayout, wt: int, wb: int,
                       patches: list[Patch], effect: dict) -> None:
    var = inj.var
    if inj.register == "phrt":
        p = inj.position
        if layout.dispatch and p == 0:
            patches.append(Patch(layout.dispatch_slot, "target", 1 << 2, (var,)))
        else:
            t = max(layout.min_depth, p - (wt - 1))
            bit = (p - t) + 2
            if bit >= 2 + wt:
                raise GadgetError(
                    f"phrt[{p}] unreachable: needs slice bit {bit - 2} "
                    f"but the target slice is {wt} wide")
            patches.append(Patch(layout.chain_slot_at_depth(t), "target",
                                 1 << bit, (var,)))
        effect["phrt"] ^= 1 << p
    elif inj.register == "phrb":
        p = inj.position
        if layout.dispatch and p == 0:
            patches.append(Patch(layout.dispatch_slot, "pc", 1 << 2, (var,)))
        else:
            t = max(layout.min_depth, p - (wb - 1))
            bit = (p - t) + 2
            if bit >= 2 + wb:
                raise GadgetError(
                    f"phrb[{p}] unreachable: needs slice bit {bit - 2} "
                    f"but the branch slice is {wb} wide")
            patches.append(Patch(layout.chain_slot_at_depth(t), "pc",
                                 1 << bit, (var,)))
        effect["phrb"] ^= 1 << p
    elif inj.register == "pc":
        c = inj.position
        if not layout.dispatch:
            raise GadgetError(
                f"pc[{c}] injection needs a dispatched block (the conditional "
                f"address can only move if something jumps to it)")
        if c < 2:
            raise GadgetError(f"pc[{c}]: bits below 2 are not address bits")
        patches.append(Patch(layout.cond_slot, "pc", 1 << c, (var,)))
        patches.append(Patch(layout.dispatch_slot, "target", 1 << c, (var,)))
        if c == 2:
            # The dispatcher-target movement would land on phrt[0]; the only
            # way to cancel it is the phrt[0] injection, which is the same
            # patch — so the two merge away and the conditional PC alone moves.
            patches.append(Patch(layout.dispatch_slot, "target", 1 << 2, (var,)))
        elif c < 2 + wt:
            # The moved target bit sits inside the history slice, so the
            # dispatcher record would smear the variable into phrt[c-2]; a
            # counter-patch one record earlier lands on the same position
            # (which always fits: c-1 < 2+wt whenever c does) and cancels it.
            # Bits at or above the slice never reach history — no patch.
            patches.append(Patch(layout.chain_slot_at_depth(1), "target",
                                 1 << (c - 1), (var,)))
        effect["pc"] ^= 1 << c
    else:
        raise GadgetError(f"unknown injection register {inj.register!r}")


def _compile_raw(raw: RawPatch, layout: _BlockLayout, scheme: FootprintScheme,
                 patches: list[Patch], effect: dict) -> None:
    if raw.field not in ("pc", "target"):
        raise GadgetError(f"raw patch field must be pc or target, got {raw.field!r}")
    slot = layout.chain_slot_at_depth(raw.depth)
    patches.append(Patch(slot, raw.field, 1 << raw.bit, (raw.var,)))
    bits = scheme.target_bits if raw.field == "target" else scheme.branch_bits
    if raw.bit in bits:
        slice_pos = bits.index(raw.bit)
        landing = slice_pos + scheme.shift_amount * raw.depth
        register = "phrt" if (raw.field == "target" or not scheme.split) else "phrb"
        effect[register] ^= 1 << landing


@functools.lru_cache(maxsize=4096)
def build_template(spec: ProbeSpec, scheme: FootprintScheme = GENEROUS_SCHEME) -> ProbeTemplate:
    """Compile a probe spec against a footprint scheme, self-checking the result.

    Structured injections require the 1-per-branch shift with contiguous,
    bit-2-anchored slices that every recoverable target here uses; anything
    else fails compilation rather than producing silently wrong probes.
    """
    wt = len(scheme.target_bits)
    wb = len(scheme.branch_bits)
    structured = any(b.injections for b in spec.blocks)
    if structured:
        if scheme.shift_amount != 1:
            raise GadgetError(
                f"{spec.label}: structured injections require a shift of 1 "
                f"per taken branch (scheme {scheme.name!r} shifts "
                f"{scheme.shift_amount})")
        if not scheme.split:
            raise GadgetError(
                f"{spec.label}: structured injections require split history "
                f"registers")
        if (scheme.target_bits != tuple(range(2, 2 + wt))
                or scheme.branch_bits != tuple(range(2, 2 + wb))):
            raise GadgetError(
                f"{spec.label}: footprint slices must be contiguous from bit 2")

    chain_pcs, chain_targets = _chain_addresses(spec.chain_len)
    pcs: list[int] = []
    targets: list[int] = []
    kinds: list[int] = []
    takens: list[int] = []
    cond_slots: list[int] = []
    layouts: list[_BlockLayout] = []
    for block in spec.blocks:
        layout = _BlockLayout(len(pcs), spec.chain_len, block.dispatch)
        layouts.append(layout)
        pcs.extend(chain_pcs)
        targets.extend(chain_targets)
        kinds.extend([KIND_INDIRECT] * spec.chain_len)
        takens.extend([1] * spec.chain_len)
        if block.dispatch:
            pcs.append(_DISPATCH_PC)
            targets.append(block.cond.pc)
            kinds.append(KIND_INDIRECT)
            takens.append(1)
        cond_slots.append(layout.cond_slot)
        pcs.append(block.cond.pc)
        targets.append(block.cond.pc + 8)
        kinds.append(KIND_COND)
        takens.append(0)

    patches: list[Patch] = []
    var_names: set[str] = set()
    effects: list[dict] = []  # per block: var -> {"phrt","phrb","pc"} deltas
    for block, layout in zip(spec.blocks, layouts):
        block_effect: dict = {}
        for inj in block.injections:
            var_names.add(inj.var)
            eff = block_effect.setdefault(inj.var, {"phrt": 0, "phrb": 0, "pc": 0})
            _compile_injection(inj, layout, wt, wb, patches, eff)
        for raw in block.raw_patches:
            var_names.add(raw.var)
            eff = block_effect.setdefault(raw.var, {"phrt": 0, "phrb": 0, "pc": 0})
            _compile_raw(raw, layout, scheme, patches, eff)
        if block.cond.dir_vars or block.cond.invert:
            var_names.update(block.cond.dir_vars)
            patches.append(Patch(layout.cond_slot, "taken", 1,
                                 tuple(block.cond.dir_vars), block.cond.invert))
        effects.append(block_effect)

    claims = {}
    zero = {"phrt": 0, "phrb": 0, "pc": 0}
    for var in sorted(var_names):
        per_block = [eff.get(var, zero) for eff in effects]
        claims[var] = VarClaim(
            phrt_deltas=tuple(e["phrt"] for e in per_block),
            phrb_deltas=tuple(e["phrb"] for e in per_block),
            pc_deltas=tuple(e["pc"] for e in per_block),
        )

    noise: list[NoisePatch] = []
    if spec.noise_min_depth is not None:
        for layout in layouts:
            for depth in range(max(spec.noise_min_depth, layout.min_depth),
                               layout.max_depth + 1):
                slot = layout.chain_slot_at_depth(depth)
                noise.append(NoisePatch(slot, "target", 2, _NOISE_T_WIDTH))
                noise.append(NoisePatch(slot, "pc", 2, _NOISE_B_WIDTH))

    template = ProbeTemplate(spec, scheme,
                             (np.array(pcs, dtype=np.uint64),
                              np.array(targets, dtype=np.uint64),
                              np.array(kinds, dtype=np.uint8),
                              np.array(takens, dtype=np.uint8)),
                             tuple(cond_slots),
                             _merge_patches(patches),
                             tuple(noise),
                             claims)
    template.self_check()
    return template
