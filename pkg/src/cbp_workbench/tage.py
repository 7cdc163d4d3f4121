"""Reference TAGE-style conditional branch predictor.

Structure
---------
* A bimodal base table: 2-bit saturating counters, direct-indexed by
  PC[2 + log2(entries) - 1 : 2], initialized weakly not-taken. The base is
  trained on every conditional retire.
* N tagged PHTs, each a set-associative table of 16-bit entries
  (tag, 3-bit signed counter, 1-bit useful flag, valid bit). Set index and
  tag come from the PHT's XOR hash over (PC, PHRT, PHRB).

Prediction: every PHT is probed; the longest-history hit provides the
direction (counter >= 0 means taken). There is no alternate-prediction
heuristic: the provider always wins. ``alt`` is reported for useful-bit
bookkeeping only.

Training:
* Provider counter (or base counter) moves toward the outcome, saturating.
* The useful bit of the provider entry is set when the provider was correct
  and the alternate prediction was wrong.
* On a misprediction, allocation scans the PHTs with longer history than the
  provider, from shortest to longest. The first PHT with a useful==0 way in
  the target set receives the new entry (way chosen by the seeded RNG among
  the useful==0 candidates); the new counter starts at the weak value of the
  outcome's direction. If no scanned PHT has a free way, the useful bit of
  every scanned way is cleared and nothing is allocated.
* Every 512K training events, useful bits are cleared for half the (set, way)
  slots, alternating between even and odd halves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .hashspec import HashSpec, compute_index, compute_tag
from .history import HistoryState
from .rng import Stream

BASE = -1  # provider/alt ordinal for the bimodal base table

USEFUL_RESET_PERIOD = 1 << 19  # training events between useful-bit half-resets

CTR_MIN, CTR_MAX = -4, 3  # 3-bit signed counter range


@dataclass(frozen=True)
class PhtSpec:
    """Geometry and hash of one tagged PHT."""

    phrt_len: int
    phrb_len: int
    assoc: int
    index_bits: int
    hash: HashSpec
    synthesized: bool = False
    low_confidence: bool = False

    def __post_init__(self):
        if self.phrt_len < 1:
            raise ValueError(f"phrt_len must be >= 1, got {self.phrt_len}")
        if self.phrb_len < 0:
            raise ValueError(f"phrb_len must be >= 0, got {self.phrb_len}")
        if self.assoc < 1:
            raise ValueError(f"assoc must be >= 1, got {self.assoc}")
        if self.index_bits < 1:
            raise ValueError(f"index_bits must be >= 1, got {self.index_bits}")
        if len(self.hash.index_groups) != self.index_bits:
            raise ValueError(
                f"hash has {len(self.hash.index_groups)} index groups, "
                f"index_bits says {self.index_bits}")
        for kind in ("index", "tag"):
            for src in self.hash.sources(kind):
                if src.register == "phrt" and src.position >= self.phrt_len:
                    raise ValueError(f"{kind} source {src!r} outside history window "
                                     f"(phrt_len={self.phrt_len})")
                if src.register == "phrb" and src.position >= self.phrb_len:
                    raise ValueError(f"{kind} source {src!r} outside history window "
                                     f"(phrb_len={self.phrb_len})")

    @property
    def n_sets(self) -> int:
        return 1 << self.index_bits

    @property
    def n_entries(self) -> int:
        return self.assoc * self.n_sets

    @property
    def tag_bits(self) -> int:
        return len(self.hash.tag_groups)


@dataclass(frozen=True)
class Prediction:
    taken: bool
    provider: int  # PHT ordinal (0 = longest history) or BASE
    alt: int  # next-longest hit, or BASE
    provider_ctr: int
    alt_taken: bool
    # Every tag hit observed during the lookup: (pht ordinal, set, tag, way).
    hits: tuple[tuple[int, int, int, int], ...] = field(default=())


class Tage:
    """Mutable predictor state for one CbpConfig-compatible table list.

    The constructor takes the pieces rather than a CbpConfig to keep this
    module free of the config registry; ``Tage.from_config`` is attached in
    configs.py.
    """

    def __init__(self, phts: tuple[PhtSpec, ...], base_entries: int, seed: int):
        if base_entries < 1 or base_entries & (base_entries - 1):
            raise ValueError(f"base_entries must be a power of two, got {base_entries}")
        self.phts = tuple(phts)
        self.base_entries = base_entries
        self.seed = seed
        self._rng = Stream(seed).spawn("tage-alloc")
        self.reset()

    def reset(self) -> None:
        """Return to the power-on state (counters, tags, RNG, reset phase)."""
        self.base = [1] * self.base_entries  # weakly not-taken
        # Per PHT: flat arrays indexed by set * assoc + way.
        self.tags = [[0] * p.n_entries for p in self.phts]
        self.ctrs = [[0] * p.n_entries for p in self.phts]
        self.useful = [[0] * p.n_entries for p in self.phts]
        self.valid = [[0] * p.n_entries for p in self.phts]
        self.train_events = 0
        self.reset_phase = 0
        self._rng = Stream(self.seed).spawn("tage-alloc")

    # -- lookup ------------------------------------------------------------

    def _base_index(self, pc: int) -> int:
        return (pc >> 2) & (self.base_entries - 1)

    def _lookup_sets(self, pc: int, state: HistoryState):
        """(set, tag) per PHT for this lookup."""
        return [(compute_index(p.hash, pc, state), compute_tag(p.hash, pc, state))
                for p in self.phts]

    def predict(self, pc: int, state: HistoryState) -> Prediction:
        hits = []
        for j, p in enumerate(self.phts):
            sidx = compute_index(p.hash, pc, state)
            tag = compute_tag(p.hash, pc, state)
            base_slot = sidx * p.assoc
            for way in range(p.assoc):
                e = base_slot + way
                if self.valid[j][e] and self.tags[j][e] == tag:
                    hits.append((j, sidx, tag, way))
                    break  # at most one way can match a given tag
        base_taken = self.base[self._base_index(pc)] >= 2
        if hits:
            j, sidx, tag, way = hits[0]
            ctr = self.ctrs[j][sidx * self.phts[j].assoc + way]
            taken = ctr >= 0
            if len(hits) >= 2:
                aj, asidx, _, away = hits[1]
                alt = aj
                actr = self.ctrs[aj][asidx * self.phts[aj].assoc + away]
                alt_taken = actr >= 0
            else:
                alt = BASE
                alt_taken = base_taken
            return Prediction(taken=taken, provider=j, alt=alt, provider_ctr=ctr,
                              alt_taken=alt_taken, hits=tuple(hits))
        return Prediction(taken=base_taken, provider=BASE, alt=BASE,
                          provider_ctr=self.base[self._base_index(pc)],
                          alt_taken=base_taken, hits=())

    # -- training ----------------------------------------------------------

    def train(self, pc: int, state: HistoryState, taken: bool,
              pred: Prediction | None = None) -> list[tuple[int, int, int, int]]:
        """Update state for one retired conditional; returns allocations made
        as (pht, set, tag, way) tuples."""
        if pred is None:
            pred = self.predict(pc, state)

        # Base table trains on every conditional.
        b = self._base_index(pc)
        if taken:
            self.base[b] = min(3, self.base[b] + 1)
        else:
            self.base[b] = max(0, self.base[b] - 1)

        if pred.provider != BASE:
            j, sidx, tag, way = pred.hits[0]
            e = sidx * self.phts[j].assoc + way
            if taken:
                self.ctrs[j][e] = min(CTR_MAX, self.ctrs[j][e] + 1)
            else:
                self.ctrs[j][e] = max(CTR_MIN, self.ctrs[j][e] - 1)
            if pred.taken == taken and pred.alt_taken != taken:
                self.useful[j][e] = 1

        allocs: list[tuple[int, int, int, int]] = []
        if pred.taken != taken:
            allocs = self._allocate(pc, state, taken, pred.provider)

        self.train_events += 1
        if self.train_events % USEFUL_RESET_PERIOD == 0:
            self._half_reset_useful()
        return allocs

    def _allocate(self, pc: int, state: HistoryState, taken: bool,
                  provider: int) -> list[tuple[int, int, int, int]]:
        # PHTs are stored longest-first; candidates are those with strictly
        # longer history than the provider, scanned shortest to longest.
        upper = provider if provider != BASE else len(self.phts)
        scanned: list[tuple[int, int]] = []  # (pht, entry) of every candidate way
        for j in range(upper - 1, -1, -1):
            p = self.phts[j]
            sidx = compute_index(p.hash, pc, state)
            base_slot = sidx * p.assoc
            free = [w for w in range(p.assoc) if self.useful[j][base_slot + w] == 0]
            if free:
                way = free[self._rng.below(len(free))]
                e = base_slot + way
                tag = compute_tag(p.hash, pc, state)
                self.tags[j][e] = tag
                self.ctrs[j][e] = 0 if taken else -1
                self.useful[j][e] = 0
                self.valid[j][e] = 1
                return [(j, sidx, tag, way)]
            scanned.extend((j, base_slot + w) for w in range(p.assoc))
        for j, e in scanned:
            self.useful[j][e] = 0
        return []

    def _half_reset_useful(self) -> None:
        for j in range(len(self.phts)):
            u = self.useful[j]
            for e in range(self.reset_phase, len(u), 2):
                u[e] = 0
        self.reset_phase ^= 1
