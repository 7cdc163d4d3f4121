"""Built-in microarchitecture configurations and the config file format.

Built-ins
---------
``firestorm`` / ``oryon``
    Apple Firestorm and Qualcomm Oryon CBP models: split PHRT/PHRB path
    history (branch footprint B[5:2], target footprint T[31:2], shift 1) and
    six tagged PHTs. The Firestorm 1st-PHT index/tag hash is the measured
    one, encoded verbatim; every hash marked ``synthesized`` is a stand-in
    with the measured geometry but a constructed XOR layout (the real one was
    not recovered), built so the probe pipeline's silencing assumptions hold.
``skylake``
    Intel Skylake-class model: one unified PHR (B[18:3] ^ T[5:0], shift 2,
    186 bits) and three folded-hash PHTs. Entirely synthesized geometry-level
    model; per-table history lengths follow the published footprint/width
    measurements.
``haswell-phr-only`` / ``alderlake-phr-only``
    Footprint schemes alone (no PHTs) for history-collision analysis.
``*-24k``
    Capacity-equalized clones: 6 PHTs x 4 ways x 1024 sets (24K entries).
    History lengths are preserved when the donor already has six PHTs and are
    resampled geometrically otherwise.

Config file format (schema version 1)
-------------------------------------
JSON object::

    {
      "schema_version": 1,
      "name": str,
      "scheme": {"name": str, "branch_bits": [int...], "target_bits": [int...],
                  "split": bool, "shift_amount": int},
      "phrt_width": int, "phrb_width": int,
      "pc_input_range": [lo, hi],          # inclusive PC bit range
      "base_entries": int,                  # power of two
      "phts": [
        {"phrt_len": int, "phrb_len": int, "assoc": int, "index_bits": int,
         "provenance": "measured" | "synthesized",
         "low_confidence": bool,
         "index_groups": [[{"reg": "pc"|"phrt"|"phrb", "pos": int}, ...], ...],
         "tag_groups":   [ ... same shape ... ]},
        ...                                  # longest history first
      ]
    }

Index bit k of a PHT is the parity of ``index_groups[k]``; tag bit j the
parity of ``tag_groups[j]``. ``save_config`` emits keys sorted, so files are
diffable and byte-stable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .hashspec import BitSource, HashSpec, XorGroup
from .history import FootprintScheme, HistoryState, initial_state
from .tage import PhtSpec, Tage

SCHEMA_VERSION = 1

ENTRY_BITS = 16  # tag + 3-bit counter + useful + valid, padded to 16


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CbpConfig:
    name: str
    scheme: FootprintScheme
    phrt_width: int
    phrb_width: int
    pc_input_range: tuple[int, int]
    base_entries: int
    phts: tuple[PhtSpec, ...]

    def __post_init__(self):
        if self.phrt_width < 1:
            raise ConfigError(f"{self.name}: phrt_width must be >= 1")
        if self.phrb_width < 0:
            raise ConfigError(f"{self.name}: phrb_width must be >= 0")
        lo, hi = self.pc_input_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"{self.name}: bad pc_input_range {self.pc_input_range}")
        if self.base_entries < 1 or self.base_entries & (self.base_entries - 1):
            raise ConfigError(f"{self.name}: base_entries must be a power of two")
        prev_t = prev_b = None
        for i, p in enumerate(self.phts):
            where = f"{self.name}: phts[{i}]"
            if p.phrt_len > self.phrt_width:
                raise ConfigError(f"{where}: phrt_len {p.phrt_len} exceeds "
                                  f"phrt_width {self.phrt_width}")
            if p.phrb_len > self.phrb_width:
                raise ConfigError(f"{where}: phrb_len {p.phrb_len} exceeds "
                                  f"phrb_width {self.phrb_width}")
            if p.phrb_len > p.phrt_len:
                raise ConfigError(f"{where}: phrb_len {p.phrb_len} exceeds "
                                  f"phrt_len {p.phrt_len}")
            if prev_t is not None and p.phrt_len >= prev_t:
                raise ConfigError(f"{where}: phrt_len must strictly decrease "
                                  f"({prev_t} then {p.phrt_len})")
            if prev_b is not None and p.phrb_len > prev_b:
                raise ConfigError(f"{where}: phrb_len must not increase")
            prev_t, prev_b = p.phrt_len, p.phrb_len
            for kind in ("index", "tag"):
                for gi, group in enumerate(getattr(p.hash, f"{kind}_groups")):
                    for src in group:
                        if src.register == "pc" and not (lo <= src.position <= hi):
                            raise ConfigError(
                                f"{where}.{kind}_groups[{gi}]: {src!r} outside "
                                f"PC input range [{lo}, {hi}]")

    @property
    def provenance(self) -> str:
        if not self.phts:
            return "measured"
        flags = {p.synthesized for p in self.phts}
        if flags == {False}:
            return "measured"
        if flags == {True}:
            return "synthesized"
        return "mixed"


def capacity_bits(config: CbpConfig) -> int:
    """Total tagged-PHT storage in bits (ENTRY_BITS per entry)."""
    return sum(p.n_entries * ENTRY_BITS for p in config.phts)


def total_entries(config: CbpConfig) -> int:
    return sum(p.n_entries for p in config.phts)


def initial_state_for(config: CbpConfig) -> HistoryState:
    return initial_state(config.phrt_width, config.phrb_width)


def make_predictor(config: CbpConfig, seed: int) -> Tage:
    return Tage(config.phts, config.base_entries, seed)


Tage.from_config = staticmethod(make_predictor)


# ---------------------------------------------------------------------------
# Footprint schemes
# ---------------------------------------------------------------------------

_APPLE_QC_SCHEME = dict(branch_bits=tuple(range(2, 6)),     # B[5:2]
                        target_bits=tuple(range(2, 32)),    # T[31:2]
                        split=True, shift_amount=1)

FIRESTORM_SCHEME = FootprintScheme(name="firestorm", **_APPLE_QC_SCHEME)
ORYON_SCHEME = FootprintScheme(name="oryon", **_APPLE_QC_SCHEME)
SKYLAKE_SCHEME = FootprintScheme(name="skylake", branch_bits=tuple(range(3, 19)),
                                 target_bits=tuple(range(0, 6)), split=False,
                                 shift_amount=2)
HASWELL_SCHEME = FootprintScheme(name="haswell", branch_bits=tuple(range(4, 20)),
                                 target_bits=tuple(range(0, 6)), split=False,
                                 shift_amount=2)
ALDERLAKE_SCHEME = FootprintScheme(name="alderlake", branch_bits=tuple(range(0, 16)),
                                   target_bits=tuple(range(0, 6)), split=False,
                                   shift_amount=2)


def _g(*sources) -> XorGroup:
    return XorGroup.of(*sources)


def _phrt(*positions):
    return [("phrt", p) for p in positions]


def _phrb(*positions):
    return [("phrb", p) for p in positions]


# ---------------------------------------------------------------------------
# Firestorm 1st PHT: measured hash, encoded verbatim
# ---------------------------------------------------------------------------

def _firestorm_pht1_hash() -> HashSpec:
    tag = (
        _g(("pc", 7), *_phrt(0, 12, 24, 36, 48, 60, 72, 84, 96), *_phrb(8, 21)),
        _g(("pc", 8), *_phrt(1, 13, 25, 37, 49, 61, 73, 85, 97), *_phrb(9, 22)),
        _g(("pc", 9), *_phrt(2, 14, 26, 38, 50, 62, 74, 86, 98), *_phrb(10, 23)),
        _g(("pc", 10), *_phrt(3, 15, 27, 39, 51, 63, 75, 87), *_phrb(11, 12, 24, 25)),
        _g(("pc", 11), *_phrt(4, 16, 28, 40, 52, 64, 76, 88), *_phrb(0, 13, 26)),
        _g(("pc", 12), *_phrt(5, 17, 29, 41, 53, 65, 77, 89), *_phrb(1, 14, 27)),
        _g(("pc", 13), *_phrt(6, 18, 30, 42, 54, 66, 78, 90), *_phrb(2, 15)),
        _g(("pc", 14), *_phrt(7, 19, 31, 43, 55, 67, 79, 91), *_phrb(3, 16)),
        _g(("pc", 15), *_phrt(8, 20, 32, 44, 56, 68, 80, 92), *_phrb(4, 17)),
        _g(("pc", 16), *_phrt(9, 21, 33, 45, 57, 69, 81, 93), *_phrb(5, 18)),
        _g(("pc", 17), *_phrt(10, 22, 34, 46, 58, 70, 82, 94), *_phrb(6, 19)),
        _g(("pc", 18), *_phrt(11, 23, 35, 47, 59, 71, 83, 95), *_phrb(7, 20)),
        _g(("pc", 2)), _g(("pc", 3)), _g(("pc", 4)), _g(("pc", 5)),
    )
    index = (
        _g(*_phrt(2, 43, 93)),
        _g(*_phrt(7, 48, 99)),
        _g(*_phrt(12, 63), *_phrb(5)),
        _g(*_phrt(17, 68), *_phrb(10)),
        _g(*_phrt(22, 73), *_phrb(15)),
        _g(*_phrt(27, 78), *_phrb(20)),
        _g(*_phrt(33, 83), *_phrb(25)),
        _g(*_phrt(38, 88), ("pc", 9)),
        _g(*_phrt(53, 58), *_phrb(0)),
        _g(("pc", 6)),
    )
    return HashSpec(index_groups=index, tag_groups=tag)


# ---------------------------------------------------------------------------
# Oryon 1st PHT: synthesized hash consistent with the measured coarse facts
# (index PC bits {6,7}, 32-bit PHRB, geometry (100,32,4,10), and the
# single-bit tag sensitivity of the binary-search critical branch pair).
# ---------------------------------------------------------------------------

def _oryon_pht1_hash() -> HashSpec:
    tag_groups = []
    for r in range(12):
        srcs = [("pc", 8 + r)] if r <= 4 else []
        srcs += [("phrt", p) for p in range(r, 100, 12)]
        # PHRB[2] is deliberately absent from every group: the branch-address
        # footprint bit 2 does not reach this table's tag.
        srcs += [("phrb", j) for j in range(r, 32, 12) if j != 2]
        tag_groups.append(_g(*srcs))
    tag_groups += [_g(("pc", b)) for b in (2, 3, 4, 5)]
    index = (
        _g(*_phrt(4, 47, 93)),
        _g(*_phrt(9, 50, 99)),
        _g(*_phrt(14, 63), *_phrb(7)),
        _g(*_phrt(19, 68), *_phrb(12)),
        _g(*_phrt(24, 73), *_phrb(17)),
        _g(*_phrt(29, 78), *_phrb(22)),
        _g(*_phrt(34, 83), *_phrb(27)),
        _g(*_phrt(39, 88), ("pc", 7)),
        _g(*_phrt(55, 60), *_phrb(30)),
        _g(("pc", 6)),
    )
    return HashSpec(index_groups=tuple(index), tag_groups=tuple(tag_groups))


# ---------------------------------------------------------------------------
# Synthesized hash generators
# ---------------------------------------------------------------------------

def _stride_hash(phrt_len: int, phrb_len: int, index_bits: int, *,
                 pc_tag_base: int, pc_tag_count: int,
                 pc_index_pad: tuple[int, ...] = (6, 7, 8),
                 phrb_tag_offset: int = 5) -> HashSpec:
    """Round-robin XOR hash for tables whose real hash was not recovered.

    History sources are spread across index groups modulo ``index_bits`` and
    across 12 tag groups modulo 12 (PHRB offset by ``phrb_tag_offset`` so that
    short co-located PHRT/PHRB windows land in disjoint tag groups). Index
    groups left empty by short histories are padded with PC bits.
    """
    srcs = [("phrt", p) for p in range(phrt_len)] + [("phrb", j) for j in range(phrb_len)]
    index = []
    pad = iter(pc_index_pad)
    for k in range(index_bits):
        members = [srcs[s] for s in range(k, len(srcs), index_bits)]
        if not members:
            members = [("pc", next(pad))]
        index.append(_g(*members))
    tags = []
    for r in range(12):
        members = [("pc", pc_tag_base + r)] if r < pc_tag_count else []
        members += [("phrt", p) for p in range(100) if p < phrt_len and p % 12 == r]
        members += [("phrb", j) for j in range(100)
                    if j < phrb_len and (j + phrb_tag_offset) % 12 == r]
        if members:
            tags.append(_g(*members))
    tags += [_g(("pc", b)) for b in (2, 3, 4, 5)]
    return HashSpec(index_groups=tuple(index), tag_groups=tuple(tags))


def _folded_hash_spec(phrt_len: int, index_bits: int, *, tag_bits: int = 12,
                      pc_index_base: int = 5, pc_index_count: int = 9,
                      pc_tag_base: int = 6) -> HashSpec:
    """Unified-PHR folded hash: history bit p lands in index group p % 2^n
    and tag group p % tag_bits, with PC bits XORed in."""
    index = []
    for k in range(index_bits):
        members = [("pc", pc_index_base + k)] if k < pc_index_count else []
        members += [("phrt", p) for p in range(k, phrt_len, index_bits)]
        index.append(_g(*members))
    tags = []
    for r in range(tag_bits):
        members = [("pc", pc_tag_base + r)]
        members += [("phrt", p) for p in range(r, phrt_len, tag_bits)]
        tags.append(_g(*members))
    return HashSpec(index_groups=tuple(index), tag_groups=tuple(tags))


# ---------------------------------------------------------------------------
# Built-in registry
# ---------------------------------------------------------------------------

def _firestorm() -> CbpConfig:
    geom = [(100, 28, 4, 10), (57, 28, 4, 10), (32, 28, 4, 10),
            (18, 18, 4, 11), (11, 11, 6, 11), (6, 6, 6, 11)]
    phts = [PhtSpec(*geom[0], hash=_firestorm_pht1_hash(), synthesized=False)]
    for i, (lt, lb, assoc, ib) in enumerate(geom[1:], start=1):
        phts.append(PhtSpec(lt, lb, assoc, ib,
                            hash=_stride_hash(lt, lb, ib, pc_tag_base=7, pc_tag_count=12),
                            synthesized=True, low_confidence=(i == 5)))
    return CbpConfig(name="firestorm", scheme=FIRESTORM_SCHEME, phrt_width=100,
                     phrb_width=28, pc_input_range=(2, 18), base_entries=16384,
                     phts=tuple(phts))


def _oryon() -> CbpConfig:
    geom = [(100, 32, 4, 10), (52, 32, 4, 10), (27, 27, 4, 10),
            (14, 14, 4, 11), (7, 7, 4, 11), (4, 4, 6, 11)]
    phts = [PhtSpec(*geom[0], hash=_oryon_pht1_hash(), synthesized=True)]
    for i, (lt, lb, assoc, ib) in enumerate(geom[1:], start=1):
        phts.append(PhtSpec(lt, lb, assoc, ib,
                            hash=_stride_hash(lt, lb, ib, pc_tag_base=8, pc_tag_count=5),
                            synthesized=True, low_confidence=(i >= 4)))
    return CbpConfig(name="oryon", scheme=ORYON_SCHEME, phrt_width=100,
                     phrb_width=32, pc_input_range=(2, 12), base_entries=16384,
                     phts=tuple(phts))


def _skylake() -> CbpConfig:
    phts = [PhtSpec(lt, 0, 4, 9, hash=_folded_hash_spec(lt, 9), synthesized=True)
            for lt in (186, 62, 20)]
    return CbpConfig(name="skylake", scheme=SKYLAKE_SCHEME, phrt_width=186,
                     phrb_width=0, pc_input_range=(5, 17), base_entries=16384,
                     phts=tuple(phts))


def _phr_only(name: str, scheme: FootprintScheme) -> CbpConfig:
    return CbpConfig(name=name, scheme=scheme, phrt_width=186, phrb_width=0,
                     pc_input_range=(0, 0), base_entries=16384, phts=())


def clone_24k(config: CbpConfig) -> CbpConfig:
    """Capacity-equalized clone: 6 PHTs x 4 ways x 1024 sets (24K entries).

    History lengths are kept when the donor already has 6 PHTs; otherwise six
    lengths are resampled on a geometric ladder between the donor's longest
    and shortest. Hashes are regenerated for any table whose geometry changed;
    a measured hash is kept only when its geometry already fits.
    """
    if not config.phts:
        raise ConfigError(f"{config.name}: cannot clone a PHT-less config")
    if config.name.endswith("-24k"):
        return config
    donors = config.phts
    if len(donors) == 6:
        lens = [(p.phrt_len, p.phrb_len) for p in donors]
    else:
        longest, shortest = donors[0].phrt_len, donors[-1].phrt_len
        ratio = (shortest / longest) ** (1 / 5)
        lens = [(round(longest * ratio ** i),
                 min(donors[0].phrb_len, round(longest * ratio ** i)))
                for i in range(6)]
    phts = []
    for i, (lt, lb) in enumerate(lens):
        donor = donors[i] if i < len(donors) and (donors[i].phrt_len, donors[i].phrb_len) == (lt, lb) else None
        if donor is not None and donor.assoc == 4 and donor.index_bits == 10:
            phts.append(donor)
        elif config.scheme.split:
            base, count = (7, 12) if config.name == "firestorm" else (8, 5)
            phts.append(PhtSpec(lt, lb, 4, 10,
                                hash=_stride_hash(lt, lb, 10, pc_tag_base=base,
                                                  pc_tag_count=count),
                                synthesized=True))
        else:
            phts.append(PhtSpec(lt, 0, 4, 10,
                                hash=_folded_hash_spec(lt, 10, pc_index_count=9),
                                synthesized=True))
    return CbpConfig(name=f"{config.name}-24k", scheme=config.scheme,
                     phrt_width=config.phrt_width, phrb_width=config.phrb_width,
                     pc_input_range=config.pc_input_range,
                     base_entries=config.base_entries, phts=tuple(phts))


_BUILDERS = {
    "firestorm": _firestorm,
    "oryon": _oryon,
    "skylake": _skylake,
    "haswell-phr-only": lambda: _phr_only("haswell-phr-only", HASWELL_SCHEME),
    "alderlake-phr-only": lambda: _phr_only("alderlake-phr-only", ALDERLAKE_SCHEME),
    "firestorm-24k": lambda: clone_24k(_firestorm()),
    "oryon-24k": lambda: clone_24k(_oryon()),
    "skylake-24k": lambda: clone_24k(_skylake()),
}

BUILTIN_IDS = tuple(_BUILDERS)


def builtin(name: str) -> CbpConfig:
    try:
        builder = _BUILDERS[name]
    except KeyError:
        raise ConfigError(f"unknown builtin {name!r}; expected one of {BUILTIN_IDS}") from None
    return builder()


# ---------------------------------------------------------------------------
# JSON round-trip
# ---------------------------------------------------------------------------

def _group_to_json(group: XorGroup):
    return [{"reg": s.register, "pos": s.position} for s in group]


def config_to_dict(config: CbpConfig) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "name": config.name,
        "scheme": {
            "name": config.scheme.name,
            "branch_bits": list(config.scheme.branch_bits),
            "target_bits": list(config.scheme.target_bits),
            "split": config.scheme.split,
            "shift_amount": config.scheme.shift_amount,
        },
        "phrt_width": config.phrt_width,
        "phrb_width": config.phrb_width,
        "pc_input_range": list(config.pc_input_range),
        "base_entries": config.base_entries,
        "phts": [
            {
                "phrt_len": p.phrt_len,
                "phrb_len": p.phrb_len,
                "assoc": p.assoc,
                "index_bits": p.index_bits,
                "provenance": "synthesized" if p.synthesized else "measured",
                "low_confidence": p.low_confidence,
                "index_groups": [_group_to_json(g) for g in p.hash.index_groups],
                "tag_groups": [_group_to_json(g) for g in p.hash.tag_groups],
            }
            for p in config.phts
        ],
    }


def _require(mapping, key, where, kind=None):
    if not isinstance(mapping, dict) or key not in mapping:
        raise ConfigError(f"{where}: missing field {key!r}")
    value = mapping[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(f"{where}.{key}: expected {kind.__name__}, got {type(value).__name__}")
    return value


def _group_from_json(raw, where) -> XorGroup:
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{where}: expected a non-empty list of bit sources")
    sources = []
    for i, item in enumerate(raw):
        reg = _require(item, "reg", f"{where}[{i}]", str)
        pos = _require(item, "pos", f"{where}[{i}]", int)
        try:
            sources.append(BitSource(reg, pos))
        except ValueError as exc:
            raise ConfigError(f"{where}[{i}]: {exc}") from None
    try:
        return XorGroup(tuple(sources))
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(data: dict) -> CbpConfig:
    version = _require(data, "schema_version", "config", int)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config.schema_version: unsupported version {version}")
    name = _require(data, "name", "config", str)
    raw_scheme = _require(data, "scheme", "config", dict)
    try:
        scheme = FootprintScheme(
            name=_require(raw_scheme, "name", "config.scheme", str),
            branch_bits=tuple(_require(raw_scheme, "branch_bits", "config.scheme", list)),
            target_bits=tuple(_require(raw_scheme, "target_bits", "config.scheme", list)),
            split=_require(raw_scheme, "split", "config.scheme", bool),
            shift_amount=_require(raw_scheme, "shift_amount", "config.scheme", int),
        )
    except ValueError as exc:
        raise ConfigError(f"config.scheme: {exc}") from None
    phts = []
    for i, raw in enumerate(_require(data, "phts", "config", list)):
        where = f"config.phts[{i}]"
        provenance = _require(raw, "provenance", where, str)
        if provenance not in ("measured", "synthesized"):
            raise ConfigError(f"{where}.provenance: expected 'measured' or 'synthesized'")
        hash_spec_kwargs = {}
        for kind in ("index_groups", "tag_groups"):
            raw_groups = _require(raw, kind, where, list)
            hash_spec_kwargs[kind] = tuple(
                _group_from_json(g, f"{where}.{kind}[{gi}]") for gi, g in enumerate(raw_groups))
        try:
            spec = HashSpec(**hash_spec_kwargs)
            pht = PhtSpec(
                phrt_len=_require(raw, "phrt_len", where, int),
                phrb_len=_require(raw, "phrb_len", where, int),
                assoc=_require(raw, "assoc", where, int),
                index_bits=_require(raw, "index_bits", where, int),
                hash=spec,
                synthesized=(provenance == "synthesized"),
                low_confidence=bool(raw.get("low_confidence", False)),
            )
        except ValueError as exc:
            raise ConfigError(f"{where}: {exc}") from None
        phts.append(pht)
    pc_range = _require(data, "pc_input_range", "config", list)
    if len(pc_range) != 2:
        raise ConfigError("config.pc_input_range: expected [lo, hi]")
    return CbpConfig(
        name=name,
        scheme=scheme,
        phrt_width=_require(data, "phrt_width", "config", int),
        phrb_width=_require(data, "phrb_width", "config", int),
        pc_input_range=(pc_range[0], pc_range[1]),
        base_entries=_require(data, "base_entries", "config", int),
        phts=tuple(phts),
    )


def save_config(config: CbpConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path) -> CbpConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return config_from_dict(data)
