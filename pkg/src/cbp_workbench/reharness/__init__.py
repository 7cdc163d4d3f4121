"""Black-box recovery harness: probe a predictor through misprediction
counts alone and reconstruct its history parameters and hash layout."""

from .blackbox import BlackBox
from .gadgets import (
    BlockSpec,
    CondSpec,
    GadgetError,
    Injection,
    ProbeSpec,
    RawPatch,
    build_template,
    single_block,
)
from .model import (
    RecoveredModel,
    RecoveredPht,
    canonical_groups,
    diff_against,
    diff_is_clean,
)
from .pipeline import (
    IsolatedPht,
    ProbeContext,
    RecoveryError,
    RecoveryResult,
    TableScope,
    find_assoc_and_index_pc_bits,
    find_pc_inputs,
    isolate_shorter_pht,
    locate_footprint_bits,
    measure_phr_depth,
    recover_cbp,
    recover_index_groups,
    recover_tag_groups,
)
from .probes import (
    BUILTIN_BUDGET,
    SCAN_BANDS,
    STRICT_BANDS,
    TOY_BUDGET,
    AmbiguousProbe,
    BandScheme,
    ProbeBudget,
    ProbeRunner,
)
from .toys import SCAN_GAP, make_toy_config, toy_recovery_kwargs, validate_toy

__all__ = [
    "AmbiguousProbe",
    "BUILTIN_BUDGET",
    "BandScheme",
    "BlackBox",
    "BlockSpec",
    "CondSpec",
    "GadgetError",
    "Injection",
    "IsolatedPht",
    "ProbeBudget",
    "ProbeContext",
    "ProbeRunner",
    "ProbeSpec",
    "RawPatch",
    "RecoveredModel",
    "RecoveredPht",
    "RecoveryError",
    "RecoveryResult",
    "SCAN_BANDS",
    "SCAN_GAP",
    "STRICT_BANDS",
    "TOY_BUDGET",
    "TableScope",
    "build_template",
    "canonical_groups",
    "diff_against",
    "diff_is_clean",
    "find_assoc_and_index_pc_bits",
    "find_pc_inputs",
    "isolate_shorter_pht",
    "locate_footprint_bits",
    "make_toy_config",
    "measure_phr_depth",
    "recover_cbp",
    "recover_index_groups",
    "recover_tag_groups",
    "single_block",
    "toy_recovery_kwargs",
    "validate_toy",
]
