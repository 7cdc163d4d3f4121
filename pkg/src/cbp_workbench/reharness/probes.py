"""Probe execution: batching, warm-up discard, and rate classification.

A probe's only output is its misprediction rate, and every decision the
recovery pipeline takes is a rate classified into coarse bands:

* ``low``     — the predictor tracks the injected variables (it can see them);
* ``quarter`` — roughly a quarter of predictions miss: the signature of two
  populations of consistent entries fighting over one set at twice its
  associativity (half resident and correct, half missing to a 50/50 base);
* ``half``    — the direction looks random to the predictor.

Thresholds are deliberately far apart; a rate between bands means the model
behind the probe is wrong, and that is raised as `AmbiguousProbe` rather
than rounded to the nearest convenient answer.  Scan probes (the noisy
history-length scans) use wider cutoffs because residual stale-entry steal
adds a few percent to their floor.

Execution is batched: the black box is power-cycled between batches and the
first tenth of each batch (the training ramp) is discarded, so counted
regions are steady-state and no probe inherits another probe's table state.
"""

from __future__ import annotations

from dataclasses import dataclass

from .gadgets import ProbeTemplate

__all__ = [
    "AmbiguousProbe",
    "BandScheme",
    "STRICT_BANDS",
    "SCAN_BANDS",
    "ProbeBudget",
    "BUILTIN_BUDGET",
    "TOY_BUDGET",
    "ProbeRunner",
]


class AmbiguousProbe(RuntimeError):
    """A probe rate that falls between the expected bands."""

    def __init__(self, label: str, rate: float, scheme_name: str, iters: int):
        self.label = label
        self.rate = rate
        self.scheme_name = scheme_name
        self.iters = iters
        super().__init__(
            f"probe {label!r}: rate {rate:.4f} fits no {scheme_name} band "
            f"after {iters} iterations")


@dataclass(frozen=True)
class BandScheme:
    """Rate cutoffs. A band is (name, lo, hi) matching lo <= rate < hi."""

    name: str
    low_below: float
    quarter: tuple[float, float] | None
    half_above: float

    def classify(self, rate: float) -> str | None:
        if rate < self.low_below:
            return "low"
        if self.quarter and self.quarter[0] <= rate <= self.quarter[1]:
            return "quarter"
        if rate > self.half_above:
            return "half"
        return None


STRICT_BANDS = BandScheme("strict", low_below=0.05, quarter=(0.15, 0.35),
                          half_above=0.40)
SCAN_BANDS = BandScheme("scan", low_below=0.20, quarter=None, half_above=0.30)


@dataclass(frozen=True)
class ProbeBudget:
    """Iteration counts per probe class and the batch granularity."""

    binary: int   # two-way (low/half) decisions
    band: int     # three-way decisions that must resolve the quarter band
    assoc: int    # associativity ladder rungs
    batch: int    # iterations per black-box power cycle


BUILTIN_BUDGET = ProbeBudget(binary=4000, band=20000, assoc=12000, batch=500)
TOY_BUDGET = ProbeBudget(binary=1600, band=6000, assoc=6000, batch=800)


class ProbeRunner:
    """Executes templates against one black box and logs every measurement."""

    def __init__(self, bb, seed: int, budget: ProbeBudget):
        self.bb = bb
        self.seed = seed
        self.budget = budget
        self.log: list[dict] = []
        self._calls = 0

    def measure(self, template: ProbeTemplate, n_iters: int) -> float:
        """Steady-state misprediction rate of `template` over `n_iters`."""
        from ..rng import derive

        call = self._calls
        self._calls += 1
        stride = template.n_records
        total_misp = 0
        total_conds = 0
        remaining = n_iters
        batch_no = 0
        while remaining > 0:
            n = min(self.budget.batch, remaining)
            remaining -= n
            warm = max(1, n // 10)
            buf = template.materialize(
                derive(self.seed, "probe", str(call), str(batch_no)), n,
                settle=warm)
            self.bb.reset()
            self.bb.run(buf[: warm * stride])
            total_misp += self.bb.run(buf[warm * stride:])
            total_conds += (n - warm) * template.n_conds
            batch_no += 1
        return total_misp / total_conds

    def classify(self, template: ProbeTemplate, n_iters: int,
                 bands: BandScheme) -> str:
        """Measure and classify; logs (label, rate, band, iters) for audit."""
        rate = self.measure(template, n_iters)
        band = bands.classify(rate)
        self.log.append({
            "label": template.label,
            "rate": rate,
            "band": band,
            "bands": bands.name,
            "iters": n_iters,
        })
        if band is None:
            raise AmbiguousProbe(template.label, rate, bands.name, n_iters)
        return band
