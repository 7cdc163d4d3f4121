"""Opaque predictor under test.

`BlackBox` wraps a predictor configuration behind the only interface the
recovery pipeline is allowed to use: feed a trace, get back the number of
mispredicted conditional branches.  Internal state (history registers, table
contents) is deliberately unreachable; the whole point of the probe pipeline
is to reconstruct the configuration from counts alone.
"""

from __future__ import annotations

from ..configs import CbpConfig, initial_state_for, make_predictor
from ..engine import Engine, EngineUnsupported
from ..history import update_history
from ..rng import derive
from ..trace import KIND_COND, TraceBuffer

__all__ = ["BlackBox"]


class _PureDriver:
    """Reference-model driver with the same reset/run surface as `Engine`."""

    def __init__(self, config: CbpConfig, seed: int):
        self._config = config
        self._seed = seed
        self.reset()

    def reset(self) -> None:
        self._predictor = make_predictor(self._config, self._seed)
        self._state = initial_state_for(self._config)

    def run(self, buf: TraceBuffer):
        n_cond = n_misp = 0
        scheme = self._config.scheme
        for rec in buf.records():
            if rec.kind == KIND_COND:
                n_cond += 1
                pred = self._predictor.predict(rec.pc, self._state)
                if pred.taken != rec.taken:
                    n_misp += 1
                self._predictor.train(rec.pc, self._state, rec.taken, pred)
            self._state = update_history(self._state, scheme, rec)
        return n_cond, n_misp, {}


class BlackBox:
    """Counts-only oracle around a hidden predictor configuration."""

    def __init__(self, config: CbpConfig, seed: int = 0):
        inner_seed = derive(seed, "blackbox")
        try:
            self.__engine = Engine(config, seed=inner_seed)
        except EngineUnsupported:
            self.__engine = _PureDriver(config, inner_seed)
        self.__runs = 0
        self.__records = 0

    def reset(self) -> None:
        """Return the hidden predictor to its power-on state."""
        self.__engine.reset()

    def run(self, trace: TraceBuffer) -> int:
        """Execute `trace`, carrying state over from previous runs.

        Returns the number of conditional branches the hidden predictor
        mispredicted.
        """
        _, n_misp, _ = self.__engine.run(trace)
        self.__runs += 1
        self.__records += len(trace)
        return int(n_misp)

    @property
    def probe_cost(self) -> tuple[int, int]:
        """(runs, records) consumed so far — for budget accounting only."""
        return (self.__runs, self.__records)
