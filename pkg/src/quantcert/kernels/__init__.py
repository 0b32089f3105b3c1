"""Forward-pass kernels for point and interval evaluation.

The compiled core (``_core``, Cython) is used when it was built; otherwise
the numpy fallback runs. Set ``QUANTCERT_PURE_PYTHON=1`` to force the
fallback. ``BACKEND`` names the selected implementation.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _fallback
from ..network import Activation, Network

try:
    if os.environ.get("QUANTCERT_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure Python requested")
    from . import _core
except ImportError:  # extension not built
    _core = None

BACKEND = "compiled" if _core is not None else "python"
AVAILABLE = ("compiled", "python") if _core is not None else ("python",)

ACT_CODES = {
    Activation.LINEAR: _fallback.LINEAR,
    Activation.RELU: _fallback.RELU,
    Activation.TANH: _fallback.TANH,
    Activation.SIGMOID: _fallback.SIGMOID,
}

__all__ = ["BACKEND", "AVAILABLE", "PreparedNetwork"]


@dataclass(frozen=True)
class _PreparedLayer:
    w: np.ndarray
    b: np.ndarray
    act: int
    w_plus: np.ndarray
    w_minus: np.ndarray
    abs_w: np.ndarray
    abs_b: np.ndarray


class PreparedNetwork:
    """A network laid out for repeated evaluation by one kernel backend."""

    def __init__(self, net: Network, backend: str | None = None):
        backend = backend or BACKEND
        if backend not in AVAILABLE:
            raise ValueError(f"backend {backend!r} unavailable; have {AVAILABLE}")
        self.backend = backend
        self.input_dim = net.input_dim
        self.output_dim = net.output_dim
        self.layers = []
        for layer in net.layers:
            w = np.ascontiguousarray(layer.weights)
            self.layers.append(
                _PreparedLayer(
                    w=w,
                    b=np.ascontiguousarray(layer.bias),
                    act=ACT_CODES[layer.activation],
                    w_plus=np.where(w >= 0, w, 0.0),
                    w_minus=np.where(w < 0, w, 0.0),
                    abs_w=np.abs(w),
                    abs_b=np.abs(layer.bias),
                )
            )
        self._compiled = _core.CompiledNetwork(self.layers, net.input_dim) if backend == "compiled" else None

    def point(self, u) -> np.ndarray:
        if self._compiled is not None:
            return self._compiled.point_batch(np.ascontiguousarray(u, dtype=np.float64).reshape(1, -1))[0]
        return _fallback.point_forward(self, u)

    def point_batch(self, U) -> np.ndarray:
        U = np.ascontiguousarray(U, dtype=np.float64)
        if self._compiled is not None:
            return self._compiled.point_batch(U)
        return _fallback.point_forward_batch(self, U)

    def interval(self, lo, hi, tau: float) -> tuple[np.ndarray, np.ndarray]:
        if self._compiled is not None:
            LO, HI = self._compiled.interval_batch(
                np.ascontiguousarray(lo, dtype=np.float64).reshape(1, -1),
                np.ascontiguousarray(hi, dtype=np.float64).reshape(1, -1),
                tau,
            )
            return LO[0], HI[0]
        return _fallback.interval_forward(self, lo, hi, tau)

    def interval_batch(self, LO, HI, tau: float) -> tuple[np.ndarray, np.ndarray]:
        LO = np.ascontiguousarray(LO, dtype=np.float64)
        HI = np.ascontiguousarray(HI, dtype=np.float64)
        if self._compiled is not None:
            return self._compiled.interval_batch(LO, HI, tau)
        return _fallback.interval_forward_batch(self, LO, HI, tau)
