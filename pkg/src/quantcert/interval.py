"""Interval arithmetic and the interval extension of a feedforward network.

For monotone activations the bounds propagate layer by layer by splitting
each weight matrix by sign, ``W = W_minus + W_plus``::

    lower_l = act(W_minus @ upper_{l-1} + W_plus @ lower_{l-1} + b)
    upper_l = act(W_minus @ lower_{l-1} + W_plus @ upper_{l-1} + b)

No directed rounding is used. Every affine row is instead widened outward by
``TAU_ROUND * (1 + sum_j |w_ij| * max|x_j| + |b_i|)``, which dominates the
worst-case float64 summation error for rows of up to several thousand
terms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import IntervalError
from .kernels import PreparedNetwork
from .network import Network

__all__ = [
    "TAU_ROUND",
    "Interval",
    "IntervalVector",
    "Box",
    "SplitWeights",
    "split_weights",
    "interval_eval",
    "interval_abs",
    "interval_norm",
    "abs_bounds",
    "norm_bounds",
    "point_norm",
    "NORMS",
]

TAU_ROUND = 1e-12
NORMS = ("linf", "l2")


@dataclass(frozen=True)
class Interval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
            raise IntervalError(f"interval ends must be finite, got [{self.lo}, {self.hi}]")
        if self.lo > self.hi:
            raise IntervalError(f"empty interval [{self.lo}, {self.hi}]")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def __contains__(self, x) -> bool:
        return self.lo <= x <= self.hi

    def contains(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi


class IntervalVector:
    """Component-wise intervals stored as two float64 arrays."""

    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi):
        lo = np.array(lo, dtype=np.float64, ndmin=1)
        hi = np.array(hi, dtype=np.float64, ndmin=1)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise IntervalError(f"bad interval vector shapes {lo.shape} / {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise IntervalError("interval ends must be finite")
        if np.any(lo > hi):
            raise IntervalError("empty component: lo > hi")
        lo.setflags(write=False)
        hi.setflags(write=False)
        self.lo = lo
        self.hi = hi

    @classmethod
    def from_intervals(cls, items: Sequence[Interval]):
        return cls([i.lo for i in items], [i.hi for i in items])

    def __len__(self) -> int:
        return self.lo.shape[0]

    def __getitem__(self, i: int) -> Interval:
        return Interval(float(self.lo[i]), float(self.hi[i]))

    def __iter__(self) -> Iterator[Interval]:
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        if not isinstance(other, IntervalVector):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __repr__(self):
        parts = ", ".join(f"[{a:.6g}, {b:.6g}]" for a, b in zip(self.lo, self.hi))
        return f"{type(self).__name__}({parts})"

    @property
    def widths(self) -> np.ndarray:
        return self.hi - self.lo

    def contains_point(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(self.lo <= x) and np.all(x <= self.hi))

    def contains(self, other: "IntervalVector") -> bool:
        return bool(np.all(self.lo <= other.lo) and np.all(other.hi <= self.hi))


class Box(IntervalVector):
    """Axis-aligned input box."""

    __slots__ = ()

    @classmethod
    def unit(cls, dim: int) -> "Box":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def parse(cls, text: str, dim: int | None = None) -> "Box":
        """Parse ``"lo:hi"`` (broadcast to ``dim``) or ``"lo:hi,lo:hi,..."``."""
        pairs = []
        for part in text.split(","):
            a, sep, b = part.strip().partition(":")
            if not sep:
                raise IntervalError(f"bad box component {part!r}; expected lo:hi")
            try:
                pairs.append((float(a), float(b)))
            except ValueError:
                raise IntervalError(f"bad box component {part!r}; expected lo:hi") from None
        if len(pairs) == 1 and dim is not None:
            pairs = pairs * dim
        if dim is not None and len(pairs) != dim:
            raise IntervalError(f"box has {len(pairs)} components, network input has {dim}")
        lo, hi = zip(*pairs)
        return cls(lo, hi)

    def format(self) -> str:
        return ",".join(f"{float(a)!r}:{float(b)!r}" for a, b in zip(self.lo, self.hi))

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def corners(self) -> np.ndarray:
        n = len(self)
        if n > 16:
            raise IntervalError("too many corners to enumerate")
        idx = (np.arange(1 << n)[:, None] >> np.arange(n)) & 1
        return np.where(idx == 1, self.hi, self.lo)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random((n, len(self)))


@dataclass(frozen=True)
class SplitWeights:
    w_minus: np.ndarray
    w_plus: np.ndarray


def split_weights(W) -> SplitWeights:
    """Negative entries to ``w_minus``, non-negative entries to ``w_plus``."""
    W = np.asarray(W, dtype=np.float64)
    if not np.all(np.isfinite(W)):
        raise IntervalError("non-finite-entry in weight matrix")
    return SplitWeights(np.where(W < 0, W, 0.0), np.where(W >= 0, W, 0.0))


def interval_eval(net, box: IntervalVector, tau: float = TAU_ROUND, backend: str | None = None) -> IntervalVector:
    """Enclosure of ``net(u)`` for every ``u`` in ``box``.

    ``net`` may be a :class:`Network`, a merged network, or an already
    :class:`PreparedNetwork`.
    """
    prep = net if isinstance(net, PreparedNetwork) else PreparedNetwork(_as_network(net), backend)
    if len(box) != prep.input_dim:
        raise IntervalError(f"box has {len(box)} dims, network input has {prep.input_dim}")
    lo, hi = prep.interval(box.lo, box.hi, tau)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise IntervalError("non-finite enclosure (overflow)")
    return IntervalVector(lo, hi)


def _as_network(net) -> Network:
    return net if isinstance(net, Network) else net.net


def abs_bounds(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact range of ``|x|`` for ``x`` in ``[lo, hi]``, element-wise."""
    alo = np.where(lo >= 0, lo, np.where(hi <= 0, -hi, 0.0))
    ahi = np.maximum(-lo, hi)
    return alo, ahi


def norm_bounds(lo: np.ndarray, hi: np.ndarray, norm: str, tau: float = TAU_ROUND):
    """Range of the norm over boxes; the last axis indexes components."""
    alo, ahi = abs_bounds(lo, hi)
    if norm == "linf":
        return alo.max(axis=-1), ahi.max(axis=-1)
    if norm == "l2":
        nlo = np.sqrt(np.sum(alo * alo, axis=-1))
        nhi = np.sqrt(np.sum(ahi * ahi, axis=-1))
        return np.maximum(nlo - tau * (1.0 + nlo), 0.0), nhi + tau * (1.0 + nhi)
    raise ValueError(f"unknown norm {norm!r}; expected one of {NORMS}")


def point_norm(y: np.ndarray, norm: str):
    """Norm of vectors along the last axis."""
    if norm == "linf":
        return np.max(np.abs(y), axis=-1)
    if norm == "l2":
        return np.sqrt(np.sum(y * y, axis=-1))
    raise ValueError(f"unknown norm {norm!r}; expected one of {NORMS}")


def interval_abs(iv: Interval) -> Interval:
    lo, hi = abs_bounds(np.array([iv.lo]), np.array([iv.hi]))
    return Interval(float(lo[0]), float(hi[0]))


def interval_norm(iv: IntervalVector, norm: str = "linf", tau: float = TAU_ROUND) -> Interval:
    lo, hi = norm_bounds(iv.lo, iv.hi, norm, tau)
    return Interval(float(lo), float(hi))
