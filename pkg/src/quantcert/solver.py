"""Certified bounds on the worst-case output error of a quantized network.

The error ``rho = sup_{u in box} ||phi(u) - phi_q(u)||`` equals the largest
output norm of the merged difference network, so every method here works on
that single network:

``moore-skelboe``
    Best-first interval branch-and-bound. Returns ``lo <= rho <= hi`` with
    ``hi - lo <= eps`` unless the budget runs out.
``exact-1d``
    For one input and piecewise-linear activations, the reachable set is a
    polyline whose vertices can be listed exactly; ``rho`` is attained at one
    of them.
``grid``
    Dense sampling. A lower bound only (uncertified); used as a test oracle.
"""

from __future__ import annotations

import csv
import heapq
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .errors import BudgetExceededError, MethodPreconditionError, SampleOutsideBoxError
from .interval import TAU_ROUND, Box, Interval, IntervalVector, norm_bounds, point_norm
from .kernels import PreparedNetwork
from .merge import MergedNetwork, merge
from .network import Activation, Network
from .quantization import Policy, QuantizedNetwork, quantize_network

__all__ = [
    "METHODS",
    "Budget",
    "SearchStats",
    "ErrorCertificate",
    "ProblemSpec",
    "PiecewiseLinearPath",
    "BandTable",
    "quantization_error",
    "moore_skelboe",
    "exact_reach_1d",
    "grid_lower_bound",
    "bound_band",
    "certificate_problems",
]

METHODS = ("moore-skelboe", "exact-1d", "grid")


@dataclass(frozen=True)
class Budget:
    max_boxes: int = 10**6
    max_seconds: float = 60.0
    max_grid_points: int = 10**7


@dataclass
class SearchStats:
    boxes_processed: int = 0
    max_depth: int = 0
    wall_time: float = 0.0
    witness_input: list[float] = field(default_factory=list)
    budget_exhausted: bool = False
    boxes_pruned: int = 0
    backend: str = ""


@dataclass
class ErrorCertificate:
    """Enclosure ``lo <= rho <= hi`` of the worst-case quantization error.

    For the uncertified ``grid`` method ``hi`` is ``inf`` and ``certified`` is
    false; only ``lo`` carries information.
    """

    lo: float
    hi: float
    eps_target: float
    method: str
    norm: str
    certified: bool = True
    stats: SearchStats = field(default_factory=SearchStats)

    @property
    def gap(self) -> float:
        return self.hi - self.lo

    @property
    def rho(self) -> float:
        """Best single estimate: ``hi`` for certified runs, else ``lo``."""
        return self.hi if self.certified else self.lo

    def to_dict(self, provenance: dict | None = None) -> dict[str, Any]:
        d = {
            "method": self.method,
            "norm": self.norm,
            "certified": self.certified,
            "eps_target": self.eps_target,
            "lo": self.lo,
            "hi": self.hi if self.certified else None,
            "witness_input": list(self.stats.witness_input),
            "boxes_processed": self.stats.boxes_processed,
            "boxes_pruned": self.stats.boxes_pruned,
            "max_depth": self.stats.max_depth,
            "wall_time_ms": self.stats.wall_time * 1e3,
            "budget_exhausted": self.stats.budget_exhausted,
            "backend": self.stats.backend,
            "tool_version": __version__,
        }
        if provenance is not None:
            d["provenance"] = provenance
        return d

    def to_json(self, provenance: dict | None = None) -> str:
        return json.dumps(self.to_dict(provenance), indent=1, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ErrorCertificate":
        stats = SearchStats(
            boxes_processed=int(d.get("boxes_processed", 0)),
            max_depth=int(d.get("max_depth", 0)),
            wall_time=float(d.get("wall_time_ms", 0.0)) / 1e3,
            witness_input=[float(x) for x in d.get("witness_input", [])],
            budget_exhausted=bool(d.get("budget_exhausted", False)),
            boxes_pruned=int(d.get("boxes_pruned", 0)),
            backend=str(d.get("backend", "")),
        )
        certified = bool(d.get("certified", d.get("hi") is not None))
        hi = d.get("hi")
        return cls(
            lo=float(d["lo"]),
            hi=float(hi) if hi is not None else math.inf,
            eps_target=float(d.get("eps_target", 0.0)),
            method=str(d["method"]),
            norm=str(d["norm"]),
            certified=certified,
            stats=stats,
        )


@dataclass(frozen=True)
class ProblemSpec:
    phi: Network
    policy: Policy
    box: Box
    norm: str = "linf"

    def __post_init__(self):
        if len(self.box) != self.phi.input_dim:
            raise ValueError(f"box has {len(self.box)} dims, network input has {self.phi.input_dim}")


def _net(m) -> Network:
    return m.net if isinstance(m, (MergedNetwork, QuantizedNetwork)) else m


def _as_box(box) -> Box:
    if isinstance(box, Box):
        return box
    if isinstance(box, Interval):
        return Box([box.lo], [box.hi])
    if isinstance(box, IntervalVector):
        return Box(box.lo, box.hi)
    lo, hi = box
    return Box(np.atleast_1d(lo), np.atleast_1d(hi))


# -- Moore-Skelboe ----------------------------------------------------------

class _BoxPool:
    """Flat storage for live boxes so the heap holds only small tuples."""

    def __init__(self, dim: int, capacity: int = 1024):
        self.lo = np.empty((capacity, dim))
        self.hi = np.empty((capacity, dim))
        self.depth = np.empty(capacity, dtype=np.int64)
        self.free: list[int] = list(range(capacity - 1, -1, -1))

    def add(self, lo, hi, depth) -> int:
        if not self.free:
            cap = self.lo.shape[0]
            self.lo = np.concatenate([self.lo, np.empty_like(self.lo)])
            self.hi = np.concatenate([self.hi, np.empty_like(self.hi)])
            self.depth = np.concatenate([self.depth, np.empty_like(self.depth)])
            self.free.extend(range(2 * cap - 1, cap - 1, -1))
        i = self.free.pop()
        self.lo[i] = lo
        self.hi[i] = hi
        self.depth[i] = depth
        return i

    def take(self, i):
        self.free.append(i)
        return self.lo[i].copy(), self.hi[i].copy(), int(self.depth[i])


def moore_skelboe(
    merged,
    box,
    norm: str = "linf",
    eps: float = 1e-4,
    budget: Budget = Budget(),
    *,
    workers: int = 1,
    batch: int = 64,
    tau: float = TAU_ROUND,
    backend: str | None = None,
    on_step: Callable[[float, float], None] | None = None,
    debug: bool = False,
) -> ErrorCertificate:
    """Maximize ``||net(u)||`` over ``box`` by best-first interval bisection.

    The queue is ordered by each box's interval upper bound (largest first,
    older first on ties). The incumbent ``lo`` is the best norm seen at a
    concrete point: the root's corners and the midpoint of every processed
    box. A box whose bound cannot beat ``lo + eps`` is dropped, and the
    largest dropped bound is kept so that ``hi`` stays sound. Boxes are
    bisected at the midpoint of their widest axis (lowest index on ties).

    Each round pops up to ``batch`` boxes (per worker) whose bounds still
    exceed ``lo + eps`` and evaluates them together, which amortizes the
    interpreter overhead. ``batch=1`` is the textbook one-box-per-step order.
    Any batch size gives the same ``(lo, hi)`` guarantee and is deterministic
    for a fixed ``workers``.

    ``workers > 1`` evaluates each round on a thread pool; statistics may
    differ from the single-worker run.

    ``on_step(lo, global_hi)`` is called after each round. With ``debug``
    every dropped bound is recorded and checked against the final ``hi``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    box = _as_box(box)
    net = _net(merged)
    if len(box) != net.input_dim:
        raise ValueError(f"box has {len(box)} dims, network input has {net.input_dim}")
    prep = PreparedNetwork(net, backend)
    n = len(box)
    t0 = time.perf_counter()
    stats = SearchStats(backend=prep.backend)

    def objective(points):
        return point_norm(prep.point_batch(points), norm)

    def upper(LO, HI):
        ylo, yhi = prep.interval_batch(LO, HI, tau)
        return norm_bounds(ylo, yhi, norm, tau)[1]

    seeds = np.vstack([box.corners(), box.midpoint[None, :]]) if n <= 12 else box.midpoint[None, :]
    vals = objective(seeds)
    k = int(np.argmax(vals))
    lo = float(vals[k])
    witness = seeds[k].copy()

    root_ub = max(float(upper(box.lo[None, :], box.hi[None, :])[0]), lo)
    pool = _BoxPool(n)
    heap: list[tuple[float, int, int]] = [(-root_ub, 0, pool.add(box.lo, box.hi, 0))]
    counter = 1
    pruned_hi = -math.inf
    pruned_log: list[float] = []
    if batch < 1:
        raise ValueError("batch must be >= 1")
    batch = batch * max(workers, 1)
    executor = ThreadPoolExecutor(workers) if workers > 1 else None

    def global_hi():
        top = -heap[0][0] if heap else -math.inf
        return max(top, pruned_hi)

    try:
        while heap:
            if stats.boxes_processed >= budget.max_boxes or time.perf_counter() - t0 > budget.max_seconds:
                stats.budget_exhausted = True
                break
            if -heap[0][0] <= lo + eps:
                break
            popped = []
            while heap and len(popped) < batch and -heap[0][0] > lo + eps:
                negub, _, idx = heapq.heappop(heap)
                popped.append((-negub, *pool.take(idx)))
            m = len(popped)
            stats.boxes_processed += m
            P_lo = np.array([p[1] for p in popped])
            P_hi = np.array([p[2] for p in popped])
            mids = 0.5 * (P_lo + P_hi)
            axes = np.argmax(P_hi - P_lo, axis=1)
            rows = np.arange(m)
            # children: left half then right half of each popped box
            C_lo = np.concatenate([P_lo, P_lo])
            C_hi = np.concatenate([P_hi, P_hi])
            C_hi[rows, axes] = mids[rows, axes]
            C_lo[m + rows, axes] = mids[rows, axes]
            if executor is None:
                vals = objective(mids)
                ubs = upper(C_lo, C_hi)
            else:
                chunks = np.array_split(np.arange(2 * m), workers)
                f_vals = executor.submit(objective, mids)
                parts = list(executor.map(lambda ix: upper(C_lo[ix], C_hi[ix]), chunks))
                vals = f_vals.result()
                ubs = np.concatenate(parts)
            k = int(np.argmax(vals))
            if vals[k] > lo:
                lo = float(vals[k])
                witness = mids[k].copy()
            for j in range(2 * m):
                parent_ub, _, _, depth = popped[j % m]
                # a child's bound never exceeds its parent's
                ub = min(float(ubs[j]), parent_ub)
                if ub <= lo + eps:
                    pruned_hi = max(pruned_hi, ub)
                    stats.boxes_pruned += 1
                    if debug:
                        pruned_log.append(ub)
                    continue
                stats.max_depth = max(stats.max_depth, depth + 1)
                heapq.heappush(heap, (-ub, counter, pool.add(C_lo[j], C_hi[j], depth + 1)))
                counter += 1
            if on_step is not None:
                on_step(lo, max(global_hi(), lo))
    finally:
        if executor is not None:
            executor.shutdown()

    hi = max(global_hi(), lo)
    stats.wall_time = time.perf_counter() - t0
    stats.witness_input = [float(x) for x in witness]
    if debug:
        assert all(p <= hi for p in pruned_log), "pruned box bound exceeds final hi"
    return ErrorCertificate(lo, hi, eps, "moore-skelboe", norm, True, stats)


# -- exact 1-D reachability --------------------------------------------------

@dataclass(frozen=True)
class PiecewiseLinearPath:
    """Polyline ``t -> values`` over ``[breakpoints[0], breakpoints[-1]]``.

    Between consecutive breakpoints the represented map is affine.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.breakpoints.ndim != 1 or self.values.shape[0] != self.breakpoints.shape[0]:
            raise ValueError("breakpoints and values must align")
        if np.any(np.diff(self.breakpoints) <= 0):
            raise ValueError("breakpoints must be strictly increasing")

    def __len__(self):
        return self.breakpoints.shape[0]

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if len(self) == 1:
            return np.repeat(self.values, t.shape[0], axis=0)
        cols = [np.interp(t, self.breakpoints, self.values[:, c]) for c in range(self.values.shape[1])]
        return np.stack(cols, axis=-1)


def _propagate_polyline(net: Network, a: float, b: float):
    """Breakpoints of the network restricted to the segment ``[a, b]``."""
    t = np.array([a, b]) if b > a else np.array([a])
    V = t[:, None]
    magnitude = 0.0
    for layer in net.layers:
        Z = V @ layer.weights.T + layer.bias
        magnitude = max(magnitude, float(np.max(np.abs(V) @ np.abs(layer.weights).T + np.abs(layer.bias))))
        if layer.activation is Activation.RELU:
            if len(t) > 1:
                za, zb = Z[:-1], Z[1:]
                seg, comp = np.nonzero(((za < 0) & (zb > 0)) | ((za > 0) & (zb < 0)))
                if seg.size:
                    z0, z1 = za[seg, comp], zb[seg, comp]
                    alpha = z0 / (z0 - z1)
                    t_new = t[seg] + alpha * (t[seg + 1] - t[seg])
                    Z_new = Z[seg] + alpha[:, None] * (Z[seg + 1] - Z[seg])
                    Z_new[np.arange(seg.size), comp] = 0.0
                    t_all = np.concatenate([t, t_new])
                    Z_all = np.concatenate([Z, Z_new])
                    order = np.argsort(t_all, kind="stable")
                    t_all, Z_all = t_all[order], Z_all[order]
                    keep = np.concatenate([[True], np.diff(t_all) > 0])
                    t, Z = t_all[keep], Z_all[keep]
            V = np.maximum(Z, 0.0)
        elif layer.activation is Activation.LINEAR:
            V = Z
        else:
            raise MethodPreconditionError(
                f"unsupported-activation: exact-1d needs relu/linear, got {layer.activation.value}"
            )
    return t, magnitude


def exact_reach_1d(
    merged, segment, norm: str = "linf", *, tau: float = TAU_ROUND, backend: str | None = None
) -> tuple[PiecewiseLinearPath, ErrorCertificate]:
    """Exact reachable curve of a one-input piecewise-linear network.

    Affine layers keep the breakpoints; each ReLU adds one at every zero
    crossing of every unit inside a segment. A norm of an affine path is
    convex, so the maximum over the whole curve sits at a breakpoint.
    """
    net = _net(merged)
    if net.input_dim != 1:
        raise MethodPreconditionError(f"input-dim-not-one: network has {net.input_dim} inputs")
    box = _as_box(segment)
    t0 = time.perf_counter()
    a, b = float(box.lo[0]), float(box.hi[0])
    t, magnitude = _propagate_polyline(net, a, b)
    prep = PreparedNetwork(net, backend)
    values = prep.point_batch(t[:, None])
    norms = point_norm(values, norm)
    k = int(np.argmax(norms))
    rho = float(norms[k])
    slack = tau * (1.0 + magnitude) * net.depth
    stats = SearchStats(
        boxes_processed=0,
        max_depth=0,
        wall_time=time.perf_counter() - t0,
        witness_input=[float(t[k])],
        backend=prep.backend,
    )
    cert = ErrorCertificate(rho, rho + slack, slack, "exact-1d", norm, True, stats)
    return PiecewiseLinearPath(t, values), cert


# -- grid oracle -------------------------------------------------------------

def grid_lower_bound(
    merged, box, norm: str = "linf", points_per_axis: int = 101, budget: Budget = Budget(), chunk: int = 65536
) -> ErrorCertificate:
    """Largest norm on a uniform grid (corners included). Not a certificate.

    Uses the plain numpy forward pass, independent of the search kernels.
    """
    if points_per_axis < 2:
        raise ValueError("points_per_axis must be >= 2")
    box = _as_box(box)
    net = _net(merged)
    n = len(box)
    total = points_per_axis**n
    if total > budget.max_grid_points:
        raise BudgetExceededError(f"budget-exceeded: grid of {total} points exceeds {budget.max_grid_points}")
    t0 = time.perf_counter()
    axes = [np.linspace(box.lo[i], box.hi[i], points_per_axis) for i in range(n)]
    best, best_u = -math.inf, None
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        digits = np.stack(np.unravel_index(idx, (points_per_axis,) * n), axis=1)
        U = np.stack([axes[i][digits[:, i]] for i in range(n)], axis=1)
        vals = point_norm(net.forward_batch(U), norm)
        k = int(np.argmax(vals))
        if vals[k] > best:
            best, best_u = float(vals[k]), U[k]
    stats = SearchStats(
        boxes_processed=total,
        wall_time=time.perf_counter() - t0,
        witness_input=[float(x) for x in best_u],
        backend="numpy",
    )
    return ErrorCertificate(best, math.inf, 0.0, "grid", norm, False, stats)


# -- top level -----------------------------------------------------------------

def quantization_error(
    spec: ProblemSpec,
    method: str = "moore-skelboe",
    eps: float = 1e-4,
    budget: Budget = Budget(),
    *,
    workers: int = 1,
    points_per_axis: int = 1001,
) -> ErrorCertificate:
    """Quantize, merge and bound the worst-case output error in one call."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if method == "exact-1d":
        if spec.phi.input_dim != 1:
            raise MethodPreconditionError("exact-1d requires a single input")
        if not spec.phi.piecewise_linear:
            raise MethodPreconditionError("exact-1d requires relu/linear activations")
    q = quantize_network(spec.phi, spec.policy)
    merged = merge(spec.phi, q)
    if method == "moore-skelboe":
        return moore_skelboe(merged, spec.box, spec.norm, eps, budget, workers=workers)
    if method == "exact-1d":
        return exact_reach_1d(merged, spec.box, spec.norm)[1]
    return grid_lower_bound(merged, spec.box, spec.norm, points_per_axis, budget)


def certificate_problems(cert: ErrorCertificate, merged=None, box=None, tol: float = 1e-9) -> list[str]:
    """Check a certificate's internal invariants; empty list means consistent."""
    problems = []
    if not (cert.lo >= 0):
        problems.append(f"lo is negative: {cert.lo}")
    if not (cert.lo <= cert.hi):
        problems.append(f"lo > hi: {cert.lo} > {cert.hi}")
    if cert.certified and not math.isfinite(cert.hi):
        problems.append("certified certificate has no finite hi")
    if cert.method == "moore-skelboe" and not cert.stats.budget_exhausted and cert.gap > cert.eps_target:
        problems.append(f"gap {cert.gap} exceeds eps {cert.eps_target}")
    w = np.asarray(cert.stats.witness_input, dtype=np.float64)
    if box is not None and w.size and not _as_box(box).contains_point(w):
        problems.append("witness lies outside the box")
    if merged is not None and w.size:
        val = float(point_norm(_net(merged).forward(w), cert.norm))
        if abs(val - cert.lo) > tol * (1.0 + abs(val)):
            problems.append(f"witness evaluates to {val}, certificate lo is {cert.lo}")
    return problems


# -- bound band ----------------------------------------------------------------

@dataclass
class BandTable:
    """Rows ``(u, phi(u), phi(u) - hi, phi(u) + hi)`` for plotting."""

    u: np.ndarray
    phi: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    violations: int | None = None

    def __len__(self):
        return self.u.shape[0]

    def rows(self):
        for i in range(len(self)):
            yield self.u[i], self.phi[i], self.lower[i], self.upper[i]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        nu, ny = self.u.shape[1], self.phi.shape[1]
        if nu == 1 and ny == 1:
            w.writerow(["u", "phi", "lower", "upper"])
        else:
            w.writerow(
                [f"u_{i}" for i in range(nu)]
                + [f"{name}_{j}" for name in ("phi", "lower", "upper") for j in range(ny)]
            )
        for i in range(len(self)):
            w.writerow([repr(float(x)) for x in (*self.u[i], *self.phi[i], *self.lower[i], *self.upper[i])])
        return buf.getvalue()


def bound_band(
    phi: Network,
    cert: ErrorCertificate,
    samples: Sequence | np.ndarray,
    phi_q: Network | QuantizedNetwork | None = None,
    box=None,
) -> BandTable:
    """The band ``phi(u) +/- hi`` at each sample.

    When ``phi_q`` is given, ``violations`` counts samples where the quantized
    output leaves the band in any component.
    """
    U = np.asarray(samples, dtype=np.float64)
    if U.ndim == 1:
        U = U[:, None]
    if box is not None:
        b = _as_box(box)
        outside = np.any((U < b.lo) | (U > b.hi), axis=1)
        if outside.any():
            raise SampleOutsideBoxError(f"sample-outside-box: {int(outside.sum())} samples")
    Y = phi.forward_batch(U)
    band = BandTable(U, Y, Y - cert.hi, Y + cert.hi)
    if phi_q is not None:
        Yq = _net(phi_q).forward_batch(U)
        band.violations = int(np.sum(np.any((Yq < band.lower) | (Yq > band.upper), axis=1)))
    return band
