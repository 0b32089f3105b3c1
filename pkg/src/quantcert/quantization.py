"""Parameter quantization and simulated quantized networks.

Two schemes are supported:

* ``affine``: ``q = round(r / S) - Z`` clamped to the signed ``bits`` range,
  realized back as ``S * (q + Z)``. Rounding is to nearest, ties away from
  zero.
* ``truncation``: keep ``digits`` decimal places, dropping the rest (toward
  zero).

Quantized networks are realized with the dequantized float weights so that
they can be evaluated on the same real inputs as their source.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from decimal import ROUND_DOWN, Decimal, localcontext
from typing import Any, Sequence, Union

import numpy as np

from .errors import ModelFormatError, SchemeError
from .network import (
    Layer,
    Network,
    dump_document,
    model_size_bytes,
    network_from_document,
    network_to_document,
    parse_document,
    save_model,
)

__all__ = [
    "QuantizationScheme",
    "AffineCalibration",
    "QuantizedNetwork",
    "quantize_value",
    "dequantize_value",
    "truncate_value",
    "quantize_network",
    "quantization_stats",
    "parse_policy",
    "save_quantized",
    "load_quantized",
]

MAX_TRUNCATION_DIGITS = 12


@dataclass(frozen=True)
class QuantizationScheme:
    kind: str
    scale: float = 1.0
    zero_point: int = 0
    bits: int = 8
    digits: int = 0

    def __post_init__(self):
        if self.kind == "affine":
            if not (2 <= self.bits <= 16):
                raise SchemeError(f"bits must be in [2, 16], got {self.bits}")
            if not (np.isfinite(self.scale) and self.scale > 0):
                raise SchemeError(f"scale must be positive and finite, got {self.scale}")
            lo, hi = self.int_range
            if not (lo <= self.zero_point <= hi):
                raise SchemeError(f"zero point {self.zero_point} outside [{lo}, {hi}]")
        elif self.kind == "truncation":
            if not (0 <= self.digits <= MAX_TRUNCATION_DIGITS):
                raise SchemeError(f"digits must be in [0, {MAX_TRUNCATION_DIGITS}], got {self.digits}")
        else:
            raise SchemeError(f"unknown scheme kind {self.kind!r}")

    @classmethod
    def affine(cls, scale: float, zero_point: int = 0, bits: int = 8) -> "QuantizationScheme":
        return cls("affine", scale=float(scale), zero_point=int(zero_point), bits=int(bits))

    @classmethod
    def truncation(cls, digits: int) -> "QuantizationScheme":
        return cls("truncation", digits=int(digits))

    @property
    def int_range(self) -> tuple[int, int]:
        half = 1 << (self.bits - 1)
        return -half, half - 1

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "affine":
            return {"kind": "affine", "scale": self.scale, "zero_point": self.zero_point, "bits": self.bits}
        return {"kind": "truncation", "digits": self.digits}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "QuantizationScheme":
        kind = d.get("kind")
        allowed = {"affine": {"kind", "scale", "zero_point", "bits"}, "truncation": {"kind", "digits"}}
        if kind not in allowed:
            raise SchemeError(f"unknown scheme kind {kind!r}")
        extra = set(d) - allowed[kind]
        if extra:
            raise SchemeError(f"unknown scheme fields {sorted(extra)}")
        if kind == "affine":
            return cls.affine(d["scale"], d.get("zero_point", 0), d.get("bits", 8))
        return cls.truncation(d["digits"])


@dataclass(frozen=True)
class AffineCalibration:
    """Per-tensor symmetric calibration: ``S = max|x| / (2**(bits-1) - 1)``, ``Z = 0``."""

    bits: int = 8

    def scheme_for(self, tensor: np.ndarray) -> QuantizationScheme:
        m = float(np.max(np.abs(tensor))) if tensor.size else 0.0
        scale = m / ((1 << (self.bits - 1)) - 1) if m > 0 else 1.0
        return QuantizationScheme.affine(scale, 0, self.bits)


Policy = Union[QuantizationScheme, AffineCalibration, Sequence[QuantizationScheme]]


def parse_policy(text: str) -> QuantizationScheme | AffineCalibration:
    """Parse ``truncate:<digits>`` or ``affine:<bits>``."""
    kind, _, arg = text.partition(":")
    try:
        n = int(arg)
    except ValueError:
        raise SchemeError(f"bad quantization policy {text!r}; use truncate:<digits> or affine:<bits>") from None
    if kind in ("truncate", "truncation"):
        return QuantizationScheme.truncation(n)
    if kind == "affine":
        if not 2 <= n <= 16:
            raise SchemeError(f"bits must be in [2, 16], got {n}")
        return AffineCalibration(n)
    raise SchemeError(f"bad quantization policy {text!r}; use truncate:<digits> or affine:<bits>")


# -- scalar primitives -----------------------------------------------------

def _check_finite(r):
    if not np.all(np.isfinite(r)):
        raise SchemeError("cannot quantize a non-finite value")


def _round_half_away(x: np.ndarray) -> np.ndarray:
    a = np.abs(x)
    f = np.floor(a)
    # a - f is exact for |a| < 2**52, unlike floor(a + 0.5)
    up = (a - f) >= 0.5
    return np.copysign(f + up, x)


def _quantize_array(r: np.ndarray, s: QuantizationScheme) -> np.ndarray:
    if s.kind != "affine":
        raise SchemeError("quantize_value needs an affine scheme")
    _check_finite(r)
    q = _round_half_away(np.asarray(r, dtype=np.float64) / s.scale) - s.zero_point
    lo, hi = s.int_range
    return np.clip(q, lo, hi).astype(np.int64)


def quantize_value(r: float, s: QuantizationScheme) -> int:
    return int(_quantize_array(np.array([r], dtype=np.float64), s)[0])


def dequantize_value(q: int, s: QuantizationScheme) -> float:
    return float(s.scale * (q + s.zero_point))


def _dequantize_array(q: np.ndarray, s: QuantizationScheme) -> np.ndarray:
    return s.scale * (q + s.zero_point).astype(np.float64)


def truncate_value(r: float, digits: int) -> float:
    """Drop all but ``digits`` decimal places, rounding toward zero.

    ``r`` is read through its shortest round-trip decimal form, so a value
    that already has ``digits`` places (e.g. ``0.29`` at 2 digits) is a fixed
    point even though its binary expansion may fall just below.
    """
    if not np.isfinite(r):
        raise SchemeError("cannot truncate a non-finite value")
    if digits < 0:
        raise SchemeError(f"digits must be non-negative, got {digits}")
    with localcontext() as ctx:
        ctx.prec = 400  # enough for any float64 at 12 places
        d = Decimal(repr(float(r))).quantize(Decimal(1).scaleb(-digits), rounding=ROUND_DOWN)
    return float(d) + 0.0  # no negative zero


def _truncate_array(a: np.ndarray, digits: int) -> np.ndarray:
    _check_finite(a)
    flat = [truncate_value(float(x), digits) for x in a.ravel()]
    return np.array(flat, dtype=np.float64).reshape(a.shape)


def apply_scheme(tensor: np.ndarray, s: QuantizationScheme) -> np.ndarray:
    """Quantize then realize a tensor under ``s`` (the fake-quantized values)."""
    if s.kind == "truncation":
        return _truncate_array(tensor, s.digits)
    return _dequantize_array(_quantize_array(tensor, s), s)


# -- networks --------------------------------------------------------------

def _digest(net: Network) -> str:
    return hashlib.sha256(save_model(net)).hexdigest()


@dataclass(frozen=True, eq=False)
class QuantizedNetwork:
    """Simulated-quantized network.

    ``net`` holds the dequantized weights. ``schemes`` lists one scheme per
    tensor in the order ``W_1, b_1, W_2, b_2, ...``. ``origin`` is the source
    network when known (it is not stored in model files, only its digest).
    """

    net: Network
    schemes: tuple[QuantizationScheme, ...]
    origin: Network | None = None
    origin_sha256: str | None = None

    def __post_init__(self):
        if len(self.schemes) != 2 * self.net.depth:
            raise SchemeError(f"expected {2 * self.net.depth} schemes, got {len(self.schemes)}")
        if self.origin is not None:
            if self.origin.dims != self.net.dims or self.origin.activations != self.net.activations:
                raise SchemeError("quantized network architecture differs from its origin")
            if self.origin_sha256 is None:
                object.__setattr__(self, "origin_sha256", _digest(self.origin))

    def tensors(self):
        for layer in self.net.layers:
            yield layer.weights
            yield layer.bias

    def storage(self) -> str:
        """Narrowest storage format able to hold every tensor's integers."""
        need = 0
        for tensor, s in zip(self.tensors(), self.schemes):
            if s.kind == "affine":
                need = max(need, s.bits)
            else:
                m = float(np.max(np.abs(tensor))) if tensor.size else 0.0
                k = int(round(m * 10**s.digits))
                need = max(need, k.bit_length() + 1)
        if need <= 8:
            return "int8-affine"
        if need <= 16:
            return "int16-affine"
        return "float32"


def _schemes_for(net: Network, policy: Policy) -> list[QuantizationScheme]:
    n = 2 * net.depth
    if isinstance(policy, QuantizationScheme):
        return [policy] * n
    if isinstance(policy, AffineCalibration):
        out = []
        for layer in net.layers:
            out.append(policy.scheme_for(layer.weights))
            out.append(policy.scheme_for(layer.bias))
        return out
    schemes = list(policy)
    if len(schemes) != n or not all(isinstance(s, QuantizationScheme) for s in schemes):
        raise SchemeError(f"per-tensor policy needs {n} QuantizationScheme entries")
    return schemes


def quantize_network(net: Network, policy: Policy) -> QuantizedNetwork:
    """Quantize every weight and bias tensor of ``net``.

    ``policy`` is a single scheme for all tensors, an :class:`AffineCalibration`
    (one symmetric scheme fitted per tensor) or an explicit per-tensor list.
    """
    schemes = _schemes_for(net, policy)
    layers = []
    for i, layer in enumerate(net.layers):
        w = apply_scheme(layer.weights, schemes[2 * i])
        b = apply_scheme(layer.bias, schemes[2 * i + 1])
        layers.append(Layer(w, b, layer.activation))
    return QuantizedNetwork(Network(tuple(layers), net.input_dim), tuple(schemes), origin=net)


@dataclass
class TensorStats:
    name: str
    scheme: QuantizationScheme
    max_abs_perturbation: float
    mean_abs_perturbation: float


@dataclass
class QuantizationReport:
    tensors: list[TensorStats]
    storage: str
    original_bytes: int
    compressed_bytes: int

    @property
    def max_perturbation(self) -> float:
        return max(t.max_abs_perturbation for t in self.tensors)

    def to_dict(self) -> dict[str, Any]:
        return {
            "storage": self.storage,
            "original_bytes_float32": self.original_bytes,
            "compressed_bytes": self.compressed_bytes,
            "tensors": [
                {
                    "name": t.name,
                    "scheme": t.scheme.to_dict(),
                    "max_abs_perturbation": t.max_abs_perturbation,
                    "mean_abs_perturbation": t.mean_abs_perturbation,
                }
                for t in self.tensors
            ],
        }


def quantization_stats(q: QuantizedNetwork, origin: Network | None = None) -> QuantizationReport:
    origin = origin if origin is not None else q.origin
    if origin is None:
        raise SchemeError("quantization_stats needs the origin network")
    stats = []
    for i, (a, b) in enumerate(zip(origin.layers, q.net.layers), start=1):
        for name, x, y, s in (
            (f"W{i}", a.weights, b.weights, q.schemes[2 * i - 2]),
            (f"b{i}", a.bias, b.bias, q.schemes[2 * i - 1]),
        ):
            d = np.abs(x - y)
            stats.append(TensorStats(name, s, float(d.max()), float(d.mean())))
    storage = q.storage()
    return QuantizationReport(
        stats,
        storage,
        model_size_bytes(origin, "float32"),
        model_size_bytes(q.net, storage),
    )


# -- file format -----------------------------------------------------------

def save_quantized(q: QuantizedNetwork, provenance: dict | None = None) -> bytes:
    doc = network_to_document(q.net)
    doc["quantization"] = {
        "origin_sha256": q.origin_sha256,
        "schemes": [s.to_dict() for s in q.schemes],
    }
    if provenance is not None:
        doc["provenance"] = provenance
    return dump_document(doc)


def load_quantized(data: bytes | str, origin: Network | None = None) -> QuantizedNetwork:
    """Parse a quantized model; checks the origin digest when ``origin`` is given."""
    doc = parse_document(data)
    net = network_from_document(doc, extra_keys=("quantization",))
    block = doc.get("quantization") if isinstance(doc, dict) else None
    if not isinstance(block, dict) or set(block) - {"origin_sha256", "schemes"}:
        raise ModelFormatError("schema-violation", "missing or malformed block", field="quantization")
    try:
        schemes = tuple(QuantizationScheme.from_dict(s) for s in block.get("schemes", []))
        digest = block.get("origin_sha256")
        if origin is not None and digest is not None and digest != _digest(origin):
            raise SchemeError("quantized model was not produced from the given origin network")
        return QuantizedNetwork(net, schemes, origin=origin, origin_sha256=digest)
    except (SchemeError, KeyError, TypeError) as exc:
        raise ModelFormatError("schema-violation", str(exc), field="quantization") from None
