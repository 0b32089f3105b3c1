"""Dense feedforward networks: representation, evaluation, generation and I/O.

A network is an ordered list of affine layers, each followed by an
element-wise monotone activation::

    u_0 = u
    u_l = act_l(W_l @ u_{l-1} + b_l),   l = 1..L
    y   = u_L

All arithmetic is float64. Networks are immutable once built; the weight
arrays are flagged read-only.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import InputError, Issue, ModelFormatError, NetworkError

__all__ = [
    "Activation",
    "Layer",
    "Network",
    "validate",
    "evaluate",
    "random_network",
    "normal_variates",
    "save_model",
    "load_model",
    "model_size_bytes",
    "STORAGE_BYTES",
]


class Activation(str, enum.Enum):
    RELU = "relu"
    TANH = "tanh"
    SIGMOID = "sigmoid"
    LINEAR = "linear"

    @property
    def piecewise_linear(self) -> bool:
        return self in (Activation.RELU, Activation.LINEAR)

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self is Activation.RELU:
            return np.maximum(x, 0.0)
        if self is Activation.TANH:
            return np.tanh(x)
        if self is Activation.SIGMOID:
            return _sigmoid(x)
        return np.asarray(x, dtype=np.float64)

    @classmethod
    def parse(cls, value: "Activation | str") -> "Activation":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(
                f"unknown activation {value!r}; expected one of "
                + ", ".join(a.value for a in cls)
            ) from None


def _sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Layer:
    """One affine layer ``act(W @ x + b)``.

    No checks happen here; :func:`validate` and :class:`Network` own them, so
    that malformed layers can be described and reported.
    """

    weights: np.ndarray
    bias: np.ndarray
    activation: Activation = Activation.LINEAR

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "bias", _frozen(np.ravel(self.bias)))
        object.__setattr__(self, "activation", Activation.parse(self.activation))

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape

    def __eq__(self, other):
        if not isinstance(other, Layer):
            return NotImplemented
        return (
            self.activation is other.activation
            and self.weights.shape == other.weights.shape
            and self.bias.shape == other.bias.shape
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.bias, other.bias)
        )

    __hash__ = None


def validate(layers: Sequence[Layer] | "Network", input_dim: int | None = None) -> list[Issue]:
    """Check the structural invariants of a layer stack.

    Returns an empty list when every invariant holds, otherwise one
    :class:`~quantcert.errors.Issue` per violation. Layer indices are 1-based.
    """
    if isinstance(layers, Network):
        input_dim = layers.input_dim
        layers = layers.layers
    issues: list[Issue] = []
    if len(layers) == 0:
        return [Issue("empty-network")]
    prev_rows = input_dim
    for idx, layer in enumerate(layers, start=1):
        w, b = layer.weights, layer.bias
        if w.ndim != 2:
            issues.append(Issue("dimension-mismatch", idx, detail="weights must be a matrix"))
            continue
        rows, cols = w.shape
        if rows == 0 or cols == 0:
            issues.append(Issue("dimension-mismatch", idx, detail=f"empty weight matrix {w.shape}"))
        if b.shape[0] != rows:
            issues.append(
                Issue("dimension-mismatch", idx, detail=f"bias length {b.shape[0]} != {rows} rows")
            )
        if prev_rows is not None and cols != prev_rows:
            issues.append(
                Issue("dimension-mismatch", idx, detail=f"{cols} columns, previous width {prev_rows}")
            )
        bad = np.argwhere(~np.isfinite(w))
        for i, j in bad:
            issues.append(Issue("non-finite-entry", idx, (int(i), int(j)), "weights"))
        for (i,) in np.argwhere(~np.isfinite(b)):
            issues.append(Issue("non-finite-entry", idx, (int(i),), "bias"))
        prev_rows = rows
    return issues


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable feedforward network. Raises :class:`NetworkError` if invalid."""

    layers: tuple[Layer, ...]
    input_dim: int = field(default=0)

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not self.input_dim and layers and layers[0].weights.ndim == 2:
            object.__setattr__(self, "input_dim", int(layers[0].weights.shape[1]))
        issues = validate(layers, self.input_dim)
        if issues:
            raise NetworkError(issues)

    @classmethod
    def from_arrays(cls, weights, biases, activations) -> "Network":
        if isinstance(activations, (str, Activation)):
            activations = [activations] * len(weights)
        return cls(tuple(Layer(w, b, a) for w, b, a in zip(weights, biases, activations)))

    @property
    def output_dim(self) -> int:
        return int(self.layers[-1].weights.shape[0])

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> list[int]:
        return [self.input_dim] + [layer.weights.shape[0] for layer in self.layers]

    @property
    def activations(self) -> list[Activation]:
        return [layer.activation for layer in self.layers]

    @property
    def n_params(self) -> int:
        return sum(layer.weights.size + layer.bias.size for layer in self.layers)

    @property
    def piecewise_linear(self) -> bool:
        return all(a.piecewise_linear for a in self.activations)

    def forward(self, u) -> np.ndarray:
        """Evaluate the network at one input vector."""
        x = np.asarray(u, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.input_dim:
            raise InputError(f"expected input of length {self.input_dim}, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InputError("input contains non-finite entries")
        for layer in self.layers:
            x = layer.activation.apply(layer.weights @ x + layer.bias)
        return x

    __call__ = forward

    def forward_batch(self, U) -> np.ndarray:
        """Evaluate at each row of ``U`` (shape ``(k, input_dim)``)."""
        X = np.asarray(U, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise InputError(f"expected batch of shape (k, {self.input_dim}), got {X.shape}")
        for layer in self.layers:
            X = layer.activation.apply(X @ layer.weights.T + layer.bias)
        return X

    def __eq__(self, other):
        if not isinstance(other, Network):
            return NotImplemented
        return self.input_dim == other.input_dim and self.layers == other.layers

    __hash__ = None

    def __repr__(self):
        acts = ",".join(a.value for a in self.activations)
        return f"Network(dims={self.dims}, activations=[{acts}])"


def evaluate(net: Network, u) -> np.ndarray:
    return net.forward(u)


# -- seeded generation -----------------------------------------------------

def normal_variates(seed: int, n: int) -> np.ndarray:
    """``n`` standard normal variates from a fixed, portable stream.

    Raw 64-bit words come from the PCG64 bit generator seeded with ``seed``.
    Each word keeps its top 53 bits as a uniform in [0, 1); consecutive
    uniform pairs ``(a, b)`` become two normals by Box-Muller::

        r = sqrt(-2 log(1 - a));  z0 = r cos(2 pi b);  z1 = r sin(2 pi b)

    Only the bit generator's raw stream is used, which numpy keeps stable
    across releases, unlike the higher-level ``Generator`` samplers.
    """
    pairs = (n + 1) // 2
    raw = np.random.PCG64(seed).random_raw(2 * pairs).astype(np.uint64)
    uni = (raw >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
    a, b = uni[0::2], uni[1::2]
    r = np.sqrt(-2.0 * np.log1p(-a))
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(2.0 * np.pi * b)
    z[1::2] = r * np.sin(2.0 * np.pi * b)
    return z[:n]


def random_network(
    dims: Sequence[int], activation: Activation | str = Activation.RELU, seed: int = 0
) -> Network:
    """Random network with i.i.d. N(0, 1) weights and biases.

    Hidden layers use ``activation``; the output layer is linear. Parameters
    are drawn layer by layer, weights (row-major) before bias.
    """
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ValueError(f"dims must have at least 2 entries, got {dims}")
    if any(d <= 0 for d in dims):
        raise ValueError(f"dims must be positive, got {dims}")
    act = Activation.parse(activation)
    total = sum(dims[i + 1] * dims[i] + dims[i + 1] for i in range(len(dims) - 1))
    z = normal_variates(seed, total)
    layers, pos = [], 0
    for i in range(len(dims) - 1):
        rows, cols = dims[i + 1], dims[i]
        w = z[pos : pos + rows * cols].reshape(rows, cols)
        pos += rows * cols
        b = z[pos : pos + rows]
        pos += rows
        last = i == len(dims) - 2
        layers.append(Layer(w, b, Activation.LINEAR if last else act))
    return Network(tuple(layers), dims[0])


# -- model file format -----------------------------------------------------

_MODEL_KEYS = {"input_dim", "layers", "provenance"}
_LAYER_KEYS = {"weights", "bias", "activation"}


def network_to_document(net: Network) -> dict[str, Any]:
    return {
        "input_dim": net.input_dim,
        "layers": [
            {
                "weights": [[float(x) for x in row] for row in layer.weights],
                "bias": [float(x) for x in layer.bias],
                "activation": layer.activation.value,
            }
            for layer in net.layers
        ],
    }


def dump_document(doc: dict[str, Any]) -> bytes:
    # float repr is the shortest string that round-trips a float64 exactly
    return (json.dumps(doc, indent=1, allow_nan=False) + "\n").encode("utf-8")


def save_model(net: Network, provenance: dict | None = None) -> bytes:
    doc = network_to_document(net)
    if provenance is not None:
        doc["provenance"] = provenance
    return dump_document(doc)


def parse_document(data: bytes | str) -> Any:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ModelFormatError("parse-error", "not UTF-8", position=(1, exc.start + 1)) from None

    def _reject_constant(name):
        raise ValueError(name)

    try:
        return json.loads(data, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ModelFormatError("parse-error", exc.msg, position=(exc.lineno, exc.colno)) from None
    except ValueError as exc:
        raise ModelFormatError("schema-violation", f"non-finite number {exc}") from None


def _number(x, where: str) -> float:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise ModelFormatError("schema-violation", f"expected a number, got {x!r}", field=where)
    return float(x)


def _matrix(rows, where: str) -> np.ndarray:
    if not isinstance(rows, list) or not rows:
        raise ModelFormatError("schema-violation", "expected a non-empty list of rows", field=where)
    width = None
    out = []
    for i, row in enumerate(rows):
        if not isinstance(row, list):
            raise ModelFormatError("schema-violation", "expected a list", field=f"{where}[{i}]")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ModelFormatError(
                "schema-violation",
                f"row has {len(row)} entries, expected {width}",
                field=f"{where}[{i}]",
            )
        out.append([_number(x, f"{where}[{i}][{j}]") for j, x in enumerate(row)])
    return np.array(out, dtype=np.float64)


def network_from_document(doc: Any, extra_keys: Iterable[str] = ()) -> Network:
    if not isinstance(doc, dict):
        raise ModelFormatError("schema-violation", "top level must be an object")
    allowed = _MODEL_KEYS | set(extra_keys)
    for key in doc:
        if key not in allowed:
            raise ModelFormatError("schema-violation", "unknown field", field=key)
    for key in ("input_dim", "layers"):
        if key not in doc:
            raise ModelFormatError("schema-violation", "missing field", field=key)
    input_dim = doc["input_dim"]
    if isinstance(input_dim, bool) or not isinstance(input_dim, int) or input_dim <= 0:
        raise ModelFormatError("schema-violation", "must be a positive integer", field="input_dim")
    if not isinstance(doc["layers"], list) or not doc["layers"]:
        raise ModelFormatError("schema-violation", "must be a non-empty list", field="layers")
    layers = []
    for i, ld in enumerate(doc["layers"]):
        where = f"layers[{i}]"
        if not isinstance(ld, dict):
            raise ModelFormatError("schema-violation", "expected an object", field=where)
        for key in ld:
            if key not in _LAYER_KEYS:
                raise ModelFormatError("schema-violation", "unknown field", field=f"{where}.{key}")
        for key in _LAYER_KEYS:
            if key not in ld:
                raise ModelFormatError("schema-violation", "missing field", field=f"{where}.{key}")
        w = _matrix(ld["weights"], f"{where}.weights")
        if not isinstance(ld["bias"], list):
            raise ModelFormatError("schema-violation", "expected a list", field=f"{where}.bias")
        b = np.array([_number(x, f"{where}.bias[{j}]") for j, x in enumerate(ld["bias"])])
        try:
            act = Activation.parse(ld["activation"])
        except ValueError as exc:
            raise ModelFormatError("schema-violation", str(exc), field=f"{where}.activation") from None
        layers.append(Layer(w, b, act))
    try:
        return Network(tuple(layers), input_dim)
    except NetworkError as exc:
        first = exc.issues[0]
        kind = "dimension-mismatch" if first.kind == "dimension-mismatch" else "schema-violation"
        field_name = None if first.layer is None else f"layers[{first.layer - 1}]"
        raise ModelFormatError(kind, str(exc), field=field_name) from None


def load_model(data: bytes | str) -> Network:
    """Parse a model document written by :func:`save_model`."""
    return network_from_document(parse_document(data))


# -- storage accounting ----------------------------------------------------

STORAGE_BYTES = {"float64": 8, "float32": 4, "int8-affine": 1, "int16-affine": 2}
_AFFINE_OVERHEAD = 2 * 8  # scale + zero point, per tensor


def model_size_bytes(net: Network, storage: str = "float32") -> int:
    """Parameter payload size in bytes for a given storage format.

    Affine integer storage adds 16 bytes per tensor for its scale and zero
    point. Container overhead (headers, shapes) is not counted.
    """
    try:
        per_entry = STORAGE_BYTES[storage]
    except KeyError:
        raise ValueError(f"unknown storage {storage!r}; expected one of {sorted(STORAGE_BYTES)}") from None
    size = net.n_params * per_entry
    if storage.endswith("-affine"):
        size += _AFFINE_OVERHEAD * 2 * net.depth
    return size
