"""Merged difference network.

Given a network and its quantized twin with the same architecture, build one
network of depth ``L + 1`` whose output is ``phi(u) - phi_q(u)``:

* layer 1 stacks ``[W_1; Q(W_1)]`` so both paths read the same input,
* layers 2..L are block diagonal ``diag(W_l, Q(W_l))`` so the paths never mix,
* the final linear layer ``[I, -I]`` (zero bias) subtracts the two outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np

from .errors import MergeError
from .network import Activation, Layer, Network
from .quantization import QuantizedNetwork

__all__ = ["MergedNetwork", "merge", "merged_shape_report"]


@dataclass(frozen=True, eq=False)
class MergedNetwork:
    net: Network
    source_dims: tuple[int, ...]

    @property
    def input_dim(self) -> int:
        return self.net.input_dim

    @property
    def output_dim(self) -> int:
        return self.net.output_dim

    def forward(self, u) -> np.ndarray:
        return self.net.forward(u)

    __call__ = forward

    def forward_batch(self, U) -> np.ndarray:
        return self.net.forward_batch(U)


def merge(phi: Network, phi_q: QuantizedNetwork | Network) -> MergedNetwork:
    """Build the difference network ``u -> phi(u) - phi_q(u)``."""
    q = phi_q.net if isinstance(phi_q, QuantizedNetwork) else phi_q
    if phi.dims != q.dims:
        raise MergeError(f"architecture-mismatch: dims {phi.dims} vs {q.dims}")
    if phi.activations != q.activations:
        raise MergeError("architecture-mismatch: activations differ")

    layers = []
    for idx, (a, b) in enumerate(zip(phi.layers, q.layers)):
        if idx == 0:
            w = np.vstack([a.weights, b.weights])
        else:
            rows, cols = a.weights.shape
            w = np.zeros((2 * rows, 2 * cols))
            w[:rows, :cols] = a.weights
            w[rows:, cols:] = b.weights
        layers.append(Layer(w, np.concatenate([a.bias, b.bias]), a.activation))
    ny = phi.output_dim
    eye = np.eye(ny)
    layers.append(Layer(np.hstack([eye, -eye]), np.zeros(ny), Activation.LINEAR))
    return MergedNetwork(Network(tuple(layers), phi.input_dim), tuple(phi.dims))


def merged_shape_report(m: MergedNetwork) -> dict[str, Any]:
    """Per-layer shapes and a check of the block structure."""
    dims = m.source_dims
    L = len(dims) - 1
    rows_out = []
    ok = len(m.net.layers) == L + 1
    for idx, layer in enumerate(m.net.layers, start=1):
        w = layer.weights
        entry: dict[str, Any] = {
            "layer": idx,
            "shape": list(w.shape),
            "activation": layer.activation.value,
        }
        if 1 < idx <= L:
            n, p = dims[idx], dims[idx - 1]
            upper_right = w[:n, p:]
            lower_left = w[n:, :p]
            entry["zero_blocks"] = [list(upper_right.shape), list(lower_left.shape)]
            entry["structural_zeros"] = int(upper_right.size + lower_left.size)
            ok &= not upper_right.any() and not lower_left.any()
        if idx == L + 1:
            ny = dims[-1]
            ok &= np.array_equal(w, np.hstack([np.eye(ny), -np.eye(ny)]))
            ok &= not layer.bias.any() and layer.activation is Activation.LINEAR
            entry["bias_is_zero"] = not layer.bias.any()
        rows_out.append(entry)
    return {
        "source_dims": list(dims),
        "widths": [layer.weights.shape[0] for layer in m.net.layers],
        "layers": rows_out,
        "block_structure_ok": bool(ok),
    }
