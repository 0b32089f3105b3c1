"""Certified worst-case output error of quantized feedforward networks."""

__version__ = "0.1.0"

from .errors import QuantcertError  # noqa: E402
from .interval import Box, Interval, IntervalVector, interval_eval, interval_norm  # noqa: E402
from .kernels import BACKEND  # noqa: E402
from .merge import MergedNetwork, merge  # noqa: E402
from .network import Activation, Layer, Network, load_model, random_network, save_model  # noqa: E402
from .quantization import (  # noqa: E402
    AffineCalibration,
    QuantizationScheme,
    QuantizedNetwork,
    quantize_network,
)
from .solver import (  # noqa: E402
    Budget,
    ErrorCertificate,
    ProblemSpec,
    exact_reach_1d,
    grid_lower_bound,
    moore_skelboe,
    quantization_error,
)

__all__ = [
    "__version__",
    "QuantcertError",
    "Activation",
    "Layer",
    "Network",
    "random_network",
    "save_model",
    "load_model",
    "QuantizationScheme",
    "AffineCalibration",
    "QuantizedNetwork",
    "quantize_network",
    "MergedNetwork",
    "merge",
    "Box",
    "Interval",
    "IntervalVector",
    "interval_eval",
    "interval_norm",
    "Budget",
    "ErrorCertificate",
    "ProblemSpec",
    "moore_skelboe",
    "exact_reach_1d",
    "grid_lower_bound",
    "quantization_error",
    "BACKEND",
]
