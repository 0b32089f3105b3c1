import numpy as np
import pytest

from quantcert.interval import Box
from quantcert.merge import merge
from quantcert.network import Layer, Network, random_network
from quantcert.quantization import QuantizationScheme, quantize_network

PAPER_DIMS = [1, 50, 50, 50, 1]


def linear_net(w, b=None):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    b = np.zeros(w.shape[0]) if b is None else np.asarray(b, dtype=float)
    return Network((Layer(w, b, "linear"),))


def paper_instance(seed=7, width=50):
    phi = random_network([1, width, width, width, 1], "relu", seed)
    q = quantize_network(phi, QuantizationScheme.truncation(4))
    return phi, q, merge(phi, q)


@pytest.fixture(scope="session")
def paper():
    return paper_instance(7, 50)


@pytest.fixture
def unit_box():
    return Box([0.0], [1.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
