import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quantcert import kernels
from quantcert.kernels import AVAILABLE, PreparedNetwork
from quantcert.merge import merge
from quantcert.network import Layer, Network, random_network

compiled_only = pytest.mark.skipif("compiled" not in AVAILABLE, reason="extension not built")


def test_backend_name():
    assert kernels.BACKEND in ("compiled", "python")
    assert kernels.BACKEND in AVAILABLE


def test_unknown_backend():
    with pytest.raises(ValueError):
        PreparedNetwork(random_network([1, 1], "relu", 0), "fortran")


def test_forced_fallback():
    env = dict(os.environ, QUANTCERT_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from quantcert import kernels; print(kernels.BACKEND, kernels.AVAILABLE)"],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "python ('python',)"


@pytest.mark.parametrize("backend", AVAILABLE)
def test_point_matches_reference(backend, rng):
    net = random_network([3, 9, 7, 2], "sigmoid", 4)
    prep = PreparedNetwork(net, backend)
    U = rng.random((50, 3))
    np.testing.assert_allclose(prep.point_batch(U), net.forward_batch(U), rtol=1e-13, atol=1e-14)
    for u in U[:5]:
        assert np.array_equal(prep.point(u), prep.point_batch(u[None, :])[0])


@compiled_only
@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    act=st.sampled_from(["relu", "tanh", "sigmoid", "linear"]),
    dims=st.lists(st.integers(1, 12), min_size=2, max_size=5),
)
def test_backends_agree(seed, act, dims):
    net = random_network(dims, act, seed)
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-1, 1, size=(8, dims[0]))
    hi = lo + rng.random((8, dims[0]))
    a, b = PreparedNetwork(net, "compiled"), PreparedNetwork(net, "python")
    np.testing.assert_allclose(a.point_batch(lo), b.point_batch(lo), rtol=1e-12, atol=1e-13)
    (al, ah), (bl, bh) = a.interval_batch(lo, hi, 1e-12), b.interval_batch(lo, hi, 1e-12)
    np.testing.assert_allclose(al, bl, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(ah, bh, rtol=1e-10, atol=1e-12)


@compiled_only
def test_all_zero_network():
    net = Network((Layer(np.zeros((2, 3)), np.zeros(2), "relu"), Layer(np.zeros((1, 2)), np.ones(1), "linear")))
    prep = PreparedNetwork(net, "compiled")
    assert prep.point(np.ones(3)).tolist() == [1.0]
    lo, hi = prep.interval(np.zeros(3), np.ones(3), 0.0)
    assert lo.tolist() == [1.0] and hi.tolist() == [1.0]


@compiled_only
def test_compiled_merged_sound(paper, rng):
    prep = PreparedNetwork(paper[2].net, "compiled")
    U = np.sort(rng.random((200, 2)), axis=1)
    lo, hi = prep.interval_batch(U[:, :1], U[:, 1:], 1e-12)
    for k in range(200):
        pts = np.linspace(U[k, 0], U[k, 1], 20)[:, None]
        Y = paper[2].forward_batch(pts)
        assert np.all((lo[k] <= Y) & (Y <= hi[k]))


@pytest.mark.parametrize("backend", AVAILABLE)
def test_bad_shapes(backend):
    prep = PreparedNetwork(random_network([2, 3, 1], "relu", 0), backend)
    with pytest.raises(ValueError):
        prep.point_batch(np.zeros((4, 3)))


def test_degenerate_box_without_slack_is_exact():
    phi = random_network([1, 6, 6, 1], "relu", 1)
    net = merge(phi, phi).net
    for backend in AVAILABLE:
        lo, hi = PreparedNetwork(net, backend).interval([0.5], [0.5], 0.0)
        assert lo[0] == hi[0] == 0.0
