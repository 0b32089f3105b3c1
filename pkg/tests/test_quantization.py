from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quantcert.errors import ModelFormatError, SchemeError
from quantcert.network import Layer, Network, random_network, save_model
from quantcert.quantization import (
    AffineCalibration,
    QuantizationScheme,
    dequantize_value,
    load_quantized,
    parse_policy,
    quantization_stats,
    quantize_network,
    quantize_value,
    save_quantized,
    truncate_value,
)

from conftest import PAPER_DIMS


def reference_quantize(r, scale, zero, bits):
    """Exact rational quotient, rounded half away from zero."""
    q = Fraction(r) / Fraction(scale)
    mag = Decimal(abs(q.numerator)) / Decimal(q.denominator)
    n = int(mag.quantize(Decimal(1), rounding=ROUND_HALF_UP))
    n = -n if q < 0 else n
    lo, hi = -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return max(lo, min(hi, n - zero))


@pytest.mark.parametrize(
    "r,scale,zero,expected",
    [(2.5, 0.5, 0, 5), (1.0, 0.1, 10, 0), (0.26, 0.1, 0, 3)],
)
def test_quantize_value_examples(r, scale, zero, expected):
    s = QuantizationScheme.affine(scale, zero, 8)
    assert quantize_value(r, s) == expected == reference_quantize(r, scale, zero, 8)


@pytest.mark.parametrize("x,expected", [(0.5, 1), (-0.5, -1), (1.5, 2), (-2.5, -3), (0.49999999999999994, 0)])
def test_ties_away_from_zero(x, expected):
    assert quantize_value(x, QuantizationScheme.affine(1.0, 0, 8)) == expected


@settings(max_examples=300, deadline=None)
@given(r=st.floats(-100, 100), scale=st.floats(1e-3, 10), bits=st.integers(2, 16))
def test_quantize_matches_rational_reference(r, scale, bits):
    s = QuantizationScheme.affine(scale, 0, bits)
    assert quantize_value(r, s) == reference_quantize(r, scale, 0, bits)


def test_quantize_clamps():
    s = QuantizationScheme.affine(0.01, 0, 8)
    assert quantize_value(100.0, s) == 127
    assert quantize_value(-100.0, s) == -128


def test_quantize_rejects_non_finite():
    with pytest.raises(SchemeError):
        quantize_value(float("nan"), QuantizationScheme.affine(1.0))
    with pytest.raises(SchemeError):
        truncate_value(float("inf"), 3)


def test_dequantize_examples():
    assert dequantize_value(5, QuantizationScheme.affine(0.5, 0)) == 2.5
    assert dequantize_value(0, QuantizationScheme.affine(0.1, 10)) == 1.0
    s = QuantizationScheme.affine(1 / 128, 0)
    assert abs(dequantize_value(quantize_value(0.123, s), s) - 0.123) <= s.scale / 2


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(kind="affine", scale=0.0),
        dict(kind="affine", scale=1.0, bits=1),
        dict(kind="affine", scale=1.0, bits=8, zero_point=200),
        dict(kind="truncation", digits=13),
        dict(kind="rounding"),
    ],
)
def test_invalid_schemes(kwargs):
    with pytest.raises(SchemeError):
        QuantizationScheme(**kwargs)


@pytest.mark.parametrize("r,expected", [(1.23456, 1.2345), (-1.23456, -1.2345), (0.99999, 0.9999)])
def test_truncate_examples(r, expected):
    assert truncate_value(r, 4) == expected


def test_truncate_fixed_points():
    assert truncate_value(0.29, 2) == 0.29
    assert truncate_value(-0.0001, 4) == -0.0001
    assert truncate_value(-0.00001, 4) == 0.0
    assert str(truncate_value(-0.00001, 4)) == "0.0"


@settings(max_examples=500, deadline=None)
@given(r=st.floats(-1e6, 1e6, allow_subnormal=False), digits=st.integers(0, 8))
def test_truncate_properties(r, digits):
    t = truncate_value(r, digits)
    assert abs(t - r) < 10.0**-digits
    assert t == 0 or np.sign(t) == np.sign(r)
    assert abs(t) <= abs(r)
    assert truncate_value(t, digits) == t


def test_quantize_network_zero():
    net = Network((Layer(np.zeros((1, 1)), np.zeros(1), "relu"),))
    for policy in (QuantizationScheme.truncation(4), AffineCalibration(8), QuantizationScheme.affine(0.3)):
        assert quantize_network(net, policy).net == net


def test_quantize_network_truncation_single_entry():
    net = Network((Layer(np.array([[1.23456]]), np.zeros(1), "linear"),))
    q = quantize_network(net, QuantizationScheme.truncation(4))
    assert q.net.layers[0].weights[0, 0] == 1.2345


def test_quantize_network_affine_calibration():
    net = Network((Layer(np.array([[0.5, -1.0]]), np.zeros(1), "linear"),))
    q = quantize_network(net, AffineCalibration(8))
    s = q.schemes[0]
    assert s.scale == 1.0 / 127 and s.zero_point == 0
    w = q.net.layers[0].weights[0]
    # hand computation: 0.5 * 127 = 63.5 -> 64 ; -1 * 127 -> -127
    np.testing.assert_array_equal(w, [64 * s.scale, -127 * s.scale])
    assert np.all(np.abs(w - [0.5, -1.0]) <= 1 / 254 + 1e-15)


@pytest.mark.parametrize("policy", ["truncate:4", "truncate:2", "affine:8", "affine:4", "affine:16"])
def test_quantize_network_invariants(policy):
    net = random_network([2, 7, 5, 3], "tanh", 11)
    q = quantize_network(net, parse_policy(policy))
    assert q.net.dims == net.dims and q.net.activations == net.activations
    # realization is a fixed point of its own schemes
    again = quantize_network(q.net, q.schemes)
    assert again.net == q.net
    for (a, b), s in zip(zip(q.tensors(), (t for l in net.layers for t in (l.weights, l.bias))), q.schemes):
        if s.kind == "truncation":
            assert np.all(np.abs(a - b) < 10.0**-s.digits)
        else:
            assert np.all(np.abs(a - b) <= s.scale / 2 * (1 + 1e-12))
        assert np.all(a[b == 0] == 0)


def test_truncation_idempotent_with_same_scheme():
    net = random_network([1, 10, 1], "relu", 2)
    s = QuantizationScheme.truncation(3)
    q = quantize_network(net, s)
    assert quantize_network(q.net, s).net == q.net


def test_stats_truncation():
    net = random_network(PAPER_DIMS, "relu", 7)
    report = quantization_stats(quantize_network(net, QuantizationScheme.truncation(4)))
    assert all(t.max_abs_perturbation < 1e-4 for t in report.tensors)
    assert len(report.tensors) == 8


def test_stats_identity():
    net = Network((Layer(np.array([[0.25, -1.5]]), np.array([0.125]), "linear"),))
    report = quantization_stats(quantize_network(net, QuantizationScheme.truncation(12)))
    assert report.max_perturbation == 0.0


def test_stats_affine_compresses_paper_net():
    net = random_network(PAPER_DIMS, "relu", 7)
    report = quantization_stats(quantize_network(net, AffineCalibration(8)))
    assert report.storage == "int8-affine"
    assert report.compressed_bytes < report.original_bytes


def test_parse_policy():
    assert parse_policy("truncate:4") == QuantizationScheme.truncation(4)
    assert parse_policy("affine:8") == AffineCalibration(8)
    for bad in ("round:3", "affine:x", "affine:20", "truncate"):
        with pytest.raises(SchemeError):
            parse_policy(bad)


def test_quantized_file_round_trip():
    net = random_network([2, 4, 1], "relu", 5)
    q = quantize_network(net, AffineCalibration(6))
    back = load_quantized(save_quantized(q), origin=net)
    assert back.net == q.net and back.schemes == q.schemes and back.origin is net


def test_quantized_file_origin_mismatch():
    net = random_network([2, 4, 1], "relu", 5)
    other = random_network([2, 4, 1], "relu", 6)
    data = save_quantized(quantize_network(net, QuantizationScheme.truncation(2)))
    with pytest.raises(ModelFormatError):
        load_quantized(data, origin=other)


def test_plain_loader_rejects_scheme_block_and_vice_versa():
    from quantcert.network import load_model

    net = random_network([1, 2, 1], "relu", 0)
    with pytest.raises(ModelFormatError):
        load_model(save_quantized(quantize_network(net, QuantizationScheme.truncation(2))))
    with pytest.raises(ModelFormatError):
        load_quantized(save_model(net))
