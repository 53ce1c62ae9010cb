import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selenc.gates import (
    DEFAULT_GATES,
    GateParams,
    gate_grad_logit,
    prob_nonzero,
    sample_and_grad,
    sample_gate,
)

logits = st.floats(-20, 20, allow_nan=False)
us = st.floats(1e-9, 1 - 1e-9, allow_nan=False)


def test_midpoint():
    assert sample_gate(0.0, 0.5) == pytest.approx(0.5, abs=1e-15)


def test_saturation_high_and_low():
    assert sample_gate(30.0, 0.5) == 1.0
    assert sample_gate(-10.0, 0.5) == 0.0
    # the unclamped value just above gamma, from the definition
    s = 1 / (1 + np.exp(15.0))
    assert s == pytest.approx(3.06e-7, rel=1e-2)
    assert s * 1.2 - 0.1 == pytest.approx(-0.09999963, abs=1e-8)


def test_u_must_be_interior():
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            sample_gate(0.0, bad)


def test_prob_nonzero_logit0():
    assert np.log(0.1 / 1.1) == pytest.approx(-2.397895, abs=1e-6)
    assert -(2 / 3) * np.log(0.1 / 1.1) == pytest.approx(1.598597, abs=1e-6)
    # 1 / (1 + 11 ** (-2/3)) to 30 digits with mpmath
    assert prob_nonzero(0.0) == pytest.approx(0.831822183991690410946759, abs=1e-15)
    assert prob_nonzero(0.0) == pytest.approx(0.831812, abs=1e-4)


def test_prob_nonzero_limits():
    assert prob_nonzero(-1e4) == 0.0
    assert prob_nonzero(1e4) == 1.0


def test_grad_examples():
    assert gate_grad_logit(0.0, 0.5) == pytest.approx(0.45, abs=1e-15)
    assert gate_grad_logit(30.0, 0.5) == 0.0


def test_grad_finite_difference_100_points():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 100:
        a, u = rng.normal(0, 2), rng.uniform(0.01, 0.99)
        z = sample_gate(a, u)
        if not 1e-3 < z < 1 - 1e-3:
            continue
        h = 1e-6
        num = (sample_gate(a + h, u) - sample_gate(a - h, u)) / (2 * h)
        assert gate_grad_logit(a, u) == pytest.approx(num, rel=1e-6)
        checked += 1


def test_sample_and_grad_agrees():
    rng = np.random.default_rng(1)
    a, u = rng.normal(0, 3, 500), rng.uniform(0.001, 0.999, 500)
    z, dz = sample_and_grad(a, u, DEFAULT_GATES)
    np.testing.assert_array_equal(z, sample_gate(a, u))
    np.testing.assert_array_equal(dz, gate_grad_logit(a, u))


@pytest.mark.parametrize("logit", [-2, -1, 0, 1, 2])
def test_gate_law(logit):
    u = np.random.default_rng(logit + 10).random(100_000)
    u = u[(u > 0) & (u < 1)]
    freq = np.mean(sample_gate(float(logit), u) != 0)
    assert abs(freq - prob_nonzero(float(logit))) < 0.01


@given(logits, logits, us)
def test_monotone_in_logit(a, b, u):
    lo, hi = sorted((a, b))
    assert sample_gate(lo, u) <= sample_gate(hi, u)


@given(logits, us, us)
def test_monotone_in_u(a, u1, u2):
    lo, hi = sorted((u1, u2))
    assert sample_gate(a, lo) <= sample_gate(a, hi)


@settings(max_examples=200)
@given(logits, us)
def test_output_in_unit_interval(a, u):
    assert 0.0 <= sample_gate(a, u) <= 1.0


def test_gate_params_validation():
    for bad in [dict(beta=0), dict(gamma=0.1), dict(zeta=0.9)]:
        with pytest.raises(ValueError):
            GateParams(**bad)
