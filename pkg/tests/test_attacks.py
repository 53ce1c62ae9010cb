import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selenc import desk
from selenc.attacks import (
    ATTACK_KINDS,
    AttackReport,
    AttackSpec,
    attacker_slice,
    evaluate_attack,
    filter_attack,
    retrain_attack,
    run_attack,
    transfer_masks,
    wavelet_attack,
)
from selenc.denoise import (
    dwt,
    filter_signal,
    gaussian_kernel,
    idwt,
    soft_threshold,
    universal_threshold,
    wavedec,
    waverec,
    wavelet_denoise,
)
from selenc.dprm import encrypt_model
from selenc.errors import AttackError
from selenc.fsprng import derive_keys
from selenc.nn import TrainConfig, evaluate
from selenc.permissions import assign, decrypt_with_permission
from selenc.pss import SelectConfig, dominated_partition


# --- denoisers ---------------------------------------------------------------


def test_haar_hand_values():
    a, d = dwt([4.0, 2.0], "haar")
    assert a[0] == pytest.approx(3 * math.sqrt(2), abs=1e-15)
    assert d[0] == pytest.approx(math.sqrt(2), abs=1e-15)
    assert soft_threshold(math.sqrt(2), 2.0) == 0.0
    np.testing.assert_allclose(idwt(a, soft_threshold(d, 2.0), "haar"), [3.0, 3.0], atol=1e-15)


def test_soft_threshold():
    np.testing.assert_array_equal(soft_threshold([-3.0, -0.5, 0.5, 3.0], 1.0), [-2.0, 0.0, 0.0, 2.0])


def test_db2_filters():
    a, d = dwt(np.ones(8), "db2")
    np.testing.assert_allclose(a, math.sqrt(2), atol=1e-14)
    np.testing.assert_allclose(d, 0.0, atol=1e-14)
    # db2 detail filter annihilates linear ramps away from the periodic wrap
    _, d = dwt(np.arange(16.0), "db2")
    np.testing.assert_allclose(d[:-1], 0.0, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 9), st.sampled_from(["haar", "db2"]), st.integers(0, 10_000))
def test_perfect_reconstruction(k, wavelet, seed):
    n = 2**k
    if wavelet == "db2" and n < 4:
        n = 4
    x = np.random.default_rng(seed).normal(0, 1, n)
    levels = max(1, int(math.log2(n)) - (1 if wavelet == "db2" else 0))
    a, details = wavedec(x, wavelet, levels)
    assert np.max(np.abs(waverec(a, details, wavelet) - x)) <= 1e-10


@pytest.mark.parametrize("n", [4, 5, 72, 100, 1152])
@pytest.mark.parametrize("wavelet", ["haar", "db2"])
def test_zero_threshold_is_identity(n, wavelet):
    if wavelet == "db2" and n < 4:
        pytest.skip("shorter than the filter")
    x = np.random.default_rng(n).normal(0, 1, n)
    assert np.max(np.abs(wavelet_denoise(x, wavelet, 3, threshold=0.0) - x)) <= 1e-10


def test_universal_threshold_level1_example():
    # one detail of sqrt(2): sigma = sqrt(2)/0.6745, t = sigma * sqrt(2 ln 2) > sqrt(2)
    t = universal_threshold(np.array([math.sqrt(2)]), 2)
    assert t > math.sqrt(2)
    np.testing.assert_allclose(wavelet_denoise([4.0, 2.0], "haar", levels=1), [3.0, 3.0], atol=1e-14)


def test_short_signal_errors():
    with pytest.raises(AttackError):
        wavelet_denoise([1.0, 2.0, 3.0], "db2")
    with pytest.raises(AttackError):
        wavelet_denoise([1.0], "haar")
    with pytest.raises(AttackError):
        dwt([1.0, 2.0, 3.0], "haar")
    with pytest.raises(AttackError):
        wavelet_denoise([1.0] * 8, "sym9")


def test_filters():
    np.testing.assert_array_equal(filter_signal([1.0, 9.0, 1.0], "median", 3), [1.0, 1.0, 1.0])
    np.testing.assert_allclose(filter_signal(np.full(9, 2.5), "average", 5), 2.5, rtol=1e-15)
    np.testing.assert_allclose(filter_signal(np.full(9, 2.5), "gaussian", 7), 2.5, rtol=1e-14)
    for w in (3, 5, 9, 21):
        assert abs(gaussian_kernel(w).sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(gaussian_kernel(5), gaussian_kernel(5)[::-1])
    for bad in (1, 2, 4):
        with pytest.raises(AttackError):
            filter_signal([1.0, 2.0, 3.0], "average", bad)


def test_attack_spec_invariants():
    assert AttackSpec("filter:median", window=5).window == 5
    for kwargs in (dict(kind="wavelet:sym9"), dict(kind="filter:median", window=4), dict(kind="retrain:layerwise", data_fraction=0.0)):
        with pytest.raises(AttackError):
            AttackSpec(**kwargs)


# --- model-level attacks -----------------------------------------------------


@pytest.fixture(scope="module")
def setup(desk_setup):
    model, train, test, importance = desk_setup
    part = dominated_partition(model, importance, SelectConfig(fraction=0.1), 5)
    protected, bundle = encrypt_model(model, part, derive_keys(5, seed=0))
    goal = evaluate(decrypt_with_permission(protected, assign(bundle, 1)), test)
    return model, train, test, part, protected, goal


def _non_considered_identical(a, b):
    for i, (x, y) in enumerate(zip(a.layers, b.layers)):
        if i not in a.considered_layers:
            assert x.weight.tobytes() == y.weight.tobytes() and x.bias.tobytes() == y.bias.tobytes()


@pytest.mark.parametrize("wavelet", ["haar", "db2"])
def test_wavelet_attack_scope(setup, wavelet):
    _, _, _, _, protected, _ = setup
    out = wavelet_attack(protected, wavelet)
    _non_considered_identical(protected, out)
    assert any(out.layers[l].weight.tobytes() != protected.layers[l].weight.tobytes() for l in protected.considered_layers)


@pytest.mark.parametrize("kind", ["average", "gaussian", "median"])
def test_filter_attack_scope(setup, kind):
    _, _, _, _, protected, _ = setup
    _non_considered_identical(protected, filter_attack(protected, kind, 3))


def test_layerwise_attack_scope(setup):
    _, train, _, _, protected, _ = setup
    out = retrain_attack(protected, attacker_slice(train), "layerwise", TrainConfig(epochs=1))
    _non_considered_identical(protected, out)


def test_zero_epoch_retrain_is_noop(setup):
    _, train, _, _, protected, _ = setup
    out = retrain_attack(protected, attacker_slice(train), "layerwise", TrainConfig(epochs=0))
    assert all(a.weight.tobytes() == b.weight.tobytes() for a, b in zip(out.layers, protected.layers))


def test_retrain_needs_data(setup):
    _, _, _, _, protected, _ = setup
    with pytest.raises(AttackError):
        retrain_attack(protected, None)
    with pytest.raises(AttackError):
        retrain_attack(protected, desk.data()[0], "transfer")


def test_attacker_slice_is_ten_percent_of_train(setup):
    _, train, _, _, _, _ = setup
    s = attacker_slice(train, 0.10, seed=4)
    assert len(s) == 200
    assert attacker_slice(train, 0.10, seed=4).inputs.tobytes() == s.inputs.tobytes()


def test_layerwise_on_plain_model_is_harmless(setup):
    model, train, test, _, _, _ = setup
    out = retrain_attack(model, train, "layerwise", TrainConfig(epochs=10))
    assert evaluate(out, test) >= evaluate(model, test) - 0.02


def test_transfer_locations_differ_from_true_ones(setup):
    _, _, _, part, protected, _ = setup
    masks = transfer_masks(protected, *desk.surrogate())
    hit = sum(masks[l].ravel()[part.selected(l)].sum() for l in part.layers)
    total = sum(len(part.selected(l)) for l in part.layers)
    assert hit < total
    assert all(masks[l].sum() == part.phi[l] for l in part.layers)


def test_transfer_attack_scope(setup):
    _, train, _, part, protected, _ = setup
    out = retrain_attack(protected, attacker_slice(train), "transfer", TrainConfig(epochs=1), surrogate=desk.surrogate())
    _non_considered_identical(protected, out)
    masks = transfer_masks(protected, *desk.surrogate())
    for l in part.layers:
        moved = out.layers[l].weight != protected.layers[l].weight
        assert not np.any(moved & ~masks[l])


def test_evaluate_attack_contract(setup):
    model, _, test, _, protected, goal = setup
    score = evaluate(model, test)
    assert evaluate_attack(model, test, goal=score).success  # boundary inclusive
    assert evaluate_attack(model, test, goal).success
    assert not evaluate_attack(protected, test, goal).success
    r = AttackReport("x", 0.2, 0.9, 0.3, False)
    assert json.loads(r.to_json())["attacked"] == 0.2


def test_report_json_has_no_nan(setup):
    _, _, test, _, protected, goal = setup
    r = run_attack(AttackSpec("filter:median"), protected, test, goal)
    assert json.loads(r.to_json())["baseline"] is None


@pytest.mark.parametrize("kind", [k for k in ATTACK_KINDS if not k.startswith("retrain")])
def test_denoising_attacks_fail_on_desk(setup, kind):
    _, _, test, _, protected, goal = setup
    assert not run_attack(AttackSpec(kind), protected, test, goal).success
