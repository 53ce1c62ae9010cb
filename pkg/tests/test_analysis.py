import itertools
import warnings

import numpy as np
import pytest

from selenc import desk
from selenc.analysis import (
    STRATEGIES,
    CurveTable,
    binned_mi,
    degradation_curve,
    hierarchy_table,
    imperceptibility_report,
    ks_two_sample,
    mask_only_model,
    strategy_selection,
)
from selenc.dprm import encrypt_model
from selenc.errors import AnalysisError
from selenc.fsprng import derive_keys
from selenc.nn import Layer, Model
from selenc.pss import SelectConfig, dominated_partition, empty_partition, partition_by_importance


# --- KS ------------------------------------------------------------------------


def test_ks_trivial_cases():
    x = np.arange(10.0)
    assert ks_two_sample(x, x) == (0.0, 1.0)
    d, p = ks_two_sample(np.zeros(8), np.ones(8))
    assert d == 1.0 and p < 1e-3
    with pytest.raises(AnalysisError):
        ks_two_sample(np.zeros(7), np.ones(8))


def _paths_within(n, k):
    """Monotone lattice paths (0,0)->(n,n) with |i - j| < k throughout."""
    ways = np.zeros((n + 1, n + 1), dtype=np.int64)
    ways[0, 0] = 1
    for i in range(n + 1):
        for j in range(n + 1):
            if (i or j) and abs(i - j) < k:
                ways[i, j] = (ways[i - 1, j] if i else 0) + (ways[i, j - 1] if j else 0)
    return ways[n, n]


def _d_small(a, b):
    # the public function needs 8 values per side; rescale the 4+4 case by repetition
    return ks_two_sample(np.repeat(a, 2), np.repeat(b, 2))[0]


def test_ks_exact_distribution_n4():
    counts = {}
    for pos in itertools.combinations(range(8), 4):
        a = np.array(pos, dtype=float)
        b = np.array(sorted(set(range(8)) - set(pos)), dtype=float)
        d = _d_small(a, b)
        counts[d] = counts.get(d, 0) + 1
    assert sum(counts.values()) == 70
    for k in range(1, 5):
        below = sum(c for d, c in counts.items() if d < k / 4 - 1e-12)
        assert below == _paths_within(4, k), k


def test_ks_repetition_preserves_d():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a, b = rng.normal(size=8), rng.normal(size=8)
        assert ks_two_sample(a, b)[0] == ks_two_sample(np.repeat(a, 2), np.repeat(b, 2))[0]


def test_ks_calibration():
    ok = 0
    for t in range(1000):
        a = np.random.default_rng([1, t]).normal(size=500)
        b = np.random.default_rng([2, t]).normal(size=500)
        ok += ks_two_sample(a, b)[1] > 0.01
    assert ok >= 990


def test_ks_ranges():
    rng = np.random.default_rng(3)
    for _ in range(50):
        d, p = ks_two_sample(rng.normal(size=rng.integers(8, 40)), rng.normal(1, 2, size=rng.integers(8, 40)))
        assert 0 <= d <= 1 and 0 <= p <= 1


# --- mutual information ------------------------------------------------------


def test_mi_independent_and_dependent():
    rng = np.random.default_rng(4)
    x, y = rng.normal(size=100_000), rng.normal(size=100_000)
    mi, h = binned_mi(x, y)
    assert 0 <= mi / h < 0.01
    mi, h = binned_mi(x, x)
    assert mi / h == pytest.approx(1.0, abs=1e-12)


# --- imperceptibility --------------------------------------------------------


def gaussian_layer_model(seed=0, n=4000, mu=0.02, sigma=0.3):
    w = np.random.default_rng(seed).normal(mu, sigma, (n // 10, 10, 1, 1))
    return Model([Layer("conv2d", w, np.zeros(n // 10))], considered_layers=(0,))


def random_partition(model, fraction, M, seed):
    n = model.layers[0].weight.size
    idx = np.sort(np.random.default_rng(seed).choice(n, int(fraction * n), replace=False))
    return partition_by_importance({0: idx}, {0: np.random.default_rng(seed + 1).random(n)}, M)


def test_ideal_ciphertext_passes(recwarn):
    model = gaussian_layer_model()
    w = model.layers[0].weight.ravel()
    mu, sigma = w.mean(), w.std(ddof=1)
    passes = 0
    for t in range(100):
        part = random_partition(model, 0.15, 2, seed=t)
        protected, bundle = encrypt_model(model, part, derive_keys(2, t))
        fresh = protected.copy()
        idx = part.selected(0)
        fresh.layers[0].weight.reshape(-1)[idx] = np.random.default_rng([7, t]).normal(mu, sigma, len(idx))
        report = imperceptibility_report(fresh, bundle, original=model)
        passes += report.layers[0].ks_ok
    assert passes >= 95


def test_mask_without_mapping_is_detected(desk_setup):
    model, _, _, importance = desk_setup
    part = dominated_partition(model, importance, SelectConfig(fraction=0.5), 5)
    rejected = 0
    for t in range(20):
        keys = derive_keys(5, t)
        _, bundle = encrypt_model(model, part, keys)
        report = imperceptibility_report(mask_only_model(model, part, keys), bundle, original=model)
        rejected += not report.layers[1].ks_ok
    assert rejected >= 18


def test_report_on_desk(desk_setup):
    model, _, _, importance = desk_setup
    part = dominated_partition(model, importance, SelectConfig(fraction=0.5), 5)
    protected, bundle = encrypt_model(model, part, derive_keys(5, 0))
    report = imperceptibility_report(protected, bundle)
    assert [r.layer for r in report.layers] == [0, 2]
    for r in report.layers:
        assert 0 <= r.ks_d <= 1 and 0 <= r.ks_p <= 1 and r.mi >= 0 and r.mi_null >= 0
    assert '"layers"' in report.to_json()


def test_small_layers_skipped(desk_setup):
    model, _, _, importance = desk_setup
    part = dominated_partition(model, importance, SelectConfig(fraction=0.05), 5)
    protected, bundle = encrypt_model(model, part, derive_keys(5, 0))
    with pytest.warns(UserWarning, match="layer 0"):
        report = imperceptibility_report(protected, bundle)
    assert report.skipped == [0] and [r.layer for r in report.layers] == [2]


def test_empty_partition_empty_report(cnn):
    protected, bundle = encrypt_model(cnn, empty_partition(2), derive_keys(2, 0))
    report = imperceptibility_report(protected, bundle)
    assert report.layers == [] and report.passed


# --- degradation curves ------------------------------------------------------


def test_strategy_selection_rules():
    w = np.array([0.5, -2.0, 0.1, 3.0, -0.05])
    assert strategy_selection(w, 2, "descending").tolist() == [0, 3]
    assert strategy_selection(w, 2, "ascending").tolist() == [1, 4]
    # mean is 0.31: the two closest are 0.5 and 0.1
    assert strategy_selection(w, 2, "mean").tolist() == [0, 2]
    r = strategy_selection(w, 3, "random", rng=np.random.default_rng(0))
    assert len(set(r.tolist())) == 3
    with pytest.raises(AnalysisError):
        strategy_selection(w, 2, "pss")
    with pytest.raises(AnalysisError):
        strategy_selection(w, 2, "largest")


def test_curve_fraction_zero_is_pretrained(desk_setup):
    model, _, test, importance = desk_setup
    table = degradation_curve(model, test, STRATEGIES, [0.0], importance=importance)
    assert all(r.mean == pytest.approx(0.928) for r in table.rows)


def test_curve_full_fraction_is_near_chance(desk_setup):
    model, _, test, importance = desk_setup
    table = degradation_curve(model, test, STRATEGIES, [1.0], trials=5, importance=importance)
    for r in table.rows:
        assert r.mean <= desk.CHANCE + 0.05, r


def test_pss_reaches_chance_before_random(desk_setup):
    model, _, test, importance = desk_setup
    fractions = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0]
    table = degradation_curve(model, test, ("pss", "random"), fractions, trials=20, importance=importance)

    def first(strategy):
        hits = [r.fraction for r in table.series(strategy) if r.mean <= desk.CHANCE + 0.02]
        return min(hits) if hits else np.inf

    assert first("pss") < first("random")


def test_curve_reproducible_and_csv(desk_setup):
    model, _, test, importance = desk_setup
    a = degradation_curve(model, test, ("random", "pss"), [0.1, 0.05], trials=1, importance=importance, seed=3)
    b = degradation_curve(model, test, ("random", "pss"), [0.1, 0.05], trials=1, importance=importance, seed=3)
    assert a.to_csv() == b.to_csv()
    lines = a.to_csv().splitlines()
    assert lines[0] == "strategy,fraction,mean,std,trials" and len(lines) == 5
    assert [r.fraction for r in a.series("pss")] == [0.05, 0.1]


def test_curve_preconditions(desk_setup):
    model, _, test, _ = desk_setup
    with pytest.raises(AnalysisError):
        degradation_curve(model, test, ("random",), [0.1], trials=0)
    with pytest.raises(AnalysisError):
        degradation_curve(model, test, ("random",), [1.5])
    with pytest.raises(AnalysisError):
        degradation_curve(model, test, ("pss",), [0.1])
    assert isinstance(CurveTable().to_csv(), str)


# --- hierarchy ---------------------------------------------------------------


def test_hierarchy_table(desk_setup):
    model, _, test, importance = desk_setup
    part = dominated_partition(model, importance, SelectConfig(fraction=0.1), 5)
    protected, bundle = encrypt_model(model, part, derive_keys(5, 0))
    scores = hierarchy_table(protected, bundle, part, test, 5)
    assert len(scores) == 6
    assert abs(scores[-1] - 0.928) <= 0.001
    assert scores[0] <= desk.CHANCE + 0.10
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        one = dominated_partition(model, importance, SelectConfig(fraction=0.1), 1)
    p1, b1 = encrypt_model(model, one, derive_keys(1, 0))
    with pytest.raises(AnalysisError):
        hierarchy_table(p1, b1, one, test, 1)
