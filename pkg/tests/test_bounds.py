import math
import warnings

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import given, settings

from driftwatch.bounds import (
    DEFAULT_ALPHAS,
    BoundTable,
    BoundTableError,
    GeomSumParams,
    GridSpec,
    QuantileBounds,
    build_table,
    escalated_samples,
    estimate_bounds,
    load_default_table,
    order_statistic_index,
    simulate_geometric_sum,
)
from driftwatch.detectors import PRESETS
from oracles import exact_weighted_sum_quantiles, mc_weighted_sum_quantiles, offline_geometric_sum

# Frozen regression values of estimate_bounds at fixed seeds, and the values
# of the independent 10x-sample oracle they were checked against.
P05_FROZEN = (0.2389792698178389, 0.761075987094266)  # p=.5 eta=.9 n=200 a=.01 m=2e5 seed 101
P05_ORACLE = (0.2394188940525055, 0.7608835697174072)  # 2e6 samples, seed 202
P09_FROZEN = (0.4943597755166406, 0.9999973605440688)  # p=.9 eta=.9 n=200 a=1e-5 m=1e6 seed 103
P09_ORACLE = (0.5025601387023926, 0.9999974966049194)  # 1e7 samples, seed 204


@pytest.fixture(scope="module")
def small_table():
    grid = GridSpec(p_axis=(0.0, 0.25, 0.5, 0.75, 1.0), n_axis=(1, 2, 4, 8, 32), alphas=(0.01, 0.05))
    return build_table(grid, eta=0.8, mc_samples=5000, seed=3)


def test_simulate_degenerate_cases():
    rng = np.random.default_rng(0)
    assert simulate_geometric_sum(GeomSumParams(0.0, 0.9, 100), rng) == 0.0
    assert math.isclose(simulate_geometric_sum(GeomSumParams(1.0, 0.9, 3), rng), 0.271, abs_tol=1e-15)
    assert math.isclose(simulate_geometric_sum(GeomSumParams(1.0, 0.9, 2000), rng), 1.0, abs_tol=1e-12)


@pytest.mark.parametrize("kw", [dict(p_hat=-0.1, eta=0.9, n=1), dict(p_hat=0.5, eta=1.0, n=1),
                                dict(p_hat=0.5, eta=0.9, n=0), dict(p_hat=0.5, eta=0.9, n=2.5)])
def test_params_validated(kw):
    with pytest.raises(ValueError):
        GeomSumParams(**kw)


@given(st.lists(st.integers(0, 1), min_size=1, max_size=300), st.floats(0.0, 0.999))
def test_recurrence_equals_closed_form(bits, eta):
    r = 0.0
    for b in bits:
        r = eta * r + (1.0 - eta) * b
    assert abs(r - offline_geometric_sum(bits, eta)) <= 1e-12
    assert 0.0 <= r <= 1.0 - eta ** len(bits) + 1e-12


def test_mean_of_draws():
    rng = np.random.default_rng(4)
    p, eta, n = 0.3, 0.8, 40
    draws = np.array([simulate_geometric_sum(GeomSumParams(p, eta, n), rng) for _ in range(20_000)])
    assert draws.min() >= 0 and draws.max() <= 1 - eta**n
    se = draws.std() / math.sqrt(len(draws))
    assert abs(draws.mean() - p * (1 - eta**n)) < 5 * se


def test_order_statistic_index_reads_decimals():
    assert order_statistic_index(0.99, 200_000) == 197_999
    assert order_statistic_index(0.01, 200_000) == 1_999
    assert order_statistic_index(1e-9, 1000) == 0
    assert order_statistic_index(1.0, 1000) == 999


def test_estimate_bounds_rejects_bad_input():
    params = GeomSumParams(0.5, 0.9, 10)
    rng = np.random.default_rng(0)
    for alpha in (0.0, 0.5, -0.1, 0.7):
        with pytest.raises(ValueError):
            estimate_bounds(params, alpha, 10_000, rng)
    with pytest.raises(ValueError):
        estimate_bounds(params, 0.01, 999, rng)


def test_escalation_is_loud():
    with pytest.warns(RuntimeWarning, match="escalating to 1000000"):
        assert escalated_samples(200_000, 1e-5) == 1_000_000
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert escalated_samples(200_000, 1e-3) == 200_000


def test_zero_rate_is_degenerate():
    b = estimate_bounds(GeomSumParams(0.0, 0.9, 100), 0.01, 10_000, np.random.default_rng(1))
    assert (b.lower, b.upper) == (0.0, 0.0)


@pytest.mark.parametrize(
    "p, eta, n, alpha",
    [(0.3, 0.9, 5, 0.01), (0.5, 0.8, 8, 0.05), (0.7, 0.5, 10, 0.01), (0.9, 0.9, 12, 0.001), (0.2, 0.95, 6, 0.1)],
)
def test_matches_exact_enumeration(p, eta, n, alpha):
    b = estimate_bounds(GeomSumParams(p, eta, n), alpha, 200_000, np.random.default_rng(5))
    lo, hi = exact_weighted_sum_quantiles(p, eta, n, alpha)
    assert abs(b.lower - lo) <= 0.01 and abs(b.upper - hi) <= 0.01


def test_frozen_values_and_their_oracle():
    a = estimate_bounds(GeomSumParams(0.5, 0.9, 200), 0.01, 200_000, np.random.default_rng(101))
    assert (a.lower, a.upper) == pytest.approx(P05_FROZEN, abs=1e-12)
    assert a.lower == pytest.approx(P05_ORACLE[0], abs=0.01)
    assert a.upper == pytest.approx(P05_ORACLE[1], abs=0.01)
    b = estimate_bounds(GeomSumParams(0.9, 0.9, 200), 1e-5, 1_000_000, np.random.default_rng(103))
    assert (b.lower, b.upper) == pytest.approx(P09_FROZEN, abs=1e-12)
    assert b.lower == pytest.approx(P09_ORACLE[0], abs=0.01)
    assert b.upper == pytest.approx(P09_ORACLE[1], abs=0.01)


def test_live_oracle_agreement_small():
    lo, hi = mc_weighted_sum_quantiles(0.7, 0.9, 50, 0.01, 400_000, seed=77)
    b = estimate_bounds(GeomSumParams(0.7, 0.9, 50), 0.01, 200_000, np.random.default_rng(78))
    assert abs(b.lower - lo) <= 0.01 and abs(b.upper - hi) <= 0.01


def test_saturation_in_n():
    # total-variation distance between n=200 and n=400 histograms
    rng = np.random.default_rng(8)

    def draws(n):
        r = np.zeros(100_000)
        for _ in range(n):
            r = 0.9 * r + 0.1 * (rng.random(r.size) < 0.6)
        return np.histogram(r, bins=100, range=(0, 1))[0] / r.size

    assert 0.5 * np.abs(draws(200) - draws(400)).sum() < 0.02


def test_estimate_is_deterministic():
    params = GeomSumParams(0.4, 0.9, 64)
    a = estimate_bounds(params, 0.01, 5000, np.random.default_rng(3))
    b = estimate_bounds(params, 0.01, 5000, np.random.default_rng(3))
    assert a == b


def test_quantile_bounds_excludes():
    b = QuantileBounds(0.2, 0.8, 0.01)
    assert not b.excludes(0.2) and not b.excludes(0.8) and not b.excludes(0.5)
    assert b.excludes(0.19) and b.excludes(0.81)


@pytest.mark.parametrize(
    "kw",
    [dict(p_axis=()), dict(p_axis=(0.5, 0.4)), dict(n_axis=(2, 2)), dict(alphas=(0.6,)), dict(p_axis=(0.5, 1.5))],
)
def test_grid_validation(kw):
    with pytest.raises(ValueError):
        GridSpec(**kw)


def test_small_table_properties(small_table):
    t = small_table
    assert t.bounds.shape == (5, 5, 2, 2)
    assert np.all(np.diff(t.bounds, axis=0) >= 0)
    assert np.all(t.bounds[..., 0] <= t.bounds[..., 1])
    assert np.all(t.bounds[0] == 0.0)
    for j, n in enumerate(t.grid.n_axis):
        assert np.allclose(t.bounds[-1, j], 1 - 0.8**n, atol=1e-12)


def test_table_independent_of_workers(small_table):
    again = build_table(small_table.grid, eta=0.8, mc_samples=5000, seed=3, workers=2)
    assert again.to_bytes() == small_table.to_bytes()
    other = build_table(small_table.grid, eta=0.8, mc_samples=5000, seed=4)
    assert other.fingerprint() != small_table.fingerprint()


def test_round_trip(tmp_path, small_table):
    path = small_table.save(tmp_path / "t.dwb")
    back = BoundTable.load(path)
    assert back.to_bytes() == small_table.to_bytes()
    assert np.array_equal(back.bounds, small_table.bounds)
    assert back.header() == small_table.header()


def test_corrupt_files_rejected(tmp_path, small_table):
    data = small_table.to_bytes()
    for bad in (b"NOTBOUND" + data[8:], data[:-8], data[:12]):
        with pytest.raises(BoundTableError):
            BoundTable.from_bytes(bad)
    with pytest.raises(OSError, match="missing.dwb"):
        BoundTable.load(tmp_path / "missing.dwb")


def test_lookup_snapping(small_table):
    t = small_table
    cell = t.bounds[2, 3, 0]
    assert (t.lookup(0.5, 0.01, 8).lower, t.lookup(0.5, 0.01, 8).upper) == tuple(cell)
    assert t.p_index(0.62) == 2 and t.p_index(0.63) == 3
    assert t.p_index(0.625) == 2  # tie goes to the smaller value
    assert t.n_index(1) == 0 and t.n_index(3) == 2 and t.n_index(9) == 4
    assert t.n_index(10**6) == 4
    with pytest.raises(BoundTableError):
        t.lookup(0.5, 0.02, 8)


def test_default_table():
    t = load_default_table()
    assert t.eta == 0.9
    assert t.grid.alphas == DEFAULT_ALPHAS
    assert t.effective_mc_samples >= 10 / min(t.grid.alphas)
    assert t.grid.p_axis[0] == 0.0 and t.grid.p_axis[-1] == 1.0 and len(t.grid.p_axis) == 101
    assert t.p_index(0.503) == 50 and t.p_index(0.505) == 50
    for preset in PRESETS.values():
        for key in ("delta", "epsilon"):
            t.alpha_index(preset["LFR"][key])
    assert np.all(np.diff(t.bounds, axis=0) >= 0)


@pytest.mark.parametrize("alpha, tol", [(1e-5, 0.03), (1e-4, 0.015), (1e-3, 0.005), (1e-2, 0.003)])
def test_default_table_complement_symmetry(alpha, tol):
    # tolerance follows the number of tail samples behind each quantile
    t = load_default_table()
    k = t.alpha_index(alpha)
    for j, n in enumerate(t.grid.n_axis):
        if n < 128:
            continue
        s = 1 - t.eta**n
        lo, hi = t.bounds[:, j, k, 0], t.bounds[:, j, k, 1]
        assert np.max(np.abs(lo - (s - hi[::-1]))) <= tol


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 1), st.integers(1, 5000), st.sampled_from(DEFAULT_ALPHAS))
def test_lookup_properties(p, n, alpha):
    t = load_default_table()
    b = t.lookup(p, alpha, n)
    assert 0.0 <= b.lower <= b.upper <= 1.0
    assert b.alpha == alpha
    assert abs(t.grid.p_axis[t.p_index(p)] - p) <= 0.005 + 1e-12
    assert t.grid.n_axis[t.n_index(n)] >= min(n, t.grid.n_axis[-1])
