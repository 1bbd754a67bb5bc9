import math

import numpy as np
import pytest

import oracles
from rwrs import limits
from rwrs._rng import Stream
from rwrs.errors import DomainError, ResourceError
from rwrs.occupation import accumulate, mutual_intersection
from rwrs.walks import RenewalFinite, SimpleWalk, StableTail, covariance, sample_path

RENEWAL = RenewalFinite((1, 2), (0.5, 0.5))


def test_variance_renewal():
    assert limits.variance_renewal(1) == 0
    assert limits.variance_renewal(1.5) == pytest.approx(oracles.RENEWAL_12_VARIANCE, rel=1e-15)
    assert limits.variance_renewal(2) == 0.5
    with pytest.raises(DomainError):
        limits.variance_renewal(0.5)


def test_variance_planar():
    assert limits.variance_planar(np.eye(2)) == pytest.approx(oracles.PLANAR_IDENTITY, rel=1e-15)
    assert limits.variance_planar(covariance(SimpleWalk(2))) == pytest.approx(oracles.PLANAR_SIMPLE, rel=1e-15)
    assert limits.variance_planar(np.diag([1.0, 4.0])) == pytest.approx(oracles.PLANAR_DIAG_1_4, rel=1e-15)
    for bad in (np.diag([1.0, 0.0]), np.array([[1.0, 2.0], [2.0, 1.0]]), np.eye(3), np.array([[1.0, 0.1], [0.0, 1.0]])):
        with pytest.raises(DomainError):
            limits.variance_planar(bad)


@pytest.mark.parametrize("gamma", sorted(oracles.TRANSIENT))
def test_variance_transient_examples(gamma):
    assert limits.variance_transient(gamma) == pytest.approx(oracles.TRANSIENT[gamma], rel=1e-12)


@pytest.mark.parametrize("gamma", [0.1, 0.25, 0.5, 0.75, 0.99])
def test_series_and_closed_form_agree(gamma):
    series = limits._transient_series(gamma)
    assert abs(series - (2 - gamma) / gamma) <= 1e-12 * (2 - gamma) / gamma
    assert abs(series - oracles.transient_series(gamma)) <= 1e-12 * series


def test_variance_transient_domain():
    for g in (0.0, -0.1, 1.5, float("nan")):
        with pytest.raises(DomainError):
            limits.variance_transient(g)


def test_subsequence_values():
    for (m, nu), value in oracles.SUBSEQUENCE.items():
        assert limits.subsequence_t(m, nu) == value


def test_subsequence_budget():
    with pytest.raises(ResourceError) as err:
        limits.subsequence_t(5, 1.0)
    assert err.value.suggestion


def test_gamma_renewal_is_exactly_one():
    est = limits.estimate_gamma(RENEWAL, 1000, 100, Stream.from_seed(1))
    assert est.gamma == 1.0 and est.stderr == 0.0


def test_gamma_simple_d3_short_run():
    est = limits.estimate_gamma(SimpleWalk(3), 10**5, 10**4, Stream.from_seed(2), double=True)
    assert 0.64 <= est.gamma <= 0.68
    assert est.doubled_gamma <= est.gamma
    assert est.converged in (True, False) and est.delta >= 0


def test_gamma_stable_monotone():
    curve = limits.gamma_curve(StableTail(1, 0.8), [10**3, 10**4, 10**5], 2000, Stream.from_seed(3))
    g = [c[0] for c in curve]
    assert g[0] >= g[1] >= g[2] > 0


def test_first_return_kernels_agree_with_paths():
    for law in (StableTail(1, 0.8), StableTail(2, 1.5)):
        stream = Stream.from_seed(4)
        times = limits.first_return_times(law, 200, 300, stream)
        for i in range(300):
            pos = sample_path(law, 200, stream.child(i)).positions
            hits = np.flatnonzero(np.all(pos == 0, axis=1))
            assert times[i] == (hits[0] + 1 if hits.size else 201)


@pytest.mark.parametrize("d", [1, 2, 3, 5])
def test_simple_walk_first_return_distribution(d):
    # The simple-walk kernel draws from packed bits, so compare in law:
    # returns happen at even times only and P(T = 2) = 1/(2d).
    m = 10**5
    t = limits.first_return_times(SimpleWalk(d), 50, m, Stream.from_seed(14))
    returned = t[t <= 50]
    assert np.all(returned % 2 == 0)
    p = 1 / (2 * d)
    assert abs(np.mean(t == 2) - p) <= 4 * math.sqrt(p * (1 - p) / m)
    if d == 1:
        # P(T = 4) = 1/8 for the simple walk on Z.
        assert abs(np.mean(t == 4) - 0.125) <= 4 * math.sqrt(0.125 * 0.875 / m)


def test_renewal_mass_hand_recursion():
    u = limits.renewal_mass(RENEWAL, 5)
    assert u[0] == 1.0
    for i, v in oracles.RENEWAL_12_U.items():
        assert u[i] == pytest.approx(float(v), abs=1e-15)
    assert limits.renewal_mass(RENEWAL, 200)[-1] == pytest.approx(2 / 3, abs=1e-12)


@pytest.mark.parametrize("support,probs,n", [
    ((1, 2), (0.5, 0.5), 30),
    ((1, 3), (0.25, 0.75), 25),
    ((2, 3, 7), (0.2, 0.5, 0.3), 20),
    ((1,), (1.0,), 15),
])
def test_expected_localtime_matches_exact_dp(support, probs, n):
    table = limits.expected_localtime_renewal(RenewalFinite(support, probs), n)
    oracle = oracles.expected_localtime_dp(support, probs, n)
    assert table.values.shape[0] == len(oracle)
    np.testing.assert_allclose(table.values, oracle, atol=1e-13)


def test_expected_localtime_invariants():
    for law in (RENEWAL, RenewalFinite((1, 4, 9), (0.3, 0.3, 0.4))):
        for n in (1, 10, 1000, 10**5):
            t = limits.expected_localtime_renewal(law, n)
            assert t.values.min() >= 0 and t.values.max() <= 1
            assert abs(t.total() - n) <= 1e-9
    unit = limits.expected_localtime_renewal(RenewalFinite((1,), (1.0,)), 10)
    assert unit.values.tolist() == [1.0] * 10


def test_expected_localtime_budget():
    with pytest.raises(ResourceError) as err:
        limits.expected_localtime_renewal(RENEWAL, 10**6, budget=10**5)
    assert "montecarlo" in err.value.suggestion


def test_expected_localtime_against_visit_frequencies():
    n, m = 30, 10**5
    table = limits.expected_localtime_renewal(RENEWAL, n)
    mc = limits.expected_localtime_montecarlo(RENEWAL, n, m, Stream.from_seed(5))
    p = table.values
    se = np.sqrt(np.maximum(p * (1 - p), 1e-12) / m)
    assert np.all(np.abs(mc.values - p) <= 4 * se + 1e-12)


def test_sum_of_squares_equals_mean_q():
    n, pairs = 500, 2000
    table = limits.expected_localtime_renewal(RENEWAL, n)
    q = []
    for i in range(pairs):
        a = accumulate(sample_path(RENEWAL, n, Stream.from_seed(6, i, 0)))
        b = accumulate(sample_path(RENEWAL, n, Stream.from_seed(6, i, 1)))
        q.append(mutual_intersection(a, b))
    exact = limits.expected_q_renewal(table)
    assert abs(np.mean(q) - exact) <= 4 * np.std(q) / math.sqrt(pairs)


def test_targets_carry_ingredients():
    t = limits.target_planar(SimpleWalk(2))
    assert t.ingredients["det"] == pytest.approx(0.25)
    est = limits.GammaEstimate(0.5, 0.01, 100, 10)
    tt = limits.target_transient(est)
    assert tt.value == pytest.approx(3.0) and tt.ingredients["gamma_horizon"] == 100
    assert limits.target_renewal(RENEWAL).as_dict()["ingredients"] == {"m": 1.5}
