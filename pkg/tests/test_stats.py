import math

import numpy as np
import pytest

from rwrs.errors import UsageError
from rwrs.scenery import SceneryLaw, SiteField, eval_sites_batch
from rwrs.stats import empirical_moments, gaussian_moment, ks_statistic, loglog_slope, sample_variance


def _normals(seed, n):
    return eval_sites_batch(SiteField(seed, 1, SceneryLaw.STANDARD_GAUSSIAN), np.arange(n))


def test_ks_calibrated_on_own_normals():
    passes = sum(ks_statistic(_normals(s, 10**4), 1.0).p_value > 1e-3 for s in range(100))
    assert passes >= 99


def test_ks_has_power():
    assert ks_statistic(_normals(1, 10**4), 4.0).p_value < 1e-6


def test_ks_degenerate_and_errors():
    res = ks_statistic(np.full(10, 0.3), 1.0)
    assert res.degenerate and res.statistic == 1.0 and res.p_value == 0.0
    with pytest.raises(UsageError):
        ks_statistic([], 1.0)
    with pytest.raises(UsageError):
        ks_statistic([1.0, 2.0], 0.0)


def test_ks_statistic_against_direct_definition():
    x = np.array([-1.0, 0.2, 0.5, 2.0])
    cdf = [0.5 * math.erfc(-v / math.sqrt(2)) for v in sorted(x)]
    d = max(max((i + 1) / 4 - c, c - i / 4) for i, c in enumerate(cdf))
    assert ks_statistic(x, 1.0).statistic == pytest.approx(d, rel=1e-12)


def test_moments_examples():
    est = empirical_moments([-1.0, 1.0], 2)
    assert est.get(2) == 1.0 and est.get(1) == 0.0
    assert gaussian_moment(6, 1.0) == 15
    assert gaussian_moment(4, 1 / 3) == pytest.approx(1 / 3)
    assert gaussian_moment(5, 2.0) == 0.0
    with pytest.raises(UsageError):
        empirical_moments([1.0], 9)


def test_fourth_moment_self_consistency():
    est = empirical_moments(_normals(2, 10**5), 4, 1.0)
    assert abs(est.get(4) - 3) <= 4 * est.se(4)
    assert est.targets == (0.0, 1.0, 0.0, 3.0)


def test_jackknife_matches_iid_stderr():
    x = _normals(3, 10**5)
    est = empirical_moments(x, 2)
    assert est.se(1) == pytest.approx(x.std() / math.sqrt(x.size), rel=0.3)


def test_sample_variance_and_slope():
    assert sample_variance([1.0, -1.0, 3.0]) == pytest.approx(11 / 3)
    assert loglog_slope([10, 100, 1000], [1, 0.1, 0.01]) == pytest.approx(-1.0)
