import math

import numpy as np
import pytest

from rwrs import harness, limits
from rwrs._rng import Stream
from rwrs.occupation import rwrs_partial_sums
from rwrs.scenery import SiteField
from rwrs.walks import FiniteStepSymmetric, RenewalFinite, SimpleWalk, StableTail, Theorem, sample_path

RENEWAL = RenewalFinite((1, 2), (0.5, 0.5))


@pytest.mark.parametrize("law,scenery", [
    (RENEWAL, "rademacher"),
    (SimpleWalk(1), "gaussian"),
    (StableTail(1, 0.8), "rademacher"),
    (StableTail(1, 0.3), "uniform"),  # jumps leave the cached window
    (SimpleWalk(2), "gaussian"),
    (FiniteStepSymmetric(((1, 1), (-1, -1), (1, -1), (-1, 1)), (0.25,) * 4), "rademacher"),
    (SimpleWalk(3), "rademacher"),
    (StableTail(3, 1.5), "gaussian"),
    (SimpleWalk(5), "uniform"),
])
def test_z_grid_matches_path_sums(law, scenery):
    n, m = 3000, 40
    fld = SiteField(21, law.dim, scenery)
    stream = Stream.from_seed(5)
    grid = [0.25, 0.5, 1.0]
    z = harness.z_grid(law, fld, n, [math.floor(n * t) for t in grid], m, stream)
    for i in range(m):
        path = sample_path(law, n, stream.child(i))
        ref = rwrs_partial_sums(path, fld, grid)
        np.testing.assert_allclose(z[i], ref, rtol=0, atol=1e-9 * n)
        if scenery == "rademacher":
            assert z[i].tolist() == ref


def test_z_grid_thread_invariant():
    law, fld = SimpleWalk(3), SiteField(2, 3, "gaussian")
    a = harness.z_grid(law, fld, 500, [250, 500], 1000, Stream.from_seed(1), threads=1)
    b = harness.z_grid(law, fld, 500, [250, 500], 1000, Stream.from_seed(1), threads=4)
    assert np.array_equal(a, b)


def _small_specs():
    return [
        harness.QuenchedSpec(Theorem.RENEWAL, RENEWAL, scenery_seeds=(1, 2), n=300, samples=600, min_samples=100),
        harness.QuenchedSpec(Theorem.PLANAR, SimpleWalk(2), scenery_seeds=(1,), n=300, samples=600, annealed_paths=5, min_samples=100),
        harness.QuenchedSpec(Theorem.TRANSIENT, SimpleWalk(3), scenery_seeds=(1,), n=300, samples=600,
                             gamma_horizon=1000, gamma_samples=600, min_samples=100),
        harness.SuiteSpec("intersection", RENEWAL, (100, 1000), pairs=8, scenery_samples=10),
        harness.SuiteSpec("intersection", SimpleWalk(2), (100, 1000), paths=3),
        harness.SuiteSpec("growth", SimpleWalk(5), (100, 1000), pairs=8),
    ]


@pytest.mark.parametrize("index", range(6))
def test_report_bodies_are_thread_invariant(index):
    spec = _small_specs()[index]
    a = harness.run_spec(spec, threads=1)
    b = harness.run_spec(spec, threads=8)
    assert a.body() == b.body()
    assert a.meta["threads"] == 1 and b.meta["threads"] == 8
    assert all(c.tolerance for c in a.criteria)


def test_degenerate_renewal():
    spec = harness.QuenchedSpec(Theorem.RENEWAL, RenewalFinite((1,), (1.0,)), n=50, samples=20, min_samples=1)
    r = harness.run_quenched_renewal(spec)
    assert r.degenerate and r.passed
    assert all(abs(row["variance"]) == 0.0 for row in r.per_seed)


def test_underpowered_flag():
    spec = harness.QuenchedSpec(Theorem.RENEWAL, RENEWAL, n=200, samples=10)
    r = harness.run_spec(spec)
    assert r.underpowered and r.exit_code() == 0
    assert all(c.low_power for c in r.criteria)


def test_hypothesis_errors():
    with pytest.raises(harness.HypothesisError, match="aperiodic"):
        harness.run_spec(harness.QuenchedSpec(Theorem.RENEWAL, RenewalFinite((2, 4), (0.5, 0.5)), n=10, samples=10))
    with pytest.raises(harness.HypothesisError):
        harness.run_spec(harness.QuenchedSpec(Theorem.TRANSIENT, SimpleWalk(3), scenery_law="ones", n=10, samples=10))
    with pytest.raises(harness.HypothesisError):
        harness.run_spec(harness.QuenchedSpec(Theorem.PLANAR, SimpleWalk(3), n=10, samples=10))


def test_unknown_tolerance_rejected():
    with pytest.raises(harness.UsageError):
        harness.QuenchedSpec(Theorem.RENEWAL, RENEWAL, tolerances={"varaince_rel": 0.1})


def test_renewal_odd_moments_small():
    spec = harness.QuenchedSpec(Theorem.RENEWAL, RENEWAL, scenery_seeds=(1, 2, 3), n=10**4, samples=4000,
                                moment_order=5)
    r = harness.run_spec(spec)
    assert r.diagnostics["odd_moments"]["within_4_stderr"]


def test_moment_ladder_trends():
    spec = harness.QuenchedSpec(Theorem.RENEWAL, RENEWAL, scenery_seeds=tuple(range(1, 11)), n=100, samples=4000)
    ladder = harness.moment_ladder(spec, (30, 300, 3000))
    assert ladder["mean_approaching"]
    assert ladder["scenery_variance_decreasing"]


def test_lattice_jitter_only_for_rademacher():
    assert harness.lattice_span(harness.SceneryLaw.RADEMACHER) == 2.0
    assert harness.lattice_span(harness.SceneryLaw.STANDARD_GAUSSIAN) is None
    x = np.zeros(1000)
    j = harness.ks_input(x, 0.1, Stream.from_seed(1))
    assert np.all(np.abs(j) <= 0.05) and j.std() > 0.02


def test_renewal_intersection_identity():
    spec = harness.SuiteSpec("intersection", RENEWAL, (200, 2000), pairs=200, scenery_samples=400)
    r = harness.run_spec(spec)
    ident = r.diagnostics["annealed_identity"]
    assert ident["within_3_stderr"]
    assert r.diagnostics["cauchy_schwarz_holds"] and r.diagnostics["renewal_collapse"]
    exact = limits.expected_q_renewal(limits.expected_localtime_renewal(RENEWAL, 2000))
    assert abs(ident["pair_mean_Q"] - exact) <= 4 * ident["pair_stderr"]


def test_growth_functions():
    g, name = harness.growth_function(SimpleWalk(3))
    assert g(10**4) == pytest.approx(100) and name == "n^0.5"
    g, name = harness.growth_function(SimpleWalk(4))
    assert g(math.e**3) == pytest.approx(3) and name == "log n"
    assert harness.growth_function(SimpleWalk(5))[0](10**6) == 1.0
    g, _ = harness.growth_function(StableTail(1, 0.8))
    assert g(10**4) == pytest.approx(10**3)
    with pytest.raises(harness.UsageError):
        harness.growth_function(RENEWAL)


def test_planar_schedule_criterion():
    spec = harness.QuenchedSpec(Theorem.PLANAR, SimpleWalk(2), n=200, samples=200, m_max=3, min_samples=1)
    r = harness.run_spec(spec)
    sched = next(c for c in r.criteria if c.name == "schedule")
    assert sched.passed and sched.observed == [2, 54, 8103]
