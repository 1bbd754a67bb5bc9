"""Every acceptance criterion at its stated tolerance, run from the shipped configs.

Each test prints one PASS/FAIL line; the lines are repeated in the terminal summary.
Criteria that cannot be met for a documented mathematical reason are reported as
FAIL and marked xfail; their tolerances are not relaxed.
"""

import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

import oracles
from conftest import ACCEPTANCE_LINES
from rwrs import config, limits
from rwrs._rng import Stream
from rwrs.harness import run_spec
from rwrs.occupation import (
    accumulate, mutual_intersection, occupation_from_positions, product_local_time,
    range_intersection, self_intersection,
)
from rwrs.walks import RenewalFinite, SimpleWalk, StableTail, sample_path

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
THREADS = int(os.environ.get("RWRS_THREADS", os.cpu_count() or 1))
RENEWAL = RenewalFinite((1, 2), (0.5, 0.5))

# Planar constant: the stated target is 1/pi but the simple walk's true limit is 2/pi.
PLANAR_CONFLICT = "planar constant off by a factor 2 (see decisions ledger)"
# Stable alpha = 0.8 quenched mean has scenery variance of order n^0.75; at n = 1e5 it shifts the KS fit.
STABLE_KS = "stable quenched mean does not vanish at n = 1e5 (see decisions ledger)"

_cache = {}


def _run(name):
    if name not in _cache:
        run = config.load(CONFIGS / f"{name}.toml")
        _cache[name] = run_spec(run.spec, threads=THREADS)
    return _cache[name]


def _criterion(report, name):
    for c in report.criteria:
        if c.name == name:
            return c
    raise KeyError(name)


def _record(label, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def _check(label, report, names, known_failure=None):
    cs = [_criterion(report, n) for n in names]
    passed = all(c.passed for c in cs)
    _record(label, passed, "; ".join(c.verdict() for c in cs))
    if not passed and known_failure:
        pytest.xfail(known_failure)
    assert passed


def test_c1_renewal_variance():
    _check("1 renewal variance", _run("renewal"), ["variance"])


def test_c1_renewal_ks():
    _check("1 renewal KS", _run("renewal"), ["ks"])


def test_c1_renewal_fourth_moment():
    _check("1 renewal fourth moment", _run("renewal"), ["fourth_moment"])


def test_c2_renewal_intersections():
    _check("2 renewal intersections", _run("renewal_intersections"), ["Q_over_n", "J_over_n", "Q_variance_slope"])


def test_c3a_planar_intersection_constant():
    _check("3a planar I_n/(n log n)", _run("planar_intersections"), ["I_over_nlogn"], PLANAR_CONFLICT)


def test_c3b_planar_quenched_variance():
    _check("3b planar quenched variance", _run("planar"), ["variance_ratio"], PLANAR_CONFLICT)


def test_c3c_planar_schedule():
    _check("3c planar schedule", _run("planar"), ["schedule"])
    assert [limits.subsequence_t(m, 1.0) for m in (1, 2, 3)] == [math.floor(math.exp(m * m)) for m in (1, 2, 3)]


def test_c3_planar_band_narrows():
    _check("3 planar band narrows", _run("planar_intersections"), ["band_narrows"])


def test_c4_transient_d3_variance():
    _check("4 transient d=3 variance", _run("transient_d3"),
           ["terminal_variance", "linear_variance", "gamma_converged"])


def test_c4_transient_d3_ks():
    _check("4 transient d=3 KS", _run("transient_d3"), ["ks"])


def test_c5_transient_stable_variance():
    _check("5 transient stable variance", _run("transient_stable"),
           ["terminal_variance", "linear_variance", "gamma_converged"])


def test_c5_transient_stable_ks():
    _check("5 transient stable KS", _run("transient_stable"), ["ks"], STABLE_KS)


def test_c5_stable_growth():
    _check("5 stable E Q_n/n^0.75 bounded", _run("growth_stable"), ["bounded_growth"])


def test_c6_growth_d3():
    _check("6 d=3 E Q_n/sqrt(n) bounded", _run("growth_d3"), ["bounded_growth"])


def test_c6_growth_d5():
    _check("6 d=5 Q stabilizes", _run("growth_d5"), ["stabilized"])


def test_c7_exactness_oracles():
    failures = []
    for law, d in ((RENEWAL, 1), (SimpleWalk(1), 1), (SimpleWalk(2), 2), (StableTail(1, 0.8), 1)):
        for n in (1, 37, 200):
            a = sample_path(law, n, Stream.from_seed(71, n, d)).positions
            b = sample_path(law, n, Stream.from_seed(72, n, d)).positions
            ta, tb = occupation_from_positions(a), occupation_from_positions(b)
            for p in (2, 3):
                if self_intersection(ta, p) != oracles.brute_self_intersection(a, p):
                    failures.append(f"I^[{p}] {law} n={n}")
            for p, q in ((1, 1), (2, 1), (1, 2)):
                if mutual_intersection(ta, tb, p, q) != oracles.brute_mutual_intersection(a, b, p, q):
                    failures.append(f"Q^[{p},{q}] {law} n={n}")
    for k in (2, 3):
        for n in (10, 100, 500):
            paths = [sample_path(RENEWAL, n, Stream.from_seed(73, n, k, j)) for j in range(k)]
            want = oracles.range_intersection([p.positions for p in paths])
            if product_local_time([accumulate(p) for p in paths]) != want or range_intersection(paths) != want:
                failures.append(f"range identity k={k} n={n}")
    worst = 0.0
    for g in np.linspace(0.05, 1.0, 40):
        closed, series = limits.variance_transient(g), oracles.transient_series(g)
        worst = max(worst, abs(closed - series) / series)
    if worst > 1e-12:
        failures.append(f"variance_transient rel err {worst:.2e}")
    n, m = 40, 10**5
    table = limits.expected_localtime_renewal(RENEWAL, n).values
    mc = limits.expected_localtime_montecarlo(RENEWAL, n, m, Stream.from_seed(74)).values
    se = np.sqrt(np.maximum(table * (1 - table), 1e-12) / m)
    zmax = float(np.max(np.abs(mc - table) / se))
    if zmax > 4:
        failures.append(f"expected local time max |z| {zmax:.2f}")
    _record("7 exactness oracles", not failures,
            f"brute-force sums, range identity, series rel err {worst:.1e}, local time max |z| {zmax:.2f}"
            + (f"; failed: {failures}" if failures else ""))
    assert not failures


def test_c8_determinism_across_threads(tmp_path):
    run = config.load(CONFIGS / "renewal.toml")
    bodies = [json.dumps(run_spec(run.spec, threads=t).body(), sort_keys=True) for t in (1, 8)]
    _record("8 determinism 1 vs 8 threads", bodies[0] == bodies[1], "renewal reference config report bodies")
    assert bodies[0] == bodies[1]
