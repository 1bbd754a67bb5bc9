import csv
import json
from pathlib import Path

import pytest

from rwrs import cli, config
from rwrs.errors import ConfigError
from rwrs.harness import QuenchedSpec, SuiteSpec
from rwrs.report import report_bodies

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL_RENEWAL = """
[scenery]
law = "rademacher"
seeds = [1, 2]
dim = 1

[walk]
variant = "renewal"
support = [1, 2]
probs = [0.5, 0.5]

[experiment]
theorem = "renewal"
n = 400
M = 1500
min_samples = 1000

[execution]
threads = 2
master_seed = 3
"""


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_all_reference_configs_parse():
    names = sorted(p.stem for p in CONFIGS.glob("*.toml"))
    assert names == ["growth_d3", "growth_d5", "growth_stable", "planar", "planar_intersections", "renewal",
                     "renewal_intersections", "transient_d3", "transient_stable"]
    for p in CONFIGS.glob("*.toml"):
        run = config.load(p)
        assert isinstance(run.spec, (QuenchedSpec, SuiteSpec))
        assert cli.main(["validate", "--config", str(p)]) == 0


def test_reference_configs_match_criteria():
    r = config.load(CONFIGS / "renewal.toml").spec
    assert (r.n, r.samples, len(r.scenery_seeds)) == (5000, 10**4, 5)
    t = config.load(CONFIGS / "transient_d3.toml").spec
    assert (t.n, t.samples, t.gamma_horizon, t.gamma_samples) == (10**5, 10**4, 10**6, 10**5)
    p = config.load(CONFIGS / "planar.toml").spec
    assert (p.n, p.samples, len(p.scenery_seeds), p.m_max, p.nu) == (10**5, 2000, 3, 3, 1.0)
    g = config.load(CONFIGS / "growth_d5.toml").spec
    assert g.horizons[-2:] == (10**5, 10**6)


def test_unknown_key_named(tmp_path, capsys):
    p = _write(tmp_path, SMALL_RENEWAL.replace("M = 1500", "smaples = 1500"))
    with pytest.raises(ConfigError, match="smaples") as err:
        config.load(p)
    assert err.value.line is not None
    assert cli.main(["validate", "--config", str(p)]) == 2
    assert "smaples" in capsys.readouterr().err


def test_parse_error_has_line_and_column(tmp_path, capsys):
    p = _write(tmp_path, "[walk]\nvariant = \"simple\"\ndim = \n")
    with pytest.raises(ConfigError) as err:
        config.load(p)
    assert err.value.line == 3 and err.value.column is not None
    assert cli.main(["run", "--config", str(p)]) == 2


def test_validate_aperiodic(tmp_path, capsys):
    p = _write(tmp_path, SMALL_RENEWAL.replace("support = [1, 2]", "support = [2, 4]"))
    assert cli.main(["validate", "--config", str(p)]) != 0
    assert "aperiodic" in capsys.readouterr().out


def test_validate_simple_d3(tmp_path):
    text = '[walk]\nvariant = "simple"\ndim = 3\n[experiment]\ntheorem = "transient"\nn = 100\n'
    assert cli.main(["validate", "--config", str(_write(tmp_path, text))]) == 0


def test_overrides():
    doc = config.apply_override({"experiment": {"M": 5}}, "experiment.M=10")
    assert doc["experiment"]["M"] == 10
    doc = config.apply_override(doc, "scenery.law=gaussian")
    assert doc["scenery"]["law"] == "gaussian"
    doc = config.apply_override(doc, "experiment.time_grid=[0.25, 1.0]")
    assert doc["experiment"]["time_grid"] == [0.25, 1.0]
    with pytest.raises(ConfigError):
        config.apply_override(doc, "M10")
    with pytest.raises(ConfigError, match="bogus"):
        config.loads(SMALL_RENEWAL, ["experiment.bogus=1"])


def test_run_writes_outputs(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL_RENEWAL)
    out = tmp_path / "out"
    code = cli.main(["run", "--config", str(cfg), "--output", str(out)])
    printed = capsys.readouterr().out
    assert code in (0, 1)
    assert "variance" in printed and ("PASS" in printed or "FAIL" in printed)
    doc = json.loads((out / "report.json").read_text())
    assert doc["v"] == 1 and doc["reports"][0]["body"]["kind"] == "renewal"
    rows = list(csv.DictReader((out / "summary.csv").open()))
    assert len(rows) == 2 and abs(float(rows[0]["variance"]) - 1 / 3) < 0.1
    with (out / "ecdf.csv").open() as fh:
        header = next(csv.reader(fh))
    assert header[-3:] == ["sample_value", "empirical_cdf", "target_normal_cdf"]
    assert not list(out.glob(".*.tmp"))


def test_thread_overrides_give_identical_bodies(tmp_path):
    cfg = _write(tmp_path, SMALL_RENEWAL)
    for threads in (1, 8):
        cli.main(["run", "--config", str(cfg), "--override", f"execution.threads={threads}",
                  "--output", str(tmp_path / f"t{threads}")])
    assert report_bodies(tmp_path / "t1" / "report.json") == report_bodies(tmp_path / "t8" / "report.json")


def test_underpowered_override(tmp_path, capsys):
    cfg = _write(tmp_path, SMALL_RENEWAL)
    code = cli.main(["run", "--config", str(cfg), "--override", "experiment.M=10", "--output", str(tmp_path / "o")])
    out = capsys.readouterr().out
    assert code == 0 and "underpowered" in out and "low power" in out
    body = report_bodies(tmp_path / "o" / "report.json")[0]
    assert body["underpowered"] and all(c["low_power"] for c in body["criteria"])


def test_resource_error_exit_code(tmp_path, capsys):
    text = SMALL_RENEWAL.replace("n = 400", "n = 40000000")
    code = cli.main(["run", "--config", str(_write(tmp_path, text)), "--output", str(tmp_path / "o")])
    err = capsys.readouterr().err
    assert code == 3 and "montecarlo" in err


def test_montecarlo_centering_runs(tmp_path):
    text = SMALL_RENEWAL.replace('centering = "exact"', "") + ""
    text = text.replace("[experiment]\n", '[experiment]\ncentering = "montecarlo"\ncentering_M = 2000\n')
    assert cli.main(["run", "--config", str(_write(tmp_path, text)), "--output", str(tmp_path / "o")]) in (0, 1)
    body = report_bodies(tmp_path / "o" / "report.json")[0]
    assert body["diagnostics"]["centering"]["method"] == "montecarlo"


def test_intersections_command_requires_suite(tmp_path, capsys):
    assert cli.main(["intersections", "--config", str(_write(tmp_path, SMALL_RENEWAL))]) == 2
    suite = '[walk]\nvariant = "simple"\ndim = 5\n[experiment]\nsuite = "growth"\nhorizons = [100, 1000]\npairs = 30\n'
    code = cli.main(["intersections", "--config", str(_write(tmp_path, suite, "s.toml")), "--output", str(tmp_path / "s")])
    assert code in (0, 1)
    assert "bounded_growth" in capsys.readouterr().out


def test_gamma_command(capsys):
    assert cli.main(["gamma", "--variant", "renewal", "--support", "1,2", "--probs", "0.5,0.5"]) == 0
    assert json.loads(capsys.readouterr().out)["gamma"] == 1.0
    assert cli.main(["gamma", "--variant", "simple", "--dim", "3", "--T", "1e5", "--M", "1e4", "--double"]) == 0
    est = json.loads(capsys.readouterr().out)
    assert 0.64 <= est["gamma"] <= 0.68
    assert est["delta"] is not None and est["doubled_gamma"] is not None
    assert cli.main(["gamma", "--variant", "stable", "--dim", "1"]) == 2


def test_threads_env_default(monkeypatch):
    from rwrs._parallel import default_threads

    monkeypatch.setenv("RWRS_THREADS", "6")
    assert default_threads() == 6
    monkeypatch.setenv("RWRS_THREADS", "junk")
    assert default_threads() == 1
