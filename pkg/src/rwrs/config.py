"""Run configs: strict TOML documents that map onto one experiment spec."""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .errors import ConfigError, UsageError
from .harness import QuenchedSpec, SuiteSpec
from .walks import Theorem, law_from_dict

SECTIONS = {
    "scenery": {"law", "seeds", "dim"},
    "walk": {"variant", "support", "probs", "dim", "steps", "alpha"},
    "experiment": {
        "theorem", "suite", "n", "horizons", "M", "time_grid", "moment_order", "nu", "m_max",
        "tolerances", "centering", "centering_M", "gamma_T", "gamma_M", "min_samples",
        "annealed_paths", "ladder", "pairs", "paths", "scenery_samples",
    },
    "execution": {"threads", "master_seed", "output_dir"},
}
REQUIRED = {"walk", "experiment"}
# Keys whose values are free-form tables checked later by the spec.
_OPEN_TABLES = {("experiment", "tolerances")}


@dataclass
class RunConfig:
    raw: dict
    spec: object
    threads: int | None
    master_seed: int
    output_dir: str | None
    source: str = "<string>"


def _locate(text: str, key: str):
    m = re.search(rf"^[ \t]*{re.escape(key)}[ \t]*=", text, re.MULTILINE)
    if m is None:
        m = re.search(rf"^[ \t]*\[[ \t]*{re.escape(key)}[ \t]*\]", text, re.MULTILINE)
    if m is None:
        return None, None
    line = text.count("\n", 0, m.start()) + 1
    col = m.start() - (text.rfind("\n", 0, m.start()) + 1) + 1
    return line, col


def _error(message, text=None, key=None, line=None, col=None):
    if text is not None and key is not None and line is None:
        line, col = _locate(text, key)
    err = ConfigError(message if line is None else f"{message} (line {line}, column {col})")
    err.line, err.column, err.key = line, col, key
    return err


def parse_text(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line, col = getattr(exc, "lineno", None), getattr(exc, "colno", None)
        if line is None:
            m = re.search(r"line (\d+), column (\d+)", str(exc))
            line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        msg = getattr(exc, "msg", str(exc))
        raise _error(f"config parse error: {msg}", line=line, col=col) from None


def check_keys(doc: dict, text: str | None = None):
    """Reject unknown sections and keys, naming the offender."""
    for section, body in doc.items():
        if section not in SECTIONS:
            raise _error(f"unknown config section {section!r}", text, section)
        if not isinstance(body, dict):
            raise _error(f"{section!r} must be a table", text, section)
        for key, value in body.items():
            if key not in SECTIONS[section]:
                raise _error(f"unknown key {section}.{key!r}", text, key)
            if isinstance(value, dict) and (section, key) not in _OPEN_TABLES:
                raise _error(f"{section}.{key} must not be a table", text, key)
    missing = REQUIRED - set(doc)
    if missing:
        raise _error(f"missing config section(s): {sorted(missing)}")


def apply_override(doc: dict, assignment: str) -> dict:
    """Set a dotted key, e.g. ``experiment.M=10``; the value is read as TOML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form KEY=VALUE")
    key, raw = assignment.split("=", 1)
    parts = [p.strip() for p in key.strip().split(".")]
    if len(parts) < 2 or not all(parts):
        raise ConfigError(f"override key {key!r} must be dotted like section.key")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    out = copy.deepcopy(doc)
    node = out
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key!r} descends into a non-table value")
    node[parts[-1]] = value
    return out


def _walk_dict(doc):
    walk = dict(doc["walk"])
    if walk.get("variant") == "renewal":
        walk.pop("dim", None)
    return walk


def build(doc: dict, text: str | None = None, source: str = "<string>") -> RunConfig:
    check_keys(doc, text)
    try:
        law = law_from_dict(_walk_dict(doc))
        scen = doc.get("scenery", {})
        if "dim" in scen and int(scen["dim"]) != law.dim:
            raise UsageError(f"scenery.dim = {scen['dim']} but the walk lives in dimension {law.dim}")
        exp = dict(doc["experiment"])
        exe = doc.get("execution", {})
        master = int(exe.get("master_seed", 0))
        tol = exp.get("tolerances", {})
        if ("theorem" in exp) == ("suite" in exp):
            raise UsageError("experiment needs exactly one of 'theorem' or 'suite'")
        if "theorem" in exp:
            if "n" not in exp:
                raise UsageError("quenched experiments need experiment.n")
            kwargs = dict(
                theorem=Theorem(str(exp["theorem"]).lower()),
                law=law,
                scenery_law=scen.get("law", "rademacher"),
                scenery_seeds=tuple(int(s) for s in scen.get("seeds", [1])),
                n=int(exp["n"]),
                samples=int(exp.get("M", 1000)),
                master_seed=master,
                tolerances=dict(tol),
            )
            for src, dst, conv in (
                ("time_grid", "time_grid", lambda v: tuple(float(t) for t in v)),
                ("moment_order", "moment_order", int),
                ("nu", "nu", float),
                ("m_max", "m_max", int),
                ("centering", "centering", str),
                ("centering_M", "centering_samples", int),
                ("gamma_T", "gamma_horizon", int),
                ("gamma_M", "gamma_samples", int),
                ("min_samples", "min_samples", int),
                ("annealed_paths", "annealed_paths", int),
                ("ladder", "ladder", lambda v: tuple(int(h) for h in v)),
            ):
                if src in exp:
                    kwargs[dst] = conv(exp[src])
            spec = QuenchedSpec(**kwargs)
        else:
            if "horizons" not in exp:
                raise UsageError("suite experiments need experiment.horizons")
            kwargs = dict(suite=str(exp["suite"]), law=law, horizons=tuple(exp["horizons"]),
                          master_seed=master, tolerances=dict(tol))
            for src, dst in (("pairs", "pairs"), ("M", "pairs"), ("paths", "paths"),
                             ("scenery_samples", "scenery_samples"), ("min_samples", "min_samples")):
                if src in exp:
                    kwargs[dst] = int(exp[src])
            spec = SuiteSpec(**kwargs)
    except (UsageError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid config: {exc}") from None
    threads = exe.get("threads")
    return RunConfig(doc, spec, None if threads is None else int(threads), master, exe.get("output_dir"), source)


def load(path, overrides=()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text, overrides, str(path))


def loads(text: str, overrides=(), source: str = "<string>") -> RunConfig:
    doc = parse_text(text)
    check_keys(doc, text)
    for o in overrides:
        doc = apply_override(doc, o)
    return build(doc, text, source)
