"""``rwrs`` command line: validate configs, run experiments, estimate gamma.

Exit codes: 0 pass, 1 criteria failed, 2 config error, 3 resource error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import config as cfg
from . import limits
from ._parallel import default_threads
from ._rng import Stream
from .errors import ConfigError, ResourceError, UsageError
from .harness import HypothesisError, QuenchedSpec, SuiteSpec, run_spec
from .report import write_reports
from .walks import Theorem, law_from_dict, validate

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_RESOURCE = 0, 1, 2, 3
DEFAULT_OUTPUT = "rwrs-out"


def _count(text: str) -> int:
    """Integer that may be written as 1e5."""
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if value != int(value) or value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return int(value)


def _numbers(conv):
    def parse(text):
        try:
            return [conv(t) for t in text.replace(" ", "").split(",") if t]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad list {text!r}") from None
    return parse


def _add_config_args(p):
    p.add_argument("--config", required=True, metavar="PATH", help="TOML run config")
    p.add_argument("--override", action="append", default=[], metavar="K=V",
                   help="dotted override such as experiment.M=10 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rwrs", description="Random walk in random scenery experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a config and the hypotheses of its theorem")
    _add_config_args(p)

    for name, helptext in (("run", "run the experiment in a config"),
                           ("intersections", "run an intersection or growth suite config")):
        p = sub.add_parser(name, help=helptext)
        _add_config_args(p)
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: config, then RWRS_THREADS)")
        p.add_argument("--output", default=None, metavar="DIR", help="output directory")

    p = sub.add_parser("gamma", help="estimate the escape probability of a walk")
    p.add_argument("--variant", required=True, choices=["renewal", "simple", "finite_symmetric", "stable"])
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--support", type=_numbers(int), default=None, help="renewal support, e.g. 1,2")
    p.add_argument("--probs", type=_numbers(float), default=None, help="step probabilities, e.g. 0.5,0.5")
    p.add_argument("--steps", default=None, help="finite_symmetric steps as JSON, e.g. [[1,0],[-1,0]]")
    p.add_argument("--T", type=_count, default=10**5, help="horizon (default 1e5)")
    p.add_argument("--M", type=_count, default=10**4, help="walks (default 1e4)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--double", action="store_true", help="rerun at 2T and report the stability delta")
    p.add_argument("--threads", type=int, default=None)
    return parser


def _print_validation(law, theorem, scenery_law=None) -> bool:
    ok = True
    print(f"walk: {json.dumps(law.to_dict())}")
    for th in Theorem:
        violations = validate(law, th)
        mark = "ok" if not violations else "violated"
        tag = " (selected)" if th is theorem else ""
        print(f"  {th.value:<10} {mark}{tag}")
        for v in violations:
            print(f"      - {v.condition}: {v.message}")
        if th is theorem and violations:
            ok = False
    if scenery_law is not None:
        admissible = scenery_law.centered_unit_variance and (
            theorem is Theorem.TRANSIENT or scenery_law.all_moments_finite
        )
        print(f"  scenery    {scenery_law.value}: {'ok' if admissible else 'not admissible'}")
        ok = ok and admissible
    return ok


def _selected_theorem(spec):
    if isinstance(spec, QuenchedSpec):
        return spec.theorem
    return spec.law.natural_theorem()


def cmd_validate(args) -> int:
    run = cfg.load(args.config, args.override)
    spec = run.spec
    ok = _print_validation(spec.law, _selected_theorem(spec), getattr(spec, "scenery_law", None))
    print("admissible" if ok else "NOT admissible")
    return EXIT_OK if ok else EXIT_FAILED


def cmd_run(args, suite_only=False) -> int:
    run = cfg.load(args.config, args.override)
    if suite_only and not isinstance(run.spec, SuiteSpec):
        raise ConfigError("the intersections command needs a config with experiment.suite")
    threads = args.threads or run.threads or default_threads()
    out_dir = args.output or run.output_dir or DEFAULT_OUTPUT
    report = run_spec(run.spec, threads=threads)
    paths = write_reports([report], out_dir)
    for c in report.criteria:
        print(c.verdict())
    if report.degenerate:
        print("note: degenerate law, all normalized samples coincide")
    if report.underpowered:
        print("warning: underpowered run (fewer samples than min_samples); verdicts are low-power and do not set the exit code")
    print(f"wrote {paths['report']}, {paths['summary']}, {paths['ecdf']}")
    return report.exit_code()


def cmd_gamma(args) -> int:
    data = {"variant": args.variant}
    for key in ("dim", "alpha", "support", "probs"):
        value = getattr(args, key)
        if value is not None:
            data[key] = value
    if args.steps is not None:
        try:
            data["steps"] = json.loads(args.steps)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--steps is not valid JSON: {exc.msg}") from None
    try:
        law = law_from_dict(data)
    except UsageError as exc:
        raise ConfigError(str(exc)) from None
    threads = args.threads or default_threads()
    est = limits.estimate_gamma(law, args.T, args.M, Stream.from_seed(args.seed, 2), double=args.double, threads=threads)
    print(json.dumps(est.as_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            return cmd_validate(args)
        if args.command == "gamma":
            return cmd_gamma(args)
        return cmd_run(args, suite_only=args.command == "intersections")
    except ResourceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.suggestion:
            print(f"suggestion: {exc.suggestion}", file=sys.stderr)
        return EXIT_RESOURCE
    except HypothesisError as exc:
        print(f"error: hypotheses not satisfied: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConfigError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
