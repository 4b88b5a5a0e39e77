"""Command line entry point: ``traploc <experiment> [flags]``."""
from __future__ import annotations

import argparse
import json
import sys

import yaml

from .errors import DomainError, NumericalQualityError, TraplocError
from .harness import ConfigError, ExperimentConfig, calibrate, default_threads, load_calibration, run, write_result

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2

# subcommand -> experiment names selectable with --variant (first is the default)
SUBCOMMANDS = {
    "sample": ["sample"],
    "records": ["records"],
    "sum-max": ["sum-max"],
    "localise": ["complete-loc", "gamma-card"],
    "quenched": ["quenched"],
    "favoured": ["favoured", "record-mass"],
    "audit": ["audit"],
    "balanced": ["balanced"],
    "check-assumptions": ["check-assumptions"],
}

HELP = {
    "sample": "draw traps with their tail-uniform transform",
    "records": "record positions, depths and gap statistics",
    "sum-max": "sum over max of the scanned traps at log-spaced checkpoints",
    "localise": "localisation-set snapshots on a time grid",
    "quenched": "exact law of the walk on a finite segment",
    "favoured": "mass of the favoured site along a time grid",
    "audit": "sites that could join consecutive records before relocalisation",
    "balanced": "masses at the balance time of planted instances",
    "check-assumptions": "tail and auxiliary-function conditions",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors are validation errors (exit 1)
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _count(text: str) -> int:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if x != int(x):
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    return int(x)


def _option(text: str) -> tuple[str, object]:
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    return key, yaml.safe_load(value)


def _common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--model", default=S, help="tail model, e.g. stretched-log:0.55")
    p.add_argument("--aux", default=S, help="auxiliary scale: default or floor:<h0>")
    p.add_argument("--seed", type=_count, default=S, help="base seed (or first planted instance)")
    p.add_argument("--seeds", type=_count, default=S, help="number of consecutive seeds")
    p.add_argument("--imax", dest="i_max", type=_count, default=S, help="number of traps to scan")
    p.add_argument("--tmin", dest="t_min", type=float, default=S, help="first time of the log-spaced grid")
    p.add_argument("--tmax", dest="t_max", type=float, default=S, help="last time of the log-spaced grid")
    p.add_argument("--tsteps", dest="t_steps", type=_count, default=S, help="number of grid times")
    p.add_argument("--nmin", dest="n_min", type=_count, default=S, help="first record number")
    p.add_argument("--nmax", dest="n_max", type=_count, default=S, help="last record number")
    for i in range(8):
        p.add_argument(f"--eps{i}", type=float, default=S, help=f"favourable-event parameter {i}")
    p.add_argument("--N", type=_count, default=S, help="number of localisation sites (default from the model)")
    p.add_argument("--markers", action="store_true", default=S, help="add balance and relocalisation markers")
    p.add_argument("--set", dest="options", action="append", type=_option, default=S, metavar="KEY=VALUE",
                   help="experiment option (repeatable)")
    p.add_argument("--out", default=S, help="output file (default: standard output)")
    p.add_argument("--format", choices=["csv", "json"], default=S)
    p.add_argument("--threads", type=_count, default=S, help="worker threads (default: TRAPLOC_THREADS or 1)")
    p.add_argument("--config", default=S, help="YAML or JSON file with configuration keys")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="traploc", description="Trap-model localisation experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, variants in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=HELP[name])
        if len(variants) > 1:
            p.add_argument("--variant", choices=variants, default=variants[0])
        _common(p)
    c = sub.add_parser("calibrate", help="rerun the pilot seeds and write the calibration file")
    c.add_argument("--out", default=None)
    c.add_argument("--threads", type=_count, default=None)
    c.add_argument("--only", action="append", default=None, metavar="PILOT",
                   help="rerun just this pilot (repeatable) and merge into the shipped file")
    return parser


def resolve_config(ns: argparse.Namespace) -> tuple[ExperimentConfig, int]:
    """Defaults, then the config file, then explicit flags."""
    given = dict(vars(ns))
    command = given.pop("command")
    experiment = given.pop("variant", SUBCOMMANDS[command][0])
    data: dict = {}
    path = given.pop("config", None)
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError("--config", str(exc)) from None
        if not isinstance(loaded, dict):
            raise ConfigError("--config", "expected a mapping of configuration keys")
        data.update(loaded)
    threads = given.pop("threads", data.pop("threads", None))
    eps = list(data.get("eps", ExperimentConfig.__dataclass_fields__["eps"].default))
    for i in range(8):
        if f"eps{i}" in data:
            eps[i] = data.pop(f"eps{i}")
        if f"eps{i}" in given:
            eps[i] = given.pop(f"eps{i}")
    data["eps"] = eps
    options = dict(data.get("options") or {})
    options.update(dict(given.pop("options", [])))
    if given.pop("markers", False):
        options["markers"] = True
    data["options"] = options
    data.update(given)
    data["experiment"] = experiment
    cfg = ExperimentConfig.from_mapping(data)
    return cfg, (default_threads() if threads is None else int(threads))


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        if ns.command == "calibrate":
            previous = load_calibration() if ns.only else None
            cal = calibrate(ns.threads or default_threads(), only=ns.only, previous=previous)
            text = json.dumps(cal, indent=1) + "\n"
            if ns.out:
                with open(ns.out, "w") as fh:
                    fh.write(text)
            else:
                sys.stdout.write(text)
            return EXIT_OK
        cfg, threads = resolve_config(ns)
        print("# config: " + json.dumps(cfg.to_dict(), sort_keys=True), file=sys.stderr)
        result = run(cfg, threads)
    except NumericalQualityError as exc:
        print(f"traploc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DomainError, TypeError, ValueError) as exc:
        print(f"traploc: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except TraplocError as exc:
        print(f"traploc: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    text = write_result(result)
    if not cfg.out:
        sys.stdout.write(text)
    print("# summary: " + json.dumps(result.to_json()["summary"], sort_keys=True), file=sys.stderr)
    for e in result.errors:
        print(f"# seed {e['seed']} {e['kind']}: {e['error']}: {e['message']}", file=sys.stderr)
    return EXIT_NUMERICAL if result.has_numerical_failure else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
