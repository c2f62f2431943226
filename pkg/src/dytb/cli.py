"""Command-line entry points.

Exit codes: 0 all assertions pass, 1 a machine-checked consequence of
the theorems failed (bug trap), 2 usage or configuration error.
Reports are deterministic byte-for-byte given the same config and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

from ._exact import rat_str
from .funcspace import HolderTuple
from .forms import generate, validate_decay, validate_smoothness
from .lattice import unit_cube
from .paths import build_example_collection, validate_admissible
from .scenarios import ConfigError, MODES, ScenarioConfig, run_scenario
from .serialize import (
    SchemaError,
    canonical_dumps,
    form_from_json,
    form_to_json,
    function_from_json,
    roundtrip_text,
)
from .stopping import TheoremContradiction

EXIT_OK = 0
EXIT_CONTRADICTION = 1
EXIT_USAGE = 2


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON config file (fields mirror the flags)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--instances", type=int, default=10)
    parser.add_argument("--n", type=int, default=2)
    parser.add_argument("--d", type=int, default=1)
    parser.add_argument("--N", type=int, default=3)
    parser.add_argument("--B", default="2")
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument(
        "--exponents", default=None, help="comma-separated rationals, e.g. 2,2"
    )
    parser.add_argument("--density", type=float, default=0.5)
    parser.add_argument("--emit-witness", action="store_true")
    parser.add_argument("--dump-collections", action="store_true")
    parser.add_argument("--precision", type=int, default=128)
    parser.add_argument("--out", help="write the JSON report here instead of stdout")


def _config_from_args(args, mode: str) -> ScenarioConfig:
    payload = {}
    if args.config:
        with open(args.config) as fh:
            payload = json.load(fh)
    exponents = payload.get("exponents")
    if args.exponents is not None:
        exponents = args.exponents.split(",")
    n = payload.get("n", args.n)
    if exponents is None:
        exponents = ["2"] * 2 if n == 2 else None
    if exponents is None:
        raise ConfigError("an exponent tuple is required for n > 2")
    cfg = ScenarioConfig(
        mode=payload.get("mode", mode),
        n=n,
        d=payload.get("d", args.d),
        N=payload.get("N", args.N),
        exponents=tuple(Fraction(str(e)) for e in exponents),
        B=payload.get("B", args.B),
        k=payload.get("k", args.k),
        seed=payload.get("seed", args.seed),
        instances=payload.get("instances", args.instances),
        density=payload.get("density", args.density),
        emit_witness=payload.get("emit_witness", args.emit_witness),
        dump_collections=payload.get("dump_collections", args.dump_collections),
        precision=payload.get("precision", args.precision),
    )
    return cfg.validated()


def _emit(report: dict, args) -> None:
    text = canonical_dumps(report)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _scenario_command(mode: str):
    def run(args) -> int:
        cfg = _config_from_args(args, mode)
        report = run_scenario(cfg)
        _emit(report, args)
        return EXIT_OK if not report["assertion_failures"] else EXIT_CONTRADICTION

    return run


def _cmd_gen(args) -> int:
    cfg = _config_from_args(args, "t1")
    form = generate(cfg.n, cfg.d, cfg.N, cfg.density, seed=str(cfg.seed))
    _emit(form_to_json(form), args)
    return EXIT_OK


def _cmd_validate(args) -> int:
    with open(args.file) as fh:
        obj = json.load(fh)
    form, _ = form_from_json(obj)
    tup = HolderTuple.of(*(Fraction(str(e)) for e in args.exponents.split(","))) if args.exponents else HolderTuple.of(2, 2)
    smooth = validate_smoothness(form)
    decay = validate_decay(form, tup)
    coll = build_example_collection(form.arity) if form.arity <= 8 else None
    admissible, witness = (None, None) if coll is None else validate_admissible(coll)
    report = {
        "schema": "dytb-validate/1",
        "smoothness": smooth.passed,
        "decay": decay.passed,
        "decay_certified": rat_str(decay.worst_ratio),
        "example_collection_admissible": admissible,
    }
    _emit(report, args)
    return EXIT_OK if smooth.passed and decay.passed else EXIT_CONTRADICTION


def _cmd_eval(args) -> int:
    with open(args.file) as fh:
        form, _ = form_from_json(json.load(fh))
    fs = []
    for path in args.functions:
        with open(path) as fh:
            f, _ = function_from_json(json.load(fh))
        fs.append(f)
    from .forms import eval_form

    value = eval_form(form, fs)
    _emit({"schema": "dytb-eval/1", "value": rat_str(value)}, args)
    return EXIT_OK


def _cmd_roundtrip(args) -> int:
    try:
        with open(args.file) as fh:
            text = fh.read()
        result = roundtrip_text(text)
    except SchemaError as e:
        sys.stderr.write(f"schema error: {e}\n")
        return EXIT_USAGE
    report = {
        "schema": "dytb-roundtrip/1",
        "kind": result["kind"],
        "canonical_rationals": result["canonical_rationals"],
        "byte_identical": result["byte_identical"],
    }
    _emit(report, args)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dytb",
        description="Verification workbench for perfect dyadic multilinear singular forms",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for mode, names in (
        ("t1", ("t1",)),
        ("tb-local", ("tb",)),
        ("tb-global", ("global-tb",)),
        ("stopping", ("stop",)),
        ("telescope", ("telescope",)),
        ("outer", ("outer",)),
        ("carleson", ("carleson",)),
        ("lemmas", ("lemmas",)),
    ):
        for name in names:
            p = sub.add_parser(name, help=f"run the {mode} scenario")
            _common(p)
            p.set_defaults(func=_scenario_command(mode))

    p = sub.add_parser("gen", help="generate a random form as JSON")
    _common(p)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("validate", help="validate the axioms of a form file")
    p.add_argument("file")
    p.add_argument("--exponents", default=None)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("eval", help="evaluate a form on function files")
    p.add_argument("file")
    p.add_argument("functions", nargs="+")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("roundtrip", help="canonical serialization check")
    p.add_argument("file")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_roundtrip)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        sys.stderr.write(f"config error: {e}\n")
        return EXIT_USAGE
    except SchemaError as e:
        sys.stderr.write(f"schema error: {e}\n")
        return EXIT_USAGE
    except FileNotFoundError as e:
        sys.stderr.write(f"{e}\n")
        return EXIT_USAGE
    except TheoremContradiction as e:
        sys.stderr.write(f"theorem contradiction: {e}\n")
        return EXIT_CONTRADICTION


if __name__ == "__main__":
    sys.exit(main())
