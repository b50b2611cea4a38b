"""Command line: ``attn-newton gen|run|verify|bench``.

Every command reads an optional ``--config`` JSON file whose keys mirror the
long flag names (``tmax``, ``sketch``, ...); flags given on the command line
win over the file.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from threadpoolctl import threadpool_limits

from . import bench as bench_mod
from .forward import ParamState
from .io import InstanceFileError, load_instance, save_instance, write_json, write_trace
from .oracles import plant as make_plant
from .oracles import random_instance, random_state
from .seeds import derive_seed, rng_for
from .sketch import SketchConfig
from .solver import SolverConfig, train
from .verify import SUITES, run_battery

THREADS_ENV = "ATTN_NEWTON_THREADS"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CliError(Exception):
    """Structured failure reported as JSON on stderr."""

    def __init__(self, kind: str, message: str, **details):
        super().__init__(message)
        self.kind = kind
        self.details = details

    def payload(self) -> dict:
        return {"error": self.kind, "message": str(self), **self.details}


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with default values for any flag")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=_nonneg_int, help="top-level 64-bit seed (default 0)")


def _add_instance_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n", type=_positive_int, help="sequence length (default 16)")
    p.add_argument("--d", type=_positive_int, help="feature dimension (default 3)")
    p.add_argument("--R", type=_positive_float, help="norm bound (default 1)")
    p.add_argument("--planted", action="store_true", default=None, help="build B from a hidden (X*, Y*)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attn-newton", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="mode", required=True)

    gen = sub.add_parser("gen", help="write a random instance as JSON")
    _add_common(gen)
    _add_instance_args(gen)

    run = sub.add_parser("run", help="train on an instance; writes trace.csv and summary.json")
    _add_common(run)
    _add_instance_args(run)
    run.add_argument("--instance", type=Path, help="instance JSON (otherwise one is generated)")
    run.add_argument("--sketch", choices=("srht", "sparse", "exact"), help="Hessian mode (default exact)")
    run.add_argument("--m", type=_positive_int, help="sketch rows (default 1024)")
    run.add_argument("--s", type=_positive_int, help="TensorSparse block count (default 4)")
    run.add_argument("--eps", type=_positive_float, help="gradient-norm tolerance (default 1e-8)")
    run.add_argument("--tmax", type=int, help="iteration cap (default 50)")
    run.add_argument("--rho", type=float, help="penalty multiplier (default 1)")
    run.add_argument("--damping", type=float, help="fixed damping added to the Hessian")
    run.add_argument("--init", choices=("zeros", "random", "plant"), help="starting point (default zeros)")
    run.add_argument("--timings", action="store_true", default=None, help="fill the per-phase timing columns")

    ver = sub.add_parser("verify", help="run the property battery; exit 1 on any failure")
    _add_common(ver)
    ver.add_argument("--suites", help=f"comma-separated subset of {','.join(SUITES)}; empty string runs nothing")
    ver.add_argument("--quick", action="store_true", default=None, help="smaller instance counts")
    ver.add_argument("--corrupt-gradient", action="store_true", default=None, help=argparse.SUPPRESS)

    ben = sub.add_parser("bench", help="timing sweep; writes bench.csv and bench_summary.json")
    _add_common(ben)
    ben.add_argument("--d", type=_positive_int, help="feature dimension (default 4)")
    ben.add_argument("--ns", help="comma-separated n values (default 256,...,8192)")
    ben.add_argument("--reps", type=_positive_int, help="timed repetitions per point (default 5)")
    ben.add_argument("--m", type=_positive_int, help="sketch rows (default 1024)")
    ben.add_argument("--sketch", choices=("srht", "sparse"), help="sketch family (default srht)")
    ben.add_argument("--s", type=_positive_int, help="TensorSparse block count (default 4)")
    ben.add_argument("--no-iterations", action="store_true", default=None, help="skip full-iteration timings")
    return parser


DEFAULTS = {
    "seed": 0,
    "out": Path("."),
    "n": 16,
    "d": 3,
    "R": 1.0,
    "planted": False,
    "sketch": "exact",
    "m": 1024,
    "s": 4,
    "eps": 1e-8,
    "tmax": 50,
    "rho": 1.0,
    "damping": None,
    "init": "zeros",
    "timings": False,
    "suites": ",".join(SUITES),
    "quick": False,
    "corrupt_gradient": False,
    "ns": None,
    "reps": 5,
    "no_iterations": False,
}
BENCH_DEFAULTS = {"d": 4, "sketch": "srht"}


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from ``--config`` and then from the defaults."""
    config = {}
    if args.config is not None:
        try:
            config = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError("config", f"cannot read config {args.config}: {exc}") from None
        if not isinstance(config, dict):
            raise CliError("config", "config file must hold a JSON object")
        config = {k.replace("-", "_"): v for k, v in config.items()}
    defaults = dict(DEFAULTS)
    if args.mode == "bench":
        defaults.update(BENCH_DEFAULTS)
    for key, value in vars(args).items():
        if value is None:
            if key in config:
                value = config[key]
            elif key in defaults:
                value = defaults[key]
        setattr(args, key, value)
    args.out = Path(args.out)
    if args.mode == "run":
        if int(args.tmax) < 1:
            raise CliError("config", f"tmax must be at least 1, got {args.tmax}")
        if args.instance is not None:
            args.instance = Path(args.instance)
    return args


def _generate(args):
    seed = int(args.seed)
    if args.planted:
        pl = make_plant(derive_seed(seed, "instance"), args.n, args.d, args.R)
        return pl.inst, pl.p_star
    inst = random_instance(rng_for(seed, "instance"), args.n, args.d, args.R)
    return inst, None


def cmd_gen(args) -> int:
    inst, plant = _generate(args)
    path = save_instance(args.out / "instance.json", inst, seed=int(args.seed), plant=plant)
    print(path)
    return EXIT_OK


def _solver_config(args) -> SolverConfig:
    sketch = None
    if args.sketch != "exact":
        sketch = SketchConfig(kind=args.sketch, m=args.m, s=args.s if args.sketch == "sparse" else 1, seed=derive_seed(int(args.seed), "sketch"))
    return SolverConfig(t_max=int(args.tmax), eps=float(args.eps), rho=float(args.rho), sketch=sketch, damping=args.damping)


def cmd_run(args) -> int:
    if args.instance is not None:
        if not args.instance.exists():
            raise CliError("instance", f"instance file {args.instance} does not exist")
        try:
            inst, plant, inst_seed = load_instance(args.instance)
        except InstanceFileError as exc:
            raise CliError("instance", str(exc)) from None
        explicit = {k: getattr(args, k) for k in ("n", "d") if args.config_or_flag.get(k)}
        for key, value in explicit.items():
            if int(value) != getattr(inst, key):
                raise CliError("mismatch", f"config {key}={value} but instance has {key}={getattr(inst, key)}", field=key)
    else:
        inst, plant = _generate(args)
        inst_seed = int(args.seed)
    try:
        cfg = _solver_config(args)
    except ValueError as exc:
        raise CliError("config", str(exc)) from None

    if args.init == "plant":
        if plant is None:
            raise CliError("config", "init=plant needs a planted instance")
        init = plant
    elif args.init == "random":
        init = random_state(rng_for(int(args.seed), "state"), inst.d, inst.R, 0.5)
    else:
        init = ParamState.zeros(inst.d)

    trace = train(inst, init, cfg, plant=plant)
    write_trace(args.out / "trace.csv", trace, timings=bool(args.timings))
    summary = {
        "final_loss": trace.final_loss,
        "final_grad_norm": trace.final_grad_norm,
        "iterations": trace.updates,
        "termination": trace.reason,
        "config": {
            "mode": cfg.mode,
            "t_max": cfg.t_max,
            "eps": cfg.eps,
            "rho": cfg.rho,
            "damping": cfg.damping,
            "m": cfg.sketch.m if cfg.sketch else None,
            "s": cfg.sketch.s if cfg.sketch else None,
            "init": args.init,
            "n": inst.n,
            "d": inst.d,
            "R": inst.R,
        },
        "seeds": {
            "top": int(args.seed),
            "instance": inst_seed,
            "sketch": cfg.sketch.seed if cfg.sketch else None,
        },
    }
    write_json(args.out / "summary.json", summary)
    print(json.dumps({"termination": trace.reason, "iterations": trace.updates, "final_loss": trace.final_loss}))
    return EXIT_OK if trace.reason in ("grad_tol", "dist_tol", "max_iter") else EXIT_FAIL


def cmd_verify(args) -> int:
    suites = [s.strip() for s in str(args.suites).split(",") if s.strip()]
    try:
        report = run_battery(suites, seed=int(args.seed), corrupt_gradient=bool(args.corrupt_gradient), quick=bool(args.quick))
    except ValueError as exc:
        raise CliError("config", str(exc)) from None
    write_json(args.out / "verify_report.json", report)
    for prop in report["properties"]:
        print(f"{'PASS' if prop['passed'] else 'FAIL'} {prop['suite']}.{prop['name']}")
    print(f"status: {report['status']}")
    return EXIT_FAIL if report["status"] == "fail" else EXIT_OK


def cmd_bench(args) -> int:
    ns = bench_mod.DEFAULT_NS if args.ns is None else tuple(int(x) for x in str(args.ns).split(",") if x.strip())
    rows = bench_mod.run_bench(
        ns=ns,
        d=int(args.d),
        reps=int(args.reps),
        m=int(args.m),
        seed=int(args.seed),
        kind=args.sketch,
        s=int(args.s),
        iterations=not args.no_iterations,
    )
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "bench.csv").write_text(bench_mod.bench_csv(rows))
    methods = sorted({r.method for r in rows})
    summary = {"d": int(args.d), "ns": list(ns), "exponents": {m: bench_mod.fit_exponent(rows, m) for m in methods}}
    write_json(args.out / "bench_summary.json", summary)
    sys.stdout.write(bench_mod.bench_csv(rows))
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "verify": cmd_verify, "bench": cmd_bench}


def _thread_limit() -> Optional[int]:
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise CliError("config", f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise CliError("config", f"{THREADS_ENV} must be positive")
    return value


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    given = {k for k, v in vars(args).items() if v is not None}
    try:
        file_keys = set()
        if args.config is not None and args.config.exists():
            try:
                file_keys = set(json.loads(args.config.read_text()))
            except json.JSONDecodeError:
                pass
        args = resolve(args)
        args.config_or_flag = {k: (k in given or k in file_keys) for k in ("n", "d")}
        limit = _thread_limit()
        if limit is None:
            return COMMANDS[args.mode](args)
        with threadpool_limits(limits=limit):
            return COMMANDS[args.mode](args)
    except CliError as exc:
        print(json.dumps(exc.payload()), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
