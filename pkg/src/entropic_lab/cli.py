"""Command-line entry point: ``entropic-lab``.

Exit codes: 0 success, 1 configuration or usage error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from .fitting import AXES, FitError, fit_exponent
from .model import ConfigError, InteractionU, InterfaceModel, PotentialV

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; we reserve 2 for numerics."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def load_config(path) -> dict:
    if path is None:
        raise ConfigError("this command needs --config PATH")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    text = p.read_text()
    try:
        doc = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot parse {p}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{p} must hold a key-value document")
    return doc


def _out_dir(args) -> Path:
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_run(args) -> int:
    from .harness import Record, versions, write_csv, write_series_csv
    from .ising import IsingParams, run_ising_chain
    from .mcmc import run_chain

    doc = load_config(args.config)
    kind = doc.get("model", "interface")
    chain = doc.get("chain", {}) or {}
    sweeps = int(chain.get("sweeps", 2000))
    burn_in = int(chain.get("burn_in", sweeps // 5))
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    run_id = str(doc.get("run_id", "run"))
    t0 = time.time()
    if kind == "interface":
        model = InterfaceModel.from_dict(doc)
        obs = tuple(chain.get("observables", ("mean_height", "pinned_fraction")))
        res = run_chain(
            model, sweeps, burn_in, int(chain.get("thinning", 1)), obs, seed=seed,
            kernel=chain.get("kernel", "heat_bath"), order=chain.get("order", "checkerboard"),
            proposal_width=float(chain.get("proposal_width", 1.0)),
        )
        manifest = dict(res.manifest)
        manifest["config_hash"] = model.config_hash()
    elif kind == "ising":
        params = IsingParams.from_dict(doc)
        obs = tuple(chain.get("observables", ("lambda_minus", "c_minus", "ratio", "contour_length", "magnetization")))
        th = chain.get("thinning")
        res = run_ising_chain(params, sweeps, burn_in, obs, seed=seed, thinning=None if th is None else int(th))
        manifest = dict(res.manifest)
    else:
        raise ConfigError(f"unknown model {kind!r} (interface or ising)")
    param_name = "lambda"
    value = float(doc.get("lambda", 0.0))
    records = [
        Record(run_id, kind, param_name, value, name, s.mean, s.stderr, s.tau_int, s.n)
        for name, s in res.items()
    ]
    out = _out_dir(args)
    write_csv(out / "results.csv", records)
    write_series_csv(out / "series.csv", dict(res))
    manifest.update({"seed": seed, "run_id": run_id, "versions": versions(), "wall_time_s": time.time() - t0})
    _dump(out / "manifest.json", manifest)
    for r in records:
        print(f"{r.observable}: {r.mean:.6g} +- {r.stderr:.2g} (tau_int {r.tau_int:.3g}, n {r.n_samples})")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .harness import SweepPlan, run_sweep, sweep_lambda_interface, sweep_lambda_ising, sweep_upsilon

    doc = load_config(args.config)
    if args.seed is not None:
        doc["seed"] = args.seed
    plan = SweepPlan.from_dict(doc)
    out = _out_dir(args)
    if plan.model == "interface" and plan.param == "lambda":
        res = sweep_lambda_interface(plan, out, args.threads)
    elif plan.model == "interface":
        res, _ = sweep_upsilon(plan, out, args.threads)
    elif plan.model == "ising":
        res = sweep_lambda_ising(plan, out, args.threads)
    else:
        res = run_sweep(plan, out, args.threads)
        x, y, _ = res.table("mean_height")
        if x.size >= 4:
            res.fit = fit_exponent(x, y, None, ("log", "log"))
        res.write(out)
    print(f"{len(res.points)} grid points -> {out / 'results.csv'}")
    if res.fit is not None:
        f = res.fit
        print(f"exponent {f.exponent:.6g} (68% CI [{f.ci_low:.6g}, {f.ci_high:.6g}]), amplitude {f.amplitude:.6g}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .ising import IsingParams
    from .oracles import ising_exact_enumeration, quadrature_expectation, solve_height_equation, transfer_mean_height

    v = PotentialV(args.v, args.p) if hasattr(args, "v") else None
    if args.oracle == "solve-h":
        h = solve_height_equation(v, args.lam)
        print(f"H={h:.12g}")
    elif args.oracle == "transfer":
        u = InteractionU(args.u, args.delta)
        r = transfer_mean_height(u, v, args.lam, args.upsilon, args.chain_length)
        print(f"mean_height={r.mean_height:.12g} error={r.error:.3g} pinned={r.pinned_probability:.12g}")
    elif args.oracle == "quadrature":
        model = InterfaceModel.from_dict(load_config(args.config))
        r = quadrature_expectation(model, args.observable)
        print(f"{args.observable}={r.value:.12g} error={r.error:.3g}")
    elif args.oracle == "enumerate":
        p = IsingParams(beta=args.beta, lam=args.lam, h=args.h, N=args.N, bc=args.bc)
        r = ising_exact_enumeration(p)
        for k, val in sorted(r.expectations.items()):
            print(f"{k}={val:.12g}")
    return EXIT_OK


def cmd_fit(args) -> int:
    from .harness import read_csv

    recs = []
    for path in args.csv:
        recs.extend(read_csv(Path(path)))
    sel = [r for r in recs if r.observable == args.observable]
    if not sel:
        raise ConfigError(f"no rows for observable {args.observable!r}")
    x = np.array([r.param_value for r in sel])
    y = np.array([r.mean for r in sel])
    e = np.array([r.stderr for r in sel])
    axes = tuple(args.axes.split(","))
    if len(axes) != 2:
        raise ConfigError("--axes takes two comma-separated transforms")
    fit = fit_exponent(x, y, e if np.all(e > 0) else None, axes, seed=args.fit_seed)
    print(json.dumps(fit.to_dict(), sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    from .acceptance import CHECKS

    wanted = sorted(CHECKS) if args.criteria == "all" else [int(c) for c in args.criteria.split(",")]
    unknown = [c for c in wanted if c not in CHECKS]
    if unknown:
        raise ConfigError(f"unknown criteria {unknown}")
    out = _out_dir(args)
    report = {}
    for c in wanted:
        kwargs = {}
        if c in (4, 6):
            kwargs = {"out_dir": out / f"criterion{c}", "threads": args.threads}
        res = CHECKS[c](**kwargs)
        print(res.line(), f"({res.seconds:.0f}s)", flush=True)
        report[c] = {"passed": res.passed, "summary": res.summary, "seconds": res.seconds, "data": res.data}
    _dump(out / "report.json", report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, metavar="U64", default=argparse.SUPPRESS)
    common.add_argument("--threads", type=int, metavar="INT", default=argparse.SUPPRESS)
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS)

    p = _Parser(prog="entropic-lab", description="Interface and Ising wetting simulations with exact oracles.",
                parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("run", parents=[common], help="run one chain from a config file")
    sub.add_parser("sweep", parents=[common], help="run a sweep plan")

    po = sub.add_parser("oracle", parents=[common], help="exact oracles")
    osub = po.add_subparsers(dest="oracle", required=True, parser_class=_Parser)
    sh = osub.add_parser("solve-h", parents=[common], help="solve lambda H^2 V(2H) = 1")
    tr = osub.add_parser("transfer", parents=[common], help="d=1 transfer-operator mean height")
    for q in (sh, tr):
        q.add_argument("--v", choices=("linear", "power"), default="linear")
        q.add_argument("--p", type=float, default=1.0)
        q.add_argument("--lambda", dest="lam", type=float, required=True)
    tr.add_argument("--u", choices=("quadratic", "perturbed"), default="quadratic")
    tr.add_argument("--delta", type=float, default=0.0)
    tr.add_argument("--upsilon", type=float, default=0.0)
    tr.add_argument("--chain-length", type=int, default=None)
    qd = osub.add_parser("quadrature", parents=[common], help="tiny-system quadrature")
    qd.add_argument("--observable", default="mean_height")
    en = osub.add_parser("enumerate", parents=[common], help="exhaustive Ising enumeration")
    en.add_argument("--beta", type=float, default=0.6)
    en.add_argument("--lambda", dest="lam", type=float, default=0.0)
    en.add_argument("--h", type=float, default=1.0)
    en.add_argument("--N", type=int, default=4)
    en.add_argument("--bc", choices=("plus", "minus", "pm"), default="pm")

    pf = sub.add_parser("fit", parents=[common], help="refit stored CSV results")
    pf.add_argument("csv", nargs="+")
    pf.add_argument("--observable", default="mean_height")
    pf.add_argument("--axes", default="log,log", help=f"x,y transforms from {', '.join(AXES)}")
    pf.add_argument("--fit-seed", type=int, default=20_231_117)

    pr = sub.add_parser("report", parents=[common], help="run the acceptance checks")
    pr.add_argument("--criteria", default="all", help="comma-separated numbers or 'all'")
    return p


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "oracle": cmd_oracle, "fit": cmd_fit, "report": cmd_report}


def main(argv=None) -> int:
    from .oracles import OracleError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    for name in ("config", "seed", "threads", "out"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OracleError, FitError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
