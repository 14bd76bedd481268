"""Command line entry point: ``fednorm run | convergence-check | metrics``.

Exit codes are 0 on success, 1 when a convergence check completes but
fails, 2 for configuration or usage errors and 3 for runtime errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from typing import Optional, Sequence

from .convergence import check_recurrence, decaying_schedule, make_quadratic_problem, run_fed_sgd
from .errors import ConfigurationError, UsageError
from .experiment import parse_config, run_experiment
from .metrics import kappa, rho_metric

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

# flag dest -> config key
_RUN_FLAGS = {
    "scenario": "scenario",
    "alpha": "alpha",
    "sigma": "sigma",
    "mu": "mu",
    "mask_fraction": "mask_fraction",
    "participants": "participants",
    "rounds": "rounds",
    "epochs": "epochs",
    "re_epochs": "re_epochs",
    "eta": "eta",
    "lam": "lambda",
    "p": "p",
    "algo": "algo",
    "prox_mu": "prox_mu",
    "penalty": "penalty",
    "count_tables": "count_tables",
    "seed": "seed",
    "out": "out",
    "workers": "workers",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _sigma(text: str):
    return [float(s) for s in text.split(",")] if "," in text else float(text)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fednorm", description="Feature-norm regularized federated learning laboratory.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment matrix")
    run.add_argument("--config", default=None, help="JSON config file")
    run.add_argument("--scenario")
    run.add_argument("--alpha", type=float)
    run.add_argument("--sigma", type=_sigma, help="scalar or comma-separated per-participant list")
    run.add_argument("--mu", type=float)
    run.add_argument("--mask-fraction", type=float)
    run.add_argument("--participants", type=int)
    run.add_argument("--rounds", type=int)
    run.add_argument("--epochs", type=int)
    run.add_argument("--re-epochs", type=int)
    run.add_argument("--eta", type=float)
    run.add_argument("--lambda", dest="lam", type=float)
    run.add_argument("--p", type=float)
    run.add_argument("--algo", help="fnr, fedavg or fedprox; comma-separate to run several")
    run.add_argument("--prox-mu", type=float)
    run.add_argument("--penalty", choices=["signed", "squared"])
    run.add_argument("--count-tables", help="true or false")
    run.add_argument("--seed", help="N or N,N,...")
    run.add_argument("--out")
    run.add_argument("--workers", type=int)

    conv = sub.add_parser("convergence-check", help="check the distance recurrence on a quadratic federation")
    conv.add_argument("--n", type=int, default=5)
    conv.add_argument("--dim", type=int, default=10)
    conv.add_argument("--heterogeneity", type=float, default=1.0)
    conv.add_argument("--eta0", type=float, default=0.1)
    conv.add_argument("--decay", type=float, default=50)
    conv.add_argument("--re-steps", type=int, default=5)
    conv.add_argument("--steps", type=int, default=2000)
    conv.add_argument("--reps", type=int, default=100)
    conv.add_argument("--slack", type=float, default=1.0)
    conv.add_argument("--seed", type=int, default=0)
    conv.add_argument("--max-violation-rate", type=float, default=0.05)

    met = sub.add_parser("metrics", help="accuracy per unit time and per MB")
    met.add_argument("--accuracy", type=float, required=True)
    met.add_argument("--time", type=float, required=True, help="seconds")
    met.add_argument("--traffic", type=float, required=True, help="MB")
    return parser


def _cmd_run(args) -> int:
    overrides = {key: getattr(args, dest) for dest, key in _RUN_FLAGS.items()}
    spec = parse_config(args.config, overrides)
    return run_experiment(spec)


def _cmd_convergence(args) -> int:
    if args.steps % args.re_steps:
        raise UsageError(f"--steps ({args.steps}) must be a multiple of --re-steps ({args.re_steps})")
    problem = make_quadratic_problem(args.n, args.dim, args.heterogeneity, args.seed)
    series = run_fed_sgd(
        problem,
        decaying_schedule(args.eta0, args.decay),
        args.re_steps,
        args.steps // args.re_steps,
        args.reps,
        args.seed,
    )
    report = check_recurrence(series, problem, slack=args.slack)
    print(json.dumps(report.to_json()))
    ok = (
        report.violations <= args.max_violation_rate * report.total
        and all(report.conditions.values())
    )
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _cmd_metrics(args) -> int:
    out = {"kappa": kappa(args.accuracy, args.time), "rho": rho_metric(args.accuracy, args.traffic)}
    print(json.dumps(out))
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"run": _cmd_run, "convergence-check": _cmd_convergence, "metrics": _cmd_metrics}
    try:
        return handlers[args.command](args)
    except (ConfigurationError, UsageError) as exc:
        print(f"fednorm: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"fednorm: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
