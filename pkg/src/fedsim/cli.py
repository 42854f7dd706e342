"""Command-line front end.

Verbs: ``run`` (execute one experiment), ``sweep`` (vary gamma or H),
``check`` (validate a config and exit), ``bounds`` (evaluate step-size
conditions and guaranteed gradient-norm bounds for the configured setup).
Exit codes: 0 success, 1 config error, 2 divergence, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from . import diagnostics, harness
from .errors import ConfigError, DivergenceError
from .models import loss, loss_lower_bound


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage, which collides with the
    # divergence code; funnel usage problems into the config-error path
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedsim", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="execute one experiment")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None,
                       help="override the config's master seed")
    p_run.add_argument("--out", default=None, help="override the output path")

    p_sweep = sub.add_parser("sweep", help="run once per value of one axis")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True, choices=("gamma", "H"))
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated axis values")
    p_sweep.add_argument("--out-dir", default=None)

    p_check = sub.add_parser("check", help="validate a config file")
    p_check.add_argument("--config", required=True)

    p_bounds = sub.add_parser(
        "bounds", help="evaluate step-size conditions and gradient bounds"
    )
    p_bounds.add_argument("--config", required=True)
    p_bounds.add_argument("--L", type=float, required=True, dest="l_smooth",
                          help="measured smoothness constant")
    p_bounds.add_argument("--sigma-sq", type=float, required=True,
                          help="measured per-sample gradient variance bound")
    return parser


def _load(path):
    cfg = harness.load_config(path)
    return cfg


def _cmd_run(args) -> int:
    cfg = _load(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed: must be >= 0")
        cfg = dataclasses.replace(cfg, seed=args.seed)
    try:
        metrics = harness.run_experiment(cfg, out_path=args.out)
    except DivergenceError as err:
        print(f"diverged: {err} (round {err.round_index})", file=sys.stderr)
        return 2
    print(f"wrote {len(metrics.records)} rounds to {metrics.path}")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _load(args.config)
    raw_values = [v for v in args.values.split(",") if v.strip()]
    if not raw_values:
        raise ConfigError("--values: need at least one value")
    if args.axis == "gamma":
        values = [float(v) for v in raw_values]
    else:
        values = [int(v) for v in raw_values]
    results = harness.sweep(cfg, args.axis, values, out_dir=args.out_dir)
    failed = 0
    for res in results:
        if res.error is None:
            print(f"{args.axis}={res.value:g}: wrote {res.metrics.path}")
        else:
            failed += 1
            print(f"{args.axis}={res.value:g}: FAILED ({res.error})",
                  file=sys.stderr)
    if failed == len(results):
        return 2
    return 0


def _cmd_check(args) -> int:
    cfg = _load(args.config)
    print(f"ok: {cfg.algorithm} on {cfg.model_kind}, K={cfg.clients}, "
          f"M={cfg.active}, T={cfg.rounds}")
    return 0


def _cmd_bounds(args) -> int:
    cfg = _load(args.config)
    if args.l_smooth <= 0:
        raise ConfigError("--L: must be > 0")
    if args.sigma_sq < 0:
        raise ConfigError("--sigma-sq: must be >= 0")
    model = cfg.build_model()
    dataset = cfg.build_dataset()
    w0 = harness.initial_model(cfg)
    f0 = loss(model, w0, dataset.pooled)
    f_gap = f0 - loss_lower_bound(model, dataset)
    if f_gap <= 0:
        raise ConfigError("initial objective gap is not positive; "
                          "bounds are undefined at the optimum")
    print(f"f_gap = {f_gap:.6g} (initial loss {f0:.6g})")
    avg_check = diagnostics.stepsize_check_fedavg(
        cfg.gamma, args.l_smooth, cfg.local_steps, cfg.eta
    )
    print(
        f"fedavg stepsize: gamma={cfg.gamma:g} threshold={avg_check.threshold:.6g} "
        f"({'ok' if avg_check.ok else 'too large'}, binding {avg_check.binding})"
    )
    avg_bound = diagnostics.fedavg_gradient_bound(
        args.l_smooth, cfg.clients, cfg.active, cfg.rounds,
        cfg.local_steps, f_gap, args.sigma_sq,
    )
    print(f"fedavg min-grad-sq bound (eta=1, constant gamma): {avg_bound:.6g}")
    mom_check = diagnostics.stepsize_check_fedmom(
        cfg.gamma, args.l_smooth, cfg.local_steps, cfg.eta, cfg.beta,
        cfg.clients, cfg.active, args.sigma_sq, cfg.rounds, f_gap,
    )
    print(
        f"fedmom stepsize: gamma={cfg.gamma:g} threshold={mom_check.threshold:.6g} "
        f"({'ok' if mom_check.ok else 'too large'}, "
        f"C={mom_check.noise_constant:.6g})"
    )
    mom_bound = diagnostics.fedmom_gradient_bound(
        args.l_smooth, cfg.clients, cfg.active, cfg.rounds,
        cfg.local_steps, cfg.eta, cfg.beta, f_gap, args.sigma_sq,
    )
    print(f"fedmom min-grad-sq bound: {mom_bound:.6g}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "sweep": _cmd_sweep,
    "check": _cmd_check,
    "bounds": _cmd_bounds,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.verb](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
