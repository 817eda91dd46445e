"""Command line entry point.

Subcommands: ``check``, ``simulate``, ``frozen``, ``skeleton``, ``rate``,
``experiment``.  Configuration comes from an optional TOML file plus flag
overrides (flags win); the effective plan is embedded in every record.
Progress and errors go to stderr, data to files and stdout.

Exit codes: 0 success; 2 usage/configuration error; 3 structural-condition
violation without ``--allow-unstable``; 4 runtime failure (blow-up,
infeasible target); 5 protocol assertion flags raised.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

try:
    import tomllib
except ImportError:          # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import __version__
from ._kernels import BACKEND
from .basis import SpectralBasis
from .experiments import ExperimentPlan, run_experiment
from .frozen import AveragedDrift, mixing_diagnostic, simulate_frozen
from .integrator import BlowUpError, TimeGrid, simulate_pair
from .model import ScaleParams, check_conditions, preset
from .ratefn import EndpointTarget, InfeasibleModeError, RateProblem, lq_oracle, minimize_rate
from .records import FitRow, RunRecord, StatRow, persist
from .skeleton import solve_skeleton

USAGE_ERROR, CONDITION_ERROR, RUNTIME_ERROR, PROTOCOL_ERROR = 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, message, code, category):
        super().__init__(message)
        self.code = code
        self.category = category


def _err(category, message):
    return CliError(message, {"usage": USAGE_ERROR, "condition": CONDITION_ERROR,
                              "runtime": RUNTIME_ERROR,
                              "protocol": PROTOCOL_ERROR}[category], category)


def _progress(msg):
    print(msg, file=sys.stderr)


def _default_outdir():
    return Path(os.environ.get("SFBURGERS_OUTDIR", "runs"))


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise _err("usage", f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise _err("usage", f"config parse error in {path}: {exc}")


def _guard_conditions(coeffs, noise, allow_unstable, seed):
    report = check_conditions(coeffs, noise, n_samples=200, seed=seed)
    if not report.a3_holds and not allow_unstable:
        raise _err("condition",
                   "stability condition fails "
                   f"(margins {report.margins}); pass --allow-unstable to run anyway")
    for v in report.violations:
        _progress(f"warning: declared-constant violation: {v}")
    return report


def _add_common(p):
    p.add_argument("--preset", default="linear_ou")
    p.add_argument("--n-modes", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=None,
                   help="output directory (default $SFBURGERS_OUTDIR or ./runs)")
    p.add_argument("--allow-unstable", action="store_true",
                   help="run even when the stability condition fails")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="sfburgers",
        description="Slow-fast stochastic Burgers laboratory")
    ap.add_argument("--version", action="version",
                    version=f"%(prog)s {__version__} (kernels: {BACKEND})")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="evaluate the structural conditions")
    _add_common(p)
    p.add_argument("--samples", type=int, default=1000)

    p = sub.add_parser("simulate", help="sample one coupled trajectory")
    _add_common(p)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--delta-exponent", type=float, default=2.0)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=2048)
    p.add_argument("--x-mode", type=int, default=1)
    p.add_argument("--x-amplitude", type=float, default=0.5)

    p = sub.add_parser("frozen", help="sample the frozen fast equation")
    _add_common(p)
    p.add_argument("--horizon", type=float, default=50.0)
    p.add_argument("--dt", type=float, default=2e-3)
    p.add_argument("--x-mode", type=int, default=1)
    p.add_argument("--x-amplitude", type=float, default=1.0)

    p = sub.add_parser("skeleton", help="solve the averaged/controlled equation")
    _add_common(p)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--steps", type=int, default=2048)
    p.add_argument("--x-mode", type=int, default=1)
    p.add_argument("--x-amplitude", type=float, default=0.5)

    p = sub.add_parser("rate", help="minimize the control energy to a target")
    _add_common(p)
    p.set_defaults(preset="decoupled_small_noise", n_modes=1)
    p.add_argument("--endpoint", type=float, nargs="+", required=True,
                   help="target endpoint coefficients")
    p.add_argument("--radius", type=float, default=0.0)
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--knots", type=int, default=32)
    p.add_argument("--ctrl-modes", type=int, default=8)

    p = sub.add_parser("experiment", help="run a Monte Carlo protocol")
    _add_common(p)
    # for this subcommand the common flags are overrides: only values the
    # user actually passed may shadow the config file
    p.set_defaults(preset=None, n_modes=None, seed=None)
    p.add_argument("--protocol", default=None,
                   help="averaging | khasminskii_scaling | auxiliary_error | "
                        "controlled_convergence | ldp_tail")
    p.add_argument("--config", type=Path, default=None,
                   help="TOML plan file; flags override its values")
    p.add_argument("--ensemble", type=int, default=None)
    p.add_argument("--epsilons", type=float, nargs="+", default=None)
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--threads", type=int, default=None)
    return ap


def _outdir(args):
    out = args.out if args.out is not None else _default_outdir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_check(args):
    coeffs, noise = preset(args.preset, args.n_modes)
    report = check_conditions(coeffs, noise, n_samples=args.samples,
                              seed=args.seed)
    print(f"model {args.preset} (N = {args.n_modes})")
    print(f"  dissipativity holds: {report.a3_holds}  margins: "
          f"gap={report.margins['eigenvalue_gap']:.6g} "
          f"stability={report.margins['stability_margin']:.6g}")
    print(f"  sampled Lipschitz witnesses: "
          + " ".join(f"{k}={v:.4g}" for k, v in report.a1_witness.items()))
    print(f"  sampled growth witness: {report.a2_witness:.6g}")
    print("  scale requirement: delta(eps) = eps^p with p > 1 (checked per run)")
    if report.violations:
        for v in report.violations:
            print(f"  VIOLATION: {v}")
        raise _err("condition", "declared constants violated")
    print("  all declared constants consistent")
    return 0


def cmd_simulate(args):
    coeffs, noise = preset(args.preset, args.n_modes)
    _guard_conditions(coeffs, noise, args.allow_unstable, args.seed)
    basis = SpectralBasis(args.n_modes)
    scales = ScaleParams(args.epsilon, args.delta_exponent)
    grid = TimeGrid.build(args.horizon, args.steps, scales)
    x0 = args.x_amplitude * basis.unit_mode(args.x_mode)
    y0 = basis.zero()
    _progress(f"simulating: eps={args.epsilon} delta={scales.delta:.4g} "
              f"steps={args.steps} substeps={grid.n_substeps}")
    tp = simulate_pair(x0, y0, coeffs, noise, scales, grid, seed=args.seed)
    out = _outdir(args) / f"trajectory-{args.preset}-seed{args.seed}.npz"
    np.savez(out, times=tp.times, X=tp.X, Y=tp.Y)
    sup_x = float(np.sqrt(tp.abs_x_sq).max())
    print(f"sup_t |X_t| = {sup_x:.6g}")
    print(f"int ||X||^2 dt = {float(tp.norm_x_sq[:-1].sum() * grid.dt):.6g}")
    print(f"path written to {out}")
    return 0


def cmd_frozen(args):
    coeffs, noise = preset(args.preset, args.n_modes)
    _guard_conditions(coeffs, noise, args.allow_unstable, args.seed)
    basis = SpectralBasis(args.n_modes)
    x = args.x_amplitude * basis.unit_mode(args.x_mode)
    n_steps = int(round(args.horizon / args.dt))
    run = simulate_frozen(x, basis.zero(), coeffs, noise, args.dt, n_steps,
                          seed=args.seed)
    mean, mean_se, var, var_se = run.stationary_moments()
    print(f"frozen run: {n_steps} steps of {args.dt}, "
          f"burn-in {run.burn_in_steps} steps")
    for k in range(min(4, args.n_modes)):
        print(f"  mode {k + 1}: mean {mean[k]:+.5f} (se {mean_se[k]:.5f})  "
              f"var {var[k]:.6f} (se {var_se[k]:.6f})")
    # diagnostics go out in the experiment record format
    rep = mixing_diagnostic(x, basis.zero(), 0.5 * basis.unit_mode(1) + x,
                            coeffs, noise, dt=args.dt,
                            n_steps=min(n_steps, 2000),
                            seeds=[args.seed, args.seed + 1], basis=basis)
    record = RunRecord(
        protocol="frozen_diagnostic",
        plan={"preset": args.preset, "n_modes": args.n_modes,
              "horizon": args.horizon, "dt": args.dt, "seed": args.seed,
              "x_mode": args.x_mode, "x_amplitude": args.x_amplitude},
        environment={"package": "slowfast-burgers", "version": __version__,
                     "backend": BACKEND, "numpy": np.__version__},
        stats=[StatRow(1.0, 1.0, f"mean_mode_{k + 1}", float(mean[k]),
                       float(mean_se[k]), n_steps - run.burn_in_steps)
               for k in range(min(8, args.n_modes))]
        + [StatRow(1.0, 1.0, f"var_mode_{k + 1}", float(var[k]),
                   float(var_se[k]), n_steps - run.burn_in_steps)
           for k in range(min(8, args.n_modes))],
        fits=([] if rep.eta_hat is None else
              [FitRow("mixing_rate", rep.eta_hat,
                      rep.eta_hat - 2 * rep.eta_stderr,
                      rep.eta_hat + 2 * rep.eta_stderr)]),
        flags=["mixing rate fit failed"] if rep.failure else [],
    )
    path = persist(record, _outdir(args) / f"frozen-{record.plan_hash}.run")
    if rep.eta_hat is not None:
        print(f"  fitted mixing rate {rep.eta_hat:.4f} "
              f"(x-sensitivity {rep.x_sensitivity_ratio:.4g})")
    print(f"diagnostic record written to {path}")
    return 0


def cmd_skeleton(args):
    coeffs, noise = preset(args.preset, args.n_modes)
    _guard_conditions(coeffs, noise, args.allow_unstable, args.seed)
    basis = SpectralBasis(args.n_modes)
    fbar = AveragedDrift(coeffs, noise, base_seed=args.seed, basis=basis)
    grid = TimeGrid(args.horizon, args.steps)
    x0 = args.x_amplitude * basis.unit_mode(args.x_mode)
    path = solve_skeleton(x0, None, coeffs, noise, fbar, grid, basis)
    out = _outdir(args) / f"skeleton-{args.preset}.npz"
    np.savez(out, times=path.times, X=path.X)
    print(f"sup_t |X|^2 = {path.sup_abs_sq():.6g}")
    print(f"int ||X||^2 dt = {path.int_norm_sq():.6g}")
    print(f"path written to {out}")
    return 0


def cmd_rate(args):
    coeffs, noise = preset(args.preset, args.n_modes)
    basis = SpectralBasis(args.n_modes)
    z = basis.field(np.asarray(args.endpoint, dtype=np.float64))
    fbar = AveragedDrift(coeffs, noise, base_seed=args.seed, basis=basis)
    problem = RateProblem(EndpointTarget(z, args.radius), args.horizon,
                          n_time_knots=args.knots, n_modes_ctrl=args.ctrl_modes)
    try:
        result = minimize_rate(problem, basis.zero(), coeffs, noise, fbar,
                               seed=args.seed, basis=basis)
    except InfeasibleModeError as exc:
        raise _err("runtime", str(exc))
    print(result.summary())
    if coeffs.name == "decoupled_small_noise" and args.radius == 0.0:
        try:
            i_exact, _ = lq_oracle(basis.zero(), z, args.horizon, coeffs,
                                   noise, basis=basis)
            rel = abs(result.value - i_exact) / max(i_exact, 1e-300)
            print(f"quadratic oracle I = {i_exact:.6g} "
                  f"(relative gap {rel:.2e})")
        except InfeasibleModeError:
            pass
    if not result.converged:
        raise _err("runtime", f"no start converged; residual {result.residual:.3g}")
    return 0


_PLAN_KEYS = {f for f in ExperimentPlan.__dataclass_fields__}


def cmd_experiment(args):
    cfg = _load_config(args.config)
    unknown = set(cfg) - _PLAN_KEYS
    if unknown:
        raise _err("usage", f"unknown config keys: {sorted(unknown)} "
                            f"(valid: {sorted(_PLAN_KEYS)})")
    overrides = {"protocol": args.protocol, "preset": args.preset,
                 "n_modes": args.n_modes, "master_seed": args.seed,
                 "ensemble": args.ensemble, "horizon": args.horizon,
                 "n_steps": args.steps, "threads": args.threads}
    if args.epsilons is not None:
        overrides["epsilons"] = tuple(args.epsilons)
    for key, val in overrides.items():
        if val is not None:
            cfg[key] = val
    cfg.setdefault("protocol", "averaging")
    try:
        plan = ExperimentPlan(**{k: (tuple(v) if isinstance(v, list) else v)
                                 for k, v in cfg.items()})
    except (TypeError, ValueError) as exc:
        raise _err("usage", f"invalid plan: {exc}")

    coeffs, noise = preset(plan.preset, plan.n_modes)
    _guard_conditions(coeffs, noise, args.allow_unstable, plan.master_seed)
    _progress(f"protocol {plan.protocol} on {plan.preset}: "
              f"eps schedule {plan.epsilons}, ensemble {plan.ensemble}")
    try:
        record = run_experiment(plan)
    except BlowUpError as exc:
        raise _err("runtime", f"blow-up: {exc}")
    out = _outdir(args)
    path = persist(record, out / f"{plan.protocol}-{record.plan_hash}.run")
    _print_record_summary(record)
    print(f"record written to {path}")
    if record.flags:
        raise _err("protocol",
                   "protocol assertions failed: " + "; ".join(record.flags))
    return 0


def _print_record_summary(record):
    print(f"protocol {record.protocol} [{record.plan_hash}] "
          f"backend={record.environment['backend']}")
    by_stat = {}
    for row in record.stats:
        by_stat.setdefault(row.statistic, []).append(row)
    for name, rows in by_stat.items():
        parts = [f"eps={r.epsilon:g}: {r.mean:.4g}+-{r.stderr:.2g}" for r in rows]
        print(f"  {name}: " + "  ".join(parts))
    for f in record.fits:
        print(f"  fit {f.name} = {f.estimate:.4g} "
              f"[{f.ci_low:.4g}, {f.ci_high:.4g}]")
    for note in record.notes:
        print(f"  note: {note}")
    print("  flags: " + ("none" if not record.flags else "; ".join(record.flags)))


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    handlers = {"check": cmd_check, "simulate": cmd_simulate,
                "frozen": cmd_frozen, "skeleton": cmd_skeleton,
                "rate": cmd_rate, "experiment": cmd_experiment}
    try:
        return handlers[args.command](args)
    except CliError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return exc.code
    except BlowUpError as exc:
        print(f"error:runtime: {exc}", file=sys.stderr)
        return RUNTIME_ERROR
    except ValueError as exc:
        print(f"error:usage: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
