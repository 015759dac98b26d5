"""Command-line interface: fit, trajectory, simulate, and prox subcommands.

CSV in, CSV/JSON out.  Every run writes a manifest (the resolved
configuration plus seed and version) next to its outputs; rerunning from
the same flags or manifest reproduces the output files byte for byte.
Failures exit nonzero with a one-line JSON error on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from .glm import FAMILIES, GlmProblem, LikelihoodSpec, generate_working_example
from .hyperpriors import parse_prior
from .prox import ProxQuery, prox_cost, prox_grid_oracle, prox_vc_l1
from .sbl import VariationalState, credible_interval, fit_sbl
from .trajectory import TauGrid, lasso_baseline, run_trajectory, simulate_table
from .vista import MapGlmBundle, VistaConfig, vista_run

__all__ = ["main", "load_csv", "CliError"]


class CliError(Exception):
    """User-facing error carrying a machine-readable payload."""

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = context


def load_csv(path, response_column):
    """Read a header-ed numeric CSV into a design matrix and response.

    The response column is selected by name or integer index; remaining
    columns form the design in header order.  Returns (X, y, feature_names,
    response_name).
    """
    if not os.path.exists(path):
        raise CliError(f"data file not found: {path}", path=str(path))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CliError("empty data file", path=str(path)) from None
        rows = list(reader)
    if not rows:
        raise CliError("no data rows", path=str(path))

    if response_column in header:
        y_idx = header.index(response_column)
    else:
        try:
            y_idx = int(response_column)
        except ValueError:
            raise CliError(
                f"response column {response_column!r} not in header",
                header=header,
            ) from None
        if not 0 <= y_idx < len(header):
            raise CliError(f"response index {y_idx} out of range", n_columns=len(header))

    data = np.empty((len(rows), len(header)))
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise CliError(f"row {i} has {len(row)} cells, expected {len(header)}", row=i)
        for j, cell in enumerate(row):
            try:
                data[i, j] = float(cell)
            except ValueError:
                raise CliError(
                    f"non-numeric cell at row {i}, column {header[j]!r}: {cell!r}",
                    row=i,
                    column=header[j],
                ) from None
    if not np.all(np.isfinite(data)):
        i, j = map(int, np.argwhere(~np.isfinite(data))[0])
        raise CliError(f"non-finite value at row {i}, column {header[j]!r}", row=i)

    y = data[:, y_idx]
    X = np.delete(data, y_idx, axis=1)
    names = [h for k, h in enumerate(header) if k != y_idx]
    return X, y, names, header[y_idx]


def _build_problem(args):
    X, y, names, _ = load_csv(args.data, args.response)
    mask = np.ones(X.shape[1], dtype=bool)
    for col in args.unpenalized:
        if col in names:
            mask[names.index(col)] = False
        else:
            try:
                mask[int(col)] = False
            except (ValueError, IndexError):
                raise CliError(f"unknown unpenalized column {col!r}", columns=names) from None
    try:
        return GlmProblem(X, y, LikelihoodSpec(args.family), penalized_mask=mask,
                          feature_names=names)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _vista_config(args, tau):
    return VistaConfig(
        tau=tau,
        max_iter=args.max_iter,
        tol=args.tol,
        ablation=args.ablation,
        allow_unbounded_prior=args.allow_unbounded_prior,
    )


def _write_manifest(out_path, args, extra=None):
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "version": __version__,
        "command": args.subcommand,
        "config": config,
    }
    if extra:
        manifest.update(extra)
    path = out_path + ".manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def _dump_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_trace(path, trace):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "cost", "step", "sparsity"])
        for it, cost, step, sparsity in trace:
            w.writerow([it, repr(cost), repr(step), repr(sparsity)])


def _float(x):
    x = float(x)
    return x if math.isfinite(x) else None


def cmd_prox(args):
    try:
        q = ProxQuery(args.x0, args.lambda0, args.sx, args.slambda)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    r = prox_vc_l1(q)
    payload = {
        "x0": args.x0,
        "lambda0": args.lambda0,
        "s_x": args.sx,
        "s_lambda": args.slambda,
        "x_star": r.x_star,
        "lambda_star": r.lambda_star,
        "tie": r.tie,
        "cost": prox_cost(r.x_star, r.lambda_star, q),
    }
    if args.oracle:
        xg, lg, cg = prox_grid_oracle(q)
        payload["oracle"] = {
            "x": xg,
            "lambda": lg,
            "cost": cg,
            "closed_form_within_tolerance": bool(payload["cost"] <= cg + 1e-6),
        }
    if args.output:
        _dump_json(args.output, payload)
        _write_manifest(args.output, args)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _variational_parameters(problem, vs):
    lo, hi = credible_interval(vs)
    params = []
    for j, name in enumerate(problem.feature_names):
        params.append(
            {
                "name": name,
                "family": "laplace",
                "eta": _float(vs.eta_beta[j]),
                "nu": _float(vs.nu_beta[j]),
                "lambda": _float(vs.lam[j]),
                "ci_lo": _float(lo[j]),
                "ci_hi": _float(hi[j]),
            }
        )
    if problem.likelihood.n_aux:
        params.append(
            {
                "name": problem.likelihood.aux_name,
                "family": "lognormal",
                "eta": _float(vs.eta_theta[0]),
                "nu": _float(vs.nu_theta[0]),
                "lambda": None,
                "ci_lo": None,
                "ci_hi": None,
            }
        )
    return params


def cmd_fit(args):
    problem = _build_problem(args)
    prior = parse_prior(args.prior)
    cfg = _vista_config(args, args.tau)
    if args.mode == "sbl":
        vs, diag = fit_sbl(problem, prior, cfg, draw_seed=args.seed,
                           n_samples=args.mc_samples)
        payload = {
            "mode": "sbl",
            "tau": args.tau,
            "seed": args.seed,
            "cost": _float(diag.trace[-1][1]) if diag.trace else None,
            "iterations": diag.n_iter,
            "converged": diag.converged,
            "parameters": _variational_parameters(problem, vs),
        }
    else:
        bundle = MapGlmBundle(problem, prior, cfg.allow_unbounded_prior)
        state, diag = vista_run(bundle, cfg)
        beta, aux = bundle.extract(state)
        lam = np.ones(problem.p)
        lam[problem.penalized_mask] = state.lam
        params = [
            {
                "name": name,
                "family": "point",
                "eta": _float(beta[j]),
                "nu": None,
                "lambda": _float(lam[j]),
                "ci_lo": None,
                "ci_hi": None,
            }
            for j, name in enumerate(problem.feature_names)
        ]
        if problem.likelihood.n_aux:
            params.append(
                {
                    "name": problem.likelihood.aux_name,
                    "family": "point",
                    "eta": _float(aux),
                    "nu": None,
                    "lambda": None,
                    "ci_lo": None,
                    "ci_hi": None,
                }
            )
        payload = {
            "mode": "map",
            "tau": args.tau,
            "seed": args.seed,
            "cost": _float(state.cost),
            "iterations": diag.n_iter,
            "converged": diag.converged,
            "parameters": params,
        }
    _dump_json(args.output, payload)
    if args.trace:
        _write_trace(args.trace, diag.trace)
    _write_manifest(args.output, args)
    return 0


def _trajectory_rows(problem, records, level=0.95):
    rows = []
    for rec in records:
        common = {
            "tau": rec.tau,
            "mode": rec.mode,
            "sparsity_fraction": rec.sparsity_fraction,
            "iterations": rec.iterations,
            "converged": rec.converged,
        }
        if isinstance(rec.estimates, VariationalState):
            vs = rec.estimates
            lo, hi = credible_interval(vs, level)
            for j, name in enumerate(problem.feature_names):
                rows.append(
                    dict(
                        common,
                        param_name=name,
                        eta_or_estimate=vs.eta_beta[j],
                        nu=vs.nu_beta[j],
                        lam=vs.lam[j],
                        ci_lo=lo[j],
                        ci_hi=hi[j],
                    )
                )
            if problem.likelihood.n_aux:
                rows.append(
                    dict(
                        common,
                        param_name=problem.likelihood.aux_name,
                        eta_or_estimate=vs.eta_theta[0],
                        nu=vs.nu_theta[0],
                        lam=None,
                        ci_lo=None,
                        ci_hi=None,
                    )
                )
        else:
            beta = rec.estimates
            for j, name in enumerate(problem.feature_names):
                rows.append(
                    dict(
                        common,
                        param_name=name,
                        eta_or_estimate=beta[j],
                        nu=None,
                        lam=rec.lam[j],
                        ci_lo=None,
                        ci_hi=None,
                    )
                )
    return rows


def _write_trajectory_csv(path, rows):
    cols = [
        "tau", "mode", "param_name", "eta_or_estimate", "nu", "lambda",
        "ci_lo", "ci_hi", "sparsity_fraction", "iterations", "converged",
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow(
                [
                    repr(r["tau"]),
                    r["mode"],
                    r["param_name"],
                    repr(float(r["eta_or_estimate"])),
                    "" if r["nu"] is None else repr(float(r["nu"])),
                    "" if r["lam"] is None else repr(float(r["lam"])),
                    "" if r["ci_lo"] is None else repr(float(r["ci_lo"])),
                    "" if r["ci_hi"] is None else repr(float(r["ci_hi"])),
                    repr(float(r["sparsity_fraction"])),
                    r["iterations"],
                    r["converged"],
                ]
            )


def cmd_trajectory(args):
    problem = _build_problem(args)
    prior = parse_prior(args.prior)
    tau_max, tau_min, n_points = args.tau_grid
    grid = TauGrid(tau_max, tau_min, int(n_points))
    cfg = _vista_config(args, tau_max)
    records = run_trajectory(
        problem, prior, grid, args.mode, cfg, seed=args.seed,
        n_samples=args.mc_samples,
    )
    rows = _trajectory_rows(problem, records)
    _write_trajectory_csv(args.output, rows)
    _write_manifest(args.output, args)
    return 0


def cmd_simulate(args):
    prior = parse_prior(args.prior)
    cfg = VistaConfig(
        tau=args.tau, max_iter=args.max_iter, tol=args.tol, ablation=args.ablation,
        allow_unbounded_prior=args.allow_unbounded_prior,
    )
    try:
        active_values = [float(v) for v in args.active_values.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"bad --active-values {args.active_values!r}") from None
    if len(active_values) > args.p:
        raise CliError("more active values than coefficients; lower --active-values or raise --p")
    if args.emit_data:
        problem, beta_true = generate_working_example(
            n=args.n, p=args.p, active_values=active_values, seed=args.seed,
            family=args.family,
        )
        with open(args.emit_data, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["y"] + list(problem.feature_names))
            for i in range(problem.n):
                w.writerow([repr(float(problem.y[i]))] + [repr(float(v)) for v in problem.X[i]])
    metrics, per_rep = simulate_table(
        family=args.family,
        n_reps=args.reps,
        tau=args.tau,
        seed=args.seed,
        prior=prior,
        mode=args.mode,
        n=args.n,
        p=args.p,
        active_values=active_values,
        cfg=cfg,
        n_samples=args.mc_samples,
        threads=args.threads,
    )
    payload = {
        "family": args.family,
        "method": "vista-" + args.mode,
        "tau": args.tau,
        "n_reps": args.reps,
        "seed": args.seed,
        "beta_fnr": _float(metrics.fnr),
        "beta_fpr": _float(metrics.fpr),
        "beta_coverage": _float(metrics.beta_coverage),
        "sigma2_coverage": _float(metrics.sigma2_coverage),
        "replicates_converged": sum(1 for r in per_rep if r["converged"]),
    }
    _dump_json(args.output, payload)
    _write_manifest(args.output, args, extra={"wall_seconds": metrics.wall_seconds})
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _add_common(p, need_seed=False):
    p.add_argument("--prior", default="half-cauchy:1.0",
                   help="half-cauchy:a | half-gaussian:m,b | exponential:a | "
                        "power-inverse:a | uniform")
    p.add_argument("--seed", type=int, default=0 if not need_seed else None,
                   required=need_seed, help="RNG seed (required for sbl/simulate)")
    p.add_argument("--mc-samples", type=int, default=40)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--ablation", default="full",
                   choices=["full", "no-precond", "no-nesterov", "plain-gradient"])
    p.add_argument("--allow-unbounded-prior", action="store_true")


def _add_data(p):
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--response", required=True, help="response column name or index")
    p.add_argument("--family", required=True, choices=list(FAMILIES))
    p.add_argument("--unpenalized", default=[], nargs="*",
                   help="columns excluded from the sparsity penalty")


def build_parser():
    ap = argparse.ArgumentParser(
        prog="vclasso",
        description="Sparse regression with learnable per-coefficient penalty weights",
    )
    ap.add_argument("--from-manifest", default=None,
                    help="load flags from a previous run's manifest")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("fit", help="fit one model at a fixed penalty strength")
    _add_data(p)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--mode", default="sbl", choices=["map", "sbl"])
    p.add_argument("--output", required=True)
    p.add_argument("--trace", default=None, help="write per-iteration CSV trace here")
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("trajectory", help="warm-started path over a tau grid")
    _add_data(p)
    p.add_argument("--tau-grid", type=float, nargs=3, required=True,
                   metavar=("MAX", "MIN", "POINTS"))
    p.add_argument("--mode", default="sbl", choices=["map", "sbl", "lasso-baseline"])
    p.add_argument("--output", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("simulate", help="sparse-truth simulation study")
    p.add_argument("--family", required=True, choices=list(FAMILIES))
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--mode", default="sbl", choices=["map", "sbl"])
    p.add_argument("--n", type=int, default=250)
    p.add_argument("--p", type=int, default=50)
    p.add_argument("--active-values", default="-2.5,-2,-1.5,1.5,2,2.5",
                   help="comma-separated true nonzero coefficients")
    p.add_argument("--threads", type=int, default=os.cpu_count())
    p.add_argument("--emit-data", default=None,
                   help="also write one generated dataset as CSV")
    p.add_argument("--output", required=True)
    _add_common(p, need_seed=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("prox", help="evaluate the joint proximal operator")
    p.add_argument("--x0", type=float, required=True)
    p.add_argument("--lambda0", type=float, required=True)
    p.add_argument("--sx", type=float, required=True)
    p.add_argument("--slambda", type=float, required=True)
    p.add_argument("--oracle", action="store_true",
                   help="also run the full-lattice check")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_prox)
    return ap


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    # manifest replay: rebuild the stored command line, then append any
    # extra flags given now so they override the stored ones
    if "--from-manifest" in argv:
        i = argv.index("--from-manifest")
        with open(argv[i + 1], encoding="utf-8") as fh:
            manifest = json.load(fh)
        rebuilt = [manifest["command"]]
        for key, val in manifest["config"].items():
            if key == "subcommand" or val in (None, False):
                continue
            flag = "--" + key.replace("_", "-")
            if val is True:
                rebuilt.append(flag)
            elif isinstance(val, (list, tuple)):
                if val:
                    rebuilt.append(flag)
                    rebuilt.extend(str(v) for v in val)
            else:
                rebuilt.extend([flag, str(val)])
        argv = rebuilt + argv[:i] + argv[i + 2 :]

    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        json.dump({"error": str(exc), **exc.context}, sys.stderr)
        sys.stderr.write("\n")
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        json.dump({"error": f"{type(exc).__name__}: {exc}"}, sys.stderr)
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
