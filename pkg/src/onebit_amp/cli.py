"""Command-line entry point: ``onebit-amp {solve,bench,check}``.

Exit codes: 0 success/converged, 1 input error, 2 hit max iterations,
3 divergence.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import MISSING, fields
from types import SimpleNamespace

import numpy as np

from . import checks, experiment
from .engine import DivergenceError, solve
from .experiment import GridConfig, fmt
from .model import NoisePriorParams, SignalPriorParams, SolverConfig, build_problem

EXIT_OK, EXIT_INPUT, EXIT_MAXITER, EXIT_DIVERGED = 0, 1, 2, 3

SOLVER_KEYS = {f.name: f for f in fields(SolverConfig)}
GRID_KEYS = {f.name: f for f in fields(GridConfig) if f.name != "solver"}
INIT_KEYS = ("n_components", "kappa_init", "gamma_w_init")
TUPLE_KEYS = ("sparsity_levels", "oversampling_ratios", "noise_variances", "arms")


class InputError(Exception):
    pass


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [_parse_value(t.strip()) for t in text.split(",")]
    return text


def load_settings(path: str | None, overrides: list[str], seed: int | None) -> dict:
    settings: dict = {}
    if path:
        try:
            with open(path) as fh:
                settings = json.load(fh)
        except (OSError, json.JSONDecodeError) as err:
            raise InputError(f"{path}: cannot read config: {err}") from None
        if not isinstance(settings, dict):
            raise InputError(f"{path}: config must be a flat JSON object")
    for item in overrides:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise InputError(f"--set expects key=value, got {item!r}")
        settings[key.strip()] = _parse_value(val.strip())
    if seed is not None:
        settings["seed"] = seed
    return settings


def _coerce(name, value, errors):
    if name in TUPLE_KEYS:
        value = value if isinstance(value, list) else [value]
        return tuple(value)
    if name in ("max_iters", "em_inner_iters", "noise_newton_iters", "seed", "N", "trials", "n_components"):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            errors.append(f"{name}: expected an integer, got {value!r}")
            return None
        return int(value)
    if name in ("estimate_signal_params", "estimate_noise_param"):
        if not isinstance(value, bool):
            errors.append(f"{name}: expected true/false, got {value!r}")
            return None
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{name}: expected a number, got {value!r}")
        return None
    return float(value)


def build_configs(settings: dict, allowed: set[str]):
    """Split flat settings into (SolverConfig, other fields), listing every problem."""
    errors: list[str] = []
    solver_kw, other = {}, {}
    for key, value in settings.items():
        if key not in allowed:
            errors.append(f"{key}: unknown setting")
            continue
        v = _coerce(key, value, errors)
        if v is None:
            continue
        if key in SOLVER_KEYS:
            solver_kw[key] = v
        if key in GRID_KEYS or key in INIT_KEYS:
            other[key] = v
    errors.extend(_problems(SolverConfig, solver_kw))
    solver = None if errors else SolverConfig(**solver_kw)
    return solver, other, errors


def _problems(cls, kw: dict) -> list[str]:
    """Run ``cls.problems`` on defaults updated with ``kw`` without constructing ``cls``."""
    vals = {}
    for f in fields(cls):
        if f.name in kw:
            vals[f.name] = kw[f.name]
        elif f.default is not MISSING:
            vals[f.name] = f.default
        else:
            vals[f.name] = f.default_factory()
    return cls.problems(SimpleNamespace(**vals))


# -- solve ---------------------------------------------------------------------

def read_matrix(path: str) -> np.ndarray:
    rows = []
    try:
        fh = open(path)
    except OSError as err:
        raise InputError(f"{path}: {err.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            row = []
            for col, cell in enumerate(line.rstrip("\n").split(","), start=1):
                try:
                    row.append(float(cell))
                except ValueError:
                    raise InputError(f"{path}: line {lineno}, column {col}: cannot parse {cell.strip()!r}") from None
            if rows and len(row) != len(rows[0]):
                raise InputError(f"{path}: line {lineno}: expected {len(rows[0])} columns, got {len(row)}")
            rows.append(row)
    if not rows:
        raise InputError(f"{path}: empty matrix")
    return np.array(rows)


def read_signs(path: str) -> np.ndarray:
    vals = []
    try:
        fh = open(path)
    except OSError as err:
        raise InputError(f"{path}: {err.strerror}") from None
    with fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                v = float(text)
            except ValueError:
                v = None
            if v not in (1.0, -1.0):
                raise InputError(f"{path}: line {lineno}, column 1: expected +1 or -1, got {text!r}")
            vals.append(v)
    return np.array(vals)


def write_params(path, lam: SignalPriorParams, theta: NoisePriorParams) -> None:
    lines = [f"kappa={fmt(lam.kappa)}", f"n_components={lam.n_components}"]
    for i, c in enumerate(lam.components, start=1):
        lines += [f"xi_{i}={fmt(c.weight)}", f"mu_{i}={fmt(c.mean)}", f"gamma_x_{i}={fmt(c.variance)}"]
    lines.append(f"gamma_w={fmt(theta.gamma_w)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_solve(args) -> int:
    settings = load_settings(args.config, args.set, args.seed)
    solver, other, errors = build_configs(settings, set(SOLVER_KEYS) | set(INIT_KEYS))
    if errors:
        raise InputError("invalid settings:\n  " + "\n  ".join(errors))
    A = read_matrix(args.matrix)
    y = read_signs(args.measurements)
    try:
        problem = build_problem(A, y)
    except ValueError as err:
        raise InputError(str(err)) from None
    lam0 = SignalPriorParams.default(other.get("n_components", 1), other.get("kappa_init", 0.5))
    theta0 = NoisePriorParams(other.get("gamma_w_init", 1e-2))

    os.makedirs(args.out, exist_ok=True)
    try:
        rep = solve(problem, lam0, theta0, solver)
    except DivergenceError as err:
        print(f"diverged at iteration {err.iteration}: non-finite {err.what}")
        return EXIT_DIVERGED
    with open(os.path.join(args.out, "x_hat.txt"), "w") as fh:
        fh.write("".join(f"{fmt(v)}\n" for v in rep.x_hat))
    write_params(os.path.join(args.out, "params.txt"), rep.lambda_hat, rep.theta_hat)
    last = rep.residual_trace[-1] if rep.residual_trace else float("nan")
    print(f"iterations={rep.iterations} converged={str(rep.converged).lower()} residual={fmt(last)}")
    return EXIT_OK if rep.converged else EXIT_MAXITER


# -- bench ---------------------------------------------------------------------

def grid_config_from_settings(settings: dict) -> GridConfig:
    allowed = set(SOLVER_KEYS) | set(GRID_KEYS)
    solver, other, errors = build_configs(settings, allowed)
    kw = {k: v for k, v in other.items() if k in GRID_KEYS}
    errors.extend(_problems(GridConfig, kw))
    if errors:
        raise InputError("invalid grid settings:\n  " + "\n  ".join(errors))
    return GridConfig(**kw, solver=solver)


def resolve_jobs(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get("ONEBIT_AMP_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise InputError(f"ONEBIT_AMP_JOBS must be an integer, got {env!r}") from None
    return 1


def cmd_bench(args) -> int:
    grid = grid_config_from_settings(load_settings(args.config, args.set, args.seed))
    jobs = resolve_jobs(args.jobs)
    os.makedirs(args.out, exist_ok=True)
    result = experiment.run_grid(grid, jobs=jobs, progress=lambda msg: print(msg, flush=True))
    experiment.write_grid_csv(result, os.path.join(args.out, "grid.csv"))
    experiment.write_grid_csv(result, os.path.join(args.out, "grid_scaled.csv"), scaled=True)
    experiment.write_trials_csv(result, os.path.join(args.out, "trials.csv"))
    experiment.write_curves(result, grid, args.out)
    print(f"wrote {len(result.rows)} rows to {os.path.join(args.out, 'grid.csv')}")
    return EXIT_OK


# -- check ---------------------------------------------------------------------

def cmd_check(args) -> int:
    results = checks.run_all(scale=0.25 if args.quick else 1.0)
    for res in results:
        print(res.line())
    ok = all(r.passed for r in results)
    print("all batteries passed" if ok else "some batteries FAILED")
    return EXIT_OK if ok else EXIT_INPUT


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="onebit-amp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="flat JSON config file")
        sp.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                        help="override a config value (repeatable)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", metavar="DIR", default=".")

    sp = sub.add_parser("solve", help="recover x from a matrix CSV and a sign file")
    sp.add_argument("matrix")
    sp.add_argument("measurements")
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("bench", help="run the Monte-Carlo grid")
    common(sp)
    sp.add_argument("--jobs", type=int, help="worker processes (default $ONEBIT_AMP_JOBS or 1)")
    sp.set_defaults(func=cmd_bench)

    sp = sub.add_parser("check", help="run the numerical self-diagnostics")
    sp.add_argument("--quick", action="store_true", help="quarter-size batteries")
    sp.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except InputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
