"""Synthetic 1-bit CS problems and the Monte-Carlo benchmark grid."""
from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .engine import DivergenceError, solve
from .model import (
    InvalidParams,
    NoisePriorParams,
    Problem,
    SignalPriorParams,
    SolverConfig,
    TrialResult,
    build_problem,
)

SNR_CAP_DB = 300.0
ARMS = ("amp-pe", "amp-oracle")
GRID_HEADER = ["sparsity", "ratio", "gamma_w", "arm", "mean_snr_db", "std_snr_db", "mean_iters",
               "trials_diverged"]


def fmt(v) -> str:
    """Fixed 9-significant-digit rendering used in every CSV."""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.9g}"


def quantize(z, w=0.0) -> np.ndarray:
    """``+1`` where ``z + w > 0``, ``-1`` otherwise (zero maps to ``-1``)."""
    u = np.asarray(z, dtype=float) + np.asarray(w, dtype=float)
    return np.where(u > 0.0, 1.0, -1.0)


def generate_problem(N: int, S: int, M: int, gamma_w: float, seed):
    """Draw ``x`` with ``S`` standard-normal nonzeros, a column-normalized
    Gaussian ``A`` and ``y = sign(A x + w)``, ``w ~ N(0, gamma_w)``.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    Returns ``(x_true, problem, lambda_true, theta_true)``.
    """
    if not (1 <= S <= N):
        raise ValueError(f"need 1 <= S <= N, got S={S}, N={N}")
    if M < 1:
        raise ValueError(f"need M >= 1, got {M}")
    if gamma_w < 0:
        raise ValueError("gamma_w must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = np.zeros(N)
    support = rng.choice(N, size=S, replace=False)
    x[support] = rng.standard_normal(S)
    A = rng.standard_normal((M, N))
    A /= np.linalg.norm(A, axis=0)
    w = rng.standard_normal(M) * math.sqrt(gamma_w)
    y = quantize(A @ x, w)
    lam = SignalPriorParams.from_arrays(S / N, [1.0], [0.0], [1.0])
    return x, build_problem(A, y), lam, NoisePriorParams(float(gamma_w))


def amplitude_fit(x_true, x_hat) -> float:
    """``alpha = <x_true, x_hat> / ||x_hat||^2``, or 0 when ``x_hat = 0``."""
    nh = float(np.dot(x_hat, x_hat))
    return float(np.dot(x_true, x_hat)) / nh if nh > 0.0 else 0.0


def snr_db(x_true, x_hat) -> tuple[float, float]:
    """Plain and scale-corrected reconstruction SNR in dB, capped at 300 dB."""
    x_true = np.asarray(x_true, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    if x_true.shape != x_hat.shape:
        raise ValueError("length mismatch")
    if not np.any(x_true):
        raise ValueError("x_true is identically zero")
    # both ratios are invariant to a joint rescaling, which keeps the norms in range
    peak = max(float(np.max(np.abs(x_true))), float(np.max(np.abs(x_hat), initial=0.0)))
    x_true, x_hat = x_true / peak, x_hat / peak
    sig = np.linalg.norm(x_true)

    def _db(err):
        if err == 0.0:
            return SNR_CAP_DB
        with np.errstate(divide="ignore"):
            return float(min(20.0 * np.log10(sig / err), SNR_CAP_DB))

    alpha = amplitude_fit(x_true, x_hat)
    return _db(np.linalg.norm(x_true - x_hat)), _db(np.linalg.norm(x_true - alpha * x_hat))


@dataclass(frozen=True)
class GridConfig:
    N: int = 256
    sparsity_levels: tuple[float, ...] = (0.1, 0.5, 1.0)
    oversampling_ratios: tuple[float, ...] = (1, 2, 3, 4, 5, 6)
    noise_variances: tuple[float, ...] = (0.0, 0.02, 0.1)
    trials: int = 20
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    arms: tuple[str, ...] = ARMS
    # AMP-PE starting point
    n_components: int = 1
    kappa_init: float = 0.5
    gamma_w_init: float = 1e-2

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise InvalidParams("; ".join(errors))

    def problems(self) -> list[str]:
        errs = []
        if self.N < 1:
            errs.append("N must be >= 1")
        if not self.sparsity_levels or any(not (0.0 < s <= 1.0) for s in self.sparsity_levels):
            errs.append("sparsity_levels must lie in (0, 1]")
        if not self.oversampling_ratios or any(not (r >= 1.0) for r in self.oversampling_ratios):
            errs.append("oversampling_ratios must be >= 1")
        if not self.noise_variances or any(not (g >= 0.0) for g in self.noise_variances):
            errs.append("noise_variances must be >= 0")
        if self.trials < 1:
            errs.append("trials must be >= 1")
        if not self.arms or any(a not in ARMS for a in self.arms):
            errs.append(f"arms must be a nonempty subset of {list(ARMS)}")
        if self.n_components < 1:
            errs.append("n_components must be >= 1")
        if not (0.0 <= self.kappa_init <= 1.0):
            errs.append("kappa_init must lie in [0, 1]")
        if not (self.gamma_w_init >= 0.0):
            errs.append("gamma_w_init must be >= 0")
        return errs

    def cells(self) -> list[tuple[float, float, float]]:
        """Grid cells as ``(sparsity, gamma_w, ratio)`` in output order."""
        return [(s, g, r) for s in self.sparsity_levels for g in self.noise_variances
                for r in self.oversampling_ratios]

    def initial_params(self):
        return (SignalPriorParams.default(self.n_components, self.kappa_init),
                NoisePriorParams(self.gamma_w_init))


@dataclass(frozen=True)
class TrialRecord:
    cell: int
    trial: int
    sparsity: float
    ratio: float
    gamma_w: float
    arm: str
    result: TrialResult


@dataclass(frozen=True)
class GridRow:
    sparsity: float
    ratio: float
    gamma_w: float
    arm: str
    mean_snr_db: float
    std_snr_db: float
    mean_iters: float
    trials_diverged: int
    mean_snr_scaled_db: float
    std_snr_scaled_db: float
    mean_gamma_w_hat: float
    trials_converged: int


@dataclass
class GridResult:
    rows: list[GridRow]
    trials: list[TrialRecord]

    def row(self, sparsity, ratio, gamma_w, arm) -> GridRow:
        for r in self.rows:
            if (r.sparsity, r.ratio, r.gamma_w, r.arm) == (sparsity, ratio, gamma_w, arm):
                return r
        raise KeyError((sparsity, ratio, gamma_w, arm))


def trial_seed(seed: int, cell: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(cell, trial))


def run_trial(config: GridConfig, cell: int, trial: int) -> list[TrialRecord]:
    """Run every arm on the problem drawn for ``(cell, trial)``."""
    sparsity, gamma_w, ratio = config.cells()[cell]
    N = config.N
    S = max(1, int(round(sparsity * N)))
    M = max(1, int(round(ratio * N)))
    x, problem, lam_true, theta_true = generate_problem(N, S, M, gamma_w, trial_seed(config.seed, cell, trial))
    out = []
    for arm in config.arms:
        if arm == "amp-oracle":
            lam0, theta0, solver = lam_true, theta_true, config.solver.as_oracle()
        else:
            (lam0, theta0), solver = config.initial_params(), config.solver
        out.append(TrialRecord(cell, trial, sparsity, ratio, gamma_w, arm,
                               _solve_one(x, problem, lam0, theta0, solver)))
    return out


def _solve_one(x, problem: Problem, lam0, theta0, solver: SolverConfig) -> TrialResult:
    try:
        rep = solve(problem, lam0, theta0, solver)
    except DivergenceError as err:
        return TrialResult(math.nan, math.nan, err.iteration + 1, False, lam0, theta0, diverged=True)
    plain, scaled = snr_db(x, rep.x_hat)
    return TrialResult(plain, scaled, rep.iterations, rep.converged, rep.lambda_hat, rep.theta_hat,
                       amplitude_fit=amplitude_fit(x, rep.x_hat))


def _run_task(args):
    config, cell, trial = args
    return run_trial(config, cell, trial)


def _mean_std(vals):
    vals = np.asarray(vals, dtype=float)
    if vals.size == 0:
        return math.nan, math.nan
    std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
    return float(np.mean(vals)), std


def aggregate(config: GridConfig, records: Iterable[TrialRecord]) -> list[GridRow]:
    by_key: dict[tuple[int, str], list[TrialRecord]] = {}
    for rec in records:
        by_key.setdefault((rec.cell, rec.arm), []).append(rec)
    rows = []
    for cell, (sparsity, gamma_w, ratio) in enumerate(config.cells()):
        for arm in config.arms:
            recs = sorted(by_key.get((cell, arm), []), key=lambda r: r.trial)
            ok = [r.result for r in recs if not r.result.diverged]
            m, sd = _mean_std([r.snr_db for r in ok])
            ms, sds = _mean_std([r.snr_scaled_db for r in ok])
            rows.append(GridRow(
                sparsity=sparsity, ratio=ratio, gamma_w=gamma_w, arm=arm,
                mean_snr_db=m, std_snr_db=sd,
                mean_iters=float(np.mean([r.iterations_used for r in ok])) if ok else math.nan,
                trials_diverged=len(recs) - len(ok),
                mean_snr_scaled_db=ms, std_snr_scaled_db=sds,
                mean_gamma_w_hat=float(np.mean([r.theta_hat.gamma_w for r in ok])) if ok else math.nan,
                trials_converged=sum(r.converged for r in ok),
            ))
    return rows


def run_grid(config: GridConfig, jobs: int = 1,
             progress: Callable[[str], None] | None = None) -> GridResult:
    """Run ``config.trials`` seeded problems per cell through every arm.

    Seeds depend only on ``(config.seed, cell, trial)``, so the result does
    not depend on ``jobs`` or on completion order.
    """
    cells = config.cells()
    tasks = [(config, c, t) for c in range(len(cells)) for t in range(config.trials)]
    remaining = {c: config.trials for c in range(len(cells))}
    records: list[TrialRecord] = []

    def _collect(recs):
        records.extend(recs)
        c = recs[0].cell
        remaining[c] -= 1
        if remaining[c] == 0 and progress is not None:
            s, g, r = cells[c]
            progress(f"cell {c + 1}/{len(cells)} done: sparsity={fmt(s)} gamma_w={fmt(g)} ratio={fmt(r)}")

    if jobs <= 1:
        for task in tasks:
            _collect(_run_task(task))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for recs in pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (8 * jobs))):
                _collect(recs)

    records.sort(key=lambda r: (r.cell, r.trial, config.arms.index(r.arm)))
    return GridResult(rows=aggregate(config, records), trials=records)


# -- serialization -----------------------------------------------------------

def write_grid_csv(result: GridResult, path, scaled: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_HEADER)
        for r in result.rows:
            m, sd = (r.mean_snr_scaled_db, r.std_snr_scaled_db) if scaled else (r.mean_snr_db, r.std_snr_db)
            w.writerow([fmt(r.sparsity), fmt(r.ratio), fmt(r.gamma_w), r.arm, fmt(m), fmt(sd),
                        fmt(r.mean_iters), fmt(r.trials_diverged)])


def curve_filename(sparsity, gamma_w) -> str:
    return f"curve_sparsity-{fmt(sparsity)}_gamma_w-{fmt(gamma_w)}.csv"


def write_curves(result: GridResult, config: GridConfig, outdir) -> list[str]:
    """One plot-ready CSV per ``(sparsity, gamma_w)`` with a column per arm."""
    paths = []
    for s in config.sparsity_levels:
        for g in config.noise_variances:
            path = os.path.join(outdir, curve_filename(s, g))
            header = ["ratio"] + [f"{a}_snr_db" for a in config.arms] + \
                     [f"{a}_snr_scaled_db" for a in config.arms]
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for ratio in config.oversampling_ratios:
                    rows = [result.row(s, ratio, g, a) for a in config.arms]
                    w.writerow([fmt(ratio)] + [fmt(r.mean_snr_db) for r in rows]
                               + [fmt(r.mean_snr_scaled_db) for r in rows])
            paths.append(path)
    return paths


TRIAL_HEADER = ["sparsity", "ratio", "gamma_w", "arm", "trial", "snr_db", "snr_scaled_db", "iterations",
                "converged", "diverged", "kappa_hat", "xi_hat", "mu_hat", "gamma_x_hat", "gamma_w_hat", "amplitude_fit"]


def write_trials_csv(result: GridResult, path) -> None:
    """Per-trial log including the final parameter estimates.

    Mixture parameters are ``;``-joined across components.
    """
    def _join(a):
        return ";".join(fmt(v) for v in a)

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRIAL_HEADER)
        for rec in result.trials:
            res = rec.result
            lam = res.lambda_hat
            w.writerow([fmt(rec.sparsity), fmt(rec.ratio), fmt(rec.gamma_w), rec.arm, rec.trial,
                        fmt(res.snr_db), fmt(res.snr_scaled_db), res.iterations_used,
                        fmt(res.converged), fmt(res.diverged), fmt(lam.kappa),
                        _join(lam.weights), _join(lam.means), _join(lam.variances),
                        fmt(res.theta_hat.gamma_w), fmt(res.amplitude_fit)])
