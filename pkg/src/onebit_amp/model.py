"""Domain types shared by the solver, the channels and the experiment harness."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


class InvalidParams(ValueError):
    """Raised when a parameter set violates one of its invariants."""


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: float
    variance: float


@dataclass(frozen=True)
class SignalPriorParams:
    """Bernoulli / Gaussian-mixture prior.

    ``kappa`` is the probability of a nonzero entry; the nonzero part is a
    mixture of ``components`` (weights on the simplex).
    """

    kappa: float
    components: tuple[GaussianComponent, ...]

    @classmethod
    def from_arrays(cls, kappa, weights, means, variances) -> "SignalPriorParams":
        comps = tuple(
            GaussianComponent(float(w), float(m), float(v))
            for w, m, v in zip(np.atleast_1d(weights), np.atleast_1d(means), np.atleast_1d(variances))
        )
        return cls(float(kappa), comps)

    @classmethod
    def default(cls, n_components: int = 1, kappa: float = 0.5) -> "SignalPriorParams":
        d = n_components
        return cls.from_arrays(kappa, np.full(d, 1.0 / d), np.zeros(d), np.ones(d))

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    @property
    def means(self) -> np.ndarray:
        return np.array([c.mean for c in self.components])

    @property
    def variances(self) -> np.ndarray:
        return np.array([c.variance for c in self.components])

    def second_moment(self) -> float:
        """E[x^2] under the prior."""
        return float(self.kappa * np.sum(self.weights * (self.means**2 + self.variances)))

    def is_symmetric(self) -> bool:
        return bool(np.all(self.means == 0.0))


@dataclass(frozen=True)
class NoisePriorParams:
    gamma_w: float


def validate_prior(p: SignalPriorParams) -> None:
    """Raise :class:`InvalidParams` naming the first violated invariant."""
    if p.n_components < 1:
        raise InvalidParams("no mixture components")
    if not (0.0 <= p.kappa <= 1.0) or not np.isfinite(p.kappa):
        raise InvalidParams("kappa out of range")
    w = p.weights
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise InvalidParams("negative mixture weight")
    if abs(w.sum() - 1.0) > 1e-12:
        raise InvalidParams("weights do not sum to 1")
    if not np.all(np.isfinite(p.means)):
        raise InvalidParams("non-finite mixture mean")
    v = p.variances
    if np.any(~(v > 0.0)) or not np.all(np.isfinite(v)):
        raise InvalidParams("mixture variance must be positive")


def validate_noise(theta: NoisePriorParams) -> None:
    if not (theta.gamma_w >= 0.0) or not np.isfinite(theta.gamma_w):
        raise InvalidParams("gamma_w must be nonnegative")


@dataclass(frozen=True)
class Problem:
    """Measurement matrix and 1-bit observations ``y = sign(A x + w)``."""

    A: np.ndarray
    y: np.ndarray
    frob_sq: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape


def build_problem(A, y) -> Problem:
    A = np.array(A, dtype=float)
    y = np.array(y, dtype=float).ravel()
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise ValueError(f"A must be a nonempty 2-D matrix, got shape {A.shape}")
    if A.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: A has {A.shape[0]} rows, y has {y.shape[0]} entries")
    bad = np.flatnonzero((y != 1.0) & (y != -1.0))
    if bad.size:
        raise ValueError(f"y[{bad[0]}] = {y[bad[0]]!r} is not a sign (+1/-1)")
    if not np.all(np.isfinite(A)):
        raise ValueError("A contains non-finite entries")
    A.setflags(write=False)
    y.setflags(write=False)
    return Problem(A=A, y=y, frob_sq=float(np.sum(A * A)))


@dataclass
class GampState:
    x_hat: np.ndarray
    tau_x: float
    q: np.ndarray
    tau_q: float
    s: np.ndarray
    tau_s: float
    r: np.ndarray
    tau_r: float


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 1000
    damping_rate: float = 0.1
    convergence_tol: float = 1e-6
    em_inner_iters: int = 1
    noise_newton_iters: int = 5
    estimate_signal_params: bool = True
    estimate_noise_param: bool = True
    variance_floor: float = 1e-12
    seed: int = 0

    def __post_init__(self):
        errors = self.problems()
        if errors:
            raise InvalidParams("; ".join(errors))

    def problems(self) -> list[str]:
        errs = []
        if not (0.0 < self.damping_rate <= 1.0):
            errs.append("damping_rate must lie in (0, 1]")
        if not (self.convergence_tol > 0.0):
            errs.append("convergence_tol must be positive")
        if self.max_iters < 1:
            errs.append("max_iters must be >= 1")
        if self.em_inner_iters < 0:
            errs.append("em_inner_iters must be >= 0")
        if self.noise_newton_iters < 0:
            errs.append("noise_newton_iters must be >= 0")
        if not (self.variance_floor > 0.0):
            errs.append("variance_floor must be positive")
        return errs

    @property
    def oracle(self) -> bool:
        return not (self.estimate_signal_params or self.estimate_noise_param)

    def as_oracle(self) -> "SolverConfig":
        return replace(self, estimate_signal_params=False, estimate_noise_param=False)


@dataclass(frozen=True)
class TrialResult:
    snr_db: float
    snr_scaled_db: float
    iterations_used: int
    converged: bool
    lambda_hat: SignalPriorParams
    theta_hat: NoisePriorParams
    diverged: bool = False
    # least-squares amplitude alpha with alpha * x_hat closest to x_true
    amplitude_fit: float = float("nan")
