"""Seeded trajectories for finite-order chains and the Gaussian AR(1) chain.

Every trajectory owns a ``numpy.random.Generator`` backed by PCG64 seeded
with the trajectory seed; replica ``i`` of an experiment uses
``base_seed + i``.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TextIO

import numpy as np
from scipy.signal import lfilter

from .errors import NotPositiveDefinite, ValidationError
from .process import FiniteMarkovModel, stationary_distribution

DEFAULT_SEED = 12345


def make_rng(seed: int) -> np.random.Generator:
    if seed < 0 or seed >= 2**64:
        raise ValidationError("seed must be an unsigned 64-bit integer")
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True, eq=False)
class Trajectory:
    values: np.ndarray
    seed: int
    model_id: str
    theta: tuple[float, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.values)

    def header(self) -> str:
        theta = ",".join(repr(float(t)) for t in self.theta)
        return f"# model={self.model_id} theta={theta} seed={self.seed}"

    def dump(self, fh: TextIO) -> None:
        fh.write(self.header() + "\n")
        if self.values.dtype.kind in "iu":
            fh.writelines(f"{int(v)}\n" for v in self.values)
        else:
            fh.writelines(f"{float(v)!r}\n" for v in self.values)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            self.dump(fh)


def load_trajectory(path: str | Path) -> Trajectory:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ValidationError("trajectory file lacks the '# model=... theta=... seed=...' header")
        fields = dict(part.split("=", 1) for part in header[1:].split())
        lines = [ln.strip() for ln in fh if ln.strip()]
    is_int = all(ln.lstrip("-").isdigit() for ln in lines)
    values = np.array([int(v) for v in lines] if is_int else [float(v) for v in lines])
    theta = tuple(float(t) for t in fields.get("theta", "").split(",") if t)
    return Trajectory(values, int(fields["seed"]), fields["model"], theta)


@dataclass(frozen=True)
class GaussianMarkovModel:
    """Stationary Gaussian chain with ``Cov[X_i, X_j] = gamma0 * rho^|i-j|``."""

    mu: float
    gamma0: float
    rho: float

    def __post_init__(self):
        if not self.gamma0 > 0:
            raise ValidationError("gamma0 must be positive")
        if not -1.0 <= self.rho <= 1.0:
            raise ValidationError("rho must lie in [-1, 1]")

    @property
    def name(self) -> str:
        return f"gauss-markov(rho={self.rho:g})"

    @property
    def conditional_variance(self) -> float:
        return self.gamma0 * (1.0 - self.rho**2)

    def covariance(self, n: int) -> np.ndarray:
        lags = np.abs(np.subtract.outer(np.arange(n), np.arange(n)))
        return self.gamma0 * self.rho**lags


def sample_finite(model: FiniteMarkovModel, length: int, seed: int) -> Trajectory:
    """Stationary trajectory: first ``M`` symbols from the stationary law, then the conditionals."""
    if length < 1:
        raise ValidationError("length must be >= 1")
    rng = make_rng(seed)
    d, M = model.d, model.order
    out = np.empty(length, dtype=np.int64)
    if M == 0:
        cdf = np.cumsum(model.conditional)
        out[:] = np.minimum(np.searchsorted(cdf, rng.random(length), side="right"), d - 1)
        return Trajectory(out, seed, model.name, model.theta)

    pi = stationary_distribution(model).probs.ravel()
    start = int(min(np.searchsorted(np.cumsum(pi), rng.random(), side="right"), pi.size - 1))
    head = np.unravel_index(start, (d,) * M)
    n_head = min(M, length)
    out[:n_head] = head[:n_head]
    if length <= M:
        return Trajectory(out, seed, model.name, model.theta)

    n_states = d**M
    cdf_rows = np.cumsum(model.conditional.reshape(n_states, d), axis=1)
    uniforms = rng.random(length - M).tolist()
    state = start
    symbols = []
    append = symbols.append
    if d == 2:
        p0 = cdf_rows[:, 0].tolist()
        for u in uniforms:
            x = 0 if u < p0[state] else 1
            append(x)
            state = (state * 2 + x) % n_states
    else:
        rows = [row[:-1].tolist() for row in cdf_rows]
        for u in uniforms:
            x = bisect.bisect_right(rows[state], u)
            append(x)
            state = (state * d + x) % n_states
    out[M:] = symbols
    return Trajectory(out, seed, model.name, model.theta)


def sample_gaussian(model: GaussianMarkovModel, length: int, seed: int) -> Trajectory:
    """``X_1 ~ N(mu, gamma0)``, ``X_{k+1} | X_k ~ N(mu + rho (X_k - mu), gamma0 (1 - rho^2))``."""
    if length < 1:
        raise ValidationError("length must be >= 1")
    rng = make_rng(seed)
    z = rng.standard_normal(length)
    noise = np.empty(length)
    noise[0] = math.sqrt(model.gamma0) * z[0]
    noise[1:] = math.sqrt(model.conditional_variance) * z[1:]
    # linear recursion y_k = rho y_{k-1} + noise_k, y_0 = noise_0
    y = lfilter([1.0], [1.0, -model.rho], noise)
    return Trajectory(model.mu + y, seed, model.name, (model.mu,))


def conditional_mean_coefficients(cov: np.ndarray) -> np.ndarray:
    """Regression coefficients of the last variable on the others (Schur complement)."""
    cov = np.asarray(cov, dtype=float)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite("covariance matrix is not positive definite") from None
    return np.linalg.solve(cov[:-1, :-1], cov[:-1, -1])


def tridiagonal_covariance(rho: float, gamma0: float, n: int = 3) -> np.ndarray:
    cov = np.eye(n) + rho * (np.eye(n, k=1) + np.eye(n, k=-1))
    return gamma0 * cov


def tridiagonal_gaussian_conditional_check(
    rho: float, gamma0: float = 1.0, structure: str = "tridiagonal"
) -> float:
    """Magnitude of the ``X_1`` coefficient in ``E[X_3 | X_2, X_1]``.

    ``structure="tridiagonal"`` uses nearest-neighbour covariances only;
    ``"geometric"`` uses ``gamma0 * rho^|i-j|`` (a genuine order-1 chain).
    """
    if not gamma0 > 0:
        raise ValidationError("gamma0 must be positive")
    if structure == "tridiagonal":
        cov = tridiagonal_covariance(rho, gamma0)
    elif structure == "geometric":
        cov = GaussianMarkovModel(0.0, gamma0, rho).covariance(3)
    else:
        raise ValidationError(f"unknown covariance structure {structure!r}")
    return abs(float(conditional_mean_coefficients(cov)[0]))
