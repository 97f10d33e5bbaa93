"""Maximum-likelihood and sample-mean estimators with a Monte-Carlo MSE harness."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import NoFiniteLikelihood, NonErgodic, TooShort, ValidationError
from .fisher import (
    ANALYTIC,
    CENTRAL,
    gaussian_markov_joint,
    markov_decomposition,
)
from .process import FiniteMarkovModel, window_distribution
from .sampling import DEFAULT_SEED, GaussianMarkovModel, Trajectory, sample_finite, sample_gaussian

SCHEMA_HEADER = "# fim-schema v1"
ESTIMATORS = ("mle", "uncorrelated-mle", "sample-mean")
GRID_POINTS = 32


@dataclass(frozen=True, eq=False)
class SufficientStats:
    """Counts of every length-(M+1) sliding window, plus the first M symbols."""

    counts: np.ndarray
    boundary: tuple[int, ...]

    @property
    def order(self) -> int:
        return self.counts.ndim - 1

    @property
    def d(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def as_dict(self) -> dict[tuple[int, ...], int]:
        return {tuple(int(i) for i in idx): int(self.counts[idx]) for idx in zip(*np.nonzero(self.counts))}


def sliding_window_stats(traj: Trajectory | Sequence[int], M: int, d: int | None = None) -> SufficientStats:
    values = np.asarray(traj.values if isinstance(traj, Trajectory) else traj, dtype=np.int64)
    L = values.size
    if M < 0:
        raise ValidationError("M must be non-negative")
    if L < M + 1:
        raise TooShort(f"trajectory of length {L} is shorter than a window of {M + 1}")
    if d is None:
        d = max(2, int(values.max()) + 1)
    codes = np.zeros(L - M, dtype=np.int64)
    for j in range(M + 1):
        codes = codes * d + values[j : L - M + j]
    counts = np.bincount(codes, minlength=d ** (M + 1)).reshape((d,) * (M + 1))
    return SufficientStats(counts, tuple(int(v) for v in values[:M]))


class LogLikelihood(NamedTuple):
    full: float
    truncated: float


def log_likelihood(stats: SufficientStats, model: FiniteMarkovModel) -> LogLikelihood:
    """Windowed log-likelihood; ``full`` adds the exact log-probability of the first M symbols."""
    if stats.order != model.order or stats.d != model.d:
        raise ValidationError("sufficient statistics do not match the model's order/alphabet")
    table = model.conditional
    seen = stats.counts > 0
    if np.any(table[seen] <= 0):
        return LogLikelihood(-math.inf, -math.inf)
    truncated = float(np.sum(stats.counts[seen] * np.log(table[seen])))
    if model.order == 0:
        return LogLikelihood(truncated, truncated)
    try:
        p_head = window_distribution(model, model.order)[stats.boundary]
    except NonErgodic:
        return LogLikelihood(-math.inf, truncated)
    boundary = math.log(p_head) if p_head > 0 else -math.inf
    return LogLikelihood(truncated + boundary, truncated)


def _maximize(objective, bounds: tuple[float, float], tol: float) -> float:
    lo, hi = bounds
    if not lo < hi:
        raise ValidationError("bounds must satisfy lo < hi")
    grid = np.linspace(lo, hi, GRID_POINTS)
    values = np.array([objective(t) for t in grid])
    if not np.any(np.isfinite(values)):
        raise NoFiniteLikelihood("log-likelihood is -inf on the whole search grid")
    i = int(np.argmax(values))
    bracket = (grid[max(i - 1, 0)], grid[min(i + 1, GRID_POINTS - 1)])

    def negated(t):
        v = objective(t)
        return -v if np.isfinite(v) else 1e300

    res = minimize_scalar(negated, bounds=bracket, method="bounded", options={"xatol": tol})
    best = float(res.x)
    return best if objective(best) >= values[i] else float(grid[i])


def _scalar_bounds(model: FiniteMarkovModel, bounds) -> tuple[float, float]:
    if model.p != 1:
        raise ValidationError("maximum-likelihood search supports scalar theta only")
    return tuple(bounds) if bounds is not None else model.theta_domain[0]


def mle(
    stats: SufficientStats,
    model: FiniteMarkovModel,
    theta_bounds: tuple[float, float] | None = None,
    tol: float = 1e-8,
    drop_boundary: bool = False,
) -> float:
    """Bounded scalar maximum-likelihood estimate over ``model``'s family."""
    bounds = _scalar_bounds(model, theta_bounds)

    def objective(t):
        ll = log_likelihood(stats, model.with_theta(t))
        return ll.truncated if drop_boundary else ll.full

    return _maximize(objective, bounds, tol)


def uncorrelated_mle(
    stats_1site: SufficientStats | Sequence[int],
    model: FiniteMarkovModel,
    theta_bounds: tuple[float, float] | None = None,
    tol: float = 1e-8,
) -> float:
    """MLE that treats symbols as independent draws from the stationary marginal."""
    counts = np.asarray(stats_1site.counts if isinstance(stats_1site, SufficientStats) else stats_1site)
    if counts.shape != (model.d,):
        raise ValidationError("single-site counts must have one entry per symbol")
    bounds = _scalar_bounds(model, theta_bounds)
    seen = counts > 0

    def objective(t):
        try:
            marginal = window_distribution(model.with_theta(t), 1).probs
        except NonErgodic:
            return -math.inf
        if np.any(marginal[seen] <= 0):
            return -math.inf
        return float(np.sum(counts[seen] * np.log(marginal[seen])))

    return _maximize(objective, bounds, tol)


# ---------------------------------------------------------------------------
# Monte-Carlo harness


def default_grid() -> list[int]:
    return [int(round(n)) for n in np.logspace(2, 5, 10)]


def jackknife_stderr(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return math.nan
    loo = (x.sum() - x) / (n - 1)
    return float(math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


@dataclass(frozen=True, eq=False)
class EstimationRun:
    estimator_id: str
    model_id: str
    theta_true: float
    N_grid: tuple[int, ...]
    replicas: int
    estimates: np.ndarray  # (replicas, len(N_grid))
    mse: np.ndarray
    mse_stderr: np.ndarray
    crb_markov: np.ndarray
    crb_iid: np.ndarray
    base_seed: int = DEFAULT_SEED

    COLUMNS = ("N", "mse", "mse_stderr", "crb_markov", "crb_iid", "estimator_id", "model_id", "theta_true", "replicas")

    def rows(self) -> list[dict]:
        return [
            {
                "N": n,
                "mse": float(self.mse[j]),
                "mse_stderr": float(self.mse_stderr[j]),
                "crb_markov": float(self.crb_markov[j]),
                "crb_iid": float(self.crb_iid[j]),
                "estimator_id": self.estimator_id,
                "model_id": self.model_id,
                "theta_true": self.theta_true,
                "replicas": self.replicas,
            }
            for j, n in enumerate(self.N_grid)
        ]

    def to_csv(self, header: bool = True) -> str:
        buf = io.StringIO()
        if header:
            buf.write(SCHEMA_HEADER + "\n")
        writer = csv.DictWriter(buf, fieldnames=self.COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        return buf.getvalue()


def _crb_curves(model, theta_true: float, grid: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(model, GaussianMarkovModel):
        markov = np.array([1.0 / gaussian_markov_joint(model.gamma0, model.rho, int(n)) for n in grid])
        return markov, model.gamma0 / grid
    m = model.with_theta(theta_true)
    scheme = ANALYTIC if m.dtable_fn is not None else CENTRAL
    rep = markov_decomposition(m, m.order + 1, scheme)
    f, F1, eps = rep.rate.scalar, rep.F1.scalar, rep.excess.scalar
    with np.errstate(divide="ignore"):
        return 1.0 / (grid * f + eps), 1.0 / (grid * F1)


def _replica_estimates(model, theta_true: float, estimator_id: str, grid: Sequence[int], seed: int) -> np.ndarray:
    n_max = max(grid)
    if estimator_id == "sample-mean":
        traj = sample_gaussian(model, n_max, seed)
        csum = np.cumsum(traj.values)
        return np.array([csum[n - 1] / n for n in grid])
    m = model.with_theta(theta_true)
    traj = sample_finite(m, n_max, seed)
    out = []
    for n in grid:
        prefix = traj.values[:n]
        if estimator_id == "mle":
            out.append(mle(sliding_window_stats(prefix, m.order, m.d), m))
        else:
            out.append(uncorrelated_mle(sliding_window_stats(prefix, 0, m.d), m))
    return np.array(out)


def run_mse_experiment(
    model: FiniteMarkovModel | GaussianMarkovModel,
    theta_true: float,
    estimator_id: str,
    N_grid: Sequence[int] | None = None,
    replicas: int = 50,
    base_seed: int = DEFAULT_SEED,
    workers: int = 1,
) -> EstimationRun:
    """Replica ``r`` samples one trajectory (seed ``base_seed + r``) and estimates on its prefixes.

    For ``sample-mean`` the model must be a :class:`GaussianMarkovModel` and
    ``theta_true`` its mean.
    """
    if estimator_id not in ESTIMATORS:
        raise ValidationError(f"estimator must be one of {ESTIMATORS}")
    if replicas < 2:
        raise ValidationError("need at least two replicas")
    gaussian = isinstance(model, GaussianMarkovModel)
    if gaussian != (estimator_id == "sample-mean"):
        raise ValidationError("sample-mean runs on the Gaussian chain; ML estimators on finite models")
    if gaussian and theta_true != model.mu:
        raise ValidationError("theta_true must equal the Gaussian model mean")
    grid = sorted(set(int(n) for n in (N_grid or default_grid())))
    if grid[0] < 2:
        raise ValidationError("grid values must be >= 2")

    seeds = [base_seed + r for r in range(replicas)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda s: _replica_estimates(model, theta_true, estimator_id, grid, s), seeds))
    else:
        rows = [_replica_estimates(model, theta_true, estimator_id, grid, s) for s in seeds]
    estimates = np.vstack(rows)
    sq = (estimates - theta_true) ** 2
    garr = np.asarray(grid, dtype=float)
    crb_markov, crb_iid = _crb_curves(model, theta_true, garr)
    return EstimationRun(
        estimator_id=estimator_id,
        model_id=model.name,
        theta_true=float(theta_true),
        N_grid=tuple(grid),
        replicas=replicas,
        estimates=estimates,
        mse=sq.mean(axis=0),
        mse_stderr=np.array([jackknife_stderr(sq[:, j]) for j in range(len(grid))]),
        crb_markov=crb_markov,
        crb_iid=crb_iid,
        base_seed=base_seed,
    )
