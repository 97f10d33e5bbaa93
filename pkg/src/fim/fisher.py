"""Exact Fisher information of finite windows of a stationary process."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import (
    BoundaryTheta,
    DecompositionError,
    Indeterminate,
    InvalidVariance,
    SingularCovariance,
    ValidationError,
)
from .process import (
    DEFAULT_CAP,
    FiniteMarkovModel,
    _check_size,
    lifted_transition,
    stationary_vector,
    window_distribution,
)

PROB_FLOOR = 1e-300
XI_FLOOR = 1e-30


@dataclass(frozen=True)
class DerivativeScheme:
    """How ``d/dtheta`` of window probabilities is obtained.

    ``mode`` is ``"analytic"`` (model-supplied table derivatives) or
    ``"central"``. The default central step is ``1e-5 * max(1, |theta_i|)``.
    """

    mode: str = "central"
    h: float | None = None
    richardson: bool = False

    def __post_init__(self):
        if self.mode not in ("analytic", "central"):
            raise ValidationError(f"unknown derivative mode {self.mode!r}")
        if self.h is not None and not self.h > 0:
            raise ValidationError("finite-difference step must be positive")

    def step(self, value: float) -> float:
        return self.h if self.h is not None else 1e-5 * max(1.0, abs(value))


ANALYTIC = DerivativeScheme("analytic")
CENTRAL = DerivativeScheme("central")


@dataclass(frozen=True)
class FisherMatrix:
    entries: np.ndarray

    def __post_init__(self):
        F = np.atleast_2d(np.asarray(self.entries, dtype=float))
        if F.shape[0] != F.shape[1]:
            raise ValidationError("Fisher matrix must be square")
        object.__setattr__(self, "entries", F)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def scalar(self) -> float:
        if self.dim != 1:
            raise ValidationError("Fisher matrix is not scalar")
        return float(self.entries[0, 0])

    def is_symmetric(self, tol: float = 1e-10) -> bool:
        return bool(np.max(np.abs(self.entries - self.entries.T), initial=0.0) <= tol)

    def is_psd(self, tol: float = 1e-9) -> bool:
        return bool(np.linalg.eigvalsh(0.5 * (self.entries + self.entries.T)).min() >= -tol)

    def __add__(self, other: FisherMatrix) -> FisherMatrix:
        return FisherMatrix(self.entries + other.entries)

    def __sub__(self, other: FisherMatrix) -> FisherMatrix:
        return FisherMatrix(self.entries - other.entries)

    def __mul__(self, c: float) -> FisherMatrix:
        return FisherMatrix(self.entries * c)

    __rmul__ = __mul__

    def tolist(self) -> list[list[float]]:
        return self.entries.tolist()


def zero_fisher(p: int) -> FisherMatrix:
    return FisherMatrix(np.zeros((p, p)))


# ---------------------------------------------------------------------------
# window derivatives


def central_derivative(
    fn: Callable[[np.ndarray], np.ndarray],
    theta: np.ndarray,
    scheme: DerivativeScheme,
    domain: Sequence[tuple[float, float]] | None = None,
) -> np.ndarray:
    """Stack of central differences ``d fn / d theta_i`` along a new leading axis."""
    theta = np.asarray(theta, dtype=float)
    out = []
    for i in range(theta.size):
        h = scheme.step(theta[i])
        if domain is not None:
            lo, hi = domain[i]
            if theta[i] - 2 * h < lo or theta[i] + 2 * h > hi:
                raise BoundaryTheta(
                    f"theta[{i}]={theta[i]} within 2h={2 * h:g} of its domain [{lo}, {hi}]"
                )
        e = np.zeros_like(theta)
        e[i] = 1.0

        def diff(step):
            return (fn(theta + step * e) - fn(theta - step * e)) / (2.0 * step)

        d = diff(h)
        if scheme.richardson:
            d = (4.0 * diff(h / 2.0) - d) / 3.0
        out.append(d)
    return np.stack(out)


def _stationary_derivative(T: np.ndarray, dT: np.ndarray, pi: np.ndarray) -> np.ndarray:
    """Solve ``dpi (T - I) = -pi dT`` with ``sum(dpi) = 0``."""
    n = T.shape[0]
    A = np.vstack([(T - np.eye(n)).T, np.ones(n)])
    b = np.concatenate([-(pi @ dT), [0.0]])
    return np.linalg.lstsq(A, b, rcond=None)[0]


def analytic_window(model: FiniteMarkovModel, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Window law and its exact theta-derivatives via the product rule."""
    dtable = model.conditional_derivative()
    if dtable is None:
        raise ValidationError(f"model {model.name} has no analytic derivative table")
    table = model.conditional
    d, M, p = model.d, model.order, model.p
    if M == 0:
        P = np.array(1.0)
        dP = np.zeros((p,))
    else:
        T = lifted_transition(table)
        pi = stationary_vector(T)
        dpi = np.stack([_stationary_derivative(T, lifted_transition(dtable[i]), pi) for i in range(p)])
        P = pi.reshape((d,) * M)
        dP = dpi.reshape((p,) + (d,) * M)
    if n <= M:
        axes = tuple(range(n, M))
        return P.sum(axis=axes), dP.sum(axis=tuple(a + 1 for a in axes))
    for _ in range(n - M):
        # keep the parameter axis of dtable on the leading axis of dP
        dtab = dtable.reshape((p,) + (1,) * (P.ndim - M) + table.shape)
        dP = dP[..., None] * table + P[None, ..., None] * dtab
        P = P[..., None] * table
    return P, dP


def window_with_derivative(
    model: FiniteMarkovModel, n: int, scheme: DerivativeScheme = CENTRAL, cap: int = DEFAULT_CAP
) -> tuple[np.ndarray, np.ndarray]:
    if n < 1:
        raise ValidationError("window length must be >= 1")
    _check_size(model.d, n, cap)
    if scheme.mode == "analytic":
        return analytic_window(model, n)

    def probs(th):
        return window_distribution(model.with_theta(th), n, cap).probs

    P = probs(model.theta_array)
    return P, central_derivative(probs, model.theta_array, scheme, model.theta_domain)


# ---------------------------------------------------------------------------
# Fisher sums


def fisher_from_window(P: np.ndarray, dP: np.ndarray) -> np.ndarray:
    """``sum P (d_i log P)(d_j log P)`` over outcomes with ``P > 1e-300``."""
    mask = P > PROB_FLOOR
    p = dP.shape[0]
    if not mask.any():
        return np.zeros((p, p))
    w = P[mask]
    s = dP[:, mask] / w
    F = (s * w) @ s.T
    return 0.5 * (F + F.T)


def conditional_fisher_from_window(P: np.ndarray, dP: np.ndarray) -> np.ndarray:
    """Fisher information of the last symbol given the preceding ones."""
    Ph = P.sum(axis=-1)
    dPh = dP.sum(axis=-1)
    mask = P > PROB_FLOOR
    p = dP.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        s = dP / P - (dPh / Ph)[..., None]
    w = P[mask]
    s = s[:, mask]
    F = (s * w) @ s.T
    return 0.5 * (F + F.T) if F.size else np.zeros((p, p))


def joint_fisher(
    model: FiniteMarkovModel, N: int, scheme: DerivativeScheme = CENTRAL, cap: int = DEFAULT_CAP
) -> FisherMatrix:
    """Fisher matrix of ``N`` consecutive symbols by exact enumeration."""
    P, dP = window_with_derivative(model, N, scheme, cap)
    return FisherMatrix(fisher_from_window(P, dP))


def conditional_fisher(
    model: FiniteMarkovModel, k: int, scheme: DerivativeScheme = CENTRAL, cap: int = DEFAULT_CAP
) -> FisherMatrix:
    """``F_{k | 1:k-1}`` from conditional log-derivatives weighted by the joint."""
    if k < 2:
        raise ValidationError("conditional Fisher information needs k >= 2")
    P, dP = window_with_derivative(model, k, scheme, cap)
    return FisherMatrix(conditional_fisher_from_window(P, dP))


@dataclass(frozen=True)
class FisherReport:
    N: int
    order: int
    F1: FisherMatrix
    F_joint: FisherMatrix
    conditional_terms: tuple[FisherMatrix, ...]
    rate: FisherMatrix
    excess: FisherMatrix
    F_order: FisherMatrix
    residual: float
    chain_residual: float
    xi: float | None = None
    model: str = ""
    theta: tuple[float, ...] = field(default=())

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "theta": list(self.theta),
            "N": self.N,
            "order": self.order,
            "F1": self.F1.tolist(),
            "F_joint": self.F_joint.tolist(),
            "F_order": self.F_order.tolist(),
            "conditional_terms": [c.tolist() for c in self.conditional_terms],
            "rate": self.rate.tolist(),
            "excess": self.excess.tolist(),
            "xi": self.xi,
            "residual": self.residual,
            "chain_residual": self.chain_residual,
        }


def markov_decomposition(
    model: FiniteMarkovModel,
    N: int,
    scheme: DerivativeScheme = CENTRAL,
    cap: int = DEFAULT_CAP,
    tol: float | None = None,
) -> FisherReport:
    """Rate/excess split of ``F_{1:N}`` checked against brute-force enumeration.

    ``tol`` defaults to 1e-8 (analytic) or 1e-5 (central differences),
    scaled by ``max(1, |F_{1:N}|)``.
    """
    M = model.order
    if N < M + 1:
        raise ValidationError(f"N must be >= M + 1 = {M + 1}")
    if tol is None:
        tol = 1e-8 if scheme.mode == "analytic" else 1e-5

    P, dP = window_with_derivative(model, N, scheme, cap)
    F_joint = FisherMatrix(fisher_from_window(P, dP))
    terms = []
    for k in range(N, 1, -1):
        terms.append(FisherMatrix(conditional_fisher_from_window(P, dP)))
        P, dP = P.sum(axis=-1), dP.sum(axis=-1)
    terms.reverse()
    F1 = FisherMatrix(fisher_from_window(P, dP))

    Ps, dPs = window_with_derivative(model, M + 1, scheme, cap)
    if M == 0:
        rate = FisherMatrix(fisher_from_window(Ps, dPs))
        F_order = zero_fisher(model.p)
    else:
        rate = FisherMatrix(conditional_fisher_from_window(Ps, dPs))
        F_order = FisherMatrix(fisher_from_window(Ps.sum(axis=-1), dPs.sum(axis=-1)))
    excess = F_order - M * rate

    predicted = F_order + (N - M) * rate
    residual = float(np.max(np.abs(F_joint.entries - predicted.entries)))
    chained = F1
    for t in terms:
        chained = chained + t
    chain_residual = float(np.max(np.abs(F_joint.entries - chained.entries)))
    scale = max(1.0, float(np.max(np.abs(F_joint.entries))))
    if residual > tol * scale or chain_residual > tol * scale:
        raise DecompositionError(
            f"decomposition residual {residual:.3e} / chain residual {chain_residual:.3e} "
            f"exceeds {tol * scale:.1e}"
        )

    xi = None
    if model.p == 1 and N >= 2:
        F12 = F1.scalar + terms[0].scalar
        try:
            xi = xi_ratio(F12, F1.scalar)
        except Indeterminate:
            xi = math.nan
    return FisherReport(
        N=N,
        order=M,
        F1=F1,
        F_joint=F_joint,
        conditional_terms=tuple(terms),
        rate=rate,
        excess=excess,
        F_order=F_order,
        residual=residual,
        chain_residual=chain_residual,
        xi=xi,
        model=model.name,
        theta=model.theta,
    )


# ---------------------------------------------------------------------------
# closed forms


class GaussianPairFisher(NamedTuple):
    F_joint: float
    F_marginal: float
    ratio: float


def gaussian_pair_fisher(mu: float, gamma0: float, rho: float) -> GaussianPairFisher:
    """Fisher information about a common mean of two correlated Gaussians."""
    if not gamma0 > 0:
        raise ValidationError("gamma0 must be positive")
    if not -1.0 <= rho <= 1.0:
        raise ValidationError("rho must lie in [-1, 1]")
    if rho == -1.0:
        raise SingularCovariance("covariance is singular at rho = -1")
    F_marginal = 1.0 / gamma0
    return GaussianPairFisher(2.0 / gamma0 / (1.0 + rho), F_marginal, 1.0 / (1.0 + rho))


def gaussian_markov_rate(gamma0: float, rho: float) -> float:
    """Per-step Fisher information about the mean of a stationary Gaussian AR(1) chain."""
    if not gamma0 > 0:
        raise ValidationError("gamma0 must be positive")
    if not -1.0 < rho <= 1.0:
        raise ValidationError("rho must lie in (-1, 1]")
    return (1.0 - rho) / (gamma0 * (1.0 + rho))


def gaussian_markov_joint(gamma0: float, rho: float, N: int) -> float:
    return 1.0 / gamma0 + (N - 1) * gaussian_markov_rate(gamma0, rho)


def geometric_covariances(gamma0: float, rho: float, N: int) -> np.ndarray:
    """``C_i = gamma0 rho^i`` for ``i = 1..N-1``."""
    return gamma0 * rho ** np.arange(1, N, dtype=float)


def _lag_covariances(covariances: Sequence[float], N: int) -> np.ndarray:
    C = np.asarray(covariances, dtype=float)
    if C.size < N - 1:
        raise ValidationError(f"need {N - 1} lag covariances, got {C.size}")
    return C[: N - 1]


def sample_mean_fisher(sigma2: float, covariances: Sequence[float], dmu_dtheta: float, N: int) -> float:
    """Asymptotic Fisher information carried by the sample mean of ``N`` outcomes."""
    if N < 1:
        raise ValidationError("N must be >= 1")
    C = _lag_covariances(covariances, N)
    denom = sigma2 + 2.0 * math.fsum(C)
    if not denom > 0:
        raise InvalidVariance(f"asymptotic variance sigma^2 + 2 sum C = {denom} is not positive")
    return N * dmu_dtheta**2 / denom


def sample_mean_variance(sigma2: float, covariances: Sequence[float], N: int) -> float:
    """Exact finite-N variance of the sample mean."""
    C = _lag_covariances(covariances, N)
    weights = N - np.arange(1, N, dtype=float)
    return sigma2 / N + 2.0 / N**2 * math.fsum(weights * C)


def xi_ratio(F12: float, F1: float, floor: float = XI_FLOOR) -> float:
    """``F12 / (2 F1)``; ``inf`` when only ``F1`` vanishes."""
    if F1 < 0 or F12 < 0:
        raise ValidationError("Fisher informations must be non-negative")
    if F1 < floor:
        if F12 < floor:
            raise Indeterminate("both F12 and F1 vanish")
        return math.inf
    return F12 / (2.0 * F1)
