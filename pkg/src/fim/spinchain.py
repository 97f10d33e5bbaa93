"""Transfer-matrix thermodynamics and thermometry of classical Ising chains.

Spins are stored as indices, ``0 -> up (+1)`` and ``1 -> down (-1)``. A chain
of range ``R`` is propagated with the overlapping-window matrix
``S[eta, eta']`` where ``eta = (s_1..s_R)`` and ``eta' = (s_2..s_R, x)``;
its weight is ``exp([B (s_1 + x) / 2 + sum_k J_k s_{R+1-k} x] / T)``, which
counts every field term once around a periodic chain and reduces to the
symmetric 2x2 matrix for ``R = 1``. Multi-index ``eta = s_1..s_R`` maps to
``sum_j bit(s_j) 2^(R-j)`` with ``bit(up) = 0``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import Indeterminate, NumericError, OverflowRisk, ValidationError
from .fisher import (
    ANALYTIC,
    DerivativeScheme,
    central_derivative,
    conditional_fisher_from_window,
    fisher_from_window,
    xi_ratio,
)
from .process import (
    Alphabet,
    FiniteMarkovModel,
    WindowDistribution,
    conditional_deviation,
    lifted_transition,
    measure_markov_order,
)

SPIN = np.array([1.0, -1.0])
EXP_LIMIT = 700.0
XI_DIVERGED = 1e10
POWER_TOL = 1e-14
FACTORIZATION_FLOOR = 64 * np.finfo(float).eps
THERMAL = DerivativeScheme("central", richardson=True)


@dataclass(frozen=True)
class SpinChainModel:
    """Ising chain ``H = -B sum s_j - sum_k J_k sum_j s_j s_{j+k}`` at temperature ``T`` (k_B = 1)."""

    B: float
    J: tuple[float, ...]
    T: float

    def __post_init__(self):
        J = [float(j) for j in np.atleast_1d(self.J)]
        while len(J) > 1 and J[-1] == 0.0:
            J.pop()
        if not J:
            J = [0.0]
        object.__setattr__(self, "J", tuple(J))
        object.__setattr__(self, "B", float(self.B))
        object.__setattr__(self, "T", float(self.T))
        if not self.T > 0:
            raise ValidationError("temperature must be positive")

    @property
    def R(self) -> int:
        return len(self.J)

    @property
    def interacting(self) -> bool:
        return any(j != 0.0 for j in self.J)

    def with_T(self, T: float) -> SpinChainModel:
        return replace(self, T=float(T))


@dataclass(frozen=True, eq=False)
class TransferMatrix:
    """Scaled transfer matrix; the true matrix is ``exp(log_scale) * matrix``."""

    matrix: np.ndarray
    weights: np.ndarray  # (2,)*(R+1) tensor view of the nonzero entries
    exponents: np.ndarray  # -H contributions per transition, same shape as weights
    log_scale: float
    eigenvalue: float
    left: np.ndarray
    right: np.ndarray
    gap: float

    @property
    def R(self) -> int:
        return self.weights.ndim - 1

    @property
    def full_matrix(self) -> np.ndarray:
        """Unscaled Boltzmann weights; may overflow where the scaled form does not."""
        return math.exp(self.log_scale) * self.matrix

    @property
    def full_eigenvalue(self) -> float:
        return math.exp(self.log_scale) * self.eigenvalue

    @property
    def log_eigenvalue(self) -> float:
        return self.log_scale + math.log(self.eigenvalue)


def _exponents(model: SpinChainModel) -> np.ndarray:
    R = model.R
    grids = np.meshgrid(*([SPIN] * (R + 1)), indexing="ij")
    x = grids[R]
    out = 0.5 * model.B * (grids[0] + x)
    for k, Jk in enumerate(model.J, start=1):
        out = out + Jk * grids[R - k] * x
    return out


def _polish(A: np.ndarray, v: np.ndarray, max_iter: int = 1000) -> np.ndarray:
    v = v / np.linalg.norm(v)
    for _ in range(max_iter):
        w = A @ v
        w /= np.linalg.norm(w)
        if np.max(np.abs(w - v)) < POWER_TOL:
            return w
        v = w
    return v


def _dominant(A: np.ndarray, symmetric: bool = False) -> tuple[float, np.ndarray, float]:
    # shifting by the largest diagonal entry keeps near-degenerate
    # dominant pairs (long correlation lengths) resolvable
    c = float(np.max(np.diag(A)))
    shifted = A - c * np.eye(A.shape[0])
    if symmetric:
        w, V = np.linalg.eigh(shifted)
    else:
        w, V = np.linalg.eig(shifted)
    order = np.argsort(-w.real)
    vec = np.abs(np.real(V[:, order[0]]))
    vec = _polish(A, vec)
    lam = float((A @ vec).sum() / vec.sum())
    second = float(np.max(np.abs(w[order[1:]] + c))) if w.size > 1 else 0.0
    return lam, vec, 1.0 - second / lam


def build_transfer_matrix(model: SpinChainModel) -> TransferMatrix:
    T = model.T
    if abs(model.B) / T > EXP_LIMIT or max(abs(j) for j in model.J) / T > EXP_LIMIT:
        raise OverflowRisk(f"|B|/T or |J|/T exceeds {EXP_LIMIT} at T={T}")
    E = _exponents(model)
    shift = float(E.max())
    W = np.exp((E - shift) / T)
    S = lifted_transition(W)
    if np.array_equal(S, S.T):
        lam, r, gap = _dominant(S, symmetric=True)
        l = r
    else:
        lam, r, gap = _dominant(S)
        _, l, _ = _dominant(S.T)
    l = l / (l @ r)
    return TransferMatrix(S, W, E, shift / T, lam, l, r, gap)


# ---------------------------------------------------------------------------
# marginals


def marginal(model: SpinChainModel, m: int, tm: TransferMatrix | None = None) -> WindowDistribution:
    """Thermodynamic-limit law of ``m`` consecutive spins."""
    if m < 1:
        raise ValidationError("marginal length must be >= 1")
    tm = tm or build_transfer_matrix(model)
    R = tm.R
    shape = (2,) * R
    A = tm.left.reshape(shape)
    for _ in range(max(m, R) - R):
        A = A[..., None] * (tm.weights / tm.eigenvalue)
    A = A * tm.right.reshape(shape)
    if m < R:
        A = A.sum(axis=tuple(range(m, R)))
    return WindowDistribution(A, 2)


def marginal_blocks(
    model: SpinChainModel, m: int, drop: str = "tail", tm: TransferMatrix | None = None
) -> WindowDistribution:
    """Marginal from the non-overlapping block matrix ``V = S^R``.

    Builds the smallest ``kR >= m + R`` block marginal and sums the surplus
    spins from the ``"tail"`` or the ``"head"`` end.
    """
    tm = tm or build_transfer_matrix(model)
    R = tm.R
    k = -(-(m + R) // R)
    V = np.linalg.matrix_power(tm.matrix, R) / tm.eigenvalue**R
    A = tm.left.copy()
    for _ in range(k - 1):
        A = A[..., None] * V.reshape((1,) * (A.ndim - 1) + V.shape)
    A = A * tm.right
    A = A.reshape((2,) * (k * R))
    surplus = k * R - m
    if drop == "tail":
        A = A.sum(axis=tuple(range(m, k * R)))
    elif drop == "head":
        A = A.sum(axis=tuple(range(surplus)))
    else:
        raise ValidationError("drop must be 'tail' or 'head'")
    return WindowDistribution(A, 2)


def _eigen_derivatives(model: SpinChainModel):
    """Transfer matrix plus ``d lambda/dT``, ``dr/dT`` and ``dl/dT`` with ``l.r = 1`` kept fixed."""
    tm = build_transfer_matrix(model)
    T = model.T
    n = tm.matrix.shape[0]
    S, lam, r, l = tm.matrix, tm.eigenvalue, tm.right, tm.left
    # scaled weights exp((E - Emax)/T) differentiate to S * (Emax - E) / T^2
    dS = S * (tm.log_scale * T - lifted_transition(tm.exponents)) / T**2 * (S > 0)
    dlam = float(l @ dS @ r)
    eye = np.eye(n)
    A = np.vstack([S - lam * eye, r])
    dr = np.linalg.lstsq(A, np.concatenate([-(dS - dlam * eye) @ r, [0.0]]), rcond=None)[0]
    A = np.vstack([S.T - lam * eye, r])
    rhs = np.concatenate([-(dS.T - dlam * eye) @ l, [-(l @ dr)]])
    dl = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return tm, dlam, dr, dl


def as_markov_model(model: SpinChainModel) -> FiniteMarkovModel:
    """Order-R Markov representation with ``theta = (T,)`` and exact T-derivatives."""

    def parts(T):
        tm, dlam, dr, _ = _eigen_derivatives(model.with_T(T))
        R = tm.R
        n = 2**R
        lam, r = tm.eigenvalue, tm.right
        src = np.repeat(np.arange(n), 2)
        dst = (src * 2 + np.tile([0, 1], n)) % n
        W = tm.weights.reshape(n, 2)
        E = tm.exponents.reshape(n, 2)
        dW = W * (tm.log_scale * T - E) / T**2
        ratio = (r[dst] / r[src]).reshape(n, 2)
        dratio = ((dr[dst] * r[src] - r[dst] * dr[src]) / r[src] ** 2).reshape(n, 2)
        cond = W * ratio / lam
        dcond = (dW * ratio + W * dratio) / lam - cond * dlam / lam
        return cond.reshape((2,) * (R + 1)), dcond.reshape((2,) * (R + 1))

    return FiniteMarkovModel(
        name=f"ising(B={model.B:g},J={list(model.J)})",
        alphabet=Alphabet(2),
        order=model.R,
        theta=(model.T,),
        theta_domain=((0.0, math.inf),),
        table_fn=lambda th: parts(th[0])[0],
        dtable_fn=lambda th: parts(th[0])[1][None],
    )


def brute_force_marginal(model: SpinChainModel, N: int, m: int) -> np.ndarray:
    """Exact ``m``-spin marginal of a periodic chain of ``N`` spins by full enumeration."""
    configs = np.array(np.meshgrid(*([SPIN] * N), indexing="ij")).reshape(N, -1).T
    energy = -model.B * configs.sum(axis=1)
    for k, Jk in enumerate(model.J, start=1):
        energy = energy - Jk * np.sum(configs * np.roll(configs, -k, axis=1), axis=1)
    logw = -energy / model.T
    w = np.exp(logw - logw.max())
    w /= w.sum()
    return w.reshape((2,) * N).sum(axis=tuple(range(m, N)))


# ---------------------------------------------------------------------------
# thermal Fisher information and heat capacity


def _thermal_step(scheme: DerivativeScheme, T: float) -> DerivativeScheme:
    return scheme if scheme.h is not None else replace(scheme, h=1e-4 * T)


def _analytic_thermal_window(model: SpinChainModel, m: int) -> tuple[np.ndarray, np.ndarray]:
    tm, dlam, dr, dl = _eigen_derivatives(model)
    R, T, lam = tm.R, model.T, tm.eigenvalue
    shape = (2,) * R
    K = tm.weights / lam
    dK = tm.weights * (tm.log_scale * T - tm.exponents) / T**2 / lam - K * dlam / lam
    A, dA = tm.left.reshape(shape), dl.reshape(shape)
    for _ in range(max(m, R) - R):
        A, dA = A[..., None] * K, dA[..., None] * K + A[..., None] * dK
    rr, drr = tm.right.reshape(shape), dr.reshape(shape)
    A, dA = A * rr, dA * rr + A * drr
    if m < R:
        axes = tuple(range(m, R))
        A, dA = A.sum(axis=axes), dA.sum(axis=axes)
    return A, dA[None]


def thermal_window(
    model: SpinChainModel, m: int, scheme: DerivativeScheme = THERMAL
) -> tuple[np.ndarray, np.ndarray]:
    """Marginal of ``m`` spins and its temperature derivative (leading axis of length 1)."""
    if scheme.mode == "analytic":
        return _analytic_thermal_window(model, m)
    step = _thermal_step(scheme, model.T)
    P = marginal(model, m).probs
    dP = central_derivative(
        lambda th: marginal(model.with_T(th[0]), m).probs,
        np.array([model.T]),
        step,
        ((0.0, math.inf),),
    )
    return P, dP


def thermal_fisher(model: SpinChainModel, m: int, scheme: DerivativeScheme = THERMAL) -> float:
    """Fisher information about ``T`` carried by ``m`` consecutive spins."""
    if m > 16:
        raise ValidationError("thermal Fisher information is enumerated for m <= 16 only")
    P, dP = thermal_window(model, m, scheme)
    return float(fisher_from_window(P, dP)[0, 0])


def energy_per_site(model: SpinChainModel) -> float:
    """``u = -d ln(lambda) / d beta`` from the eigenvalue derivative ``l^T dS r``."""
    tm = build_transfer_matrix(model)
    S = tm.matrix
    E = lifted_transition(tm.exponents)
    return -float(tm.left @ (S * E) @ tm.right) / tm.eigenvalue


def log_partition_per_site(model: SpinChainModel) -> float:
    return build_transfer_matrix(model).log_eigenvalue


def specific_heat(model: SpinChainModel, scheme: DerivativeScheme = ANALYTIC) -> tuple[float, float]:
    """Per-site heat capacity ``c = du/dT`` and ``c / T^2``.

    The analytic route differentiates ``u = -l^T (S o E) r / lambda`` with the
    exact eigenvector derivatives; ``"central"`` differences ``u`` in ``T``.
    """
    T = model.T
    if scheme.mode == "analytic":
        tm, dlam, dr, dl = _eigen_derivatives(model)
        S, lam = tm.matrix, tm.eigenvalue
        E = lifted_transition(tm.exponents)
        SE = S * E
        dSE = SE * (tm.log_scale * T - E) / T**2
        num = float(tm.left @ SE @ tm.right)
        dnum = float(dl @ SE @ tm.right + tm.left @ dSE @ tm.right + tm.left @ SE @ dr)
        c = -(dnum / lam - num * dlam / lam**2)
        return c, c / T**2
    step = scheme if scheme.h is not None else replace(scheme, h=1e-3 * T)
    du = central_derivative(
        lambda th: np.array(energy_per_site(model.with_T(th[0]))),
        np.array([T]),
        step,
        ((0.0, math.inf),),
    )
    c = float(du[0])
    return c, c / T**2


@dataclass(frozen=True)
class ThermometryReport:
    T: float
    B: float
    J: tuple[float, ...]
    F1: float
    F12: float
    f: float
    xi: float
    delta_F: float
    c: float
    c_over_T2: float
    alpha: float = 0.0
    flags: tuple[str, ...] = field(default=())

    @property
    def xi_diverged(self) -> bool:
        return "xi_diverged" in self.flags


def thermometry_report(
    model: SpinChainModel, scheme: DerivativeScheme = THERMAL, alpha: float = 0.0
) -> ThermometryReport:
    R = model.R
    P, dP = thermal_window(model, R + 1, scheme)
    F = {R + 1: float(fisher_from_window(P, dP)[0, 0])}
    for k in range(R, 0, -1):
        P, dP = P.sum(axis=-1), dP.sum(axis=-1)
        F[k] = float(fisher_from_window(P, dP)[0, 0])
    F1, F12 = F[1], F[2]
    f = F[R + 1] - F[R]
    flags = []
    try:
        xi = xi_ratio(F12, F1)
    except Indeterminate:
        xi = math.nan
        flags.append("xi_indeterminate")
    if xi > XI_DIVERGED:
        flags.append("xi_diverged")
    c, c_T2 = specific_heat(model)
    return ThermometryReport(
        T=model.T,
        B=model.B,
        J=model.J,
        F1=F1,
        F12=F12,
        f=f,
        xi=xi,
        delta_F=F12 - 2 * F1,
        c=c,
        c_over_T2=c_T2,
        alpha=alpha,
        flags=tuple(flags),
    )


def rate_fisher(model: SpinChainModel, scheme: DerivativeScheme = THERMAL) -> float:
    """Asymptotic per-spin thermal Fisher information ``F_{R+1|1:R}``."""
    P, dP = thermal_window(model, model.R + 1, scheme)
    return float(conditional_fisher_from_window(P, dP)[0, 0])


# ---------------------------------------------------------------------------
# zero-derivative curve


@dataclass(frozen=True)
class ZeroDerivativeScan:
    roots: tuple[tuple[float, float], ...]
    degenerate: tuple[float, ...]


def up_probability_slope(model: SpinChainModel) -> float:
    """Exact ``dP(up)/dT`` from ``P(eta) = l(eta) r(eta)``."""
    _, dP = _analytic_thermal_window(model, 1)
    return float(dP[0, 0])


def _bisect(g, a: float, b: float, ga: float, xtol: float) -> float:
    while b - a > xtol:
        mid = 0.5 * (a + b)
        gm = g(mid)
        if gm == 0.0:
            return mid
        if (gm > 0) == (ga > 0):
            a, ga = mid, gm
        else:
            b = mid
    return 0.5 * (a + b)


def zero_derivative_curve(
    B_over_J_grid: Iterable[float],
    T_bracket: tuple[float, float] = (0.05, 10.0),
    J: float = -1.0,
    n_scan: int = 200,
    xtol: float = 1e-6,
    floor: float = 1e-12,
) -> ZeroDerivativeScan:
    """Temperatures where ``dP(up)/dT`` changes sign, per field ratio ``B/J``.

    ``B = 0`` gives ``P(up) = 1/2`` identically and is reported as degenerate.
    Sign changes are only trusted where ``|dP/dT| > floor`` on both sides.
    """
    if J == 0:
        raise ValidationError("coupling J must be non-zero")
    lo, hi = T_bracket
    Ts = np.geomspace(lo, hi, n_scan)
    roots, degenerate = [], []
    for ratio in B_over_J_grid:
        B = ratio * J
        if B == 0.0:
            degenerate.append(float(ratio))
            continue

        def g(T):
            return up_probability_slope(SpinChainModel(B, (J,), T))

        vals = [g(T) for T in Ts]
        for a, b, ga, gb in zip(Ts[:-1], Ts[1:], vals[:-1], vals[1:]):
            if abs(ga) > floor and abs(gb) > floor and (ga > 0) != (gb > 0):
                roots.append((float(ratio), float(_bisect(g, a, b, ga, xtol))))
    return ZeroDerivativeScan(tuple(roots), tuple(degenerate))


# ---------------------------------------------------------------------------
# Markov order


def factorization_defect(model: SpinChainModel) -> float:
    """``max |P(s1 s2) - P(s1) P(s2)|`` over nearest-neighbour pairs."""
    P2 = marginal(model, 2).probs
    P1 = P2.sum(axis=1)
    return float(np.max(np.abs(P2 - np.outer(P1, P1))))


def verify_chain_markov_order(model: SpinChainModel, tol: float = 1e-9) -> int:
    """Measured Markov order from exact conditionals up to ``2R + 2`` spins."""
    R = model.R
    tm = build_transfer_matrix(model)
    cache: dict[int, np.ndarray] = {}

    def window(n):
        if n not in cache:
            cache[n] = marginal(model, n, tm).probs
        return cache[n]

    order = measure_markov_order(window, R + 1, 2 * R + 1, tol)
    if order is None:
        raise NumericError("no order up to R + 1 reproduces the conditionals")
    # the covariance shrinks with polarization, so "nonzero" means above rounding level
    if model.interacting and factorization_defect(model) <= FACTORIZATION_FLOOR:
        raise NumericError("interacting chain factorizes; nearest-neighbour coupling has no effect")
    return order


def order_deviations(model: SpinChainModel, max_order: int | None = None) -> list[float]:
    """Conditional-probability gap for each candidate order ``0..max_order``."""
    R = model.R
    max_order = R if max_order is None else max_order
    tm = build_transfer_matrix(model)
    return [
        conditional_deviation(lambda n: marginal(model, n, tm).probs, ell, 2 * R + 1)
        for ell in range(max_order + 1)
    ]


# ---------------------------------------------------------------------------
# parameter scans


SCAN_COLUMNS = ("T", "B", "J", "alpha", "F1", "F12", "f", "xi", "delta_F", "c", "c_over_T2", "flags")


def _scan_point(point, scheme: DerivativeScheme) -> ThermometryReport:
    T, B, J, alpha = point
    model = SpinChainModel(B, (J, alpha * J), T)
    try:
        return thermometry_report(model, scheme, alpha=alpha)
    except OverflowRisk:
        nan = math.nan
        return ThermometryReport(T, B, model.J, nan, nan, nan, nan, nan, nan, nan, alpha, ("overflow_skipped",))


def scan_maps(
    points: Iterable[tuple[float, float, float, float]],
    scheme: DerivativeScheme = THERMAL,
    workers: int = 1,
) -> list[ThermometryReport]:
    """One report per ``(T, B, J, alpha)`` in input order; couplings are ``(J, alpha J)``."""
    points = list(points)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda pt: _scan_point(pt, scheme), points))
    return [_scan_point(pt, scheme) for pt in points]


def report_row(rep: ThermometryReport) -> dict:
    return {
        "T": rep.T,
        "B": rep.B,
        "J": rep.J[0],
        "alpha": rep.alpha,
        "F1": rep.F1,
        "F12": rep.F12,
        "f": rep.f,
        "xi": rep.xi,
        "delta_F": rep.delta_F,
        "c": rep.c,
        "c_over_T2": rep.c_over_T2,
        "flags": ";".join(rep.flags),
    }


def default_temperatures(n: int = 100, lo: float = 0.05, hi: float = 10.0) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def ising_points(
    temperatures: Sequence[float], b_over_j: Sequence[float], J: float = 1.0
) -> list[tuple[float, float, float, float]]:
    return [(float(T), float(r * J), float(J), 0.0) for r in b_over_j for T in temperatures]


NNN_PANELS = {"J=2B": 2.0, "J=-2B": -2.0, "J=0.1B": 0.1, "J=-0.1B": -0.1}


def nnn_points(
    temperatures: Sequence[float], alphas: Sequence[float], j_over_b: float, B: float = 1.0
) -> list[tuple[float, float, float, float]]:
    return [(float(T), B, j_over_b * B, float(a)) for a in alphas for T in temperatures]
