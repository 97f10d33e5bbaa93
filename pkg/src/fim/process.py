"""Stationary finite-alphabet processes of finite Markov order.

A model is described by its conditional table ``P(x_{k+1} | x_{k-M+1:k})``
stored as an array of shape ``(d,) * (M + 1)``: the first ``M`` axes index
the history (oldest symbol first) and the last axis the next symbol.
Window distributions use the same convention, ``probs[x_1, ..., x_n]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import NonErgodic, SizeOverflow, ValidationError

DEFAULT_CAP = 2**24
NULL_HISTORY = 1e-12
NORMALIZATION_TOL = 1e-12

TableFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Alphabet:
    size: int

    def __post_init__(self):
        if self.size < 2:
            raise ValidationError(f"alphabet size must be >= 2, got {self.size}")

    def __iter__(self) -> Iterator[int]:
        return iter(range(self.size))


@dataclass(frozen=True, eq=False)
class FiniteMarkovModel:
    """Parameterized stationary process with a declared Markov order.

    ``table_fn(theta)`` returns the conditional table; ``dtable_fn(theta)``,
    when given, returns its derivatives with shape ``(p,) + table.shape``.
    """

    name: str
    alphabet: Alphabet
    order: int
    theta: tuple[float, ...]
    theta_domain: tuple[tuple[float, float], ...]
    table_fn: TableFn = field(repr=False)
    dtable_fn: TableFn | None = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "theta", tuple(float(t) for t in np.atleast_1d(self.theta)))
        object.__setattr__(
            self, "theta_domain", tuple((float(lo), float(hi)) for lo, hi in self.theta_domain)
        )
        if self.order < 0:
            raise ValidationError("Markov order must be non-negative")
        if len(self.theta) == 0:
            raise ValidationError("theta must have at least one component")
        if len(self.theta_domain) != len(self.theta):
            raise ValidationError("theta_domain must have one interval per theta component")
        for t, (lo, hi) in zip(self.theta, self.theta_domain):
            if not lo <= hi:
                raise ValidationError(f"empty theta interval [{lo}, {hi}]")
            if not lo <= t <= hi:
                raise ValidationError(f"theta component {t} outside [{lo}, {hi}]")
        table = self.conditional
        expected = (self.d,) * (self.order + 1)
        if table.shape != expected:
            raise ValidationError(f"conditional table has shape {table.shape}, expected {expected}")
        if np.any(table < 0) or not np.all(np.isfinite(table)):
            raise ValidationError("conditional probabilities must be finite and non-negative")
        if np.max(np.abs(table.sum(axis=-1) - 1.0)) > NORMALIZATION_TOL:
            raise ValidationError("conditional rows must sum to one")

    @property
    def d(self) -> int:
        return self.alphabet.size

    @property
    def p(self) -> int:
        return len(self.theta)

    @property
    def theta_array(self) -> np.ndarray:
        return np.asarray(self.theta, dtype=float)

    @cached_property
    def conditional(self) -> np.ndarray:
        table = np.asarray(self.table_fn(self.theta_array), dtype=float)
        table.setflags(write=False)
        return table

    def conditional_derivative(self) -> np.ndarray | None:
        if self.dtable_fn is None:
            return None
        return np.asarray(self.dtable_fn(self.theta_array), dtype=float)

    def with_theta(self, theta) -> FiniteMarkovModel:
        return replace(self, theta=tuple(np.atleast_1d(np.asarray(theta, dtype=float))))

    def prob(self, history: Sequence[int], x: int) -> float:
        if len(history) != self.order:
            raise ValidationError(f"history must have length {self.order}")
        return float(self.conditional[tuple(history) + (x,)])


@dataclass(frozen=True)
class WindowDistribution:
    """Joint law of ``n`` consecutive symbols; ``probs[x_1, ..., x_n]``."""

    probs: np.ndarray
    d: int

    @property
    def n(self) -> int:
        return self.probs.ndim

    def __getitem__(self, key) -> float:
        return float(self.probs[tuple(key)])

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {idx: float(v) for idx, v in np.ndenumerate(self.probs)}

    def drop_last(self) -> WindowDistribution:
        return WindowDistribution(self.probs.sum(axis=-1), self.d)

    def drop_first(self) -> WindowDistribution:
        return WindowDistribution(self.probs.sum(axis=0), self.d)


@dataclass(frozen=True)
class EntropyReport:
    h: float
    E: float
    joint_entropies: tuple[float, ...]
    residual: float

    @property
    def linear_law_holds(self) -> bool:
        return self.residual <= 1e-9


@dataclass(frozen=True)
class MarkovOrderCheck:
    ok: bool
    max_deviation: float
    minimality_deviation: float | None

    def __bool__(self) -> bool:
        return self.ok


# ---------------------------------------------------------------------------
# stationary law and windows


def lifted_transition(table: np.ndarray) -> np.ndarray:
    """Row-stochastic matrix of the chain on length-M histories."""
    d = table.shape[-1]
    order = table.ndim - 1
    n_states = d**order
    flat = table.reshape(n_states, d)
    T = np.zeros((n_states, n_states))
    rows = np.repeat(np.arange(n_states), d)
    cols = (rows * d + np.tile(np.arange(d), n_states)) % n_states
    np.add.at(T, (rows, cols), flat.ravel())
    return T


def _power_stationary(T: np.ndarray, tol: float = 1e-14, max_iter: int = 10**6) -> np.ndarray:
    pi = np.full(T.shape[0], 1.0 / T.shape[0])
    for _ in range(max_iter):
        nxt = pi @ T
        if np.abs(nxt - pi).sum() < tol:
            return nxt / nxt.sum()
        pi = nxt
    raise NonErgodic("power iteration for the stationary law did not converge")


def stationary_vector(T: np.ndarray) -> np.ndarray:
    """Unique stationary row vector of a row-stochastic matrix."""
    w, v = np.linalg.eig(T.T)
    on_circle = np.abs(np.abs(w) - 1.0) < 1e-10
    if on_circle.sum() != 1:
        raise NonErgodic(
            f"{int(on_circle.sum())} eigenvalues on the unit circle; chain is reducible or periodic"
        )
    vec = np.real(v[:, np.argmax(on_circle)])
    vec = vec / vec.sum()
    if np.any(vec < -1e-12) or not np.all(np.isfinite(vec)):
        vec = _power_stationary(T)
    vec = np.clip(vec, 0.0, None)
    return vec / vec.sum()


def stationary_distribution(model: FiniteMarkovModel) -> WindowDistribution:
    """Stationary law over length-M histories (a 0-d array when M = 0)."""
    if model.order == 0:
        return WindowDistribution(np.array(1.0), model.d)
    pi = stationary_vector(lifted_transition(model.conditional))
    return WindowDistribution(pi.reshape((model.d,) * model.order), model.d)


def _check_size(d: int, n: int, cap: int) -> None:
    if d**n > cap:
        raise SizeOverflow(f"{d}^{n} joint entries exceed the cap of {cap}")


def extend_window(probs: np.ndarray, table: np.ndarray, steps: int) -> np.ndarray:
    """Append ``steps`` symbols to a window of length >= M using the conditional table."""
    for _ in range(steps):
        probs = probs[..., None] * table
    return probs


def window_distribution(
    model: FiniteMarkovModel, n: int, cap: int = DEFAULT_CAP
) -> WindowDistribution:
    if n < 1:
        raise ValidationError("window length must be >= 1")
    _check_size(model.d, n, cap)
    pi = stationary_distribution(model).probs
    M = model.order
    if n <= M:
        return WindowDistribution(pi.sum(axis=tuple(range(n, M))), model.d)
    return WindowDistribution(extend_window(pi, model.conditional, n - M), model.d)


# ---------------------------------------------------------------------------
# Markov order and entropy


def conditional_deviation(
    window: Callable[[int], np.ndarray], order: int, probe_depth: int, floor: float = NULL_HISTORY
) -> float:
    """Largest gap between full-history and truncated conditionals up to ``probe_depth``.

    ``window(n)`` must return the stationary joint law of ``n`` symbols.
    Histories with probability at most ``floor`` are ignored.
    """
    short = window(order + 1) if order > 0 else None
    if order == 0:
        single = window(1)
    worst = 0.0
    for n in range(max(order, 1), probe_depth + 1):
        if n == order:
            continue
        joint = window(n + 1)
        hist = joint.sum(axis=-1)
        mask = hist > floor
        with np.errstate(divide="ignore", invalid="ignore"):
            full = joint / hist[..., None]
            if order == 0:
                trunc = single
            else:
                trunc = short / short.sum(axis=-1, keepdims=True)
        gap = np.abs(full - trunc)[mask]
        if gap.size:
            worst = max(worst, float(gap.max()))
    return worst


def verify_markov_order(
    model: FiniteMarkovModel,
    claimed_M: int,
    probe_depth: int,
    tol: float = 1e-9,
    cap: int = DEFAULT_CAP,
) -> MarkovOrderCheck:
    if claimed_M < 0:
        raise ValidationError("claimed order must be non-negative")
    if probe_depth < claimed_M + 1:
        raise ValidationError("probe_depth must be at least claimed_M + 1")
    _check_size(model.d, probe_depth + 1, cap)
    cache: dict[int, np.ndarray] = {}

    def window(n: int) -> np.ndarray:
        if n not in cache:
            cache[n] = window_distribution(model, n, cap).probs
        return cache[n]

    return check_order(window, claimed_M, probe_depth, tol)


def check_order(
    window: Callable[[int], np.ndarray], claimed_M: int, probe_depth: int, tol: float
) -> MarkovOrderCheck:
    dev = conditional_deviation(window, claimed_M, probe_depth)
    if claimed_M == 0:
        return MarkovOrderCheck(dev <= tol, dev, None)
    below = conditional_deviation(window, claimed_M - 1, probe_depth)
    return MarkovOrderCheck(dev <= tol and below > tol, dev, below)


def measure_markov_order(
    window: Callable[[int], np.ndarray], max_order: int, probe_depth: int, tol: float
) -> int | None:
    """Smallest order whose truncated conditionals match up to ``probe_depth``."""
    for ell in range(max_order + 1):
        if conditional_deviation(window, ell, probe_depth) <= tol:
            return ell
    return None


def shannon_entropy(probs: np.ndarray) -> float:
    p = probs[probs > 0]
    return float(-np.sum(p * np.log(p)))


def entropy_report(model: FiniteMarkovModel, n_max: int, cap: int = DEFAULT_CAP) -> EntropyReport:
    M = model.order
    if n_max < M + 2:
        raise ValidationError(f"n_max must be >= M + 2 = {M + 2}")
    _check_size(model.d, n_max, cap)
    H = [0.0] + [shannon_entropy(window_distribution(model, n, cap).probs) for n in range(1, n_max + 1)]
    h = H[M + 1] - H[M]
    E = H[M] - M * h
    residual = max(abs(H[n] - n * h - E) for n in range(max(M, 1), n_max + 1))
    return EntropyReport(h=h, E=E, joint_entropies=tuple(H[1:]), residual=residual)


# ---------------------------------------------------------------------------
# builtin models


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def toy_sub(theta: float = 0.5) -> FiniteMarkovModel:
    """Two-state chain whose second row is ``(1 - sqrt(theta), sqrt(theta))``."""

    def table(th):
        t = th[0]
        r = math.sqrt(t)
        return np.array([[t, 1.0 - t], [1.0 - r, r]])

    def dtable(th):
        t = th[0]
        g = 0.5 / math.sqrt(t) if t > 0 else math.inf
        return np.array([[[1.0, -1.0], [-g, g]]])

    return FiniteMarkovModel("toy-sub", Alphabet(2), 1, (theta,), ((0.0, 1.0),), table, dtable)


def toy_super(theta: float = 0.7) -> FiniteMarkovModel:
    """Two-state chain whose second row is ``(1 - exp(-theta/3), exp(-theta/3))``."""

    def table(th):
        t = th[0]
        e = math.exp(-t / 3.0)
        return np.array([[t, 1.0 - t], [1.0 - e, e]])

    def dtable(th):
        e = math.exp(-th[0] / 3.0) / 3.0
        return np.array([[[1.0, -1.0], [e, -e]]])

    return FiniteMarkovModel("toy-super", Alphabet(2), 1, (theta,), ((0.0, 1.0),), table, dtable)


def iid_bernoulli(theta: float = 0.3) -> FiniteMarkovModel:
    """Independent symbols with ``P(1) = theta``."""
    return FiniteMarkovModel(
        "iid-bernoulli",
        Alphabet(2),
        0,
        (theta,),
        ((0.0, 1.0),),
        lambda th: np.array([1.0 - th[0], th[0]]),
        lambda th: np.array([[-1.0, 1.0]]),
    )


def logistic_chain(theta: Sequence[float] = (0.3, -1.2)) -> FiniteMarkovModel:
    """Two-parameter binary chain, ``P(1 | h) = sigmoid(a + b h)``."""

    def table(th):
        s = _sigmoid(th[0] + th[1] * np.arange(2))
        return np.stack([1.0 - s, s], axis=-1)

    def dtable(th):
        s = _sigmoid(th[0] + th[1] * np.arange(2))
        g = s * (1.0 - s)
        da = np.stack([-g, g], axis=-1)
        db = da * np.arange(2)[:, None]
        return np.stack([da, db])

    return FiniteMarkovModel(
        "logistic-2p", Alphabet(2), 1, tuple(theta), ((-10.0, 10.0), (-10.0, 10.0)), table, dtable
    )


def logistic_order2(theta: float = 0.8) -> FiniteMarkovModel:
    """Binary process of order 2, ``P(1 | h1, h2) = sigmoid(theta (2 h2 - 1) + 0.6 (2 h1 - 1) - 0.2)``."""
    spins = 2 * np.arange(2) - 1.0

    def table(th):
        z = th[0] * spins[None, :] + 0.6 * spins[:, None] - 0.2
        s = _sigmoid(z)
        return np.stack([1.0 - s, s], axis=-1)

    def dtable(th):
        s = _sigmoid(th[0] * spins[None, :] + 0.6 * spins[:, None] - 0.2)
        g = s * (1.0 - s) * spins[None, :]
        return np.stack([-g, g], axis=-1)[None]

    return FiniteMarkovModel("logistic-order2", Alphabet(2), 2, (theta,), ((-4.0, 4.0),), table, dtable)


BUILTINS: dict[str, Callable[..., FiniteMarkovModel]] = {
    "toy-sub": toy_sub,
    "toy-super": toy_super,
    "iid-bernoulli": iid_bernoulli,
    "logistic-2p": logistic_chain,
    "logistic-order2": logistic_order2,
}


def builtin_model(name: str, theta=None) -> FiniteMarkovModel:
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ValidationError(f"unknown builtin model {name!r}; choose from {sorted(BUILTINS)}") from None
    model = factory()
    return model if theta is None else model.with_theta(theta)


def _parse_history(key: str, order: int, d: int) -> tuple[int, ...]:
    parts = key.split(",") if "," in key else list(key)
    if order == 0 and key == "":
        return ()
    if len(parts) != order:
        raise ValidationError(f"history {key!r} does not have length {order}")
    hist = tuple(int(c) for c in parts)
    if any(not 0 <= c < d for c in hist):
        raise ValidationError(f"history {key!r} uses symbols outside 0..{d - 1}")
    return hist


def model_from_dict(data: Mapping) -> FiniteMarkovModel:
    """Build a model from the JSON model-definition schema."""
    kind = data.get("kind", "builtin" if "builtin" in data else "table")
    theta = data.get("theta")
    if kind == "builtin":
        model = builtin_model(data["builtin"], theta)
        if "theta_domain" in data:
            model = replace(model, theta_domain=tuple(map(tuple, data["theta_domain"])))
        for key, attr in (("alphabet_size", "d"), ("order", "order")):
            if key in data and data[key] != getattr(model, attr):
                raise ValidationError(f"{key}={data[key]} conflicts with builtin {model.name}")
        return model
    if kind != "table":
        raise ValidationError(f"unknown model kind {kind!r}")
    try:
        d = int(data["alphabet_size"])
        order = int(data["order"])
        rows = data["table"]
    except KeyError as exc:
        raise ValidationError(f"table model missing field {exc}") from None
    table = np.full((d,) * (order + 1), np.nan)
    for key, probs in rows.items():
        table[_parse_history(key, order, d)] = probs
    if np.isnan(table).any():
        raise ValidationError("table model must define every history")
    theta = theta if theta is not None else [0.0]
    domain = data.get("theta_domain") or [[-math.inf, math.inf]] * len(theta)
    table.setflags(write=False)
    return FiniteMarkovModel(
        data.get("name", "table"),
        Alphabet(d),
        order,
        tuple(theta),
        tuple(map(tuple, domain)),
        lambda th: table,
        lambda th: np.zeros((len(th),) + table.shape),
    )


def load_model(source: str, theta=None) -> FiniteMarkovModel:
    """Resolve a builtin name or a path to a JSON model definition."""
    if source in BUILTINS:
        return builtin_model(source, theta)
    path = Path(source)
    if not path.is_file():
        raise ValidationError(f"{source!r} is neither a builtin model nor a readable file")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid model file {source}: {exc}") from None
    if theta is not None:
        data = {**data, "theta": list(np.atleast_1d(theta))}
    return model_from_dict(data)
