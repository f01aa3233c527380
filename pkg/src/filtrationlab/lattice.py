"""Exact discrete-time stochastic calculus on finite filtered probability spaces.

A space carries ``n`` atoms with strictly positive weights (the reference
measure) and two nested filtrations ``F`` and ``G``, each stored as an integer
array of cell labels with shape ``(T + 1, n)``.  Processes are arrays of the
same shape: row ``t`` is the value at time ``t`` on every atom.

Conventions
-----------
* ``X_{t-} = X_{t-1}`` for ``t >= 1`` and ``X_{0-} = X_0``.
* A process is predictable when its value at ``t`` is measurable at ``t - 1``
  (at ``t = 0``: measurable at 0).
* ``(H . X)_t = sum_{s=1..t} H_s (X_s - X_{s-1})``.
* On a finite space every local martingale is a martingale, so martingale
  tests are one-step conditional-drift tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Literal, Sequence

import numpy as np

Filtration = Literal["F", "G"]
Kind = Literal["raw", "optional", "predictable"]

MARTINGALE_TOL = 1e-9
IDENTITY_TOL = 1e-12
ZERO_TOL = 1e-13

INF = np.inf


class FiltrationError(ValueError):
    """Raised when a space, process or time violates a measurability rule."""


class MeasureError(ValueError):
    """Raised when a measure lacks full support or is not a probability."""


def positive(x) -> np.ndarray:
    """Strict positivity with a round-off guard."""
    return np.asarray(x) > ZERO_TOL


def _canonical(labels: np.ndarray) -> np.ndarray:
    out = np.empty(labels.shape, dtype=np.int64)
    for t, row in enumerate(labels):
        _, out[t] = np.unique(row, return_inverse=True)
    return out


def _refines(fine: np.ndarray, coarse: np.ndarray) -> bool:
    """True when every ``fine`` cell sits inside one ``coarse`` cell."""
    pairs = np.unique(np.stack([fine, coarse]), axis=1)
    return pairs.shape[1] == np.unique(fine).size


class FiniteFilteredSpace:
    """Atoms, reference weights and the two filtrations ``F`` within ``G``.

    Parameters
    ----------
    weights : array_like, shape (n,)
        Strictly positive weights summing to one.
    F, G : array_like, shape (T + 1, n)
        Cell labels per time.  Labels are canonicalised on construction.
    atoms : sequence of str, optional
        Human readable atom identifiers.
    """

    def __init__(self, weights, F, G, atoms: Sequence[str] | None = None):
        w = np.asarray(weights, dtype=float)
        F = _canonical(np.atleast_2d(np.asarray(F)))
        G = _canonical(np.atleast_2d(np.asarray(G)))
        if w.ndim != 1 or F.shape != G.shape or F.shape[1] != w.size:
            raise FiltrationError("weights must be (n,) and F, G must be (T+1, n)")
        if F.shape[0] < 2:
            raise FiltrationError("horizon must be at least 1")
        if np.any(w <= 0) or not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-12):
            raise MeasureError("weights must be strictly positive and sum to 1")
        for name, lab in (("F", F), ("G", G)):
            for t in range(lab.shape[0] - 1):
                if not _refines(lab[t + 1], lab[t]):
                    raise FiltrationError(f"{name} does not refine between t={t} and t={t + 1}")
        for t in range(F.shape[0]):
            if not _refines(G[t], F[t]):
                raise FiltrationError(f"F is not contained in G at t={t}")
        self.weights = w
        self.F = F
        self.G = G
        self.atoms = tuple(atoms) if atoms is not None else tuple(str(i) for i in range(w.size))
        if len(self.atoms) != w.size:
            raise FiltrationError("atoms and weights differ in length")
        for arr in (self.weights, self.F, self.G):
            arr.setflags(write=False)
        self._groups: dict[tuple[str, int], tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    @property
    def horizon(self) -> int:
        return self.F.shape[0] - 1

    @property
    def n(self) -> int:
        return self.weights.size

    @property
    def shape(self) -> tuple[int, int]:
        return self.F.shape

    def labels(self, filtration: Filtration, t: int) -> np.ndarray:
        return (self.F if filtration == "F" else self.G)[t]

    def _grouping(self, filtration: Filtration, t: int):
        key = (filtration, t)
        g = self._groups.get(key)
        if g is None:
            lab = self.labels(filtration, t)
            order = np.argsort(lab, kind="stable")
            starts = np.flatnonzero(np.r_[True, np.diff(lab[order]) != 0])
            g = (lab, order, starts)
            self._groups[key] = g
        return g

    def n_cells(self, filtration: Filtration, t: int) -> int:
        return self._grouping(filtration, t)[2].size

    def cells(self, filtration: Filtration, t: int) -> list[np.ndarray]:
        lab, order, starts = self._grouping(filtration, t)
        return np.split(order, starts[1:])

    def cell_sums(self, values: np.ndarray, filtration: Filtration, t: int) -> np.ndarray:
        """Per-cell sums, one row per cell (cells ordered by label)."""
        _, order, starts = self._grouping(filtration, t)
        return np.add.reduceat(np.asarray(values)[order], starts, axis=0)

    def expand(self, per_cell: np.ndarray, filtration: Filtration, t: int) -> np.ndarray:
        return per_cell[self.labels(filtration, t)]

    def is_measurable(self, x: np.ndarray, filtration: Filtration, t: int,
                      tol: float = IDENTITY_TOL) -> bool:
        x = np.asarray(x, dtype=float)
        lab = self.labels(filtration, t)
        k = self.n_cells(filtration, t)
        hi = np.full((k,) + x.shape[1:], -np.inf)
        lo = np.full((k,) + x.shape[1:], np.inf)
        np.maximum.at(hi, lab, x)
        np.minimum.at(lo, lab, x)
        scale = max(1.0, float(np.max(np.abs(x))) if x.size else 1.0)
        return bool(np.all(hi - lo <= tol * scale))

    def expectation(self, x, measure: np.ndarray | None = None) -> float | np.ndarray:
        w = self.weights if measure is None else measure
        return np.tensordot(w, np.asarray(x, dtype=float), axes=(0, 0))

    def process(self, values, filtration: Filtration = "F", kind: Kind = "optional",
                check: bool = True) -> "AdaptedProcess":
        """Build a tagged process, verifying its measurability class."""
        X = AdaptedProcess(self, np.asarray(values, dtype=float), filtration, kind)
        if check:
            X.check()
        return X


def check_measure(space: FiniteFilteredSpace, measure: np.ndarray | None) -> np.ndarray:
    if measure is None:
        return space.weights
    m = np.asarray(measure, dtype=float)
    if m.shape != space.weights.shape or np.any(m <= 0):
        raise MeasureError("measure must have full support on the atoms")
    if not np.isclose(m.sum(), 1.0, rtol=0, atol=1e-10):
        raise MeasureError(f"measure has total mass {m.sum()!r}")
    return m


def cond_exp(space: FiniteFilteredSpace, x, t: int, filtration: Filtration = "F",
             measure: np.ndarray | None = None) -> np.ndarray:
    """Conditional expectation of ``x`` given the ``filtration`` at time ``t``.

    ``x`` may carry trailing dimensions (a family of random variables); the
    result has the same shape and is constant on every cell.
    """
    if not 0 <= t <= space.horizon:
        raise ValueError(f"time {t} outside 0..{space.horizon}")
    w = check_measure(space, measure) if measure is not None else space.weights
    x = np.asarray(x, dtype=float)
    wx = x * w.reshape((-1,) + (1,) * (x.ndim - 1))
    den = space.cell_sums(w, filtration, t)
    if np.any(den <= 0):
        raise MeasureError("cell of zero weight")
    num = space.cell_sums(wx, filtration, t)
    per_cell = num / den.reshape((-1,) + (1,) * (x.ndim - 1))
    return space.expand(per_cell, filtration, t)


def _coarser(a: Filtration, b: Filtration) -> Filtration:
    return "G" if "G" in (a, b) else "F"


_KIND_RANK = {"predictable": 0, "optional": 1, "raw": 2}


@dataclass(frozen=True, eq=False)
class AdaptedProcess:
    """A process on a finite space with a filtration tag and a class tag."""

    space: FiniteFilteredSpace
    values: np.ndarray
    filtration: Filtration = "F"
    kind: Kind = "optional"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.space.shape:
            raise ValueError(f"process shape {v.shape} != {self.space.shape}")
        object.__setattr__(self, "values", v)

    # -- construction helpers -------------------------------------------------
    def _new(self, values, filtration=None, kind=None) -> "AdaptedProcess":
        return AdaptedProcess(self.space, values, filtration or self.filtration, kind or self.kind)

    @property
    def T(self) -> int:
        return self.space.horizon

    def __getitem__(self, t) -> np.ndarray:
        return self.values[t]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def lag(self) -> "AdaptedProcess":
        """``X_-``: the left-limit process (predictable)."""
        v = np.vstack([self.values[:1], self.values[:-1]])
        return self._new(v, kind="predictable")

    @property
    def delta(self) -> "AdaptedProcess":
        """``Delta X`` with ``Delta X_0 = 0``."""
        v = np.vstack([np.zeros_like(self.values[:1]), np.diff(self.values, axis=0)])
        return self._new(v, kind="raw" if self.kind == "raw" else "optional")

    # -- arithmetic ------------------------------------------------------------
    def _binary(self, other, op):
        if isinstance(other, AdaptedProcess):
            if other.space is not self.space:
                raise ValueError("processes live on different spaces")
            kind = max(self.kind, other.kind, key=_KIND_RANK.__getitem__)
            return AdaptedProcess(self.space, op(self.values, other.values),
                                  _coarser(self.filtration, other.filtration), kind)
        if np.isscalar(other):
            return self._new(op(self.values, float(other)))
        return self._new(op(self.values, np.asarray(other, dtype=float)), kind="raw")

    def __add__(self, o):
        return self._binary(o, np.add)

    def __radd__(self, o):
        return self._binary(o, lambda a, b: b + a)

    def __sub__(self, o):
        return self._binary(o, np.subtract)

    def __rsub__(self, o):
        return self._binary(o, lambda a, b: b - a)

    def __mul__(self, o):
        return self._binary(o, np.multiply)

    def __rmul__(self, o):
        return self._binary(o, lambda a, b: b * a)

    def __truediv__(self, o):
        return self._binary(o, np.divide)

    def __neg__(self):
        return self._new(-self.values)

    # -- measurability ---------------------------------------------------------
    def is_adapted(self, filtration: Filtration | None = None, tol: float = IDENTITY_TOL) -> bool:
        f = filtration or self.filtration
        return all(self.space.is_measurable(self.values[t], f, t, tol) for t in range(self.T + 1))

    def is_predictable(self, filtration: Filtration | None = None, tol: float = IDENTITY_TOL) -> bool:
        f = filtration or self.filtration
        return self.space.is_measurable(self.values[0], f, 0, tol) and all(
            self.space.is_measurable(self.values[t], f, t - 1, tol) for t in range(1, self.T + 1))

    def check(self) -> "AdaptedProcess":
        if self.kind == "optional" and not self.is_adapted():
            raise FiltrationError(f"process is not {self.filtration}-optional")
        if self.kind == "predictable" and not self.is_predictable():
            raise FiltrationError(f"process is not {self.filtration}-predictable")
        return self


def as_values(X) -> np.ndarray:
    return X.values if isinstance(X, AdaptedProcess) else np.asarray(X, dtype=float)


class RandomTime:
    """A ``{0, ..., T, inf}``-valued map on atoms with a filtration tag."""

    def __init__(self, space: FiniteFilteredSpace, value, filtration: Filtration = "G"):
        v = np.asarray(value, dtype=float).copy()
        if v.shape != (space.n,):
            raise ValueError("random time must have one value per atom")
        finite = np.isfinite(v)
        if np.any(v[finite] != np.round(v[finite])) or np.any(v < 0) or np.any(np.isnan(v)):
            raise ValueError("random time values must be nonnegative integers or inf")
        v[finite & (v > space.horizon)] = INF
        v.setflags(write=False)
        self.space = space
        self.value = v
        self.filtration = filtration

    def __repr__(self) -> str:
        return f"RandomTime({self.filtration}, {self.value.tolist()})"

    def indicator_le(self, t: int) -> np.ndarray:
        return self.value <= t

    def is_stopping_time(self, filtration: Filtration | None = None) -> bool:
        f = filtration or self.filtration
        return all(self.space.is_measurable(self.indicator_le(t).astype(float), f, t)
                   for t in range(self.space.horizon + 1))

    def check(self) -> "RandomTime":
        if not self.is_stopping_time():
            raise FiltrationError(f"not an {self.filtration} stopping time")
        return self

    def restrict(self, event) -> "RandomTime":
        """``tau_A``: equal to tau on ``A`` and to infinity elsewhere."""
        return RandomTime(self.space, np.where(np.asarray(event, bool), self.value, INF), self.filtration)

    def grid(self) -> np.ndarray:
        return np.arange(self.space.horizon + 1)[:, None]

    def before(self) -> np.ndarray:
        """``1_{[0, tau)}`` as an array."""
        return (self.grid() < self.value).astype(float)

    def after(self) -> np.ndarray:
        """``1_{[tau, inf)}`` as an array."""
        return (self.grid() >= self.value).astype(float)

    def up_to(self) -> np.ndarray:
        """``1_{[0, tau]}`` as a boolean array (membership of a predictable interval)."""
        return self.grid() <= self.value


def predictable_interval(times: Iterable[RandomTime]) -> np.ndarray:
    """Membership mask of ``union_n [0, tau_n]``."""
    mask = None
    for tau in times:
        m = tau.up_to()
        mask = m if mask is None else (mask | m)
    if mask is None:
        raise ValueError("at least one time is required")
    return mask


def project(X, kind: Literal["optional", "predictable"], target: Filtration = "F",
            measure: np.ndarray | None = None, space: FiniteFilteredSpace | None = None) -> AdaptedProcess:
    """Optional or predictable projection onto ``target``."""
    space = space or X.space
    v = as_values(X)
    out = np.empty_like(v)
    for t in range(space.horizon + 1):
        s = t if kind == "optional" or t == 0 else t - 1
        out[t] = cond_exp(space, v[t], s, target, measure)
    return AdaptedProcess(space, out, target, kind)


def dual_projection(A, kind: Literal["optional", "predictable"], target: Filtration = "F",
                    measure: np.ndarray | None = None, space: FiniteFilteredSpace | None = None) -> AdaptedProcess:
    """Dual optional or predictable projection of a finite-variation process."""
    space = space or A.space
    v = as_values(A)
    out = np.empty_like(v)
    out[0] = cond_exp(space, v[0], 0, target, measure)
    for t in range(1, space.horizon + 1):
        s = t if kind == "optional" else t - 1
        out[t] = out[t - 1] + cond_exp(space, v[t] - v[t - 1], s, target, measure)
    return AdaptedProcess(space, out, target, kind)


def doob_decomposition(X, target: Filtration | None = None, measure: np.ndarray | None = None):
    """``X = X_0 + M + A`` with ``M`` a martingale and ``A`` predictable, both null at 0."""
    target = target or X.filtration
    space = X.space
    v = as_values(X)
    A = np.zeros_like(v)
    for t in range(1, space.horizon + 1):
        A[t] = A[t - 1] + cond_exp(space, v[t] - v[t - 1], t - 1, target, measure)
    M = v - v[0] - A
    return (AdaptedProcess(space, M, target, "optional"),
            AdaptedProcess(space, A, target, "predictable"))


def stoch_integral(H, X: AdaptedProcess, check: bool = True) -> AdaptedProcess:
    """``(H . X)_t = sum_{s <= t} H_s Delta X_s``; ``H`` must be predictable."""
    space = X.space
    if np.isscalar(H):
        h = np.full(space.shape, float(H))
    else:
        h = as_values(H)
        if check and not AdaptedProcess(space, h, X.filtration, "predictable").is_predictable():
            raise FiltrationError("integrand is not predictable")
    inc = np.diff(X.values, axis=0) * h[1:]
    out = np.vstack([np.zeros((1, space.n)), np.cumsum(inc, axis=0)])
    return AdaptedProcess(space, out, X.filtration, "optional")


def brackets(X: AdaptedProcess, Y: AdaptedProcess, measure: np.ndarray | None = None,
             filtration: Filtration | None = None):
    """Square bracket ``[X, Y]`` and its dual predictable projection ``<X, Y>``."""
    f = filtration or _coarser(X.filtration, Y.filtration)
    sq = np.cumsum(X.delta.values * Y.delta.values, axis=0)
    square = AdaptedProcess(X.space, sq, f, "optional")
    return square, dual_projection(square, "predictable", f, measure)


def stoch_exp(X) -> np.ndarray | AdaptedProcess:
    """Stochastic exponential ``E(X)_t = prod_{s <= t} (1 + Delta X_s)``."""
    v = as_values(X)
    out = np.cumprod(np.vstack([np.ones((1,) + v.shape[1:]), 1.0 + np.diff(v, axis=0)]), axis=0)
    if isinstance(X, AdaptedProcess):
        return X._new(out, kind="optional")
    return out


def stoch_log(Y, window: np.ndarray | None = None) -> np.ndarray | AdaptedProcess:
    """Stochastic logarithm ``(1 / Y_-) . Y`` on a predictable window.

    Increments at ``(t, atom)`` outside ``window`` are frozen.  Inside it,
    ``Y_{t-1}`` must be positive.
    """
    v = as_values(Y)
    prev, inc = v[:-1], np.diff(v, axis=0)
    inside = np.ones(inc.shape, bool) if window is None else np.asarray(window, bool)[1:]
    if np.any(inside & ~positive(prev)):
        raise ValueError("stochastic logarithm of a process vanishing inside its window")
    step = np.where(inside, inc / np.where(inside, prev, 1.0), 0.0)
    out = np.vstack([np.zeros((1,) + v.shape[1:]), np.cumsum(step, axis=0)])
    if isinstance(Y, AdaptedProcess):
        return Y._new(out, kind="optional")
    return out


def stop(X, tau: RandomTime, mode: Literal["at", "before"] = "at"):
    """``X^tau`` (``mode='at'``) or ``X^{tau-}`` (``mode='before'``)."""
    v = as_values(X)
    t = np.arange(v.shape[0])[:, None]
    tv = tau.value[None, :]
    if mode == "at":
        idx = np.where(t <= tv, t, tv)
    else:
        idx = np.where(t < tv, t, np.maximum(tv - 1, 0))
    idx = idx.astype(np.int64).reshape(idx.shape + (1,) * (v.ndim - 2))
    out = np.take_along_axis(v, np.broadcast_to(idx, v.shape), axis=0)
    if isinstance(X, AdaptedProcess):
        return X._new(out, filtration=_coarser(X.filtration, tau.filtration), kind="optional")
    return out


@dataclass(frozen=True)
class MartingaleCheck:
    passed: bool
    residual: float

    def __bool__(self) -> bool:
        return self.passed


def drift_residual(space: FiniteFilteredSpace, values: np.ndarray, filtration: Filtration,
                   measure: np.ndarray | None = None, window: np.ndarray | None = None,
                   horizon: int | None = None, scale: bool = False) -> float:
    """Largest one-step conditional drift ``|E[Delta X_t 1_W | t - 1]|``.

    ``values`` may have trailing dimensions (a family of processes).  With
    ``scale`` the residual is divided by ``max(1, max |X|)``.
    """
    w = space.weights if measure is None else measure
    T = space.horizon if horizon is None else horizon
    values = np.asarray(values, dtype=float)
    res = 0.0
    extra = (1,) * (values.ndim - 2)
    for t in range(1, T + 1):
        inc = values[t] - values[t - 1]
        if window is not None:
            inc = inc * np.asarray(window[t], float).reshape((-1,) + extra)
        den = space.cell_sums(w, filtration, t - 1)
        num = space.cell_sums(inc * w.reshape((-1,) + extra), filtration, t - 1)
        drift = num / den.reshape((-1,) + extra)
        if drift.size:
            res = max(res, float(np.max(np.abs(drift))))
    if scale and values.size:
        res /= max(1.0, float(np.max(np.abs(values[:T + 1]))))
    return res


def is_martingale(X: AdaptedProcess, filtration: Filtration | None = None,
                  measure: np.ndarray | None = None, window=None,
                  tol: float = MARTINGALE_TOL, horizon: int | None = None) -> MartingaleCheck:
    """One-step drift test on the predictable ``window``.

    ``window`` is either a boolean ``(T + 1, n)`` membership mask or a
    sequence of stopping times ``tau_n`` standing for ``union_n [0, tau_n]``.
    Increments at times outside the window are ignored, which amounts to
    testing every stopped process ``X^{tau_n}``.
    """
    f = filtration or X.filtration
    if window is not None and not isinstance(window, np.ndarray):
        window = predictable_interval(window)
    r = drift_residual(X.space, X.values, f, measure, window, horizon)
    return MartingaleCheck(r <= tol, r)


def is_predictable_time(tau: RandomTime, filtration: Filtration | None = None) -> bool:
    """``{tau = t}`` measurable at ``t - 1`` for every ``t >= 1``."""
    f = filtration or tau.filtration
    space = tau.space
    if not space.is_measurable((tau.value == 0).astype(float), f, 0):
        return False
    return all(space.is_measurable((tau.value == t).astype(float), f, t - 1)
               for t in range(1, space.horizon + 1))


class DensityPair:
    """Density process ``q = dP/dQ`` on ``F_{t and T}`` with ``p = 1/q``.

    ``q`` is stored on the full time grid of the space and frozen after the
    analysis horizon ``T``.
    """

    def __init__(self, space: FiniteFilteredSpace, q_terminal, horizon: int | None = None,
                 filtration: Filtration = "F"):
        T = space.horizon if horizon is None else horizon
        qT = np.asarray(q_terminal, dtype=float)
        if not space.is_measurable(qT, filtration, T):
            raise FiltrationError("terminal density is not measurable at the horizon")
        if np.any(qT <= 0):
            raise MeasureError("density is not strictly positive")
        mass = float(space.weights @ qT)
        if abs(mass - 1.0) > 1e-10:
            raise MeasureError(f"density has mass {mass!r}, expected 1")
        q = np.empty(space.shape)
        for t in range(space.horizon + 1):
            q[t] = cond_exp(space, qT, min(t, T), filtration)
        self.space = space
        self.horizon = T
        self.filtration = filtration
        self.q = AdaptedProcess(space, q, filtration, "optional")
        self.p = AdaptedProcess(space, 1.0 / q, filtration, "optional")
        self.q_bar = stoch_log(self.q)
        self.p_bar = stoch_log(self.p)

    @classmethod
    def from_process(cls, space: FiniteFilteredSpace, q, horizon: int | None = None) -> "DensityPair":
        T = space.horizon if horizon is None else horizon
        d = cls(space, as_values(q)[T], T)
        if np.max(np.abs(d.q.values[:T + 1] - as_values(q)[:T + 1])) > 1e-9 * max(1.0, np.max(d.q.values)):
            raise MeasureError("process is not the martingale closed by its terminal value")
        return d

    @classmethod
    def identity(cls, space: FiniteFilteredSpace, horizon: int | None = None) -> "DensityPair":
        T = space.horizon if horizon is None else horizon
        return cls(space, np.ones(space.n), T)

    @property
    def measure(self) -> np.ndarray:
        """Atom weights of ``P`` (the density extended by its ``F_T`` value)."""
        return self.space.weights * self.q.values[self.horizon]


def girsanov_transform(X: AdaptedProcess, d: DensityPair,
                       form: Literal["optional", "predictable"] = "optional") -> AdaptedProcess:
    """Turn an ``(F, P)``-martingale into an ``(F, Q)``-martingale.

    ``optional``: ``X - q . [p, X]``.  ``predictable``: ``X - q_- . <p, X>^P``.
    """
    space = X.space
    dp = d.p.delta.values
    dX = X.delta.values
    q = d.q.values
    if form == "optional":
        corr = np.cumsum(q * dp * dX, axis=0)
    else:
        ang = dual_projection(AdaptedProcess(space, np.cumsum(dp * dX, axis=0), X.filtration),
                              "predictable", X.filtration, d.measure).values
        corr = np.vstack([np.zeros((1, space.n)), np.cumsum(d.q.lag.values[1:] * np.diff(ang, axis=0), axis=0)])
    return X._new(X.values - corr, kind="optional")


def spanning_martingales(space: FiniteFilteredSpace, filtration: Filtration = "F",
                         measure: np.ndarray | None = None, horizon: int | None = None) -> np.ndarray:
    """Closed martingales of the terminal cell indicators.

    Returns an array of shape ``(T_space + 1, n, k)`` whose column ``c`` is
    ``E[1_c | filtration_{t and T}]``.  They span every martingale on ``[0, T]``.
    """
    T = space.horizon if horizon is None else horizon
    lab = space.labels(filtration, T)
    k = space.n_cells(filtration, T)
    ind = np.zeros((space.n, k))
    ind[np.arange(space.n), lab] = 1.0
    out = np.empty((space.horizon + 1, space.n, k))
    for t in range(space.horizon + 1):
        out[t] = cond_exp(space, ind, min(t, T), filtration, measure)
    return out


def increment_martingales(space: FiniteFilteredSpace, filtration: Filtration = "F",
                          measure: np.ndarray | None = None, horizon: int | None = None) -> np.ndarray:
    """One-step martingales ``1_{t >= s}(1_c - P(c | s - 1))`` on each cell ``c`` at ``s``.

    A second spanning family, built from increments instead of terminal
    payoffs.  Shape ``(T_space + 1, n, k)``.
    """
    T = space.horizon if horizon is None else horizon
    w = space.weights if measure is None else measure
    cols = []
    for s in range(1, T + 1):
        lab = space.labels(filtration, s)
        k = space.n_cells(filtration, s)
        ind = np.zeros((space.n, k))
        ind[np.arange(space.n), lab] = 1.0
        jump = ind - cond_exp(space, ind, s - 1, filtration, w)
        path = np.zeros((space.horizon + 1, space.n, k))
        path[s:] = jump
        cols.append(path)
    if not cols:
        return np.zeros((space.horizon + 1, space.n, 0))
    return np.concatenate(cols, axis=2)
