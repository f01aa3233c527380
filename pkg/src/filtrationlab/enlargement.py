"""Condition (B), reductions and the Azema supermartingale of a random time.

Everything here is built from a space with filtrations ``F`` within ``G`` and
a ``G`` stopping time ``theta``.  The central object is :class:`AzemaBundle`,
holding ``S_t = Q(theta > t | F_t)`` together with its additive and
multiplicative decompositions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .lattice import (
    INF,
    IDENTITY_TOL,
    AdaptedProcess,
    FiltrationError,
    FiniteFilteredSpace,
    MartingaleCheck,
    RandomTime,
    as_values,
    brackets,
    cond_exp,
    doob_decomposition,
    drift_residual,
    dual_projection,
    is_martingale,
    is_predictable_time,
    positive,
    project,
    stoch_exp,
    stop,
)


class ConditionBError(ValueError):
    """``G`` carries information before ``theta`` that ``F`` does not."""

    def __init__(self, witness: "ConditionB"):
        super().__init__(f"condition (B) fails at t={witness.time} on atoms {list(witness.cell)}")
        self.witness = witness


@dataclass(frozen=True)
class ConditionB:
    holds: bool
    time: int | None = None
    cell: tuple[int, ...] = ()

    def __bool__(self) -> bool:
        return self.holds


def check_condition_B(space: FiniteFilteredSpace, theta: RandomTime) -> ConditionB:
    """Test that every ``G_t`` cell agrees with an ``F_t`` set on ``{t < theta}``.

    Since ``F_t`` is inside ``G_t``, this holds iff the survivors of each
    ``F_t`` cell lie in a single ``G_t`` cell.  On failure the survivors of
    the first split ``F_t`` cell are returned as witness.
    """
    tv = np.asarray(theta.value if isinstance(theta, RandomTime) else theta, float)
    for t in range(space.horizon + 1):
        alive = tv > t
        if not alive.any():
            continue
        f, g = space.F[t][alive], space.G[t][alive]
        pairs = np.unique(np.stack([f, g]), axis=1)
        if pairs.shape[1] != np.unique(f).size:
            labels, counts = np.unique(pairs[0], return_counts=True)
            bad = labels[counts > 1][0]
            cell = np.flatnonzero(alive & (space.F[t] == bad))
            return ConditionB(False, t, tuple(int(i) for i in cell))
    return ConditionB(True)


def fbar_labels(space: FiniteFilteredSpace, theta: RandomTime, t: int) -> np.ndarray:
    """Cell labels of the smallest sigma-field ``F_t`` extended off ``{t < theta}``.

    Survivors keep their ``F_t`` cell; atoms with ``theta <= t`` are split
    into singletons.
    """
    alive = theta.value > t
    lab = np.where(alive, space.F[t], 0).astype(np.int64)
    offset = space.n_cells("F", t)
    lab[~alive] = offset + np.arange(int((~alive).sum()))
    return lab


class EnlargementPair:
    """A space together with a ``G`` stopping time satisfying condition (B)."""

    def __init__(self, space: FiniteFilteredSpace, theta):
        if not isinstance(theta, RandomTime):
            theta = RandomTime(space, theta, "G")
        if not theta.is_stopping_time("G"):
            raise FiltrationError("theta is not a G stopping time")
        cb = check_condition_B(space, theta)
        if not cb:
            raise ConditionBError(cb)
        self.space = space
        self.theta = RandomTime(space, theta.value, "G")
        self.J = self.theta.before()
        self.H = self.theta.after()

    @property
    def horizon(self) -> int:
        return self.space.horizon


# ---------------------------------------------------------------------------
# reductions


def _survivor_lookup(space, theta_value, L, s, alive_after):
    """Value of ``L`` on the survivors of each ``F_s`` cell, 0 where none survive."""
    alive = theta_value > alive_after
    lab = space.labels("F", s)
    k = space.n_cells("F", s)
    lo = np.full(k, np.inf)
    hi = np.full(k, -np.inf)
    np.minimum.at(lo, lab[alive], L[alive])
    np.maximum.at(hi, lab[alive], L[alive])
    seen = np.isfinite(lo)
    if np.any(hi[seen] - lo[seen] > 1e-10 * max(1.0, float(np.max(np.abs(L))))):
        raise FiltrationError("process is not determined by F on the survivors")
    return np.where(seen, lo, 0.0)[lab]


def reduce(L, kind: Literal["optional", "predictable"], bundle: "AzemaBundle",
           method: Literal["projection", "lookup"] = "projection") -> AdaptedProcess:
    """``F`` reduction of a ``G`` process.

    ``optional``: ``L'`` with ``1_{[0,theta)} L = 1_{[0,theta)} L'``, set to 0
    off ``{S > 0}``.  ``predictable``: ``L'`` with ``1_{(0,theta]} L =
    1_{(0,theta]} L'``, set to 0 off ``{S_- > 0}``; at time 0 the optional
    rule is used.

    ``projection`` uses ``E[J L | F] / S``; ``lookup`` reads the value off the
    surviving atoms of each cell.  Both agree exactly under condition (B).
    """
    pair = bundle.pair
    space = pair.space
    v = as_values(L)
    J = pair.J
    S = bundle.S.values
    tv = pair.theta.value
    out = np.zeros_like(v)
    for t in range(space.horizon + 1):
        s = t if kind == "optional" or t == 0 else t - 1
        if method == "projection":
            num = cond_exp(space, J[s] * v[t], s, "F")
            ok = positive(S[s])
            out[t] = np.where(ok, num / np.where(ok, S[s], 1.0), 0.0)
        else:
            out[t] = _survivor_lookup(space, tv, v[t], s, s)
    return AdaptedProcess(space, out, "F", kind)


def reduce_time(tau: RandomTime, bundle: "AzemaBundle") -> RandomTime:
    """``F`` stopping time ``rho`` with ``{tau < theta} = {rho < theta}``, within ``{tau = rho}``.

    ``rho`` is the first ``t`` at which the atom's ``F_t`` cell has
    survivors, all of which satisfy ``tau = t``.
    """
    pair = bundle.pair
    space = pair.space
    tv = pair.theta.value
    rho = np.full(space.n, INF)
    for t in range(space.horizon + 1):
        alive = tv > t
        lab = space.labels("F", t)
        k = space.n_cells("F", t)
        n_alive = np.bincount(lab[alive], minlength=k)
        n_hit = np.bincount(lab[alive & (tau.value == t)], minlength=k)
        in_A = ((n_alive > 0) & (n_alive == n_hit))[lab]
        rho = np.where(np.isinf(rho) & in_A, t, rho)
    return RandomTime(space, rho, "F")


# ---------------------------------------------------------------------------
# Azema bundle


@dataclass(frozen=True, eq=False)
class AzemaBundle:
    """``S`` and every process derived from it.

    Attributes
    ----------
    S : Azema supermartingale, ``F``-optional.
    mart_part : martingale part ``Q`` of ``S = S_0 + Q - D``.
    D : dual predictable projection of ``1_{0 < theta <= t}``.
    pS : predictable projection of ``S``.
    Qcal, Dcal : factors of ``S = S_0 Qcal Dcal``.
    A_dual_opt : dual optional projection of ``1_{[theta, inf)}``.
    v : ``G`` compensator of ``theta``.
    B : dual predictable projection of ``Delta_theta Q 1_{theta <= t}``.
    """

    pair: EnlargementPair
    S: AdaptedProcess
    mart_part: AdaptedProcess
    D: AdaptedProcess
    pS: AdaptedProcess
    Qcal: AdaptedProcess
    Dcal: AdaptedProcess
    A_dual_opt: AdaptedProcess
    v: AdaptedProcess
    B: AdaptedProcess
    varsigma: RandomTime
    sigma3: RandomTime
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def space(self) -> FiniteFilteredSpace:
        return self.pair.space

    @property
    def J(self) -> np.ndarray:
        return self.pair.J

    @property
    def H(self) -> np.ndarray:
        return self.pair.H

    def varsigma_n(self, n: int) -> RandomTime:
        """``inf{s > 0 : S_s < 1/n}``."""
        return _first_time(self.space, ~(self.S.values >= 1.0 / n), start=1)

    def zeta_n(self, n: int) -> RandomTime:
        """``inf{t : pS_{t+1} <= 1/n}``, so that ``1/pS <= n`` on ``(0, zeta_n]``."""
        hit = np.zeros(self.space.shape, bool)
        hit[:-1] = self.pS.values[1:] <= 1.0 / n
        return _first_time(self.space, hit, start=0, filtration="F")

    def zeta_star(self) -> int:
        """Smallest ``n`` beyond which ``zeta_n`` no longer moves."""
        pos = self.pS.values[positive(self.pS.values)]
        return int(np.floor(1.0 / pos.min())) + 1 if pos.size else 1

    def invariant_residuals(self) -> dict[str, float]:
        if "residuals" not in self._cache:
            self._cache["residuals"] = _bundle_residuals(self)
        return self._cache["residuals"]


def _first_time(space, hit: np.ndarray, start: int = 0, filtration="F") -> RandomTime:
    hit = hit.copy()
    hit[:start] = False
    any_hit = hit.any(axis=0)
    first = np.where(any_hit, np.argmax(hit, axis=0), INF).astype(float)
    return RandomTime(space, first, filtration)


def _pred_exp(increments: np.ndarray) -> np.ndarray:
    """``prod_{s <= t}(1 + increment_s)`` with a zero row at ``t = 0``."""
    return np.cumprod(np.vstack([np.ones((1, increments.shape[1])), 1.0 + increments[1:]]), axis=0)


def _safe_div(a, b, mask):
    return np.where(mask, a / np.where(mask, b, 1.0), 0.0)


def azema_bundle(pair: EnlargementPair) -> AzemaBundle:
    space = pair.space
    J = AdaptedProcess(space, pair.J, "G", "optional")
    S = project(J, "optional", "F")
    M, A = doob_decomposition(S, "F")
    D = AdaptedProcess(space, -A.values, "F", "predictable")
    pS = project(S, "predictable", "F")

    s_prev = S.lag.values
    dQ = M.delta.values
    dD = D.delta.values
    pos_pS = positive(pS.values)
    pos_prev = positive(s_prev)

    Qcal = AdaptedProcess(space, _pred_exp(_safe_div(dQ, pS.values, pos_pS)), "F", "optional")
    Dcal = AdaptedProcess(space, _pred_exp(-_safe_div(dD, s_prev, pos_prev)), "F", "predictable")

    H = AdaptedProcess(space, pair.H, "G", "optional")
    A_opt = dual_projection(H, "optional", "F")

    H0 = pair.H * (pair.theta.value > 0)
    v = dual_projection(AdaptedProcess(space, H0, "G"), "predictable", "G")

    theta_at = (np.arange(space.horizon + 1)[:, None] == pair.theta.value).astype(float)
    B = dual_projection(AdaptedProcess(space, np.cumsum(theta_at * dQ, axis=0), "G"),
                        "predictable", "F")

    varsigma = _first_time(space, ~positive(S.values), start=1)
    sig3_hit = ~pos_pS & pos_prev
    sigma3 = _first_time(space, sig3_hit, start=1)
    return AzemaBundle(pair, S, M, D, pS, Qcal, Dcal, A_opt, v, B, varsigma, sigma3)


def compensator_formula(bundle: AzemaBundle) -> np.ndarray:
    """``v = int_0^{t and theta} (1/S_-) dD``."""
    S_prev = bundle.S.lag.values
    J_prev = np.vstack([bundle.J[:1], bundle.J[:-1]])
    inc = _safe_div(bundle.D.delta.values, S_prev, positive(S_prev)) * J_prev
    inc[0] = 0.0
    return np.cumsum(inc, axis=0)


def qcal_limit(bundle: AzemaBundle, n: int | None = None) -> np.ndarray:
    """``E((1/pS) . Q)`` stopped at ``zeta_n``; stationary for ``n >= zeta_star``."""
    n = bundle.zeta_star() if n is None else n
    z = bundle.zeta_n(n).value
    t = np.arange(bundle.space.horizon + 1)[:, None]
    inside = (t >= 1) & (t <= z)
    inc = _safe_div(bundle.mart_part.delta.values, bundle.pS.values, inside)
    return _pred_exp(inc)


def _bundle_residuals(b: AzemaBundle) -> dict[str, float]:
    space = b.space
    S, pS, Q, D = b.S.values, b.pS.values, b.mart_part.values, b.D.values
    S_prev = b.S.lag.values
    dQ, dD = b.mart_part.delta.values, b.D.delta.values
    r: dict[str, float] = {}

    def mx(a):
        a = np.asarray(a, float)
        return float(np.max(np.abs(a))) if a.size else 0.0

    r["doob"] = mx(S - (S[0] + Q - D))
    r["pS_from_mart"] = mx((pS - (S - dQ))[1:])
    r["pS_from_drift"] = mx((pS - (S_prev - dD))[1:])
    r["pS_below_S_prev"] = max(0.0, float(np.max(pS[1:] - S_prev[1:])))
    zero = ~positive(pS)
    r["mart_flat_on_pS_zero"] = mx(np.where(zero, dQ, 0.0))

    pos = positive(pS)
    up = _pred_exp(_safe_div(dD, pS, pos))
    down = _pred_exp(-_safe_div(dD, S_prev, pos))
    r["mult_decomposition"] = mx(np.where(pos, up * down - 1.0, 0.0))
    r["product"] = mx(S - S[0] * b.Qcal.values * b.Dcal.values)
    r["Qcal_limit"] = mx(qcal_limit(b) - b.Qcal.values)
    r["Qcal_limit_stable"] = mx(qcal_limit(b, 2 * b.zeta_star()) - b.Qcal.values)

    tv = b.pair.theta.value
    mid = (tv > 0) & np.isfinite(tv)
    if mid.any():
        s_before = S[tv[mid].astype(int) - 1, np.flatnonzero(mid)]
        r["S_prev_at_theta"] = 0.0 if np.all(positive(s_before)) else 1.0
    else:
        r["S_prev_at_theta"] = 0.0

    r["comp_formula"] = mx(b.v.values - compensator_formula(b))
    r["comp_martingale"] = drift_residual(space, b.H - b.v.values, "G")
    r["ejeu"] = mx([cond_exp(space, b.J[t - 1], t - 1) - S_prev[t] for t in range(1, space.horizon + 1)])
    r["D_dual"] = mx(dual_projection(AdaptedProcess(space, b.H * (tv > 0), "G"), "predictable", "F").values - D)

    # 1/pS <= n on (0, zeta_n]
    worst = 0.0
    for n in sorted({1, 2, 5, b.zeta_star()}):
        z = b.zeta_n(n).value
        t = np.arange(space.horizon + 1)[:, None]
        inside = (t >= 1) & (t <= z)
        if inside.any():
            worst = max(worst, float(np.max(np.where(inside, 1.0 / np.where(inside, pS, 1.0), 0.0))) - n)
    r["Sp_bound"] = max(0.0, worst)

    # {S_- > 0} \ {pS > 0} = [sigma3]
    t = np.arange(space.horizon + 1)[:, None]
    gap = positive(S_prev) & ~positive(pS)
    gap[0] = False
    graph = t == b.sigma3.value
    r["sigma3_graph"] = float(np.any(gap != graph))
    s3, vs = b.sigma3.value, b.varsigma.value
    fin = np.isfinite(s3)
    r["sigma3_order"] = float(np.any(s3 < vs) or np.any(s3[fin] != vs[fin]))
    r["sigma3_predictable"] = 0.0 if is_predictable_time(b.sigma3) else 1.0
    alt = _first_time(space, positive(dD) & (np.abs(S_prev - dD) <= IDENTITY_TOL), start=1)
    r["sigma3_alt"] = float(np.any(alt.value != s3))
    window = positive(S_prev)
    dcal_zero = _first_time(space, window & ~positive(b.Dcal.values), start=1)
    r["sigma3_dcal"] = float(np.any(dcal_zero.value != s3))

    # D increments equal S_- times the predictable reduction of the v increments
    dv = b.v.delta.values
    red = reduce(dv, "predictable", b).values
    r["inten"] = mx(np.where(positive(S_prev), red * S_prev - dD, 0.0)[1:])
    return r


# ---------------------------------------------------------------------------
# Jeulin-Yor and the invariance lemma


def jeulin_yor(bundle: AzemaBundle, Qm) -> tuple[AdaptedProcess, AdaptedProcess]:
    """Compensated ``Qm^{theta-}`` and ``Qm^{theta}`` for an ``(F, Q)`` martingale ``Qm``.

    Returns ``(before, at)``, both ``(G, Q)`` martingales.
    """
    space = bundle.space
    Qm = Qm if isinstance(Qm, AdaptedProcess) else AdaptedProcess(space, Qm, "F")
    _, angle = brackets(bundle.S, Qm)
    dB = dual_projection(AdaptedProcess(
        space, np.cumsum((np.arange(space.horizon + 1)[:, None] == bundle.pair.theta.value)
                         * Qm.delta.values, axis=0), "G"), "predictable", "F").delta.values
    S_prev = bundle.S.lag.values
    J_prev = np.vstack([bundle.J[:1], bundle.J[:-1]])
    scale = _safe_div(J_prev, S_prev, positive(S_prev))
    scale[0] = 0.0
    drift_before = np.cumsum(scale * angle.delta.values, axis=0)
    drift_at = np.cumsum(scale * (angle.delta.values + dB), axis=0)
    theta = bundle.pair.theta
    before = stop(Qm, theta, "before").values - drift_before
    at = stop(Qm, theta, "at").values - drift_at
    return (AdaptedProcess(space, before, "G", "optional"),
            AdaptedProcess(space, at, "G", "optional"))


@dataclass(frozen=True)
class LemmaCheck:
    premise: MartingaleCheck
    conclusion: MartingaleCheck

    @property
    def consistent(self) -> bool:
        return (not self.premise.passed) or self.conclusion.passed


def sk_process(bundle: AzemaBundle, K) -> np.ndarray:
    """``S_- . K + [S, K]``, whose increment is ``S_t Delta K_t``."""
    k = as_values(K)
    inc = np.vstack([np.zeros((1, bundle.space.n)), bundle.S.values[1:] * np.diff(k, axis=0)])
    return np.cumsum(inc, axis=0)


def invariance_lemma(bundle: AzemaBundle, K, tol: float = 1e-10) -> LemmaCheck:
    """Forward direction: ``S_- . K + [S, K]`` martingale on ``{S_- > 0}`` gives ``K^{theta-}`` a ``G`` martingale."""
    space = bundle.space
    window = positive(bundle.S.lag.values)
    p = drift_residual(space, sk_process(bundle, K), "F", window=window)
    c = drift_residual(space, stop(as_values(K), bundle.pair.theta, "before"), "G")
    return LemmaCheck(MartingaleCheck(p <= tol, p), MartingaleCheck(c <= tol, c))


@dataclass(frozen=True)
class ConverseCheck:
    jump_free: bool
    reduction_condition: MartingaleCheck
    left_limit_residual: float

    @property
    def passed(self) -> bool:
        return self.reduction_condition.passed and self.left_limit_residual <= IDENTITY_TOL * 100


def invariance_lemma_converse(bundle: AzemaBundle, M, tol: float = 1e-10) -> ConverseCheck:
    """Converse: a ``G`` martingale without jump at ``theta`` reduces to a solution of the ``F`` condition."""
    space = bundle.space
    m = as_values(M)
    tv = bundle.pair.theta.value
    fin = np.isfinite(tv) & (tv > 0)
    idx = np.flatnonzero(fin)
    ti = tv[fin].astype(int)
    jump_free = bool(np.all(np.abs(m[ti, idx] - m[ti - 1, idx]) <= 1e-12))
    K = reduce(m, "optional", bundle)
    window = positive(bundle.S.lag.values)
    r = drift_residual(space, sk_process(bundle, K), "F", window=window)
    lhs = np.where(window, K.lag.values, 0.0)
    rhs = reduce(np.vstack([m[:1], m[:-1]]), "predictable", bundle).values
    left = float(np.max(np.abs(np.where(window, lhs - rhs, 0.0))[1:])) if space.horizon else 0.0
    return ConverseCheck(jump_free, MartingaleCheck(r <= tol, r), left)
