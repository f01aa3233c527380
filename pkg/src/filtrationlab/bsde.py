"""Counterparty-risk BSDE on a finite tree: full and reduced backward solvers.

Full equation, in ``(G, Q)`` on ``[0, theta and T]``::

    Y_t = Z^{theta-}_t + sum_{s <= t} J_s (g_s(Z_{s-1}) + (G_s - Z_{s-1}) dv_s)

is a martingale, with ``Z_T = 0`` on ``{theta > T}``.  ``dv`` are the
increments of the ``G`` compensator of ``theta``; ``g`` integrates against
unit time steps.  The reduced equations replace ``(G, dv, g)`` by their
``F`` reductions and ask, with ``U_bar = U + sum drift'``, that

* ``S_- . U_bar + [S, U_bar]`` is an ``(F, Q)`` martingale on ``{S_- > 0}``, or
* ``U_bar`` is an ``(F, P)`` martingale on ``{S_- > 0}`` for an invariance ``P``.

Each backward step solves ``z (1 + dv) = m + G dv + g(z)`` by fixed-point
iteration, where ``m`` is the conditional mean of the next value on the
survivors.  Where nobody survives the next step, ``m = 0``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .enlargement import AzemaBundle, reduce
from .lattice import (
    MARTINGALE_TOL,
    AdaptedProcess,
    DensityPair,
    as_values,
    cond_exp,
    drift_residual,
    positive,
    stop,
)


class ConvergenceError(RuntimeError):
    """The one-step fixed point did not converge."""


# ---------------------------------------------------------------------------
# drivers


@dataclass(frozen=True)
class Driver:
    """Funding coefficient ``g_t(z, x)`` evaluated on arrays.

    ``name`` selects the formula, ``dt`` scales it::

        zero     0
        linear   dt (-rate z + coupon x)
        funding  dt (-rate z - borrow (z - x)^+ + lend (x - z)^+)
        smooth   dt (-rate z + amp tanh(z) + coupon x)
    """

    name: str = "zero"
    rate: float = 0.0
    coupon: float = 0.0
    borrow: float = 0.0
    lend: float = 0.0
    amp: float = 0.0
    dt: float = 1.0

    def __post_init__(self):
        if self.name not in _FORMULAS:
            raise ValueError(f"unknown driver {self.name!r}")

    def __call__(self, t: int, z: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.dt * _FORMULAS[self.name](self, z, x)

    @property
    def lipschitz(self) -> float:
        return self.dt * (abs(self.rate) + abs(self.borrow) + abs(self.lend) + abs(self.amp))

    def to_json(self) -> dict:
        return {k: getattr(self, k) for k in ("name", "rate", "coupon", "borrow", "lend", "amp", "dt")}


_FORMULAS: dict[str, Callable] = {
    "zero": lambda d, z, x: np.zeros_like(z),
    "linear": lambda d, z, x: -d.rate * z + d.coupon * x,
    "funding": lambda d, z, x: (-d.rate * z - d.borrow * np.maximum(z - x, 0.0)
                                + d.lend * np.maximum(x - z, 0.0)),
    "smooth": lambda d, z, x: -d.rate * z + d.amp * np.tanh(z) + d.coupon * x,
}


def make_driver(cfg: dict | Driver | None) -> Driver:
    if cfg is None:
        return Driver()
    if isinstance(cfg, Driver):
        return cfg
    return Driver(**cfg)


@dataclass
class BsdeSpec:
    """Driver, ``G``-predictable recovery and covariate, analysis horizon."""

    driver: Driver
    recovery: np.ndarray
    covariate: np.ndarray | None = None
    horizon: int | None = None
    max_iter: int = 100
    tol: float = 1e-12
    damping: float = 1.0

    def covariate_values(self) -> np.ndarray:
        return np.zeros_like(self.recovery) if self.covariate is None else np.asarray(self.covariate, float)

    def validate(self, bundle: AzemaBundle) -> "BsdeSpec":
        space = bundle.space
        for name, arr in (("recovery", self.recovery), ("covariate", self.covariate_values())):
            proc = AdaptedProcess(space, arr, "G", "predictable")
            if not proc.is_predictable():
                raise ValueError(f"{name} is not G-predictable")
        if self.horizon is not None and not 1 <= self.horizon <= space.horizon:
            raise ValueError("horizon outside the space")
        return self

    def T(self, bundle: AzemaBundle) -> int:
        return bundle.space.horizon if self.horizon is None else self.horizon


def constant_spec(bundle: AzemaBundle, recovery: float = 1.0, driver: Driver | None = None,
                  horizon: int | None = None) -> BsdeSpec:
    shape = bundle.space.shape
    return BsdeSpec(driver or Driver(), np.full(shape, float(recovery)), None, horizon)


def random_spec(bundle: AzemaBundle, rng: np.random.Generator, driver: Driver,
                horizon: int | None = None) -> BsdeSpec:
    """Random ``G``-predictable recovery and covariate."""
    space = bundle.space
    rec = np.empty(space.shape)
    cov = np.empty(space.shape)
    a, b = rng.uniform(-1, 2, space.n), rng.uniform(-1, 1, space.n)
    for t in range(space.horizon + 1):
        s = max(t - 1, 0)
        rec[t] = cond_exp(space, a * (1 + 0.1 * t), s, "G")
        cov[t] = cond_exp(space, b, s, "G")
    return BsdeSpec(driver, rec, cov, horizon)


# ---------------------------------------------------------------------------
# one-step solver


def _fixed_point(spec: BsdeSpec, t: int, m, G, dv, x, nodes, where: str):
    z = m.copy()
    for _ in range(spec.max_iter):
        z_new = (m + G * dv + spec.driver(t, z, x)) / (1.0 + dv)
        z_new = (1 - spec.damping) * z + spec.damping * z_new
        err = np.abs(z_new - z)
        z = z_new
        if np.all(err <= spec.tol * np.maximum(1.0, np.abs(z))):
            return z
    worst = int(np.argmax(err))
    raise ConvergenceError(f"fixed point failed at t={t - 1}, {where} cell {int(nodes[worst])}")


def _cell_mean(space, values, filtration, t, weights=None):
    w = space.weights if weights is None else weights
    den = space.cell_sums(w, filtration, t)
    return space.cell_sums(w * values, filtration, t) / den


def hazards(bundle: AzemaBundle) -> tuple[np.ndarray, np.ndarray]:
    """``(dv, dv')``: ``G`` compensator increments and their ``F`` reduction ``dD / S_-``."""
    dv = bundle.v.delta.values
    S_prev = bundle.S.lag.values
    ok = positive(S_prev)
    dvp = np.where(ok, bundle.D.delta.values / np.where(ok, S_prev, 1.0), 0.0)
    dvp[0] = 0.0
    return dv, dvp


def solve_full(bundle: AzemaBundle, spec: BsdeSpec) -> np.ndarray:
    """``Z`` on the full grid, stopped before ``theta`` and frozen after ``T``."""
    spec.validate(bundle)
    space = bundle.space
    T = spec.T(bundle)
    tv = bundle.pair.theta.value
    J = bundle.J
    cov = spec.covariate_values()
    Z = np.zeros(space.shape)
    for t in range(T, 0, -1):
        alive = tv >= t
        if not alive.any():
            continue
        lab = space.labels("G", t - 1)
        w = space.weights
        den = space.cell_sums(w * J[t], "G", t - 1)
        num = space.cell_sums(w * J[t] * Z[t], "G", t - 1)
        m = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        surv = space.cell_sums(w * alive, "G", t - 1)
        hit = space.cell_sums(w * (tv == t), "G", t - 1)
        live = surv > 0
        dv = np.where(live, hit / np.where(live, surv, 1.0), 0.0)
        G = _cell_mean(space, spec.recovery[t], "G", t - 1)
        x = _cell_mean(space, cov[t], "G", t - 1)
        cells = np.flatnonzero(live)
        z = _fixed_point(spec, t, m[cells], G[cells], dv[cells], x[cells], cells, "G")
        per_cell = np.zeros(live.size)
        per_cell[cells] = z
        Z[t - 1] = np.where(alive, per_cell[lab], 0.0)
    Z[T + 1:] = Z[T]
    return stop(Z, bundle.pair.theta, "before")


def _reduced_inputs(bundle: AzemaBundle, spec: BsdeSpec):
    Gp = reduce(spec.recovery, "predictable", bundle).values
    xp = reduce(spec.covariate_values(), "predictable", bundle).values
    return Gp, xp, hazards(bundle)[1]


def _solve_reduced(bundle: AzemaBundle, spec: BsdeSpec, mean_next: Callable) -> np.ndarray:
    spec.validate(bundle)
    space = bundle.space
    T = spec.T(bundle)
    S = bundle.S.values
    Gp, xp, dvp = _reduced_inputs(bundle, spec)
    U = np.zeros(space.shape)
    for t in range(T, 0, -1):
        live_atoms = positive(S[t - 1])
        if not live_atoms.any():
            continue
        lab = space.labels("F", t - 1)
        m = mean_next(t, U[t])
        live = _cell_mean(space, live_atoms.astype(float), "F", t - 1) > 0
        cells = np.flatnonzero(live)
        G = _cell_mean(space, Gp[t], "F", t - 1)
        x = _cell_mean(space, xp[t], "F", t - 1)
        dv = _cell_mean(space, dvp[t], "F", t - 1)
        z = _fixed_point(spec, t, m[cells], G[cells], dv[cells], x[cells], cells, "F")
        per_cell = np.zeros(live.size)
        per_cell[cells] = z
        U[t - 1] = np.where(live_atoms, per_cell[lab], 0.0)
    U[T + 1:] = U[T]
    return U


def solve_reduced_Q(bundle: AzemaBundle, spec: BsdeSpec) -> np.ndarray:
    """``U`` solving the ``(F, Q)`` equation weighted by ``S``."""
    space = bundle.space
    S, pS = bundle.S.values, bundle.pS.values

    def mean_next(t, u):
        num = space.cell_sums(space.weights * S[t] * u, "F", t - 1)
        den = space.cell_sums(space.weights * pS[t], "F", t - 1)
        ok = positive(den)
        return np.where(ok, num / np.where(ok, den, 1.0), 0.0)

    return _solve_reduced(bundle, spec, mean_next)


def solve_reduced_P(bundle: AzemaBundle, spec: BsdeSpec, d: DensityPair,
                    check_invariance: bool = True) -> np.ndarray:
    """``U`` solving the plain ``(F, P)`` equation; ``d`` must be an invariance density."""
    if check_invariance:
        from .invariance import verify_condition_A

        if not verify_condition_A(bundle.pair, d, "bounded_only"):
            raise ValueError("density is not an invariance density")
    space = bundle.space
    wP = d.measure

    def mean_next(t, u):
        return _cell_mean(space, u, "F", t - 1, wP)

    return _solve_reduced(bundle, spec, mean_next)


# ---------------------------------------------------------------------------
# residuals and transfer checks


def full_drift(bundle: AzemaBundle, spec: BsdeSpec, Z) -> np.ndarray:
    """Accumulated ``G`` drift ``sum_s J_s (g_s(Z_{s-1}) + (G_s - Z_{s-1}) dv_s)`` on ``[0, T]``."""
    T = spec.T(bundle)
    z = as_values(Z)
    dv = hazards(bundle)[0]
    cov = spec.covariate_values()
    inc = np.zeros_like(z)
    for t in range(1, T + 1):
        zp = z[t - 1]
        inc[t] = bundle.J[t] * (spec.driver(t, zp, cov[t]) + (spec.recovery[t] - zp) * dv[t])
    return np.cumsum(inc, axis=0)


def reduced_drift(bundle: AzemaBundle, spec: BsdeSpec, U) -> np.ndarray:
    """``U_bar - U``: accumulated reduced drift on ``[0, T]``."""
    T = spec.T(bundle)
    u = as_values(U)
    Gp, xp, dvp = _reduced_inputs(bundle, spec)
    inc = np.zeros_like(u)
    for t in range(1, T + 1):
        up = u[t - 1]
        inc[t] = spec.driver(t, up, xp[t]) + (Gp[t] - up) * dvp[t]
    return np.cumsum(inc, axis=0)


def full_residual(bundle: AzemaBundle, spec: BsdeSpec, Z) -> float:
    T = spec.T(bundle)
    z = stop(as_values(Z), bundle.pair.theta, "before")
    Y = z + full_drift(bundle, spec, z)
    r = drift_residual(bundle.space, Y, "G", horizon=T)
    terminal = float(np.max(np.abs(np.where(bundle.pair.theta.value > T, z[T], 0.0))))
    return max(r, terminal)


def reduced_Q_residual(bundle: AzemaBundle, spec: BsdeSpec, U) -> float:
    T = spec.T(bundle)
    u = as_values(U)
    Ubar = u + reduced_drift(bundle, spec, u)
    inc = np.vstack([np.zeros((1, u.shape[1])), bundle.S.values[1:] * np.diff(Ubar, axis=0)])
    window = positive(bundle.S.lag.values)
    r = drift_residual(bundle.space, np.cumsum(inc, axis=0), "F", window=window, horizon=T)
    terminal = float(np.max(np.abs(u[T] * bundle.S.values[T])))
    return max(r, terminal)


def reduced_P_residual(bundle: AzemaBundle, spec: BsdeSpec, U, d: DensityPair) -> float:
    T = spec.T(bundle)
    u = as_values(U)
    Ubar = u + reduced_drift(bundle, spec, u)
    window = positive(bundle.S.lag.values)
    r = drift_residual(bundle.space, Ubar, "F", d.measure, window, T)
    terminal = float(np.max(np.abs(u[T] * bundle.S.values[T])))
    return max(r, terminal)


@dataclass
class BsdeSolution:
    Z: np.ndarray
    U: np.ndarray
    U_P: np.ndarray | None = None
    residuals: dict = field(default_factory=dict)

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values()) if self.residuals else 0.0


def solve_and_verify(bundle: AzemaBundle, spec: BsdeSpec, d: DensityPair | None = None) -> BsdeSolution:
    """Solve all available forms and check every solution-transfer identity."""
    T = spec.T(bundle)
    theta = bundle.pair.theta
    Z = solve_full(bundle, spec)
    U = solve_reduced_Q(bundle, spec)
    U_before = stop(U, theta, "before")
    res = {
        "full": full_residual(bundle, spec, Z),
        "reduced_Q": reduced_Q_residual(bundle, spec, U),
        "reduce_of_full_solves_reduced_Q": reduced_Q_residual(bundle, spec, reduce(Z, "optional", bundle)),
        "stop_of_reduced_solves_full": full_residual(bundle, spec, U_before),
        "Z_vs_U_before": float(np.max(np.abs(Z - U_before)[:T + 1])),
    }
    Ubar = U + reduced_drift(bundle, spec, U)
    Y = Z + full_drift(bundle, spec, Z)
    res["ZU_identity"] = float(np.max(np.abs(Y - stop(Ubar, theta, "before"))[:T + 1]))
    S_pos = positive(bundle.S.values)
    res["U_vs_reduce_Z"] = float(np.max(np.abs(np.where(S_pos, U - reduce(Z, "optional", bundle).values, 0.0))[:T + 1]))
    U_P = None
    if d is not None:
        U_P = solve_reduced_P(bundle, spec, d, check_invariance=False)
        res["reduced_P"] = reduced_P_residual(bundle, spec, U_P, d)
        res["Z_vs_UP_before"] = float(np.max(np.abs(Z - stop(U_P, theta, "before"))[:T + 1]))
        res["UP_vs_UQ"] = float(np.max(np.abs(np.where(positive(bundle.S.lag.values), U_P - U, 0.0))[:T + 1]))
    return BsdeSolution(Z, U, U_P, res)


def export_csv(path: str | Path, bundle: AzemaBundle, sol: BsdeSolution) -> None:
    """Long-format CSV with columns ``t, atom, Z, U``."""
    space = bundle.space
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "atom", "Z", "U"])
        for t in range(space.horizon + 1):
            for i, name in enumerate(space.atoms):
                wr.writerow([t, name, repr(float(sol.Z[t, i])), repr(float(sol.U[t, i]))])


# ---------------------------------------------------------------------------
# refinement study


def intensity_price(hazard: float, rate: float, recovery: float, maturity: float = 1.0) -> float:
    """Continuous-time value of ``recovery`` paid at default before maturity."""
    k = hazard + rate
    return recovery * hazard / k * (1.0 - np.exp(-k * maturity))


def refinement_study(depths=(4, 8, 16), hazard: float = 1.0, rate: float = 0.5,
                     recovery: float = 1.0) -> dict:
    """``Z_0`` on deterministic-intensity Cox trees of growing depth over one time unit."""
    from .enlargement import azema_bundle
    from .scenarios import cox

    values = []
    for n in depths:
        sc = cox(T=n, hazard=hazard / n, branching=1, deep=True)
        b = azema_bundle(sc.pair)
        spec = constant_spec(b, recovery, Driver("linear", rate=rate, dt=1.0 / n))
        values.append(float(solve_full(b, spec)[0, 0]))
    exact = intensity_price(hazard, rate, recovery)
    diffs = [values[k + 1] - values[k] for k in range(len(values) - 1)]
    ratios = [diffs[k + 1] / diffs[k] for k in range(len(diffs) - 1)]
    return {"depths": list(depths), "values": values, "exact": exact,
            "errors": [exact - v for v in values], "diffs": diffs, "ratios": ratios}
