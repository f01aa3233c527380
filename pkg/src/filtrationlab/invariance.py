"""Invariance times: candidate density, characterisations and verdict report.

``theta`` is an invariance time on ``[0, T]`` when some ``P`` equivalent to
``Q`` on ``F_T`` turns every ``(F, P)`` martingale, stopped just before
``theta``, into a ``(G, Q)`` martingale.  The canonical candidate is the
multiplicative martingale factor ``Qcal`` of the Azema supermartingale.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .enlargement import AzemaBundle, EnlargementPair, azema_bundle
from .lattice import (
    MARTINGALE_TOL,
    DensityPair,
    MartingaleCheck,
    MeasureError,
    RandomTime,
    as_values,
    cond_exp,
    drift_residual,
    increment_martingales,
    is_predictable_time,
    positive,
    spanning_martingales,
    stop,
)

CLAUSES = ("positivity", "true_martingale", "condition_B", "direct_check")

TRUE_MARTINGALE_NOTE = ("on a finite space every nonnegative local martingale is a true "
                        "martingale, so this clause cannot be the binding failure here")


class TheoremViolation(AssertionError):
    """Two routes that must agree did not; indicates a defect, never a verdict."""


def _horizon(bundle: AzemaBundle, T: int | None) -> int:
    T = bundle.space.horizon if T is None else int(T)
    if not 1 <= T <= bundle.space.horizon:
        raise ValueError(f"analysis horizon {T} outside 1..{bundle.space.horizon}")
    return T


def _freeze(values: np.ndarray, T: int) -> np.ndarray:
    out = values.copy()
    out[T + 1:] = out[T]
    return out


def _time_grid(bundle: AzemaBundle) -> np.ndarray:
    return np.arange(bundle.space.horizon + 1)[:, None]


# ---------------------------------------------------------------------------
# candidate and positivity


@dataclass
class CandidateDensity:
    q: np.ndarray
    positive: bool
    normalized: bool
    mass: float
    density: DensityPair | None


def candidate_density(bundle: AzemaBundle, T: int | None = None) -> CandidateDensity:
    """``Qcal`` on ``[0, T]`` as the candidate density process."""
    T = _horizon(bundle, T)
    q = _freeze(bundle.Qcal.values, T)
    pos = bool(np.all(positive(q[:T + 1])))
    mass = float(bundle.space.weights @ q[T])
    normalized = abs(mass - 1.0) <= 1e-12
    d = DensityPair(bundle.space, q[T], T) if pos and normalized else None
    return CandidateDensity(q, pos, normalized, mass, d)


@dataclass(frozen=True)
class PositivityRecord:
    exponential_positive: bool
    pS_zero_at_varsigma: bool
    varsigma_predictable: bool
    varsigma_before_T: bool

    @property
    def holds(self) -> bool:
        return self.exponential_positive


def positivity_check(bundle: AzemaBundle, T: int | None = None) -> PositivityRecord:
    """Three independent routes to positivity of the candidate on ``[0, T]``.

    (i) ``E(1_{pS>0}(1/pS) . Q) > 0``; (ii) ``pS = 0`` at ``varsigma`` on
    ``{varsigma <= T}``; (iii) ``varsigma`` restricted to ``{varsigma <= T}``
    is predictable.
    """
    T = _horizon(bundle, T)
    i = bool(np.all(positive(bundle.Qcal.values[:T + 1])))
    vs = bundle.varsigma.value
    early = vs <= T
    idx = np.flatnonzero(early)
    ii = bool(np.all(~positive(bundle.pS.values[vs[early].astype(int), idx])))
    iii = is_predictable_time(bundle.varsigma.restrict(early), "F")
    rec = PositivityRecord(i, ii, iii, bool(early.any()))
    if not i == ii == iii:
        raise TheoremViolation(f"positivity routes disagree: {rec}")
    return rec


@dataclass
class TrueMartingaleRecord:
    E_identity: float
    sfcnd_bound: float
    ncsfcnd: list[dict]
    note: str = TRUE_MARTINGALE_NOTE


def survival_exponential(bundle: AzemaBundle) -> np.ndarray:
    """``E(1_{pS>0}(1/pS) . D)``."""
    pS = bundle.pS.values
    pos = positive(pS)
    inc = np.where(pos, bundle.D.delta.values / np.where(pos, pS, 1.0), 0.0)
    inc[0] = 0.0
    return np.cumprod(1.0 + inc, axis=0)


def true_martingale_check(bundle: AzemaBundle, T: int | None = None) -> TrueMartingaleRecord:
    T = _horizon(bundle, T)
    space = bundle.space
    w = space.weights
    S0 = bundle.S.values[0]
    e_id = abs(float(w @ (S0 * bundle.Qcal.values[T])) - float(w @ S0))
    E = survival_exponential(bundle)
    tv = bundle.pair.theta.value
    stop_at = np.minimum(tv, T).astype(int)
    bound = float(w @ E[stop_at, np.arange(space.n)])

    D = bundle.D.values
    t = _time_grid(bundle)
    rows = []
    top = int(np.ceil(float(np.max(E[:T + 1])))) + 1
    for n in range(1, top + 1):
        hit = (E >= n) & (t <= T)
        sig = np.where(hit.any(axis=0), np.argmax(hit, axis=0), T)
        cols = np.arange(space.n)
        E_sig = E[sig, cols]
        resid = float(w @ ((D[T] - D[sig, cols]) * E_sig))
        after = (t > sig) & (t <= T)
        upper = float(w @ np.sum(np.where(after, E * bundle.D.delta.values, 0.0), axis=0))
        rows.append({"n": n, "residual": resid, "upper_bound": upper})
    return TrueMartingaleRecord(e_id, bound, rows)


# ---------------------------------------------------------------------------
# condition (A)


@dataclass(frozen=True)
class ConditionA:
    holds: bool
    residual: float
    mode: str

    def __bool__(self) -> bool:
        return self.holds


def martingale_family(space, d: DensityPair, mode: Literal["full", "bounded_only"]) -> np.ndarray:
    """Spanning ``(F, P)`` martingales on ``[0, T]``, shape ``(T_space + 1, n, k)``.

    ``bounded_only`` uses the closed martingales of the terminal cell
    indicators; ``full`` uses one-step increment martingales.
    """
    if mode == "bounded_only":
        return spanning_martingales(space, "F", d.measure, d.horizon)
    if mode == "full":
        return increment_martingales(space, "F", d.measure, d.horizon)
    raise ValueError(f"unknown mode {mode!r}")


def verify_condition_A(pair: EnlargementPair, d: DensityPair, mode: str = "full",
                       tol: float = MARTINGALE_TOL) -> ConditionA:
    """Direct test: every spanning ``P`` has ``P^{theta-}`` a ``(G, Q)`` martingale on ``[0, T]``.

    By linearity a spanning family suffices.
    """
    if np.any(d.q.values <= 0):
        return ConditionA(False, float("inf"), mode)
    fam = martingale_family(pair.space, d, mode)
    stopped = stop(fam, pair.theta, "before")
    r = drift_residual(pair.space, stopped, "G", horizon=d.horizon)
    return ConditionA(r <= tol, r, mode)


@dataclass(frozen=True)
class Part1Record:
    density_form: bool
    bracket_form: bool
    direct: bool
    residuals: dict
    factorization_residual: float | None = None

    @property
    def agree(self) -> bool:
        return self.density_form == self.bracket_form == self.direct


def density_form_residual(bundle: AzemaBundle, d: DensityPair) -> float:
    """Distance from ``q = q_0 E((1/pS) . Q)`` on ``{pS > 0}`` within ``[0, T]``."""
    T = d.horizon
    pS, S = bundle.pS.values, bundle.S.values
    pos = positive(pS)
    ratio = np.where(pos, S / np.where(pos, pS, 1.0), 1.0)
    ratio[0] = 1.0
    pred = d.q.values[0] * np.cumprod(ratio, axis=0)
    q = d.q.values
    diff = np.where(pos, np.abs(q - pred) / np.maximum(1.0, np.abs(q)), 0.0)[:T + 1]
    return float(diff.max())


def bracket_form_residual(bundle: AzemaBundle, d: DensityPair) -> float:
    """Distance from ``pS . q_bar = Q`` on ``[0, T]``."""
    T = d.horizon
    lhs = np.cumsum(bundle.pS.values * d.q_bar.delta.values, axis=0)
    return float(np.max(np.abs(lhs - bundle.mart_part.values)[:T + 1]))


def factorization_residual(bundle: AzemaBundle, d: DensityPair) -> float:
    """``q_T`` against ``q_0 Qcal_T E(1_{pS=0} . q_bar)_T``."""
    T = d.horizon
    zero = ~positive(bundle.pS.values)
    inc = np.where(zero, d.q_bar.delta.values, 0.0)
    inc[0] = 0.0
    ext = np.cumprod(1.0 + inc, axis=0)
    rhs = d.q.values[0] * bundle.Qcal.values[T] * ext[T]
    return float(np.max(np.abs(d.q.values[T] - rhs) / np.maximum(1.0, d.q.values[T])))


def theorem_part1_equivalence(bundle: AzemaBundle, d: DensityPair, tol: float = MARTINGALE_TOL,
                              strict: bool = True) -> Part1Record:
    """Evaluate the density criterion, the bracket criterion and the direct check."""
    rq = density_form_residual(bundle, d)
    rc = bracket_form_residual(bundle, d)
    direct = verify_condition_A(bundle.pair, d, "full", tol)
    rec = Part1Record(rq <= tol, rc <= tol, direct.holds,
                      {"density_form": rq, "bracket_form": rc, "direct": direct.residual})
    if rec.direct:
        rec = Part1Record(rec.density_form, rec.bracket_form, rec.direct, rec.residuals, factorization_residual(bundle, d))
    if strict and not rec.agree:
        raise TheoremViolation(f"density characterisation split: {rec}")
    return rec


def p_martingale_characterization(bundle: AzemaBundle, d: DensityPair, P,
                                  tol: float = MARTINGALE_TOL, strict: bool = True):
    """``P`` in ``M_{pS>0, [0,T]}(F, P)`` against ``pS . P + [Q, P]`` in ``M_{pS>0, [0,T]}(F, Q)``."""
    T = d.horizon
    space = bundle.space
    p = as_values(P)
    window = positive(bundle.pS.values)
    lhs = drift_residual(space, p, "F", d.measure, window, T)
    dP = np.vstack([np.zeros((1, space.n)), np.diff(p, axis=0)])
    rhs_proc = np.cumsum((bundle.pS.values + bundle.mart_part.delta.values) * dP, axis=0)
    rhs = drift_residual(space, rhs_proc, "F", None, window, T)
    out = (MartingaleCheck(lhs <= tol, lhs), MartingaleCheck(rhs <= tol, rhs))
    if strict and out[0].passed != out[1].passed:
        raise TheoremViolation(f"P-martingale characterisation split: {out}")
    return out


# ---------------------------------------------------------------------------
# pseudo-stopping, drift cancellation, survival measure


@dataclass
class PseudoStoppingRecord:
    A_inf_equals_1: bool
    mass_off_one: float
    Q_mart_zero: bool
    A_minus_D: np.ndarray


def pseudo_stopping_check(bundle: AzemaBundle, tol: float = 1e-12) -> PseudoStoppingRecord:
    """``A_inf = 1`` (pseudo-stopping) next to ``Q = 0`` (invariance with ``P = Q``).

    ``A_inf`` is read at the space horizon; ``theta = inf`` atoms never
    default.
    """
    if np.any(bundle.pair.theta.value == 0):
        raise ValueError("pseudo-stopping comparison requires theta > 0")
    A_inf = bundle.A_dual_opt.values[-1]
    off = np.abs(A_inf - 1.0) > tol
    return PseudoStoppingRecord(
        bool(not off.any()),
        float(bundle.space.weights @ off),
        bool(np.max(np.abs(bundle.mart_part.values)) <= tol),
        bundle.A_dual_opt.values - bundle.D.values,
    )


def drift_cancellation_check(bundle: AzemaBundle, d: DensityPair, tol: float = 1e-10,
                             strict: bool = True) -> dict[str, float]:
    """Residuals of the two drift-cancellation martingales over the spanning family."""
    space = bundle.space
    T = d.horizon
    fam = spanning_martingales(space, "F", d.measure, T)
    dP = np.concatenate([np.zeros((1,) + fam.shape[1:]), np.diff(fam, axis=0)])
    q = d.q.values[..., None]
    dp = d.p.delta.values[..., None]
    qpP = np.cumsum(q * dp * dP, axis=0)
    Nproc = fam - qpP
    dN = np.concatenate([np.zeros((1,) + fam.shape[1:]), np.diff(Nproc, axis=0)])
    dQ = bundle.mart_part.delta.values[..., None]

    ang = np.zeros_like(fam)
    for t in range(1, space.horizon + 1):
        ang[t] = ang[t - 1] + cond_exp(space, dQ[t] * dN[t], t - 1, "F")
    dang = np.concatenate([np.zeros((1,) + fam.shape[1:]), np.diff(ang, axis=0)])

    J = bundle.J[..., None]
    J_prev = np.concatenate([J[:1], J[:-1]])
    S_prev = bundle.S.lag.values[..., None]
    ok = positive(S_prev)
    scale = np.where(ok, J_prev / np.where(ok, S_prev, 1.0), 0.0)
    inc_g = J * q * dp * dP + scale * dang
    inc_g[0] = 0.0
    g_res = drift_residual(space, np.cumsum(inc_g, axis=0), "G", horizon=T)

    S = bundle.S.values[..., None]
    inc_f = S * q * dp * dP + dQ * dN
    inc_f[0] = 0.0
    f_res = drift_residual(space, np.cumsum(inc_f, axis=0), "F",
                           window=positive(bundle.S.lag.values), horizon=T)
    out = {"G_martingale": g_res, "F_martingale": f_res}
    if strict and max(out.values()) > tol:
        raise TheoremViolation(f"drifts do not cancel: {out}")
    return out


@dataclass
class BridgeRecord:
    projection_residual: float
    martingale_residual: float
    density_residual: float | None

    def holds(self, tol: float = 1e-12, mart_tol: float = MARTINGALE_TOL) -> bool:
        return (self.projection_residual <= tol and self.martingale_residual <= mart_tol
                and (self.density_residual is None or self.density_residual <= tol))


def survival_measure_bridge(bundle: AzemaBundle, T: int | None = None) -> BridgeRecord:
    """Link between the survival-measure density and the candidate ``Qcal``."""
    T = _horizon(bundle, T)
    space = bundle.space
    E = survival_exponential(bundle)
    X = E * bundle.J
    pS = bundle.pS.values
    pos = positive(pS)
    proj = np.array([cond_exp(space, X[t], t, "F") for t in range(space.horizon + 1)])
    target = bundle.S.values[0] * bundle.Qcal.values * pos
    r_proj = float(np.max(np.abs(proj - target)))
    r_mart = drift_residual(space, X, "G", window=pos, horizon=T)
    r_dens = None
    if np.all(bundle.pair.theta.value > 0) and np.all(positive(bundle.S.values[T])):
        mass = float(space.weights @ X[T])
        dens = cond_exp(space, X[T], T, "F") / mass
        r_dens = float(np.max(np.abs(dens - bundle.Qcal.values[T])))
    return BridgeRecord(r_proj, r_mart, r_dens)


# ---------------------------------------------------------------------------
# densities for harnesses


def density_from_ratios(bundle: AzemaBundle, T: int, ratio_fn) -> DensityPair:
    """Chain one-step ratios ``q_t / q_{t-1}``; each has conditional mean one."""
    space = bundle.space
    q = np.ones(space.n)
    for t in range(1, T + 1):
        r = ratio_fn(t)
        m = cond_exp(space, r, t - 1, "F")
        q = q * r / m
    q = q / float(space.weights @ q)
    return DensityPair(space, q, T)


def _random_ratio(space, rng, t, spread=0.5):
    u = rng.uniform(1 - spread, 1 + spread, size=space.n_cells("F", t))
    return u[space.labels("F", t)]


def sample_densities(bundle: AzemaBundle, T: int, rng: np.random.Generator, count: int,
                     ) -> list[tuple[str, DensityPair]]:
    """Mix of invariance densities (free factor on ``{pS = 0}``), perturbed ones and arbitrary ones."""
    S, pS = bundle.S.values, bundle.pS.values
    pos = positive(pS)
    space = bundle.space
    cand_ok = bool(np.all(positive(bundle.Qcal.values[:T + 1])))
    out: list[tuple[str, DensityPair]] = []
    for k in range(count):
        family = ("invariant", "perturbed", "arbitrary")[k % 3] if cand_ok else ("perturbed", "arbitrary")[k % 2]
        eps = float(rng.uniform(0.05, 0.9))
        bad_t = int(rng.integers(1, T + 1))

        def ratio(t, family=family, eps=eps, bad_t=bad_t):
            rnd = _random_ratio(space, rng, t)
            if family == "arbitrary":
                return rnd
            base = np.where(pos[t], S[t] / np.where(pos[t], pS[t], 1.0), rnd)
            base = np.where(positive(base), base, rnd)
            if family == "perturbed" and t == bad_t:
                return (1 - eps) * base + eps * rnd
            return base

        try:
            out.append((family, density_from_ratios(bundle, T, ratio)))
        except MeasureError:
            continue
    return out


# ---------------------------------------------------------------------------
# report


@dataclass
class InvarianceReport:
    verdict: str
    witness: DensityPair | None
    failed_clause: str | None
    residuals: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "verdict": self.verdict,
            "failed_clause": self.failed_clause,
            "residuals": {k: float(v) for k, v in sorted(self.residuals.items())},
            "diagnostics": self.diagnostics,
        }
        if self.witness is not None:
            out["witness_q"] = self.witness.q.values[:self.witness.horizon + 1].tolist()
        return out

    @property
    def max_residual(self) -> float:
        vals = [float(v) for v in self.residuals.values() if v is not None]
        return max(vals) if vals else 0.0


def _time_json(tau: RandomTime) -> list:
    return [None if not np.isfinite(x) else int(x) for x in tau.value]


def invariance_report(pair: EnlargementPair, T: int | None = None, tol: float = MARTINGALE_TOL,
                      bundle: AzemaBundle | None = None) -> InvarianceReport:
    """Decide condition (A) on ``[0, T]`` and collect every supporting check."""
    b = bundle or azema_bundle(pair)
    T = _horizon(b, T)
    pos = positivity_check(b, T)
    tm = true_martingale_check(b, T)
    cand = candidate_density(b, T)
    residuals: dict[str, float] = {"E_identity": tm.E_identity}
    bridge = survival_measure_bridge(b, T)
    residuals["bridge_projection"] = bridge.projection_residual
    residuals["bridge_martingale"] = bridge.martingale_residual
    if bridge.density_residual is not None:
        residuals["bridge_density"] = bridge.density_residual
    diagnostics: dict = {
        "varsigma": _time_json(b.varsigma),
        "sigma3": _time_json(b.sigma3),
        "positivity": {"exponential_positive": pos.exponential_positive,
                       "pS_zero_at_varsigma": pos.pS_zero_at_varsigma,
                       "varsigma_predictable": pos.varsigma_predictable},
        "candidate_mass": cand.mass,
        "sfcnd_bound": tm.sfcnd_bound,
        "true_martingale": tm.note,
    }
    if np.all(pair.theta.value > 0):
        ps = pseudo_stopping_check(b)
        diagnostics["pseudo_stopping"] = ps.A_inf_equals_1
        diagnostics["A_inf_off_one_mass"] = ps.mass_off_one
        diagnostics["Q_mart_zero"] = ps.Q_mart_zero
    else:
        diagnostics["pseudo_stopping"] = None

    if not cand.positive:
        # any equivalent P fails: check Q itself and the candidate with zeros replaced
        rng = np.random.default_rng(0)
        certs = [verify_condition_A(pair, DensityPair.identity(pair.space, T), "full", tol)]
        certs += [verify_condition_A(pair, d, "full", tol)
                  for _, d in sample_densities(b, T, rng, 2)]
        if any(c.holds for c in certs):
            raise TheoremViolation("direct check accepted a density while the candidate vanishes")
        diagnostics["direct_certificates"] = [c.residual for c in certs]
        return InvarianceReport("not_invariant", None, "positivity", residuals, diagnostics)
    if not cand.normalized:
        return InvarianceReport("not_invariant", None, "true_martingale", residuals, diagnostics)

    d = cand.density
    full = verify_condition_A(pair, d, "full", tol)
    bounded = verify_condition_A(pair, d, "bounded_only", tol)
    if full.holds != bounded.holds:
        raise TheoremViolation("full and bounded-only condition (A) disagree")
    residuals["condition_A_full"] = full.residual
    residuals["condition_A_bounded"] = bounded.residual
    part1 = theorem_part1_equivalence(b, d, tol)
    residuals["density_form"] = part1.residuals["density_form"]
    residuals["bracket_form"] = part1.residuals["bracket_form"]
    if not full.holds:
        return InvarianceReport("not_invariant", None, "direct_check", residuals, diagnostics)
    residuals.update({f"drift_{k}": v for k, v in drift_cancellation_check(b, d, strict=False).items()})
    if part1.factorization_residual is not None:
        residuals["factorization"] = part1.factorization_residual
    diagnostics["witness_is_Q"] = bool(np.max(np.abs(d.q.values - 1.0)) <= 1e-12)
    return InvarianceReport("invariant", d, None, residuals, diagnostics)
