import json

import numpy as np
import pytest

from filtrationlab.enlargement import EnlargementPair, azema_bundle
from filtrationlab.invariance import (
    TRUE_MARTINGALE_NOTE,
    candidate_density,
    drift_cancellation_check,
    invariance_report,
    p_martingale_characterization,
    positivity_check,
    pseudo_stopping_check,
    sample_densities,
    survival_exponential,
    survival_measure_bridge,
    theorem_part1_equivalence,
    true_martingale_check,
    verify_condition_A,
)
from filtrationlab.lattice import DensityPair, FiniteFilteredSpace, cond_exp, positive, spanning_martingales
from filtrationlab.scenarios import (
    cox,
    fg_equal_inaccessible,
    generate,
    mixture_ex41,
    mixture_ex42,
    own_filtration_exponential,
)


def bundle_of(sc):
    return azema_bundle(sc.pair)


def never_defaults():
    space = FiniteFilteredSpace([0.3, 0.7], [[0, 0], [0, 1]], [[0, 0], [0, 1]])
    return azema_bundle(EnlargementPair(space, [np.inf, np.inf]))


def randoms(n, start=0, **kw):
    out = []
    for k in range(start, start + n):
        params = {"seed": 900 + k, "T": 2 + k % 3, "zero_mode": ("none", "predictable", "inaccessible")[k % 3],
                  "marks": k % 4 == 3}
        params.update(kw)
        sc = generate({"kind": "random", "params": params})
        out.append((sc, azema_bundle(sc.pair)))
    return out


# --- candidate density ------------------------------------------------------------

def test_candidate_is_one_when_martingale_part_vanishes():
    b = bundle_of(cox(T=4))
    c = candidate_density(b)
    assert c.positive and c.normalized and np.allclose(c.q, 1.0, atol=1e-15)


def test_candidate_vanishes_at_theta_when_F_equals_G():
    sc = fg_equal_inaccessible(T=3)
    b = bundle_of(sc)
    c = candidate_density(b)
    assert not c.positive
    tv = sc.pair.theta.value
    hit = np.isfinite(tv)
    assert np.all(c.q[tv[hit].astype(int), np.flatnonzero(hit)] == 0.0)


def test_candidate_mixture_ex41_direct_product():
    sc = mixture_ex41(alpha=0.3, T=3)
    b = bundle_of(sc)
    c = candidate_density(b, sc.horizon)
    S, pS = b.S.values, b.pS.values
    direct = np.ones(sc.space.n)
    for t in range(1, sc.horizon + 1):
        direct = direct * S[t] / pS[t]
        assert np.allclose(c.q[t], direct, atol=1e-14)
    assert c.positive


# --- positivity -------------------------------------------------------------------

def test_positivity_all_true_when_S_positive():
    rec = positivity_check(bundle_of(cox(T=4)))
    assert rec.exponential_positive and rec.pS_zero_at_varsigma and rec.varsigma_predictable
    assert not rec.varsigma_before_T


def test_positivity_all_false_for_inaccessible_zero():
    rec = positivity_check(bundle_of(fg_equal_inaccessible(T=3)))
    assert not (rec.exponential_positive or rec.pS_zero_at_varsigma or rec.varsigma_predictable)


def test_positivity_all_true_for_predictable_zero():
    found = 0
    for sc, b in randoms(30, zero_mode="predictable"):
        rec = positivity_check(b)
        if rec.varsigma_before_T:
            found += 1
            assert rec.exponential_positive and rec.pS_zero_at_varsigma and rec.varsigma_predictable
    assert found >= 10


# --- true-martingale clause -----------------------------------------------------------

def test_true_martingale_never_defaults():
    rec = true_martingale_check(never_defaults())
    assert rec.E_identity == 0.0 and rec.sfcnd_bound == 1.0
    assert rec.note == TRUE_MARTINGALE_NOTE


def test_survival_exponential_bound_mixture_ex41():
    alpha = 0.3
    sc = mixture_ex41(alpha=alpha, T=3)
    b = bundle_of(sc)
    E = survival_exponential(b)[:sc.horizon + 1]
    bound = np.exp(b.D.values[:sc.horizon + 1] / (1 - alpha))
    assert np.all(E <= bound + 1e-15)
    rec = true_martingale_check(b, sc.horizon)
    assert rec.sfcnd_bound <= float(sc.space.weights @ bound[-1])


def test_ncsfcnd_rows_monotone_to_zero():
    for sc, b in randoms(15):
        rows = true_martingale_check(b).ncsfcnd
        ups = [r["upper_bound"] for r in rows]
        assert all(u2 <= u1 + 1e-15 for u1, u2 in zip(ups, ups[1:]))
        assert all(r["residual"] <= r["upper_bound"] + 1e-15 for r in rows)
        assert rows[-1]["residual"] == 0.0 and rows[-1]["upper_bound"] == 0.0


# --- condition (A) ------------------------------------------------------------------

def test_condition_A_F_trivial_with_Q():
    sc = own_filtration_exponential(T=4, variant="F_trivial")
    d = DensityPair.identity(sc.space)
    assert verify_condition_A(sc.pair, d, "full") and verify_condition_A(sc.pair, d, "bounded_only")


def test_condition_A_fails_for_every_density_when_F_equals_G():
    sc = fg_equal_inaccessible(T=3)
    b = bundle_of(sc)
    rng = np.random.default_rng(1)
    dens = [d for _, d in sample_densities(b, 3, rng, 30)] + [DensityPair.identity(sc.space)]
    for d in dens:
        assert not verify_condition_A(sc.pair, d, "full")
        assert not verify_condition_A(sc.pair, d, "bounded_only")


def test_condition_A_candidate_mixture_ex41():
    sc = mixture_ex41(alpha=0.3, T=3)
    b = bundle_of(sc)
    d = candidate_density(b, sc.horizon).density
    chk = verify_condition_A(sc.pair, d, "full")
    assert chk.holds and chk.residual <= 1e-10


def test_modes_agree_on_random_densities():
    for sc, b in randoms(20):
        rng = np.random.default_rng(5)
        T = sc.space.horizon
        for _, d in sample_densities(b, T, rng, 6):
            assert verify_condition_A(sc.pair, d, "full").holds == verify_condition_A(sc.pair, d, "bounded_only").holds


# --- density characterisation ---------------------------------------------------------

def test_density_characterisation_identity_density_cox():
    b = bundle_of(cox(T=3))
    rec = theorem_part1_equivalence(b, DensityPair.identity(b.space))
    assert rec.density_form and rec.bracket_form and rec.direct


def test_density_characterisation_identity_density_with_martingale_part():
    sc = mixture_ex41(alpha=0.3, T=3)
    b = bundle_of(sc)
    assert np.max(np.abs(b.mart_part.values)) > 0
    rec = theorem_part1_equivalence(b, DensityPair.identity(sc.space, sc.horizon))
    assert not (rec.density_form or rec.bracket_form or rec.direct)


def test_density_characterisation_agreement_on_100_scenarios():
    verdicts = {True: 0, False: 0}
    for sc, b in randoms(100):
        rng = np.random.default_rng(sc.params["seed"])
        for family, d in sample_densities(b, sc.space.horizon, rng, 3):
            rec = theorem_part1_equivalence(b, d, strict=False)
            assert rec.agree, (sc.id, family, rec)
            verdicts[rec.direct] += 1
    assert verdicts[True] > 0 and verdicts[False] > 0


def test_invariance_densities_share_the_rigid_part():
    for sc, b in randoms(30):
        T = sc.space.horizon
        rng = np.random.default_rng(3)
        pos = positive(b.pS.values)[1:T + 1]
        target = np.where(pos, b.mart_part.delta.values[1:T + 1] / np.where(pos, b.pS.values[1:T + 1], 1), 0)
        for family, d in sample_densities(b, T, rng, 6):
            if family != "invariant":
                continue
            assert verify_condition_A(sc.pair, d)
            got = np.where(pos, d.q_bar.delta.values[1:T + 1], 0.0)
            assert np.max(np.abs(got - target)) <= 1e-12


# --- P-martingale characterisation --------------------------------------------------------

def invariant_cases(n=40):
    out = []
    for sc, b in randoms(n):
        c = candidate_density(b)
        if c.density is not None:
            out.append((sc, b, c.density))
    return out


def test_p_characterisation_constant_and_spanning():
    cases = invariant_cases()
    assert len(cases) >= 20
    for sc, b, d in cases:
        lhs, rhs = p_martingale_characterization(b, d, np.ones(sc.space.shape))
        assert lhs.passed and rhs.passed
        fam = spanning_martingales(sc.space, "F", d.measure)
        for k in range(fam.shape[2]):
            lhs, rhs = p_martingale_characterization(b, d, fam[:, :, k])
            assert lhs.passed and rhs.passed


def test_p_characterisation_drift_breaks_both():
    for sc, b, d in invariant_cases(20):
        if not positive(b.pS.values[1:]).any():
            continue  # empty window: both sides hold vacuously
        fam = spanning_martingales(sc.space, "F", d.measure)
        P = fam[:, :, 0] + np.arange(sc.space.horizon + 1)[:, None] * 1.0
        lhs, rhs = p_martingale_characterization(b, d, P)
        assert not lhs.passed and not rhs.passed


# --- pseudo-stopping --------------------------------------------------------------------

def test_pseudo_stopping_examples():
    assert pseudo_stopping_check(bundle_of(mixture_ex41(alpha=0.3, T=3))).A_inf_equals_1
    rec = pseudo_stopping_check(bundle_of(mixture_ex42(T=3)))
    assert not rec.A_inf_equals_1 and rec.mass_off_one > 0
    assert invariance_report(mixture_ex42(T=3).pair, 3).verdict == "invariant"
    b = never_defaults()
    rec = pseudo_stopping_check(b)
    assert not rec.A_inf_equals_1 and np.all(b.A_dual_opt.values[-1] == 0) and rec.Q_mart_zero


def test_mixture_ex42_lower_bound():
    alphas = (0.3, 0.4, 0.3)
    sc = mixture_ex42(alphas=alphas, T=3)
    b = bundle_of(sc)
    assert np.all(b.S.values[:sc.horizon + 1] >= alphas[1] - 1e-15)


# --- drift cancellation -------------------------------------------------------------------

def test_drift_cancellation_trivial():
    b = bundle_of(cox(T=3))
    res = drift_cancellation_check(b, DensityPair.identity(b.space))
    assert res["G_martingale"] <= 1e-15 and res["F_martingale"] <= 1e-15


def test_drift_cancellation_mixture_ex41():
    sc = mixture_ex41(alpha=0.3, T=3)
    b = bundle_of(sc)
    res = drift_cancellation_check(b, candidate_density(b, sc.horizon).density)
    assert max(res.values()) <= 1e-10


def test_drift_cancellation_random_invariant():
    cases = invariant_cases(100)
    assert len(cases) >= 50
    for sc, b, d in cases:
        assert max(drift_cancellation_check(b, d).values()) <= 1e-10


# --- survival-measure bridge ----------------------------------------------------------

def test_bridge_never_defaults():
    b = never_defaults()
    assert np.all(survival_exponential(b) == 1.0)
    rec = survival_measure_bridge(b)
    assert rec.projection_residual == 0.0 and rec.density_residual == 0.0


def test_bridge_cox_density_is_inverse_survival():
    sc = cox(T=4)
    b = bundle_of(sc)
    E = survival_exponential(b)
    assert np.allclose(E * b.S.values, 1.0, atol=1e-14)
    rec = survival_measure_bridge(b)
    assert rec.holds() and rec.density_residual <= 1e-12


def test_bridge_random_positive_scenarios():
    checked = 0
    for sc, b in randoms(40, zero_mode="none"):
        rec = survival_measure_bridge(b)
        assert rec.projection_residual <= 1e-12
        if rec.density_residual is not None:
            checked += 1
            c = candidate_density(b)
            assert rec.density_residual <= 1e-12 and np.allclose(c.q[-1], b.Qcal.values[-1])
    assert checked >= 10


# --- report --------------------------------------------------------------------------

def test_report_biconditional_and_json():
    for sc, b in randoms(45):
        rep = invariance_report(sc.pair, bundle=b)
        cand = candidate_density(b)
        assert (rep.verdict == "invariant") == (cand.positive and cand.normalized)
        assert rep.verdict == sc.expected.verdict
        json.dumps(rep.to_json())
        if rep.verdict == "invariant":
            assert verify_condition_A(sc.pair, rep.witness)
        else:
            assert rep.failed_clause == "positivity"


def test_report_horizon_validation():
    sc = cox(T=3)
    with pytest.raises(ValueError):
        invariance_report(sc.pair, 7)


def test_cond_exp_of_candidate_is_martingale():
    for sc, b in randoms(10, zero_mode="none"):
        q = candidate_density(b).q
        for t in range(sc.space.horizon):
            assert np.allclose(cond_exp(sc.space, q[t + 1], t), q[t], atol=1e-13)
