import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from brwre import criteria
from brwre.criteria import (
    ConditionError,
    LambdaInterval,
    classify,
    classify_environment,
    criterion_value,
    expected_log_drift,
    lambda_feasible_set,
    one_in_feasible_set,
    state_feasible_interval,
)
from brwre.envmodel import EnvironmentLaw, MomentTriple, law_from_atoms, reflected
from brwre.lyapunov import LyapunovEstimate
from conftest import (
    CRITICAL_PAIR,
    GW_SUPERCRITICAL,
    SUBCRITICAL_BRANCHY,
    TREBLE_OR_DIE,
    single_env,
    two_state_env,
)


# -- independent oracles -----------------------------------------------------


def interval_by_roots(m: MomentTriple) -> tuple[float, float] | None:
    """Companion-matrix roots of mu+ x^2 - (1-mu0) x + mu-: independent of
    the closed-form path under test."""
    r = np.roots([m.mu_plus, -(1.0 - m.mu_zero), m.mu_minus])
    if np.iscomplexobj(r) and np.abs(r.imag).max() > 1e-12:
        return None
    lo, hi = sorted(r.real)
    if hi <= 0.0:
        return None
    return float(lo), float(hi)


def interval_by_scan(m: MomentTriple, n: int = 200_001) -> tuple[float, float] | None:
    """Brute-force sublevel scan on a log grid."""
    lam = np.exp(np.linspace(math.log(1e-4), math.log(1e4), n))
    ok = m.mu_minus / lam + m.mu_zero + m.mu_plus * lam <= 1.0
    if not ok.any():
        return None
    hits = lam[ok]
    return float(hits[0]), float(hits[-1])


# -- per-state intervals -----------------------------------------------------


def test_interval_double_root_at_one():
    iv = state_feasible_interval(MomentTriple(0.5, 0.0, 0.5))
    assert iv.lo == pytest.approx(1.0, abs=1e-12)
    assert iv.hi == pytest.approx(1.0, abs=1e-12)


def test_interval_gw_example_matches_oracles():
    m = MomentTriple(1.2, 0.0, 0.05)
    iv = state_feasible_interval(m)
    lo, hi = interval_by_roots(m)
    assert iv.lo == pytest.approx(lo, rel=1e-12)
    assert iv.hi == pytest.approx(hi, rel=1e-12)
    # frozen values from the quadratic oracle
    assert iv.lo == pytest.approx(1.2822021129186534, rel=1e-12)
    assert iv.hi == pytest.approx(18.717797887081346, rel=1e-12)
    slo, shi = interval_by_scan(m)
    assert iv.lo == pytest.approx(slo, rel=1e-3)
    assert iv.hi == pytest.approx(shi, rel=1e-3)


def test_interval_empty_when_minimum_exceeds_one():
    # minimum value is mu0 + 2 sqrt(mu- mu+) = 1.5
    m = MomentTriple(0.5, 0.5, 0.5)
    assert state_feasible_interval(m).is_empty
    assert interval_by_scan(m) is None


def test_interval_rejects_degenerate_moments():
    with pytest.raises(ValueError):
        state_feasible_interval(MomentTriple(0.0, 0.0, 0.5))
    with pytest.raises(ValueError):
        state_feasible_interval(MomentTriple(0.5, 0.0, 0.0))


# -- mixture intersection ----------------------------------------------------


def test_feasible_set_two_state_intersection():
    iv = lambda_feasible_set(two_state_env())
    # intersection of [1.51472, 18.48528] and [0.97624, 11.52376]
    a = interval_by_roots(MomentTriple(1.4, 0.0, 0.05))
    b = interval_by_roots(MomentTriple(0.9, 0.0, 0.08))
    assert iv.lo == pytest.approx(max(a[0], b[0]), rel=1e-12)
    assert iv.hi == pytest.approx(min(a[1], b[1]), rel=1e-12)
    assert iv.lo == pytest.approx(1.5147186257614305, rel=1e-12)
    assert iv.hi == pytest.approx(11.5237557774322, rel=1e-12)


def test_feasible_set_single_state():
    iv = lambda_feasible_set(single_env(SUBCRITICAL_BRANCHY))
    assert iv.lo == pytest.approx(2.0 / 3.0, rel=1e-12)
    assert iv.hi == pytest.approx(6.0, rel=1e-12)


def test_feasible_set_empty_dominates_intersection():
    env = EnvironmentLaw(
        [
            (0.5, law_from_atoms(TREBLE_OR_DIE)),  # empty interval
            (0.5, law_from_atoms(GW_SUPERCRITICAL)),
        ]
    )
    assert lambda_feasible_set(env).is_empty


# -- drift -------------------------------------------------------------------


def test_drift_gw_example():
    assert expected_log_drift(single_env(GW_SUPERCRITICAL)) == pytest.approx(
        math.log(24.0), rel=1e-14
    )


def test_drift_symmetric_is_zero():
    assert expected_log_drift(single_env(CRITICAL_PAIR)) == pytest.approx(0.0, abs=1e-15)


def test_drift_two_state_mixture():
    expected = 0.5 * math.log(28.0) + 0.5 * math.log(11.25)
    assert expected_log_drift(two_state_env()) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(2.8762863194128165, rel=1e-12)


# -- classifier --------------------------------------------------------------


def _exact_estimate(value, kind="A"):
    return LyapunovEstimate(value=value, stderr=0.0, steps=10**6, replicas=2, matrix_kind=kind)


def test_classify_strong_local_survival():
    rep = classify(single_env(TREBLE_OR_DIE))
    assert rep.regime == criteria.STRONG_LOCAL_SURVIVAL
    assert rep.vanishing_direction == "none"
    assert rep.lambda_set.is_empty
    assert rep.margin == math.inf


def test_classify_global_extinction_at_critical_point():
    rep = classify(single_env(CRITICAL_PAIR))
    assert rep.regime == criteria.GLOBAL_EXTINCTION
    assert rep.vanishing_direction == "both"
    assert rep.lambda_set.contains(1.0)


def test_classify_global_extinction_interval_straddles_one():
    rep = classify(single_env(SUBCRITICAL_BRANCHY))
    assert rep.regime == criteria.GLOBAL_EXTINCTION
    assert rep.vanishing_direction == "both"


def test_classify_survival_with_local_extinction():
    # constant environment: top exponent is ln of the top eigenvalue
    gamma = _exact_estimate(math.log(18.717797887081346))
    rep = classify(single_env(GW_SUPERCRITICAL), gamma=gamma)
    assert rep.regime == criteria.GLOBAL_SURVIVAL_LOCAL_EXTINCTION
    assert rep.vanishing_direction == "right"
    assert rep.margin == math.inf


def test_classify_extinction_when_exponent_dominates():
    gamma = _exact_estimate(math.log(24.0) + 0.5)
    rep = classify(single_env(GW_SUPERCRITICAL), gamma=gamma)
    assert rep.regime == criteria.GLOBAL_EXTINCTION
    assert rep.vanishing_direction == "right"


def test_classify_inconclusive_inside_margin():
    gamma = LyapunovEstimate(
        value=math.log(24.0) - 0.001, stderr=0.01, steps=10**4, replicas=4, matrix_kind="A"
    )
    rep = classify(single_env(GW_SUPERCRITICAL), gamma=gamma)
    assert rep.regime == criteria.INCONCLUSIVE
    assert abs(rep.margin) < 3.0


def test_classify_requires_estimate_on_statistical_branch():
    with pytest.raises(ValueError, match="needs"):
        classify(single_env(GW_SUPERCRITICAL))


def test_classify_rejects_failing_conditions():
    env = single_env([(0.6, (1, 0, 0)), (0.4, (0, 0, 0))])  # mu+ = 0
    with pytest.raises(ConditionError) as err:
        classify(env)
    assert not err.value.report.cond_e


def test_remark_precedence_when_one_is_an_endpoint():
    # roots {1, 4}: the set extends above 1 but contains it, so the
    # mean-offspring remark wins over the right-vanishing branch
    env = single_env([(0.4, (2, 0, 0)), (0.2, (0, 0, 1)), (0.4, (0, 0, 0))])
    iv = lambda_feasible_set(env)
    assert iv.lo == pytest.approx(1.0, abs=1e-12)
    assert iv.hi == pytest.approx(4.0, rel=1e-12)
    assert one_in_feasible_set(env)
    rep = classify(env, gamma=_exact_estimate(0.0))
    assert rep.regime == criteria.GLOBAL_EXTINCTION
    assert rep.vanishing_direction == "both"


def test_classify_environment_computes_needed_estimate():
    rep = classify_environment(single_env(GW_SUPERCRITICAL), seed=5, steps=10_000, replicas=4)
    assert rep.regime == criteria.GLOBAL_SURVIVAL_LOCAL_EXTINCTION
    assert rep.gamma1 is not None and rep.gamma1.matrix_kind == "A"


def test_classify_environment_left_branch_uses_mirror_family():
    env = reflected(single_env(GW_SUPERCRITICAL))
    rep = classify_environment(env, seed=5, steps=10_000, replicas=4)
    assert rep.regime == criteria.GLOBAL_SURVIVAL_LOCAL_EXTINCTION
    assert rep.vanishing_direction == "left"
    assert rep.gamma1 is not None and rep.gamma1.matrix_kind == "A_tilde"


# -- interval properties -----------------------------------------------------

_feasible_moments = st.tuples(
    st.floats(0.05, 3.0), st.floats(0.0, 0.8), st.floats(0.05, 3.0)
).map(lambda t: MomentTriple(t[0], t[1], t[2]))


@given(_feasible_moments, st.floats(0.0, 1.0))
def test_interval_is_sublevel_set(m, frac):
    iv = state_feasible_interval(m)
    assume(not iv.is_empty)
    lam = iv.lo + frac * (iv.hi - iv.lo)
    assert criterion_value(m, lam) <= 1.0 + 1e-9


@given(_feasible_moments)
def test_outside_interval_fails_inequality(m):
    iv = state_feasible_interval(m)
    assume(not iv.is_empty)
    for lam in (iv.lo * (1.0 - 2e-6), iv.hi * (1.0 + 2e-6)):
        assert criterion_value(m, lam) > 1.0


@given(_feasible_moments)
def test_vieta_endpoint_product(m):
    iv = state_feasible_interval(m)
    assume(not iv.is_empty)
    assert iv.lo * iv.hi == pytest.approx(m.mu_minus / m.mu_plus, rel=1e-9)


@given(_feasible_moments)
def test_mirror_maps_interval_to_reciprocal(m):
    iv = state_feasible_interval(m)
    mirrored = state_feasible_interval(m.reflected())
    if iv.is_empty:
        assert mirrored.is_empty
    else:
        assert mirrored.lo == pytest.approx(1.0 / iv.hi, rel=1e-9)
        assert mirrored.hi == pytest.approx(1.0 / iv.lo, rel=1e-9)


def test_mirror_negates_drift_and_swaps_direction():
    env = single_env(GW_SUPERCRITICAL)
    menv = reflected(env)
    assert expected_log_drift(menv) == pytest.approx(-expected_log_drift(env), rel=1e-14)
    gamma = _exact_estimate(math.log(18.717797887081346))
    gamma_t = _exact_estimate(math.log(18.717797887081346), kind="A_tilde")
    right = classify(env, gamma=gamma)
    left = classify(menv, gamma_tilde=gamma_t)
    assert right.regime == left.regime == criteria.GLOBAL_SURVIVAL_LOCAL_EXTINCTION
    assert (right.vanishing_direction, left.vanishing_direction) == ("right", "left")


def test_interval_intersection_algebra():
    a = LambdaInterval(1.0, 4.0)
    b = LambdaInterval(2.0, 8.0)
    assert a.intersect(b) == LambdaInterval(2.0, 4.0)
    assert a.intersect(LambdaInterval(5.0, 6.0)).is_empty
    assert a.intersect(LambdaInterval.empty()).is_empty
