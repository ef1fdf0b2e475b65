import math

import numpy as np
import pytest

from brwre.envmodel import law_from_atoms
from brwre.simulator import (
    ALIVE_AT_HORIZON,
    CAP_REACHED,
    EXTINCT,
    Configuration,
    QuenchedEnvironment,
    frozen_mean_profile,
    frozen_progeny_trial,
    run_trial,
    step,
    supermartingale_trace,
    survival_probabilities,
)
from conftest import (
    CRITICAL_PAIR,
    GW_SUPERCRITICAL,
    SUBCRITICAL_WALK,
    TREBLE_OR_DIE,
    gw_extinction_probability,
    single_env,
    two_state_env,
)


# -- stepping ----------------------------------------------------------------


def test_step_deterministic_split_offspring(rng):
    env = QuenchedEnvironment(single_env([(1.0, (1, 0, 1))]), 0)
    out = step(Configuration.single(0), env, rng)
    assert out.counts == {-1: 1, 1: 1}
    assert out.time == 1


def test_step_null_offspring_kills_everything(rng):
    env = QuenchedEnvironment(single_env([(1.0, (0, 0, 0))]), 0)
    out = step(Configuration.single(0), env, rng)
    assert out.counts == {} and out.total == 0


def test_step_mean_offspring_large_population(rng):
    # mean total offspring 1.25, per-particle variance 0.8875: the relative
    # error of the mean over 1e6 particles is within 0.01 at ~10 sigma
    env = QuenchedEnvironment(single_env(GW_SUPERCRITICAL), 0)
    out = step(Configuration(counts={0: 10**6}), env, rng)
    assert abs(out.total / 1e6 - 1.25) < 0.01


def test_step_empty_configuration_advances_time(rng):
    env = QuenchedEnvironment(single_env(GW_SUPERCRITICAL), 0)
    out = step(Configuration(counts={}, time=3), env, rng)
    assert out.counts == {} and out.time == 4


def test_configuration_rejects_zero_counts():
    with pytest.raises(ValueError):
        Configuration(counts={0: 0})


def test_step_aggregation_matches_per_particle_sampling(rng):
    """Multinomial aggregation must match per-particle draws in law.

    Two-sample moment comparison over randomized (law, count) cases; a
    3-sigma criterion over hundreds of cases is expected to produce a few
    exceedances by chance, so the gate is >=99% within 3 sigma and all
    within 5 sigma.
    """
    pool = [
        law_from_atoms(GW_SUPERCRITICAL),
        law_from_atoms(TREBLE_OR_DIE),
        law_from_atoms([(0.3, (2, 1, 0)), (0.3, (0, 0, 3)), (0.4, (1, 0, 1))]),
        law_from_atoms([(0.9, (0, 2, 0)), (0.1, (3, 0, 3))]),
    ]
    n_samples = 400
    z_scores = []
    for _ in range(250):
        law = pool[rng.integers(len(pool))]
        count = int(rng.integers(1, 51))
        vecs = law.vectors.sum(axis=1)

        agg = rng.multinomial(count, law.probabilities, size=n_samples) @ vecs
        idx = rng.choice(len(vecs), size=(n_samples, count), p=law.probabilities)
        per_particle = vecs[idx].sum(axis=1)

        for a, b in ((agg, per_particle),):
            se_mean = math.hypot(a.std(ddof=1), b.std(ddof=1)) / math.sqrt(n_samples)
            z_scores.append(abs(a.mean() - b.mean()) / se_mean)
            va, vb = a.var(ddof=1), b.var(ddof=1)
            mu4 = lambda x: ((x - x.mean()) ** 4).mean()
            se_var = math.sqrt(
                (mu4(a) - va**2) / n_samples + (mu4(b) - vb**2) / n_samples
            )
            if se_var > 0:
                z_scores.append(abs(va - vb) / se_var)
    z = np.array(z_scores)
    assert (z <= 3.0).mean() >= 0.99
    assert z.max() <= 5.0


# -- trials ------------------------------------------------------------------


def test_trial_null_offspring_extinct_at_one():
    out = run_trial(single_env([(1.0, (0, 0, 0))]), 0, 0, horizon=10, cap=100)
    assert out.status == EXTINCT
    assert out.extinction_time == 1 and out.end_time == 1
    assert out.peak_population == 1


def test_trial_deterministic_reproduction():
    env = single_env(GW_SUPERCRITICAL)
    a = run_trial(env, 12, 34, horizon=50, cap=10**4)
    b = run_trial(env, 12, 34, horizon=50, cap=10**4)
    assert a == b


def test_trial_cap_reached_flags_peak():
    env = single_env(TREBLE_OR_DIE)
    for seed in range(20):
        out = run_trial(env, 1, seed, horizon=400, cap=1000)
        if out.status == CAP_REACHED:
            assert out.peak_population >= 1000
            assert out.end_time < 400
            return
    pytest.fail("no trial reached the cap")


def test_survival_frequency_matches_branching_oracle():
    q = gw_extinction_probability(GW_SUPERCRITICAL)
    assert q == pytest.approx(7.0 / 12.0, abs=1e-12)
    est = survival_probabilities(
        single_env(GW_SUPERCRITICAL), trials=2000, horizon=300, cap=10**5,
        env_seed=11, seed=5,
    )
    assert abs(est.global_freq - (1.0 - q)) <= 4.0 * max(est.global_stderr, 1e-3)


def test_survival_golden_ratio_law():
    q = gw_extinction_probability(TREBLE_OR_DIE)
    assert q == pytest.approx((math.sqrt(5.0) - 1.0) / 2.0, abs=1e-12)
    est = survival_probabilities(
        single_env(TREBLE_OR_DIE), trials=2000, horizon=300, cap=10**5,
        env_seed=11, seed=5,
    )
    assert abs(est.global_freq - (1.0 - q)) <= 4.0 * max(est.global_stderr, 1e-3)


def test_survival_subcritical_dies():
    est = survival_probabilities(
        single_env(SUBCRITICAL_WALK), trials=1000, horizon=400, cap=10**6,
        env_seed=3, seed=4,
    )
    assert est.global_freq <= 0.01


def test_local_proxy_tracks_global_for_strong_local_law():
    est = survival_probabilities(
        single_env(TREBLE_OR_DIE), trials=1000, horizon=300, cap=10**5,
        env_seed=2, seed=9,
    )
    tol = 3.0 * math.hypot(est.global_stderr, est.local_proxy_stderr)
    assert abs(est.global_freq - est.local_proxy_freq) <= tol


def test_local_proxy_vanishes_for_drifting_law():
    est = survival_probabilities(
        single_env(GW_SUPERCRITICAL), trials=1000, horizon=300, cap=10**5,
        env_seed=2, seed=9,
    )
    assert est.global_freq > 0.3
    assert est.local_proxy_freq <= 0.01


def test_survival_modes_and_validation():
    env = single_env(GW_SUPERCRITICAL)
    with pytest.raises(ValueError):
        survival_probabilities(env, trials=50)
    with pytest.raises(ValueError):
        survival_probabilities(env, trials=200, mode="other")
    quenched = survival_probabilities(env, trials=100, horizon=50, cap=10**4, env_seed=1, seed=1)
    annealed = survival_probabilities(
        env, trials=100, horizon=50, cap=10**4, env_seed=1, seed=1, mode="annealed"
    )
    assert quenched.mode == "quenched" and annealed.mode == "annealed"


def test_survival_workers_do_not_change_result():
    env = single_env(GW_SUPERCRITICAL)
    a = survival_probabilities(env, trials=120, horizon=60, cap=10**4, env_seed=7, seed=7)
    b = survival_probabilities(
        env, trials=120, horizon=60, cap=10**4, env_seed=7, seed=7, n_workers=4
    )
    assert a.outcomes == b.outcomes


# -- weighted-population supermartingale --------------------------------------


def test_trace_critical_law_has_unit_mean():
    # at lambda=1 the weighted population is the plain count of a critical
    # branching process: mean exactly 1 at every time
    trace = supermartingale_trace(single_env(CRITICAL_PAIR), 5, 1.0, trials=3000, horizon=30, seed=2)
    se = np.maximum(trace.diff_stderr, 1e-12)
    assert np.all(np.abs(trace.diff_mean) <= 4.0 * se)
    assert trace.mean_h[0] == 1.0
    se_h = np.maximum(trace.stderr_h[1:], 1e-12)
    assert np.all(np.abs(trace.mean_h[1:] - 1.0) <= 4.0 * se_h)


def test_trace_nonincreasing_for_drifting_law():
    trace = supermartingale_trace(single_env(GW_SUPERCRITICAL), 5, 2.0, trials=2000, horizon=40, seed=3)
    z = np.where(
        trace.diff_stderr > 0,
        trace.diff_mean / trace.diff_stderr,
        np.where(trace.diff_mean > 0, np.inf, 0.0),
    )
    assert z.max() <= 3.0


def test_trace_null_offspring_drops_to_zero():
    trace = supermartingale_trace(single_env([(1.0, (0, 0, 0))]), 0, 1.0, trials=200, horizon=3)
    assert trace.mean_h[0] == 1.0
    assert np.all(trace.mean_h[1:] == 0.0)


def test_trace_rejects_infeasible_lambda():
    with pytest.raises(ValueError, match="infeasible"):
        supermartingale_trace(single_env(GW_SUPERCRITICAL), 0, 30.0, trials=100, horizon=10)


# -- freezing construction ----------------------------------------------------


def test_frozen_deterministic_left_walker():
    env = single_env([(1.0, (1, 0, 0))])
    for level in (1, 3):
        assert frozen_progeny_trial(env, 0, level, 0) == 1


def test_frozen_null_offspring():
    env = single_env([(1.0, (0, 0, 0))])
    assert frozen_progeny_trial(env, 0, 1, 0) == 0


def test_frozen_mean_matches_minimal_root():
    # quenched mean of the frozen count solves mu+ m^2 - (1-mu0) m + mu- = 0
    env = single_env(GW_SUPERCRITICAL)
    root = min(np.roots([0.05, -1.0, 1.2]).real)
    assert root == pytest.approx(1.2822021129186527, rel=1e-12)
    vals = [frozen_progeny_trial(env, 7, 1, t) for t in range(4000)]
    assert None not in vals
    mean = np.mean(vals)
    se = np.std(vals, ddof=1) / math.sqrt(len(vals))
    assert abs(mean - root) <= 3.5 * se


def test_frozen_censoring_returns_none():
    env = single_env(TREBLE_OR_DIE)  # no drift: freezing often never ends
    vals = [frozen_progeny_trial(env, 0, 1, t, max_time=5, max_population=50) for t in range(40)]
    assert any(v is None for v in vals)


def test_profile_constant_env_log_average():
    env = single_env(GW_SUPERCRITICAL)
    profile = frozen_mean_profile(env, 7, 12, 4000, seed=3)
    oracle = math.log(1.2822021129186527)
    assert profile.flagged_levels == ()
    assert np.all(profile.censored_rates == 0.0)
    assert abs(profile.log_average - oracle) <= 4.0 * max(profile.log_average_stderr, 1e-4)
    assert profile.trials_per_level >= 4000


def test_profile_levels_bounded_by_top_feasible_lambda():
    env = single_env(GW_SUPERCRITICAL)
    profile = frozen_mean_profile(env, 7, 12, 3000, seed=5)
    hi = 18.717797887081346
    rel = profile.level_stderrs / profile.level_means
    assert np.all(profile.level_means <= hi * (1.0 + 3.0 * rel))


def test_profile_delta_nonpositive_within_noise():
    env = single_env(GW_SUPERCRITICAL)
    profile = frozen_mean_profile(env, 7, 10, 5000, seed=8)
    lam = 2.0
    g, delta = profile.g_series(lam)
    assert g[0] == 1.0
    # delta method: sd of ln f(k) accumulates the per-level relative errors
    rel = profile.level_stderrs / profile.level_means
    sd_log_f = np.sqrt(np.cumsum(rel**2))
    sigma_g = g[1:] * sd_log_f
    sigma_prev = np.concatenate([[0.0], sigma_g[:-1]])
    assert np.all(delta <= 3.0 * (sigma_g + sigma_prev) + 1e-12)


def test_profile_two_state_log_average_sign():
    # the mixture drifts left strongly; survival functional must be positive
    env = two_state_env()
    profile = frozen_mean_profile(env, 17, 16, 3000, seed=2)
    assert profile.log_average > 0.0


def test_profile_rejects_bad_inputs():
    env = single_env(GW_SUPERCRITICAL)
    with pytest.raises(ValueError):
        frozen_mean_profile(env, 7, 0, 100)
    with pytest.raises(ValueError):
        frozen_mean_profile(env, 7, 3, 0)
