"""Quenched Monte Carlo for the branching walk: trials, traces, freezing.

Particles are never tracked individually: a configuration is a sparse
site -> count map, and one step draws, per occupied site, a multinomial
split of the count over the site's offspring atoms.  That is equal in law
to independent per-particle draws but costs O(occupied sites) regardless
of population size, so supercritical bursts stay cheap until the cap.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .criteria import criterion_value
from .envmodel import EnvironmentLaw, derive_seed, state_indices

EXTINCT = "Extinct"
CAP_REACHED = "CapReached"
ALIVE_AT_HORIZON = "AliveAtHorizon"

# per-site count guard; staying far below 2^63 keeps every sum and
# multinomial draw inside exact int64 range
_HARD_COUNT = 1 << 55


class CensoringError(RuntimeError):
    """Too many cap-censored trials for the estimate to be trusted."""


class PopulationOverflowError(RuntimeError):
    """A capless run outgrew the exact-integer guard."""


@dataclass(frozen=True)
class Configuration:
    """Sparse particle configuration: positive counts per occupied site."""

    counts: dict[int, int] = field(default_factory=dict)
    time: int = 0

    def __post_init__(self):
        if any(c <= 0 for c in self.counts.values()):
            raise ValueError("configuration must not store nonpositive counts")

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def single(cls, site: int = 0) -> "Configuration":
        return cls(counts={int(site): 1}, time=0)


class QuenchedEnvironment:
    """One realized environment: lazy site -> offspring-law view.

    Wraps (envlaw, seed) so any site's state is available on demand;
    this is the auto-extending form of a realized window.
    """

    def __init__(self, envlaw: EnvironmentLaw, seed: int):
        self.envlaw = envlaw
        self.seed = int(seed)
        self.atom_probs = [law.probabilities for law in envlaw.laws]
        self.atom_vectors = [law.vectors for law in envlaw.laws]

    def states_for(self, sites: np.ndarray) -> np.ndarray:
        return state_indices(self.envlaw, self.seed, sites)


def _step_arrays(
    sites: np.ndarray, counts: np.ndarray, env: QuenchedEnvironment, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """One synchronous branching step on (sorted sites, positive counts)."""
    states = env.states_for(sites)
    lo = int(sites[0]) - 1
    acc = np.zeros(int(sites[-1]) - lo + 2, dtype=np.int64)
    for s in np.unique(states):
        mask = states == s
        draws = rng.multinomial(counts[mask], env.atom_probs[s])
        vec = env.atom_vectors[s]
        pos = sites[mask] - lo
        np.add.at(acc, pos - 1, draws @ vec[:, 0])
        np.add.at(acc, pos, draws @ vec[:, 1])
        np.add.at(acc, pos + 1, draws @ vec[:, 2])
    occupied = np.nonzero(acc)[0]
    return occupied + lo, acc[occupied]


def step(config: Configuration, env: QuenchedEnvironment, rng: np.random.Generator) -> Configuration:
    """Advance a configuration by one generation in the quenched environment."""
    if not config.counts:
        return Configuration(counts={}, time=config.time + 1)
    sites = np.array(sorted(config.counts), dtype=np.int64)
    counts = np.fromiter((config.counts[int(s)] for s in sites), np.int64, len(sites))
    new_sites, new_counts = _step_arrays(sites, counts, env, rng)
    return Configuration(
        counts={int(s): int(c) for s, c in zip(new_sites, new_counts)},
        time=config.time + 1,
    )


@dataclass(frozen=True)
class TrialOutcome:
    status: str  # EXTINCT, CAP_REACHED or ALIVE_AT_HORIZON
    extinction_time: int | None
    last_origin_visit: int | None
    peak_population: int
    end_time: int

    @property
    def survived(self) -> bool:
        return self.status != EXTINCT

    @property
    def locally_alive_proxy(self) -> bool:
        """Origin occupied in the second half of the trial's actual span."""
        return (
            self.status != EXTINCT
            and self.last_origin_visit is not None
            and 2 * self.last_origin_visit >= self.end_time
        )


def _occupied_at_origin(sites: np.ndarray) -> bool:
    i = np.searchsorted(sites, 0)
    return i < len(sites) and sites[i] == 0


def run_trial(
    envlaw: EnvironmentLaw,
    env_seed: int,
    trial_seed: int,
    horizon: int,
    cap: int,
    start_site: int = 0,
) -> TrialOutcome:
    """Evolve one particle until extinction, the population cap, or the horizon."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    env = QuenchedEnvironment(envlaw, env_seed)
    rng = np.random.default_rng([env_seed, trial_seed])
    sites = np.array([start_site], dtype=np.int64)
    counts = np.array([1], dtype=np.int64)
    last_origin = 0 if start_site == 0 else None
    peak = 1
    for t in range(1, horizon + 1):
        sites, counts = _step_arrays(sites, counts, env, rng)
        if len(sites) == 0:
            return TrialOutcome(EXTINCT, t, last_origin, peak, t)
        if _occupied_at_origin(sites):
            last_origin = t
        total = int(counts.sum())
        peak = max(peak, total)
        if total >= cap or int(counts.max()) >= _HARD_COUNT:
            return TrialOutcome(CAP_REACHED, None, last_origin, peak, t)
    return TrialOutcome(ALIVE_AT_HORIZON, None, last_origin, peak, horizon)


@dataclass(frozen=True)
class SurvivalEstimates:
    """Survival frequencies with binomial standard errors.

    global_freq counts every non-extinct trial (cap hits included: in
    survival regimes the conditional extinction probability past the cap
    is negligible, and the bias direction is upward on survival).
    local_proxy_freq counts trials whose origin was still occupied in the
    second half of their span; a finite-horizon stand-in for infinitely
    many visits, reported as a proxy only.
    """

    global_freq: float
    global_stderr: float
    local_proxy_freq: float
    local_proxy_stderr: float
    trials: int
    mode: str
    outcomes: tuple[TrialOutcome, ...]


def _binomial_stderr(p: float, n: int) -> float:
    return math.sqrt(p * (1.0 - p) / n)


def survival_probabilities(
    envlaw: EnvironmentLaw,
    *,
    trials: int,
    horizon: int = 400,
    cap: int = 1_000_000,
    mode: str = "quenched",
    env_seed: int = 0,
    seed: int = 0,
    start_site: int = 0,
    n_workers: int = 1,
) -> SurvivalEstimates:
    """Monte Carlo survival frequencies over independent trials.

    mode "quenched" keeps one realized environment for every trial;
    "annealed" draws a fresh environment per trial.
    """
    if trials < 100:
        raise ValueError(f"need at least 100 trials, got {trials}")
    if mode not in ("quenched", "annealed"):
        raise ValueError(f"mode must be 'quenched' or 'annealed', got {mode!r}")

    def one(i: int) -> TrialOutcome:
        e_seed = env_seed if mode == "quenched" else derive_seed(env_seed, 1 + i)
        return run_trial(envlaw, e_seed, derive_seed(seed, i), horizon, cap, start_site)

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            outcomes = tuple(pool.map(one, range(trials)))
    else:
        outcomes = tuple(map(one, range(trials)))

    g = sum(o.survived for o in outcomes) / trials
    l = sum(o.locally_alive_proxy for o in outcomes) / trials
    return SurvivalEstimates(
        global_freq=g,
        global_stderr=_binomial_stderr(g, trials),
        local_proxy_freq=l,
        local_proxy_stderr=_binomial_stderr(l, trials),
        trials=trials,
        mode=mode,
        outcomes=outcomes,
    )


# ---------------------------------------------------------------------------
# Weighted-population supermartingale


def _log_weighted_population(sites: np.ndarray, counts: np.ndarray, log_lam: float) -> float:
    """ln of sum_x count(x) * lam^x, evaluated in log space."""
    if len(sites) == 0:
        return -math.inf
    t = np.log(counts.astype(float)) + sites * log_lam
    m = float(t.max())
    return m + math.log(float(np.exp(t - m).sum()))


@dataclass(frozen=True)
class SupermartingaleTrace:
    """Per-time empirical means of the lam-weighted population."""

    lam: float
    mean_h: np.ndarray  # length horizon+1, mean over trials
    stderr_h: np.ndarray  # stderr of each mean
    diff_mean: np.ndarray  # paired per-step increments, length horizon
    diff_stderr: np.ndarray
    trials: int
    horizon: int


def supermartingale_trace(
    envlaw: EnvironmentLaw,
    env_seed: int,
    lam: float,
    trials: int,
    horizon: int,
    seed: int = 0,
    start_site: int = 0,
) -> SupermartingaleTrace:
    """Trace h(n) = sum_x count(x) lam^x over quenched trials.

    Requires lam feasible for every state; then the conditional mean of h
    never increases, which the paired per-step increments make testable.
    """
    for m in envlaw.state_moments:
        if criterion_value(m, lam) > 1.0 + 1e-9:
            raise ValueError(
                f"lambda={lam} infeasible for state with moments {m.as_tuple()}"
            )
    env = QuenchedEnvironment(envlaw, env_seed)
    log_lam = math.log(lam)
    h = np.empty((trials, horizon + 1))
    for i in range(trials):
        rng = np.random.default_rng([env_seed, derive_seed(seed, i)])
        sites = np.array([start_site], dtype=np.int64)
        counts = np.array([1], dtype=np.int64)
        h[i, 0] = math.exp(start_site * log_lam)
        for t in range(1, horizon + 1):
            if len(sites):
                sites, counts = _step_arrays(sites, counts, env, rng)
                if len(counts) and int(counts.max()) >= _HARD_COUNT:
                    raise PopulationOverflowError(
                        f"population guard hit at step {t}; shorten the horizon"
                    )
            h[i, t] = math.exp(_log_weighted_population(sites, counts, log_lam))
    diffs = np.diff(h, axis=1)
    return SupermartingaleTrace(
        lam=lam,
        mean_h=h.mean(axis=0),
        stderr_h=h.std(axis=0, ddof=1) / math.sqrt(trials),
        diff_mean=diffs.mean(axis=0),
        diff_stderr=diffs.std(axis=0, ddof=1) / math.sqrt(trials),
        trials=trials,
        horizon=horizon,
    )


# ---------------------------------------------------------------------------
# Freezing construction: progeny counts at a one-sided barrier


def _frozen_run(
    env: QuenchedEnvironment,
    rng: np.random.Generator,
    level: int,
    start_count: int,
    max_time: int,
    max_population: int,
) -> int | None:
    """Start start_count particles at level; freeze everything reaching
    level-1; return the frozen total once no live particles remain, or
    None when a cap censors the run."""
    barrier = level - 1
    sites = np.array([level], dtype=np.int64)
    counts = np.array([start_count], dtype=np.int64)
    frozen = 0
    for _ in range(max_time):
        sites, counts = _step_arrays(sites, counts, env, rng)
        at_barrier = sites <= barrier
        if at_barrier.any():
            frozen += int(counts[at_barrier].sum())
            sites, counts = sites[~at_barrier], counts[~at_barrier]
        if len(sites) == 0:
            return frozen
        if int(counts.sum()) > max_population:
            return None
    return None


def frozen_progeny_trial(
    envlaw: EnvironmentLaw,
    env_seed: int,
    level: int,
    trial_seed: int,
    *,
    max_time: int = 5_000,
    max_population: int = 1_000_000,
    start_count: int = 1,
) -> int | None:
    """One sample of the frozen progeny count at the barrier below level.

    Meaningful in the right-vanishing regime, where the run terminates
    almost surely; cap hits return None (censored).
    """
    env = QuenchedEnvironment(envlaw, env_seed)
    rng = np.random.default_rng([env_seed, level, trial_seed])
    return _frozen_run(env, rng, level, start_count, max_time, max_population)


@dataclass(frozen=True)
class FrozenProfile:
    """Per-level quenched means of the frozen progeny counts.

    level_means[j] estimates the mean frozen count for one particle
    started at levels[j]; log_average is the mean of ln(level_means) over
    unflagged levels and estimates the log-mean growth functional whose
    sign decides global survival in the right-vanishing regime.
    """

    levels: np.ndarray
    level_means: np.ndarray
    level_stderrs: np.ndarray
    censored_rates: np.ndarray
    flagged_levels: tuple[int, ...]
    trials_per_level: int
    log_average: float
    log_average_stderr: float

    def log_partial_sums(self) -> np.ndarray:
        """Cumulative sums of ln(level_means): ln of the relay-product means."""
        if self.flagged_levels:
            raise ValueError(
                f"levels {self.flagged_levels} have zero estimated mean; rerun with more trials"
            )
        return np.cumsum(np.log(self.level_means))

    def g_series(self, lam: float) -> tuple[np.ndarray, np.ndarray]:
        """(g, delta): g[k] = lam^-k * product of the first k means, g[0]=1,
        and delta[k-1] = g[k] - g[k-1]."""
        if lam <= 0.0:
            raise ValueError(f"lambda must be positive, got {lam}")
        log_f = np.concatenate([[0.0], self.log_partial_sums()])
        k = np.arange(len(log_f))
        g = np.exp(log_f - k * math.log(lam))
        return g, np.diff(g)


def frozen_mean_profile(
    envlaw: EnvironmentLaw,
    env_seed: int,
    levels: int,
    trials_per_level: int,
    *,
    seed: int = 0,
    super_trials: int = 50,
    max_time: int = 5_000,
    max_population: int = 1_000_000,
    censor_threshold: float = 0.01,
) -> FrozenProfile:
    """Estimate the frozen-count mean at each level of one quenched environment.

    Trials are batched: a run started with B particles is, by branching
    independence, exactly a sum of B independent single-particle samples,
    so the batched sample mean has the law of a trials_per_level-trial
    mean while costing a constant number of array steps per generation.
    Standard errors come from the dispersion across super-trials.
    """
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if trials_per_level < 1:
        raise ValueError(f"trials_per_level must be >= 1, got {trials_per_level}")
    env = QuenchedEnvironment(envlaw, env_seed)
    n_super = min(super_trials, trials_per_level)
    batch = -(-trials_per_level // n_super)  # ceil division

    ks = np.arange(1, levels + 1)
    means = np.empty(levels)
    stderrs = np.empty(levels)
    censored_rates = np.empty(levels)
    flagged: list[int] = []
    for j, k in enumerate(ks):
        per_super = []
        censored = 0
        for r in range(n_super):
            rng = np.random.default_rng([env_seed, seed, int(k), r])
            total = _frozen_run(env, rng, int(k), batch, max_time, max_population)
            if total is None:
                censored += 1
            else:
                per_super.append(total / batch)
        rate = censored / n_super
        censored_rates[j] = rate
        if rate > censor_threshold:
            raise CensoringError(
                f"level {k}: censoring rate {rate:.3f} exceeds {censor_threshold}"
            )
        vals = np.array(per_super)
        means[j] = vals.mean()
        stderrs[j] = vals.std(ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
        if means[j] <= 0.0:
            flagged.append(int(k))

    good = np.array([k not in flagged for k in ks])
    logs = np.log(means[good])
    log_avg = float(logs.mean())
    log_se = float(logs.std(ddof=1) / math.sqrt(len(logs))) if len(logs) > 1 else 0.0
    return FrozenProfile(
        levels=ks,
        level_means=means,
        level_stderrs=stderrs,
        censored_rates=censored_rates,
        flagged_levels=tuple(flagged),
        trials_per_level=n_super * batch,
        log_average=log_avg,
        log_average_stderr=log_se,
    )
