"""Lyapunov exponents of i.i.d. products of the model's 2x2 matrices.

Three matrix families are built from a state's moment triple: the raw
recursion matrix (kind "A"), its left/right-swapped counterpart
("A_tilde"), and a nonnegative conjugate family parameterized by a
feasible lambda ("A_lambda").  The top exponent is estimated from long
renormalized products over independent replicas; the second exponent
comes from the determinant sum rule rather than subspace tracking.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .envmodel import EnvironmentLaw, MomentTriple

MATRIX_KINDS = ("A", "A_tilde", "A_lambda")

# entries of A_lambda may come out ~-1e-17 from float cancellation at the
# interval endpoints; treat anything above this as genuinely infeasible
_FEAS_SLACK = 1e-9


def build_A(m: MomentTriple) -> np.ndarray:
    """[[ (1-mu0)/mu+, -mu-/mu+ ], [1, 0]]; det = mu-/mu+."""
    if m.mu_plus <= 0.0:
        raise ValueError("matrix kind A needs mu_plus > 0")
    return np.array(
        [[(1.0 - m.mu_zero) / m.mu_plus, -m.mu_minus / m.mu_plus], [1.0, 0.0]]
    )


def build_A_tilde(m: MomentTriple) -> np.ndarray:
    """Mirror of build_A: left and right roles swapped; det = mu+/mu-."""
    if m.mu_minus <= 0.0:
        raise ValueError("matrix kind A_tilde needs mu_minus > 0")
    return np.array(
        [[(1.0 - m.mu_zero) / m.mu_minus, -m.mu_plus / m.mu_minus], [1.0, 0.0]]
    )


def feasibility_slack(m: MomentTriple, lam: float) -> float:
    """1 - (mu-/lam + mu0 + mu+*lam); nonnegative iff lam is feasible."""
    return 1.0 - m.mu_zero - m.mu_minus / lam - m.mu_plus * lam


def build_A_lambda(m: MomentTriple, lam: float) -> np.ndarray:
    """Nonnegative conjugate of build_A at a feasible lambda.

    [[ mu-/(lam^2 mu+), s/(lam mu+) ], [ mu-/(lam^2 mu+), 1 + s/(lam mu+) ]]
    with s the feasibility slack; det = mu-/(lam^2 mu+).
    """
    if lam <= 0.0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if m.mu_plus <= 0.0:
        raise ValueError("matrix kind A_lambda needs mu_plus > 0")
    slack = feasibility_slack(m, lam)
    if slack < -_FEAS_SLACK:
        raise ValueError(
            f"lambda={lam} infeasible for state with moments {m.as_tuple()}: "
            f"slack {slack:.3e} < 0"
        )
    a = m.mu_minus / (lam * lam * m.mu_plus)
    b = max(slack, 0.0) / (lam * m.mu_plus)
    return np.array([[a, b], [a, 1.0 + b]])


def conjugacy_matrix(lam: float) -> np.ndarray:
    """Constant change of basis B with A = lam * B^-1 A_lambda B."""
    return np.array([[1.0, -lam], [1.0, 0.0]])


def conjugacy_residual(m: MomentTriple, lam: float) -> float:
    """Max-abs entry of A - lam * B^-1 A_lambda B (0 up to roundoff)."""
    a = build_A(m)
    al = build_A_lambda(m, lam)
    b = conjugacy_matrix(lam)
    recon = lam * np.linalg.solve(b, al @ b)
    return float(np.abs(a - recon).max())


@dataclass(frozen=True)
class LyapunovEstimate:
    """Replica-averaged exponent in nats per step."""

    value: float
    stderr: float
    steps: int
    replicas: int
    matrix_kind: str
    lam: float | None = None

    @property
    def label(self) -> str:
        if self.matrix_kind == "A_lambda":
            return f"A_lambda({self.lam:g})"
        return self.matrix_kind


def state_matrices(envlaw: EnvironmentLaw, matrix_kind: str, lam: float | None = None) -> np.ndarray:
    """(n_states, 2, 2) table of the chosen family, one matrix per state."""
    if matrix_kind not in MATRIX_KINDS:
        raise ValueError(f"unknown matrix kind {matrix_kind!r}; choose from {MATRIX_KINDS}")
    if matrix_kind == "A_lambda":
        if lam is None:
            raise ValueError("matrix kind A_lambda needs a lambda value")
        mats = [build_A_lambda(m, lam) for m in envlaw.state_moments]
    elif matrix_kind == "A":
        mats = [build_A(m) for m in envlaw.state_moments]
    else:
        mats = [build_A_tilde(m) for m in envlaw.state_moments]
    return np.stack(mats)


def _log_norm_of_product(mats: np.ndarray) -> float:
    """ln of the max-abs norm of mats[-1] @ ... @ mats[0].

    Pairwise reduction with per-level rescaling: exact for the norm of the
    full product while keeping every intermediate entry in safe float range.
    """
    acc = 0.0
    cur = mats
    while cur.shape[0] > 1:
        n = cur.shape[0]
        h = n // 2
        prod = cur[1 : 2 * h : 2] @ cur[0 : 2 * h : 2]
        scale = np.abs(prod).max(axis=(1, 2))
        if not np.all(scale > 0.0):
            raise FloatingPointError("matrix product collapsed to zero")
        prod /= scale[:, None, None]
        acc += float(np.log(scale).sum())
        if n % 2:
            cur = np.concatenate([prod, cur[2 * h :]], axis=0)
        else:
            cur = prod
    return acc + float(np.log(np.abs(cur[0]).max()))


def top_lyapunov(
    envlaw: EnvironmentLaw,
    matrix_kind: str,
    steps: int = 100_000,
    replicas: int = 32,
    seed: int = 0,
    lam: float | None = None,
    n_workers: int = 1,
) -> LyapunovEstimate:
    """Estimate the top exponent of the i.i.d. product for one family.

    Each replica draws its own state sequence from a stream keyed by
    (seed, replica) and contributes ln ||product|| / steps; the reported
    value is the replica mean and stderr the replica dispersion / sqrt(R).
    """
    if steps < 1_000:
        raise ValueError(f"steps must be >= 1000, got {steps}")
    if replicas < 2:
        raise ValueError(f"replicas must be >= 2, got {replicas}")
    table = state_matrices(envlaw, matrix_kind, lam)
    weights = envlaw.weights

    def one_replica(r: int) -> float:
        rng = np.random.default_rng([seed, r])
        if envlaw.n_states == 1:
            idx = np.zeros(steps, dtype=np.int64)
        else:
            idx = rng.choice(envlaw.n_states, size=steps, p=weights)
        return _log_norm_of_product(table[idx]) / steps

    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            values = np.fromiter(pool.map(one_replica, range(replicas)), dtype=float, count=replicas)
    else:
        values = np.fromiter(map(one_replica, range(replicas)), dtype=float, count=replicas)

    value = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(replicas))
    return LyapunovEstimate(
        value=value, stderr=stderr, steps=steps, replicas=replicas,
        matrix_kind=matrix_kind, lam=lam,
    )


def second_exponent_via_det(envlaw: EnvironmentLaw, lam: float, gamma1_lambda: float) -> float:
    """Second exponent of the A_lambda family via the determinant sum rule.

    gamma1 + gamma2 equals the mean log determinant, which for this family
    is E ln(mu-/mu+) - 2 ln(lam).
    """
    mean_log_det = 0.0
    for w, m in zip(envlaw.weights, envlaw.state_moments):
        mean_log_det += w * math.log(m.mu_minus / m.mu_plus)
    return mean_log_det - 2.0 * math.log(lam) - gamma1_lambda
