"""ESS maximization over study masses for the FLEXOR pseudo-population.

For fixed group prevalences theta, the ESS-optimal tilting at any study
mass vector gamma has the closed form
eta(x) = (sum_sz gamma_s^2 theta_z^2 / delta_sz(x))^-1, so the remaining
problem is maximizing the plugged-in sample ESS over gamma on the unit
simplex intersected with the box [gamma_min, gamma_max]^J. The maximizer
is approximated by cyclic pairwise-coordinate ascent: for each ordered
study pair (a, b), mass t >= 0 is moved from b to a with t chosen by
golden-section search on the interval allowed by the box. Sweeps repeat
until the relative ESS gain falls below ``inner_tol``; an outer loop
re-runs the ascent until its relative gain falls below ``outer_tol``.
Multiple restarts guard against local optima; restart 0 always starts
from the uniform vector (making the gamma-uniform pseudo-population a
guaranteed lower bound), and the remaining restarts draw uniform starts
from the constrained simplex.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataset import Dataset
from .errors import (
    DimensionMismatchError,
    NoFeasibleGammaError,
    ValidationError,
)
from .mps import MpsMatrix
from .rng import FLEXOR_STREAM, SeedPath, materialize_seed, spawn_rng

_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class FlexorSolution:
    """Result of one FLEXOR optimization.

    Attributes:
        gamma_opt: optimized study masses on the constrained simplex.
        ess_opt: sample ESS (absolute scale) at gamma_opt.
        n_outer_iters: outer iterations used by the winning run.
        restart_index: which restart produced this solution.
        ess_trace: ESS after each outer iteration (nondecreasing).
    """

    gamma_opt: np.ndarray
    ess_opt: float
    n_outer_iters: int
    restart_index: int
    ess_trace: tuple[float, ...] = ()


def _check_feasible(n_studies: int, gamma_min: float, gamma_max: float) -> None:
    if not (0.0 < gamma_min < gamma_max < 1.0):
        raise ValidationError("need 0 < gamma_min < gamma_max < 1")
    if gamma_min * n_studies > 1.0 + 1e-12 or gamma_max * n_studies < 1.0 - 1e-12:
        raise NoFeasibleGammaError(n_studies, gamma_min, gamma_max)


def sample_gamma_start(
    n_studies: int, gamma_min: float, gamma_max: float, rng: np.random.Generator
) -> np.ndarray:
    """Uniform draw from the simplex, rejected into the box.

    Normalized unit exponentials give a symmetric Dirichlet(1) draw;
    draws are rejected until every component lies inside
    [gamma_min, gamma_max], with a cap of 10,000 rejections after which
    the (always feasible) uniform vector is returned.
    """
    _check_feasible(n_studies, gamma_min, gamma_max)
    for _ in range(10_000):
        g = rng.exponential(size=n_studies)
        g /= g.sum()
        if np.all(g >= gamma_min) and np.all(g <= gamma_max):
            return g
    return np.full(n_studies, 1.0 / n_studies)


class _EssObjective:
    """Sample ESS as a function of gamma, with per-dataset terms cached.

    With T[i, s] = sum_z theta_z^2 / delta_isz, the optimal-tilting
    denominator is T @ gamma^2 and subject i's unnormalized weight is
    gamma_{s_i} * (theta_{z_i} / delta_{i, cell_i}) / (T @ gamma^2)_i.
    The mean-1 normalization cancels in the Kish ratio, so the ESS is
    computed directly from the unnormalized weights.
    """

    def __init__(self, mps: MpsMatrix, d: Dataset, theta: np.ndarray):
        n = d.n_subjects
        if mps.delta.shape[0] != n:
            raise DimensionMismatchError("propensity matrix rows must match dataset")
        if theta.size != mps.n_groups:
            raise DimensionMismatchError("theta length must match the MPS grid")
        inv_delta = 1.0 / mps.delta
        self.per_study = inv_delta.reshape(n, mps.n_studies, mps.n_groups) @ (
            theta**2
        )
        cell = (d.study - 1) * mps.n_groups + (d.group - 1)
        self.coef = theta[d.group - 1] * inv_delta[np.arange(n), cell]
        self.study0 = d.study - 1
        self.n_studies = mps.n_studies

    def ess(self, gamma: np.ndarray) -> float:
        denom = self.per_study @ (gamma * gamma)
        rho = gamma[self.study0] * self.coef / denom
        total = rho.sum()
        return float(total * total / (rho @ rho))


def optimized_ess(gamma, theta, mps: MpsMatrix, d: Dataset) -> float:
    """Maximum sample ESS attainable at fixed (gamma, theta).

    Evaluates the closed-form optimal tilting for every subject, forms
    the weights, and returns the Kish ESS of the mean-1 normalized
    weights.
    """
    gamma = np.asarray(gamma, dtype=float)
    theta = np.asarray(theta, dtype=float)
    for name, v in (("gamma", gamma), ("theta", theta)):
        if np.any(v <= 0) or abs(v.sum() - 1.0) > 1e-8:
            raise ValidationError(f"{name} must be a probability vector")
    return _EssObjective(mps, d, theta).ess(gamma)


def _golden_max(f, lo: float, hi: float, tol: float) -> tuple[float, float]:
    """Golden-section maximization on [lo, hi]; returns the best probe."""
    a, b = lo, hi
    x1 = b - _INVPHI * (b - a)
    x2 = a + _INVPHI * (b - a)
    f1, f2 = f(x1), f(x2)
    best_t, best_f = (x1, f1) if f1 >= f2 else (x2, f2)
    while b - a > tol:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INVPHI * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INVPHI * (b - a)
            f2 = f(x2)
        if f1 > best_f:
            best_t, best_f = x1, f1
        if f2 > best_f:
            best_t, best_f = x2, f2
    return best_t, best_f


def _pairwise_ascent(
    obj: _EssObjective,
    gamma: np.ndarray,
    gamma_min: float,
    gamma_max: float,
    inner_tol: float,
    max_inner: int,
    step_tol: float = 1e-5,
) -> tuple[np.ndarray, float]:
    """Cyclic pairwise mass moves until a full sweep stops improving."""
    gamma = gamma.copy()
    q = obj.ess(gamma)
    n = gamma.size
    for _ in range(max_inner):
        q_start = q
        for a in range(n):
            for b in range(n):
                if a == b:
                    continue
                hi = min(gamma_max - gamma[a], gamma[b] - gamma_min)
                if hi <= 1e-14:
                    continue

                def q_of(t, a=a, b=b):
                    cand = gamma.copy()
                    cand[a] += t
                    cand[b] -= t
                    return obj.ess(cand)

                t_best, q_best = _golden_max(q_of, 0.0, hi, step_tol)
                if q_best > q:
                    gamma[a] += t_best
                    gamma[b] -= t_best
                    q = q_best
        if q - q_start <= inner_tol * max(abs(q_start), 1.0):
            break
    return gamma, q


def flexor_2step(
    gamma_start,
    theta,
    mps: MpsMatrix,
    d: Dataset,
    gamma_min: float = 0.001,
    gamma_max: float = 0.999,
    outer_tol: float = 1e-6,
    inner_tol: float = 1e-8,
    max_outer: int = 100,
    max_inner: int = 200,
) -> FlexorSolution:
    """Alternating optimization from one starting point.

    Each outer iteration plugs the closed-form optimal tilting into the
    ESS and maximizes over gamma by pairwise-coordinate ascent; the loop
    exits when the relative ESS improvement drops below ``outer_tol``.
    The recorded ESS trace never decreases.
    """
    gamma = np.asarray(gamma_start, dtype=float).copy()
    _check_feasible(gamma.size, gamma_min, gamma_max)
    if abs(gamma.sum() - 1.0) > 1e-9:
        raise ValidationError("gamma_start must sum to 1")
    if np.any(gamma < gamma_min - 1e-12) or np.any(gamma > gamma_max + 1e-12):
        raise ValidationError("gamma_start must lie inside the box bounds")
    theta = np.asarray(theta, dtype=float)
    obj = _EssObjective(mps, d, theta)

    trace: list[float] = []
    q_old = 0.0
    n_outer = 0
    for n_outer in range(1, max_outer + 1):
        gamma, q = _pairwise_ascent(
            obj, gamma, gamma_min, gamma_max, inner_tol, max_inner
        )
        trace.append(q)
        if q_old > 0.0 and q / q_old - 1.0 < outer_tol:
            break
        q_old = q

    gamma = np.clip(gamma, gamma_min, gamma_max)
    return FlexorSolution(
        gamma_opt=gamma,
        ess_opt=optimized_ess(gamma, theta, mps, d),
        n_outer_iters=n_outer,
        restart_index=0,
        ess_trace=tuple(trace),
    )


def estimate_flexor(
    d: Dataset,
    mps: MpsMatrix,
    theta,
    num_random: int = 40,
    gamma_min: float = 0.001,
    gamma_max: float = 0.999,
    seed: int | None = None,
    outer_tol: float = 1e-6,
    inner_tol: float = 1e-8,
    max_outer: int = 100,
    max_inner: int = 200,
    _seed_path: SeedPath | None = None,
) -> FlexorSolution:
    """Best FLEXOR solution over ``num_random`` independent starts.

    Restart 0 starts from the uniform mass vector; restarts 1.. draw
    random starts from the constrained simplex, each on its own child
    random stream so results do not depend on execution order. Ties are
    broken toward the lowest restart index.
    """
    if num_random < 1:
        raise ValidationError("num_random must be >= 1")
    theta = np.asarray(theta, dtype=float)
    n_studies = mps.n_studies
    _check_feasible(n_studies, gamma_min, gamma_max)
    path = _seed_path if _seed_path is not None else (materialize_seed(seed),)

    best: FlexorSolution | None = None
    for t in range(num_random):
        if t == 0:
            start = np.full(n_studies, 1.0 / n_studies)
        else:
            start = sample_gamma_start(
                n_studies, gamma_min, gamma_max, spawn_rng(path + (FLEXOR_STREAM, t))
            )
        sol = flexor_2step(
            start, theta, mps, d,
            gamma_min=gamma_min, gamma_max=gamma_max,
            outer_tol=outer_tol, inner_tol=inner_tol,
            max_outer=max_outer, max_inner=max_inner,
        )
        if best is None or sol.ess_opt > best.ess_opt:
            best = replace(sol, restart_index=t)
    return best
