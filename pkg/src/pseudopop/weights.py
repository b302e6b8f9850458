"""Balancing weights and effective sample size for pseudo-populations.

A pseudo-population is a reweighted version of the observed population in
which study, group, and covariates are mutually independent. It is
parameterized by study masses gamma (length J), group prevalences theta
(length K), and a tilting function eta(x) acting on the covariate density.
Three members of the family are implemented:

* ``IC``  (integrative combined): constant tilting, the multi-study
  extension of inverse probability weights.
* ``IGO`` (integrative generalized overlap): tilting
  1 / sum_sz 1/delta_sz(x).
* ``FLEXOR``: the ESS-maximizing pseudo-population; its tilting at fixed
  (gamma, theta) is (sum_sz gamma_s^2 theta_z^2 / delta_sz(x))^-1 and the
  study masses are optimized numerically (see :mod:`pseudopop.flexor`).

Subject i's unnormalized weight is
gamma_{s_i} * theta_{z_i} * eta(x_i) / delta_{s_i z_i}(x_i); weights are
reported after normalization to sample mean 1, on which scale the sample
ESS is N^2 / sum(wt^2) and is reported as a percentage of N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset, GroupPrevalence
from .errors import (
    AllZeroWeightsError,
    DimensionMismatchError,
    MissingGroupPrevalenceError,
    ValidationError,
)
from .mps import MpsMatrix, fit_mps, predict_mps
from .rng import SeedPath, materialize_seed

METHODS = ("FLEXOR", "IC", "IGO")


def _as_simplex(vec, name: str, tol: float = 1e-12) -> np.ndarray:
    v = np.asarray(vec, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError(f"{name} must be a nonempty vector")
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise ValidationError(f"{name} must be strictly positive")
    if abs(v.sum() - 1.0) > tol:
        raise ValidationError(f"{name} must sum to 1 (got {v.sum()!r})")
    return v


@dataclass(frozen=True)
class PseudoPopSpec:
    """Resolved pseudo-population parameters for one weighting method.

    For IC and IGO, ``gamma`` and ``theta`` are uniform regardless of user
    input. For FLEXOR, ``theta`` is the user-specified group prevalence
    vector and ``gamma`` holds the starting value (uniform) that the
    optimizer refines inside the box [gamma_min, gamma_max].
    """

    method: str
    gamma: np.ndarray
    theta: np.ndarray
    gamma_min: float = 0.001
    gamma_max: float = 0.999
    num_random: int = 40

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(
                f"method must be one of {METHODS}, got {self.method!r}"
            )
        object.__setattr__(self, "gamma", _as_simplex(self.gamma, "gamma"))
        object.__setattr__(self, "theta", _as_simplex(self.theta, "theta"))
        if not (0.0 < self.gamma_min < self.gamma_max < 1.0):
            raise ValidationError("need 0 < gamma_min < gamma_max < 1")
        if self.num_random < 1:
            raise ValidationError("num_random must be >= 1")

    @classmethod
    def resolve(
        cls,
        method: str,
        n_studies: int,
        n_groups: int,
        natural_group_prop=None,
        gamma_min: float = 0.001,
        gamma_max: float = 0.999,
        num_random: int = 40,
    ) -> "PseudoPopSpec":
        """Build the spec for a method, enforcing the per-method rules."""
        uniform_gamma = np.full(n_studies, 1.0 / n_studies)
        if method == "FLEXOR":
            if natural_group_prop is None:
                raise MissingGroupPrevalenceError()
            if isinstance(natural_group_prop, GroupPrevalence):
                theta = natural_group_prop.theta
            else:
                theta = GroupPrevalence(np.asarray(natural_group_prop)).theta
            if theta.size != n_groups:
                raise DimensionMismatchError(
                    f"naturalGroupProp has length {theta.size}, dataset has "
                    f"{n_groups} groups"
                )
        else:
            # IC and IGO fix uniform masses; any user prevalences are ignored.
            theta = np.full(n_groups, 1.0 / n_groups)
        return cls(method, uniform_gamma, theta, gamma_min, gamma_max, num_random)


@dataclass
class WeightsResult:
    """Normalized balancing weights and percentage sample ESS."""

    wt: np.ndarray
    percent_ess: float

    def __post_init__(self):
        self.wt = np.asarray(self.wt, dtype=float)
        if np.any(self.wt < 0) or not np.all(np.isfinite(self.wt)):
            raise ValidationError("weights must be finite and nonnegative")
        if abs(self.wt.mean() - 1.0) > 1e-10:
            raise ValidationError("weights must have sample mean 1")
        if not (0.0 < self.percent_ess <= 100.0 + 1e-9):
            raise ValidationError(
                f"percent ESS must lie in (0, 100], got {self.percent_ess!r}"
            )


def tilting(method: str, delta, gamma, theta):
    """Tilting function value(s) for one or more propensity rows.

    Args:
        method: "IC", "IGO", or "FLEXOR".
        delta: length-JK propensity row, or an N x JK matrix.
        gamma: study masses (length J); used by FLEXOR only.
        theta: group prevalences (length K); used by FLEXOR only.

    Returns:
        Scalar for a single row, else a length-N vector.
    """
    if method not in METHODS:
        raise ValidationError(f"method must be one of {METHODS}, got {method!r}")
    delta = np.asarray(delta, dtype=float)
    single = delta.ndim == 1
    rows = np.atleast_2d(delta)
    if method == "IC":
        out = np.ones(rows.shape[0])
    elif method == "IGO":
        out = 1.0 / (1.0 / rows).sum(axis=1)
    else:
        gamma = np.asarray(gamma, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if gamma.size * theta.size != rows.shape[1]:
            raise DimensionMismatchError(
                "gamma and theta sizes do not match the propensity row length"
            )
        mass_sq = np.outer(gamma**2, theta**2).ravel()
        out = 1.0 / ((1.0 / rows) @ mass_sq)
    return float(out[0]) if single else out


def unnormalized_weights(
    d: Dataset, mps: MpsMatrix, gamma, theta, method: str
) -> np.ndarray:
    """Per-subject unnormalized weights gamma_s theta_z eta(x) / delta_sz(x)."""
    if mps.delta.shape[0] != d.n_subjects:
        raise DimensionMismatchError("propensity matrix rows must match dataset")
    gamma = np.asarray(gamma, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if gamma.size != mps.n_studies or theta.size != mps.n_groups:
        raise DimensionMismatchError("gamma/theta lengths must match the MPS grid")
    eta = tilting(method, mps.delta, gamma, theta)
    cell = (d.study - 1) * mps.n_groups + (d.group - 1)
    own_delta = mps.delta[np.arange(d.n_subjects), cell]
    return gamma[d.study - 1] * theta[d.group - 1] * eta / own_delta


def normalize(rho_tilde) -> np.ndarray:
    """Rescale positive weights to sample mean 1."""
    rho = np.asarray(rho_tilde, dtype=float)
    if np.any(~np.isfinite(rho)) or np.any(rho < 0):
        raise ValidationError("weights must be finite and nonnegative")
    total = rho.sum()
    if total <= 0:
        raise AllZeroWeightsError("cannot normalize an all-zero weight vector")
    return rho * (rho.size / total)


def sample_ess(wt) -> float:
    """Sample ESS N^2 / sum(wt^2) of mean-1 weights (the Kish ratio)."""
    wt = np.asarray(wt, dtype=float)
    n = wt.size
    if abs(wt.mean() - 1.0) > 1e-10:
        raise ValidationError("sample_ess expects weights with mean 1")
    return float(n * n / (wt @ wt))


def percent_ess(wt) -> float:
    """Sample ESS as a percentage of N."""
    wt = np.asarray(wt, dtype=float)
    return 100.0 * sample_ess(wt) / wt.size


def balancing_weights(
    d: Dataset,
    method: str,
    natural_group_prop=None,
    num_random: int = 40,
    gamma_min: float = 0.001,
    gamma_max: float = 0.999,
    seed: int | None = None,
    mps: MpsMatrix | None = None,
    ridge_lambda: float = 1e-4,
    epsilon_floor: float = 1e-6,
    max_iter: int = 500,
    tol: float = 1e-6,
    _seed_path: SeedPath | None = None,
) -> WeightsResult:
    """Stage-1 analysis: estimate the MPS and compute normalized weights.

    Fits the membership model (unless a precomputed ``mps`` matrix is
    supplied, which is also the plug-in seam for alternative MPS
    estimators), then dispatches on the weighting method. IC and IGO are
    direct; FLEXOR optimizes the study masses to maximize the sample ESS.
    Output is bit-identical across runs for a fixed seed.

    Args:
        d: validated dataset.
        method: "FLEXOR", "IC", or "IGO".
        natural_group_prop: length-K prevalence vector; required for
            FLEXOR, ignored otherwise.
        num_random: FLEXOR restarts.
        gamma_min, gamma_max: box bounds for each FLEXOR study mass.
        seed: RNG seed for the FLEXOR restarts; None draws one from
            system entropy.
        mps: optional precomputed propensity matrix to reuse.
        ridge_lambda, epsilon_floor, max_iter, tol: MPS fit controls.
    """
    spec = PseudoPopSpec.resolve(
        method, d.n_studies, d.n_groups, natural_group_prop,
        gamma_min, gamma_max, num_random,
    )
    if mps is None:
        model = fit_mps(d, ridge_lambda=ridge_lambda, max_iter=max_iter, tol=tol)
        mps = predict_mps(model, d, epsilon_floor=epsilon_floor)

    if method == "FLEXOR":
        from .flexor import estimate_flexor

        path = _seed_path if _seed_path is not None else (materialize_seed(seed),)
        solution = estimate_flexor(
            d, mps, spec.theta,
            num_random=num_random, gamma_min=gamma_min, gamma_max=gamma_max,
            _seed_path=path,
        )
        gamma = solution.gamma_opt
    else:
        gamma = spec.gamma

    wt = normalize(unnormalized_weights(d, mps, gamma, spec.theta, method))
    return WeightsResult(wt, percent_ess(wt))
