"""Nonparametric bootstrap of the full two-stage pipeline.

Each replicate resamples subjects i.i.d. with replacement (redrawing up
to a cap if any study/group cell comes up empty), refits the propensity
model, recomputes the balancing weights, and re-estimates every feature.
Replicate b draws from a child random stream addressed by (seed, b), so
results do not depend on execution order or thread count, and removing a
replicate leaves the others bit-identical.

The resample stream and the propensity refit do not depend on the
weighting method, so analyses of several methods under the same seed can
share them; :func:`causal_estimate` accepts one method, while the study
driver uses the shared variant to avoid refitting identical models.
Bootstrap propensity refits are warm-started from the full-data fit,
which changes only the iteration count, not the optimum.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import ResampleExhaustedError, ValidationError
from .estimators import MomentsArray, OtherFeatures, estimate_features
from .mps import fit_mps, predict_mps
from .rng import BOOTSTRAP_STREAM, SeedPath, materialize_seed, spawn_rng
from .weights import WeightsResult, balancing_weights

MAX_REDRAWS = 100


def resample(
    d: Dataset, rng: np.random.Generator, max_redraws: int = MAX_REDRAWS
) -> Dataset:
    """Bootstrap resample with every study/group cell nonempty.

    Raises:
        ResampleExhaustedError: no admissible draw within ``max_redraws``.
    """
    n = d.n_subjects
    for _ in range(max_redraws):
        rows = rng.integers(0, n, size=n)
        counts = np.zeros((d.n_studies, d.n_groups), dtype=int)
        np.add.at(counts, (d.study[rows] - 1, d.group[rows] - 1), 1)
        if counts.min() > 0:
            return d.take(rows)
    raise ResampleExhaustedError(max_redraws)


@dataclass
class BootstrapResult:
    """Collated feature estimates across bootstrap replicates.

    Attributes:
        collated_moments: 3 x K x L x B_eff array of per-replicate moments.
        collated_other: L x B_eff (K = 2) or L x pairs x B_eff mean diffs.
        collated_ess: length-B_eff percent ESS per replicate.
        n_failed: replicates abandoned after the resample redraw cap.
    """

    collated_moments: np.ndarray
    collated_other: np.ndarray
    collated_ess: np.ndarray
    n_failed: int

    @property
    def b_effective(self) -> int:
        return self.collated_ess.size


@dataclass
class CausalResult:
    """Full output of the two-stage causal analysis."""

    weights: WeightsResult
    moments: MomentsArray
    other_features: OtherFeatures
    bootstrap: BootstrapResult
    method: str
    seed: int


def percentile_ci(samples, level: float) -> tuple[float, float]:
    """Percentile confidence interval with linear-interpolation quantiles.

    Endpoints are the empirical quantiles at (1 - level)/2 and
    1 - (1 - level)/2, interpolated between order statistics at
    h = (B - 1) p + 1.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size < 2:
        raise ValidationError("need at least 2 samples for a percentile interval")
    if not (0.0 < level < 1.0):
        raise ValidationError("confidence level must lie strictly in (0, 1)")
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(samples, [alpha, 1.0 - alpha], method="linear")
    return float(lo), float(hi)


def _analyze_sample(
    sample: Dataset,
    methods: tuple[str, ...],
    prevalence_by_method: dict,
    path: SeedPath,
    mps_kwargs: dict,
    weight_kwargs: dict,
    warm_start: np.ndarray | None = None,
    model: "object | None" = None,
) -> dict[str, tuple[WeightsResult, np.ndarray, np.ndarray]]:
    """Weights and features for every method on one (re)sample, sharing a
    single propensity fit."""
    if model is None:
        model = fit_mps(sample, init=warm_start, **mps_kwargs)
    mps = predict_mps(model, sample, epsilon_floor=weight_kwargs["epsilon_floor"])
    out = {}
    for method in methods:
        wr = balancing_weights(
            sample,
            method,
            natural_group_prop=prevalence_by_method.get(method),
            num_random=weight_kwargs["num_random"],
            gamma_min=weight_kwargs["gamma_min"],
            gamma_max=weight_kwargs["gamma_max"],
            mps=mps,
            _seed_path=path,
        )
        moments, other = estimate_features(sample, wr.wt)
        out[method] = (wr, moments.values, np.asarray(other.mean_diffs))
    return out


def multi_causal_estimate(
    d: Dataset,
    methods,
    natural_group_prop=None,
    B: int = 100,
    num_random: int = 40,
    gamma_min: float = 0.001,
    gamma_max: float = 0.999,
    seed: int | None = None,
    threads: int = 1,
    ridge_lambda: float = 1e-4,
    epsilon_floor: float = 1e-6,
    max_iter: int = 5000,
    tol: float = 1e-6,
) -> dict[str, CausalResult]:
    """Run the stage-2 analysis for several methods under one seed.

    Resamples and propensity fits are shared across methods; each
    method's output is bit-identical to a standalone
    :func:`causal_estimate` call with the same seed.
    """
    methods = tuple(methods)
    if B < 1:
        raise ValidationError("B must be >= 1")
    seed = materialize_seed(seed)
    path: SeedPath = (seed,)
    prevalence_by_method = {
        m: (natural_group_prop if m == "FLEXOR" else None) for m in methods
    }
    mps_kwargs = dict(ridge_lambda=ridge_lambda, max_iter=max_iter, tol=tol)
    weight_kwargs = dict(
        num_random=num_random,
        gamma_min=gamma_min,
        gamma_max=gamma_max,
        epsilon_floor=epsilon_floor,
    )

    full_model = fit_mps(d, **mps_kwargs)
    point = _analyze_sample(
        d, methods, prevalence_by_method, path, mps_kwargs, weight_kwargs,
        model=full_model,
    )

    def one_replicate(b: int):
        rep_path = path + (BOOTSTRAP_STREAM, b)
        try:
            rs = resample(d, spawn_rng(rep_path))
        except ResampleExhaustedError:
            return None
        return _analyze_sample(
            rs, methods, prevalence_by_method, rep_path, mps_kwargs,
            weight_kwargs, warm_start=full_model.coefficients,
        )

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            replicates = list(pool.map(one_replicate, range(B)))
    else:
        replicates = [one_replicate(b) for b in range(B)]

    kept = [r for r in replicates if r is not None]
    n_failed = B - len(kept)
    if not kept:
        raise ResampleExhaustedError(MAX_REDRAWS)

    results = {}
    for method in methods:
        wr, moments_values, other_values = point[method]
        boot = BootstrapResult(
            collated_moments=np.stack([r[method][1] for r in kept], axis=-1),
            collated_other=np.stack([r[method][2] for r in kept], axis=-1),
            collated_ess=np.array([r[method][0].percent_ess for r in kept]),
            n_failed=n_failed,
        )
        results[method] = CausalResult(
            weights=wr,
            moments=MomentsArray(moments_values),
            other_features=_rewrap_other(other_values, d.n_groups),
            bootstrap=boot,
            method=method,
            seed=seed,
        )
    return results


def _rewrap_other(values: np.ndarray, n_groups: int) -> OtherFeatures:
    from itertools import combinations

    pairs = tuple(combinations(range(1, n_groups + 1), 2))
    return OtherFeatures(values, pairs)


def causal_estimate(
    d: Dataset,
    method: str,
    natural_group_prop=None,
    B: int = 100,
    num_random: int = 40,
    gamma_min: float = 0.001,
    gamma_max: float = 0.999,
    seed: int | None = None,
    threads: int = 1,
    ridge_lambda: float = 1e-4,
    epsilon_floor: float = 1e-6,
    max_iter: int = 5000,
    tol: float = 1e-6,
) -> CausalResult:
    """Stage-2 analysis: point estimates plus B bootstrap replicates.

    Point estimates come from the full dataset; every replicate re-runs
    the weight computation and feature estimation on a resample. Output
    is deterministic given the seed regardless of ``threads``.
    """
    return multi_causal_estimate(
        d,
        (method,),
        natural_group_prop=natural_group_prop,
        B=B,
        num_random=num_random,
        gamma_min=gamma_min,
        gamma_max=gamma_max,
        seed=seed,
        threads=threads,
        ridge_lambda=ridge_lambda,
        epsilon_floor=epsilon_floor,
        max_iter=max_iter,
        tol=tol,
    )[method]
