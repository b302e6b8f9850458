"""Synthetic multi-study data generation and the simulation study driver.

Datasets are generated by resampling covariate rows from a base matrix,
assigning study/group memberships from known logistic propensity models,
and drawing outcomes from a linear signal with noise calibrated to a
target R-squared. The same known models yield Monte-Carlo ground-truth
weighted average treatment effects (WATEs) per weighting method, against
which estimator bias can be measured.

Generation protocol for one dataset:

1. Cluster the base covariate rows into Q k-means clusters. Draw cluster
   masses pi ~ Dirichlet(1) and populate a large natural population by
   sampling rows uniformly within clusters. Draw group prevalences
   theta ~ Dirichlet(1) and calibrate the intercept of the group
   propensity delta_2(x) = expit(omega0 + omega1 * sum(x) / xbar) so its
   natural-population average equals theta_2 (xbar is the
   natural-population mean of sum(x)).
2. Resample n_subjects covariate rows uniformly from the base matrix.
3. Assign study-given-group propensities with log odds (vs study 1)
   s * z * omega1 * sum(x) / mean(sum(x)) for s >= 2, multiply by the
   group propensities to get the full membership probabilities, and draw
   memberships categorically (redrawing if any cell comes up empty).
4. Draw outcomes Normal(z * sum(x) + 50, tau^2) with tau^2 chosen so the
   population R-squared of outcome on signal equals the target.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .bootstrap import causal_estimate
from .dataset import Dataset
from .errors import (
    BisectionFailureError,
    EmptyCellError,
    ValidationError,
)
from .flexor import estimate_flexor
from .mps import MpsMatrix
from .rng import (
    CLUSTER_STREAM,
    SIM_STREAM,
    TRUTH_STREAM,
    SeedPath,
    materialize_seed,
    spawn_rng,
)
from .weights import tilting

DEFAULT_METHODS = ("FLEXOR", "IC", "IGO")


def default_base_covariates(
    n_rows: int = 450, n_cols: int = 30, seed: int = 20240613
) -> np.ndarray:
    """Synthetic stand-in base matrix: near-centered Gaussian-mixture
    columns plus Bernoulli 0/1 columns.

    Row sums straddle zero with a positive mean (coefficient of variation
    around 1.4). That spread is what keeps every study/group cell
    populated under the membership model: covariate sums near zero feed
    the middle studies, while strongly positive or negative sums
    concentrate in the extreme ones.
    """
    rng = np.random.default_rng(seed)
    n_binary = n_cols // 3
    cols = []
    for _ in range(n_cols - n_binary):
        mu = rng.uniform(-0.15, 0.15)
        component = rng.integers(0, 2, size=n_rows)
        centers = np.array([mu - 0.6, mu + 0.6])
        cols.append(rng.normal(centers[component], 0.8))
    for _ in range(n_binary):
        cols.append(rng.binomial(1, rng.uniform(0.2, 0.5), size=n_rows).astype(float))
    return np.column_stack(cols)


@dataclass
class SimConfig:
    """Configuration of the data-generating process."""

    n_studies: int = 7
    n_groups: int = 2
    n_outcomes: int = 1
    n_subjects: int = 500
    n_clusters: int = 12
    omega1: float = 1.0
    r_squared_target: float = 0.9
    natural_pop_size: int = 100_000
    base_covariates: np.ndarray | None = None
    seed: int | None = None
    null_group_effect: bool = False

    def __post_init__(self):
        for name in (
            "n_studies", "n_groups", "n_outcomes", "n_subjects",
            "n_clusters", "natural_pop_size",
        ):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if self.n_groups != 2:
            raise ValidationError(
                "the generation protocol defines group propensities for "
                "exactly 2 groups"
            )
        if not (0.0 < self.r_squared_target < 1.0):
            raise ValidationError("r_squared_target must lie in (0, 1)")
        if self.base_covariates is None:
            self.base_covariates = default_base_covariates()
        self.base_covariates = np.atleast_2d(
            np.asarray(self.base_covariates, dtype=float)
        )
        if not np.all(np.isfinite(self.base_covariates)):
            raise ValidationError("base covariates must be finite")
        if self.n_clusters > self.base_covariates.shape[0]:
            raise ValidationError("n_clusters cannot exceed the base row count")


@dataclass
class SimTruth:
    """Known generation parameters of one simulated dataset."""

    theta_true: np.ndarray
    pi_true: np.ndarray
    omega0: float
    omega1: float
    natural_sum_mean: float
    sample_sum_mean: float
    true_wate_per_method: dict[str, float] = field(default_factory=dict)


# ------------------------------------------------------------------ k-means


def kmeans(
    X,
    n_clusters: int,
    seed: int | None = None,
    max_iter: int = 100,
    rng: np.random.Generator | None = None,
    history: list | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ initialization.

    Empty clusters are reseeded to the point farthest from its assigned
    center, so every returned cluster is nonempty. If ``history`` is a
    list, the within-cluster sum of squares after each assignment step is
    appended to it (a nonincreasing sequence).

    Returns:
        (centers, assignments, counts) with assignments in 0..n_clusters-1.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if np.unique(X, axis=0).shape[0] < n_clusters:
        raise ValidationError("n_clusters exceeds the number of distinct rows")
    if rng is None:
        rng = np.random.default_rng(seed)

    centers = np.empty((n_clusters, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for q in range(1, n_clusters):
        total = d2.sum()
        if total <= 0:
            pick = int(rng.integers(n))
        else:
            pick = int(np.searchsorted(np.cumsum(d2), rng.random() * total))
            pick = min(pick, n - 1)
        centers[q] = X[pick]
        d2 = np.minimum(d2, ((X - centers[q]) ** 2).sum(axis=1))

    prev = None
    assign = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        dists = (
            (X * X).sum(axis=1)[:, None]
            - 2.0 * X @ centers.T
            + (centers * centers).sum(axis=1)[None, :]
        )
        np.maximum(dists, 0.0, out=dists)
        assign = dists.argmin(axis=1)
        while True:
            counts = np.bincount(assign, minlength=n_clusters)
            empty = np.flatnonzero(counts == 0)
            if empty.size == 0:
                break
            q = empty[0]
            farthest = int(dists[np.arange(n), assign].argmax())
            centers[q] = X[farthest]
            dists[:, q] = ((X - centers[q]) ** 2).sum(axis=1)
            assign = dists.argmin(axis=1)
            assign[farthest] = q
        if history is not None:
            history.append(float(dists[np.arange(n), assign].sum()))
        if prev is not None and np.array_equal(assign, prev):
            break
        prev = assign
        for q in range(n_clusters):
            centers[q] = X[assign == q].mean(axis=0)
    counts = np.bincount(assign, minlength=n_clusters)
    return centers, assign, counts


# -------------------------------------------------------- generation helpers


def _stable_sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _calibrate_omega0(scaled_sums: np.ndarray, omega1: float, target: float) -> float:
    """Intercept making the population mean of the group-2 propensity hit
    ``target``, found by bisection with a geometrically widened bracket."""

    def mean_p(w0: float) -> float:
        return float(_stable_sigmoid(w0 + omega1 * scaled_sums).mean())

    lo, hi = -1.0, 1.0
    for _ in range(60):
        if mean_p(lo) <= target:
            break
        lo *= 2.0
    else:
        raise BisectionFailureError("could not bracket omega0 from below")
    for _ in range(60):
        if mean_p(hi) >= target:
            break
        hi *= 2.0
    else:
        raise BisectionFailureError("could not bracket omega0 from above")

    for _ in range(500):
        mid = 0.5 * (lo + hi)
        value = mean_p(mid)
        if abs(value - target) <= 1e-8:
            return mid
        if value < target:
            lo = mid
        else:
            hi = mid
    raise BisectionFailureError("omega0 bisection did not reach tolerance")


def _true_mps(
    sums: np.ndarray,
    omega0: float,
    omega1: float,
    natural_sum_mean: float,
    sample_sum_mean: float,
    n_studies: int,
    n_groups: int,
) -> np.ndarray:
    """Membership probabilities (N x JK, row-major cells) under the known
    generating model, evaluated at covariate sums."""
    n = sums.shape[0]
    e = np.exp(omega0 + omega1 * sums / natural_sum_mean)
    group_prob = np.column_stack([1.0 / (1.0 + e), e / (1.0 + e)])

    scaled = sums / sample_sum_mean
    out = np.empty((n, n_studies, n_groups))
    study_ids = np.arange(2, n_studies + 1)
    for zi in range(n_groups):
        zval = zi + 1
        logits = np.zeros((n, n_studies))
        if n_studies > 1:
            logits[:, 1:] = scaled[:, None] * (study_ids * zval * omega1)
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        out[:, :, zi] = probs * group_prob[:, zi][:, None]
    return out.reshape(n, n_studies * n_groups)


def _draw_cells(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = probs.cumsum(axis=1)
    r = rng.random(probs.shape[0]) * cum[:, -1]
    return np.minimum((r[:, None] >= cum).sum(axis=1), probs.shape[1] - 1)


def gen_dataset(
    cfg: SimConfig,
    rng: np.random.Generator | None = None,
    cluster_assignments: np.ndarray | None = None,
) -> tuple[Dataset, SimTruth]:
    """Generate one dataset and its ground-truth parameters.

    Args:
        cfg: generation settings.
        rng: random stream; derived from ``cfg.seed`` when omitted.
        cluster_assignments: precomputed base-row cluster labels, so a
            study with many replicates clusters the base matrix once.
    """
    if rng is None:
        rng = spawn_rng((materialize_seed(cfg.seed), SIM_STREAM))
    base = cfg.base_covariates
    row_sums = base.sum(axis=1)
    n_base = base.shape[0]
    q_clusters = cfg.n_clusters
    if cluster_assignments is None:
        _, cluster_assignments, _ = kmeans(base, q_clusters, rng=rng)
    rows_by_cluster = [
        np.flatnonzero(cluster_assignments == q) for q in range(q_clusters)
    ]
    if any(r.size == 0 for r in rows_by_cluster):
        raise ValidationError("cluster assignments leave an empty cluster")

    # Natural population: only covariate sums are needed downstream.
    pi = rng.dirichlet(np.ones(q_clusters))
    memberships = rng.choice(q_clusters, size=cfg.natural_pop_size, p=pi)
    natural_sums = np.empty(cfg.natural_pop_size)
    for q in range(q_clusters):
        mask = memberships == q
        rows_q = rows_by_cluster[q]
        natural_sums[mask] = row_sums[
            rows_q[rng.integers(0, rows_q.size, mask.sum())]
        ]
    natural_sum_mean = natural_sums.mean()
    if not np.isfinite(natural_sum_mean) or abs(natural_sum_mean) < 1e-12:
        raise BisectionFailureError(
            "covariate sums average to zero; the propensity scale is undefined"
        )

    theta = rng.dirichlet(np.ones(cfg.n_groups))
    omega0 = _calibrate_omega0(
        natural_sums / natural_sum_mean, cfg.omega1, theta[1]
    )

    # Observed sample.
    idx = rng.integers(0, n_base, cfg.n_subjects)
    covariates = base[idx]
    sums = row_sums[idx]
    sample_sum_mean = sums.mean()
    if abs(sample_sum_mean) < 1e-12:
        raise BisectionFailureError(
            "sampled covariate sums average to zero; cannot scale propensities"
        )
    probs = _true_mps(
        sums, omega0, cfg.omega1, natural_sum_mean, sample_sum_mean,
        cfg.n_studies, cfg.n_groups,
    )
    for _ in range(100):
        cells = _draw_cells(probs, rng)
        counts = np.bincount(cells, minlength=cfg.n_studies * cfg.n_groups)
        if counts.min() > 0:
            break
    else:
        missing = int(np.flatnonzero(counts == 0)[0])
        raise EmptyCellError(
            missing // cfg.n_groups + 1, missing % cfg.n_groups + 1
        )
    study = cells // cfg.n_groups + 1
    group = cells % cfg.n_groups + 1

    multiplier = np.ones_like(sums) if cfg.null_group_effect else group.astype(float)
    signal = multiplier * sums
    signal_var = float(np.var(signal))
    tau2 = signal_var * (1.0 - cfg.r_squared_target) / cfg.r_squared_target
    outcomes = (
        signal[:, None]
        + 50.0
        + rng.normal(0.0, np.sqrt(tau2), size=(cfg.n_subjects, cfg.n_outcomes))
    )

    dataset = Dataset(study=study, group=group, covariates=covariates, outcomes=outcomes)
    truth = SimTruth(
        theta_true=theta,
        pi_true=pi,
        omega0=omega0,
        omega1=cfg.omega1,
        natural_sum_mean=natural_sum_mean,
        sample_sum_mean=sample_sum_mean,
    )
    return dataset, truth


# ------------------------------------------------------------- ground truth


def true_wate(
    cfg: SimConfig,
    truth: SimTruth,
    method: str,
    gamma=None,
    theta=None,
    mc_size: int = 100_000,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Monte-Carlo ground-truth WATE for one weighting method.

    Covariates are drawn from the observed sampling scheme (uniform base
    rows), the known membership model supplies the true propensities (no
    estimation), and the method's tilting reweights the conditional mean
    difference between groups. FLEXOR requires the pseudo-population's
    (gamma, theta); IC and IGO ignore them.

    Returns:
        (wate, mc_se): the estimate and its Monte-Carlo standard error.
    """
    if method == "FLEXOR" and (gamma is None or theta is None):
        raise ValidationError("FLEXOR ground truth requires gamma and theta")
    if rng is None:
        rng = spawn_rng((materialize_seed(cfg.seed), TRUTH_STREAM))
    row_sums = cfg.base_covariates.sum(axis=1)
    sums = row_sums[rng.integers(0, row_sums.size, mc_size)]
    probs = _true_mps(
        sums, truth.omega0, truth.omega1,
        truth.natural_sum_mean, truth.sample_sum_mean,
        cfg.n_studies, cfg.n_groups,
    )
    eta = np.asarray(tilting(method, probs, gamma, theta), dtype=float)
    # E[Y | z, x] = z * sum(x) + 50, so the group-1 minus group-2
    # conditional mean difference is -sum(x); zero under the null hook.
    diff = np.zeros_like(sums) if cfg.null_group_effect else -sums
    wn = eta / eta.sum()
    wate = float(wn @ diff)
    mc_se = float(np.sqrt((wn**2 @ (diff - wate) ** 2)))
    return wate, mc_se


def flexor_truth_gamma(
    cfg: SimConfig,
    truth: SimTruth,
    aux_size: int = 2000,
    num_random: int = 3,
    gamma_min: float = 0.001,
    gamma_max: float = 0.999,
    rng: np.random.Generator | None = None,
    _seed_path: SeedPath | None = None,
) -> np.ndarray:
    """Study masses defining the FLEXOR ground-truth pseudo-population.

    Fits the ESS maximization on a large auxiliary sample drawn from the
    generating model with its true propensities, so the truth target does
    not depend on any estimated quantity.
    """
    if rng is None:
        rng = spawn_rng((materialize_seed(cfg.seed), TRUTH_STREAM, 1))
    row_sums = cfg.base_covariates.sum(axis=1)
    sums = row_sums[rng.integers(0, row_sums.size, aux_size)]
    probs = _true_mps(
        sums, truth.omega0, truth.omega1,
        truth.natural_sum_mean, truth.sample_sum_mean,
        cfg.n_studies, cfg.n_groups,
    )
    for _ in range(100):
        cells = _draw_cells(probs, rng)
        if np.bincount(cells, minlength=probs.shape[1]).min() > 0:
            break
    else:
        raise EmptyCellError(1, 1)
    aux = Dataset(
        study=cells // cfg.n_groups + 1,
        group=cells % cfg.n_groups + 1,
        covariates=sums[:, None],
        outcomes=np.zeros((aux_size, 1)),
    )
    mps = MpsMatrix(probs, 0.0, cfg.n_studies, cfg.n_groups)
    path = _seed_path if _seed_path is not None else (materialize_seed(cfg.seed), TRUTH_STREAM, 2)
    sol = estimate_flexor(
        aux, mps, truth.theta_true,
        num_random=num_random, gamma_min=gamma_min, gamma_max=gamma_max,
        _seed_path=path,
    )
    return sol.gamma_opt


def true_wates_for_methods(
    cfg: SimConfig,
    truth: SimTruth,
    methods=DEFAULT_METHODS,
    aux_size: int = 2000,
    mc_size: int = 100_000,
    num_random: int = 3,
    gamma_min: float = 0.001,
    gamma_max: float = 0.999,
    _seed_path: SeedPath | None = None,
) -> dict[str, tuple[float, float]]:
    """Ground-truth WATE and Monte-Carlo SE for each method; also records
    the values on ``truth.true_wate_per_method``."""
    path = _seed_path if _seed_path is not None else (materialize_seed(cfg.seed), TRUTH_STREAM)
    out: dict[str, tuple[float, float]] = {}
    gamma_true = None
    for m_idx, method in enumerate(methods):
        gamma = theta = None
        if method == "FLEXOR":
            if gamma_true is None:
                gamma_true = flexor_truth_gamma(
                    cfg, truth,
                    aux_size=aux_size, num_random=num_random,
                    gamma_min=gamma_min, gamma_max=gamma_max,
                    rng=spawn_rng(path + (1,)), _seed_path=path + (2,),
                )
            gamma, theta = gamma_true, truth.theta_true
        out[method] = true_wate(
            cfg, truth, method, gamma=gamma, theta=theta,
            mc_size=mc_size, rng=spawn_rng(path + (3, m_idx)),
        )
        truth.true_wate_per_method[method] = out[method][0]
    return out


# ------------------------------------------------------------ study driver


def run_study(
    cfg: SimConfig,
    r_datasets: int,
    B: int,
    methods=DEFAULT_METHODS,
    seed: int | None = None,
    num_random: int = 3,
    gamma_min: float = 0.001,
    gamma_max: float = 0.999,
    aux_size: int = 2000,
    mc_size: int = 100_000,
    threads: int = 1,
    progress: bool = False,
) -> pd.DataFrame:
    """Simulation study: generate datasets, analyze with each method, and
    compare against the per-method ground truth.

    Returns:
        Tidy table with one row per (replicate, method) and columns
        replicate, method, percent_ess, abs_bias, boot_sd, true_wate,
        est_wate.
    """
    if r_datasets < 1:
        raise ValidationError("r_datasets must be >= 1")
    root = materialize_seed(seed)
    _, assignments, _ = kmeans(
        cfg.base_covariates, cfg.n_clusters, rng=spawn_rng((root, CLUSTER_STREAM))
    )

    rows = []
    for r in range(r_datasets):
        dataset, truth = gen_dataset(
            cfg, rng=spawn_rng((root, SIM_STREAM, r)), cluster_assignments=assignments
        )
        truths = true_wates_for_methods(
            cfg, truth, methods,
            aux_size=aux_size, mc_size=mc_size, num_random=num_random,
            gamma_min=gamma_min, gamma_max=gamma_max,
            _seed_path=(root, TRUTH_STREAM, r),
        )
        for m_idx, method in enumerate(methods):
            child_seed = int(
                np.random.SeedSequence([root, SIM_STREAM, r, m_idx]).generate_state(
                    1, np.uint64
                )[0]
                % (2**63)
            )
            result = causal_estimate(
                dataset, method,
                natural_group_prop=truth.theta_true if method == "FLEXOR" else None,
                B=B, num_random=num_random,
                gamma_min=gamma_min, gamma_max=gamma_max,
                seed=child_seed, threads=threads,
            )
            est = float(np.atleast_1d(result.other_features.mean_diffs)[0])
            boot_draws = result.bootstrap.collated_other.reshape(
                -1, result.bootstrap.b_effective
            )[0]
            wate, _ = truths[method]
            rows.append(
                {
                    "replicate": r + 1,
                    "method": method,
                    "percent_ess": result.weights.percent_ess,
                    "abs_bias": abs(est - wate),
                    "boot_sd": float(np.std(boot_draws, ddof=1)) if B > 1 else 0.0,
                    "true_wate": wate,
                    "est_wate": est,
                }
            )
            if progress:
                print(f"replicate {r + 1}/{r_datasets} {method} done", flush=True)
    return pd.DataFrame(rows)
