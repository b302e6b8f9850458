"""Weighted estimation of counterfactual group outcome features.

Every estimator is a ratio of weighted sums restricted to one group, so
all outputs are invariant to positive rescaling of the weight vector.
Group means, SDs (divide-by-n convention), medians, and empirical CDFs
ship as named outputs; :func:`weighted_group_transform` exposes the
underlying transform/reducer mechanism for user-defined features.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import combinations
from typing import Callable, Sequence

import numpy as np

from .dataset import Dataset
from .errors import EmptyGroupError, ValidationError, ZeroDenominatorError

STAT_NAMES = ("mean", "sd", "median")


@dataclass
class MomentsArray:
    """3 x K x L array of estimated (mean, sd, median) per group and outcome."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[0] != 3:
            raise ValidationError("moments array must have shape (3, K, L)")

    @property
    def n_groups(self) -> int:
        return self.values.shape[1]

    @property
    def n_outcomes(self) -> int:
        return self.values.shape[2]

    def stat(self, name: str) -> np.ndarray:
        return self.values[STAT_NAMES.index(name)]


@dataclass
class OtherFeatures:
    """Pairwise mean differences between groups.

    For K = 2 this is the length-L vector mean(group 1) - mean(group 2).
    For K > 2 it is an L x C(K, 2) matrix over pairs (1,2), (1,3), ... in
    lexicographic order, entry = mean(group a) - mean(group b).
    """

    mean_diffs: np.ndarray
    pairs: tuple[tuple[int, int], ...]


def _group_mask(z_labels: np.ndarray, group: int) -> np.ndarray:
    mask = np.asarray(z_labels) == group
    if not mask.any():
        raise EmptyGroupError(group)
    return mask


def weighted_group_mean(y, z_labels, wt, group: int) -> float:
    """Weighted mean of y over subjects in the given group."""
    mask = _group_mask(z_labels, group)
    w = np.asarray(wt, dtype=float)[mask]
    return float(w @ np.asarray(y, dtype=float)[mask] / w.sum())


def weighted_group_sd(y, z_labels, wt, group: int) -> float:
    """Weighted SD of y in the group: sqrt(m2 - m1^2), clamped at zero."""
    mask = _group_mask(z_labels, group)
    w = np.asarray(wt, dtype=float)[mask]
    v = np.asarray(y, dtype=float)[mask]
    m1 = w @ v / w.sum()
    m2 = w @ (v * v) / w.sum()
    radicand = m2 - m1 * m1
    if radicand < 0.0:
        # strictly a floating-point artifact; the moment inequality holds
        if radicand < -1e-8 * max(m2, 1.0):
            warnings.warn(
                f"weighted variance clamped to 0 (radicand {radicand:.3e})",
                RuntimeWarning,
                stacklevel=2,
            )
        radicand = 0.0
    return float(np.sqrt(radicand))


def weighted_group_cdf(y, z_labels, wt, group: int, grid) -> np.ndarray:
    """Weighted within-group empirical CDF evaluated on a sorted grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size > 1 and np.any(np.diff(grid) < 0):
        raise ValidationError("grid must be sorted ascending")
    mask = _group_mask(z_labels, group)
    w = np.asarray(wt, dtype=float)[mask]
    v = np.asarray(y, dtype=float)[mask]
    order = np.argsort(v, kind="stable")
    v_sorted = v[order]
    cum = np.cumsum(w[order])
    idx = np.searchsorted(v_sorted, grid, side="right")
    out = np.concatenate([[0.0], cum])[idx] / cum[-1]
    return out


def weighted_group_median(y, z_labels, wt, group: int) -> float:
    """Grid median: the observed group value whose weighted CDF is closest
    to 0.5, ties broken toward the smaller value."""
    mask = _group_mask(z_labels, group)
    v = np.asarray(y, dtype=float)[mask]
    grid = np.unique(v)
    cdf = weighted_group_cdf(y, z_labels, wt, group, grid)
    return float(grid[np.argmin(np.abs(cdf - 0.5))])


def weighted_group_transform(
    y,
    z_labels,
    wt,
    group: int,
    phi: Callable[[np.ndarray], np.ndarray],
    psi: Callable[[np.ndarray], float],
) -> float:
    """General feature estimator psi(weighted group mean of phi(y)).

    ``phi`` maps the outcome vector to an (n, M) component matrix (or a
    length-n vector for M = 1); ``psi`` reduces the M estimated component
    means to the feature of interest. The named estimators above are
    special cases, e.g. the SD uses phi(y) = [y, y^2] and
    psi(t) = sqrt(t2 - t1^2).
    """
    mask = _group_mask(z_labels, group)
    w = np.asarray(wt, dtype=float)[mask]
    comps = np.atleast_2d(np.asarray(phi(np.asarray(y, dtype=float)[mask]), dtype=float))
    if comps.shape[0] != mask.sum():
        comps = comps.T
    lam = w @ comps / w.sum()
    return float(psi(lam))


def estimate_features(d: Dataset, wt) -> tuple[MomentsArray, OtherFeatures]:
    """Estimate means, SDs, and medians per group and outcome, plus
    pairwise group mean differences.

    Args:
        d: validated dataset (K groups, L outcomes).
        wt: length-N positive weight vector; any positive rescaling gives
            identical output.
    """
    wt = np.asarray(wt, dtype=float)
    if wt.shape != (d.n_subjects,):
        raise ValidationError("weights must be a length-N vector")
    if np.any(wt <= 0) or not np.all(np.isfinite(wt)):
        raise ValidationError("weights must be strictly positive and finite")
    n_groups, n_outcomes = d.n_groups, d.n_outcomes
    values = np.empty((3, n_groups, n_outcomes))
    for l in range(n_outcomes):
        y = d.outcomes[:, l]
        for z in range(1, n_groups + 1):
            values[0, z - 1, l] = weighted_group_mean(y, d.group, wt, z)
            values[1, z - 1, l] = weighted_group_sd(y, d.group, wt, z)
            values[2, z - 1, l] = weighted_group_median(y, d.group, wt, z)
    moments = MomentsArray(values)

    pairs = tuple(combinations(range(1, n_groups + 1), 2))
    means = moments.stat("mean")
    diffs = np.stack(
        [means[a - 1, :] - means[b - 1, :] for a, b in pairs], axis=1
    )
    if n_groups == 2:
        other = OtherFeatures(diffs[:, 0], pairs)
    else:
        other = OtherFeatures(diffs, pairs)
    return moments, other


def sd_ratio(moments: MomentsArray, group_a: int, group_b: int, outcome: int) -> float:
    """Ratio of group SDs sd(a) / sd(b) for one outcome (1-based indices)."""
    sd_a = moments.values[1, group_a - 1, outcome - 1]
    sd_b = moments.values[1, group_b - 1, outcome - 1]
    if sd_b == 0.0:
        raise ZeroDenominatorError(
            f"group {group_b} has zero SD for outcome {outcome}"
        )
    return float(sd_a / sd_b)
