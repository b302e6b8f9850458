"""Multiple propensity score estimation.

The multiple propensity score (MPS) of a subject with covariates x is the
probability of each study/group membership, p[S=s, Z=z | X=x]. It is
estimated here by ridge-penalized multinomial softmax regression of the
JK-level factor (S, Z) on the covariates. Categories are ordered row-major
(study outer, group inner); category (1, 1) is the reference with
coefficients fixed at zero. Intercepts are never penalized.

The fit minimizes the exact penalized negative log-likelihood (written
out in :func:`nll_and_gradient`, which is unit-checked against finite
differences) with a deterministic quasi-Newton iteration from zero
initialization. Quasi-separated cells make the objective extremely
ill-conditioned at small ridge penalties, which plain gradient descent
cannot handle at realistic sizes; raising ``ridge_lambda`` also speeds
up the fit considerably.

Alternative MPS estimators can be plugged in downstream: any procedure
that produces an ``MpsMatrix`` can be handed to the weighting functions
in place of the built-in fit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .dataset import Dataset
from .errors import (
    DimensionMismatchError,
    NonConvergenceError,
    SingularUpdateError,
    ValidationError,
)


def cell_to_category(study: int, group: int, n_groups: int) -> int:
    """1-based category index of cell (s, z), row-major with s outer."""
    return (study - 1) * n_groups + group


def category_to_cell(category: int, n_groups: int) -> tuple[int, int]:
    """Inverse of :func:`cell_to_category`."""
    s, z = divmod(category - 1, n_groups)
    return s + 1, z + 1


@dataclass
class MpsModel:
    """Fitted softmax coefficients for the JK-category membership model.

    Attributes:
        coefficients: (JK-1) x (p+1) matrix; column 0 is the intercept,
            row c-2 belongs to category c (the reference category 1 is
            implicit with all-zero coefficients).
        ridge_lambda: penalty 0.5 * lambda * sum(slopes^2); intercepts free.
        n_studies, n_groups: category grid dimensions.
    """

    coefficients: np.ndarray
    ridge_lambda: float
    n_studies: int
    n_groups: int

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        jk = self.n_studies * self.n_groups
        if self.coefficients.shape[0] != jk - 1:
            raise DimensionMismatchError(
                f"expected {jk - 1} coefficient rows, got {self.coefficients.shape[0]}"
            )
        if not np.all(np.isfinite(self.coefficients)):
            raise ValidationError("model coefficients must be finite")
        if self.ridge_lambda < 0:
            raise ValidationError("ridge_lambda must be nonnegative")

    @property
    def n_categories(self) -> int:
        return self.n_studies * self.n_groups


@dataclass
class MpsMatrix:
    """Per-subject membership probabilities, floored away from zero.

    Attributes:
        delta: N x JK matrix; row i holds the estimated probabilities of
            every study/group cell for subject i, in row-major cell order.
        epsilon_floor: lower clip applied to each entry before the row was
            renormalized to sum 1.
        n_studies, n_groups: category grid dimensions.
    """

    delta: np.ndarray
    epsilon_floor: float
    n_studies: int
    n_groups: int

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=float)
        jk = self.n_studies * self.n_groups
        if self.delta.ndim != 2 or self.delta.shape[1] != jk:
            raise DimensionMismatchError(f"delta must have {jk} columns")
        if np.any(self.delta < self.epsilon_floor - 1e-15) or np.any(self.delta > 1.0):
            raise ValidationError("delta entries must lie in [epsilon_floor, 1]")
        if np.any(np.abs(self.delta.sum(axis=1) - 1.0) > 1e-10):
            raise ValidationError("delta rows must sum to 1")


def _design(d: Dataset) -> np.ndarray:
    return np.hstack([np.ones((d.n_subjects, 1)), d.covariates])


def _categories(d: Dataset) -> np.ndarray:
    """0-based category index per subject."""
    return (d.study - 1) * d.n_groups + (d.group - 1)


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _nll_grad(
    coef: np.ndarray, design: np.ndarray, cats: np.ndarray, lam: float
) -> tuple[float, np.ndarray]:
    """Penalized negative log-likelihood and its exact gradient."""
    n = design.shape[0]
    scores = np.zeros((n, coef.shape[0] + 1))
    scores[:, 1:] = design @ coef.T
    logp = _log_softmax(scores)
    nll = -logp[np.arange(n), cats].sum()
    nll += 0.5 * lam * (coef[:, 1:] ** 2).sum()

    resid = np.exp(logp)
    resid[np.arange(n), cats] -= 1.0
    grad = resid[:, 1:].T @ design
    grad[:, 1:] += lam * coef[:, 1:]
    return nll, grad


def nll_and_gradient(m: MpsModel, d: Dataset) -> tuple[float, np.ndarray]:
    """Ridge-penalized negative log-likelihood and gradient at the model's
    coefficients, on the given dataset."""
    _check_dims(m, d)
    return _nll_grad(m.coefficients, _design(d), _categories(d), m.ridge_lambda)


def _check_dims(m: MpsModel, d: Dataset) -> None:
    if m.coefficients.shape[1] != d.n_covariates + 1:
        raise DimensionMismatchError(
            f"model expects {m.coefficients.shape[1] - 1} covariates, "
            f"dataset has {d.n_covariates}"
        )
    if d.n_studies > m.n_studies or d.n_groups > m.n_groups:
        raise DimensionMismatchError("dataset labels exceed the model's category grid")


def fit_mps(
    d: Dataset,
    ridge_lambda: float = 1e-4,
    max_iter: int = 5000,
    tol: float = 1e-6,
    init: np.ndarray | None = None,
) -> MpsModel:
    """Fit the membership model by penalized maximum likelihood.

    Deterministic: zero initialization (unless a warm start is supplied),
    no randomness. Convergence is declared when every gradient
    coordinate, divided by N, falls below ``tol``.

    Args:
        d: validated dataset.
        ridge_lambda: slope penalty; larger values stabilize and speed up
            fits on nearly separated data.
        max_iter: iteration budget.
        tol: per-coordinate gradient tolerance, scaled by N.
        init: optional warm-start coefficient matrix, e.g. the full-data
            fit when refitting bootstrap resamples. The optimum is
            unaffected; only the iteration count changes.

    Raises:
        NonConvergenceError: iteration budget exhausted; carries the last
            scaled gradient norm.
        SingularUpdateError: the line search could not make progress,
            which signals severe separation; raise ridge_lambda.
    """
    if ridge_lambda < 0:
        raise ValidationError("ridge_lambda must be nonnegative")
    design = _design(d)
    cats = _categories(d)
    n = d.n_subjects
    jk = d.n_studies * d.n_groups
    shape = (jk - 1, d.n_covariates + 1)

    if init is None:
        x0 = np.zeros(shape)
    else:
        x0 = np.asarray(init, dtype=float)
        if x0.shape != shape:
            raise DimensionMismatchError(
                f"warm start must have shape {shape}, got {x0.shape}"
            )

    def objective(x: np.ndarray) -> tuple[float, np.ndarray]:
        f, g = _nll_grad(x.reshape(shape), design, cats, ridge_lambda)
        return f, g.ravel()

    # ftol=0 disables the function-change stop so only the gradient
    # criterion (max |g| <= tol * N) can declare convergence.
    result = minimize(
        objective,
        x0.ravel(),
        jac=True,
        method="L-BFGS-B",
        options=dict(
            maxiter=max_iter,
            maxfun=2 * max_iter + 100,
            ftol=0.0,
            gtol=tol * n,
            maxcor=15,
        ),
    )
    coef = result.x.reshape(shape)
    _, grad = _nll_grad(coef, design, cats, ridge_lambda)
    grad_norm = float(np.abs(grad).max() / n)
    if grad_norm <= tol:
        return MpsModel(coef, ridge_lambda, d.n_studies, d.n_groups)
    if "ABNORMAL" in str(result.message).upper():
        raise SingularUpdateError(
            "line search stalled; data may be separable, increase ridge_lambda"
        )
    raise NonConvergenceError(max_iter, grad_norm)


def _floor_and_renormalize(probs: np.ndarray, floor: float) -> np.ndarray:
    """Clip entries below ``floor`` up to it, rescaling the remaining mass
    so each row still sums to 1 and no entry ends below the floor."""
    if floor == 0.0:
        return probs / probs.sum(axis=1, keepdims=True)
    jk = probs.shape[1]
    if floor < 0 or floor * jk >= 1.0:
        raise ValidationError("epsilon_floor must satisfy 0 <= floor * JK < 1")
    out = probs / probs.sum(axis=1, keepdims=True)
    floored = out < floor
    for _ in range(jk):
        if not floored.any():
            break
        pinned = floor * floored.sum(axis=1)
        free_sum = np.where(floored, 0.0, out).sum(axis=1)
        scale = (1.0 - pinned) / free_sum
        out = np.where(floored, floor, out * scale[:, None])
        grown = (out < floor) & ~floored
        if not grown.any():
            break
        floored |= grown
    return out


def predict_mps(m: MpsModel, d: Dataset, epsilon_floor: float = 1e-6) -> MpsMatrix:
    """Evaluate membership probabilities for every subject.

    Each row is the softmax of the linear scores, clipped below at
    ``epsilon_floor`` and renormalized to sum 1.
    """
    _check_dims(m, d)
    n = d.n_subjects
    scores = np.zeros((n, m.n_categories))
    scores[:, 1:] = _design(d) @ m.coefficients.T
    probs = np.exp(_log_softmax(scores))
    delta = _floor_and_renormalize(probs, epsilon_floor)
    return MpsMatrix(delta, epsilon_floor, m.n_studies, m.n_groups)
