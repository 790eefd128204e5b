"""Core weights engine.

Two independent production routes compute implied weights:

* closed forms for the uninteracted (single-equation) and group-wise
  regression estimators on unweighted binary designs, written directly in
  terms of group moments; and
* a generic linear-functional extraction that reads, for any least-squares
  effect estimate, the coefficient the estimator places on each unit's
  outcome. This covers weighted fits, multi-valued treatments, two-stage
  least squares and doubly-robust compositions.

Both routes are cross-checked against each other in the test suite and
against the minimum-variance KKT oracle (see :mod:`impliedweights.oracle`):
the implied weights are the unique minimum-variance weights that sum to one
per group and exactly balance the modeled covariate means at the target
profile.

Sign convention: weights are stored unsigned per group (each group's
weights sum to one); estimators apply + to the active group and - to the
comparison group.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .exceptions import SingularDesignError

__all__ = [
    "MomentSet",
    "moment_set",
    "uri_weights_closed_form",
    "mri_weights_closed_form",
    "uri_target_profile",
    "weighted_qr",
    "functional",
    "fit_coefficients",
    "StackedDesign",
    "stack_by_group",
    "group_selector",
    "group_functional",
    "aipw_correction",
    "first_stage",
]

_PIVOT_RTOL = 1e-9


# --------------------------------------------------------------------------
# moments and closed forms
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MomentSet:
    """Group covariate moments. Covariances use denominator n_g, so that
    n_g x cov_g equals the group's centered scatter matrix exactly."""

    levels: tuple[str, ...]
    sizes: dict[str, int]
    means: dict[str, np.ndarray]
    covs: dict[str, np.ndarray]
    overall_mean: np.ndarray


def moment_set(X: np.ndarray, codes: np.ndarray, levels: tuple[str, ...]) -> MomentSet:
    X = np.asarray(X, dtype=float)
    sizes, means, covs = {}, {}, {}
    for idx, level in enumerate(levels):
        rows = X[codes == idx]
        if rows.shape[0] == 0:
            raise SingularDesignError(f"treatment level {level!r} has no units")
        sizes[level] = rows.shape[0]
        means[level] = rows.mean(axis=0)
        centered = rows - means[level]
        covs[level] = centered.T @ centered / rows.shape[0]
    return MomentSet(levels, sizes, means, covs, X.mean(axis=0))


def _solve_spd(A: np.ndarray, B: np.ndarray, context: str) -> np.ndarray:
    """Solve A x = B for symmetric A via pivoted-QR-backed lstsq with a rank
    guard, avoiding explicit inversion."""
    if A.size == 0:
        return np.zeros_like(B)
    q, r, _ = linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size and diag.min() <= _PIVOT_RTOL * diag.max():
        raise SingularDesignError(context)
    return linalg.solve(A, B, assume_a="sym")


def uri_weights_closed_form(X: np.ndarray, treated: np.ndarray) -> np.ndarray:
    """Implied weights of the single-equation (no interactions) estimator.

    w_i = 1/n_t + (X_i - mean_t)' S^-1 (mean_c - mean_t) for treated i and
    symmetrically for controls, where S is the pooled within-group centered
    scatter (n_t cov_t + n_c cov_c). Requires unit base weights and a binary
    treatment. Weights sum to one within each group and may be negative.
    """
    X = np.asarray(X, dtype=float)
    treated = np.asarray(treated, dtype=bool)
    n_t, n_c = int(treated.sum()), int((~treated).sum())
    w = np.empty(len(treated))
    if X.shape[1] == 0:
        w[treated] = 1.0 / n_t
        w[~treated] = 1.0 / n_c
        return w
    mean_t = X[treated].mean(axis=0)
    mean_c = X[~treated].mean(axis=0)
    ct = X[treated] - mean_t
    cc = X[~treated] - mean_c
    pooled = ct.T @ ct + cc.T @ cc
    gap = _solve_spd(pooled, mean_c - mean_t, "degenerate covariate scatter")
    w[treated] = 1.0 / n_t + ct @ gap
    w[~treated] = 1.0 / n_c - cc @ gap
    return w


def mri_weights_closed_form(X: np.ndarray, treated: np.ndarray, estimand: str) -> np.ndarray:
    """Implied weights of the group-wise regression estimator (binary, unweighted).

    ATE reweights both groups to the overall covariate mean; ATT leaves the
    treated uniform at 1/n_t and reweights controls to the treated mean.
    """
    X = np.asarray(X, dtype=float)
    treated = np.asarray(treated, dtype=bool)
    if estimand not in ("ATE", "ATT"):
        raise ValueError(f"estimand must be ATE or ATT, got {estimand!r}")
    w = np.empty(len(treated))
    for group_mask, is_treated in ((treated, True), (~treated, False)):
        n_g = int(group_mask.sum())
        if estimand == "ATT" and is_treated:
            w[group_mask] = 1.0 / n_g
            continue
        if X.shape[1] == 0:
            w[group_mask] = 1.0 / n_g
            continue
        rows = X[group_mask]
        mean_g = rows.mean(axis=0)
        centered = rows - mean_g
        cov_g = centered.T @ centered / n_g
        target = X.mean(axis=0) if estimand == "ATE" else X[treated].mean(axis=0)
        gap = _solve_spd(cov_g, target - mean_g, "singular group covariance")
        w[group_mask] = (1.0 + centered @ gap) / n_g
    return w


def uri_target_profile(ms: MomentSet) -> np.ndarray:
    """Implied target profile of the single-equation estimator (binary).

    The scatter-weighted blend n_c V_c S^-1 mean_t + n_t V_t S^-1 mean_c
    with S = n_t V_t + n_c V_c; both groups' implied-weighted covariate
    means equal this profile exactly.
    """
    if len(ms.levels) != 2:
        raise SingularDesignError("implied profile requires a binary treatment")
    control, treated = ms.levels
    st = ms.sizes[treated] * ms.covs[treated]
    sc = ms.sizes[control] * ms.covs[control]
    pooled = st + sc
    part_t = _solve_spd(pooled, ms.means[treated], "degenerate covariate scatter")
    part_c = _solve_spd(pooled, ms.means[control], "degenerate covariate scatter")
    return sc @ part_t + st @ part_c


# --------------------------------------------------------------------------
# generic linear-functional extraction
# --------------------------------------------------------------------------


def weighted_qr(D: np.ndarray, u: np.ndarray):
    """Economy QR of sqrt(u)-scaled design with a relative-pivot rank guard."""
    M = np.sqrt(u)[:, None] * D
    q, r = linalg.qr(M, mode="economic")
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.min() <= _PIVOT_RTOL * diag.max():
        raise SingularDesignError("singular weighted design")
    return q, r


def functional(D: np.ndarray, u: np.ndarray, ell: np.ndarray) -> np.ndarray:
    """Unit coefficients c with ell' beta_hat = c' y for every outcome y.

    beta_hat is the u-weighted least-squares fit on D. c_i = u_i x_i' z
    with (D'UD) z = ell, solved through the QR factorization rather than an
    explicit inverse.
    """
    _, r = weighted_qr(D, u)
    z = linalg.solve_triangular(r, linalg.solve_triangular(r, ell, trans="T"), trans="N")
    return u * (D @ z)


def fit_coefficients(D: np.ndarray, u: np.ndarray, y: np.ndarray) -> np.ndarray:
    """u-weighted least squares via QR (the production solver)."""
    q, r = weighted_qr(D, u)
    return linalg.solve_triangular(r, q.T @ (np.sqrt(u) * y))


# --------------------------------------------------------------------------
# stacked group-wise designs (group-wise fits as one block design)
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StackedDesign:
    """Group-interacted design: one (intercept + covariates) block per level.

    Fitting this stacked matrix by weighted least squares reproduces the
    separate per-group fits exactly (blocks have disjoint row support), and
    block-aware functionals read per-group quantities off one factorization.
    Columns aliased on the sqrt(u)-scaled matrix are removed and recorded.
    """

    matrix: np.ndarray
    names: tuple[str, ...]  # "<level>:<column>"
    col_level: np.ndarray  # level index per kept column
    col_name: tuple[str, ...]  # within-block column name per kept column
    dropped: tuple[str, ...]
    levels: tuple[str, ...]
    codes: np.ndarray
    u: np.ndarray


def stack_by_group(
    Xcov: np.ndarray,
    cov_names: tuple[str, ...],
    codes: np.ndarray,
    levels: tuple[str, ...],
    u: np.ndarray,
    alias_tol: float = 1e-9,
) -> StackedDesign:
    from .formula import drop_aliased  # local import: avoid cycle at module load

    n = len(codes)
    block_names = ("(Intercept)",) + tuple(cov_names)
    cols, names, col_level, col_name = [], [], [], []
    base = np.column_stack([np.ones(n), Xcov]) if Xcov.shape[1] else np.ones((n, 1))
    for idx, level in enumerate(levels):
        mask = (codes == idx).astype(float)
        for j, name in enumerate(block_names):
            cols.append(base[:, j] * mask)
            names.append(f"{level}:{name}")
            col_level.append(idx)
            col_name.append(name)
    matrix = np.column_stack(cols)
    kept, dropped = drop_aliased(matrix, tol=alias_tol, row_weights=u)
    return StackedDesign(
        matrix=matrix[:, kept],
        names=tuple(names[j] for j in kept),
        col_level=np.asarray([col_level[j] for j in kept]),
        col_name=tuple(col_name[j] for j in kept),
        dropped=tuple(names[j] for j in dropped),
        levels=levels,
        codes=np.asarray(codes),
        u=np.asarray(u, dtype=float),
    )


def group_selector(sd: StackedDesign, level: str, target: dict[str, float]) -> np.ndarray:
    """Coefficient-space selector of the imputed mean for ``level`` at the target.

    Places 1 on the group's intercept and the target value on each kept
    covariate column of the group's block; columns aliased away contribute
    zero (their coefficients are pinned to zero).
    """
    idx = sd.levels.index(level)
    ell = np.zeros(sd.matrix.shape[1])
    for j in range(sd.matrix.shape[1]):
        if sd.col_level[j] != idx:
            continue
        ell[j] = 1.0 if sd.col_name[j] == "(Intercept)" else target[sd.col_name[j]]
    return ell


def group_functional(sd: StackedDesign, level: str, target: dict[str, float]) -> np.ndarray:
    """Unit coefficients of the imputed mean for ``level`` at the target profile.

    Supported on the group's own units and sum to one for any target.
    """
    return functional(sd.matrix, sd.u, group_selector(sd, level, target))


def aipw_correction(sd: StackedDesign, level: str, correction_weights: np.ndarray) -> np.ndarray:
    """Unit coefficients of the group's normalized-weight residual correction.

    corr' y = b~' (y - X beta_hat) over the group's units, with beta_hat
    the stacked fit under sd.u and b~ the correction weights normalized
    within the group. The coefficients sum to zero (the group indicator
    lies in the design's column space), so adding them to an imputation
    functional preserves sum-to-one. The correction is identically zero
    when the correction weights equal the fit weights — the fit's normal
    equations — which is why the doubly-robust composition fits its
    outcome models without the base weights.
    """
    idx = sd.levels.index(level)
    mask = sd.codes == idx
    total = correction_weights[mask].sum()
    if total <= 0:
        raise SingularDesignError(f"group {level!r} has no positive correction weight")
    btilde = np.where(mask, correction_weights, 0.0) / total
    corr = btilde - functional(sd.matrix, sd.u, sd.matrix.T @ btilde)
    return corr


# --------------------------------------------------------------------------
# two-stage least squares
# --------------------------------------------------------------------------


def first_stage(W: np.ndarray, u: np.ndarray, endog: np.ndarray, gamma_index: int):
    """Regress each endogenous column on the instrument design W.

    Returns (fitted, t_gamma) where t_gamma is the classical t statistic of
    the W column at ``gamma_index`` in the regression for the first
    endogenous column — the weak-instrument report. Raises when a fitted
    endogenous column is numerically constant, which makes the second stage
    meaningless.
    """
    endog = np.atleast_2d(np.asarray(endog, dtype=float).T).T
    q, r = weighted_qr(W, u)
    su = np.sqrt(u)
    coef = linalg.solve_triangular(r, q.T @ (su[:, None] * endog))
    fitted = W @ coef
    first = fitted[:, 0]
    scale = max(np.abs(first).max(), 1.0)
    if np.ptp(first) <= 1e-12 * scale:
        raise SingularDesignError("constant predicted treatment (instrument carries no signal)")
    resid = endog[:, 0] - first
    df = max(int((u > 0).sum()) - W.shape[1], 1)
    sigma2 = float(u @ resid**2) / df
    rinv_col = linalg.solve_triangular(r, np.eye(W.shape[1])[:, gamma_index], trans="T")
    se = np.sqrt(sigma2 * float(rinv_col @ rinv_col))
    t_gamma = float(coef[gamma_index, 0] / se) if se > 0 else np.inf
    return fitted, t_gamma
