"""Brute-force verifiers, deliberately naive and disjoint from production code.

Three independent checks back the test suite and the CLI ``--verify`` flag:

* :func:`min_variance_weights` solves, by one dense KKT linear solve, the
  equality-constrained program "minimize sum of squared weights subject to
  summing to one and matching the target covariate means". Its unique
  solution must coincide with the production implied weights.
* :func:`loo_refit` re-estimates an effect from scratch without one unit
  (target profile held fixed), the ground truth behind the sample
  influence curve.
* :func:`naive_lstsq` solves the normal equations by hand-rolled
  Gauss-Jordan elimination with full pivoting — no shared code with the
  QR-based production solver.

Nothing here is optimized; clarity and independence are the point.
"""

from __future__ import annotations

import numpy as np

from .exceptions import SingularDesignError

__all__ = ["min_variance_weights", "loo_refit", "naive_lstsq", "kkt_residual"]


def _independent_rows(C: np.ndarray, tol: float = 1e-9) -> list[int]:
    """Indices of a maximal independent row subset (earlier rows win)."""
    kept: list[int] = []
    basis = np.empty((0, C.shape[1]))
    for i in range(C.shape[0]):
        row = C[i]
        norm = np.linalg.norm(row)
        if norm == 0:
            continue
        r = row - basis.T @ (basis @ row) if basis.size else row.copy()
        if basis.size:
            r = r - basis.T @ (basis @ r)
        if np.linalg.norm(r) <= tol * norm:
            continue
        kept.append(i)
        basis = np.vstack([basis, r / np.linalg.norm(r)])
    return kept


def min_variance_weights(X_g: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Minimum-variance weights summing to one with group covariate means
    pinned to ``target``: the unique solution of the KKT system.

    With objective sum(w^2) and only equality constraints C w = d, the KKT
    conditions reduce to w = C' lambda with C C' lambda = d. Redundant
    constraints are removed first; an inconsistent system (target outside
    the affine hull of the group's covariates) raises.
    """
    X_g = np.atleast_2d(np.asarray(X_g, dtype=float))
    n = X_g.shape[0]
    C = np.vstack([np.ones((1, n)), X_g.T])
    d = np.concatenate([[1.0], np.asarray(target, dtype=float)])
    rows = _independent_rows(C)
    C_r, d_r = C[rows], d[rows]
    gram = C_r @ C_r.T
    try:
        lam = np.linalg.solve(gram, d_r)
    except np.linalg.LinAlgError:
        raise SingularDesignError("degenerate constraint system") from None
    w = C_r.T @ lam
    if np.max(np.abs(C @ w - d)) > 1e-8 * max(1.0, np.max(np.abs(d))):
        raise SingularDesignError("infeasible constraints: target outside the affine hull")
    return w


def kkt_residual(X_g: np.ndarray, target: np.ndarray, w: np.ndarray) -> float:
    """Max norm of the KKT system residual at ``w`` (stationarity+primal),
    relative to the system scale."""
    X_g = np.atleast_2d(np.asarray(X_g, dtype=float))
    n = X_g.shape[0]
    C = np.vstack([np.ones((1, n)), X_g.T])
    d = np.concatenate([[1.0], np.asarray(target, dtype=float)])
    rows = _independent_rows(C)
    C_r, d_r = C[rows], d[rows]
    lam, *_ = np.linalg.lstsq(C_r.T, w, rcond=None)
    stationarity = np.max(np.abs(w - C_r.T @ lam))
    primal = np.max(np.abs(C_r @ w - d_r))
    scale = max(1.0, np.max(np.abs(C_r)), np.max(np.abs(d_r)))
    return float(max(stationarity, primal) / scale)


def naive_lstsq(D: np.ndarray, y: np.ndarray, base_weights=None) -> np.ndarray:
    """Weighted least squares via normal equations + full-pivot Gauss-Jordan."""
    D = np.asarray(D, dtype=float)
    y = np.asarray(y, dtype=float)
    u = np.ones(len(y)) if base_weights is None else np.asarray(base_weights, dtype=float)
    A = D.T @ (u[:, None] * D)
    b = D.T @ (u * y)
    k = A.shape[0]
    aug = np.concatenate([A, b[:, None]], axis=1)
    col_perm = list(range(k))
    for step in range(k):
        sub = np.abs(aug[step:, step:k])
        if sub.size == 0:
            break
        i_rel, j_rel = np.unravel_index(np.argmax(sub), sub.shape)
        pivot_val = sub[i_rel, j_rel]
        if pivot_val <= 1e-12 * max(1.0, np.abs(A).max()):
            raise SingularDesignError("singular normal equations")
        i, j = step + i_rel, step + j_rel
        aug[[step, i]] = aug[[i, step]]
        aug[:, [step, j]] = aug[:, [j, step]]
        col_perm[step], col_perm[j] = col_perm[j], col_perm[step]
        aug[step] = aug[step] / aug[step, step]
        for r in range(k):
            if r != step:
                aug[r] = aug[r] - aug[r, step] * aug[step]
    beta = np.empty(k)
    beta[col_perm] = aug[:, k]
    return beta


def loo_refit(D: np.ndarray, y: np.ndarray, ell: np.ndarray, drop: int, base_weights=None) -> float:
    """Effect estimate ell' beta refit from scratch without unit ``drop``.

    ``ell`` (the contrast/imputation selector, including any fixed target
    profile) is part of the fit specification and is NOT recomputed.
    """
    keep = np.ones(len(y), dtype=bool)
    keep[drop] = False
    u = None if base_weights is None else np.asarray(base_weights, dtype=float)[keep]
    try:
        beta = naive_lstsq(D[keep], y[keep], u)
    except SingularDesignError:
        raise SingularDesignError(f"rank collapse after dropping unit {drop}") from None
    return float(np.asarray(ell, dtype=float) @ beta)
