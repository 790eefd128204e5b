"""Companion utilities: propensity scores, 1:1 matching, synthetic columns.

These produce the base weights and artificial treatment/instrument columns
the main pipeline consumes. Matching is deterministic given scores:
treated units are processed in descending propensity order, each takes the
nearest unmatched control, and distance ties break toward the lowest row
index. The synthetic-column generators draw from logistic models applied
to standardized covariates (raw-dollar covariates would saturate the
link); each takes an explicit seed and never touches global random state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .exceptions import ConvergenceError, DataError

__all__ = [
    "fit_propensity",
    "MatchResult",
    "nn_match",
    "generate_multilevel",
    "generate_instrument",
    "MULTILEVEL_COEFFS",
    "INSTRUMENT_COEFFS",
]

MULTILEVEL_COEFFS = {"intercept": 1.0, "age": -1.0, "education": 1.2, "black": -1.0, "re75": 1.2}
INSTRUMENT_COEFFS = {
    "intercept": 1.0,
    "age": -1.0,
    "education": 0.5,
    "hispanic": -0.5,
    "black": 0.8,
    "re74": 0.8,
    "treated": 3.0,
}


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(eta, -30.0, 30.0)))


def _loglik(D: np.ndarray, A: np.ndarray, beta: np.ndarray) -> float:
    eta = np.clip(D @ beta, -30.0, 30.0)
    return float(A @ eta - np.logaddexp(0.0, eta).sum())


def fit_propensity(X: np.ndarray, A: np.ndarray, tol: float = 1e-10, max_iter: int = 50):
    """Logistic regression scores via iteratively reweighted least squares.

    ``X`` holds covariate columns (an intercept is added internally); ``A``
    is the 0/1 treatment. Newton steps are halved whenever they would
    reduce the log-likelihood (keeps strongly separated designs on track);
    iteration stops when the largest accepted coefficient change falls
    below ``tol``. Divergence (any |coefficient| above 1e3, the
    perfect-separation signature) raises.

    Returns
    -------
    (scores, coefficients)
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    A = np.asarray(A, dtype=float)
    D = np.column_stack([np.ones(len(A)), X]) if X.shape[1] else np.ones((len(A), 1))
    beta = np.zeros(D.shape[1])
    current = _loglik(D, A, beta)
    for _ in range(max_iter):
        p = _sigmoid(D @ beta)
        s = np.maximum(p * (1.0 - p), 1e-12)
        try:
            delta = np.linalg.solve(D.T @ (s[:, None] * D), D.T @ (A - p))
        except np.linalg.LinAlgError:
            raise ConvergenceError(
                "singular information matrix in logistic fit: separation suspected"
            ) from None
        step = 1.0
        for _ in range(30):
            candidate = beta + step * delta
            value = _loglik(D, A, candidate)
            if value >= current - 1e-12:
                break
            step /= 2.0
        beta = beta + step * delta
        current = _loglik(D, A, beta)
        if np.abs(beta).max() > 1e3:
            raise ConvergenceError(
                "logistic fit diverged (|coefficient| > 1e3): perfect separation suspected"
            )
        if step * np.abs(delta).max() < tol:
            return _sigmoid(D @ beta), beta
    raise ConvergenceError(f"logistic fit did not converge in {max_iter} iterations")


@dataclass(frozen=True)
class MatchResult:
    """1:1 matching without replacement: 0/1 base weights + pair labels."""

    base_weights: np.ndarray
    subclass: np.ndarray  # pair label per unit, "" when unmatched
    pairs: tuple[tuple[int, int], ...]  # (treated index, control index) in match order

    @property
    def n_matched(self) -> int:
        return int(self.base_weights.sum())


def nn_match(scores: np.ndarray, A: np.ndarray) -> MatchResult:
    """1:1 nearest-neighbor propensity matching without replacement.

    Treated units are processed in descending score order (stable on index
    for equal scores); each takes the unmatched control with the nearest
    score, ties broken by lowest row index. Pair labels feed cluster-robust
    inference downstream.
    """
    scores = np.asarray(scores, dtype=float)
    A = np.asarray(A, dtype=bool)
    if ((scores <= 0) | (scores >= 1)).any():
        raise DataError("propensity scores must lie strictly inside (0, 1)")
    treated_idx = np.flatnonzero(A)
    control_idx = np.flatnonzero(~A)
    if len(control_idx) < len(treated_idx):
        raise DataError(
            f"fewer controls ({len(control_idx)}) than treated ({len(treated_idx)})"
        )
    order = treated_idx[np.argsort(-scores[treated_idx], kind="stable")]
    available = np.ones(len(control_idx), dtype=bool)
    control_scores = scores[control_idx]
    base = np.zeros(len(scores))
    subclass = np.full(len(scores), "", dtype=object)
    pairs: list[tuple[int, int]] = []
    for label, t in enumerate(order, start=1):
        dist = np.abs(control_scores - scores[t])
        dist[~available] = np.inf
        j = int(np.argmin(dist))  # argmin takes the first (lowest-index) tie
        available[j] = False
        c = int(control_idx[j])
        base[t] = base[c] = 1.0
        subclass[t] = subclass[c] = str(label)
        pairs.append((int(t), c))
    return MatchResult(base_weights=base, subclass=subclass, pairs=tuple(pairs))


# --------------------------------------------------------------------------
# synthetic column generators
# --------------------------------------------------------------------------


def _covariate_vector(ds: Dataset, name: str) -> np.ndarray:
    """Resolve a model covariate: numeric column, or a race-level indicator."""
    if name in ds.columns:
        col = ds.column(name)
        if col.kind != "numeric":
            raise DataError(f"generator covariate {name!r} must be numeric")
        return col.values.astype(float)
    if "race" in ds.columns and ds.column("race").kind == "categorical":
        race = ds.column("race")
        if name in race.levels:
            return race.indicator(name)
    raise DataError(f"generator covariate {name!r} not found")


def _standardize(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mu = x[mask].mean()
    sd = x[mask].std(ddof=1)
    if sd == 0:
        raise DataError("cannot standardize a constant covariate")
    return (x - mu) / sd


def _linear_predictor(ds, coeffs, mask, treated=None) -> np.ndarray:
    eta = np.full(ds.n_rows, float(coeffs.get("intercept", 0.0)))
    for name, coef in coeffs.items():
        if name == "intercept" or coef == 0.0:
            continue
        if name == "treated":
            eta = eta + coef * treated
            continue
        eta = eta + coef * _standardize(_covariate_vector(ds, name), mask)
    return eta


def generate_multilevel(ds: Dataset, seed: int, coeffs: dict | None = None) -> np.ndarray:
    """Split the control group into levels "2"/"3" by a logistic model.

    Original treated units keep label "1". Controls draw level "3" with
    probability from the logistic model over standardized covariates
    (standardized on the controls, the units the model generates for).
    Returns the new treatment labels; reproducible given the seed.
    """
    coeffs = MULTILEVEL_COEFFS if coeffs is None else coeffs
    treat = ds.treatment()
    if treat.n_levels != 2:
        raise DataError("multilevel generation starts from a binary treatment")
    controls = treat.values == 0
    eta = _linear_predictor(ds, coeffs, controls)
    p3 = _sigmoid(eta)
    rng = np.random.default_rng(seed)
    draws = rng.random(ds.n_rows) < p3
    labels = np.full(ds.n_rows, "1", dtype=object)
    labels[controls & draws] = "3"
    labels[controls & ~draws] = "2"
    return labels


def generate_instrument(ds: Dataset, seed: int, coeffs: dict | None = None) -> np.ndarray:
    """Draw a binary instrument from a logistic model over standardized
    covariates, with a +3 logit bump for treated units (so the instrument
    has a strong first stage by construction). Returns 0/1 integers."""
    coeffs = INSTRUMENT_COEFFS if coeffs is None else coeffs
    treat = ds.treatment()
    if treat.n_levels != 2:
        raise DataError("instrument generation starts from a binary treatment")
    treated = (treat.values == 1).astype(float)
    everyone = np.ones(ds.n_rows, dtype=bool)
    eta = _linear_predictor(ds, coeffs, everyone, treated=treated)
    rng = np.random.default_rng(seed)
    return (rng.random(ds.n_rows) < _sigmoid(eta)).astype(int)
