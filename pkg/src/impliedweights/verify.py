"""Oracle cross-checks on a live fit (the CLI ``--verify`` flag).

Runs the independent verifiers against the production computation and
raises :class:`VerificationError` on disagreement beyond 1e-8:

* minimum-variance KKT weights per group (unweighted URI/MRI fits);
* closed-form weights (unweighted binary fits);
* the weighting identity: for random outcome vectors the weighted contrast
  must equal the effect a from-scratch naive least-squares fit reports.
"""

from __future__ import annotations

import numpy as np

from . import engine, oracle
from .estimators import IVWeights, RegressionWeights
from .exceptions import VerificationError

__all__ = ["verify_fit"]

RTOL = 1e-8


def _check(name: str, delta: float, scale: float, report: dict):
    report[name] = float(delta)
    if delta > RTOL * max(1.0, scale):
        raise VerificationError(
            f"{name}: production and oracle disagree (|delta| = {delta:.3e})"
        )


def _kkt_checks(fit: RegressionWeights, report: dict):
    X = fit.covariate_matrix_
    for idx, level in enumerate(fit.levels_):
        mask = fit.codes_ == idx
        if fit.method == "URI" and len(fit.levels_) > 2:
            continue  # multi-valued URI balances active vs pooled rest, not per level
        w_prod = fit.weights_[mask]
        target = X[mask].T @ w_prod  # the profile the group is balanced to
        w_oracle = oracle.min_variance_weights(X[mask], target)
        _check(f"kkt[{level}]", np.abs(w_prod - w_oracle).max(), np.abs(w_oracle).max(), report)


def _closed_form_checks(fit: RegressionWeights, report: dict):
    treated = fit.codes_ == 1
    X = fit.covariate_matrix_
    if fit.method == "URI":
        w_cf = engine.uri_weights_closed_form(X, treated)
    else:
        w_cf = engine.mri_weights_closed_form(X, treated, fit.estimand)
    _check("closed_form", np.abs(fit.weights_ - w_cf).max(), np.abs(w_cf).max(), report)


def _identity_checks(fit, report: dict, n_outcomes: int, rng):
    D = fit._design()
    u = fit.u_
    c = fit.signed_coefficients()
    if isinstance(fit, IVWeights):
        ell = fit.effect_selector_
    elif fit.method == "URI":
        ell = fit.effect_selector_
    else:
        a, b = _default_contrast(fit)
        sd = fit.stacked_
        target = dict(fit.target_profile_)
        ell = engine.group_selector(sd, a, target) - engine.group_selector(sd, b, target)
    worst = 0.0
    for _ in range(n_outcomes):
        y = rng.normal(size=len(u))
        weighted = float(c @ y)
        beta = oracle.naive_lstsq(D, y, u)
        direct = float(ell @ beta)
        if fit_is_aipw(fit):
            direct += _aipw_corrections(fit, D, beta, y)
        scale = max(1.0, abs(direct))
        worst = max(worst, abs(weighted - direct) / scale)
    _check("weighted_contrast_identity", worst, 1.0, report)


def fit_is_aipw(fit) -> bool:
    return getattr(fit, "dr_method_", None) == "AIPW"


def _default_contrast(fit):
    if fit.contrast_ is not None:
        return fit.contrast_
    levels = fit.levels_
    if fit.estimand == "ATT" and fit.focal_ is not None:
        return fit.focal_, [l for l in levels if l != fit.focal_][0]
    if len(levels) == 2:
        return levels[1], levels[0]
    return levels[0], levels[1]


def _aipw_corrections(fit, D, beta, y) -> float:
    resid = y - D @ beta
    a, b = _default_contrast(fit)
    total = 0.0
    for level, sign in ((a, 1.0), (b, -1.0)):
        mask = fit.codes_ == fit.levels_.index(level)
        btilde = np.where(mask, fit.correction_weights_, 0.0)
        total += sign * float(btilde @ resid) / btilde.sum()
    return total


def verify_fit(fit, n_outcomes: int = 20, seed: int = 20260808) -> dict:
    """Cross-check a fitted weights estimator against the oracles.

    Returns the per-check worst deviations; raises VerificationError when
    any check exceeds 1e-8 (relative).
    """
    rng = np.random.default_rng(seed)
    report: dict = {}
    unweighted = bool(np.all(fit.u_ == 1.0))
    if isinstance(fit, RegressionWeights) and unweighted and not fit_is_aipw(fit):
        _kkt_checks(fit, report)
        if len(fit.levels_) == 2:
            _closed_form_checks(fit, report)
    _identity_checks(fit, report, n_outcomes, rng)
    return report
