"""Outcome-model fitting, effect estimates, robust inference, influence.

The outcome enters here for the first time. :func:`fit_outcome_model` fits
the linear model a weights fit implies (single equation for URI and 2SLS,
one stacked group-wise fit for MRI), with HC3 sandwich standard errors by
default and cluster-robust (HC1) errors when a cluster column is given.
:func:`effect_summary` turns the fit into contrasts, potential-outcome
means (MRI only), confidence intervals and p-values; every reported effect
is identical to the weighted contrast of outcomes under the implied
weights, which the test suite enforces for all methods.

Influence is measured by the sample influence curve: for unit i,

    SIC_i = (N - 1) * c_i * e_i / (1 - h_ii)

with c_i the unit's signed implied-weight coefficient, e_i its residual,
h_ii its hat value and N the count of units with positive base weight.
For ordinary and weighted least-squares fits this equals (N - 1) times the
exact leave-one-out change of the effect estimate (the target profile held
fixed), which the brute-force refit oracle verifies.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg, stats

from . import engine
from .exceptions import EstimationError
from .estimators import IVWeights, RegressionWeights

__all__ = [
    "OutcomeFit",
    "EffectRow",
    "EffectReport",
    "InfluenceSet",
    "fit_outcome_model",
    "effect_summary",
    "robust_vcov",
    "hat_values",
    "influence_measures",
]

_ROBUST_KINDS = ("const", "HC0", "HC1", "HC2", "HC3")


def hat_values(D: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Leverages of the u-weighted fit: h_i = u_i x_i' (D'UD)^-1 x_i."""
    q, _ = engine.weighted_qr(D, u)
    return (q**2).sum(axis=1)


def _leverage_guard(hat: np.ndarray):
    if (hat >= 1.0 - 1e-12).any():
        raise EstimationError("exact leverage point (hat value 1); HC2/HC3 undefined")


def _hc_scale(kind: str, resid: np.ndarray, hat: np.ndarray, n_pos: int, k: int) -> np.ndarray:
    if kind == "HC0":
        return resid
    if kind == "HC1":
        if n_pos <= k:
            raise EstimationError("no residual degrees of freedom")
        return resid * np.sqrt(n_pos / (n_pos - k))
    if kind == "HC2":
        _leverage_guard(hat)
        return resid / np.sqrt(1.0 - hat)
    if kind == "HC3":
        _leverage_guard(hat)
        return resid / (1.0 - hat)
    raise EstimationError(f"unknown robust type {kind!r}")


def robust_vcov(
    D: np.ndarray,
    u: np.ndarray,
    resid: np.ndarray,
    hat: np.ndarray,
    kind: str,
    clusters: np.ndarray | None = None,
    n_pos: int | None = None,
) -> np.ndarray:
    """Sandwich covariance of the u-weighted least-squares coefficients.

    bread = (D'UD)^-1; the meat depends on ``kind``: const uses the
    classical s^2 * D'UD, HC0-HC3 use squared residuals with the usual
    leverage adjustments, and with ``clusters`` the meat sums per-cluster
    score totals with the HC1-style factor G/(G-1) * (N-1)/(N-K).
    """
    if kind not in _ROBUST_KINDS:
        raise EstimationError(f"unknown robust type {kind!r}")
    n, k = D.shape
    n_pos = n if n_pos is None else n_pos
    _, r = engine.weighted_qr(D, u)
    rinv = linalg.solve_triangular(r, np.eye(k))
    bread = rinv @ rinv.T
    if kind == "const":
        if clusters is not None:
            raise EstimationError("cluster-robust covariance requires an HC type")
        if n_pos <= k:
            raise EstimationError("no residual degrees of freedom")
        s2 = float(u @ resid**2) / (n_pos - k)
        return s2 * bread
    scores = D * (u * resid)[:, None]
    if clusters is not None:
        labels = np.unique(clusters[u > 0])
        if len(labels) < 2:
            raise EstimationError("fewer than 2 clusters")
        sums = np.zeros((len(labels), k))
        index = {lab: i for i, lab in enumerate(labels)}
        for lab in labels:
            sums[index[lab]] = scores[clusters == lab].sum(axis=0)
        meat = sums.T @ sums
        if kind == "HC1":
            g = len(labels)
            meat *= (g / (g - 1.0)) * ((n_pos - 1.0) / (n_pos - k))
        elif kind != "HC0":
            raise EstimationError("cluster-robust covariance supports HC0/HC1 only")
        return bread @ meat @ bread
    scaled = D * (u * _hc_scale(kind, resid, hat, n_pos, k))[:, None]
    return bread @ (scaled.T @ scaled) @ bread


@dataclass(frozen=True)
class OutcomeFit:
    """A fitted outcome model tied to its weights fit.

    ``residuals`` use the observed-treatment design for 2SLS (standard 2SLS
    residual convention); ``hat`` and the covariance bread come from the
    second-stage (fitted-treatment) design.
    """

    weights_fit: object
    outcome: str
    y: np.ndarray
    design: np.ndarray
    beta: np.ndarray
    fitted: np.ndarray
    residuals: np.ndarray
    hat: np.ndarray
    vcov: np.ndarray
    robust: str
    vcov_tag: str
    cluster: str | None
    cluster_codes: np.ndarray | None
    sigma: float
    df_residual: int
    n_positive: int

    @property
    def u(self) -> np.ndarray:
        return self.weights_fit.u_


def _resolve_outcome(wfit, outcome):
    ds = wfit.dataset_
    name = outcome or ds.roles.outcome
    if name is None:
        raise EstimationError("no outcome column given or bound")
    col = ds.column(name)
    if col.kind != "numeric":
        raise EstimationError(f"outcome column {name!r} must be numeric")
    return name, col.values.astype(float)


def fit_outcome_model(wfit, outcome=None, robust=None, cluster=None) -> OutcomeFit:
    """Fit the outcome model implied by a weights fit.

    robust defaults to HC3, or cluster-robust HC1 when ``cluster`` names a
    categorical column. For MRI this is the stacked group-wise weighted
    fit; for 2SLS the second-stage fit with observed-design residuals.
    """
    if not isinstance(wfit, (RegressionWeights, IVWeights)):
        raise EstimationError("fit_outcome_model expects a fitted weights estimator")
    name, y = _resolve_outcome(wfit, outcome)
    if name in wfit.covariate_formula_.variables():
        raise EstimationError(f"outcome {name!r} appears in the model formula")
    ds = wfit.dataset_
    u = wfit.u_
    D = wfit._design()
    beta = engine.fit_coefficients(D, u, y)
    if isinstance(wfit, IVWeights):
        observed = np.column_stack(
            [np.ones(ds.n_rows), wfit.covariate_matrix_, wfit.endog_observed_]
        )
        fitted = observed @ beta
    else:
        fitted = D @ beta
    resid = y - fitted
    hat = hat_values(D, u)

    cluster_codes = None
    if cluster is not None:
        ccol = ds.column(cluster)
        if ccol.kind != "categorical":
            raise EstimationError("cluster column must be categorical")
        if ccol.n_levels < 2:
            raise EstimationError("cluster column has a single level")
        cluster_codes = ccol.values
    kind = robust or ("HC1" if cluster is not None else "HC3")
    if kind not in _ROBUST_KINDS:
        raise EstimationError(f"unknown robust type {kind!r}")

    df = wfit.df_residual_
    if df <= 0:
        raise EstimationError("no residual degrees of freedom")
    sigma = float(np.sqrt((u @ resid**2) / df))
    vcov = robust_vcov(D, u, resid, hat, kind, clusters=cluster_codes, n_pos=wfit.n_positive_)
    tag = f"cluster robust ({kind})" if cluster is not None else (
        "classical (const)" if kind == "const" else f"robust ({kind})"
    )
    return OutcomeFit(
        weights_fit=wfit,
        outcome=name,
        y=y,
        design=D,
        beta=beta,
        fitted=fitted,
        residuals=resid,
        hat=hat,
        vcov=vcov,
        robust=kind,
        vcov_tag=tag,
        cluster=cluster,
        cluster_codes=cluster_codes,
        sigma=sigma,
        df_residual=df,
        n_positive=wfit.n_positive_,
    )


# --------------------------------------------------------------------------
# effect summaries
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EffectRow:
    label: str
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    t: float
    p: float


@dataclass(frozen=True)
class EffectReport:
    contrasts: tuple[EffectRow, ...]
    po_means: tuple[EffectRow, ...]
    sigma: float
    df_residual: int
    vcov_tag: str
    outcome: str

    def to_json_dict(self) -> dict:
        def rows(items):
            return [
                {
                    "label": r.label,
                    "estimate": r.estimate,
                    "se": r.se,
                    "ci_low": r.ci_low,
                    "ci_high": r.ci_high,
                    "t": r.t,
                    "p": r.p,
                }
                for r in items
            ]

        return {
            "schema_version": 1,
            "outcome": self.outcome,
            "standard_errors": self.vcov_tag,
            "contrasts": rows(self.contrasts),
            "po_means": rows(self.po_means),
            "residual_sd": self.sigma,
            "df_residual": self.df_residual,
        }


def _row(label, estimate, variance, df) -> EffectRow:
    se = float(np.sqrt(max(variance, 0.0)))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = estimate / se if se > 0 else (np.inf * np.sign(estimate) if estimate else np.nan)
    quant = float(stats.t.ppf(0.975, df))
    p = float(2.0 * stats.t.sf(abs(t), df)) if np.isfinite(t) else (0.0 if se == 0 else np.nan)
    return EffectRow(
        label=label,
        estimate=float(estimate),
        se=se,
        ci_low=float(estimate - quant * se),
        ci_high=float(estimate + quant * se),
        t=float(t),
        p=p,
    )


def _functional_variance(of: OutcomeFit, c: np.ndarray) -> float:
    """Variance of the linear functional c'y under the fit's meat weights.

    Algebraically identical to ell' V ell when c represents a coefficient
    combination; needed directly for AIPW, whose estimator is linear in the
    outcome but not a coefficient combination.
    """
    u, resid, hat = of.u, of.residuals, of.hat
    if of.robust == "const":
        pos = u > 0
        return of.sigma**2 * float((c[pos] ** 2 / u[pos]).sum())
    if of.cluster_codes is not None:
        prods = c * resid
        labels = np.unique(of.cluster_codes[u > 0])
        total = sum(float(prods[of.cluster_codes == lab].sum()) ** 2 for lab in labels)
        if of.robust == "HC1":
            g = len(labels)
            n, k = of.n_positive, of.design.shape[1]
            total *= (g / (g - 1.0)) * ((n - 1.0) / (n - k))
        return total
    scaled = c * _hc_scale(of.robust, resid, hat, of.n_positive, of.design.shape[1])
    return float((scaled**2).sum())


def _contrast_pairs(wfit) -> list[tuple[str, str]]:
    levels = wfit.levels_
    if len(levels) == 2:
        treated = wfit.focal_ if (wfit.estimand == "ATT" and wfit.focal_) else levels[1]
        control = [l for l in levels if l != treated][0]
        return [(treated, control)]
    return [(a, b) for i, a in enumerate(levels) for b in levels[i + 1 :]]


def _label(a, b, wfit) -> str:
    cond = f"|A={wfit.focal_}" if wfit.estimand == "ATT" and wfit.focal_ else ""
    return f"E[Y{a}-Y{b}{cond}]" if b is not None else f"E[Y{a}{cond}]"


def effect_summary(of: OutcomeFit) -> EffectReport:
    """Contrast and potential-outcome-mean estimates with robust inference.

    MRI reports every pairwise contrast among the treatment levels plus the
    per-level potential-outcome means at the fixed target profile; each
    contrast equals the difference of its two potential-outcome means
    exactly. URI and 2SLS report the treatment coefficient only.
    """
    wfit = of.weights_fit
    df = of.df_residual
    contrasts: list[EffectRow] = []
    po_means: list[EffectRow] = []
    if getattr(wfit, "method", None) == "MRI" and wfit.stacked_ is not None:
        sd = wfit.stacked_
        target = dict(wfit.target_profile_)
        aipw = wfit.dr_method_ == "AIPW"
        po_est: dict[str, float] = {}
        po_sel: dict[str, np.ndarray] = {}
        for level in wfit.levels_:
            ell = engine.group_selector(sd, level, target)
            po_sel[level] = ell
            if aipw:
                c_level = wfit.c_by_level_[level]
                po_est[level] = float(c_level @ of.y)
                var = _functional_variance(of, c_level)
            else:
                po_est[level] = float(ell @ of.beta)
                var = float(ell @ of.vcov @ ell)
            po_means.append(_row(_label(level, None, wfit), po_est[level], var, df))
        for a, b in _contrast_pairs(wfit):
            est = po_est[a] - po_est[b]
            if aipw:
                var = _functional_variance(of, wfit.c_by_level_[a] - wfit.c_by_level_[b])
            else:
                ell = po_sel[a] - po_sel[b]
                var = float(ell @ of.vcov @ ell)
            contrasts.append(_row(_label(a, b, wfit), est, var, df))
    else:
        ell = wfit.effect_selector_
        est = float(ell @ of.beta)
        var = float(ell @ of.vcov @ ell)
        a, b = wfit.contrast_
        contrasts.append(_row(_label(a, b, wfit), est, var, df))
    return EffectReport(
        contrasts=tuple(contrasts),
        po_means=tuple(po_means),
        sigma=of.sigma,
        df_residual=df,
        vcov_tag=of.vcov_tag,
        outcome=of.outcome,
    )


# --------------------------------------------------------------------------
# influence
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class InfluenceSet:
    hat: np.ndarray
    residuals: np.ndarray
    sic: np.ndarray
    contrast: tuple[str, str]

    def top(self, k: int = 5) -> np.ndarray:
        """Indices of the k largest |SIC| values, most influential first."""
        order = np.argsort(-np.abs(self.sic), kind="stable")
        return order[:k]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "contrast": list(self.contrast),
            "hat": self.hat.tolist(),
            "residuals": self.residuals.tolist(),
            "sic": self.sic.tolist(),
        }


def influence_measures(of: OutcomeFit, contrast=None) -> InfluenceSet:
    """Hat values, residuals and sample-influence-curve values per unit.

    The SIC is computed for one contrast (the fit's primary contrast by
    default). Units with zero base weight have zero implied-weight
    coefficient and therefore zero SIC.
    """
    wfit = of.weights_fit
    if contrast is None:
        contrast = wfit.contrast_ or _contrast_pairs(wfit)[0]
    c = wfit.signed_coefficients(contrast)
    _leverage_guard(of.hat)
    sic = (of.n_positive - 1) * c * of.residuals / (1.0 - of.hat)
    return InfluenceSet(hat=of.hat, residuals=of.residuals, sic=sic, contrast=tuple(contrast))
