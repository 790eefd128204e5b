"""Design-stage diagnostics: balance tables, distribution summaries, plot data.

All statistics are computed from the design stage only (covariates,
treatment, weights) and never touch outcomes. Conventions, reconstructed
from the published estimator's output and frozen here as the contract:

* Standardizers come from the UNWEIGHTED sample and are reused across
  strata: the root mean of the per-group variances for ATE, the focal
  group's standard deviation for ATT. Zero standardizers emit 0 with a
  "degenerate standardizer" flag.
* The target population is defined by the estimand: the full sample (ATE)
  or the focal group (ATT), weighted by each stratum's design weights
  (sampling, sampling x base). The implied weights never reweight the
  target.
* KS statistics use weighted pseudo-ECDFs (cumulative signed weights), so
  values can exceed 1 when negative weights are present; such strata are
  flagged, never clamped.
* Weighted SDs use normalized weights w~ with the reliability-weights
  correction sum w~ (x-m)^2 / (1 - sum w~^2), which reduces to the ddof=1
  sample SD under uniform weights.
* ESS = (sum w)^2 / sum w^2, invariant to positive rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .exceptions import SpecificationError
from .formula import Formula, expand_balance_columns, parse_formula

__all__ = [
    "smd",
    "target_smd",
    "ks_stat",
    "ess",
    "BalanceTable",
    "balance_summary",
    "DistributionSummary",
    "distribution_summary",
    "plot_data",
]


# --------------------------------------------------------------------------
# scalar statistics
# --------------------------------------------------------------------------


def _wmean(x: np.ndarray, w: np.ndarray) -> float:
    total = w.sum()
    if total == 0:
        raise SpecificationError("weight vector sums to zero")
    return float((w @ x) / total)


def smd(x: np.ndarray, wa: np.ndarray, wb: np.ndarray, denom: float) -> float:
    """Standardized mean difference (active minus comparison) / denom.

    ``wa``/``wb`` are full-length weight vectors, zero off-group; a zero
    ``denom`` (constant covariate) yields 0 — callers flag it.
    """
    if denom == 0:
        return 0.0
    return (_wmean(x, wa) - _wmean(x, wb)) / denom


def target_smd(x: np.ndarray, w_g: np.ndarray, target_mean: float, denom: float) -> float:
    """SMD of one weighted group against the target population mean."""
    if denom == 0:
        return 0.0
    return (_wmean(x, w_g) - target_mean) / denom


def _ecdf_diff(x: np.ndarray, wa: np.ndarray, wb: np.ndarray) -> float:
    order = np.argsort(x, kind="stable")
    xs = x[order]
    diff = np.cumsum(wa[order] / wa.sum() - wb[order] / wb.sum())
    if len(xs) == 0:
        return 0.0
    boundary = np.append(xs[1:] != xs[:-1], True)
    return float(np.abs(diff[boundary]).max())


def ks_stat(x: np.ndarray, wa: np.ndarray, wb: np.ndarray) -> float:
    """Max gap between the two weighted pseudo-ECDFs over observed values.

    With negative weights the pseudo-ECDFs are non-monotone and the gap may
    exceed 1; for binary 0/1 columns this reduces to |p_a - p_b|.
    """
    return _ecdf_diff(x, wa, wb)


def ess(w: np.ndarray) -> float:
    """Effective sample size (sum w)^2 / sum w^2 of one group's weights."""
    denom = float(w @ w)
    if denom == 0:
        return 0.0
    return float(w.sum() ** 2 / denom)


def weighted_sd(x: np.ndarray, w: np.ndarray) -> float:
    """Reliability-weighted SD; equals the ddof=1 SD under uniform weights."""
    wt = w / w.sum()
    mu = float(wt @ x)
    correction = 1.0 - float(wt @ wt)
    if correction <= 0:
        return float("nan")
    return float(np.sqrt((wt @ (x - mu) ** 2) / correction))


# --------------------------------------------------------------------------
# shared stratum machinery
# --------------------------------------------------------------------------


def _parse_addl(addl) -> Formula | None:
    if addl is None:
        return None
    return addl if isinstance(addl, Formula) else parse_formula(addl)


def _balance_matrix(fit, addl):
    exclude = [fit.dataset_.roles.treatment]
    if fit.dataset_.roles.instrument:
        exclude.append(fit.dataset_.roles.instrument)
    return expand_balance_columns(
        fit.covariate_formula_, fit.dataset_, _parse_addl(addl), exclude=tuple(exclude)
    )


def _display_groups(fit, contrast):
    """Group labels and row masks for display: (labels, masks, pair_mode).

    Binary fits compare the two levels; a multi-valued fit shows
    target-only columns for every level unless a display contrast narrows
    it to a pair. Multi-valued URI compares the active group against the
    pooled remainder, because that is the comparison its weights balance.
    """
    levels = fit.levels_
    codes = fit.codes_
    if len(levels) == 2:
        masks = {lv: codes == i for i, lv in enumerate(levels)}
        return (levels[0], levels[1]), masks, True
    if getattr(fit, "method", "URI") == "URI":
        a = fit.active_level_
        masks = {a: codes == levels.index(a), f"not {a}": codes != levels.index(a)}
        return (f"not {a}", a), masks, True
    if contrast is not None:
        a, b = contrast
        if a not in levels or b not in levels:
            raise SpecificationError(f"display contrast {contrast!r} has unknown levels")
        masks = {b: codes == levels.index(b), a: codes == levels.index(a)}
        return (b, a), masks, True
    masks = {lv: codes == i for i, lv in enumerate(levels)}
    return tuple(levels), masks, False


def _strata_weights(fit, masks):
    """Per-stratum, per-group full-length weight vectors."""
    ds = fit.dataset_
    n = ds.n_rows
    sampling = ds.role_values("sampling_weights")
    s = np.ones(n) if sampling is None else sampling.astype(float)
    u = ds.fit_weights()  # sampling x base: the data's design weights
    strata = {"unweighted": {g: np.where(m, s, 0.0) for g, m in masks.items()}}
    if ds.roles.base_weights is not None:
        strata["base weighted"] = {g: np.where(m, u, 0.0) for g, m in masks.items()}
    strata["weighted"] = {g: np.where(m, fit.weights_, 0.0) for g, m in masks.items()}
    return strata, s


def _target_weights(fit, stratum: str, sampling: np.ndarray) -> np.ndarray:
    """Stratum-specific weights over the estimand's target sample."""
    base = sampling if stratum == "unweighted" else fit.dataset_.fit_weights()
    if fit.estimand == "ATT":
        mask = fit.codes_ == fit.levels_.index(fit.focal_)
        return np.where(mask, base, 0.0)
    return base.copy()


def _standardizers(fit, matrix, masks_all_levels):
    """Per-covariate denominators from the unweighted sample."""
    denoms = np.empty(matrix.shape[1])
    if fit.estimand == "ATT":
        rows = matrix[fit.codes_ == fit.levels_.index(fit.focal_)]
        for j in range(matrix.shape[1]):
            denoms[j] = rows[:, j].std(ddof=1) if rows.shape[0] > 1 else 0.0
        return denoms
    for j in range(matrix.shape[1]):
        variances = []
        for i in range(len(fit.levels_)):
            rows = matrix[fit.codes_ == i, j]
            variances.append(rows.var(ddof=1) if rows.size > 1 else 0.0)
        denoms[j] = np.sqrt(np.mean(variances))
    return denoms


# --------------------------------------------------------------------------
# balance table
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BalanceTable:
    rows: tuple[str, ...]
    group_labels: tuple[str, ...]
    pair_mode: bool
    strata: dict[str, pd.DataFrame]
    ess: pd.DataFrame
    flags: dict

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "rows": list(self.rows),
            "groups": list(self.group_labels),
            "strata": {k: v.to_dict(orient="index") for k, v in self.strata.items()},
            "ess": self.ess.to_dict(orient="index"),
            "flags": {k: sorted(v) if isinstance(v, set) else v for k, v in self.flags.items()},
        }


def balance_summary(fit, addl=None, contrast=None) -> BalanceTable:
    """Balance statistics per stratum: unweighted, base-weighted (when base
    weights exist) and implied-weighted, plus effective sample sizes.

    Binary fits report SMD/KS between the groups and TSMD/TKS of each group
    against the target; multi-valued fits report the target columns per
    level unless ``contrast`` narrows the display to one pair. ``addl``
    appends extra balance rows after the modeled ones.
    """
    matrix, names = _balance_matrix(fit, addl)
    labels, masks, pair_mode = _display_groups(fit, contrast)
    strata, sampling = _strata_weights(fit, masks)
    denoms = _standardizers(fit, matrix, masks)
    flags: dict = {"degenerate_standardizer": [names[j] for j in np.flatnonzero(denoms == 0)]}

    tables: dict[str, pd.DataFrame] = {}
    negative: set[str] = set()
    for stratum, group_w in strata.items():
        target_w = _target_weights(fit, stratum, sampling)
        if any((w < 0).any() for w in group_w.values()):
            negative.add(stratum)
        columns: dict[str, np.ndarray] = {}
        if pair_mode:
            comparison, active = labels
            wa, wb = group_w[active], group_w[comparison]
            columns["SMD"] = np.array(
                [smd(matrix[:, j], wa, wb, denoms[j]) for j in range(len(names))]
            )
        for g in labels:
            columns[f"TSMD {g}"] = np.array(
                [
                    target_smd(matrix[:, j], group_w[g], _wmean(matrix[:, j], target_w), denoms[j])
                    for j in range(len(names))
                ]
            )
        if pair_mode:
            comparison, active = labels
            columns["KS"] = np.array(
                [ks_stat(matrix[:, j], group_w[active], group_w[comparison]) for j in range(len(names))]
            )
        for g in labels:
            columns[f"TKS {g}"] = np.array(
                [ks_stat(matrix[:, j], group_w[g], target_w) for j in range(len(names))]
            )
        order = (["SMD"] if pair_mode else []) + [f"TSMD {g}" for g in labels]
        order += (["KS"] if pair_mode else []) + [f"TKS {g}" for g in labels]
        tables[stratum] = pd.DataFrame(columns, index=list(names))[order]
    flags["negative_weights"] = negative

    ess_rows = {"All": {g: ess(w) for g, w in strata["unweighted"].items()}}
    if "base weighted" in strata:
        ess_rows["Base weighted"] = {g: ess(w) for g, w in strata["base weighted"].items()}
    ess_rows["Weighted"] = {g: ess(w) for g, w in strata["weighted"].items()}
    ess_frame = pd.DataFrame(ess_rows).T[list(labels)]

    return BalanceTable(
        rows=names,
        group_labels=labels,
        pair_mode=pair_mode,
        strata=tables,
        ess=ess_frame,
        flags=flags,
    )


# --------------------------------------------------------------------------
# distribution summary
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DistributionSummary:
    rows: tuple[str, ...]
    group_labels: tuple[str, ...]
    strata: dict[str, pd.DataFrame]
    ess: pd.DataFrame

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "rows": list(self.rows),
            "groups": list(self.group_labels),
            "strata": {k: v.to_dict(orient="index") for k, v in self.strata.items()},
            "ess": self.ess.to_dict(orient="index"),
        }


def distribution_summary(fit, addl=None) -> DistributionSummary:
    """Mean and SD of every balance column for the target and each group,
    one table per stratum (weighted group means equal the target for
    modeled covariates in MRI fits)."""
    matrix, names = _balance_matrix(fit, addl)
    labels, masks, _ = _display_groups(fit, None)
    strata, sampling = _strata_weights(fit, masks)
    tables: dict[str, pd.DataFrame] = {}
    for stratum, group_w in strata.items():
        target_w = _target_weights(fit, stratum, sampling)
        cols: dict[str, list[float]] = {"Mean Target": [], "SD Target": []}
        for g in labels:
            cols[f"Mean {g}"] = []
            cols[f"SD {g}"] = []
        for j in range(len(names)):
            x = matrix[:, j]
            cols["Mean Target"].append(_wmean(x, target_w))
            cols["SD Target"].append(weighted_sd(x, target_w))
            for g in labels:
                cols[f"Mean {g}"].append(_wmean(x, group_w[g]))
                cols[f"SD {g}"].append(weighted_sd(x, group_w[g]))
        tables[stratum] = pd.DataFrame(cols, index=list(names))
    ess_rows = {"All": {g: ess(w) for g, w in strata["unweighted"].items()}}
    if "base weighted" in strata:
        ess_rows["Base weighted"] = {g: ess(w) for g, w in strata["base weighted"].items()}
    ess_rows["Weighted"] = {g: ess(w) for g, w in strata["weighted"].items()}
    return DistributionSummary(
        rows=names,
        group_labels=labels,
        strata=tables,
        ess=pd.DataFrame(ess_rows).T[list(labels)],
    )


# --------------------------------------------------------------------------
# plot data
# --------------------------------------------------------------------------


def _silverman_bandwidth(x: np.ndarray) -> float:
    n = len(x)
    sd = x.std(ddof=1) if n > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    iqr = q75 - q25
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    if spread == 0:
        spread = max(abs(x).max(), 1.0) * 1e-3
    return 0.9 * spread * n ** (-0.2)


def _kde(x: np.ndarray, grid_size: int = 512):
    h = _silverman_bandwidth(x)
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, grid_size)
    z = (grid[:, None] - x[None, :]) / h
    density = np.exp(-0.5 * z**2).sum(axis=1) / (len(x) * h * np.sqrt(2 * np.pi))
    return grid, density


def plot_data(fit, kind: str, vars=None, influence=None, top_k: int = 5) -> dict:
    """JSON-serializable data behind the three diagnostic plots.

    ``extrapolation`` needs ``vars`` (a formula of covariates to display):
    per unit value/weight/group with negative weights flagged, plus each
    group's weighted mean and the target value. ``weights`` returns a
    Gaussian-kernel density (Silverman bandwidth, 512-point grid), rug
    points and the mean line at 1/n_g per group. ``influence`` needs an
    :class:`~impliedweights.estimation.InfluenceSet` and flags the top-k
    |SIC| units.
    """
    if kind == "extrapolation":
        if vars is None:
            raise SpecificationError("extrapolation plot requires vars")
        vf = vars if isinstance(vars, Formula) else parse_formula(vars)
        matrix, names = expand_balance_columns(
            vf, fit.dataset_, exclude=(fit.dataset_.roles.treatment,)
        )
        labels, masks, _ = _display_groups(fit, None)
        sampling = fit.dataset_.role_values("sampling_weights")
        s = np.ones(fit.dataset_.n_rows) if sampling is None else sampling.astype(float)
        target_w = _target_weights(fit, "weighted", s)
        out_vars = []
        for j, name in enumerate(names):
            x = matrix[:, j]
            per_group = {}
            for g, mask in masks.items():
                w = np.where(mask, fit.weights_, 0.0)
                per_group[g] = {
                    "weighted_mean": _wmean(x, w),
                    "units": [
                        {
                            "value": float(x[i]),
                            "weight": float(fit.weights_[i]),
                            "negative": bool(fit.weights_[i] < 0),
                        }
                        for i in np.flatnonzero(mask)
                    ],
                }
            out_vars.append(
                {"name": name, "target": _wmean(x, target_w), "groups": per_group}
            )
        return {"schema_version": 1, "type": "extrapolation", "variables": out_vars}

    if kind == "weights":
        labels, masks, _ = _display_groups(fit, None)
        groups = {}
        for g, mask in masks.items():
            w = fit.weights_[mask]
            grid, density = _kde(w)
            groups[g] = {
                "grid": grid.tolist(),
                "density": density.tolist(),
                "rug": w.tolist(),
                "mean_line": 1.0 / int(mask.sum()),
                "negative_fraction": float((w < 0).mean()),
            }
        return {"schema_version": 1, "type": "weights", "groups": groups}

    if kind == "influence":
        if influence is None:
            raise SpecificationError("influence plot requires an InfluenceSet")
        top = set(influence.top(top_k).tolist())
        return {
            "schema_version": 1,
            "type": "influence",
            "units": [
                {"unit": i, "sic": float(s), "top": i in top}
                for i, s in enumerate(influence.sic)
            ],
        }

    raise SpecificationError(f"unknown plot type {kind!r}")
