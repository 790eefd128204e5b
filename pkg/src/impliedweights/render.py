"""Plain-text report rendering for the CLI.

Layout mirrors the estimator's print blocks: an info header with dashed
role lines, one balance table per stratum, effective-sample-size blocks,
and effect tables with significance codes. Display precision: 3 decimals
for SMD/KS statistics, 1-2 decimals for ESS and effect estimates; the JSON
exports carry full precision.
"""

from __future__ import annotations

import numpy as np
import pandas as pd

from .estimators import IVWeights

_METHOD_LONG = {"URI": "URI (uni-regression imputation)", "MRI": "MRI (multi-regression imputation)"}
_DR_LONG = {"WLS": "weighted least squares (WLS)", "AIPW": "augmented inverse probability weighting (AIPW)"}


def fmt_ess(x: float) -> str:
    text = f"{x:.2f}".rstrip("0").rstrip(".")
    return text if text else "0"


def fmt_stat(v: float) -> str:
    text = f"{v:.3f}"
    return "0.000" if text == "-0.000" else text


def fmt_p(p: float) -> str:
    if np.isnan(p):
        return "NA"
    if p < 2e-16:
        return "<2e-16"
    return f"{p:.3g}"


def signif_code(p: float) -> str:
    if np.isnan(p):
        return ""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    if p < 0.1:
        return "."
    return ""


_SIGNIF_LINE = "Signif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1"


def info_block(fit) -> str:
    ds = fit.dataset_
    lines = ["Implied regression weights"]
    lines.append(f" - treatment: {ds.roles.treatment} ({len(fit.levels_)} levels)")
    if isinstance(fit, IVWeights):
        lines.append(f" - instrument: {fit.instrument_} (first-stage t = {fit.first_stage_t_:.2f})")
    lines.append(f" - method: {_METHOD_LONG[fit.method]}")
    lines.append(f" - number of obs.: {ds.n_rows}")
    sw = ds.roles.sampling_weights
    lines.append(f" - sampling weights: {'none' if sw is None else f'column {sw!r}'}")
    bw = ds.roles.base_weights
    lines.append(f" - base weights: {'none' if bw is None else f'column {bw!r}'}")
    if fit.dr_method_ is not None:
        lines.append(f" - doubly-robust method: {_DR_LONG[fit.dr_method_]}")
    estimand = fit.estimand
    if estimand == "ATT" and len(fit.levels_) > 2:
        estimand = f'ATT (focal = "{fit.focal_}")'
    lines.append(f" - target estimand: {estimand}")
    lines.append(" - covariates: " + ", ".join(fit.covariate_formula_.variables()))
    if fit.contrast_ is not None and len(fit.levels_) > 2:
        lines.append(f" - contrast: {fit.contrast_[0]} vs {fit.contrast_[1]}")
    return "\n".join(lines)


def _display_group(fit, label: str) -> str:
    if len(fit.levels_) == 2 and label in fit.levels_:
        comparison, active = fit.levels_[0], fit.levels_[1]
        if fit.estimand == "ATT" and fit.focal_ is not None:
            active = fit.focal_
            comparison = [l for l in fit.levels_ if l != active][0]
        return "Treated" if label == active else "Control"
    return label


def _rename_stat_columns(fit, frame: pd.DataFrame) -> pd.DataFrame:
    mapping = {}
    for col in frame.columns:
        for prefix in ("TSMD ", "TKS ", "Mean ", "SD "):
            if col.startswith(prefix) and col != f"{prefix}Target":
                mapping[col] = prefix + _display_group(fit, col[len(prefix) :])
    return frame.rename(columns=mapping)


def _stratum_title(name: str) -> str:
    return {
        "unweighted": "Summary of Balance for Unweighted Data:",
        "base weighted": "Summary of Balance for Base Weighted Data:",
        "weighted": "Summary of Balance for Weighted Data:",
    }[name]


def ess_block(fit, ess_frame: pd.DataFrame) -> str:
    shown = ess_frame.copy()
    shown.columns = [_display_group(fit, c) for c in shown.columns]
    body = shown.map(fmt_ess).to_string()
    return "Effective Sample Sizes:\n" + body


def balance_text(fit, table) -> str:
    chunks = []
    for stratum, frame in table.strata.items():
        shown = _rename_stat_columns(fit, frame)
        chunks.append(_stratum_title(stratum) + "\n" + shown.to_string(float_format=fmt_stat))
    chunks.append(ess_block(fit, table.ess))
    if table.flags.get("negative_weights"):
        strata = ", ".join(sorted(table.flags["negative_weights"]))
        chunks.append(f"Note: negative weights present in: {strata} (KS may exceed 1).")
    if table.flags.get("degenerate_standardizer"):
        rows = ", ".join(table.flags["degenerate_standardizer"])
        chunks.append(f"Note: degenerate standardizer (constant covariate): {rows}.")
    return "\n\n".join(chunks)


def distribution_text(fit, summary) -> str:
    titles = {
        "unweighted": "Distribution Summary for Unweighted Data:",
        "base weighted": "Distribution Summary for Base Weighted Data:",
        "weighted": "Distribution Summary for Weighted Data:",
    }
    chunks = []
    for stratum, frame in summary.strata.items():
        rows = {}
        target_label = "Overall" if (stratum == "unweighted" and fit.estimand == "ATE") else "Target"
        for idx in frame.index:
            row = {}
            row[f"Mean {target_label}"] = f"{frame.loc[idx, 'Mean Target']:.3f}"
            row[f"SD {target_label}"] = f"({frame.loc[idx, 'SD Target']:.3f})"
            for g in summary.group_labels:
                disp = _display_group(fit, g)
                row[f"Mean {disp}"] = f"{frame.loc[idx, f'Mean {g}']:.3f}"
                row[f"SD {disp}"] = f"({frame.loc[idx, f'SD {g}']:.3f})"
            rows[idx] = row
        chunks.append(titles[stratum] + "\n" + pd.DataFrame(rows).T.to_string())
    chunks.append(ess_block(fit, summary.ess))
    return "\n\n".join(chunks)


def est_info_block(of) -> str:
    wfit = of.weights_fit
    method = "2SLS" if isinstance(wfit, IVWeights) else wfit.method
    return "\n".join(
        [
            "Outcome model fit",
            f" - outcome: {of.outcome}",
            f" - standard errors: {of.vcov_tag}",
            f" - estimand: {wfit.estimand}",
            f" - method: {method}",
        ]
    )


def _effect_table(rows) -> str:
    header = f"{'':<16}{'Estimate':>10} {'Std. Error':>10} {'CI 2.5%':>10} {'CI 97.5%':>10} {'t value':>8} {'Pr(>|t|)':>9}"
    lines = [header]
    any_code = False
    for r in rows:
        code = signif_code(r.p)
        any_code = any_code or bool(code)
        lines.append(
            f"{r.label:<16}{r.estimate:>10.1f} {r.se:>10.1f} {r.ci_low:>10.1f} "
            f"{r.ci_high:>10.1f} {r.t:>8.3f} {fmt_p(r.p):>9} {code}"
        )
    if any_code:
        lines.append("---")
        lines.append(_SIGNIF_LINE)
    return "\n".join(lines)


def effects_text(report) -> str:
    chunks = ["Effect estimates:\n" + _effect_table(report.contrasts)]
    chunks.append(
        f"Residual standard error: {report.sigma:.4g} on {report.df_residual} degrees of freedom"
    )
    if report.po_means:
        chunks.append("Potential outcome means:\n" + _effect_table(report.po_means))
    return "\n\n".join(chunks)


def influence_text(infl, top_k: int = 5) -> str:
    order = infl.top(top_k)
    lines = [f"Most influential units by |SIC| (contrast {infl.contrast[0]} vs {infl.contrast[1]}):"]
    lines.append(f"{'unit':>8} {'SIC':>14} {'residual':>14} {'hat':>8}")
    for i in order:
        lines.append(
            f"{i:>8} {infl.sic[i]:>14.3f} {infl.residuals[i]:>14.3f} {infl.hat[i]:>8.4f}"
        )
    return "\n".join(lines)
