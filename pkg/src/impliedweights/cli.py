"""Command-line interface: the full pipeline as subcommands.

Exit codes: 0 success, 2 usage error, 1 computation error. Output format
is text, json or csv (``--format``, or the IMPLIEDWEIGHTS_FORMAT
environment variable); JSON output is byte-deterministic for identical
configurations (including seeds). JSON payload shapes are versioned under
``impliedweights/schemas/``.
"""

from __future__ import annotations

import io
import json
import sys

import click
import numpy as np
import pandas as pd

from . import render
from .dataset import load_csv
from .diagnostics import balance_summary, distribution_summary, plot_data
from .estimation import effect_summary, fit_outcome_model, influence_measures
from .estimators import IVWeights, RegressionWeights
from .exceptions import ImpliedWeightsError
from .companion import fit_propensity, generate_instrument, generate_multilevel, nn_match
from .formula import build_design, parse_formula
from .verify import verify_fit


def _emit(text: str, output):
    if output is None:
        click.echo(text)
    else:
        with open(output, "w", encoding="utf-8") as handle:
            handle.write(text if text.endswith("\n") else text + "\n")


def _json(payload) -> str:
    return json.dumps(payload, sort_keys=True, indent=2)


def _frame_csv(frame: pd.DataFrame) -> str:
    buf = io.StringIO()
    frame.to_csv(buf, index=False)
    return buf.getvalue().rstrip("\n")


def _parse_hints(hints):
    out = {}
    for item in hints:
        name, _, kind = item.partition(":")
        if kind not in ("numeric", "categorical"):
            raise click.UsageError(f"--hint must look like name:numeric|categorical, got {item!r}")
        out[name] = kind
    return out or None


def _load_dataset(ctx):
    return load_csv(
        ctx["data"],
        type_hints=_parse_hints(ctx["hint"]),
        treatment=ctx["treat"],
        outcome=ctx.get("outcome"),
        base_weights=ctx["base_weights"],
        sampling_weights=ctx["sampling_weights"],
        cluster=ctx.get("cluster"),
        instrument=None,
    )


def _build_fit(ctx):
    ds = _load_dataset(ctx)
    contrast = None
    if ctx["contrast"]:
        parts = [p.strip() for p in ctx["contrast"].split(",")]
        if len(parts) != 2:
            raise click.UsageError("--contrast expects two levels like '2,1'")
        contrast = tuple(parts)
    if ctx.get("iv"):
        if contrast is not None:
            raise click.UsageError("--contrast does not apply to two-stage least squares")
        if ctx["dr_method"] is not None:
            raise click.UsageError("--dr-method does not apply to two-stage least squares")
        fit = IVWeights(
            formula=ctx["formula"],
            iv=ctx["iv"],
            method=ctx["method"],
            estimand=ctx["estimand"],
            focal=ctx["focal"],
        ).fit(ds)
    else:
        fit = RegressionWeights(
            formula=ctx["formula"],
            method=ctx["method"],
            estimand=ctx["estimand"],
            focal=ctx["focal"],
            contrast=contrast,
            dr_method=ctx["dr_method"],
        ).fit(ds)
    if ctx["verify"]:
        fit.verification_ = verify_fit(fit)
    return fit


def _common_options(command):
    options = [
        click.option("--formula", required=True, help="Model formula, e.g. '~ treat + age'."),
        click.option("--data", required=True, type=click.Path(), help="CSV input path."),
        click.option("--treat", default=None, help="Treatment column (default: first formula variable)."),
        click.option("--method", type=click.Choice(["URI", "MRI"]), default="URI", show_default=True),
        click.option("--estimand", type=click.Choice(["ATE", "ATT"]), default="ATE", show_default=True),
        click.option("--focal", default=None, help="Focal level (ATT with a multi-valued treatment)."),
        click.option("--contrast", default=None, help="URI contrast pair, e.g. '2,1'."),
        click.option("--base-weights", default=None, help="Base-weights column (matching/weighting)."),
        click.option("--sampling-weights", default=None, help="Sampling-weights column."),
        click.option("--dr-method", type=click.Choice(["WLS", "AIPW"]), default=None),
        click.option("--hint", multiple=True, help="Column kind override name:numeric|categorical."),
        click.option(
            "--format",
            "fmt",
            type=click.Choice(["text", "json", "csv"]),
            default=None,
            help="Output format (default from IMPLIEDWEIGHTS_FORMAT, else text).",
        ),
        click.option("--output", type=click.Path(), default=None, help="Write here instead of stdout."),
        click.option("--verify", is_flag=True, help="Run oracle cross-checks; fail on disagreement."),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _resolve_format(fmt) -> str:
    import os

    return fmt or os.environ.get("IMPLIEDWEIGHTS_FORMAT", "text")


def _stack_strata(table) -> pd.DataFrame:
    """Long CSV layout: per-stratum statistic rows, then the ESS block."""
    frames = []
    for stratum, frame in table.strata.items():
        chunk = frame.reset_index(names="row")
        chunk.insert(0, "stratum", stratum)
        frames.append(chunk)
    ess = table.ess.reset_index(names="row")
    ess.insert(0, "stratum", "ess")
    return pd.concat(frames + [ess], ignore_index=True)


@click.group(no_args_is_help=True)
def cli():
    """Implied weights of linear-regression causal estimators."""


@cli.command()
@_common_options
def weights(**ctx):
    """Compute implied weights and export them."""
    ctx["iv"] = None
    fit = _build_fit(ctx)
    _emit_weights(fit, ctx)


@cli.command("iv-weights")
@_common_options
@click.option("--iv", required=True, help="Instrument column or formula like '~ Ins'.")
def iv_weights(**ctx):
    """Compute the implied weights of two-stage least squares."""
    fit = _build_fit(ctx)
    _emit_weights(fit, ctx)


def _emit_weights(fit, ctx):
    fmt = _resolve_format(ctx["fmt"])
    if fmt == "text":
        _emit(render.info_block(fit), ctx["output"])
    elif fmt == "json":
        payload = fit.describe()
        payload["schema_version"] = 1
        payload["units"] = fit.weights_frame().to_dict(orient="records")
        if getattr(fit, "verification_", None):
            payload["verification"] = fit.verification_
        _emit(_json(payload), ctx["output"])
    else:
        _emit(_frame_csv(fit.weights_frame()), ctx["output"])


@cli.command()
@_common_options
@click.option("--iv", default=None, help="Instrument column for 2SLS summaries.")
@click.option("--stat", type=click.Choice(["balance", "distribution"]), default="balance", show_default=True)
@click.option("--addl", default=None, help="Extra balance terms, e.g. '~ married + re75'.")
@click.option("--display-contrast", default=None, help="Pair of levels to display (multi-valued MRI).")
def summary(**ctx):
    """Balance tables or distribution summaries for a fit."""
    fit = _build_fit(ctx)
    fmt = _resolve_format(ctx["fmt"])
    display_contrast = None
    if ctx["display_contrast"]:
        display_contrast = tuple(p.strip() for p in ctx["display_contrast"].split(","))
    if ctx["stat"] == "balance":
        table = balance_summary(fit, addl=ctx["addl"], contrast=display_contrast)
        if fmt == "text":
            _emit(render.info_block(fit) + "\n\n" + render.balance_text(fit, table), ctx["output"])
        elif fmt == "json":
            _emit(_json(table.to_json_dict()), ctx["output"])
        else:
            _emit(_frame_csv(_stack_strata(table)), ctx["output"])
    else:
        summ = distribution_summary(fit, addl=ctx["addl"])
        if fmt == "text":
            _emit(render.info_block(fit) + "\n\n" + render.distribution_text(fit, summ), ctx["output"])
        elif fmt == "json":
            _emit(_json(summ.to_json_dict()), ctx["output"])
        else:
            _emit(_frame_csv(_stack_strata(summ)), ctx["output"])


@cli.command()
@_common_options
@click.option("--iv", default=None, help="Instrument column for 2SLS estimation.")
@click.option("--outcome", required=True, help="Outcome column.")
@click.option("--robust", type=click.Choice(["const", "HC0", "HC1", "HC2", "HC3"]), default=None)
@click.option("--cluster", default=None, help="Categorical cluster column (HC1 cluster-robust).")
def estimate(**ctx):
    """Fit the outcome model and report effect estimates."""
    fit = _build_fit(ctx)
    of = fit_outcome_model(fit, outcome=ctx["outcome"], robust=ctx["robust"], cluster=ctx["cluster"])
    report = effect_summary(of)
    if ctx["verify"]:
        c = fit.signed_coefficients()
        weighted = float(c @ of.y)
        primary = report.contrasts[0].estimate
        if abs(weighted - primary) > 1e-8 * max(1.0, abs(primary)):
            from .exceptions import VerificationError

            raise VerificationError(
                f"effect {primary:.10g} != weighted contrast {weighted:.10g}"
            )
    fmt = _resolve_format(ctx["fmt"])
    if fmt == "text":
        _emit(render.est_info_block(of) + "\n\n" + render.effects_text(report), ctx["output"])
    elif fmt == "json":
        _emit(_json(report.to_json_dict()), ctx["output"])
    else:
        rows = [
            {"kind": "contrast", **vars(r)} for r in report.contrasts
        ] + [{"kind": "po_mean", **vars(r)} for r in report.po_means]
        _emit(_frame_csv(pd.DataFrame(rows)), ctx["output"])


@cli.command()
@_common_options
@click.option("--iv", default=None, help="Instrument column for 2SLS influence.")
@click.option("--outcome", required=True, help="Outcome column.")
@click.option("--robust", type=click.Choice(["const", "HC0", "HC1", "HC2", "HC3"]), default=None)
@click.option("--cluster", default=None)
@click.option("--top-k", type=int, default=5, show_default=True)
def influence(**ctx):
    """Per-unit influence measures (hat values, residuals, SIC)."""
    fit = _build_fit(ctx)
    of = fit_outcome_model(fit, outcome=ctx["outcome"], robust=ctx["robust"], cluster=ctx["cluster"])
    infl = influence_measures(of)
    fmt = _resolve_format(ctx["fmt"])
    if fmt == "text":
        _emit(render.influence_text(infl, ctx["top_k"]), ctx["output"])
    elif fmt == "json":
        _emit(_json(infl.to_json_dict()), ctx["output"])
    else:
        frame = pd.DataFrame(
            {
                "unit": np.arange(len(infl.sic)),
                "hat": infl.hat,
                "residual": infl.residuals,
                "sic": infl.sic,
            }
        )
        _emit(_frame_csv(frame), ctx["output"])


@cli.command("plot-data")
@_common_options
@click.option("--iv", default=None, help="Instrument column for 2SLS plots.")
@click.option("--type", "plot_type", type=click.Choice(["extrapolation", "weights", "influence"]), required=True)
@click.option("--vars", default=None, help="Formula of covariates for the extrapolation plot.")
@click.option("--outcome", default=None, help="Outcome column (influence plot).")
@click.option("--top-k", type=int, default=5, show_default=True)
def plot_data_cmd(**ctx):
    """Emit plot data as JSON (images are out of scope)."""
    fit = _build_fit(ctx)
    infl = None
    if ctx["plot_type"] == "influence":
        if not ctx["outcome"]:
            raise click.UsageError("--outcome is required for the influence plot")
        of = fit_outcome_model(fit, outcome=ctx["outcome"])
        infl = influence_measures(of)
    payload = plot_data(fit, ctx["plot_type"], vars=ctx["vars"], influence=infl, top_k=ctx["top_k"])
    _emit(_json(payload), ctx["output"])


@cli.command()
@click.option("--data", required=True, type=click.Path())
@click.option("--treat", required=True, help="Binary treatment column.")
@click.option("--what", type=click.Choice(["multilevel", "instrument"]), required=True)
@click.option("--column-name", default=None, help="Name of the generated column.")
@click.option("--seed", type=int, required=True)
@click.option("--output", type=click.Path(), default=None)
def datagen(data, treat, what, column_name, seed, output):
    """Append a synthetic multi-valued treatment or instrument column."""
    ds = load_csv(data, treatment=treat)
    frame = ds.to_frame()
    if what == "multilevel":
        frame[column_name or "treat_multi"] = generate_multilevel(ds, seed)
    else:
        frame[column_name or "Ins"] = generate_instrument(ds, seed)
    _emit(_frame_csv(frame), output)


@cli.command()
@click.option("--formula", required=True, help="Propensity model formula, e.g. '~ treat + age'.")
@click.option("--data", required=True, type=click.Path())
@click.option("--treat", default=None)
@click.option("--output", type=click.Path(), default=None)
def match(formula, data, treat, output):
    """1:1 nearest-neighbor propensity matching; emits base weights + subclass."""
    f = parse_formula(formula)
    ds = load_csv(data, treatment=treat or f.variables()[0])
    treat_name = ds.roles.treatment
    cov = f.drop_variable(treat_name)
    design = build_design(cov, ds, include_intercept=True)
    X = design.matrix[:, [j for j, n in enumerate(design.names) if n != "(Intercept)"]]
    codes = ds.treatment().values
    if ds.treatment().n_levels != 2:
        raise click.UsageError("matching requires a binary treatment")
    scores, _ = fit_propensity(X, (codes == 1).astype(float))
    result = nn_match(scores, codes == 1)
    frame = ds.to_frame()
    frame["base_weight"] = result.base_weights
    frame["subclass"] = result.subclass
    _emit(_frame_csv(frame), output)


def main(argv=None) -> int:
    """Console entry point with stable exit codes."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except ImpliedWeightsError as exc:
        click.echo(f"error[{exc.code}]: {exc}", err=True)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
