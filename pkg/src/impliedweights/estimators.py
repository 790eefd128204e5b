"""Estimator API: fit implied regression weights from data.

:class:`RegressionWeights` is the design-stage entry point. Fitting never
touches the outcome column; the fitted object carries the implied per-unit
weights, group memberships and the target profile, and is consumed by the
diagnostics and estimation modules. :class:`IVWeights` is the two-stage
least-squares counterpart with a binary instrument.

Both are scikit-learn compatible (``get_params`` / ``set_params``,
``fit(data)`` with trailing-underscore fitted attributes) so they compose
with the wider ecosystem; ``transform``/``predict`` are deliberately absent
because implied weights are in-sample functionals with no out-of-sample
meaning.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import engine
from .dataset import Dataset, as_dataset, coerce_categorical
from .exceptions import FormulaError, SpecificationError
from .formula import Factor, Formula, Term, build_design, parse_formula

__all__ = ["RegressionWeights", "IVWeights"]

_METHODS = ("URI", "MRI")
_ESTIMANDS = ("ATE", "ATT")


def _as_formula(formula) -> Formula:
    if isinstance(formula, Formula):
        return formula
    if isinstance(formula, str):
        return parse_formula(formula)
    raise FormulaError(f"formula must be a string or Formula, got {type(formula).__name__}")


def _weighted_mean(M: np.ndarray, u: np.ndarray, mask=None) -> np.ndarray:
    if mask is not None:
        M, u = M[mask], u[mask]
    total = u.sum()
    if total <= 0:
        raise SpecificationError("no positive fit weight in target group")
    return M.T @ u / total


class _WeightsMixin:
    """Shared fitted-surface helpers for both weight estimators."""

    def _resolve(self, data):
        ds = as_dataset(
            data,
            treatment=self.treat,
            base_weights=self.base_weights,
            sampling_weights=self.sampling_weights,
        )
        formula = _as_formula(self.formula)
        if ds.roles.treatment is None:
            variables = formula.variables()
            if not variables:
                raise SpecificationError("cannot infer treatment from an empty formula")
            ds = coerce_categorical(ds, variables[0]).with_roles(treatment=variables[0])
        treat_name = ds.roles.treatment
        if not formula.main_effect_only(treat_name):
            raise FormulaError(
                f"treatment {treat_name!r} may appear only as an untransformed main effect"
            )
        if self.method not in _METHODS:
            raise SpecificationError(f"method must be one of {_METHODS}, got {self.method!r}")
        if self.estimand not in _ESTIMANDS:
            raise SpecificationError(f"estimand must be one of {_ESTIMANDS}, got {self.estimand!r}")
        return ds, formula, treat_name

    def _treatment_context(self, ds: Dataset):
        treat = ds.treatment()
        levels = treat.levels
        codes = treat.values
        focal = self.focal
        if self.estimand == "ATT":
            if focal is None:
                if len(levels) > 2:
                    raise SpecificationError("focal level is required for a multi-valued ATT")
                focal = levels[1]
            if focal not in levels:
                raise SpecificationError(f"focal level {focal!r} is not a treatment level")
        elif focal is not None:
            raise SpecificationError("focal is only meaningful with estimand='ATT'")
        return levels, codes, focal

    def _positive_count(self, ds: Dataset) -> int:
        base = ds.role_values("base_weights")
        return int((base > 0).sum()) if base is not None else ds.n_rows

    # -- fitted surface -----------------------------------------------------

    def weights_frame(self) -> pd.DataFrame:
        """Per-unit export: unit id, group label, implied weight, base weight."""
        check_is_fitted(self, "weights_")
        base = self.dataset_.role_values("base_weights")
        return pd.DataFrame(
            {
                "unit": np.arange(len(self.weights_)),
                "group": self.groups_,
                "weight": self.weights_,
                "base_weight": np.ones(len(self.weights_)) if base is None else base,
            }
        )

    def group_weights(self, level: str) -> np.ndarray:
        check_is_fitted(self, "weights_")
        return self.weights_[self.groups_ == level]

    def describe(self) -> dict:
        """Fit metadata used by reports and the JSON export."""
        check_is_fitted(self, "weights_")
        ds = self.dataset_
        info = {
            "treatment": ds.roles.treatment,
            "levels": list(self.levels_),
            "method": self.method,
            "estimand": self.estimand,
            "n_obs": ds.n_rows,
            "sampling_weights": ds.roles.sampling_weights,
            "base_weights": ds.roles.base_weights,
            "dr_method": getattr(self, "dr_method_", None),
            "focal": self.focal_,
            "contrast": list(self.contrast_) if self.contrast_ else None,
            "covariates": list(self.covariate_formula_.variables()),
            "target_profile": {k: float(v) for k, v in self.target_profile_.items()},
        }
        if getattr(self, "instrument_", None) is not None:
            info["instrument"] = self.instrument_
            info["first_stage_t"] = float(self.first_stage_t_)
        dropped = list(self.covariate_design_.dropped)
        if getattr(self, "design_", None) is not None:
            dropped += [d for d in self.design_.dropped if d not in dropped]
        if getattr(self, "stacked_", None) is not None:
            dropped += [(name, "aliased") for name in self.stacked_.dropped]
        info["dropped_columns"] = [list(d) for d in dropped]
        return info


class RegressionWeights(_WeightsMixin, BaseEstimator):
    """Implied unit-level weights of linear-regression effect estimators.

    Parameters
    ----------
    formula : str or Formula
        Right-hand-side model formula, e.g. ``"~ treat + age + log(re75)"``.
        No outcome is accepted: weights are outcome-free by construction.
        With ``method="URI"`` the formula is the single-equation model
        (treatment included, or prepended automatically); with
        ``method="MRI"`` it lists the terms fit separately per treatment
        group and the treatment term is ignored if present.
    treat : str, optional
        Treatment column. Defaults to the dataset's bound role or, failing
        that, the first formula variable.
    method : {"URI", "MRI"}
        Single-equation estimator vs group-wise (imputation) estimator.
    estimand : {"ATE", "ATT"}
        Target population: everyone, or the focal group. URI weights are
        identical under both; only the diagnostics' target changes.
    focal : str, optional
        Focal treatment level for ATT (required when multi-valued).
    contrast : (str, str), optional
        Active and reference levels for URI with a multi-valued treatment;
        URI weights are contrast-specific. Invalid for MRI.
    base_weights, sampling_weights : str, optional
        Column names. Base weights (e.g. matching weights) induce weighted
        least squares; sampling weights multiply base weights in every
        weighted sum.
    dr_method : {"WLS", "AIPW"}, optional
        With base weights: plain weighted least squares (default) or the
        doubly-robust composition adding normalized-weight residual
        corrections to the imputed contrast.
    """

    def __init__(
        self,
        formula,
        treat=None,
        method="URI",
        estimand="ATE",
        focal=None,
        contrast=None,
        base_weights=None,
        sampling_weights=None,
        dr_method=None,
    ):
        self.formula = formula
        self.treat = treat
        self.method = method
        self.estimand = estimand
        self.focal = focal
        self.contrast = contrast
        self.base_weights = base_weights
        self.sampling_weights = sampling_weights
        self.dr_method = dr_method

    def fit(self, data, y=None):
        ds, formula, treat_name = self._resolve(data)
        levels, codes, focal = self._treatment_context(ds)
        if self.dr_method is not None and ds.roles.base_weights is None:
            raise SpecificationError("dr_method requires base weights")
        dr_method = self.dr_method or ("WLS" if ds.roles.base_weights is not None else None)
        if dr_method not in (None, "WLS", "AIPW"):
            raise SpecificationError(f"dr_method must be WLS or AIPW, got {dr_method!r}")
        if dr_method == "AIPW" and self.method != "MRI":
            raise SpecificationError(
                "AIPW requires group-wise outcome models (method='MRI'); a single "
                "uninteracted model cannot carry the residual corrections"
            )
        # AIPW: the outcome models are fit WITHOUT the base weights (sampling
        # weights only) and the base weights enter through the normalized
        # residual corrections; fitting the models base-weighted would zero
        # the corrections by the normal equations and collapse AIPW into WLS.
        if dr_method == "AIPW":
            sampling = ds.role_values("sampling_weights")
            u = np.ones(ds.n_rows) if sampling is None else sampling.astype(float)
            correction_weights = ds.fit_weights()
        else:
            u = ds.fit_weights()
            correction_weights = None

        for idx, level in enumerate(levels):
            if u[codes == idx].sum() <= 0:
                raise SpecificationError(
                    f"treatment level {level!r} carries no positive fit weight"
                )

        cov_formula = formula.drop_variable(treat_name)
        # Aliasing decisions for the covariate block are made alongside an
        # intercept so constants/affine duplicates resolve the same way they
        # will inside the fitted designs.
        cov_design = build_design(cov_formula, ds, include_intercept=True, row_weights=u)
        cov_cols = [j for j, n in enumerate(cov_design.names) if n != "(Intercept)"]
        Xcov = cov_design.matrix[:, cov_cols]
        cov_names = tuple(cov_design.names[j] for j in cov_cols)

        self.dataset_ = ds
        self.formula_ = formula
        self.covariate_formula_ = cov_formula
        self.covariate_design_ = cov_design
        self.covariate_matrix_ = Xcov
        self.covariate_names_ = cov_names
        self.levels_ = levels
        self.codes_ = codes
        self.u_ = u
        self.correction_weights_ = correction_weights
        self.focal_ = focal
        # AIPW outcome models keep every unit; WLS drops zero-base-weight
        # units from the df accounting.
        self.n_positive_ = ds.n_rows if dr_method == "AIPW" else self._positive_count(ds)
        self.dr_method_ = dr_method
        self.instrument_ = None

        if self.method == "URI":
            self._fit_uri(ds, formula, treat_name, levels, codes, u, Xcov, cov_names)
        else:
            self._fit_mri(levels, codes, u, Xcov, cov_names)
        self.n_params_ = self._design().shape[1]
        self.df_residual_ = self.n_positive_ - self.n_params_
        return self

    # -- URI ------------------------------------------------------------

    def _fit_uri(self, ds, formula, treat_name, levels, codes, u, Xcov, cov_names):
        if self.contrast is not None:
            a, b = self.contrast
            if a not in levels or b not in levels or a == b:
                raise SpecificationError(f"contrast {self.contrast!r} is not a pair of distinct levels")
        elif len(levels) == 2:
            a, b = levels[1], levels[0]
        else:
            raise SpecificationError("contrast is required for URI with a multi-valued treatment")

        if treat_name not in formula.variables():
            formula = Formula((Term((Factor(treat_name),)),) + formula.terms)
        design = build_design(formula, ds, include_intercept=True, row_weights=u)
        treat_term = str(Term((Factor(treat_name),)))
        dummy_names = design.term_map.get(treat_term, ())
        dummy_index = {}
        for level in levels[1:]:
            name = f"{treat_name}{level}"
            if name in dummy_names:
                dummy_index[level] = design.names.index(name)
        ell = np.zeros(design.n_columns)
        for level, sign in ((a, 1.0), (b, -1.0)):
            j = dummy_index.get(level)
            if j is None and level != levels[0]:
                raise SpecificationError(
                    f"treatment indicator for level {level!r} was aliased out of the design"
                )
            if j is not None:
                ell[j] += sign
        c = engine.functional(design.matrix, u, ell)
        active = codes == levels.index(a)
        signs = np.where(active, 1.0, -1.0)

        # modeled covariates = columns that survived aliasing in this design
        cov_cols = [
            j
            for j, n in enumerate(design.names)
            if n != "(Intercept)" and n not in dummy_names
        ]
        self.covariate_matrix_ = design.matrix[:, cov_cols]
        self.covariate_names_ = tuple(design.names[j] for j in cov_cols)

        self.design_ = design
        self.effect_selector_ = ell
        self.c_ = c
        self.weights_ = signs * c
        self.groups_ = np.asarray(levels, dtype=object)[codes]
        self.contrast_ = (a, b)
        self.active_level_ = a
        # implied profile: the covariate means both sides are balanced to
        profile = self.covariate_matrix_[active].T @ self.weights_[active]
        self.target_profile_ = pd.Series(profile, index=self.covariate_names_)
        self.stacked_ = None
        self.c_by_level_ = None

    # -- MRI --------------------------------------------------------------

    def _fit_mri(self, levels, codes, u, Xcov, cov_names):
        if self.contrast is not None:
            raise SpecificationError(
                "contrast applies to URI only; MRI computes weights for every level "
                "(narrow the balance display with balance_summary(..., contrast=...))"
            )
        mask = None if self.estimand == "ATE" else codes == levels.index(self.focal_)
        design_weights = self.dataset_.fit_weights()  # sampling x base, the estimand's weights
        profile = _weighted_mean(Xcov, design_weights, mask) if Xcov.size else np.empty(0)
        target = dict(zip(cov_names, profile))
        sd = engine.stack_by_group(Xcov, cov_names, codes, levels, u)
        c_by_level = {}
        for level in levels:
            c = engine.group_functional(sd, level, target)
            if self.dr_method_ == "AIPW":
                c = c + engine.aipw_correction(sd, level, self.correction_weights_)
            c_by_level[level] = c
        weights = np.zeros(len(codes))
        for idx, level in enumerate(levels):
            rows = codes == idx
            weights[rows] = c_by_level[level][rows]

        self.stacked_ = sd
        self.c_by_level_ = c_by_level
        self.weights_ = weights
        self.groups_ = np.asarray(levels, dtype=object)[codes]
        self.contrast_ = None
        self.active_level_ = self.focal_ if self.estimand == "ATT" else levels[-1]
        self.target_profile_ = pd.Series(profile, index=cov_names)
        self.design_ = None
        self.c_ = None
        self.effect_selector_ = None

    # -- shared fitted helpers ---------------------------------------------

    def _design(self) -> np.ndarray:
        return self.design_.matrix if self.method == "URI" else self.stacked_.matrix

    def signed_coefficients(self, contrast=None) -> np.ndarray:
        """Unit coefficients c with effect(a, b) = c' y for every outcome y."""
        check_is_fitted(self, "weights_")
        if self.method == "URI":
            if contrast is not None and tuple(contrast) != self.contrast_:
                raise SpecificationError(
                    "URI weights are specific to the fitted contrast; refit to change it"
                )
            return self.c_
        if contrast is None:
            if len(self.levels_) != 2:
                raise SpecificationError("contrast pair required for a multi-valued MRI fit")
            contrast = (
                (self.focal_, [l for l in self.levels_ if l != self.focal_][0])
                if self.estimand == "ATT" and self.focal_ is not None
                else (self.levels_[1], self.levels_[0])
            )
        a, b = contrast
        return self.c_by_level_[a] - self.c_by_level_[b]


class IVWeights(_WeightsMixin, BaseEstimator):
    """Implied weights of the two-stage least-squares estimator.

    The formula specifies the second-stage (outcome) model; ``iv`` names a
    binary instrument (column name or one-variable formula like ``"~ Ins"``).
    With ``method="MRI"`` (treatment-covariate interactions in the outcome
    model) instrument-covariate interactions enter the first stage as
    additional instruments and the effect is read at the estimand's target
    profile. The estimand does not change URI weights; it sets the target
    the diagnostics compare against.
    """

    def __init__(
        self,
        formula,
        iv,
        treat=None,
        method="URI",
        estimand="ATT",
        focal=None,
        base_weights=None,
        sampling_weights=None,
    ):
        self.formula = formula
        self.iv = iv
        self.treat = treat
        self.method = method
        self.estimand = estimand
        self.focal = focal
        self.base_weights = base_weights
        self.sampling_weights = sampling_weights

    def _instrument_vector(self, ds: Dataset) -> tuple[str, np.ndarray]:
        iv = self.iv
        if isinstance(iv, str) and iv.lstrip().startswith("~"):
            terms = parse_formula(iv).terms
            if len(terms) != 1 or terms[0].order != 1 or terms[0].factors[0].transform:
                raise SpecificationError("iv formula must name exactly one plain variable")
            iv = terms[0].factors[0].var
        col = ds.column(iv)
        if col.kind == "categorical":
            if col.n_levels != 2:
                raise SpecificationError("instrument must be binary")
            z = (col.values == 1).astype(float)
        else:
            values = set(np.unique(col.values))
            if not values <= {0.0, 1.0}:
                raise SpecificationError("instrument must be binary (0/1)")
            z = col.values.astype(float)
        if np.ptp(z) == 0.0:
            raise SpecificationError("instrument is constant")
        return iv, z

    def fit(self, data, y=None):
        ds, formula, treat_name = self._resolve(data)
        levels, codes, focal = self._treatment_context(ds)
        if len(levels) != 2:
            raise SpecificationError("two-stage least squares requires a binary treatment")
        iv_name, z = self._instrument_vector(ds)
        ds = ds.with_roles(instrument=iv_name)
        u = ds.fit_weights()
        for idx, level in enumerate(levels):
            if u[codes == idx].sum() <= 0:
                raise SpecificationError(
                    f"treatment level {level!r} carries no positive fit weight"
                )

        cov_formula = formula.drop_variable(treat_name).drop_variable(iv_name)
        cov_design = build_design(cov_formula, ds, include_intercept=True, row_weights=u)
        cov_cols = [j for j, n in enumerate(cov_design.names) if n != "(Intercept)"]
        Xcov = cov_design.matrix[:, cov_cols]
        cov_names = tuple(cov_design.names[j] for j in cov_cols)
        a01 = (codes == 1).astype(float)
        ones = np.ones(ds.n_rows)

        if self.method == "URI":
            endog = a01[:, None]
            W = np.column_stack([ones, Xcov, z])
            gamma_index = W.shape[1] - 1
            endog_names = [f"fitted({treat_name}{levels[1]})"]
        else:
            endog = np.column_stack([a01] + [a01 * Xcov[:, j] for j in range(Xcov.shape[1])])
            W = np.column_stack([ones, Xcov, z] + [z * Xcov[:, j] for j in range(Xcov.shape[1])])
            gamma_index = 1 + Xcov.shape[1]
            endog_names = [f"fitted({treat_name}{levels[1]})"] + [
                f"fitted({treat_name}{levels[1]}:{name})" for name in cov_names
            ]
        fitted, t_gamma = engine.first_stage(W, u, endog, gamma_index)

        D2 = np.column_stack([ones, Xcov, fitted])
        names2 = ("(Intercept)",) + cov_names + tuple(endog_names)
        ell = np.zeros(D2.shape[1])
        base_col = 1 + Xcov.shape[1]
        ell[base_col] = 1.0
        if self.method == "MRI":
            mask = None if self.estimand == "ATE" else codes == levels.index(focal)
            profile = _weighted_mean(Xcov, u, mask) if Xcov.size else np.empty(0)
            ell[base_col + 1 :] = profile
        c = engine.functional(D2, u, ell)
        signs = np.where(codes == 1, 1.0, -1.0)

        self.dataset_ = ds
        self.formula_ = formula
        self.covariate_formula_ = cov_formula
        self.covariate_design_ = cov_design
        self.covariate_matrix_ = Xcov
        self.covariate_names_ = cov_names
        self.levels_ = levels
        self.codes_ = codes
        self.u_ = u
        self.correction_weights_ = None
        self.focal_ = focal
        self.n_positive_ = self._positive_count(ds)
        self.dr_method_ = "WLS" if ds.roles.base_weights is not None else None
        self.instrument_ = iv_name
        self.instrument_values_ = z
        self.first_stage_t_ = t_gamma
        self.first_stage_design_ = W
        self.endog_observed_ = endog
        self.second_stage_matrix_ = D2
        self.second_stage_names_ = names2
        self.effect_selector_ = ell
        self.c_ = c
        self.weights_ = signs * c
        self.groups_ = np.asarray(levels, dtype=object)[codes]
        self.contrast_ = (levels[1], levels[0])
        self.active_level_ = levels[1]
        active = codes == 1
        self.target_profile_ = pd.Series(Xcov[active].T @ self.weights_[active], index=cov_names)
        self.n_params_ = D2.shape[1]
        self.df_residual_ = self.n_positive_ - self.n_params_
        return self

    def _design(self) -> np.ndarray:
        return self.second_stage_matrix_

    def signed_coefficients(self, contrast=None) -> np.ndarray:
        check_is_fitted(self, "weights_")
        if contrast is not None and tuple(contrast) != self.contrast_:
            raise SpecificationError("2SLS weights are specific to the treated-control contrast")
        return self.c_
