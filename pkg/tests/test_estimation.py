import numpy as np
import pandas as pd
import pytest
from scipy import stats

import impliedweights as iw
from impliedweights import engine, oracle
from impliedweights.estimation import hat_values
from impliedweights.exceptions import EstimationError

def make_ds(frame, **roles):
    return iw.from_dataframe(frame, **roles)


class TestOutcomeFit:
    def test_normal_equations_hold(self, synth_ds):
        fit = iw.RegressionWeights("~ treat + age + race + re75", method="MRI").fit(synth_ds)
        of = iw.fit_outcome_model(fit, "re78")
        score = of.design.T @ (of.u * of.residuals)
        assert np.abs(score).max() < 1e-6 * max(1.0, np.abs(of.y).max())

    def test_hat_values_sum_to_parameter_count(self, synth_ds):
        fit = iw.RegressionWeights("~ treat + age + education + race").fit(synth_ds)
        of = iw.fit_outcome_model(fit, "re78")
        assert of.hat.sum() == pytest.approx(fit.n_params_)

    def test_zero_residual_outcome_gives_zero_ses(self, synth_ds, synth):
        # outcome exactly linear in the design
        frame = synth.copy()
        frame["ylin"] = 1.0 + 2.0 * frame["age"] + 3.0 * (frame["treat"] == 1)
        ds = make_ds(frame, treatment="treat")
        fit = iw.RegressionWeights("~ treat + age").fit(ds)
        of = iw.fit_outcome_model(fit, "ylin")
        assert np.abs(of.residuals).max() < 1e-8
        assert np.abs(of.vcov).max() < 1e-12
        report = iw.effect_summary(of)
        assert report.contrasts[0].se == pytest.approx(0.0, abs=1e-10)
        assert report.contrasts[0].estimate == pytest.approx(3.0)

    def test_non_numeric_outcome_rejected(self, synth_ds):
        fit = iw.RegressionWeights("~ treat + age").fit(synth_ds)
        with pytest.raises(EstimationError, match="numeric"):
            iw.fit_outcome_model(fit, "race")

    def test_outcome_in_formula_rejected(self, synth_ds):
        fit = iw.RegressionWeights("~ treat + re78").fit(synth_ds)
        with pytest.raises(EstimationError, match="appears in the model"):
            iw.fit_outcome_model(fit, "re78")

    def test_cluster_must_be_categorical_with_two_levels(self, synth, synth_ds):
        fit = iw.RegressionWeights("~ treat + age").fit(synth_ds)
        with pytest.raises(EstimationError, match="categorical"):
            iw.fit_outcome_model(fit, "re78", cluster="age")
        one = synth.assign(cl="a")
        ds = make_ds(one, treatment="treat", outcome="re78")
        fit2 = iw.RegressionWeights("~ treat + age").fit(ds)
        with pytest.raises(Exception, match="single level|categorical"):
            iw.fit_outcome_model(fit2, "re78", cluster="cl")


class TestRobustVcov:
    def test_hc0_with_flat_residuals_is_scaled_bread(self):
        rng = np.random.default_rng(0)
        D = np.column_stack([np.ones(50), rng.normal(size=50)])
        u = np.ones(50)
        resid = np.full(50, 3.0)
        hat = np.zeros(50)
        vcov = iw.robust_vcov(D, u, resid, hat, "HC0")
        _, r = engine.weighted_qr(D, u)
        rinv = np.linalg.inv(r)
        bread = rinv @ rinv.T
        expected = bread @ (9.0 * D.T @ D) @ bread
        assert np.allclose(vcov, expected)

    def test_hc3_close_to_classical_under_homoskedasticity(self):
        rng = np.random.default_rng(1)
        n = 10_000
        D = np.column_stack([np.ones(n), rng.normal(size=n)])
        y = D @ np.array([1.0, 2.0]) + rng.normal(size=n)
        u = np.ones(n)
        beta = engine.fit_coefficients(D, u, y)
        resid = y - D @ beta
        hat = hat_values(D, u)
        hc3 = iw.robust_vcov(D, u, resid, hat, "HC3", n_pos=n)
        const = iw.robust_vcov(D, u, resid, hat, "const", n_pos=n)
        se_hc3 = np.sqrt(np.diag(hc3))
        se_const = np.sqrt(np.diag(const))
        assert np.all(np.abs(se_hc3 / se_const - 1.0) < 0.05)

    def test_leverage_one_rejected_for_hc3(self):
        D = np.column_stack([np.ones(3), np.array([0.0, 0.0, 1.0])])
        u = np.ones(3)
        resid = np.array([1.0, -1.0, 0.0])
        hat = hat_values(D, u)  # third unit has leverage 1
        with pytest.raises(EstimationError, match="leverage"):
            iw.robust_vcov(D, u, resid, hat, "HC3")

    def test_fewer_than_two_clusters_rejected(self):
        rng = np.random.default_rng(2)
        D = np.column_stack([np.ones(10), rng.normal(size=10)])
        u = np.ones(10)
        with pytest.raises(EstimationError, match="clusters"):
            iw.robust_vcov(D, u, rng.normal(size=10), np.zeros(10), "HC1", clusters=np.zeros(10))

    def test_covariance_psd(self):
        rng = np.random.default_rng(3)
        for kind in ("HC0", "HC1", "HC2", "HC3", "const"):
            D = np.column_stack([np.ones(40), rng.normal(size=(40, 2))])
            u = rng.uniform(0.5, 2.0, 40)
            resid = rng.normal(size=40)
            hat = hat_values(D, u)
            vcov = iw.robust_vcov(D, u, resid, hat, kind, n_pos=40)
            eigens = np.linalg.eigvalsh((vcov + vcov.T) / 2)
            assert eigens.min() > -1e-10
            assert np.abs(vcov - vcov.T).max() < 1e-12

    def test_cluster_factor_matches_formula(self):
        rng = np.random.default_rng(4)
        n, k = 60, 2
        D = np.column_stack([np.ones(n), rng.normal(size=(n, k - 1))])
        u = np.ones(n)
        resid = rng.normal(size=n)
        clusters = np.repeat(np.arange(12), 5)
        v1 = iw.robust_vcov(D, u, resid, np.zeros(n), "HC1", clusters=clusters, n_pos=n)
        v0 = iw.robust_vcov(D, u, resid, np.zeros(n), "HC0", clusters=clusters, n_pos=n)
        g = 12
        factor = (g / (g - 1)) * ((n - 1) / (n - k))
        assert np.allclose(v1, factor * v0)


class TestEffectSummary:
    def test_weighting_identity_every_method(self, synth, synth_ds):
        rng = np.random.default_rng(5)
        z = ((synth["treat"] == 1) | (rng.random(len(synth)) < 0.2)).astype(int)
        keep = (rng.random(len(synth)) < 0.7) | (synth["treat"] == 1)
        frame = synth.assign(Z=z, bw=keep.astype(float), rw=rng.uniform(0.2, 2.0, len(synth)))
        ds = make_ds(frame, treatment="treat", outcome="re78")
        ds_b = make_ds(frame, treatment="treat", outcome="re78", base_weights="bw")
        ds_r = make_ds(frame, treatment="treat", outcome="re78", base_weights="rw")
        cases = [
            iw.RegressionWeights("~ treat + age + race + re75").fit(ds),
            iw.RegressionWeights("~ treat + age + race + re75", method="MRI", estimand="ATE").fit(ds),
            iw.RegressionWeights("~ treat + age + race + re75", method="MRI", estimand="ATT").fit(ds_b),
            iw.RegressionWeights(
                "~ treat + age + race + re75", method="MRI", estimand="ATT", dr_method="AIPW"
            ).fit(ds_r),
            iw.IVWeights("~ treat + age + race + re75", iv="Z").fit(ds),
        ]
        y = frame["re78"].to_numpy()
        for fit in cases:
            of = iw.fit_outcome_model(fit, "re78")
            report = iw.effect_summary(of)
            weighted = float(fit.signed_coefficients() @ y)
            primary = report.contrasts[0].estimate
            assert abs(weighted - primary) <= 1e-8 * max(1.0, abs(primary))

    def test_mri_contrast_equals_po_difference_exactly(self, synth_ds):
        fit = iw.RegressionWeights(
            "~ treat + age + education + race + re75", method="MRI", estimand="ATT"
        ).fit(synth_ds)
        report = iw.effect_summary(iw.fit_outcome_model(fit, "re78"))
        po = {row.label: row.estimate for row in report.po_means}
        assert report.contrasts[0].estimate == po["E[Y1|A=1]"] - po["E[Y0|A=1]"]

    def test_uri_reports_no_po_means(self, synth_ds):
        fit = iw.RegressionWeights("~ treat + age").fit(synth_ds)
        report = iw.effect_summary(iw.fit_outcome_model(fit, "re78"))
        assert report.po_means == ()
        assert len(report.contrasts) == 1

    def test_multivalued_contrast_arithmetic(self, synth):
        rng = np.random.default_rng(6)
        labels = np.where(synth["treat"] == 1, "1", np.where(rng.random(len(synth)) < 0.5, "2", "3"))
        ds = make_ds(synth.assign(tm=labels), treatment="tm", outcome="re78")
        fit = iw.RegressionWeights(
            "~ tm + age + education + race + re75", method="MRI", estimand="ATT", focal="1"
        ).fit(ds)
        report = iw.effect_summary(iw.fit_outcome_model(fit, "re78"))
        labels_out = [r.label for r in report.contrasts]
        assert labels_out == ["E[Y1-Y2|A=1]", "E[Y1-Y3|A=1]", "E[Y2-Y3|A=1]"]
        e12, e13, e23 = (r.estimate for r in report.contrasts)
        assert abs(e23 - (e13 - e12)) < 1e-10
        assert report.df_residual == ds.n_rows - fit.n_params_
        # weighting identity holds per contrast
        y = synth["re78"].to_numpy()
        for (a, b), row in zip([("1", "2"), ("1", "3"), ("2", "3")], report.contrasts):
            weighted = float(fit.signed_coefficients((a, b)) @ y)
            assert abs(weighted - row.estimate) <= 1e-8 * max(1.0, abs(row.estimate))

    def test_ci_and_p_recomputable_from_estimate_se_df(self, synth_ds):
        fit = iw.RegressionWeights("~ treat + age + race").fit(synth_ds)
        report = iw.effect_summary(iw.fit_outcome_model(fit, "re78"))
        row = report.contrasts[0]
        q = stats.t.ppf(0.975, report.df_residual)
        assert row.ci_low == pytest.approx(row.estimate - q * row.se)
        assert row.ci_high == pytest.approx(row.estimate + q * row.se)
        assert row.p == pytest.approx(2 * stats.t.sf(abs(row.estimate / row.se), report.df_residual))

    def test_aipw_se_machinery_matches_coefficient_route_for_wls(self, synth):
        # the functional-variance route must reproduce ell' V ell exactly for
        # pure coefficient combinations
        from impliedweights.estimation import _functional_variance

        ds = make_ds(synth, treatment="treat", outcome="re78")
        fit = iw.RegressionWeights("~ treat + age + race", method="MRI", estimand="ATT").fit(ds)
        of = iw.fit_outcome_model(fit, "re78")
        sd = fit.stacked_
        target = dict(fit.target_profile_)
        ell = engine.group_selector(sd, "1", target) - engine.group_selector(sd, "0", target)
        c = fit.signed_coefficients()
        direct = float(ell @ of.vcov @ ell)
        functional = _functional_variance(of, c)
        assert functional == pytest.approx(direct, rel=1e-10)


class TestInfluence:
    def test_zero_residual_unit_has_zero_sic(self, synth, synth_ds):
        fit = iw.RegressionWeights("~ treat + age").fit(synth_ds)
        of = iw.fit_outcome_model(fit, "re78")
        infl = iw.influence_measures(of)
        nearly_zero = np.abs(of.residuals) < 1e-12
        assert np.all(np.abs(infl.sic[nearly_zero]) < 1e-9)

    def test_sic_matches_loo_refit_oracle_8_rows(self):
        frame = pd.DataFrame(
            {
                "treat": [1, 1, 1, 0, 0, 0, 0, 1],
                "x": [0.3, 1.2, -0.7, 0.1, 2.0, -1.1, 0.6, 0.9],
                "y": [5.0, 3.0, 4.0, 1.0, 7.0, 2.0, 4.5, 6.0],
            }
        )
        ds = make_ds(frame, treatment="treat", outcome="y")
        fit = iw.RegressionWeights("~ treat + x").fit(ds)
        of = iw.fit_outcome_model(fit, "y")
        infl = iw.influence_measures(of)
        y = frame["y"].to_numpy()
        full = float(fit.effect_selector_ @ engine.fit_coefficients(fit._design(), fit.u_, y))
        n = len(y)
        for i in range(n):
            loo = oracle.loo_refit(fit._design(), y, fit.effect_selector_, i)
            expected = (n - 1) * (full - loo)
            assert infl.sic[i] == pytest.approx(expected, rel=1e-9, abs=1e-9)

    def test_sic_matches_loo_refit_weighted_mri(self):
        rng = np.random.default_rng(7)
        n = 40
        frame = pd.DataFrame(
            {
                "treat": rng.integers(0, 2, n),
                "x": rng.normal(size=n),
                "bw": rng.uniform(0.5, 2.0, n),
                "y": rng.normal(size=n),
            }
        )
        frame.loc[:3, "treat"] = [0, 1, 0, 1]
        ds = make_ds(frame, treatment="treat", outcome="y", base_weights="bw")
        fit = iw.RegressionWeights("~ treat + x", method="MRI", estimand="ATT").fit(ds)
        of = iw.fit_outcome_model(fit, "y")
        infl = iw.influence_measures(of)
        sd = fit.stacked_
        target = dict(fit.target_profile_)
        ell = engine.group_selector(sd, "1", target) - engine.group_selector(sd, "0", target)
        y = frame["y"].to_numpy()
        full = float(ell @ engine.fit_coefficients(sd.matrix, fit.u_, y))
        for i in range(n):
            loo = oracle.loo_refit(sd.matrix, y, ell, i, base_weights=fit.u_)
            expected = (fit.n_positive_ - 1) * (full - loo)
            assert infl.sic[i] == pytest.approx(expected, rel=1e-9, abs=1e-9)

    def test_top_3_matches_brute_force_on_random_data(self):
        rng = np.random.default_rng(8)
        n = 50
        frame = pd.DataFrame(
            {"treat": rng.integers(0, 2, n), "x": rng.normal(size=n), "y": rng.normal(size=n)}
        )
        frame.loc[:1, "treat"] = [0, 1]
        ds = make_ds(frame, treatment="treat", outcome="y")
        fit = iw.RegressionWeights("~ treat + x").fit(ds)
        of = iw.fit_outcome_model(fit, "y")
        infl = iw.influence_measures(of)
        y = frame["y"].to_numpy()
        full = float(fit.effect_selector_ @ engine.fit_coefficients(fit._design(), fit.u_, y))
        brute = np.array(
            [
                (n - 1) * (full - oracle.loo_refit(fit._design(), y, fit.effect_selector_, i))
                for i in range(n)
            ]
        )
        assert set(infl.top(3).tolist()) == set(np.argsort(-np.abs(brute))[:3].tolist())

    def test_zero_base_weight_unit_has_zero_sic(self, synth):
        rng = np.random.default_rng(9)
        keep = (rng.random(len(synth)) < 0.7) | (synth["treat"] == 1)
        ds = make_ds(
            synth.assign(bw=keep.astype(float)),
            treatment="treat",
            outcome="re78",
            base_weights="bw",
        )
        fit = iw.RegressionWeights("~ treat + age", method="MRI", estimand="ATT").fit(ds)
        infl = iw.influence_measures(iw.fit_outcome_model(fit, "re78"))
        assert np.all(infl.sic[~keep] == 0.0)

    def test_dropping_only_treated_unit_collapses_rank(self):
        frame = pd.DataFrame(
            {"treat": [1, 0, 0, 0], "x": [1.0, 2.0, 3.0, 4.0], "y": [1.0, 2.0, 3.0, 4.0]}
        )
        ds = make_ds(frame, treatment="treat", outcome="y")
        fit = iw.RegressionWeights("~ treat + x").fit(ds)
        with pytest.raises(Exception, match="rank collapse"):
            oracle.loo_refit(fit._design(), frame["y"].to_numpy(), fit.effect_selector_, 0)
