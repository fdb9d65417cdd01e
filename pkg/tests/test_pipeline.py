"""Model specs, the fit pipeline, persistence, and the null model."""

import json

import numpy as np
import pytest

from nmekit.errors import ConfigError, FeatureMismatch
from nmekit.mixture import mixture_loglik
from nmekit.pipeline import (
    FittedModel,
    ModelSpec,
    em_config,
    fit_null_poisson,
    fit_pipeline,
    load_model,
    null_loglik_on,
    save_model,
    strip_features,
)


class TestModelSpec:
    def test_defaults(self):
        spec = ModelSpec(family="zip", target="harsh_braking")
        assert spec.n_groups == 1
        assert spec.theta == "free"
        assert spec.max_features == 10

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"family": "negbin"},
            {"family": "poisson", "n_groups": 2},
            {"family": "zip", "n_groups": 0},
            {"family": "gzip", "n_groups": 2, "inflation": "nope"},
            {"family": "gzip", "n_groups": 2, "max_features": 0},
            {"family": "gzigp", "n_groups": 2, "theta": 1.0},
            {"family": "gzigp", "n_groups": 2, "theta": "wide"},
        ],
    )
    def test_invalid_specs_rejected(self, kwargs):
        kwargs.setdefault("target", "harsh_braking")
        with pytest.raises(ConfigError):
            ModelSpec(**kwargs)

    def test_em_config_mapping(self):
        g = em_config(ModelSpec(family="gzip", target="nme_total", n_groups=3))
        assert g.family == "zip"
        assert g.n_groups == 3
        z = em_config(
            ModelSpec(family="gzigp", target="nme_total", n_groups=2, theta=0.25)
        )
        assert z.family == "zigp"
        assert z.dispersion == 0.25

    def test_round_trip(self):
        spec = ModelSpec(family="gzigp", target="nme_total", n_groups=2, theta=0.1)
        back = ModelSpec.from_dict(json.loads(json.dumps(spec.to_dict())))
        assert back == spec


class TestFitPipeline:
    def test_component_kind_for_flat_families(self, single_zip_data):
        _, table, _ = single_zip_data
        fitted = fit_pipeline(table, ModelSpec(family="zip", target="harsh_braking"))
        assert fitted.kind == "component"
        assert fitted.converged
        assert fitted.loglik < 0

    def test_mixture_kind_for_grouped_families(self, two_group_data):
        _, table, _ = two_group_data
        fitted = fit_pipeline(
            table,
            ModelSpec(family="gzip", target="harsh_braking", n_groups=2, n_restarts=1),
        )
        assert fitted.kind == "mixture"
        assert len(fitted.model.omega) == 2

    def test_feature_cap_is_applied(self, table_factory):
        rng = np.random.default_rng(14)
        n = 400
        X = rng.standard_normal((n, 14))
        y = rng.poisson(np.exp(0.3 * X[:, 0]), n)
        table = table_factory(y=y, X=X)
        fitted = fit_pipeline(
            table, ModelSpec(family="poisson", target="harsh_braking", max_features=5)
        )
        assert len(fitted.stats.names) == 5
        assert fitted.predict_mean(table).shape == (n,)

    def test_loglik_on_training_table_matches_stored(self, single_zip_data):
        _, table, _ = single_zip_data
        fitted = fit_pipeline(table, ModelSpec(family="zip", target="harsh_braking"))
        assert fitted.loglik_on(table) == pytest.approx(fitted.loglik, abs=1e-8)

    def test_mixture_loglik_on_matches_stored(self, two_group_data):
        _, table, _ = two_group_data
        fitted = fit_pipeline(
            table,
            ModelSpec(family="gzip", target="harsh_braking", n_groups=2, n_restarts=1),
        )
        assert fitted.loglik_on(table) == pytest.approx(fitted.loglik, abs=1e-8)
        std_table = fitted._standardized(table)
        assert mixture_loglik(fitted.model, std_table, "harsh_braking") == pytest.approx(
            fitted.loglik, abs=1e-8
        )

    def test_row_logpmf_shape_and_finiteness(self, single_zip_data):
        _, table, _ = single_zip_data
        fitted = fit_pipeline(table, ModelSpec(family="zip", target="harsh_braking"))
        lp = fitted.row_logpmf(table)
        assert lp.shape == (table.n_rows,)
        assert np.all(np.isfinite(lp))
        assert np.all(lp <= 0)

    def test_prediction_requires_matching_features(self, single_zip_data, table_factory):
        _, table, _ = single_zip_data
        fitted = fit_pipeline(table, ModelSpec(family="zip", target="harsh_braking"))
        other = table_factory(
            y=[0, 1], X=[[0.0], [1.0]], feature_names=("unrelated",)
        )
        with pytest.raises(FeatureMismatch):
            fitted.predict_mean(other)

    def test_zero_prob_in_unit_interval(self, single_zip_data):
        _, table, _ = single_zip_data
        fitted = fit_pipeline(table, ModelSpec(family="zip", target="harsh_braking"))
        p0 = fitted.zero_prob(table)
        assert np.all(p0 > 0.0)
        assert np.all(p0 < 1.0)


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path, single_zip_data):
        _, table, _ = single_zip_data
        fitted = fit_pipeline(table, ModelSpec(family="zip", target="harsh_braking"))
        path = tmp_path / "model.json"
        save_model(fitted, path, manifest={"note": "test"})
        raw = json.loads(path.read_text())
        assert set(raw) == {"manifest", "result"}
        assert raw["manifest"]["note"] == "test"

        back = load_model(path)
        assert back.loglik == fitted.loglik
        assert back.n_params == fitted.n_params
        np.testing.assert_allclose(
            back.predict_mean(table), fitted.predict_mean(table), rtol=1e-14
        )
        assert back.loglik_on(table) == pytest.approx(fitted.loglik, abs=1e-8)

    def test_mixture_round_trip_keeps_responsibilities(self, tmp_path, two_group_data):
        _, table, _ = two_group_data
        fitted = fit_pipeline(
            table,
            ModelSpec(family="gzip", target="harsh_braking", n_groups=2, n_restarts=1),
        )
        path = tmp_path / "mix.json"
        save_model(fitted, path)
        back = load_model(path)
        np.testing.assert_allclose(back.model.omega, fitted.model.omega, rtol=1e-15)
        np.testing.assert_allclose(
            back.model.responsibilities, fitted.model.responsibilities, rtol=1e-15
        )
        np.testing.assert_allclose(
            back.predict_mean(table), fitted.predict_mean(table), rtol=1e-12
        )

    def test_dict_round_trip(self, single_zip_data):
        _, table, _ = single_zip_data
        fitted = fit_pipeline(table, ModelSpec(family="zip", target="harsh_braking"))
        back = FittedModel.from_dict(json.loads(json.dumps(fitted.to_dict())))
        assert back.spec == fitted.spec
        assert back.loglik == fitted.loglik


class TestNullModel:
    def test_null_is_intercept_only(self, single_zip_data):
        _, table, _ = single_zip_data
        null = fit_null_poisson(table, "harsh_braking")
        assert null.family == "poisson"
        assert null.mean.coefficients.size == 0
        assert null.n_params == 1

    def test_null_loglik_transfers(self, single_zip_data):
        _, table, _ = single_zip_data
        null = fit_null_poisson(table, "harsh_braking")
        ll = null_loglik_on(null, table, "harsh_braking")
        assert ll == pytest.approx(null.loglik, abs=1e-8)
        assert ll < 0

    def test_strip_features_empties_covariates(self, single_zip_data):
        _, table, _ = single_zip_data
        bare = strip_features(table)
        assert bare.n_features == 0
        assert bare.feature_names == ()
        assert bare.n_rows == table.n_rows
