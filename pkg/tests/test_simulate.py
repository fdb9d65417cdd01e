"""Synthetic data generation, pmf brute-force checks, recovery reports."""

import numpy as np
import pytest
from scipy.stats import chisquare

from nmekit.data import FeatureStats
from nmekit.errors import GMismatch, SupportExhausted
from nmekit.mixture import EmConfig, MixtureModel
from nmekit.components import ComponentParams, InflationModel, MeanModel
from nmekit.pipeline import FittedModel, ModelSpec, fit_pipeline
from nmekit.pmf import poisson_logpmf
from nmekit.simulate import (
    GroupTruth,
    SimConfig,
    feature_names,
    generate,
    pmf_bruteforce_check,
    recovery_report,
    sample_gp,
)
from conftest import two_group_zip_config


def _two_means(values, iters=30):
    c = np.array([values.min(), values.max()], dtype=float)
    assign = np.zeros(len(values), dtype=int)
    for _ in range(iters):
        assign = np.abs(values[:, None] - c[None, :]).argmin(axis=1)
        for g in (0, 1):
            if np.any(assign == g):
                c[g] = values[assign == g].mean()
    return assign


class TestGenerate:
    def test_deterministic_per_seed(self):
        config = two_group_zip_config(n_drivers=40, weeks=4, seed=3)
        t1, l1 = generate(config)
        t2, l2 = generate(config)
        np.testing.assert_array_equal(t1.counts, t2.counts)
        np.testing.assert_allclose(t1.covariates, t2.covariates, rtol=0)
        assert l1 == l2
        t3, _ = generate(two_group_zip_config(n_drivers=40, weeks=4, seed=4))
        assert not np.array_equal(t1.counts, t3.counts)

    def test_shapes_and_labels(self):
        config = two_group_zip_config(n_drivers=50, weeks=6, seed=1)
        table, labels = generate(config)
        assert table.n_rows == 50 * 6
        ids = np.unique(table.driver_ids.astype(str))
        assert len(ids) == 50
        assert set(labels) == set(ids)
        assert set(labels.values()) <= {0, 1}
        assert np.all(table.exposure > 0)
        assert table.feature_names == tuple(feature_names(3))

    def test_week_range_config(self):
        config = two_group_zip_config(n_drivers=30, weeks=4, seed=2)
        config.weeks = [3, 9]
        table, _ = generate(config)
        counts = {}
        for d in table.driver_ids.astype(str):
            counts[d] = counts.get(d, 0) + 1
        weeks = np.array(list(counts.values()))
        assert weeks.min() >= 3
        assert weeks.max() <= 9
        assert len(set(weeks.tolist())) > 1

    def test_mixing_shares_match_omega(self):
        config = two_group_zip_config(n_drivers=400, weeks=2, seed=1)
        _, labels = generate(config)
        share = np.mean([g == 0 for g in labels.values()])
        assert share == pytest.approx(0.6, abs=0.08)

    def test_full_inflation_gives_all_zeros(self):
        groups = [GroupTruth(family="zip", mean_intercept=1.0,
                             mean_coefficients=[0.0], inflation_intercept=40.0)]
        config = SimConfig(n_drivers=20, weeks=5, omega=[1.0], groups=groups,
                           n_features=1, exposure_log_mean=0.0,
                           exposure_log_sd=0.1, seed=0)
        table, _ = generate(config)
        assert table.target_values("harsh_braking").sum() == 0

    def test_poisson_mean_converges(self):
        groups = [GroupTruth(family="poisson", mean_intercept=float(np.log(2.0)),
                             mean_coefficients=[0.0])]
        config = SimConfig(n_drivers=200, weeks=30, omega=[1.0], groups=groups,
                           n_features=1, exposure_log_mean=0.0,
                           exposure_log_sd=0.0, seed=8)
        table, _ = generate(config)
        y = table.target_values("harsh_braking")
        se = np.sqrt(2.0 / len(y))
        assert y.mean() == pytest.approx(2.0, abs=3 * se)

    def test_separated_groups_are_bimodal(self):
        config = two_group_zip_config(n_drivers=200, weeks=20, seed=5)
        table, labels = generate(config)
        ids, codes = table.driver_index()
        y = table.target_values("harsh_braking").astype(float)
        num = np.zeros(len(ids))
        den = np.zeros(len(ids))
        np.add.at(num, codes, y)
        np.add.at(den, codes, table.exposure)
        assign = _two_means(np.log1p(num / den))
        truth = np.array([labels[d] for d in ids])
        hits = max(np.mean(assign == truth), np.mean(assign == 1 - truth))
        assert hits >= 0.95

    def test_target_column_carries_counts(self):
        config = two_group_zip_config(n_drivers=20, weeks=3, seed=6)
        config.target = "lane_departure"
        table, _ = generate(config)
        assert table.target_values("lane_departure").sum() > 0
        np.testing.assert_array_equal(
            table.nme_total, table.target_values("lane_departure")
        )

    def test_omega_must_sum_to_one(self):
        groups = [GroupTruth(mean_coefficients=[0.0]),
                  GroupTruth(mean_coefficients=[0.0])]
        with pytest.raises(Exception):
            SimConfig(n_drivers=10, weeks=2, omega=[0.6, 0.6], groups=groups,
                      n_features=1, seed=0)


class TestSampleGp:
    def test_theta_zero_matches_poisson_chisquare(self):
        rng = np.random.default_rng(15)
        n = 20_000
        draws = sample_gp(rng, 2.0, 0.0, size=n)
        kmax = 10
        obs = np.bincount(np.minimum(draws, kmax), minlength=kmax + 1)
        p = np.exp(poisson_logpmf(np.arange(kmax + 1), 2.0))
        p[kmax] = 1.0 - p[:kmax].sum()
        stat = chisquare(obs, n * p)
        assert stat.pvalue > 1e-3

    def test_positive_theta_matches_bruteforce_pmf(self):
        rng = np.random.default_rng(16)
        n = 20_000
        m, theta = 2.0, 0.4
        draws = sample_gp(rng, m, theta, size=n)
        check = pmf_bruteforce_check("gp", {"m": m, "theta": theta}, k_max=40)
        pmf = np.asarray(check["pmf"])
        kmax = 20
        obs = np.bincount(np.minimum(draws, kmax), minlength=kmax + 1).astype(float)
        exp = n * np.append(pmf[:kmax], pmf[kmax:].sum())
        keep = exp >= 5
        obs_k = np.append(obs[keep][:-1], obs[~keep].sum() + obs[keep][-1])
        exp_k = np.append(exp[keep][:-1], exp[~keep].sum() + exp[keep][-1])
        stat = chisquare(obs_k, exp_k * obs_k.sum() / exp_k.sum())
        assert stat.pvalue > 1e-3

    def test_sample_mean_tracks_gp_mean(self):
        rng = np.random.default_rng(17)
        m, theta = 1.5, 0.5
        draws = sample_gp(rng, m, theta, size=30_000)
        assert draws.mean() == pytest.approx(m / (1 - theta), rel=0.05)

    def test_truncated_support_raises_when_mass_is_missing(self):
        rng = np.random.default_rng(18)
        with pytest.raises(SupportExhausted):
            sample_gp(rng, 0.1, -0.9, size=10)

    def test_mildly_negative_theta_samples_within_support(self):
        rng = np.random.default_rng(19)
        m, theta = 4.0, -0.2
        draws = sample_gp(rng, m, theta, size=5_000)
        assert np.all(m + theta * draws > 0)


class TestBruteForce:
    def test_zip_mass(self):
        check = pmf_bruteforce_check("zip", {"pi": 0.3, "mu": 2.0}, k_max=60)
        assert check["total_mass"] == pytest.approx(1.0, abs=1e-8)

    def test_zigp_positive_theta_mass(self):
        check = pmf_bruteforce_check(
            "zigp", {"pi": 0.0, "m": 1.0, "theta": 0.5}, k_max=500
        )
        assert check["total_mass"] == pytest.approx(1.0, abs=1e-6)
        assert check["mean"] == pytest.approx(2.0, rel=1e-6)  # m / (1 - theta)

    def test_zigp_negative_theta_mass_deficit(self):
        check = pmf_bruteforce_check(
            "zigp", {"pi": 0.0, "m": 1.0, "theta": -0.25}, k_max=500
        )
        assert check["total_mass"] < 1.0


class TestRecoveryReport:
    def _identity_fitted(self, truth, swap=False):
        comps = []
        for g in truth.groups:
            comps.append(ComponentParams(
                family="zip",
                mean=MeanModel(intercept=g.mean_intercept,
                               coefficients=np.asarray(g.mean_coefficients, float)),
                inflation=InflationModel(intercept=g.inflation_intercept),
            ))
        omega = np.asarray(truth.omega, dtype=float)
        order = [1, 0] if swap else [0, 1]
        model = MixtureModel(
            config=EmConfig(n_groups=2, family="zip"),
            omega=omega[order],
            components=[comps[i] for i in order],
            loglik=-1.0, n_params=9, converged=True, n_iter=1, trace=[-1.0],
            driver_ids=("d0", "d1", "d2"),
            responsibilities=np.eye(2)[[order.index(g) for g in (0, 0, 1)]],
            diagnostics={},
        )
        stats = FeatureStats(
            names=feature_names(truth.n_features),
            mean=np.zeros(truth.n_features),
            std=np.ones(truth.n_features),
        )
        spec = ModelSpec(family="gzip", target="harsh_braking", n_groups=2)
        return FittedModel(spec=spec, stats=stats, model=model)

    def _truth(self):
        return two_group_zip_config(n_drivers=3, weeks=2, seed=0)

    def test_exact_match_is_zero_error(self):
        truth = self._truth()
        fitted = self._identity_fitted(truth)
        report = recovery_report(
            truth, fitted, true_labels={"d0": 0, "d1": 0, "d2": 1}
        )
        assert report["omega_error"] == pytest.approx(0.0, abs=1e-12)
        assert report["mean_intercept_error"] == pytest.approx(0.0, abs=1e-12)
        assert report["coefficient_error"] == pytest.approx(0.0, abs=1e-12)
        assert report["agreement"] == 1.0
        assert report["permutation"] == [0, 1]

    def test_label_swap_is_matched_away(self):
        truth = self._truth()
        fitted = self._identity_fitted(truth, swap=True)
        report = recovery_report(
            truth, fitted, true_labels={"d0": 0, "d1": 0, "d2": 1}
        )
        assert report["omega_error"] == pytest.approx(0.0, abs=1e-12)
        assert report["coefficient_error"] == pytest.approx(0.0, abs=1e-12)
        assert report["agreement"] == 1.0
        assert report["permutation"] == [1, 0]

    def test_group_count_mismatch_raises(self, single_zip_data):
        truth = self._truth()
        _, table, _ = single_zip_data
        flat = fit_pipeline(table, ModelSpec(family="zip", target="harsh_braking"))
        with pytest.raises(GMismatch):
            recovery_report(truth, flat)

    def test_single_group_fit_recovers_destandardized_truth(self):
        groups = [GroupTruth(family="zip", mean_intercept=float(np.log(2.0)),
                             mean_coefficients=[0.5, -0.4],
                             inflation_intercept=float(np.log(0.4 / 0.6)))]
        config = SimConfig(
            n_drivers=250, weeks=10, omega=[1.0], groups=groups, n_features=2,
            exposure_log_mean=0.0, exposure_log_sd=0.2, seed=23,
        )
        table, _ = generate(config)
        fitted = fit_pipeline(table, ModelSpec(family="zip", target="harsh_braking"))
        report = recovery_report(config, fitted)
        assert report["mean_intercept_error"] < 0.1
        assert report["coefficient_error"] < 0.1
        assert report["inflation_intercept_error"] < 0.25
