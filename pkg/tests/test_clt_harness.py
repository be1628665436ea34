"""Tests for core.clt_harness module."""

import math
import os

import numpy as np
import pytest

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.clt_harness import (
    DiagnosticResult,
    DiagnosticsReport,
    ErrorRow,
    ErrorTable,
    berry_esseen_curve,
    check_eigenvalue_bounds,
    check_eta_tau_eta_decay,
    check_interpolation_rate,
    check_laplacian_rate,
    check_mc_vs_master,
    check_operator_identities,
    check_prefactor_arbitration,
    check_square_exchange_rate,
    check_stationarity,
    diagnostics_suite,
    error_curve,
    exact_enumeration_expectation,
    exact_expectation_second_moment,
    exact_initial_expectation,
    fit_rate,
    gaussian_expectation,
    monte_carlo_expectation,
    particle_replica_values,
    truncation_tail,
)
from core.config_manager import parse_config
from core.errors import NoiseGateError, PreconditionError, StateSpaceTooLargeError
from core.observables import Observable, ScalarFunction, observable_from_config
from core.ou_gaussian import BandLimitedProfile, GaussianLaw
from core.seeding import replica_rng
from core.torus_spectral import mode_basis, spectral_from_triples

HEADLINE = {"d": 1, "n_list": [4, 8, 16, 32], "t": 0.1, "rho0": [[0, 0.5, 0.0], [1, 0.3, 0.0]]}
CONSTANT_ONE = [[0, 1.0, 0.0]]


def config(**changes):
    return parse_config({**HEADLINE, **changes})


def table_from(errors, stderrs=None, ns=(4, 8, 16, 32)):
    stderrs = stderrs or [0.0] * len(errors)
    return ErrorTable([ErrorRow(n, 0.1, "x", "monte_carlo", e, s, 0.0, e) for n, e, s in zip(ns, errors, stderrs)])


class TestRateFit:
    @pytest.mark.parametrize("exponent", [-0.5, -1.0, 0.0])
    def test_synthetic_engine_slope(self, exponent):
        table = error_curve(config(engine="synthetic", synthetic_exponent=exponent))
        assert np.allclose(table.errors, np.array([4, 8, 16, 32], dtype=float) ** exponent, rtol=1e-12)
        fit = fit_rate(table)
        assert fit.slope == pytest.approx(exponent, abs=1e-10)
        if exponent != 0.0:
            assert fit.r_squared == pytest.approx(1.0)
        assert fit.n_points == 4

    def test_confidence_interval_brackets_slope(self):
        fit = fit_rate(table_from([1.0, 0.6, 0.24, 0.13]))
        assert fit.ci_low < fit.slope < fit.ci_high
        assert fit.slope_stderr > 0

    def test_needs_three_rows(self):
        with pytest.raises(PreconditionError):
            fit_rate(table_from([1.0, 0.5], ns=(4, 8)))

    def test_needs_positive_errors(self):
        with pytest.raises(PreconditionError):
            fit_rate(table_from([1.0, 0.0, 0.25, 0.1]))

    def test_noise_gate_raises_with_rows(self):
        table = table_from([0.5, 0.25, 0.01, 0.005], [0.001, 0.001, 0.01, 0.01])
        with pytest.raises(NoiseGateError) as info:
            fit_rate(table)
        assert [row["n"] for row in info.value.rows] == [16, 32]
        assert "insufficient replicas" in str(info.value)

    def test_noise_gate_drops_rows(self):
        table = table_from([0.5, 0.25, 0.125, 0.005, 0.003], [0.001, 0.001, 0.001, 0.01, 0.0], ns=(4, 8, 16, 32, 64))
        fit = fit_rate(table, drop_noisy=True)
        assert fit.excluded == (32,)
        assert fit.n_points == 4

    def test_noise_gate_too_few_survivors(self):
        table = table_from([0.5, 0.25, 0.01, 0.005], [0.001, 0.001, 0.01, 0.01])
        with pytest.raises(NoiseGateError):
            fit_rate(table, drop_noisy=True)

    def test_fit_dict(self):
        out = fit_rate(table_from([1.0, 0.5, 0.25, 0.125])).to_dict()
        assert out["slope"] == pytest.approx(-1.0)
        assert out["excluded"] == []


class TestParticleSide:
    def test_second_moment_at_constant_density(self):
        c = 0.3
        cfg = config(rho0=[[0, c, 0.0]], observable="pairing_square", observable_params={"phi": CONSTANT_ONE})
        assert exact_expectation_second_moment(cfg, 3) == pytest.approx(c * (1 - c))

    def test_second_moment_needs_degree_two(self):
        with pytest.raises(PreconditionError):
            exact_expectation_second_moment(config(observable="pairing_cube"), 2)

    @pytest.mark.parametrize("observable", ["quadratic_form", "pairing_square", "pairing_product"])
    def test_two_point_agrees_with_enumeration(self, observable):
        cfg = config(observable=observable)
        for n in (1, 2):
            assert exact_expectation_second_moment(cfg, n) == pytest.approx(
                exact_enumeration_expectation(cfg, n), abs=1e-8)

    def test_enumeration_cap(self):
        with pytest.raises(StateSpaceTooLargeError):
            exact_enumeration_expectation(config(), 16)

    def test_monte_carlo_needs_two_replicas(self):
        with pytest.raises(PreconditionError):
            monte_carlo_expectation(config(replicas=1), 2)

    def test_replica_values_independent_of_workers(self):
        cfg = config(replicas=12)
        one = particle_replica_values(cfg, 2, threads=1)
        two = particle_replica_values(cfg, 2, threads=2)
        assert np.array_equal(one, two)

    @pytest.mark.slow
    def test_monte_carlo_matches_exact(self):
        cfg = config(replicas=4000)
        mean, stderr = monte_carlo_expectation(cfg, 2, threads=1)
        assert abs(mean - exact_expectation_second_moment(cfg, 2)) <= 5 * stderr


class TestGaussianSide:
    def test_monte_carlo_fallback(self):
        phi = spectral_from_triples(1, [[1, math.sqrt(2), 0.0]])
        f = ScalarFunction("cos_sum", 2, lambda x, y: np.cos(x + y), (2.0, 4.0, 8.0))
        obs = Observable("cos_sum", "smooth", (phi, phi), f)
        var = 0.3
        cov = np.zeros((3, 3))
        cov[1, 1] = var
        value, stderr = gaussian_expectation(obs, GaussianLaw(1, 1, np.zeros(3), cov), lambda: replica_rng(5, 1), 200_000)
        assert stderr > 0
        assert abs(value - math.exp(-2 * var)) <= 5 * stderr

    def test_closed_form_has_no_stderr(self):
        obs = observable_from_config("pairing_square", {}, 1)
        law = GaussianLaw(1, 1, np.zeros(3), np.eye(3))
        assert gaussian_expectation(obs, law, lambda: replica_rng(0, 1), 10) == (pytest.approx(1.0), 0.0)

    def test_truncation_tail(self):
        form_obs = observable_from_config("quadratic_form", {}, 1)
        assert truncation_tail(form_obs, 1) == 0.0
        assert truncation_tail(form_obs, 0) == pytest.approx(1.0)
        assert truncation_tail(observable_from_config("linear", {}, 1), 0) == pytest.approx(1.0)

    def test_equilibrium_errors_vanish(self):
        cfg = config(rho0=[[0, 0.3, 0.0]], n_list=[2, 4])
        table = error_curve(cfg)
        assert np.max(table.errors) <= 1e-8

    def test_error_table_frame(self):
        table = error_curve(config(engine="synthetic"))
        frame = table.to_frame()
        assert list(frame.columns) == ["n", "t", "observable", "engine", "particle_value",
                                       "particle_stderr", "gaussian_value", "abs_error"]
        assert len(frame) == 4


class TestBerryEsseen:
    def test_square_of_constant_pairing(self):
        obs = observable_from_config("pairing_square", {"phi": CONSTANT_ONE}, 1)
        assert exact_initial_expectation(obs, BandLimitedProfile.constant(0.5, 1), 1) == pytest.approx(0.25)

    def test_identity_has_mean_zero(self):
        obs = observable_from_config("linear", {"phi": CONSTANT_ONE}, 1)
        assert exact_initial_expectation(obs, BandLimitedProfile.constant(0.5, 1), 1) == pytest.approx(0.0, abs=1e-15)

    def test_site_cap(self):
        obs = observable_from_config("linear", {}, 1)
        with pytest.raises(StateSpaceTooLargeError):
            exact_initial_expectation(obs, BandLimitedProfile.constant(0.5, 1), 11)

    def test_quadratic_form_rejected(self):
        with pytest.raises(PreconditionError):
            berry_esseen_curve(config(n_list=[1, 2, 3]))

    def test_fit_skipped_when_errors_vanish(self):
        cfg = config(rho0=[[0, 0.5, 0.0]], n_list=[1, 2, 3], observable="pairing_square",
                     observable_params={"phi": CONSTANT_ONE})
        table, fit = berry_esseen_curve(cfg)
        assert fit is None
        assert np.all(table.errors <= 1e-13)

    @pytest.mark.slow
    def test_cube_third_moment(self):
        cfg = config(n_list=[4, 6, 8, 10], observable="pairing_cube")
        table, fit = berry_esseen_curve(cfg)
        for row in table.rows:
            N = 2 * row.n + 1
            x = 2 * np.pi * np.arange(N) / N
            rho = 0.5 + 0.3 * np.cos(x)
            phi = math.sqrt(2) * np.cos(x)
            third = np.mean(phi ** 3 * rho * (1 - rho) * (1 - 2 * rho)) / math.sqrt(N)
            assert row.abs_error == pytest.approx(abs(third), rel=1e-9)
        assert -0.5 <= fit.slope <= -0.4

    @pytest.mark.slow
    def test_cosine_at_half_density(self):
        cfg = config(rho0=[[0, 0.5, 0.0]], n_list=list(range(2, 11)), observable="pairing_cos")
        table, fit = berry_esseen_curve(cfg)
        assert np.all(table.errors > 0)
        assert fit.slope <= -0.45


class TestHeadline:
    @pytest.mark.slow
    def test_exact_engine_exponent(self):
        cfg = config()
        table = error_curve(cfg)
        errors = table.errors
        assert np.all(errors > 0)
        assert np.all(np.diff(errors) < 0)
        assert fit_rate(table).slope <= cfg.gate


class TestDiagnostics:
    def test_operator_identities(self):
        assert check_operator_identities(1, replica_rng(0, 2), n_max=6).status == "pass"
        assert check_operator_identities(2, replica_rng(0, 2), n_max=3).status == "pass"

    def test_eigenvalue_bounds(self):
        assert check_eigenvalue_bounds(2, n_max=8).passed

    def test_stationarity_depends_on_prefactor(self):
        assert check_stationarity(config()).status == "pass"
        assert check_stationarity(config(noise_prefactor="literal")).status == "fail"

    def test_prefactor_arbitration(self):
        assert check_prefactor_arbitration(config()).passed

    def test_eta_tau_eta_skipped_at_constant(self):
        assert check_eta_tau_eta_decay(config(rho0=[[0, 0.4, 0.0]])).status == "skipped"

    def test_stationarity_gap_from_exact_particle_engine(self):
        result = check_stationarity(config())
        assert result.value <= 1e-8
        literal = check_stationarity(config(noise_prefactor="literal"))
        assert literal.value >= 0.1 * 0.25

    @pytest.mark.slow
    def test_eta_tau_eta_decay_on_cosine_profile(self):
        result = check_eta_tau_eta_decay(config())
        assert result.status == "pass"
        assert result.value <= -0.8

    @pytest.mark.parametrize("check", [check_interpolation_rate, check_laplacian_rate, check_square_exchange_rate])
    def test_rate_lemmas_in_1d(self, check):
        result = check(1)
        assert result.status == "pass"
        assert result.value <= -0.9

    def test_mc_vs_master_needs_replicas(self):
        assert check_mc_vs_master(config(replicas=100)).status == "skipped"

    @pytest.mark.slow
    def test_mc_vs_master_pairs(self):
        result = check_mc_vs_master(config(replicas=2000, t=0.05))
        assert result.status == "pass"
        assert "pairs" in result.detail

    def test_report(self):
        report = DiagnosticsReport([DiagnosticResult("a", "pass", 1.0, 2.0), DiagnosticResult("b", "skipped")])
        assert report.all_passed
        assert report.get("b").passed
        assert report.to_dict()["criteria"] == {"a": "pass", "b": "skipped"}
        with pytest.raises(KeyError):
            report.get("c")
        report.results.append(DiagnosticResult("c", "fail"))
        assert not report.all_passed
        assert list(report.to_frame()["status"]) == ["pass", "skipped", "fail"]

    @pytest.mark.slow
    def test_suite_on_short_ladder(self):
        report = diagnostics_suite(config(n_list=[4, 8], replicas=10))
        criteria = report.to_dict()["criteria"]
        assert criteria["interpolation_rate"] == "skipped"
        assert criteria["mc_vs_master"] == "skipped"
        assert report.all_passed, [r for r in report.results if not r.passed]
