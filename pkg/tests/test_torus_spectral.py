"""Tests for core.torus_spectral module."""

import os
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import sys
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.torus_spectral import (
    BilinearForm,
    GridField,
    SpectralField,
    discrete_derivative,
    discrete_gradient_max_norm,
    discrete_laplacian,
    eigenvalue_lambda,
    eigenvalue_mu,
    evaluate,
    evaluate_on_grid,
    extend,
    form_from_kernel,
    form_from_product,
    heat_propagate_continuous,
    heat_propagate_discrete,
    hilbert_schmidt_norm,
    inner_product_continuous,
    inner_product_discrete,
    interpolation_error,
    lattice_axes,
    laplacian_consistency_error,
    mode_basis,
    multiply,
    project,
    projection_tail_norm,
    resize,
    shift,
    sobolev_norm,
    spectral_from_function,
    spectral_from_triples,
    square_exchange_error,
    trace_of_form,
)


def random_grid(seed: int, n: int, d: int) -> GridField:
    rng = np.random.default_rng(seed)
    return GridField(n, d, rng.standard_normal((2 * n + 1,) * d))


lattices = st.tuples(st.integers(1, 8), st.integers(1, 2), st.integers(0, 2 ** 32 - 1))


class TestFieldTypes:
    def test_grid_shape_checked(self):
        with pytest.raises(ValueError):
            GridField(2, 1, np.zeros(4))

    def test_grid_rejects_nan(self):
        with pytest.raises(ValueError):
            GridField(1, 1, [0.0, np.nan, 0.0])

    def test_spectral_rejects_non_hermitian(self):
        with pytest.raises(ValueError):
            SpectralField(1, 1, [1.0, 0.0, 0.0])

    def test_lattice_points_are_centered(self):
        (x,) = lattice_axes(2, 1)
        assert np.allclose(np.sort(x), 2 * np.pi * np.arange(-2, 3) / 5)

    def test_triples_build_cosines(self):
        g = spectral_from_triples(1, [[0, 0.5, 0.0], [1, 0.3, 0.0]])
        x = np.linspace(0, 2 * np.pi, 7)[:, None]
        assert np.allclose(evaluate(g, x), 0.5 + 0.3 * np.cos(x[:, 0]))

    def test_triples_phase_and_2d(self):
        g = spectral_from_triples(2, [[[1, 2], 1.0, 0.5]])
        p = np.array([[0.3, -1.1]])
        assert evaluate(g, p)[0] == pytest.approx(math.cos(0.3 + 2 * -1.1 + 0.5))

    def test_triples_wrong_dimension(self):
        with pytest.raises(ValueError):
            spectral_from_triples(2, [[1, 1.0, 0.0]])

    def test_resize_round_trip(self):
        g = spectral_from_triples(1, [[2, 1.0, 0.3]])
        assert np.allclose(resize(resize(g, 5), 2).coeffs, g.coeffs)
        assert resize(g, 1).coeffs.shape == (3,)


class TestModeBasis:
    def test_ordering_and_labels_1d(self):
        basis = mode_basis(2, 1)
        assert basis.labels == ("1", "cos(1)", "sin(1)", "cos(2)", "sin(2)")

    def test_half_space_rule_2d(self):
        basis = mode_basis(1, 2)
        assert basis.size == 9
        assert basis.labels[1:5] == ("cos(0,1)", "sin(0,1)", "cos(1,0)", "sin(1,0)")
        assert "cos(1,-1)" in basis.labels and "cos(-1,1)" not in basis.labels

    def test_to_real_from_real_inverse(self):
        basis = mode_basis(3, 2)
        coords = np.random.default_rng(3).standard_normal(basis.size)
        assert np.allclose(basis.to_real(basis.from_real(coords)), coords)

    def test_coordinates_are_pairings(self):
        g = spectral_from_triples(1, [[1, 0.7, 0.0], [2, 0.2, 1.0]])
        basis = mode_basis(2, 1)
        for r in range(basis.size):
            e_r = basis.from_real(np.eye(basis.size)[r])
            assert basis.to_real(g)[r] == pytest.approx(inner_product_continuous(g, e_r))

    def test_lattice_samples_match_evaluation(self):
        basis = mode_basis(2, 1)
        samples = basis.lattice_samples(3)
        e_1 = basis.from_real(np.eye(basis.size)[1])
        assert np.allclose(samples[1], project(e_1, 3).values.ravel())

    def test_lattice_samples_need_resolvable_modes(self):
        with pytest.raises(ValueError):
            mode_basis(4, 1).lattice_samples(2)

    def test_restriction_indices(self):
        idx = mode_basis(3, 1).restriction_indices(1)
        assert list(idx) == [0, 1, 2]


class TestTransforms:
    @settings(max_examples=40, deadline=None)
    @given(lattices)
    def test_project_extend_identity(self, lattice):
        n, d, seed = lattice
        f = random_grid(seed, n, d)
        assert np.allclose(project(extend(f), n).values, f.values, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(lattices)
    def test_extend_project_is_truncation(self, lattice):
        n, d, seed = lattice
        g = extend(random_grid(seed, n + 2, d))
        assert np.allclose(extend(project(g, n)).coeffs, resize(g, n).coeffs, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(lattices)
    def test_duality_pairing(self, lattice):
        n, d, seed = lattice
        f = random_grid(seed, n, d)
        g = extend(random_grid(seed + 1, n + 3, d))
        lhs = inner_product_continuous(extend(f), g)
        assert lhs == pytest.approx(inner_product_discrete(f, project(g, n)), abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(lattices)
    def test_parseval(self, lattice):
        n, d, seed = lattice
        f, g = random_grid(seed, n, d), random_grid(seed + 7, n, d)
        assert inner_product_discrete(f, g) == pytest.approx(
            inner_product_continuous(extend(f), extend(g)), abs=1e-12
        )

    def test_project_callable(self):
        f = project(lambda x: np.cos(2 * x), 4, d=1)
        (x,) = lattice_axes(4, 1)
        assert np.allclose(f.values, np.cos(2 * x))

    def test_project_callable_needs_dimension(self):
        with pytest.raises(ValueError):
            project(lambda x: x, 3)

    def test_spectral_from_function(self):
        g = spectral_from_function(lambda x: 1.0 + np.sin(3 * x), 1, 4)
        assert g.coeff([0]) == pytest.approx(1.0)
        assert g.coeff([3]) == pytest.approx(-0.5j)

    def test_evaluate_on_grid_matches_evaluate(self):
        g = spectral_from_triples(2, [[[1, 1], 0.4, 0.2], [[0, 2], 0.1, 0.0]])
        M = 9
        grid = evaluate_on_grid(g, M)
        assert grid[2, 5] == pytest.approx(evaluate(g, [[2 * np.pi * 2 / M, 2 * np.pi * 5 / M]])[0])

    def test_multiply_exact(self):
        a = spectral_from_triples(1, [[1, 1.0, 0.0]])
        sq = multiply(a, a)
        # cos^2 = 1/2 + cos(2x)/2
        assert sq.coeff([0]) == pytest.approx(0.5)
        assert sq.coeff([2]) == pytest.approx(0.25)


class TestDiscreteOperators:
    @settings(max_examples=40, deadline=None)
    @given(lattices)
    def test_summation_by_parts_backward_difference(self, lattice):
        n, d, seed = lattice
        f, g = random_grid(seed, n, d), random_grid(seed + 1, n, d)
        for j in range(d):
            backward = shift(discrete_derivative(g, j), j, -1)
            lhs = inner_product_discrete(discrete_derivative(f, j), g)
            assert lhs == pytest.approx(-inner_product_discrete(f, backward), abs=1e-10)

    def test_forward_difference_is_not_antisymmetric(self):
        f, g = random_grid(1, 3, 1), random_grid(2, 3, 1)
        lhs = inner_product_discrete(discrete_derivative(f, 0), g)
        rhs = -inner_product_discrete(f, discrete_derivative(g, 0))
        assert abs(lhs - rhs) > 1e-6

    @settings(max_examples=40, deadline=None)
    @given(lattices)
    def test_gradient_pairing_is_minus_laplacian(self, lattice):
        n, d, seed = lattice
        f, g = random_grid(seed, n, d), random_grid(seed + 1, n, d)
        lhs = sum(inner_product_discrete(discrete_derivative(f, j), discrete_derivative(g, j)) for j in range(d))
        assert lhs == pytest.approx(-inner_product_discrete(f, discrete_laplacian(g)), abs=1e-9)

    @pytest.mark.parametrize("n,k", [(1, 1), (3, -2), (8, 5)])
    def test_eigen_relations_1d(self, n, k):
        wave = GridField.from_function(lambda x: np.cos(k * x), n, 1)
        lam = eigenvalue_lambda([k], n)
        assert np.allclose(discrete_laplacian(wave).values, -lam * wave.values, atol=1e-10)
        mu = eigenvalue_mu([k], 0, n)
        cos_w = GridField.from_function(lambda x: np.cos(k * x), n, 1)
        sin_w = GridField.from_function(lambda x: np.sin(k * x), n, 1)
        lhs = discrete_derivative(cos_w, 0).values + 1j * discrete_derivative(sin_w, 0).values
        assert np.allclose(lhs, mu * (cos_w.values + 1j * sin_w.values), atol=1e-10)

    @pytest.mark.parametrize("n", [1, 4, 16, 64])
    def test_eigenvalue_bounds(self, n):
        for k in range(-n, n + 1):
            lam = eigenvalue_lambda([k], n)
            assert k * k / 3 - 1e-12 <= lam <= k * k + 1e-12
            mu = abs(eigenvalue_mu([k], 0, n))
            assert abs(k) / math.sqrt(3) - 1e-12 <= mu <= abs(k) + 1e-12

    def test_eigenvalue_mode_out_of_range(self):
        with pytest.raises(ValueError):
            eigenvalue_lambda([3], 2)

    def test_shift_is_periodic(self):
        f = GridField(1, 1, [1.0, 2.0, 3.0])
        assert list(shift(f, 0).values) == [2.0, 3.0, 1.0]
        assert list(shift(f, 0, -1).values) == [3.0, 1.0, 2.0]

    def test_bad_axis(self):
        with pytest.raises(ValueError):
            discrete_derivative(random_grid(0, 2, 1), 1)

    def test_gradient_max_norm_constant(self):
        assert discrete_gradient_max_norm(GridField.constant(3, 2, 0.4)) == 0.0

    @settings(max_examples=40, deadline=None)
    @given(lattices)
    def test_shift_preserves_pairing(self, lattice):
        n, d, seed = lattice
        f, g = random_grid(seed, n, d), random_grid(seed + 1, n, d)
        for j in range(d):
            assert inner_product_discrete(shift(f, j), shift(g, j)) == pytest.approx(
                inner_product_discrete(f, g), rel=1e-12, abs=1e-14)

    def test_first_eigenvalue_on_smallest_lattice(self):
        assert eigenvalue_lambda([1], 1) == pytest.approx(13.5 / (2 * np.pi ** 2))
        assert eigenvalue_lambda([1], 1) == pytest.approx(0.683917, abs=1e-6)


class TestHeatFlow:
    def test_continuous_decay(self):
        g = spectral_from_triples(1, [[0, 0.5, 0.0], [2, 0.3, 0.0]])
        h = heat_propagate_continuous(g, 0.1)
        assert h.coeff([2]) == pytest.approx(0.15 * math.exp(-2 * np.pi ** 2 * 4 * 0.1))
        assert h.coeff([0]) == pytest.approx(0.5)

    def test_discrete_matches_euler_steps(self):
        f = random_grid(5, 3, 1)
        exact = heat_propagate_discrete(f, 1e-3).values
        v = f
        steps = 2000
        for _ in range(steps):
            v = GridField(3, 1, v.values + 2 * np.pi ** 2 * (1e-3 / steps) * discrete_laplacian(v).values)
        assert np.allclose(exact, v.values, atol=1e-4)

    def test_mass_conserved(self):
        f = random_grid(9, 4, 2)
        assert heat_propagate_discrete(f, 0.3).values.mean() == pytest.approx(f.values.mean())

    def test_negative_time(self):
        with pytest.raises(ValueError):
            heat_propagate_discrete(random_grid(0, 1, 1), -1.0)

    def test_first_mode_decay_on_smallest_lattice(self):
        wave = GridField.from_function(np.cos, 1, 1)
        h = heat_propagate_discrete(wave, 0.1)
        assert np.allclose(h.values, math.exp(-1.35) * wave.values, atol=1e-13)

    @pytest.mark.parametrize("d", [1, 2])
    def test_semigroup_property(self, d):
        f = random_grid(21, 4, d)
        s, t = 0.013, 0.042
        twice = heat_propagate_discrete(heat_propagate_discrete(f, s), t)
        assert np.allclose(twice.values, heat_propagate_discrete(f, s + t).values, rtol=0, atol=1e-12)
        g = extend(f)
        twice = heat_propagate_continuous(heat_propagate_continuous(g, s), t)
        assert np.allclose(twice.coeffs, heat_propagate_continuous(g, s + t).coeffs, rtol=0, atol=1e-12)

    @pytest.mark.parametrize("t", [1e-4, 0.01, 0.5])
    def test_discrete_maximum_principle(self, t):
        f = random_grid(17, 6, 2)
        h = heat_propagate_discrete(f, t).values
        assert h.max() <= f.values.max() + 1e-12
        assert h.min() >= f.values.min() - 1e-12


class TestSobolev:
    def test_norm_of_constant(self):
        g = SpectralField.single_mode((0,), 2, 3.0)
        assert sobolev_norm(g, -1.0) == pytest.approx(3.0)

    @pytest.mark.parametrize("J", [-1.0, 0.0, 2.0])
    def test_norm_of_extension_is_shift_invariant(self, J):
        f = random_grid(13, 3, 2)
        for j in (0, 1):
            assert sobolev_norm(extend(shift(f, j)), J) == pytest.approx(sobolev_norm(extend(f), J), rel=1e-12)

    def test_projection_tail_inequality(self):
        g = extend(random_grid(11, 12, 1))
        I, J = 2.0, 0.5
        for n in (2, 4, 8):
            lhs = projection_tail_norm(g, n, J)
            assert lhs <= n ** -(I - J) * projection_tail_norm(g, n, I) + 1e-14
            assert sobolev_norm(resize(g, n), J) <= sobolev_norm(g, J) + 1e-14

    def test_hilbert_schmidt_of_identity(self):
        basis = mode_basis(2, 1)
        A = BilinearForm(2, 1, np.eye(basis.size))
        expected = math.sqrt(np.sum(basis.sobolev_weights(-1.0) ** 2))
        assert hilbert_schmidt_norm(A, 1.0) == pytest.approx(expected)


class TestForms:
    def test_product_form(self):
        phi = spectral_from_triples(1, [[1, math.sqrt(2), 0.0]])
        A = form_from_product(phi)
        zeta = spectral_from_triples(1, [[1, 0.4, 0.0], [2, 1.0, 0.0]])
        assert A(zeta, zeta) == pytest.approx(inner_product_continuous(phi, zeta) ** 2)

    def test_form_must_be_symmetric(self):
        with pytest.raises(ValueError):
            BilinearForm(1, 1, np.triu(np.ones((3, 3))))

    def test_kernel_of_product(self):
        phi = spectral_from_triples(1, [[1, 1.0, 0.0]])
        A = form_from_kernel(lambda x, y: np.cos(x) * np.cos(y), 1, 2)
        assert np.allclose(A.entries, form_from_product(phi, K=2).entries, atol=1e-12)

    def test_trace_of_diagonal_form(self):
        basis = mode_basis(1, 1)
        trace = trace_of_form(BilinearForm(1, 1, np.eye(basis.size)))
        # 1 + 2cos^2 + 2sin^2 = 3 at every x
        assert trace.coeff([0]) == pytest.approx(3.0)
        assert abs(trace.coeff([2])) < 1e-12

    def test_trace_of_rank_one_form_is_square(self):
        phi = spectral_from_triples(1, [[2, 1.0, 0.0]])
        trace = trace_of_form(form_from_product(phi))
        # cos^2 2x = 1/2 + cos(4x)/2
        assert trace.coeff([0]) == pytest.approx(0.5)
        assert trace.coeff([4]) == pytest.approx(0.25)
        assert trace.coeff([-4]) == pytest.approx(0.25)
        assert abs(trace.coeff([2])) < 1e-12

    def test_trace_of_kernel_form_is_diagonal(self):
        def a(x, y):
            return (1.0 + np.cos(x - y) + np.cos(x) * np.cos(y) + np.cos(2 * x) + np.cos(2 * y)
                    + np.sin(x) * np.sin(2 * y) + np.sin(2 * x) * np.sin(y))
        trace = trace_of_form(form_from_kernel(a, 1, 2))
        xs = np.linspace(0.0, 2 * np.pi, 37)
        assert np.allclose(evaluate(trace, xs[:, None]), a(xs, xs), atol=1e-10)


class TestApproximationRates:
    def test_interpolation_error_decreases(self):
        errors = [interpolation_error(lambda x: np.exp(np.cos(x)), n) for n in (2, 4, 8)]
        assert errors[0] > errors[1] > errors[2]

    def test_interpolation_exact_for_band_limited(self):
        assert interpolation_error(lambda x: np.cos(2 * x), 3) < 1e-12

    def test_interpolation_rate_over_ladder(self):
        g = SpectralField(256, 1, (1.0 + np.arange(-256, 257) ** 2.0) ** -3)
        ns = [4, 8, 16, 32, 64]
        errors = [interpolation_error(lambda x: evaluate(g, x[:, None]), n) for n in ns]
        assert np.polyfit(np.log(ns), np.log(errors), 1)[0] <= -0.9

    def test_laplacian_consistency_decreases(self):
        g = SpectralField(64, 1, (1.0 + np.arange(-64, 65) ** 2.0) ** -3)
        errors = [laplacian_consistency_error(g, n) for n in (4, 8, 16, 32)]
        assert all(b < a for a, b in zip(errors, errors[1:]))
        slope = np.polyfit(np.log([4, 8, 16, 32]), np.log(errors), 1)[0]
        assert slope <= -0.9

    def test_square_exchange_vanishes_for_constants(self):
        assert square_exchange_error(GridField.constant(3, 1, 0.7)) < 1e-14
