import math

import numpy as np
import pytest

from decoseed.araki_zurek import (
    DecayBound,
    DecoherenceCurve,
    MixtureInitialState,
    MixtureTerm,
    SpectralDensity,
    chi_spectral,
    fit_decay_bound,
    induced_sector_residual,
    mixture_dynamics,
    off_diagonal_observable,
    recurrence_time,
    reduced_blocks_factorized,
    reduced_blocks_from_table,
    residual_series,
    sector_chi_table,
    validate_model,
    window_block_norm,
    window_distance,
)
from decoseed.const import FIT_SPREAD
from decoseed.exc import (
    AssumptionViolatedError,
    DimensionMismatchError,
    InsufficientDecayError,
    InvalidDensityError,
    NyquistViolationError,
    OverlappingWindowsError,
    UnnormalizedMeasureError,
    WeightSumInvalidError,
)
from decoseed.qcore import random_density, trapezoid_weights, validate_density


class TestValidateModel:
    def test_sectors(self, qubit_spec):
        assert qubit_spec.dim == 2
        np.testing.assert_allclose(qubit_spec.sectors.eigenvalues, [-0.5, 0.5])
        assert qubit_spec.min_gap == pytest.approx(1.0)

    def test_noncommuting_system(self):
        with pytest.raises(AssumptionViolatedError) as e:
            validate_model([[0, 1], [1, 0]], np.diag([0.5, -0.5]))
        assert e.value.which.startswith("assumption 1")
        assert e.value.defect == pytest.approx(1.0)

    def test_noncommuting_environment(self):
        with pytest.raises(AssumptionViolatedError) as e:
            validate_model(np.zeros((2, 2)), np.diag([1.0, -1.0]), h_e=np.diag([0.0, 1.0]), v_e=[[0, 1], [1, 0]])
        assert e.value.which.startswith("assumption 3")

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            validate_model(np.zeros((2, 2)), np.eye(3))


class TestSpectralDensity:
    def test_gaussian_normalized(self, gaussian_mu):
        assert gaussian_mu.total_mass == pytest.approx(1.0, abs=1e-12)
        assert gaussian_mu.mean == pytest.approx(0.0, abs=1e-12)
        assert gaussian_mu.validate() is gaussian_mu

    @pytest.mark.parametrize("smoothness", [0, 1, 3])
    def test_bump_vanishes_at_edges(self, smoothness):
        mu = SpectralDensity.bump(center=0.5, half_width=2.0, smoothness=smoothness, n_points=257)
        assert mu.density[0] == 0.0 and mu.density[-1] == 0.0
        assert mu.total_mass == pytest.approx(1.0)
        assert mu.smoothness_class == smoothness

    def test_unnormalized_measure(self):
        grid = np.linspace(-1.0, 1.0, 11)
        mu = SpectralDensity(grid, np.ones(11), trapezoid_weights(grid))
        with pytest.raises(UnnormalizedMeasureError):
            chi_spectral(mu, 1.0, [0.0, 1.0])

    def test_negative_density(self):
        grid = np.linspace(-1.0, 1.0, 3)
        mu = SpectralDensity(grid, np.array([2.0, -1.0, 1.0]), trapezoid_weights(grid))
        with pytest.raises(UnnormalizedMeasureError):
            mu.validate()

    def test_lattice(self):
        mu = SpectralDensity.lattice(spacing=0.5, n_atoms=5, center=1.0)
        np.testing.assert_allclose(mu.lambda_grid, [0.0, 0.5, 1.0, 1.5, 2.0])
        assert mu.discrete
        assert mu.total_mass == pytest.approx(1.0)

    def test_quantile_of_gaussian_is_symmetric(self, gaussian_mu):
        q = gaussian_mu.quantile([0.1, 0.5, 0.9])
        assert q[1] == pytest.approx(0.0, abs=1e-3)
        assert q[0] == pytest.approx(-q[2], abs=1e-3)
        assert q[2] == pytest.approx(1.2816, abs=1e-2)

    def test_quantile_of_bump(self):
        mu = SpectralDensity.bump(half_width=1.0, smoothness=0, n_points=4097)
        # cdf of (3/4)(1 - u^2) is (2 + 3u - u^3)/4
        u = np.array([-0.5, 0.0, 0.25])
        np.testing.assert_allclose(mu.quantile((2 + 3 * u - u ** 3) / 4), u, atol=1e-5)


class TestChi:
    def test_gaussian_closed_form(self, gaussian_mu):
        times = np.linspace(0.0, 8.0, 257)
        chi = chi_spectral(gaussian_mu, 1.0, times)
        assert chi[0] == 1.0
        np.testing.assert_allclose(np.abs(chi), np.exp(-times ** 2 / 2), atol=1e-6)

    def test_shifted_gaussian_phase(self):
        mu = SpectralDensity.gaussian(mean=2.0, sigma=0.5)
        times = np.linspace(0.0, 4.0, 41)
        expected = np.exp(-2j * times) * np.exp(-0.125 * times ** 2)
        np.testing.assert_allclose(chi_spectral(mu, 1.0, times), expected, atol=1e-8)

    def test_nyquist_violation(self):
        mu = SpectralDensity.gaussian(n_points=64)
        with pytest.raises(NyquistViolationError) as e:
            chi_spectral(mu, 1.0, np.linspace(0.0, 20.0, 11))
        assert "exceeds pi" in e.value.args[0]

    def test_two_atoms(self):
        mu = SpectralDensity.discrete_measure([0.0, 1.0])
        times = np.array([0.0, math.pi, 2 * math.pi])
        np.testing.assert_allclose(chi_spectral(mu, 1.0, times), [1.0, 0.0, 1.0], atol=1e-12)

    def test_sector_table_shares_differences(self, gaussian_mu):
        times = np.linspace(0.0, 3.0, 7)
        table = sector_chi_table(np.array([-1.0, 0.0, 1.0]), gaussian_mu, times)
        np.testing.assert_allclose(table[:, 0, 1], table[:, 1, 2])
        np.testing.assert_allclose(table[:, 2, 0], np.conj(table[:, 0, 2]))
        np.testing.assert_allclose(np.abs(table[:, 0, 2]), np.exp(-2 * times ** 2), atol=1e-8)
        assert np.all(table[:, 1, 1] == 1.0)


class TestReducedDynamics:
    def test_plus_state(self, qubit_spec, plus_state, gaussian_mu):
        times = np.linspace(0.0, 8.0, 65)
        curve, states = reduced_blocks_factorized(plus_state, qubit_spec, gaussian_mu, times)
        assert curve.pairs == ((0, 1),)
        np.testing.assert_allclose(curve.block_tn[:, 0], 0.5 * np.exp(-times ** 2 / 2), atol=1e-6)
        np.testing.assert_allclose(states[:, 0, 0], 0.5, atol=1e-12)
        np.testing.assert_array_equal(states[0], plus_state)

    def test_states_stay_valid(self, qutrit_spec, gaussian_mu, rng):
        rho0 = random_density(3, rng)
        _, states = reduced_blocks_factorized(rho0, qutrit_spec, gaussian_mu, np.linspace(0.0, 3.0, 31))
        for rho in states:
            diag = validate_density(rho)
            assert diag.trace_defect <= 1e-12
            assert diag.min_eigenvalue >= -1e-10

    def test_commuting_system_hamiltonian(self, qutrit_spec, gaussian_mu, rng):
        rho0 = random_density(3, rng)
        times = np.linspace(0.0, 3.0, 13)
        _, states = reduced_blocks_factorized(rho0, qutrit_spec, gaussian_mu, times)
        energies = np.array([0.3, -0.2, 0.1])
        lambdas = np.array([-1.0, 0.0, 1.0])
        for t, rho in zip(times, states):
            phase = np.exp(-1j * np.subtract.outer(energies, energies) * t)
            damping = np.exp(-0.5 * np.subtract.outer(lambdas, lambdas) ** 2 * t ** 2)
            np.testing.assert_allclose(rho, rho0 * phase * damping, atol=1e-8)

    def test_invalid_state(self, qubit_spec, gaussian_mu):
        with pytest.raises(InvalidDensityError):
            reduced_blocks_factorized(np.diag([2.0, -1.0]), qubit_spec, gaussian_mu, [0.0])

    def test_state_dimension(self, qubit_spec, gaussian_mu):
        with pytest.raises(DimensionMismatchError):
            reduced_blocks_factorized(np.eye(3) / 3, qubit_spec, gaussian_mu, [0.0])

    def test_table_shape_checked(self, qubit_spec, plus_state):
        with pytest.raises(DimensionMismatchError):
            reduced_blocks_from_table(plus_state, qubit_spec, np.ones((3, 3, 3)), [0.0, 1.0, 2.0])

    def test_curve_orientation(self):
        curve = DecoherenceCurve.from_chi([0.0, 1.0], [1.0, 0.5j])
        np.testing.assert_allclose(curve.chi_of(1, 0), [1.0, -0.5j])
        np.testing.assert_allclose(curve.chi_of(0, 0), [1.0, 1.0])
        assert np.isnan(curve.block_tn).all()


class TestMixtures:
    def test_weights_must_sum_to_one(self, plus_state, gaussian_mu):
        state = MixtureInitialState((MixtureTerm(0.9, plus_state, gaussian_mu),))
        with pytest.raises(WeightSumInvalidError) as e:
            state.validate()
        assert "0.9" in e.value.args[0]

    def test_linearity(self, qubit_spec, plus_state):
        narrow = SpectralDensity.gaussian(sigma=0.5)
        wide = SpectralDensity.gaussian(sigma=2.0)
        times = np.linspace(0.0, 2.0, 21)
        state = MixtureInitialState((MixtureTerm(0.25, plus_state, narrow), MixtureTerm(0.75, plus_state, wide)))
        assert state.is_convex
        states = mixture_dynamics(state, qubit_spec, times)
        expected = 0.5 * (0.25 * np.exp(-0.125 * times ** 2) + 0.75 * np.exp(-2.0 * times ** 2))
        np.testing.assert_allclose(np.abs(states[:, 0, 1]), expected, atol=1e-8)

    def test_signed_weights(self, qubit_spec, plus_state):
        narrow = SpectralDensity.gaussian(sigma=0.5)
        wide = SpectralDensity.gaussian(sigma=1.0)
        state = MixtureInitialState((MixtureTerm(2.0, plus_state, narrow), MixtureTerm(-1.0, plus_state, wide)))
        assert not state.is_convex
        states = mixture_dynamics(state, qubit_spec, [0.0, 1.0])
        np.testing.assert_allclose(np.trace(states, axis1=1, axis2=2), [1.0, 1.0])


class TestDecayBound:
    @pytest.fixture
    def bump_curves(self):
        times = np.linspace(0.0, 200.0, 2001)
        curves = {}
        for s in (1, 2, 3):
            mu = SpectralDensity.bump(half_width=1.0, smoothness=s, n_points=4096)
            curves[s] = DecoherenceCurve.from_chi(times, chi_spectral(mu, 1.0, times))
        return curves

    def test_smoother_densities_decay_faster(self, bump_curves):
        gammas = []
        for s, curve in bump_curves.items():
            bound, holds = fit_decay_bound(curve, delta=1.0)
            assert holds
            gammas.append(bound.gamma)
        assert gammas[0] <= gammas[1] <= gammas[2]
        assert gammas[2] >= 3

    def test_constant_is_close_to_least_squares(self, bump_curves):
        for curve in bump_curves.values():
            bound, _ = fit_decay_bound(curve, delta=1.0)
            assert bound.C_fit <= bound.C_gamma <= FIT_SPREAD * bound.C_fit
            assert bound.dominates(curve.times, curve.chi[:, 0])

    def test_gaussian_decay_is_not_a_power_law(self):
        times = np.linspace(0.0, 8.0, 65)
        curve = DecoherenceCurve.from_chi(times, chi_spectral(SpectralDensity.gaussian(sigma=1.0), 1.0, times))
        bound, holds = fit_decay_bound(curve, delta=1.0)
        assert bound.dominates(times, curve.chi[:, 0])
        assert bound.spread > FIT_SPREAD
        assert not holds
        assert fit_decay_bound(curve, delta=1.0, spread=1e3)[1]

    def test_certificate_is_state_independent(self, bump_curves, qubit_spec, rng):
        mu = SpectralDensity.bump(half_width=1.0, smoothness=3, n_points=4096)
        times = bump_curves[3].times
        bound, _ = fit_decay_bound(bump_curves[3], delta=1.0)
        table = sector_chi_table(qubit_spec.sectors.eigenvalues, mu, times)
        for _ in range(100):
            rho0 = random_density(2, rng)
            curve, _ = reduced_blocks_from_table(rho0, qubit_spec, table, times)
            scale = abs(rho0[0, 1])
            assert bound.dominates(times, curve.block_tn[:, 0], scale=scale)

    def test_no_decay(self):
        times = np.linspace(0.0, 10.0, 101)
        curve = DecoherenceCurve.from_chi(times, np.ones(times.size))
        with pytest.raises(InsufficientDecayError):
            fit_decay_bound(curve, delta=1.0)

    def test_too_few_samples(self):
        curve = DecoherenceCurve.from_chi(np.linspace(0.0, 1.0, 10), np.ones(10))
        with pytest.raises(ValueError):
            fit_decay_bound(curve, delta=1.0)

    def test_envelope(self):
        bound = DecayBound(C_gamma=2.0, gamma=2.0, delta=1.0)
        np.testing.assert_allclose(bound.envelope([0.0, 1.0, -3.0]), [2.0, 0.5, 0.125])


class TestWindows:
    def test_distance(self):
        assert window_distance((0.0, 1.0), (2.0, 3.0)) == pytest.approx(1.0)
        assert window_distance((2.0, 3.0), (0.0, 1.0)) == pytest.approx(1.0)
        assert window_distance((0.0, 2.0), (1.0, 3.0)) < 0

    def test_overlapping(self, qutrit_spec, gaussian_mu):
        with pytest.raises(OverlappingWindowsError):
            window_block_norm(qutrit_spec, (-1.0, 0.0), (0.0, 1.0), np.eye(3) / 3, gaussian_mu, [0.0])

    def test_outer_sectors(self, qutrit_spec, gaussian_mu, rng):
        rho0 = random_density(3, rng)
        times = np.linspace(0.0, 3.0, 31)
        norms = window_block_norm(qutrit_spec, (-1.5, -0.5), (0.5, 1.5), rho0, gaussian_mu, times)
        np.testing.assert_allclose(norms, abs(rho0[0, 2]) * np.exp(-2 * times ** 2), atol=1e-8)

    def test_empty_window(self, qutrit_spec, gaussian_mu):
        norms = window_block_norm(qutrit_spec, (5.0, 6.0), (-1.5, 1.5), np.eye(3) / 3, gaussian_mu, [0.0, 1.0])
        np.testing.assert_array_equal(norms, [0.0, 0.0])


class TestRecurrence:
    def test_lattice(self):
        mu = SpectralDensity.lattice(spacing=0.5, n_atoms=21)
        period = recurrence_time(mu, 1.0)
        assert period == pytest.approx(4 * math.pi)
        assert abs(chi_spectral(mu, 1.0, [period])[0]) == pytest.approx(1.0)

    def test_commensurate_gaps(self):
        mu = SpectralDensity.discrete_measure([0.0, 0.5, 1.25])
        assert recurrence_time(mu, 2.0) == pytest.approx(2 * math.pi / (2.0 * 0.25))

    def test_continuous_measure(self, gaussian_mu):
        assert recurrence_time(gaussian_mu, 1.0) == math.inf


class TestInducedSectors:
    def test_off_diagonal_observable(self, qutrit_spec, rng):
        a = rng.normal(size=(3, 3))
        a = a + a.T
        off = off_diagonal_observable(a, qutrit_spec.sectors)
        assert np.allclose(np.diag(off), 0)
        np.testing.assert_allclose(off + np.diag(np.diag(a)), a)

    def test_residual_vanishes_with_coupling(self, qubit_spec, plus_state, gaussian_mu):
        sigma_x = np.array([[0.0, 1.0], [1.0, 0.0]])
        times = np.linspace(0.0, 8.0, 65)
        _, states = reduced_blocks_factorized(plus_state, qubit_spec, gaussian_mu, times)
        assert induced_sector_residual(states[-1], qubit_spec.sectors, sigma_x) < 1e-3
        series = residual_series(states, qubit_spec.sectors, sigma_x)
        assert series[0] == pytest.approx(1.0)

    def test_residual_persists_without_coupling(self, qubit_spec, plus_state):
        frozen = SpectralDensity.discrete_measure([0.0])
        sigma_x = np.array([[0.0, 1.0], [1.0, 0.0]])
        _, states = reduced_blocks_factorized(plus_state, qubit_spec, frozen, np.linspace(0.0, 8.0, 65))
        assert induced_sector_residual(states[-1], qubit_spec.sectors, sigma_x) == pytest.approx(1.0)

    def test_random_observables(self, qubit_spec, plus_state, gaussian_mu, rng):
        times = np.linspace(0.0, 8.0, 65)
        _, coupled = reduced_blocks_factorized(plus_state, qubit_spec, gaussian_mu, times)
        _, control = reduced_blocks_factorized(plus_state, qubit_spec, SpectralDensity.discrete_measure([0.0]), times)
        for _ in range(20):
            entry = rng.uniform(0.5, 1.5) * np.exp(1j * rng.uniform(-1.0, 1.0))
            a = np.array([[rng.normal(), entry], [np.conj(entry), rng.normal()]])
            assert induced_sector_residual(coupled[-1], qubit_spec.sectors, a) < 1e-3
            assert induced_sector_residual(control[-1], qubit_spec.sectors, a) >= 1e-3
