import math

import numpy as np
import pytest

from decoseed.araki_zurek import SpectralDensity, reduced_blocks_factorized, sector_chi_table, validate_model
from decoseed.exc import (
    AssumptionViolatedError,
    DimensionCapError,
    DimensionMismatchError,
    TruncationTooSmallError,
)
from decoseed.oracle import (
    FiniteModel,
    FockOracle,
    equal_weight_surrogate,
    fock_chi,
    fock_expectation,
    full_evolution,
    gamma_evolution_check,
    spectral_density_from_operator,
)
from decoseed.qcore import random_density
from decoseed.vanhove import CoherentMixture, CoherentTerm, ModeFunction, chi_vanhove, single_mode_chi


@pytest.fixture
def surrogate(gaussian_mu):
    return equal_weight_surrogate(gaussian_mu, 32)


@pytest.fixture
def qutrit_model(surrogate, rng):
    h_e = np.diag(rng.normal(size=32))
    return FiniteModel.build(np.diag([0.3, -0.2, 0.1]), np.diag([-1.0, 0.0, 1.0]), h_e, surrogate.v_e,
                             commuting=True)


class TestSurrogate:
    def test_equal_weights(self, surrogate):
        atoms = np.real(np.diag(surrogate.v_e))
        assert np.all(np.diff(atoms) > 0)
        np.testing.assert_allclose(atoms, -atoms[::-1], atol=1e-6)
        assert np.trace(surrogate.omega) == pytest.approx(1.0)

    def test_bad_dimension(self, gaussian_mu):
        with pytest.raises(ValueError):
            equal_weight_surrogate(gaussian_mu, 0)

    def test_measure_merges_degenerate_atoms(self):
        mu = spectral_density_from_operator(np.diag([1.0, 1.0, -1.0]), np.diag([0.2, 0.3, 0.5]))
        assert mu.discrete
        np.testing.assert_allclose(mu.lambda_grid, [-1.0, 1.0])
        np.testing.assert_allclose(mu.density, [0.5, 0.5])

    def test_measure_of_rotated_state(self):
        mu = spectral_density_from_operator([[0.0, 1.0], [1.0, 0.0]], np.diag([1.0, 0.0]))
        np.testing.assert_allclose(mu.lambda_grid, [-1.0, 1.0])
        np.testing.assert_allclose(mu.density, [0.5, 0.5], atol=1e-12)


class TestFiniteModel:
    def test_closed_form_agreement(self, qutrit_model, surrogate, rng):
        rho0 = random_density(3, rng)
        times = np.linspace(0.0, 5.0, 26)
        brute = full_evolution(qutrit_model, np.kron(rho0, surrogate.omega), times)
        mu = spectral_density_from_operator(surrogate.v_e, surrogate.omega)
        spec = validate_model(qutrit_model.h_s, qutrit_model.v_s)
        _, closed = reduced_blocks_factorized(rho0, spec, mu, times)
        assert np.max(np.abs(brute - closed)) <= 1e-10

    @pytest.mark.parametrize("m, n", [(0, 1), (0, 2), (2, 1), (1, 1)])
    def test_gamma_evolution(self, qutrit_model, surrogate, m, n):
        times = np.linspace(0.0, 4.0, 9)
        direct = gamma_evolution_check(qutrit_model, surrogate.omega, m, n, times)
        mu = spectral_density_from_operator(surrogate.v_e, surrogate.omega)
        table = sector_chi_table(np.array([-1.0, 0.0, 1.0]), mu, times)
        np.testing.assert_allclose(direct, table[:, m, n], atol=1e-10)

    def test_noncommuting_environment(self):
        with pytest.raises(AssumptionViolatedError) as e:
            FiniteModel.build(np.zeros((2, 2)), np.diag([0.5, -0.5]), np.diag([0.0, 1.0]),
                              [[0.0, 1.0], [1.0, 0.0]], commuting=True)
        assert e.value.which.startswith("assumption 3")

    def test_kron_order(self):
        model = FiniteModel.build(np.diag([1.0, 2.0]), np.zeros((2, 2)), np.diag([0.0, 10.0, 20.0]), np.zeros((3, 3)))
        np.testing.assert_allclose(np.real(np.diag(model.h_total)), [1, 11, 21, 2, 12, 22])

    def test_dimension_cap(self):
        model = FiniteModel.build(np.eye(65), np.eye(65), np.eye(64), np.eye(64))
        with pytest.raises(DimensionCapError):
            full_evolution(model, np.eye(2) / 2, [0.0])

    def test_state_dimension(self, qutrit_model):
        with pytest.raises(DimensionMismatchError):
            full_evolution(qutrit_model, np.eye(4) / 4, [0.0])


class TestFockOracle:
    @pytest.mark.parametrize("eps", [[1.0], [1.0, 2.5]])
    def test_commutator(self, eps):
        assert FockOracle(eps, n_max=12).commutator_defect() < 1e-12

    def test_too_many_modes(self):
        with pytest.raises(ValueError):
            FockOracle([1.0, 2.0, 3.0], n_max=4)

    def test_dimension_cap(self):
        with pytest.raises(DimensionCapError):
            FockOracle([1.0, 2.0], n_max=65)

    def test_vacuum(self):
        oracle = FockOracle([1.0], n_max=20)
        assert oracle.tail_mass(oracle.vacuum) == 0.0
        q = oracle.phi([1.0])
        assert fock_expectation(oracle, q @ q) == pytest.approx(0.5)

    def test_energies(self):
        oracle = FockOracle([1.0, 2.5], n_max=4)
        assert oracle.energies[4 * 1 + 2] == pytest.approx(1.0 + 5.0)

    def test_truncation(self):
        oracle = FockOracle([1.0], n_max=20)
        with pytest.raises(TruncationTooSmallError):
            oracle.check_truncation(oracle.coherent([4.0], [0.0]))

    def test_weyl_vacuum_expectation(self):
        oracle = FockOracle([1.0], n_max=40)
        value = np.vdot(oracle.vacuum, oracle.weyl([0.5], [0.7]) @ oracle.vacuum)
        assert value == pytest.approx(math.exp(-0.25 * (0.25 + 0.49)), abs=1e-12)

    def test_chi_matches_closed_form(self):
        oracle = FockOracle([1.0], n_max=40)
        f0, alpha, beta = 0.5, 0.5, -0.5
        times = np.linspace(0.0, 10.0, 41)
        start = oracle.coherent([0.3], [-0.2])
        brute = fock_chi(oracle, oracle.h_e + alpha * oracle.phi([f0]), oracle.h_e + beta * oracle.phi([f0]),
                         times, [(1.0, start)])
        closed = single_mode_chi(1.0, f0, alpha, beta, times, CoherentMixture.single(0.3, -0.2))
        np.testing.assert_allclose(brute, closed, atol=1e-6)

    def test_free_evolution_rotates_weyl_operator(self):
        oracle = FockOracle([1.0], n_max=40)
        t, f, g = 0.7, 1.0, 0.0
        c, s = math.cos(t), math.sin(t)
        conjugated = oracle.free_evolution(-t) @ oracle.weyl([f], [g]) @ oracle.free_evolution(t)
        np.testing.assert_allclose(conjugated, oracle.weyl([c * f + s * g], [c * g - s * f]), atol=1e-10)

    def test_free_evolution_is_diagonal(self):
        oracle = FockOracle([2.0], n_max=5)
        np.testing.assert_allclose(np.diag(oracle.free_evolution(0.5)), np.exp(-1j * np.arange(5.0)))

    @pytest.mark.parametrize("eps", [1.0, 2.0])
    def test_chi_matches_closed_form__unequal_couplings(self, eps):
        oracle = FockOracle([1.0], n_max=60)
        f0, alpha, beta = 0.8, 0.5, -0.25
        times = np.linspace(0.0, 12.0, 49)
        start = oracle.coherent([0.3], [0.15])
        brute = fock_chi(oracle, oracle.oscillator_hamiltonian(eps, alpha * f0),
                         oracle.oscillator_hamiltonian(eps, beta * f0), times, [(1.0, start)])
        closed = single_mode_chi(eps, f0, alpha, beta, times, CoherentMixture.single(0.3, 0.15))
        np.testing.assert_allclose(brute, closed, atol=1e-8)

    def test_field_chi_matches_fock_at_higher_frequency(self):
        eps, f0, alpha, beta = 2.0, 1.0, 0.6, -0.1
        oracle = FockOracle([eps], n_max=60)
        times = np.linspace(0.0, 8.0, 33)
        mixture = CoherentMixture((CoherentTerm(0.7, np.zeros(1), np.zeros(1)),
                                   CoherentTerm(0.3, np.array([0.2]), np.array([-0.1]))))
        vectors = [(term.weight, oracle.coherent(term.f, term.g)) for term in mixture.terms]
        brute = fock_chi(oracle, oracle.h_e + alpha * oracle.phi([f0]), oracle.h_e + beta * oracle.phi([f0]),
                         times, vectors)
        field = chi_vanhove(mixture, ModeFunction.single_mode(eps, f0), alpha, beta, times)
        np.testing.assert_allclose(brute, field, atol=1e-8)
