import numpy as np
import pytest

from decoseed.araki_zurek import reduced_blocks_factorized
from decoseed.const import MOLLER_HALVING_RATIO
from decoseed.exc import DimensionMismatchError, NonUnitaryInputError, PotentialTooStrongError
from decoseed.oracle import equal_weight_surrogate, spectral_density_from_operator
from decoseed.qcore import random_density, random_unitary
from decoseed.scattering import (
    MollerKernel,
    ScatteringModel,
    decay_times,
    equivalence_residual,
    isospectral_potential,
    moller_approx,
    moller_defects,
    random_potential,
    residual_from_matrices,
    residual_trend,
    scattering_block_decay,
    suppression_factor,
    unitarity_defect,
)

DIM_E = 8
STRENGTH = 0.05


@pytest.fixture
def surrogate(gaussian_mu):
    return equal_weight_surrogate(gaussian_mu, DIM_E)


@pytest.fixture
def h_e():
    return np.diag(np.linspace(-1.0, 1.0, DIM_E))


@pytest.fixture
def free_model(qubit_spec, surrogate, h_e):
    return ScatteringModel.build(qubit_spec.h_s, qubit_spec.v_s, h_e, surrogate.v_e, np.zeros((2 * DIM_E, 2 * DIM_E)))


@pytest.fixture
def weak_model(qubit_spec, surrogate, h_e, rng):
    v = random_potential(2 * DIM_E, STRENGTH, rng)
    return ScatteringModel.build(qubit_spec.h_s, qubit_spec.v_s, h_e, surrogate.v_e, v)


@pytest.fixture
def ladder_free(qubit_spec, surrogate):
    h_e = np.diag(np.arange(DIM_E, dtype=float))
    return ScatteringModel.build(qubit_spec.h_s, qubit_spec.v_s, h_e, surrogate.v_e, np.zeros((2 * DIM_E, 2 * DIM_E)))


@pytest.fixture
def iso_model(ladder_free, rng):
    v = isospectral_potential(ladder_free.h0, STRENGTH, rng, min_gap=1.0)
    return ScatteringModel.build(ladder_free.spec.h_s, ladder_free.spec.v_s, ladder_free.h_e, ladder_free.v_e, v)


@pytest.fixture
def w0(plus_state, surrogate):
    return np.kron(plus_state, surrogate.omega)


class TestBuild:
    def test_potential_cap(self, qubit_spec, surrogate, h_e):
        v = 2.0 * np.eye(2 * DIM_E)
        with pytest.raises(PotentialTooStrongError) as e:
            ScatteringModel.build(qubit_spec.h_s, qubit_spec.v_s, h_e, surrogate.v_e, v)
        assert "exceeds the cap" in e.value.args[0]

    def test_potential_shape(self, qubit_spec, surrogate, h_e):
        with pytest.raises(DimensionMismatchError):
            ScatteringModel.build(qubit_spec.h_s, qubit_spec.v_s, h_e, surrogate.v_e, np.zeros((DIM_E, DIM_E)))

    def test_random_potential(self, rng):
        v = random_potential(6, 0.3, rng)
        assert np.linalg.norm(v, ord=2) == pytest.approx(0.3)
        np.testing.assert_allclose(v, v.conj().T)

    def test_is_free(self, free_model, weak_model):
        assert free_model.is_free
        assert not weak_model.is_free
        assert weak_model.dim == 2 * DIM_E

    def test_isospectral_potential(self, ladder_free, rng):
        v = isospectral_potential(ladder_free.h0, 0.1, rng, min_gap=1.0)
        assert np.linalg.norm(v, ord=2) == pytest.approx(0.1, rel=1e-8)
        np.testing.assert_allclose(np.linalg.eigvalsh(ladder_free.h0 + v), np.linalg.eigvalsh(ladder_free.h0), atol=1e-10)

    def test_isospectral_potential__zero(self, ladder_free, rng):
        np.testing.assert_array_equal(isospectral_potential(ladder_free.h0, 0.0, rng), 0.0)

    @pytest.mark.parametrize("strength, min_gap", [(-0.1, 1.0), (0.1, 1e3)])
    def test_isospectral_potential__invalid(self, ladder_free, rng, strength, min_gap):
        with pytest.raises(ValueError):
            isospectral_potential(ladder_free.h0, strength, rng, min_gap=min_gap)


class TestBlockDecay:
    def test_free_control_matches_closed_form(self, free_model, surrogate, qubit_spec, plus_state, w0):
        times = np.linspace(0.0, 5.0, 26)
        curve, states = scattering_block_decay(free_model, w0, times)
        mu = spectral_density_from_operator(surrogate.v_e, surrogate.omega)
        closed_curve, closed = reduced_blocks_factorized(plus_state, qubit_spec, mu, times)
        assert curve.chi is None
        assert np.max(np.abs(states - closed)) <= 1e-10
        np.testing.assert_allclose(curve.block_tn, closed_curve.block_tn, atol=1e-10)

    def test_weak_potential_stays_close(self, free_model, weak_model, w0):
        times = np.linspace(0.0, 5.0, 26)
        free, _ = scattering_block_decay(free_model, w0, times)
        perturbed, states = scattering_block_decay(weak_model, w0, times)
        drift = np.abs(perturbed.block_tn[:, 0] - free.block_tn[:, 0])
        assert np.all(drift <= 2 * STRENGTH * times + 1e-10)
        np.testing.assert_allclose(np.trace(states, axis1=1, axis2=2), 1.0, atol=1e-10)

    def test_suppression_factor(self, free_model, w0):
        curve, _ = scattering_block_decay(free_model, w0, np.linspace(0.0, 5.0, 26))
        assert suppression_factor(curve) == pytest.approx(curve.block_tn[0, 0] / curve.block_tn[-1, 0])

    def test_weak_isospectral_suppression(self, iso_model, w0):
        curve, _ = scattering_block_decay(iso_model, w0, np.linspace(0.0, 5.0, 26))
        assert curve.block_tn[0, 0] == pytest.approx(0.5)
        assert suppression_factor(curve) >= 10

    def test_decay_times(self, free_model, surrogate, w0):
        zero = np.kron(np.diag([1.0, 0.0]), surrogate.omega)
        found = decay_times(free_model, [w0, zero], np.linspace(0.0, 5.0, 51))
        assert len(found) == 2
        assert 1.5 <= found[0] <= 2.5
        assert found[1] is None


class TestMoller:
    def test_free_model_is_identity(self, free_model):
        report = moller_approx(free_model, 5.0)
        np.testing.assert_array_equal(report.omega, np.eye(2 * DIM_E))
        assert report.defect == 0.0

    def test_unitary(self, weak_model):
        report = moller_approx(weak_model, 5.0, 16)
        assert unitarity_defect(report.omega) <= 1e-10
        assert report.n_samples == 16
        assert report.defect >= 0

    @pytest.mark.parametrize("horizon, n_samples", [(0.0, 8), (-1.0, 8), (5.0, 4)])
    def test_bad_arguments(self, weak_model, horizon, n_samples):
        with pytest.raises(ValueError):
            moller_approx(weak_model, horizon, n_samples)

    def test_defects(self, weak_model):
        defects = moller_defects(weak_model, [2.0, 4.0])
        assert len(defects) == 2
        assert all(d >= 0 for d in defects)

    def test_abel_defect_halves(self, iso_model):
        defects = moller_defects(iso_model, [5.0, 10.0, 20.0, 40.0])
        assert all(b < a for a, b in zip(defects, defects[1:]))
        ratios = [b / a for a, b in zip(defects, defects[1:])]
        assert all(0.4 <= ratio <= MOLLER_HALVING_RATIO for ratio in ratios)

    def test_abel_intertwines(self, iso_model):
        errors = []
        for horizon in (10.0, 100.0, 1000.0):
            omega = moller_approx(iso_model, horizon).omega
            errors.append(np.linalg.norm(iso_model.h @ omega - omega @ iso_model.h0, ord=2))
        assert errors[0] > errors[1] > errors[2]
        assert errors[2] <= 0.05 * errors[0]

    def test_window_kernel(self, iso_model):
        report = moller_approx(iso_model, 5.0, 16, MollerKernel.WINDOW)
        assert report.kernel is MollerKernel.WINDOW
        assert unitarity_defect(report.omega) <= 1e-10
        assert moller_approx(iso_model, 5.0, kernel="abel").kernel is MollerKernel.ABEL


class TestResidual:
    def test_free_model_has_no_residual(self, free_model, w0):
        omega = moller_approx(free_model, 5.0).omega
        assert equivalence_residual(free_model, w0, omega, 3.0) == pytest.approx(0.0, abs=1e-12)
        assert residual_trend(free_model, w0, omega, 4.0, n_samples=4) == pytest.approx((0.0, 0.0), abs=1e-12)

    def test_weak_model_residual_is_bounded(self, weak_model, w0):
        omega = moller_approx(weak_model, 5.0).omega
        residual = equivalence_residual(weak_model, w0, omega, 2.0)
        assert 0.0 <= residual <= 2.0

    def test_rotation_invariance(self, iso_model, w0, rng):
        omega = moller_approx(iso_model, 10.0).omega
        u = random_unitary(iso_model.dim, rng)

        def rotate(a):
            return u @ a @ u.conj().T

        direct = residual_from_matrices(iso_model.h, iso_model.h0, w0, omega, 3.0)
        rotated = residual_from_matrices(rotate(iso_model.h), rotate(iso_model.h0), rotate(w0), rotate(omega), 3.0)
        assert rotated == pytest.approx(direct, rel=1e-8, abs=1e-12)

    def test_weak_residual_is_stationary(self, iso_model, w0):
        omega = moller_approx(iso_model, 20.0).omega
        early, late = residual_trend(iso_model, w0, omega, 20.0)
        assert 0 < early < STRENGTH
        assert 0 < late < STRENGTH
        assert late <= 1.1 * early

    def test_non_unitary(self, rng):
        w = random_density(2, rng)
        with pytest.raises(NonUnitaryInputError):
            residual_from_matrices(np.eye(2), np.eye(2), w, 2 * np.eye(2), 1.0)

    def test_shape_mismatch(self, rng):
        w = random_density(2, rng)
        with pytest.raises(DimensionMismatchError):
            residual_from_matrices(np.eye(2), np.eye(2), w, np.eye(3), 1.0)

    def test_state_dimension(self, weak_model):
        with pytest.raises(DimensionMismatchError):
            equivalence_residual(weak_model, np.eye(2) / 2, np.eye(2 * DIM_E), 1.0)
