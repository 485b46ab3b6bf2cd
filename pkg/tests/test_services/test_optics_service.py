import math

import numpy as np
import pytest

from app.models.protocol_model import BasisTag
from app.schemas.optics_schemas import DetectionModel, PolarizationAmplitude
from app.schemas.protocol_schemas import BASIS_S, PAULI_X, PAULI_Z, BasisObservable, SystemParams, symmetric_config
from app.services.optics_service import (
    build_fock_yield_table,
    coherent_setting_statistics,
    dark_count_floor,
    eigenstate_amplitudes,
    fock_setting_statistics,
    lossless_occupation_distribution,
    mixture_tolerances,
    observed_statistics,
    oracle_table,
    poisson_mixture_residuals,
    setting_amplitudes,
)
from app.utils.exceptions import DomainError
from tests.conftest import FIVE_DECOYS

H = PolarizationAmplitude(h=1.0, v=0.0)
V = PolarizationAmplitude(h=0.0, v=1.0)


def test_eigenstates_of_z_are_h_and_v():
    assert eigenstate_amplitudes(PAULI_Z, 0).key() == pytest.approx((1.0, 0.0))
    assert eigenstate_amplitudes(PAULI_Z, 1).key() == pytest.approx((0.0, 1.0))


def test_eigenstates_of_x_are_diagonal():
    plus = eigenstate_amplitudes(PAULI_X, 0)
    minus = eigenstate_amplitudes(PAULI_X, 1)
    assert plus.key() == pytest.approx((math.sqrt(0.5), math.sqrt(0.5)))
    assert minus.key() == pytest.approx((math.sqrt(0.5), -math.sqrt(0.5)))


def test_eigenstate_of_tilted_basis_is_normalized_and_aligned():
    amplitude = eigenstate_amplitudes(BASIS_S, 0)
    vector = amplitude.as_array()
    assert amplitude.norm_squared == pytest.approx(1.0)
    assert np.allclose(BASIS_S.matrix() @ vector, vector)


def test_eigenstate_rejects_complex_basis_and_bad_bit():
    with pytest.raises(DomainError):
        eigenstate_amplitudes(BasisObservable(bloch=(0.0, 1.0, 0.0)), 0)
    with pytest.raises(DomainError):
        eigenstate_amplitudes(PAULI_Z, 2)


# Test two photons of equal polarization always bunch (Hong-Ou-Mandel)
def test_lossless_equal_polarizations_bunch():
    distribution = lossless_occupation_distribution(1, 1, H, H)
    assert sum(distribution.values()) == pytest.approx(1.0)
    for occupation, probability in distribution.items():
        assert occupation[0] + occupation[1] == 2 or occupation[2] + occupation[3] == 2


def test_lossless_distribution_is_normalized_for_multiphoton_inputs():
    diagonal = eigenstate_amplitudes(PAULI_X, 0)
    assert sum(lossless_occupation_distribution(3, 2, diagonal, H).values()) == pytest.approx(1.0, abs=1e-12)


# Test the single-photon-pair psi-minus yields at unit transmittance without dark counts
def test_fock_single_pair_anchor(ideal_detection):
    for tag in (BasisTag.ZZ, BasisTag.XX):
        for i in (0, 1):
            for j in (0, 1):
                amps_a, amps_b = setting_amplitudes(tag, i, j)
                stats = fock_setting_statistics(1, 1, amps_a, amps_b, ideal_detection)
                expected = 0.0 if i == j else 0.5
                assert stats.psi_minus_prob == pytest.approx(expected, abs=1e-12)


def test_fock_vacuum_yield_is_dark_count_floor():
    det = DetectionModel(dark_count=1e-3, transmittance_alice=0.5, transmittance_bob=0.5)
    stats = fock_setting_statistics(0, 0, H, V, det)
    assert stats.psi_minus_prob == pytest.approx(dark_count_floor(det), rel=1e-12)


def test_coherent_vacuum_matches_dark_count_floor():
    det = DetectionModel(dark_count=6e-6, transmittance_alice=0.1, transmittance_bob=0.1)
    stats = coherent_setting_statistics(H, V, 0.0, 0.0, det)
    assert stats.psi_minus_prob == pytest.approx(dark_count_floor(det), rel=1e-9)


def test_coherent_statistics_reject_bad_quadrature(ideal_detection):
    with pytest.raises(DomainError):
        coherent_setting_statistics(H, V, 0.1, 0.1, ideal_detection, quadrature_points=15)
    with pytest.raises(DomainError):
        coherent_setting_statistics(H, V, -0.1, 0.1, ideal_detection)


def test_fock_table_rejects_zero_cutoff(five_intensity_config):
    with pytest.raises(DomainError):
        build_fock_yield_table(five_intensity_config, 0)


# Test the singlet limit: without dark counts the single-photon CHSH value is Tsirelson's bound
def test_oracle_singlet_limit_without_dark_counts():
    system = SystemParams(dark_count=0.0, det_efficiency=0.145, fiber_loss=0.2, recon_efficiency=1.16)
    table = oracle_table(symmetric_config(FIVE_DECOYS, 0.3, system))
    assert table.g11 == pytest.approx(2.0 * math.sqrt(2.0), abs=1e-6)
    assert table.e11_xx == pytest.approx(0.0, abs=1e-12)
    assert table.error_rate(BasisTag.ZZ)[1, 1] == pytest.approx(0.0, abs=1e-12)


def test_oracle_with_dark_counts_stays_below_tsirelson(reference_system):
    table = oracle_table(symmetric_config(FIVE_DECOYS, 0.3, reference_system))
    assert 2.7 < table.g11 <= 2.0 * math.sqrt(2.0) + 1e-9
    assert 0.0 < table.y11_zz < 1.0


def test_observed_statistics_shapes(observed_10km):
    assert observed_10km.bit_yields[BasisTag.ZZ].shape == (5, 5, 2, 2)
    assert observed_10km.signal_index == (4, 4)
    gain = observed_10km.gain_zz
    assert np.all(gain >= 0.0) and np.all(gain <= 1.0)
    assert gain[4, 4] > gain[1, 1] > gain[0, 0]
    assert not observed_10km.degenerate(BasisTag.ZZ).any()


def test_observed_errors_are_small_at_signal(observed_10km):
    k, l = observed_10km.signal_index
    assert 0.0 < observed_10km.error_zz[k, l] < 0.5


# Test the coherent-state model equals the Poisson mixture of Fock-state yields
@pytest.mark.parametrize("distance", [0.0, 25.0, 50.0])
def test_poisson_mixture_equivalence(reference_system, distance):
    config = symmetric_config(FIVE_DECOYS, 0.3, reference_system).at_distance(distance)
    residuals = poisson_mixture_residuals(config, 8)
    tolerance = mixture_tolerances(config, 8)
    for residual in residuals.values():
        assert np.all(residual.max(axis=(2, 3)) <= tolerance)


def test_phase_average_converges_by_64_nodes():
    det = DetectionModel(dark_count=6e-6, transmittance_alice=1.0, transmittance_bob=1.0)
    for tag in (BasisTag.QS, BasisTag.XX, BasisTag.ZZ):
        for i, j in ((0, 0), (0, 1), (1, 1)):
            amps_a, amps_b = setting_amplitudes(tag, i, j)
            for mu, nu in ((0.01, 0.3), (0.3, 0.3), (1.0, 0.5)):
                coarse = coherent_setting_statistics(amps_a, amps_b, mu, nu, det, quadrature_points=64)
                fine = coherent_setting_statistics(amps_a, amps_b, mu, nu, det, quadrature_points=128)
                assert abs(coarse.psi_minus_prob - fine.psi_minus_prob) < 1e-10


# Test a global phase on one input leaves Fock-state yields unchanged
def test_fock_yields_ignore_global_phase(reference_system):
    det = DetectionModel.from_system(reference_system)
    for tag in (BasisTag.QS, BasisTag.XX):
        amps_a, amps_b = setting_amplitudes(tag, 0, 1)
        for theta in (0.3, 1.7, math.pi):
            phase = complex(math.cos(theta), math.sin(theta))
            rotated = PolarizationAmplitude(h=amps_b.h * phase, v=amps_b.v * phase)
            for m, n in ((1, 1), (2, 1), (2, 3)):
                reference = fock_setting_statistics(m, n, amps_a, amps_b, det).psi_minus_prob
                assert fock_setting_statistics(m, n, amps_a, rotated, det).psi_minus_prob == pytest.approx(reference, rel=1e-12, abs=1e-15)


def test_yields_do_not_grow_with_loss_without_dark_counts():
    system = SystemParams(dark_count=0.0, det_efficiency=0.145, fiber_loss=0.2, recon_efficiency=1.16)
    config = symmetric_config(FIVE_DECOYS, 0.3, system)
    tags = (BasisTag.ZZ, BasisTag.QS)
    previous = None
    for distance in (0.0, 20.0, 50.0, 100.0):
        current = observed_statistics(config.at_distance(distance), tags)
        if previous is not None:
            for tag in tags:
                assert np.all(current.bit_yields[tag] <= previous.bit_yields[tag] + 1e-18)
        previous = current


def test_zz_statistics_are_symmetric_under_bit_relabeling(observed_10km):
    zz = observed_10km.bit_yields[BasisTag.ZZ]
    for k in range(zz.shape[0]):
        assert zz[k, k, 0, 1] == pytest.approx(zz[k, k, 1, 0], rel=1e-12)
        assert zz[k, k, 0, 0] == pytest.approx(zz[k, k, 1, 1], rel=1e-12)
