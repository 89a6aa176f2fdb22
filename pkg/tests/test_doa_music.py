import math

import numpy as np
import pytest

from echodoa.doa_music import (
    CONVERGED,
    FALLBACK,
    DoaEstimate,
    MusicOptions,
    covariance,
    estimate_doa_music,
    grating_lobe_set,
    noise_subspace,
    pseudospectrum,
)
from echodoa.errors import InputError, TooFewSnapshotsError
from echodoa.signal_sim import (
    ArrayGeometry,
    ComplexBaseband,
    SimConfig,
    SourceScenario,
    add_awgn,
    steering_vector,
    synthesize_echo,
    to_baseband,
    wavelength,
)

CFG = SimConfig()
LAM = wavelength(CFG)
HALF_WL = ArrayGeometry.pair(LAM / 2.0)
ALIASED = ArrayGeometry.pair(1.5 * LAM)

# grating-lobe companions of 30 degrees at d = 1.5 wavelengths:
# sin(t') in {0.5 - 4/3, 0.5 - 2/3, 0.5}
TRIPLET = (math.degrees(math.asin(0.5 - 4.0 / 3.0)),
           math.degrees(math.asin(0.5 - 2.0 / 3.0)),
           30.0)


def steering_baseband(theta_deg, geometry, n=1000, burst=(400, 460),
                      seed=0):
    """Synthetic rank-1 baseband: a(theta) times an envelope burst."""
    a = steering_vector(geometry, theta_deg, LAM)
    env = np.zeros(n)
    lo, hi = burst
    env[lo:hi] = np.hanning(hi - lo)
    rng = np.random.default_rng(seed)
    coeff = env * np.exp(1j * rng.uniform(0, 2 * np.pi))
    return ComplexBaseband(data=a[:, None] * coeff[None, :],
                           sample_rate=CFG.effective_rate)


class TestCovariance:
    def test_rank_one_example(self):
        # snapshots proportional to [1, -i]: outer product worked by hand
        rng = np.random.default_rng(0)
        s = np.exp(1j * rng.uniform(0, 2 * np.pi, 64))
        snaps = np.array([1.0, -1.0j])[:, None] * s[None, :]
        r = covariance(snaps)
        np.testing.assert_allclose(r, [[1.0, 1.0j], [-1.0j, 1.0]],
                                   atol=1e-12)

    def test_zero_snapshots(self):
        r = covariance(np.zeros((2, 16), dtype=complex))
        assert (r == 0.0).all()

    def test_too_few_snapshots(self):
        with pytest.raises(TooFewSnapshotsError):
            covariance(np.zeros((3, 2), dtype=complex))

    def test_awgn_covariance_near_identity(self):
        rng = np.random.default_rng(123)
        sigma = 0.7
        snaps = (rng.normal(0, sigma / math.sqrt(2), (2, 10_000))
                 + 1j * rng.normal(0, sigma / math.sqrt(2), (2, 10_000)))
        r = covariance(snaps)
        var = sigma ** 2
        assert abs(r[0, 0].real - var) < 0.05 * var
        assert abs(r[1, 1].real - var) < 0.05 * var
        assert abs(r[0, 1]) < 0.05 * var

    def test_hermitian_psd_for_random_snapshots(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            k = rng.integers(2, 40)
            snaps = rng.normal(size=(2, k)) + 1j * rng.normal(size=(2, k))
            r = covariance(snaps)
            assert np.allclose(r, r.conj().T, rtol=1e-12, atol=1e-12)
            eigvals = np.linalg.eigvalsh(r)
            assert eigvals.min() >= -1e-12 * np.trace(r).real


class TestNoiseSubspace:
    def test_hand_checked_example(self):
        r = np.array([[1.0, 1.0j], [-1.0j, 1.0]])
        sub = noise_subspace(r)
        expected = np.array([1.0, 1.0j]) / math.sqrt(2)
        np.testing.assert_allclose(sub.matrix[:, 0], expected, atol=1e-12)
        # orthogonal to the signal vector [1, -i]
        assert abs(np.vdot(np.array([1.0, -1.0j]), sub.matrix[:, 0])) < 1e-12

    def test_diagonal_covariance(self):
        sub = noise_subspace(np.diag([2.0, 1.0]).astype(complex))
        np.testing.assert_allclose(sub.matrix[:, 0], [0.0, 1.0], atol=1e-12)
        assert sub.gap_ratio == pytest.approx(0.5)
        assert not sub.degenerate

    def test_identity_degenerate_tiebreak(self):
        sub = noise_subspace(np.eye(2, dtype=complex))
        assert sub.degenerate
        assert sub.gap_ratio == pytest.approx(1.0)
        np.testing.assert_allclose(sub.matrix[:, 0], [0.0, 1.0], atol=1e-12)

    def test_off_diagonal_dominant_axis(self):
        # nearly diagonal with a < c keeps the noise axis on element 0
        r = np.array([[1.0, 1e-14], [1e-14, 3.0]], dtype=complex)
        sub = noise_subspace(r)
        np.testing.assert_allclose(np.abs(sub.matrix[:, 0]), [1.0, 0.0],
                                   atol=1e-9)

    def test_phase_convention_first_component_real_positive(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            snaps = rng.normal(size=(2, 32)) + 1j * rng.normal(size=(2, 32))
            sub = noise_subspace(covariance(snaps))
            lead = sub.matrix[np.flatnonzero(
                np.abs(sub.matrix[:, 0]) > 1e-12)[0], 0]
            assert lead.imag == pytest.approx(0.0, abs=1e-12)
            assert lead.real > 0

    def test_orthogonality_to_true_steering(self):
        for theta in (-50.0, -10.0, 0.0, 25.0, 71.0):
            base = steering_baseband(theta, HALF_WL)
            snaps = base.data[:, 400:460]
            sub = noise_subspace(covariance(snaps))
            a = steering_vector(HALF_WL, theta, LAM)
            assert abs(np.vdot(a, sub.matrix[:, 0])) < 1e-6

    def test_rank_deficiency_of_noiseless_covariance(self):
        base = steering_baseband(33.0, HALF_WL)
        sub = noise_subspace(covariance(base.data[:, 400:460]))
        assert sub.gap_ratio < 1e-10

    def test_rejects_bad_source_count(self):
        with pytest.raises(InputError):
            noise_subspace(np.eye(2, dtype=complex), source_count=2)


class TestPseudospectrum:
    def test_peak_at_thirty_degrees(self):
        sub = noise_subspace(np.array([[1.0, 1.0j], [-1.0j, 1.0]]))
        ps = pseudospectrum(sub, HALF_WL, LAM, grid_step_deg=0.25)
        top = ps.angles_deg[np.argmax(ps.power)]
        assert abs(top - 30.0) <= 0.25
        assert ps.peaks[0].angle_deg == pytest.approx(top)

    def test_value_at_minus_ninety(self):
        # a(-90) = [1, -1]; |Vn^H a|^2 = 1, so P = M / 1 = 2
        sub = noise_subspace(np.array([[1.0, 1.0j], [-1.0j, 1.0]]))
        ps = pseudospectrum(sub, HALF_WL, LAM, grid_step_deg=0.25)
        p_edge = ps.power[ps.angles_deg == -90.0][0]
        assert p_edge == pytest.approx(2.0, abs=1e-9)
        assert p_edge < 1e-6 * ps.power.max()

    def test_aliased_triplet_peaks(self):
        base = steering_baseband(30.0, ALIASED)
        sub = noise_subspace(covariance(base.data[:, 400:460]))
        ps = pseudospectrum(sub, ALIASED, LAM, grid_step_deg=0.25)
        peak_angles = sorted(pk.angle_deg for pk in ps.peaks[:3])
        for found, expected in zip(peak_angles, TRIPLET):
            assert abs(found - expected) <= 0.25

    def test_mirror_symmetry_of_conjugate_snapshots(self):
        base = steering_baseband(37.0, HALF_WL)
        snaps = base.data[:, 400:460]
        ps_pos = pseudospectrum(noise_subspace(covariance(snaps)),
                                HALF_WL, LAM)
        ps_neg = pseudospectrum(noise_subspace(covariance(snaps.conj())),
                                HALF_WL, LAM)
        np.testing.assert_allclose(ps_neg.power, ps_pos.power[::-1],
                                   rtol=1e-9)

    def test_power_positive_and_bounded_by_floor(self):
        base = steering_baseband(10.0, HALF_WL)
        sub = noise_subspace(covariance(base.data[:, 400:460]))
        ps = pseudospectrum(sub, HALF_WL, LAM)
        assert (ps.power > 0).all()
        assert ps.power.max() <= 1e12 + 1e-6

    def test_table_export(self, tmp_path):
        sub = noise_subspace(np.array([[1.0, 1.0j], [-1.0j, 1.0]]))
        ps = pseudospectrum(sub, HALF_WL, LAM, grid_step_deg=1.0)
        path = tmp_path / "spectrum.txt"
        ps.write_table(path)
        rows = [ln.split() for ln in path.read_text().splitlines()
                if not ln.startswith("#")]
        assert len(rows) == ps.angles_deg.size
        np.testing.assert_allclose([float(r[0]) for r in rows],
                                   ps.angles_deg)
        np.testing.assert_allclose([float(r[1]) for r in rows], ps.power)


class TestGratingLobes:
    def test_half_wavelength_is_unambiguous(self):
        assert grating_lobe_set(30.0, HALF_WL, LAM) == [30.0]

    def test_aliased_thirty_degrees(self):
        got = grating_lobe_set(30.0, ALIASED, LAM)
        np.testing.assert_allclose(got, TRIPLET, atol=1e-6)
        np.testing.assert_allclose(got, [-56.443, -9.594, 30.0], atol=1e-3)

    def test_aliased_broadside(self):
        got = grating_lobe_set(0.0, ALIASED, LAM)
        np.testing.assert_allclose(got, [-41.810, 0.0, 41.810], atol=1e-3)

    def test_members_share_one_lattice(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            d = rng.uniform(0.6, 2.5) * LAM
            theta = rng.uniform(-90, 90)
            geo = ArrayGeometry.pair(d)
            lobes = grating_lobe_set(theta, geo, LAM)
            assert theta in lobes
            for member in lobes:
                again = grating_lobe_set(member, geo, LAM)
                assert len(again) == len(lobes)
                np.testing.assert_allclose(
                    sorted(again), sorted(lobes), atol=1e-6)


class TestEstimateDoaMusic:
    def test_noiseless_thirty_degrees_full_pipeline(self):
        scenario = SourceScenario(doa_deg=30.0, range_m=1.0)
        base = to_baseband(synthesize_echo(scenario, HALF_WL, CFG), CFG)
        est = estimate_doa_music(base, HALF_WL, CFG)
        assert est.status == CONVERGED
        assert abs(est.angle_deg - 30.0) <= 0.25
        assert est.ambiguity_deg == (est.angle_deg,)

    def test_pure_noise_falls_back_to_zero(self):
        silent = synthesize_echo(SourceScenario(doa_deg=0.0, range_m=1.0),
                                 HALF_WL, CFG)
        silent.data[:] = 0.0
        noisy = add_awgn(silent, 0.0, seed=7, signal_power=1.0)
        base = to_baseband(noisy, CFG)
        est = estimate_doa_music(base, HALF_WL, CFG)
        assert est.status == FALLBACK
        assert est.angle_deg == 0.0
        assert est.ambiguity_deg == (0.0,)

    def test_aliased_converges_with_triplet_ambiguity(self):
        scenario = SourceScenario(doa_deg=30.0, range_m=1.0)
        base = to_baseband(synthesize_echo(scenario, ALIASED, CFG), CFG)
        est = estimate_doa_music(base, ALIASED, CFG)
        assert est.status == CONVERGED
        assert len(est.ambiguity_deg) == 3
        for got, expected in zip(sorted(est.ambiguity_deg), TRIPLET):
            assert abs(got - expected) <= 0.5

    def test_exhaustive_noiseless_sweep(self):
        # every 1-degree truth over the open domain recovers within one
        # grid step (the +-90 endpoints share one steering vector, so
        # they are mathematically indistinguishable)
        for theta in range(-89, 90):
            base = steering_baseband(float(theta), HALF_WL, seed=theta + 90)
            est = estimate_doa_music(base, HALF_WL, CFG)
            assert est.status == CONVERGED
            assert abs(est.angle_deg - theta) <= 0.25, f"theta={theta}"

    def test_channel_mismatch_raises(self):
        base = steering_baseband(0.0, HALF_WL)
        three = ArrayGeometry(element_x=(0.0, 0.003, 0.006))
        with pytest.raises(InputError):
            estimate_doa_music(base, three, CFG)

    def test_fallback_estimate_invariants(self):
        with pytest.raises(InputError):
            DoaEstimate(angle_deg=5.0, status=FALLBACK, ambiguity_deg=(5.0,))
        with pytest.raises(InputError):
            DoaEstimate(angle_deg=5.0, status=CONVERGED, ambiguity_deg=(4.0,))
