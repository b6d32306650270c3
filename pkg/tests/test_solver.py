"""Pressure matching: optimality, regularization behavior, masked solves.

The primary oracle converts each complex system to its real-valued augmented
form and solves the regularized normal equations with a local Gaussian
elimination routine, independently of the production lstsq path.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from pszsim.metrics import broadband_array_effort
from pszsim.room import ATFTensor, FrequencyGrid
from pszsim.scene import mask_indices
from pszsim.solver import (
    IllPosedError,
    IllPosedWarning,
    PreFilterSet,
    TargetATF,
    TuneError,
    pressure_match,
    reproduce_atf,
    solve_masked_pm,
    solve_masked_pm_many,
    tune_regularization,
)


def gaussian_eliminate(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Brute-force solve of a real square system with partial pivoting."""
    n = len(b)
    m = np.hstack([a.astype(float).copy(), b.astype(float).reshape(n, 1)])
    for col in range(n):
        piv = col + int(np.argmax(np.abs(m[col:, col])))
        if m[piv, col] == 0:
            raise ZeroDivisionError("singular system in oracle")
        m[[col, piv]] = m[[piv, col]]
        m[col] = m[col] / m[col, col]
        for row in range(n):
            if row != col:
                m[row] = m[row] - m[row, col] * m[col]
    return m[:, -1]


def pm_oracle(h: np.ndarray, target: np.ndarray, lam: float) -> np.ndarray:
    """Real-augmented normal-equations oracle for the regularized minimizer."""
    m, l = h.shape
    hr = np.block([[h.real, -h.imag], [h.imag, h.real]])  # (2M, 2L)
    gr = np.concatenate([target.real, target.imag])
    a = hr.T @ hr + lam * np.eye(2 * l)
    b = hr.T @ gr
    x = gaussian_eliminate(a, b)
    return x[:l] + 1j * x[l:]


def random_system(rng, m, l):
    h = rng.standard_normal((m, l)) + 1j * rng.standard_normal((m, l))
    g = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return h, g


def objective(h, g, a, lam):
    return float(np.linalg.norm(h @ a - g) ** 2 + lam * np.linalg.norm(a) ** 2)


class TestReproduceATF:
    def _tensor(self, rng, k=3, m=5, l=3):
        grid = FrequencyGrid.uniform(k, 2000.0)
        data = rng.standard_normal((k, m, l)) + 1j * rng.standard_normal((k, m, l))
        return ATFTensor(data, grid), grid

    def test_zero_prefilters_give_zero_field(self, rng):
        h, grid = self._tensor(rng)
        a = PreFilterSet(np.zeros((3, 3), dtype=complex), grid)
        assert np.all(reproduce_atf(h, a) == 0)

    def test_identity_system_returns_prefilters(self, rng):
        grid = FrequencyGrid.uniform(2, 2000.0)
        h = ATFTensor(np.stack([np.eye(4, dtype=complex)] * 2), grid)
        a_data = rng.standard_normal((2, 4)) + 1j * rng.standard_normal((2, 4))
        a = PreFilterSet(a_data, grid)
        np.testing.assert_allclose(reproduce_atf(h, a), a_data, rtol=1e-15)

    def test_matches_triple_loop_oracle(self, rng):
        h, grid = self._tensor(rng, k=4, m=5, l=3)
        a = PreFilterSet(
            rng.standard_normal((4, 3)) + 1j * rng.standard_normal((4, 3)), grid
        )
        got = reproduce_atf(h, a)
        for k in range(4):
            for m in range(5):
                expected = 0j
                for l in range(3):
                    expected += h.data[k, m, l] * a.data[k, l]
                assert abs(got[k, m] - expected) <= 1e-12 * max(abs(expected), 1.0)

    def test_dimension_mismatch_rejected(self, rng):
        h, grid = self._tensor(rng, k=3, m=5, l=3)
        a = PreFilterSet(np.zeros((3, 4), dtype=complex), grid)
        with pytest.raises(ValueError, match="does not match"):
            reproduce_atf(h, a)


class TestPressureMatch:
    def test_scalar_unregularized(self):
        a = pressure_match(np.array([[1.0 + 0j]]), np.array([1.0 + 0j]), 0.0)
        assert a[0] == pytest.approx(1.0)

    def test_scalar_regularized_halves(self):
        a = pressure_match(np.array([[1.0 + 0j]]), np.array([1.0 + 0j]), 1.0)
        assert a[0] == pytest.approx(0.5)

    def test_matches_real_augmented_oracle(self, rng):
        h, g = random_system(rng, 4, 3)
        for lam in (1e-3, 1e-1):
            got = pressure_match(h, g, lam)
            expected = pm_oracle(h, g, lam)
            assert np.linalg.norm(got - expected) <= 1e-8 * np.linalg.norm(expected)

    def test_oracle_agreement_many_random_systems(self, rng):
        # 100 instances, M <= 8, L <= 6, lam in {0, 1e-4, 1e-1}
        lams = (0.0, 1e-4, 1e-1)
        for trial in range(100):
            l = int(rng.integers(1, 7))
            m = int(rng.integers(l, 9))  # M >= L keeps lam = 0 well posed
            h, g = random_system(rng, m, l)
            lam = lams[trial % 3]
            got = pressure_match(h, g, lam)
            expected = pm_oracle(h, g, lam)
            assert np.linalg.norm(got - expected) <= 1e-8 * max(
                np.linalg.norm(expected), 1e-12
            )

    def test_vanishing_gradient(self, rng):
        for _ in range(25):
            h, g = random_system(rng, 6, 4)
            lam = float(10 ** rng.uniform(-6, 0))
            a = pressure_match(h, g, lam)
            grad = h.conj().T @ (h @ a - g) + lam * a
            scale = max(np.linalg.norm(h.conj().T @ g), 1e-12)
            assert np.linalg.norm(grad) <= 1e-8 * scale

    def test_perturbations_never_improve(self, rng):
        h, g = random_system(rng, 6, 4)
        lam = 1e-2
        a = pressure_match(h, g, lam)
        base = objective(h, g, a, lam)
        for _ in range(100):
            delta = rng.standard_normal(4) + 1j * rng.standard_normal(4)
            delta *= 1e-3 / np.linalg.norm(delta)
            assert objective(h, g, a + delta, lam) >= base

    def test_shrinkage_in_lambda(self, rng):
        h, g = random_system(rng, 6, 4)
        lams = np.logspace(-6, 2, 20)
        norms = [np.linalg.norm(pressure_match(h, g, lam)) for lam in lams]
        assert all(b <= a + 1e-12 for a, b in zip(norms, norms[1:]))

    def test_exact_solve_square_invertible(self, rng):
        h = rng.standard_normal((5, 5)) + 1j * rng.standard_normal((5, 5))
        g = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        a = pressure_match(h, g, 0.0)
        assert np.linalg.norm(h @ a - g) <= 1e-10 * np.linalg.norm(g)

    def test_linearity_in_target(self, rng):
        h, g = random_system(rng, 6, 4)
        c = 1.7 - 0.4j
        a1 = pressure_match(h, g, 1e-3)
        a2 = pressure_match(h, c * g, 1e-3)
        np.testing.assert_allclose(a2, c * a1, rtol=1e-10)

    def test_rank_deficient_unregularized_min_norm(self, rng):
        h = np.zeros((4, 3), dtype=complex)
        h[:, 0] = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        h[:, 1] = 2.0 * h[:, 0]
        g = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        with pytest.warns(IllPosedWarning):
            a = pressure_match(h, g, 0.0)
        # minimum-norm solution: gradient of ||Ha-g||^2 vanishes and a is in
        # the row space of H
        grad = h.conj().T @ (h @ a - g)
        assert np.linalg.norm(grad) <= 1e-10 * np.linalg.norm(g)
        with pytest.raises(IllPosedError):
            pressure_match(h, g, 0.0, rank_deficient="error")

    def test_multi_target_matches_single(self, rng):
        h, _ = random_system(rng, 5, 3)
        targets = rng.standard_normal((5, 4)) + 1j * rng.standard_normal((5, 4))
        batch = pressure_match(h, targets, 1e-3)
        for t in range(4):
            single = pressure_match(h, targets[:, t], 1e-3)
            np.testing.assert_allclose(batch[:, t], single, rtol=1e-10)

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            pressure_match(np.eye(2, dtype=complex), np.ones(2, dtype=complex), -1.0)


def _random_ctrl_tensor(rng, k=3, m_bright=144, m_dark=144, l=6):
    grid = FrequencyGrid.uniform(k, 2000.0)
    data = rng.standard_normal((k, m_bright + m_dark, l)) + 1j * rng.standard_normal(
        (k, m_bright + m_dark, l)
    )
    return ATFTensor(data, grid), grid


def _random_target(rng, k=3, m_bright=144, m_dark=144):
    bright = rng.standard_normal((k, m_bright)) + 1j * rng.standard_normal((k, m_bright))
    return TargetATF(bright=bright, num_dark=m_dark)


class TestSolveMaskedPM:
    def test_grid12_equals_unmasked_pm(self, rng):
        h, grid = _random_ctrl_tensor(rng)
        target = _random_target(rng)
        lam = 1e-3
        pf = solve_masked_pm(h, target, mask_indices("Grid-12"), lam)
        for k in range(3):
            rhs = np.concatenate([target.bright[k], np.zeros(144, dtype=complex)])
            expected = pressure_match(h.data[k], rhs, lam)
            np.testing.assert_allclose(pf.data[k], expected, rtol=1e-12)

    def test_grid1_keeps_one_bright_row(self, rng):
        h, grid = _random_ctrl_tensor(rng, k=2)
        target = _random_target(rng, k=2)
        lam = 1e-3
        pf = solve_masked_pm(h, target, mask_indices("Grid-1"), lam)
        # equivalent reduced system: bright row 5*12+5 plus all dark rows
        row = 5 * 12 + 5
        for k in range(2):
            rows = np.concatenate([[row], np.arange(144, 288)])
            rhs = np.concatenate([[target.bright[k, row]], np.zeros(144, dtype=complex)])
            expected = pressure_match(h.data[k][rows], rhs, lam)
            np.testing.assert_allclose(pf.data[k], expected, rtol=1e-12)

    def test_dark_rows_always_retained(self, rng):
        # with a huge dark weight contribution the masked solve must still
        # suppress the dark zone: compare against dropping dark rows
        h, grid = _random_ctrl_tensor(rng, k=2, l=4)
        target = _random_target(rng, k=2)
        pattern = mask_indices("Grid-2#1")
        pf = solve_masked_pm(h, target, pattern, 1e-6)
        dark = h.data[:, 144:, :]
        reproduced_dark = np.einsum("kml,kl->km", dark, pf.data)
        # dark rows outnumber the 4 bright rows; the solution must trade off
        # dark leakage, unlike a bright-only solve
        bright_rows = pattern.flat_indices()
        for k in range(2):
            bright_only = pressure_match(
                h.data[k][bright_rows], target.bright[k][bright_rows], 1e-6
            )
            dark_if_ignored = dark[k] @ bright_only
            assert np.linalg.norm(reproduced_dark[k]) < np.linalg.norm(dark_if_ignored)

    def test_batch_matches_individual_solves(self, rng):
        h, grid = _random_ctrl_tensor(rng, k=2, l=4)
        targets = [_random_target(rng, k=2) for _ in range(3)]
        pattern = mask_indices("Grid-4")
        batch = solve_masked_pm_many(h, targets, pattern, 1e-3)
        for t, pf in zip(targets, batch):
            single = solve_masked_pm(h, t, pattern, 1e-3)
            np.testing.assert_allclose(pf.data, single.data, rtol=1e-9)

    def test_metadata_recorded(self, rng):
        h, grid = _random_ctrl_tensor(rng, k=2, l=4)
        pf = solve_masked_pm(h, _random_target(rng, k=2), mask_indices("Grid-6"), 1e-3)
        assert pf.method == "pm"
        assert pf.mask == "Grid-6"

    def test_shape_mismatch_rejected(self, rng):
        h, grid = _random_ctrl_tensor(rng, k=2, l=4, m_dark=100)
        target = _random_target(rng, k=2, m_dark=144)
        with pytest.raises(ValueError, match="receivers"):
            solve_masked_pm(h, target, mask_indices("Grid-12"), 1e-3)


@pytest.fixture(scope="module")
def tune_fixture(tiny_scene):
    """Simulated control/monitor pair: array effort is physically meaningful."""
    from pszsim.room import simulate_atf

    scene = tiny_scene
    freqs = scene.freq_grid
    speakers = list(scene.array.positions)
    h_ctrl = simulate_atf(scene.room, speakers, scene.control_points(), freqs, scene.max_order)
    h_mon = simulate_atf(scene.room, speakers, scene.monitor_points(), freqs, scene.max_order)
    rng = np.random.default_rng(5)
    nb = scene.config.control_n**2
    targets = []
    for _ in range(4):
        src = scene.sample_virtual_source(rng)
        atf = simulate_atf(
            scene.room, [src], list(scene.control_bright.points), freqs, scene.max_order
        )
        targets.append(TargetATF(bright=atf.data[:, :, 0], num_dark=nb))
    m_mon = scene.config.monitor_n**2
    return h_ctrl, h_mon, targets, m_mon, scene.reference_speaker_index()


def _mean_bae_for(h_ctrl, h_mon, targets, lam, m_mon, ref):
    sets = solve_masked_pm_many(h_ctrl, targets, mask_indices("Grid-12"), lam)
    vals = []
    for s in sets:
        g_b = np.einsum("kml,kl->km", h_mon.data[:, :m_mon, :], s.data)
        vals.append(broadband_array_effort(s.data, h_mon.data[:, :m_mon, :], g_b, ref))
    return float(np.mean(vals))


class TestTuneRegularization:
    def test_effort_monotone_then_fixed_point(self, tune_fixture):
        h_ctrl, h_mon, targets, m_mon, ref = tune_fixture
        # establish the monotone trend on a log grid before trusting bisection
        lams = np.logspace(-8, 2, 11)
        baes = [_mean_bae_for(h_ctrl, h_mon, targets, lam, m_mon, ref) for lam in lams]
        assert all(b <= a + 1e-9 for a, b in zip(baes, baes[1:]))
        target_bae = _mean_bae_for(h_ctrl, h_mon, targets, 1e-2, m_mon, ref)
        result = tune_regularization(
            h_ctrl,
            h_mon,
            targets,
            target_bae_db=target_bae,
            tol_db=0.1,
            num_bright_monitor=m_mon,
            ref_speaker=ref,
        )
        assert abs(result.achieved_bae_db - target_bae) <= 0.1
        assert abs(math.log10(result.lam) - math.log10(1e-2)) <= 1.0

    def test_unreachable_target_reports_range(self, tune_fixture):
        h_ctrl, h_mon, targets, m_mon, ref = tune_fixture
        with pytest.raises(TuneError, match="achievable range"):
            tune_regularization(
                h_ctrl,
                h_mon,
                targets,
                target_bae_db=1e6,
                num_bright_monitor=m_mon,
                ref_speaker=ref,
            )

    def test_tolerance_contract(self, tune_fixture):
        h_ctrl, h_mon, targets, m_mon, ref = tune_fixture
        target_bae = _mean_bae_for(h_ctrl, h_mon, targets, 3e-3, m_mon, ref)
        result = tune_regularization(
            h_ctrl,
            h_mon,
            targets,
            target_bae_db=target_bae,
            tol_db=0.1,
            num_bright_monitor=m_mon,
            ref_speaker=ref,
        )
        assert abs(result.achieved_bae_db - target_bae) <= 0.1
