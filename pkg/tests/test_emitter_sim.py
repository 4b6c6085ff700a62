import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nvfiber.emitter_sim import (
    CW, BackgroundModel, PolarizationModel, Pulsed, Scene, ThreeLevelModel, analytic_g2,
    bleach_response, calibrate_bleach, dip_fwhm, excited_population, g2_rates,
    polarization_signal, rate_matrix, saturation_limit, saturation_rate, simulate_stream,
    steady_state,
)
from nvfiber.photon_analysis import decay_histogram

NV = ThreeLevelModel()
PSAT = NV.saturation_power

rates = st.floats(1e3, 1e9)


class TestRates:
    @given(rates, rates, rates, rates, st.floats(0, 1e-2))
    def test_generator_columns_sum_to_zero(self, sigma, keg, kes, ksg, P):
        Q = rate_matrix(ThreeLevelModel(sigma, keg, kes, ksg), P)
        scale = max(abs(Q).max(), 1.0)
        assert np.allclose(Q.sum(axis=0), 0.0, atol=1e-13 * scale)
        off = Q[~np.eye(3, dtype=bool)]
        assert np.all(off >= 0)

    def test_steady_state_against_euler(self):
        # independent oracle: explicit Euler propagation to equilibrium
        Q = rate_matrix(NV, PSAT)
        dt = 0.2 / np.abs(Q).max()
        M = np.linalg.matrix_power(np.eye(3) + dt * Q, 2 ** 22)
        p = M @ np.array([1.0, 0.0, 0.0])
        assert np.allclose(steady_state(NV, PSAT), p, atol=1e-8)

    def test_closed_form_population(self):
        for P in (1e-6, PSAT, 1e-2):
            assert excited_population(NV, P) == pytest.approx(steady_state(NV, P)[1], rel=1e-12)

    def test_default_saturation_power(self):
        assert PSAT == pytest.approx(100e-6, rel=1e-12)
        assert NV.lifetime == 21e-9

    def test_invalid(self):
        with pytest.raises(ValueError):
            ThreeLevelModel(k_eg=0.0)
        with pytest.raises(ValueError):
            ThreeLevelModel(k_sg=0.0)
        with pytest.raises(ValueError):
            rate_matrix(NV, -1.0)


class TestG2:
    @pytest.mark.parametrize("P", [0.3 * PSAT, PSAT, 5 * PSAT])
    def test_limits(self, P):
        g = analytic_g2(NV, P, np.array([0.0, 1e-2]))
        assert g[0] == 0.0
        assert g[1] == pytest.approx(1.0, abs=1e-9)

    def test_bunching_shoulder(self):
        tau = np.linspace(0, 3e-6, 3001)
        assert analytic_g2(NV, 3 * PSAT, tau).max() > 1.0

    def test_two_level_no_bunching(self):
        m = ThreeLevelModel(k_es=0.0)
        tau = np.linspace(0, 1e-6, 2001)
        g = analytic_g2(m, 2 * PSAT, tau)
        assert g.max() <= 1.0 + 1e-12
        t1, t2, a = g2_rates(m, 2 * PSAT)
        kge = m.sigma * 2 * PSAT
        assert t1 == pytest.approx(1.0 / (kge + m.k_eg), rel=1e-12)
        assert math.isinf(t2) and a == 0

    @pytest.mark.parametrize("P", [0.5 * PSAT, 2 * PSAT])
    def test_biexponential_matches(self, P):
        t1, t2, a = g2_rates(NV, P)
        tau = np.linspace(0, 5e-6, 500)
        bi = 1 - (1 + a) * np.exp(-tau / t1) + a * np.exp(-tau / t2)
        assert np.allclose(analytic_g2(NV, P, tau), bi, atol=1e-9)

    def test_symmetric(self):
        tau = np.linspace(1e-9, 1e-6, 50)
        assert np.array_equal(analytic_g2(NV, PSAT, tau), analytic_g2(NV, PSAT, -tau))

    def test_fwhm_narrows_with_power(self):
        w = [dip_fwhm(NV, f * PSAT) for f in (0.5, 1.0, 2.0)]
        assert w[0] > w[1] > w[2]


class TestSaturation:
    def test_zero_power(self):
        assert saturation_rate(NV, 0.0, 0.01) == 0.0
        assert saturation_rate(NV, 0.0, 0.01, method="closed") == 0.0

    def test_limit_cross_checked(self):
        r_inf = saturation_limit(NV, 0.01)
        kee = NV.k_eg + NV.k_es
        symbolic = 0.01 * NV.k_eg / (1 + NV.k_es / NV.k_sg)
        assert r_inf == pytest.approx(symbolic, rel=1e-15)
        assert saturation_rate(NV, 1e6 * PSAT, 0.01) == pytest.approx(r_inf, rel=2e-6)
        assert kee > 0

    @given(st.floats(1e-9, 1e-1))
    def test_closed_equals_matrix(self, P):
        a = saturation_rate(NV, P, 0.05)
        b = saturation_rate(NV, P, 0.05, method="closed")
        assert a == pytest.approx(b, rel=1e-10)

    def test_half_saturation(self):
        assert saturation_rate(NV, PSAT, 1.0) == pytest.approx(0.5 * saturation_limit(NV, 1.0),
                                                                rel=1e-12)

    def test_closed_rejects_power_deshelving(self):
        with pytest.raises(ValueError):
            saturation_rate(ThreeLevelModel(k_sg_power=1.0), 1e-4, 0.1, method="closed")


class TestBleach:
    BG = BackgroundModel()

    def test_calibrated_default(self):
        A = float(bleach_response(self.BG, 30e-6, 60.0))
        assert A == pytest.approx(0.50, abs=0.01)

    def test_pure_recovery(self):
        t = np.linspace(0, 1000, 101)
        A = bleach_response(self.BG, 0.0, t, initial=0.5)
        assert np.allclose(A, 1 - 0.5 * np.exp(-self.BG.recovery_rate * t), rtol=1e-13)
        assert np.all(np.diff(A) >= 0)
        assert self.BG.recovery_time(0.9) == pytest.approx(180.0, rel=1e-12)

    @given(st.floats(0, 1e-3), st.floats(0, 1e4), st.floats(0, 1))
    def test_bounds(self, P, t, a0):
        A = float(bleach_response(self.BG, P, t, initial=a0))
        ss = self.BG.steady_active(P)
        assert min(a0, ss) <= A <= max(a0, ss)

    def test_calibration_errors(self):
        with pytest.raises(ValueError):
            calibrate_bleach(1.5)
        kb, kr = calibrate_bleach(0.5)
        assert kb > 0 and kr == pytest.approx(math.log(10) / 180)


class TestPolarization:
    def test_unpolarized_flat(self):
        th = np.linspace(0, math.pi, 13)
        total, _ = polarization_signal(PolarizationModel(1.0, 2.0, 0.0), th)
        assert np.all(total == total[0])

    @pytest.mark.parametrize("f", [1.5, 2.0])
    def test_suppression_by_construction(self, f):
        m = PolarizationModel.for_suppression(f, signal=3.0, visibility=0.8, theta0=0.3)
        assert m.suppression == pytest.approx(f, rel=1e-14)
        th = np.linspace(0, math.pi, 100001)
        total, share = polarization_signal(m, th)
        assert total.max() / total.min() == pytest.approx(f, rel=1e-8)
        assert np.all((share >= 0) & (share <= 1))

    @given(st.floats(-10, 10))
    def test_period_pi(self, th):
        m = PolarizationModel(1.0, 1.0, 0.7, 0.2)
        a = polarization_signal(m, th)[0]
        b = polarization_signal(m, th + math.pi)[0]
        assert a == pytest.approx(b, rel=1e-12)


class TestSimulation:
    def test_deterministic(self):
        sc = Scene(background=BackgroundModel(fiber_rate=5e3, dark_rate=100.0),
                   collection_efficiency=0.05)
        a = simulate_stream(sc, 0.05, seed=7)
        b = simulate_stream(sc, 0.05, seed=7)
        c = simulate_stream(sc, 0.05, seed=8)
        assert a == b
        assert a.ticks.tobytes() == b.ticks.tobytes()
        assert a != c
        assert a.first_disorder() is None

    @pytest.mark.parametrize("ex", [CW(1e-4), Pulsed(1e6, 3e-12)])
    def test_zero_efficiency_only_dark_and_sync(self, ex):
        bg = BackgroundModel(fiber_rate=1e4, dark_rate=200.0, raman_rate=1e3)
        sc = Scene(background=bg, excitation=ex, efficiencies=(0.0, 0.0))
        s = simulate_stream(sc, 0.1, seed=1)
        n_sync = int(np.sum(s.channels == 0))
        assert n_sync == (100000 if isinstance(ex, Pulsed) else 0)
        dark = int(np.sum(s.channels > 0))
        # only dark counts: Poisson(2 * 200 * 0.1)
        assert abs(dark - 40) < 5 * math.sqrt(40)
        sc_dark_off = Scene(background=BackgroundModel(fiber_rate=1e4, raman_rate=1e3),
                            excitation=ex, efficiencies=(0.0, 0.0))
        assert int(np.sum(simulate_stream(sc_dark_off, 0.1, seed=1).channels > 0)) == 0

    def test_cw_rate_within_3_sigma(self):
        sc = Scene(excitation=CW(PSAT), collection_efficiency=0.01)
        T = 10.0
        n = len(simulate_stream(sc, T, seed=3))
        expect = sc.detected_rate() * T
        assert abs(n - expect) < 3 * math.sqrt(expect)

    def test_pulsed_lifetime(self):
        sc = Scene(excitation=Pulsed(2e6, 3e-12), collection_efficiency=0.1)
        s = simulate_stream(sc, 0.5, seed=11)
        assert int(np.sum(s.channels == 0)) == 10 ** 6
        d = decay_histogram(s, 0, 1, 1e-9, 300e-9)
        merged = d.counts + decay_histogram(s, 0, 2, 1e-9, 300e-9).counts
        # maximum-likelihood rate for an exponential truncated at the window
        from scipy import optimize
        t, n = d.t, merged.astype(float)
        W = 300e-9

        def score(tau):
            return np.sum(n * t) / n.sum() - (tau - W / math.expm1(W / tau))

        tau = optimize.brentq(score, 1e-9, 100e-9)
        assert tau == pytest.approx(NV.lifetime, rel=0.02)

    def test_fiber_delay_in_pulsed_mode(self):
        bg = BackgroundModel(fiber_rate=2e5, fiber_reference_power=1e-6)
        sc = Scene(background=bg, excitation=Pulsed(1e4, 1e-10), collection_efficiency=0.0)
        s = simulate_stream(sc, 1.0, seed=2)
        d = decay_histogram(s, 0, 1, 1e-6, 100e-6)
        # exponential with tau_f = 30 us: ratio of first bins ~ exp(1 us / 30 us)
        head = d.counts[:20].astype(float)
        slope = -np.polyfit(d.t[:20], np.log(head), 1)[0]
        assert 1 / slope == pytest.approx(30e-6, rel=0.1)

    def test_input_errors(self):
        with pytest.raises(ValueError):
            simulate_stream(Scene(), 0.0)
        with pytest.raises(ValueError):
            Scene(splitting=1.5)
        with pytest.raises(ValueError):
            simulate_stream(Scene(excitation=Pulsed(1.0, 1e-12)), 0.5)
