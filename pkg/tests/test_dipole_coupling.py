import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from nvfiber.dipole_coupling import (
    DipoleEmitter, SpectrumModel, broadband_coupling, coupling_efficiency, coupling_sweep,
    efficiency_budget, fraction_cutoff_diameter, mode_rates,
)
from nvfiber.fiber_modes import FiberSpec, mode_field, second_mode_cutoff_diameter, solve_fundamental


def energy_route_rate(d, lam, n1, r_d, orientation):
    """HE11 forward rate via Gamma/Gamma0 = 3 pi beta' |d.e|^2 / (2 k^2 int n^2 |e|^2).

    beta' = d beta / d k at fixed index (group slowness); the energy integral
    is done here by 2-D quadrature of the assembled field.
    """
    spec = FiberSpec(d, n1)
    m = solve_fundamental(spec, lam)
    k = m.k
    dk = 1e-5 * k
    bp = solve_fundamental(spec, 2 * math.pi / (k + dk)).beta
    bm = solve_fundamental(spec, 2 * math.pi / (k - dk)).beta
    slowness = (bp - bm) / (2 * dk)
    phis = np.linspace(0, 2 * math.pi, 64, endpoint=False)
    total = 0.0
    for psi in m.polarizations:
        def ring(r, region):
            nn = (m.n_core if region == "core" else m.n_surround) ** 2
            s = sum(np.sum(np.abs(mode_field(m, r, p, psi, region).E) ** 2) for p in phis)
            return nn * s * (2 * math.pi / phis.size) * r
        a = m.radius
        w_core, _ = integrate.quad(ring, 0, a, args=("core",), epsrel=1e-11, limit=200)
        decay = a / m.w
        w_clad, _ = integrate.quad(ring, a, a + 60 * decay, args=("surround",), epsrel=1e-11,
                                   limit=400)
        f = mode_field(m, r_d, 0.0, psi)
        proj = orientation[0] * f.E_r + orientation[1] * f.E_phi + orientation[2] * f.E_z
        total += 3 * math.pi * slowness * abs(proj) ** 2 / (2 * k * k * (w_core + w_clad))
    return total


class TestDualRoute:
    @pytest.mark.parametrize("orient", [(1, 0, 0), (0, 0, 1)])
    def test_power_vs_energy_normalisation(self, orient):
        d, lam, n1 = 0.45e-6, 0.7e-6, 1.45
        oracle = energy_route_rate(d, lam, n1, d / 2, orient)
        got = mode_rates(FiberSpec(d, n1), lam, DipoleEmitter(orientation=orient))["HE11"][0]
        assert got == pytest.approx(oracle, rel=1e-6)


class TestCoupling:
    def test_single_mode_fraction_exact(self):
        r = coupling_efficiency(FiberSpec(0.35e-6), 0.637e-6, DipoleEmitter.radial())
        assert r.fundamental_fraction == 1.0
        assert list(r.per_mode) == ["HE11"]

    @pytest.mark.parametrize("d", [0.3e-6, 0.6e-6, 0.9e-6])
    def test_per_mode_sum(self, d):
        r = coupling_efficiency(FiberSpec(d), 0.637e-6, DipoleEmitter.radial())
        assert sum(r.per_mode.values()) == pytest.approx(r.eta_total, abs=1e-9)
        assert 0 <= r.eta_total <= 1
        assert all(v >= 0 for v in r.per_mode.values())
        assert r.eta_per_side == 0.5 * r.eta_total

    @pytest.mark.parametrize("orient", [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0.6, 0, 0.8)])
    def test_directions_symmetric(self, orient):
        r = coupling_efficiency(FiberSpec(0.7e-6), 0.637e-6, DipoleEmitter(orientation=orient))
        assert r.eta_forward == r.eta_backward

    def test_decay_with_distance(self):
        spec = FiberSpec(0.45e-6)
        etas = [coupling_efficiency(spec, 0.7e-6, DipoleEmitter.radial(r=spec.radius + x)).eta_total
                for x in np.linspace(0, 300e-9, 10)]
        assert np.all(np.diff(etas) < 0)

    @settings(max_examples=8, deadline=None)
    @given(st.floats(0.6, 1.8))
    def test_scale_invariance(self, s):
        base = coupling_efficiency(FiberSpec(0.5e-6, 1.45), 0.7e-6,
                                   DipoleEmitter.radial(r=0.3e-6)).eta_total
        sc = coupling_efficiency(FiberSpec(0.5e-6 * s, 1.45), 0.7e-6 * s,
                                 DipoleEmitter.radial(r=0.3e-6 * s)).eta_total
        assert sc == pytest.approx(base, abs=1e-9)

    def test_inside_glass_rejected(self):
        with pytest.raises(ValueError):
            coupling_efficiency(FiberSpec(0.45e-6), 0.7e-6, DipoleEmitter.radial(r=0.1e-6))
        # explicitly flagged as embedded is allowed
        r = coupling_efficiency(FiberSpec(0.45e-6), 0.7e-6,
                                DipoleEmitter.radial(r=0.0, outside=False))
        assert 0 <= r.eta_total < 1

    def test_orientation_must_be_unit(self):
        with pytest.raises(ValueError):
            DipoleEmitter(orientation=(1, 1, 0))


class TestSpectrum:
    def test_weights_normalised(self):
        lam, w = SpectrumModel.nv_default().discretize()
        assert w.sum() == pytest.approx(1.0, abs=1e-14)
        assert lam.min() >= 600e-9 and lam.max() <= 800e-9

    def test_tabulated(self):
        s = SpectrumModel.tabulated([600e-9, 650e-9, 700e-9], [0.0, 1.0, 3.0])
        lam, w = s.discretize()
        assert w.sum() == pytest.approx(1.0)
        assert np.all(w >= 0)

    @pytest.mark.parametrize("bad", [SpectrumModel.tabulated([], []),
                                     SpectrumModel.tabulated([6e-7, 7e-7], [0.0, 0.0])])
    def test_empty_rejected(self, bad):
        with pytest.raises(ValueError):
            bad.discretize()

    def test_monochromatic_equals_pointwise(self):
        spec = FiberSpec(0.5e-6)
        a = broadband_coupling(spec, SpectrumModel.monochromatic(0.637e-6), DipoleEmitter.radial())
        b = coupling_efficiency(spec, 0.637e-6, DipoleEmitter.radial())
        assert a.eta_total == b.eta_total
        assert a.per_mode == b.per_mode

    @pytest.mark.parametrize("d", [0.3e-6, 0.55e-6])
    def test_broadband_bounded(self, d):
        spec = FiberSpec(d)
        sp = SpectrumModel.nv_default(16)
        lam, _ = sp.discretize()
        point = [coupling_efficiency(spec, float(x), DipoleEmitter.radial()).eta_total for x in lam]
        avg = broadband_coupling(spec, sp, DipoleEmitter.radial()).eta_total
        assert min(point) <= avg <= max(point)

    def test_quadrature_converges(self):
        spec = FiberSpec(0.4e-6)
        e16 = broadband_coupling(spec, SpectrumModel.nv_default(16), DipoleEmitter.radial()).eta_total
        e32 = broadband_coupling(spec, SpectrumModel.nv_default(32), DipoleEmitter.radial()).eta_total
        e64 = broadband_coupling(spec, SpectrumModel.nv_default(64), DipoleEmitter.radial()).eta_total
        assert abs(e64 - e32) < abs(e32 - e16) + 1e-12
        assert abs(e64 - e32) < 1e-4


class TestSweep:
    def test_single_mode_region_fraction(self, tmp_path):
        sp = SpectrumModel.nv_default(8)
        res = coupling_sweep(0.2e-6, 0.5e-6, 0.05e-6, sp, DipoleEmitter.radial())
        lam_blue = float(sp.discretize()[0].min())
        cut = second_mode_cutoff_diameter(lam_blue, FiberSpec(1e-6).n_core(lam_blue), 1.0)
        assert np.all(res.fundamental_fraction[res.diameters < cut] == 1.0)
        p = tmp_path / "s.csv"
        res.to_csv(p)
        rows = list(csv.reader(open(p)))
        assert rows[0] == ["d_m", "eta_total", "eta_per_side", "fundamental_fraction"]
        assert len(rows) == res.diameters.size + 1

    def test_fraction_cutoff_bisection(self):
        sp = SpectrumModel.nv_default(8)
        d = fraction_cutoff_diameter(sp, DipoleEmitter.radial(), tol=1e-9)
        lo = broadband_coupling(FiberSpec(d - 2e-9), sp, DipoleEmitter.radial()).fundamental_fraction
        hi = broadband_coupling(FiberSpec(d + 1e-9), sp, DipoleEmitter.radial()).fundamental_fraction
        assert lo >= 0.99 > hi

    def test_deterministic(self):
        sp = SpectrumModel.monochromatic(0.637e-6)
        a = coupling_sweep(0.3e-6, 0.6e-6, 0.1e-6, sp, DipoleEmitter.radial())
        b = coupling_sweep(0.3e-6, 0.6e-6, 0.1e-6, sp, DipoleEmitter.radial(), workers=2)
        assert np.array_equal(a.eta_total, b.eta_total)


class TestBudget:
    def test_paper_numbers_exact(self):
        b = efficiency_budget(0.15, 0.10, 0.005)
        assert b.end_to_end_one_side == 0.015
        assert b.end_to_end_two_side == 0.03
        assert b.fiber_to_confocal_ratio == 3.0

    def test_zero_and_lossless(self):
        z = efficiency_budget(0.0, 0.1, 0.005)
        assert z.end_to_end_one_side == z.end_to_end_two_side == z.fiber_to_confocal_ratio == 0
        assert efficiency_budget(0.15, 1.0, 0.005).end_to_end_one_side == 0.15

    @pytest.mark.parametrize("args", [(-0.1, 0.1, 0.1), (0.1, 1.1, 0.1), (0.1, 0.1, 2.0)])
    def test_out_of_range(self, args):
        with pytest.raises(ValueError):
            efficiency_budget(*args)

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(1e-3, 1))
    def test_invariants(self, b, t, c):
        r = efficiency_budget(b, t, c)
        assert r.end_to_end_two_side == pytest.approx(2 * r.end_to_end_one_side, rel=1e-15)
        assert r.end_to_end_one_side == pytest.approx(b * t, rel=1e-12, abs=1e-300)
