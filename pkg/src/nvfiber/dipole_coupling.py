"""Emission of a point dipole into the guided modes of a nanofiber.

The emission rate into one guided mode, one propagation direction and one
polarisation follows from the mode-expansion amplitude of a point current
source: with unit-power fields (scaled units, vacuum impedance 1)

    Gamma_mode / Gamma_free = 3 pi |d . E_mode(r_d)|^2 / (4 k^2)

The power normalisation already contains the group slowness dbeta/domega
(power = group velocity x energy per length), so no separate dispersion
factor appears.  The non-guided part of the emission is approximated by the
free-space rate, so ``eta = sum(Gamma) / (sum(Gamma) + Gamma_free)``.
"""

from __future__ import annotations

import csv
import math
import os
from decimal import Decimal
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np

from .fiber_modes import (FiberSpec, GuidedMode, all_guided_modes, mode_field,
                          second_mode_cutoff_diameter)

FUNDAMENTAL = "HE11"


@dataclass(frozen=True)
class DipoleEmitter:
    """Point dipole in the fiber cross-section.

    ``orientation`` is given in the local cylindrical basis (radial,
    azimuthal, axial) at ``phi``.  ``r=None`` places the dipole on the fiber
    surface, whatever the diameter.
    """

    r: float | None = None
    phi: float = 0.0
    orientation: tuple[float, float, float] = (1.0, 0.0, 0.0)
    free_space_lifetime: float = 21e-9
    outside: bool = True

    def __post_init__(self):
        norm = math.sqrt(sum(c * c for c in self.orientation))
        if not math.isclose(norm, 1.0, rel_tol=1e-9):
            raise ValueError("dipole orientation must be a unit vector")
        if self.r is not None and self.r < 0:
            raise ValueError("dipole radius must be >= 0")

    def radius_in(self, spec: FiberSpec) -> float:
        r = spec.radius if self.r is None else self.r
        if self.outside and r < spec.radius:
            raise ValueError(
                f"dipole at r={r:g} m lies inside the glass (fiber radius {spec.radius:g} m) "
                "but is flagged as on the surface or outside")
        return r

    @classmethod
    def radial(cls, **kw) -> "DipoleEmitter":
        return cls(orientation=(1.0, 0.0, 0.0), **kw)

    @classmethod
    def azimuthal(cls, **kw) -> "DipoleEmitter":
        return cls(orientation=(0.0, 1.0, 0.0), **kw)

    @classmethod
    def axial(cls, **kw) -> "DipoleEmitter":
        return cls(orientation=(0.0, 0.0, 1.0), **kw)


@dataclass(frozen=True)
class SpectrumModel:
    """Emission spectrum, discretised on a uniform midpoint grid.

    kinds: ``monochromatic`` (``center`` only), ``gaussian`` (``center``,
    ``fwhm``, truncated to ``[lambda_min, lambda_max]``) and ``tabulated``
    (``wavelengths``, ``values``).
    """

    kind: Literal["monochromatic", "gaussian", "tabulated"]
    center: float | None = None
    fwhm: float | None = None
    lambda_min: float | None = None
    lambda_max: float | None = None
    wavelengths: tuple[float, ...] = ()
    values: tuple[float, ...] = ()
    n_points: int = 32

    @classmethod
    def monochromatic(cls, wavelength: float) -> "SpectrumModel":
        return cls("monochromatic", center=wavelength)

    @classmethod
    def gaussian(cls, center: float, fwhm: float, lambda_min: float, lambda_max: float,
                 n_points: int = 32) -> "SpectrumModel":
        return cls("gaussian", center=center, fwhm=fwhm, lambda_min=lambda_min,
                   lambda_max=lambda_max, n_points=n_points)

    @classmethod
    def nv_default(cls, n_points: int = 32) -> "SpectrumModel":
        return cls.gaussian(700e-9, 100e-9, 600e-9, 800e-9, n_points)

    @classmethod
    def tabulated(cls, wavelengths: Sequence[float], values: Sequence[float]) -> "SpectrumModel":
        return cls("tabulated", wavelengths=tuple(float(x) for x in wavelengths),
                   values=tuple(float(v) for v in values))

    def with_points(self, n_points: int) -> "SpectrumModel":
        return SpectrumModel(self.kind, self.center, self.fwhm, self.lambda_min,
                             self.lambda_max, self.wavelengths, self.values, n_points)

    def discretize(self) -> tuple[np.ndarray, np.ndarray]:
        """Quadrature nodes and weights summing to one."""
        if self.kind == "monochromatic":
            if self.center is None:
                raise ValueError("monochromatic spectrum needs a wavelength")
            return np.array([self.center]), np.array([1.0])
        if self.kind == "gaussian":
            lo, hi = self.lambda_min, self.lambda_max
            if self.n_points < 1 or not hi > lo:
                raise ValueError("empty spectral support")
            edges = np.linspace(lo, hi, self.n_points + 1)
            lam = 0.5 * (edges[:-1] + edges[1:])
            sigma = self.fwhm / (2 * math.sqrt(2 * math.log(2)))
            s = np.exp(-0.5 * ((lam - self.center) / sigma) ** 2)
        elif self.kind == "tabulated":
            lam = np.asarray(self.wavelengths, dtype=float)
            s = np.asarray(self.values, dtype=float)
            if lam.size == 0:
                raise ValueError("empty spectrum")
            if np.any(s < 0):
                raise ValueError("spectral values must be non-negative")
            if self.lambda_min is not None:
                keep = (lam >= self.lambda_min) & (lam <= (self.lambda_max or np.inf))
                lam, s = lam[keep], s[keep]
            # trapezoid weights on the (possibly non-uniform) table
            if lam.size > 1:
                order = np.argsort(lam)
                lam, s = lam[order], s[order]
                dl = np.gradient(lam) if lam.size > 2 else np.full(lam.size, lam[1] - lam[0])
                s = s * dl
        else:
            raise ValueError(f"unknown spectrum kind {self.kind!r}")
        total = s.sum()
        if not total > 0:
            raise ValueError("spectrum integrates to zero")
        return lam, s / total


@dataclass(frozen=True)
class CouplingResult:
    eta_total: float
    per_mode: dict[str, float]
    fundamental_fraction: float
    gamma_guided: float  # guided rate over free-space rate
    eta_forward: float
    eta_backward: float

    @property
    def eta_per_side(self) -> float:
        return 0.5 * self.eta_total


@dataclass(frozen=True)
class EfficiencyBudget:
    beta_side: float
    fiber_transmission: float
    confocal_efficiency: float
    end_to_end_one_side: float
    end_to_end_two_side: float
    fiber_to_confocal_ratio: float


def _projected_rate(mode: GuidedMode, r: float, phi: float,
                    orientation: tuple[float, float, float],
                    polarization: float, direction: int) -> float:
    fp = mode_field(mode, r, phi, polarization, region="surround" if r >= mode.radius else "core")
    # backward mode: transverse fields kept, E_z flips with beta
    ez = fp.E_z if direction > 0 else -fp.E_z
    dr, dphi, dz = orientation
    proj = dr * fp.E_r + dphi * fp.E_phi + dz * ez
    return 3.0 * math.pi * abs(proj) ** 2 / (4.0 * mode.k**2)


def mode_rates(spec: FiberSpec, wavelength: float, dipole: DipoleEmitter,
               modes: Iterable[GuidedMode] | None = None) -> dict[str, tuple[float, float]]:
    """Per-label (forward, backward) emission rates in units of the free-space rate."""
    r = dipole.radius_in(spec)
    if modes is None:
        modes = all_guided_modes(spec, wavelength)
    out: dict[str, tuple[float, float]] = {}
    for mode in modes:
        fwd = bwd = 0.0
        for psi in mode.polarizations:
            fwd += _projected_rate(mode, r, dipole.phi, dipole.orientation, psi, +1)
            bwd += _projected_rate(mode, r, dipole.phi, dipole.orientation, psi, -1)
        out[mode.label] = (fwd, bwd)
    return out


def _result_from_rates(rates: dict[str, tuple[float, float]]) -> CouplingResult:
    gamma_f = sum(f for f, _ in rates.values())
    gamma_b = sum(b for _, b in rates.values())
    gamma = gamma_f + gamma_b
    denom = gamma + 1.0
    per_mode = {label: (f + b) / denom for label, (f, b) in rates.items()}
    fund = sum(rates.get(FUNDAMENTAL, (0.0, 0.0)))
    return CouplingResult(
        eta_total=gamma / denom,
        per_mode=per_mode,
        fundamental_fraction=fund / gamma if gamma > 0 else 1.0,
        gamma_guided=gamma,
        eta_forward=gamma_f / denom,
        eta_backward=gamma_b / denom,
    )


def coupling_efficiency(spec: FiberSpec, wavelength: float,
                        dipole: DipoleEmitter) -> CouplingResult:
    """Fraction of the dipole's emission captured by all guided modes (both directions)."""
    return _result_from_rates(mode_rates(spec, wavelength, dipole))


def broadband_coupling(spec: FiberSpec, spectrum: SpectrumModel,
                       dipole: DipoleEmitter) -> CouplingResult:
    """Spectrally weighted average of :func:`coupling_efficiency`."""
    lam, wts = spectrum.discretize()
    results = [coupling_efficiency(spec, float(x), dipole) for x in lam]
    return _average(results, wts)


def _average(results: Sequence[CouplingResult], weights) -> CouplingResult:
    per_mode: dict[str, float] = {}
    for res, wt in zip(results, weights):
        for label, frac in res.per_mode.items():
            per_mode[label] = per_mode.get(label, 0.0) + wt * frac
    eta = float(sum(wt * res.eta_total for res, wt in zip(results, weights)))
    fund = per_mode.get(FUNDAMENTAL, 0.0)
    return CouplingResult(
        eta_total=eta,
        per_mode=per_mode,
        fundamental_fraction=fund / eta if eta > 0 else 1.0,
        gamma_guided=float(sum(wt * res.gamma_guided for res, wt in zip(results, weights))),
        eta_forward=float(sum(wt * res.eta_forward for res, wt in zip(results, weights))),
        eta_backward=float(sum(wt * res.eta_backward for res, wt in zip(results, weights))),
    )


@dataclass
class SweepResult:
    diameters: np.ndarray
    eta_total: np.ndarray
    fundamental_fraction: np.ndarray
    results: list[CouplingResult] = field(repr=False, default_factory=list)

    @property
    def eta_per_side(self) -> np.ndarray:
        return 0.5 * self.eta_total

    @property
    def argmax_diameter(self) -> float:
        return float(self.diameters[int(np.argmax(self.eta_total))])

    @property
    def peak_eta(self) -> float:
        return float(np.max(self.eta_total))

    def is_unimodal(self) -> bool:
        """True if the sampled curve rises to a single maximum and then falls."""
        i = int(np.argmax(self.eta_total))
        eta = self.eta_total
        return bool(np.all(np.diff(eta[: i + 1]) > 0) and np.all(np.diff(eta[i:]) < 0))

    def fraction_cutoff(self, eps: float = 0.01) -> float | None:
        """Smallest sampled diameter where the fundamental share drops below ``1 - eps``."""
        below = np.nonzero(self.fundamental_fraction < 1.0 - eps)[0]
        return float(self.diameters[below[0]]) if below.size else None

    def to_csv(self, path) -> None:
        """Write ``d_m, eta_total, eta_per_side, fundamental_fraction`` to a path or file."""
        fh = open(path, "w", newline="") if isinstance(path, (str, os.PathLike)) else path
        try:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["d_m", "eta_total", "eta_per_side", "fundamental_fraction"])
            for d, eta, ff in zip(self.diameters, self.eta_total, self.fundamental_fraction):
                writer.writerow([repr(float(d)), repr(float(eta)), repr(float(0.5 * eta)),
                                 repr(float(ff))])
        finally:
            if fh is not path:
                fh.close()


def diameter_grid(d_min: float, d_max: float, step: float) -> np.ndarray:
    if not step > 0:
        raise ValueError("sweep step must be positive")
    n = int(math.floor((d_max - d_min) / step + 1e-9)) + 1
    return d_min + step * np.arange(n)


def coupling_sweep(d_min: float, d_max: float, step: float, spectrum: SpectrumModel,
                   dipole: DipoleEmitter, core_index: float | str = "silica",
                   surround_index: float = 1.0, workers: int = 1) -> SweepResult:
    """Broadband coupling tabulated over fiber diameter."""
    ds = diameter_grid(d_min, d_max, step)

    def one(d):
        return broadband_coupling(FiberSpec(float(d), core_index, surround_index), spectrum, dipole)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, ds))
    else:
        results = [one(d) for d in ds]
    return SweepResult(ds, np.array([r.eta_total for r in results]),
                       np.array([r.fundamental_fraction for r in results]), results)


def fraction_cutoff_diameter(spectrum: SpectrumModel, dipole: DipoleEmitter,
                             eps: float = 0.01, d_lo: float = 0.2e-6, d_hi: float = 1.0e-6,
                             core_index: float | str = "silica", surround_index: float = 1.0,
                             tol: float = 1e-10) -> float:
    """Diameter where the fundamental-mode share of guided emission falls to ``1 - eps``.

    Bisection between a single-mode lower bound and ``d_hi``.
    """
    def share(d):
        return broadband_coupling(FiberSpec(d, core_index, surround_index), spectrum,
                                  dipole).fundamental_fraction

    lam, _ = spectrum.discretize()
    n_blue = FiberSpec(1e-6, core_index, surround_index).n_core(float(lam.min()))
    lo = max(d_lo, 0.999 * second_mode_cutoff_diameter(float(lam.min()), n_blue, surround_index))
    hi = d_hi
    if share(hi) >= 1.0 - eps:
        raise ValueError("fundamental share stays above threshold across the interval")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if share(mid) < 1.0 - eps:
            hi = mid
        else:
            lo = mid
    return hi


def efficiency_budget(beta_side: float, fiber_transmission: float,
                      confocal_efficiency: float) -> EfficiencyBudget:
    """End-to-end photon budget of a fiber-coupled emitter vs a confocal reference."""
    for name, v in (("beta_side", beta_side), ("fiber_transmission", fiber_transmission),
                    ("confocal_efficiency", confocal_efficiency)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    # decimal arithmetic on the shortest repr keeps 0.15 * 0.10 == 0.015 exact
    b, t, c = (Decimal(repr(float(v))) for v in (beta_side, fiber_transmission,
                                                   confocal_efficiency))
    one = b * t
    if one == 0:
        ratio = 0.0
    elif c == 0:
        ratio = math.inf
    else:
        ratio = float(one / c)
    return EfficiencyBudget(float(b), float(t), float(c), float(one), float(2 * one), ratio)
