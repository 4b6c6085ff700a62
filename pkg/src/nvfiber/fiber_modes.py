"""Vectorial eigenmodes of a step-index cylindrical fiber.

The fiber is a dielectric rod (index ``n_core``) in a homogeneous surround
(index ``n_surround``, air by default).  Modes are labelled HE/EH (hybrid,
azimuthal order ``l >= 1``) and TE/TM (``l = 0``).

Units
-----
Lengths are in metres.  Fields are expressed in scaled units with
``c = eps0 = mu0 = 1`` (so ``omega = k`` and the vacuum impedance is 1) and
every returned mode carries coefficients normalised to unit time-averaged
axial power::

    (1/2) Re \\int (E x H*) . z dA = 1
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import integrate, optimize, special

FIRST_J0_ZERO = float(special.jn_zeros(0, 1)[0])  # 2.404825557695773

# Malitson (1965) fused silica, wavelength in micrometres
_SELLMEIER_B = (0.6961663, 0.4079426, 0.8974794)
_SELLMEIER_C = (0.0684043**2, 0.1162414**2, 9.896161**2)
SELLMEIER_RANGE_UM = (0.21, 3.71)

Family = Literal["HE", "EH", "TE", "TM"]
_FAMILY_ORDER = {"HE": 0, "TE": 1, "TM": 2, "EH": 3}

DEFAULT_GRID_POINTS = 4096
DEGENERACY_TOL = 1e-9


def sellmeier_index(wavelength: float) -> float:
    """Refractive index of fused silica from the three-term Sellmeier form.

    Parameters
    ----------
    wavelength : float
        Vacuum wavelength in metres, within 0.21-3.71 um.
    """
    lam_um = wavelength * 1e6
    lo, hi = SELLMEIER_RANGE_UM
    if not (lo <= lam_um <= hi):
        raise ValueError(
            f"wavelength {lam_um:.4g} um outside Sellmeier validity [{lo}, {hi}] um")
    lam2 = lam_um * lam_um
    n2 = 1.0 + sum(b * lam2 / (lam2 - c) for b, c in zip(_SELLMEIER_B, _SELLMEIER_C))
    return math.sqrt(n2)


@dataclass(frozen=True)
class FiberSpec:
    """Step-index rod: ``diameter`` in metres, ``core_index`` either a number
    or ``"silica"`` for Sellmeier dispersion."""

    diameter: float
    core_index: float | str = "silica"
    surround_index: float = 1.0

    def __post_init__(self):
        if not self.diameter > 0:
            raise ValueError("fiber diameter must be positive")
        if self.surround_index < 1.0:
            raise ValueError("surround index must be >= 1")
        if isinstance(self.core_index, str):
            if self.core_index != "silica":
                raise ValueError(f"unknown dispersion model {self.core_index!r}")
        elif not self.core_index > self.surround_index:
            raise ValueError("core index must exceed surround index")

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter

    def n_core(self, wavelength: float) -> float:
        if isinstance(self.core_index, str):
            n = sellmeier_index(wavelength)
            if not n > self.surround_index:
                raise ValueError("core index must exceed surround index")
            return n
        return float(self.core_index)

    def with_diameter(self, diameter: float) -> "FiberSpec":
        return FiberSpec(diameter, self.core_index, self.surround_index)


@dataclass(frozen=True)
class GuidedMode:
    """One solved eigenmode.

    ``amp_e`` and ``amp_h`` are the core amplitudes of E_z and H_z
    (``E_z = amp_e J_l(u r/a) cos(l phi + psi)``,
    ``H_z = amp_h J_l(u r/a) sin(l phi + psi)``), already scaled to unit power
    for either polarisation ``psi`` (0 = even, pi/2 = odd).
    """

    family: Family
    l: int
    m: int
    wavelength: float
    diameter: float
    n_core: float
    n_surround: float
    n_eff: float
    beta: float
    u: float
    w: float
    amp_e: float
    amp_h: float

    @property
    def label(self) -> str:
        return f"{self.family}{self.l}{self.m}"

    @property
    def k(self) -> float:
        return 2.0 * math.pi / self.wavelength

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter

    @property
    def V(self) -> float:
        return v_from_indices(self.diameter, self.wavelength, self.n_core, self.n_surround)

    @property
    def polarizations(self) -> tuple[float, ...]:
        """Independent polarisation phases ``psi`` of this mode label."""
        if self.l == 0:
            return (math.pi / 2,) if self.family == "TE" else (0.0,)
        return (0.0, math.pi / 2)

    def residual(self) -> float:
        return characteristic_residual(self.family, self.l, self.u, self.w,
                                       self.n_core, self.n_surround)


@dataclass(frozen=True)
class FieldPoint:
    E_r: complex
    E_phi: complex
    E_z: complex
    H_r: complex
    H_phi: complex
    H_z: complex

    @property
    def E(self) -> np.ndarray:
        return np.array([self.E_r, self.E_phi, self.E_z])

    @property
    def H(self) -> np.ndarray:
        return np.array([self.H_r, self.H_phi, self.H_z])


def v_from_indices(diameter: float, wavelength: float, n_core: float,
                   n_surround: float) -> float:
    return math.pi * diameter / wavelength * math.sqrt(n_core**2 - n_surround**2)


def v_number(spec: FiberSpec, wavelength: float) -> float:
    """Normalised frequency ``V = (pi d / lambda) sqrt(n_core^2 - n_surround^2)``."""
    return v_from_indices(spec.diameter, wavelength, spec.n_core(wavelength),
                          spec.surround_index)


def second_mode_cutoff_diameter(wavelength: float, core_index: float,
                                surround_index: float = 1.0) -> float:
    """Diameter at which TE01/TM01 appear (``V`` equal to the first zero of J0)."""
    if not core_index > surround_index:
        raise ValueError("core index must exceed surround index")
    return FIRST_J0_ZERO * wavelength / (math.pi * math.sqrt(core_index**2 - surround_index**2))


# -- characteristic equations -------------------------------------------------

def _bessel_ratios(l, u, w):
    """J'_l(u)/(u J_l(u)) and K'_l(w)/(w K_l(w)); arrays welcome."""
    x = special.jvp(l, u) / (u * special.jv(l, u))
    kp = special.kvp(l, w) / (w * special.kv(l, w))
    return x, kp


def _hybrid_branches(l, u, w, rr):
    """Both roots ``(Y_HE, Y_EH)`` of the hybrid determinant read as a quadratic.

    With ``X = J'_l/(u J_l)`` and ``Kp = K'_l/(w K_l)`` the equation
    ``(X + Kp)(X + rr Kp) = l^2 (1/u^2 + 1/w^2)(1/u^2 + rr/w^2)`` (equivalently
    ``l^2 (beta/k n1)^2 (1/u^2 + 1/w^2)^2``) has roots ``Y_EH > Y_HE``.  The
    HE root comes from the root product so the O(1/w^2) cancellation near
    cutoff is avoided; ``kappa = K_{l-1}/(w K_l)`` enters via
    ``Kp = -l/w^2 - kappa``.
    """
    kl = special.kv(l, w)
    kappa = special.kv(l - 1, w) / (w * kl)
    kp = -l / w**2 - kappa
    rhs = l * l * (1 / u**2 + 1 / w**2) * (1 / u**2 + rr / w**2)
    y_eh = 0.5 * (-(1.0 + rr) * kp + np.sqrt(((1.0 - rr) * kp) ** 2 + 4 * rhs))
    # rr Kp^2 - rhs with the 1/w^4 terms cancelled analytically
    prod = (2 * rr * l * kappa / w**2 + rr * kappa**2 - l * l / u**4
            - l * l * (1 + rr) / (u * u * w * w))
    return prod / y_eh, y_eh


def _pole_free(family, l, u, w, rr):
    """Continuous function of ``u`` whose sign changes are exactly the roots.

    The characteristic equation ``J'/(uJ) = Y`` is multiplied through by
    ``u J_l(u)`` so the poles at the zeros of ``J_l`` disappear.
    """
    if family in ("TE", "TM"):
        kr = special.k1(w) / (w * special.k0(w))
        if family == "TE":
            return special.j1(u) + u * special.j0(u) * kr
        return special.j1(u) + rr * u * special.j0(u) * kr
    y_he, y_eh = _hybrid_branches(l, u, w, rr)
    y = y_he if family == "HE" else y_eh
    return special.jvp(l, u) - u * special.jv(l, u) * y


def characteristic_residual(family: Family, l: int, u: float, w: float,
                            n_core: float, n_surround: float) -> float:
    """Normalised residual ``|X - Y| / (|X| + |Y|)`` of the mode equation.

    ``X = J'_l(u)/(u J_l(u))`` and ``Y`` is the family's branch of the
    characteristic equation (for TE/TM the single-factor equations).
    """
    rr = (n_surround / n_core) ** 2
    x = special.jvp(l, u) / (u * special.jv(l, u))
    if family in ("TE", "TM"):
        y = special.k1(w) / (w * special.k0(w))
        y = y if family == "TE" else rr * y
    else:
        y_he, y_eh = _hybrid_branches(l, u, w, rr)
        y = y_he if family == "HE" else y_eh
    denom = abs(x) + abs(y)
    return float(abs(x - y) / denom) if denom > 0 else 0.0


def determinant_residual(l: int, u: float, w: float, n_core: float,
                         n_surround: float) -> float:
    """Residual of the unfactored hybrid determinant, ``|LHS - RHS| / (|LHS| + |RHS|)``.

    Ill-conditioned as ``w -> 0`` (both sides grow like ``1/w^4``).
    """
    rr = (n_surround / n_core) ** 2
    x = special.jvp(l, u) / (u * special.jv(l, u))
    kp = special.kvp(l, w) / (w * special.kv(l, w))
    lhs = (x + kp) * (x + rr * kp)
    rhs = l * l * (1 / u**2 + 1 / w**2) * (1 / u**2 + rr / w**2)
    return float(abs(lhs - rhs) / (abs(lhs) + abs(rhs)))


def _u_grid(V: float, n_points: int, u_min: float = 0.0) -> np.ndarray:
    # uniform in u, plus a log-dense tail in w so near-cutoff roots (w -> 0)
    # and weakly bound HE11 at small V are bracketed
    n = max(n_points, int(64 * V))
    uniform = np.linspace(0.0, V, n + 2)[1:-1]
    w_tail = V * np.logspace(-9, -0.5, 256)
    tail = np.sqrt(V * V - w_tail**2)
    grid = np.unique(np.concatenate([uniform, tail]))
    return grid[grid > u_min]


def _find_roots(family: Family, l: int, V: float, rr: float,
                n_points: int, max_roots: int | None = None) -> list[float]:
    # EH_lm lies above the m-th zero of J_l; below it the EH branch is a
    # difference of two O(1/u^2) terms and sign changes there are noise
    u_min = 0.999 * float(special.jn_zeros(l, 1)[0]) if family == "EH" else 0.0
    if u_min >= V:
        return []
    u = _u_grid(V, n_points, u_min)
    w = np.sqrt(V * V - u * u)
    with np.errstate(all="ignore"):
        g = _pole_free(family, l, u, w, rr)
    ok = np.isfinite(g)
    u, g = u[ok], g[ok]

    def f(x):
        return float(_pole_free(family, l, x, math.sqrt(max(V * V - x * x, 0.0)), rr))

    roots = []
    idx = np.nonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0)[0]
    for i in idx:
        r = optimize.brentq(f, u[i], u[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps,
                            maxiter=500)
        roots.append(r)
        # small margin for sign changes later rejected by the residual check
        if max_roots is not None and len(roots) >= max_roots + 2:
            break
    # exact zeros on grid nodes
    for i in np.nonzero(g == 0)[0]:
        roots.append(float(u[i]))
    return sorted(roots)


def _build_mode(family, l, m, u, spec_d, wavelength, n1, n2) -> GuidedMode:
    V = v_from_indices(spec_d, wavelength, n1, n2)
    w = math.sqrt(V * V - u * u)
    k = 2.0 * math.pi / wavelength
    a = 0.5 * spec_d
    beta = math.sqrt((k * n1) ** 2 - (u / a) ** 2)
    if family == "TE":
        amp_e, amp_h = 0.0, 1.0
    elif family == "TM":
        amp_e, amp_h = 1.0, 0.0
    else:
        x, kp = _bessel_ratios(l, u, w)
        s = l * (1 / u**2 + 1 / w**2) / (x + kp)
        amp_e, amp_h = 1.0, -(beta / k) * s
    draft = GuidedMode(family, l, m, wavelength, spec_d, n1, n2, beta / k, beta,
                       u, w, amp_e, amp_h)
    norm = math.sqrt(axial_power(draft))
    return GuidedMode(family, l, m, wavelength, spec_d, n1, n2, beta / k, beta,
                      u, w, amp_e / norm, amp_h / norm)


def _family_modes(spec: FiberSpec, wavelength: float, family: Family, l: int,
                  n_points: int = DEFAULT_GRID_POINTS,
                  max_modes: int | None = None) -> list[GuidedMode]:
    n1 = spec.n_core(wavelength)
    n2 = spec.surround_index
    V = v_from_indices(spec.diameter, wavelength, n1, n2)
    rr = (n2 / n1) ** 2
    modes: list[GuidedMode] = []
    last_neff = None
    k = 2.0 * math.pi / wavelength
    a = spec.radius
    for u in _find_roots(family, l, V, rr, n_points, max_modes):
        w = math.sqrt(V * V - u * u)
        if not (0 < u < V) or w <= 0:
            continue
        if characteristic_residual(family, l, u, w, n1, n2) > 1e-8:
            continue  # sign change at a non-root singularity
        neff = math.sqrt((k * n1) ** 2 - (u / a) ** 2) / k
        if last_neff is not None and abs(last_neff - neff) < DEGENERACY_TOL:
            continue
        last_neff = neff
        modes.append(_build_mode(family, l, len(modes) + 1, u, spec.diameter,
                                 wavelength, n1, n2))
        if max_modes is not None and len(modes) >= max_modes:
            break
    return modes


def effective_indices(spec: FiberSpec, wavelength: float, family: Family, l: int,
                      max_modes: int | None = None) -> list[float]:
    """Effective indices of one mode family, descending; no field normalisation."""
    n1 = spec.n_core(wavelength)
    n2 = spec.surround_index
    V = v_from_indices(spec.diameter, wavelength, n1, n2)
    k = 2.0 * math.pi / wavelength
    a = spec.radius
    out: list[float] = []
    for u in _find_roots(family, l, V, (n2 / n1) ** 2, DEFAULT_GRID_POINTS, max_modes):
        w = math.sqrt(max(V * V - u * u, 0.0))
        if not (0 < u < V) or w <= 0:
            continue
        if characteristic_residual(family, l, u, w, n1, n2) > 1e-8:
            continue
        neff = math.sqrt((k * n1) ** 2 - (u / a) ** 2) / k
        if out and abs(out[-1] - neff) < DEGENERACY_TOL:
            continue
        out.append(neff)
        if max_modes is not None and len(out) >= max_modes:
            break
    return out


def solve_fundamental(spec: FiberSpec, wavelength: float) -> GuidedMode:
    """The HE11 mode; it has no cutoff so a missing root is a solver failure."""
    modes = _family_modes(spec, wavelength, "HE", 1, max_modes=1)
    if not modes:
        raise RuntimeError(
            f"HE11 root not bracketed (d={spec.diameter:g} m, lambda={wavelength:g} m)")
    return modes[0]


def modes_of_order(spec: FiberSpec, wavelength: float, l: int,
                   families: tuple[Family, ...] | None = None) -> list[GuidedMode]:
    if families is None:
        families = ("TE", "TM") if l == 0 else ("HE", "EH")
    out: list[GuidedMode] = []
    for fam in families:
        out.extend(_family_modes(spec, wavelength, fam, l))
    return out


def _sort_key(mode: GuidedMode):
    return (-mode.beta, mode.l, _FAMILY_ORDER[mode.family], mode.m)


def enumerate_guided_modes(spec: FiberSpec, wavelength: float,
                           l_max: int) -> list[GuidedMode]:
    """All guided modes with azimuthal order ``<= l_max``, by descending beta."""
    if l_max < 1:
        raise ValueError("l_max must be >= 1")
    modes: list[GuidedMode] = []
    for l in range(l_max + 1):
        modes.extend(modes_of_order(spec, wavelength, l))
    return sorted(modes, key=_sort_key)


def all_guided_modes(spec: FiberSpec, wavelength: float) -> list[GuidedMode]:
    """Every guided mode; stops at the first azimuthal order with none."""
    modes: list[GuidedMode] = []
    l = 0
    while True:
        found = modes_of_order(spec, wavelength, l)
        if not found and l >= 1:
            break
        modes.extend(found)
        l += 1
    return sorted(modes, key=_sort_key)


# -- fields -------------------------------------------------------------------

def _radial_profiles(mode: GuidedMode, r, region: str):
    """Real radial factors (e_r, e_phi, e_z, h_r, h_phi, h_z).

    Full components are ``E_r = i e_r cos``, ``E_phi = i e_phi sin``,
    ``E_z = e_z cos``, ``H_r = i h_r sin``, ``H_phi = i h_phi cos``,
    ``H_z = h_z sin`` with argument ``l phi + psi``.
    """
    l, k, beta = mode.l, mode.k, mode.beta
    a = mode.radius
    r = np.maximum(np.asarray(r, dtype=float), 1e-12 * a)
    A, B = mode.amp_e, mode.amp_h
    if region == "core":
        h = mode.u / a
        kappa2 = h * h
        n2 = mode.n_core**2
        F = special.jv(l, h * r)
        dF = h * special.jvp(l, h * r)
    else:
        q = mode.w / a
        kappa2 = -q * q
        n2 = mode.n_surround**2
        scale = special.jv(l, mode.u) / special.kv(l, mode.w)
        F = scale * special.kv(l, q * r)
        dF = scale * q * special.kvp(l, q * r)
    G, dG = F, dF
    e_z = A * F
    h_z = B * G
    e_r = (beta * A * dF + k * l / r * B * G) / kappa2
    e_phi = (-beta * l / r * A * F - k * B * dG) / kappa2
    h_r = (beta * B * dG + k * n2 * l / r * A * F) / kappa2
    h_phi = (beta * l / r * B * G + k * n2 * A * dF) / kappa2
    return e_r, e_phi, e_z, h_r, h_phi, h_z


def _angular_weights(mode: GuidedMode) -> tuple[float, float]:
    if mode.l == 0:
        psi = mode.polarizations[0]
        return 2 * math.pi * math.cos(psi) ** 2, 2 * math.pi * math.sin(psi) ** 2
    return math.pi, math.pi


def axial_power(mode: GuidedMode) -> float:
    """``(1/2) Re \\int (E x H*) . z dA`` for the stored amplitudes."""
    a = mode.radius
    Ic, Is = _angular_weights(mode)

    def density(rho, region):
        e_r, e_phi, _, h_r, h_phi, _ = _radial_profiles(mode, a * rho, region)
        return (Ic * e_r * h_phi - Is * e_phi * h_r) * rho

    core, _ = integrate.quad(density, 0.0, 1.0, args=("core",), epsabs=0, epsrel=1e-12,
                             limit=50 + 20 * mode.m + 5 * mode.l)
    # evanescent tail in x = w rho; below x = 1 the decay can be algebraic
    # (near-cutoff modes) so integrate in log x there
    wq = mode.w

    def in_x(x):
        return density(x / wq, "surround") / wq

    def in_logx(sx):
        x = math.exp(sx)
        return in_x(x) * x

    clad = 0.0
    x0 = wq
    if wq < 1.0:
        part, _ = integrate.quad(in_logx, math.log(wq), 0.0, epsabs=0, epsrel=1e-12,
                                 limit=200)
        clad += part
        x0 = 1.0
    part, _ = integrate.quad(in_x, x0, np.inf, epsabs=0, epsrel=1e-12, limit=200)
    clad += part
    return 0.5 * a * a * (core + clad)


def mode_field(mode: GuidedMode, r: float, phi: float, polarization: float = 0.0,
               region: str = "auto") -> FieldPoint:
    """Complex field components at ``(r, phi)`` for polarisation phase ``psi``.

    ``region`` forces the core (``"core"``) or surround (``"surround"``)
    expression, which lets callers take one-sided limits at ``r = d/2``.
    ``r = d/2`` itself is evaluated on the surround side.
    """
    if r < 0:
        raise ValueError("r must be >= 0")
    if region == "auto":
        region = "core" if r < mode.radius else "surround"
    psi = polarization
    if mode.l == 0:
        psi = mode.polarizations[0]
    e_r, e_phi, e_z, h_r, h_phi, h_z = (float(v) for v in _radial_profiles(mode, r, region))
    c = math.cos(mode.l * phi + psi)
    s = math.sin(mode.l * phi + psi)
    return FieldPoint(1j * e_r * c, 1j * e_phi * s, e_z * c + 0j,
                      1j * h_r * s, 1j * h_phi * c, h_z * s + 0j)
