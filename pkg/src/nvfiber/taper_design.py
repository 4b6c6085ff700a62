"""Taper profiles from pull recipes and the local adiabaticity criterion.

The shape follows the volume-conservation model of a fibre stretched
through a hot zone of length L(x), where x is the elongation so far. The
waist obeys ``dr_w/dx = -r_w / (2 L(x))`` and the fibre that leaves the hot
zone at elongation x ends up at ``z(x) = (x + L(0) - L(x)) / 2`` in the
transition. A constant hot zone gives exponential transitions. A linearly
shrinking zone with ``dL/dx = -1/2`` gives a straight cone.

The whole taper is modelled as a silica/air rod at every z.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .fiber_modes import FiberSpec, effective_indices

ProfileKind = Literal["constant_hot_zone", "linear"]

DEFAULT_SAMPLES = 512
MAX_STEP_FRACTION = 0.0099   # keep |dr| < 1% of r between samples
LINEAR_ALPHA = -0.5          # dL/dx giving a straight cone


@dataclass(frozen=True)
class PullRecipe:
    """Pull recipe.

    Parameters
    ----------
    initial_radius : float
        Untapered fibre radius r0 [m].
    hot_zone : float or (array, array)
        Constant hot-zone length L [m], or a table ``(x, L)`` sampled over
        ``[0, total_elongation]``.
    total_elongation : float
        Final elongation x_end [m].
    profile_kind : {"constant_hot_zone", "linear"}
        ``linear`` uses ``L(x) = L0 - x/2`` (straight cone); the hot-zone
        argument then gives L0.
    """

    initial_radius: float
    hot_zone: float | tuple[Sequence[float], Sequence[float]]
    total_elongation: float
    profile_kind: ProfileKind = "constant_hot_zone"

    def __post_init__(self):
        if not self.initial_radius > 0:
            raise ValueError("initial_radius must be positive")
        if not self.total_elongation >= 0:
            raise ValueError("total_elongation must be non-negative")
        if self.profile_kind not in ("constant_hot_zone", "linear"):
            raise ValueError(f"unknown profile_kind {self.profile_kind!r}")
        if self.is_tabulated:
            x, L = (np.asarray(v, dtype=float) for v in self.hot_zone)
            if x.ndim != 1 or x.shape != L.shape or x.size < 2:
                raise ValueError("tabulated hot zone needs matching 1-D (x, L) arrays")
            if np.any(np.diff(x) <= 0) or np.any(L <= 0):
                raise ValueError("tabulated hot zone needs increasing x and L > 0")
            if x[0] > 0 or x[-1] < self.total_elongation:
                raise ValueError("tabulated hot zone must span [0, total_elongation]")
        else:
            if not float(self.hot_zone) > 0:
                raise ValueError("hot zone length must be positive")
            if (self.profile_kind == "linear"
                    and self.hot_zone_length(self.total_elongation) <= 0):
                raise ValueError("linear hot zone shrinks to zero before x_end")

    @property
    def is_tabulated(self) -> bool:
        return not np.isscalar(self.hot_zone)

    def hot_zone_length(self, x):
        """L(x) [m]."""
        if self.is_tabulated:
            xs, Ls = (np.asarray(v, dtype=float) for v in self.hot_zone)
            return np.interp(x, xs, Ls)
        L0 = float(self.hot_zone)
        if self.profile_kind == "linear":
            return L0 + LINEAR_ALPHA * np.asarray(x, dtype=float)
        return np.full_like(np.asarray(x, dtype=float), L0)

    @classmethod
    def for_waist(cls, initial_radius: float, waist_radius: float,
                  hot_zone: float) -> "PullRecipe":
        """Constant-hot-zone recipe reaching ``waist_radius``."""
        x_end = 2.0 * hot_zone * math.log(initial_radius / waist_radius)
        return cls(initial_radius, hot_zone, x_end, "constant_hot_zone")


@dataclass(frozen=True)
class TaperProfile:
    """Sampled radius r(z) over ``[0, z_end]``; ``slope`` is dr/dz."""

    z: np.ndarray
    r: np.ndarray
    slope: np.ndarray
    waist_radius: float
    waist_length: float

    def __post_init__(self):
        if not (self.z.shape == self.r.shape == self.slope.shape):
            raise ValueError("z, r and slope must have equal shapes")
        if np.any(self.r <= 0):
            raise ValueError("radius must stay positive")
        if np.any(np.diff(self.z) < 0):
            raise ValueError("z must be non-decreasing")

    @property
    def length(self) -> float:
        return float(self.z[-1] - self.z[0])

    @classmethod
    def from_samples(cls, z, r, waist_length: float | None = None) -> "TaperProfile":
        """Profile from raw samples; slope by finite differences."""
        z = np.asarray(z, dtype=float)
        r = np.asarray(r, dtype=float)
        slope = np.gradient(r, z) if z.size > 1 else np.zeros_like(r)
        rw = float(r.min())
        if waist_length is None:
            at_waist = z[np.isclose(r, rw, rtol=1e-12, atol=0)]
            waist_length = float(at_waist.max() - at_waist.min())
        return cls(z, r, slope, rw, waist_length)

    def max_step_fraction(self) -> float:
        """Largest |dr| between neighbours relative to the local radius."""
        if self.r.size < 2:
            return 0.0
        return float(np.max(np.abs(np.diff(self.r)) / np.minimum(self.r[1:], self.r[:-1])))

    def resampled(self, factor: int = 2) -> "TaperProfile":
        """Insert ``factor - 1`` linearly interpolated points between samples."""
        t = np.linspace(0.0, self.z.size - 1, (self.z.size - 1) * factor + 1)
        i = np.arange(self.z.size)
        return TaperProfile(np.interp(t, i, self.z), np.interp(t, i, self.r),
                            np.interp(t, i, self.slope), self.waist_radius,
                            self.waist_length)

    def scaled_slope(self, factor: float) -> "TaperProfile":
        """Same radii with the axis compressed by ``factor`` (slope x factor)."""
        return TaperProfile(self.z / factor, self.r, self.slope * factor,
                            self.waist_radius, self.waist_length / factor)

    def to_csv(self, path, rho: np.ndarray | None = None) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["z_m", "r_m", "rho"])
            for j in range(self.z.size):
                val = "" if rho is None else repr(float(rho[j]))
                wr.writerow([repr(float(self.z[j])), repr(float(self.r[j])), val])


def _waist_history(recipe: PullRecipe, n: int = 20001):
    """Elongation grid with waist radius, exit position and slope there."""
    x_end = recipe.total_elongation
    x = np.linspace(0.0, x_end, n)
    L = recipe.hot_zone_length(x)
    r0 = recipe.initial_radius
    if not recipe.is_tabulated:
        L0 = float(recipe.hot_zone)
        if recipe.profile_kind == "linear":
            rw = r0 * (1.0 + LINEAR_ALPHA * x / L0) ** (-1.0 / (2.0 * LINEAR_ALPHA))
        else:
            rw = r0 * np.exp(-x / (2.0 * L0))
        dL = np.full_like(x, LINEAR_ALPHA if recipe.profile_kind == "linear" else 0.0)
    else:
        inv = 1.0 / (2.0 * L)
        integral = np.concatenate([[0.0], np.cumsum(0.5 * (inv[1:] + inv[:-1]) * np.diff(x))])
        rw = r0 * np.exp(-integral)
        dL = np.gradient(L, x)
    if np.any(dL >= 1.0):
        raise ValueError("hot zone grows faster than the elongation; profile folds back")
    zx = 0.5 * (x + L[0] - L)
    slope = -rw / (L * (1.0 - dL))
    return x, rw, zx, slope, L


def profile_from_recipe(recipe: PullRecipe, n_samples: int = DEFAULT_SAMPLES,
                        n_waist: int = 16) -> TaperProfile:
    """Full symmetric taper: down transition, waist, up transition.

    Transition samples are log-spaced in radius. Their number is raised above
    ``n_samples // 2`` each when needed so that neighbouring radii differ by
    less than 1%.
    """
    r0 = recipe.initial_radius
    if recipe.total_elongation == 0:
        L = float(recipe.hot_zone_length(0.0))
        z = np.linspace(0.0, L, max(n_waist, 2))
        return TaperProfile(z, np.full_like(z, r0), np.zeros_like(z), r0, L)

    x, rw, zx, slope, L = _waist_history(recipe)
    r_w = float(rw[-1])
    z0 = float(zx[-1])
    Lw = float(L[-1])
    ratio = math.log(r0 / r_w)
    n_t = max(n_samples // 2, int(math.ceil(ratio / math.log1p(MAX_STEP_FRACTION))) + 1)
    # log-spaced radii mapped back through the monotone r_w(x) history
    r_t = np.exp(np.linspace(math.log(r0), math.log(r_w), n_t))
    r_t[0], r_t[-1] = r0, r_w
    order = np.argsort(rw)
    z_t = np.interp(r_t, rw[order], zx[order])
    s_t = np.interp(r_t, rw[order], slope[order])
    z_t[0], z_t[-1] = 0.0, z0
    zw = np.linspace(z0, z0 + Lw, max(n_waist, 2))[1:-1]
    z = np.concatenate([z_t, zw, z0 + Lw + (z0 - z_t[::-1])])
    r = np.concatenate([r_t, np.full_like(zw, r_w), r_t[::-1]])
    s = np.concatenate([s_t, np.zeros_like(zw), -s_t[::-1]])
    # waist edges belong to the flat section
    s[n_t - 1] = 0.0
    s[-n_t] = 0.0
    return TaperProfile(z, r, s, r_w, Lw)


def linear_cone(d_start: float, d_end: float, half_angle_deg: float,
                n_samples: int = DEFAULT_SAMPLES) -> TaperProfile:
    """Straight cone from ``d_start`` to ``d_end`` diameter with a given half-angle."""
    if not (d_start > 0 and d_end > 0):
        raise ValueError("diameters must be positive")
    t = math.tan(math.radians(half_angle_deg))
    if t <= 0:
        raise ValueError("half-angle must be positive")
    r1, r2 = d_start / 2.0, d_end / 2.0
    n = max(n_samples, int(math.ceil(abs(math.log(r1 / r2)) / math.log1p(MAX_STEP_FRACTION))) + 1)
    r = np.exp(np.linspace(math.log(r1), math.log(r2), n))
    r[0], r[-1] = r1, r2
    z = np.abs(r1 - r) / t
    slope = np.full_like(r, -t if r2 < r1 else t)
    return TaperProfile(z, r, slope, float(r.min()), 0.0)


@dataclass(frozen=True)
class AdiabaticityReport:
    """Per-position ratio rho(z) = |dr/dz| / (r dbeta / 2 pi)."""

    z: np.ndarray
    r: np.ndarray
    rho: np.ndarray
    delta_beta: np.ndarray
    next_mode: tuple[str, ...]
    safety_factor: float
    wavelength: float
    passed: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(np.max(self.rho) <= self.safety_factor))

    @property
    def max_rho(self) -> float:
        return float(np.max(self.rho))

    @property
    def worst_position(self) -> float:
        return float(self.z[int(np.argmax(self.rho))])

    @property
    def min_margin(self) -> float:
        """Smallest ``safety_factor - rho`` over z (negative when failing)."""
        return float(self.safety_factor - self.max_rho)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["z_m", "r_m", "rho"])
            for a, b, c in zip(self.z, self.r, self.rho):
                wr.writerow([repr(float(a)), repr(float(b)), repr(float(c))])


class ModeSolveError(RuntimeError):
    """Local mode solve failed; ``z`` identifies the position."""

    def __init__(self, z: float, r: float, cause: Exception):
        super().__init__(f"mode solve failed at z = {z:.6g} m (r = {r:.6g} m): {cause}")
        self.z = z
        self.r = r


def local_beat(radius: float, wavelength: float, core_index="silica",
               surround_index: float = 1.0) -> tuple[float, str]:
    """Delta beta between HE11 and HE12, or HE11 and the light line."""
    spec = FiberSpec(2.0 * radius, core_index, surround_index)
    neffs = effective_indices(spec, wavelength, "HE", 1, max_modes=2)
    if not neffs:
        raise RuntimeError("HE11 not found")
    k = 2.0 * math.pi / wavelength
    if len(neffs) > 1:
        return k * (neffs[0] - neffs[1]), "HE12"
    return k * (neffs[0] - surround_index), "light_line"


def adiabaticity_check(profile: TaperProfile, wavelength: float,
                       safety_factor: float = 1.0, core_index="silica",
                       surround_index: float = 1.0, workers: int = 1,
                       ) -> AdiabaticityReport:
    """Compare the local taper angle with r / z_beat at every sample.

    Radii are solved once each; the mirrored half of a symmetric taper reuses
    the cache.
    """
    if profile.max_step_fraction() > 0.0101:
        raise ValueError("profile too coarse: neighbouring radii differ by more than 1%")
    unique = np.unique(profile.r)

    def solve(rv):
        return local_beat(float(rv), wavelength, core_index, surround_index)

    results: dict[float, tuple[float, str]] = {}
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            futs = {float(rv): ex.submit(solve, rv) for rv in unique}
        items = futs.items()
    else:
        items = ((float(rv), rv) for rv in unique)
    for rv, job in items:
        try:
            results[rv] = job.result() if workers > 1 else solve(job)
        except Exception as exc:
            j = int(np.nonzero(profile.r == rv)[0][0])
            raise ModeSolveError(float(profile.z[j]), rv, exc) from exc

    db = np.array([results[float(rv)][0] for rv in profile.r])
    nxt = tuple(results[float(rv)][1] for rv in profile.r)
    rho = np.abs(profile.slope) / (profile.r * db / (2.0 * math.pi))
    return AdiabaticityReport(profile.z.copy(), profile.r.copy(), rho, db, nxt,
                              float(safety_factor), float(wavelength))
