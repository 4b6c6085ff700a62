"""Three-level NV emitter, background sources and Monte-Carlo time tags.

States are ordered (g, e, s). Powers are in watts, rates in 1/s and times in
seconds. Detected channels are 1 and 2; channel 0 carries pulse syncs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Union

import numba
import numpy as np
from scipy import optimize

from .timetag_io import TimeTagStream, merge_streams

TICK_PS = 4
SYNC_CHANNEL = 0
SIGNAL_CHANNELS = (1, 2)

NV_LIFETIME = 21e-9
DEFAULT_K_ES = 1.0 / 2e-6
DEFAULT_K_SG = 1.0 / 1e-6
DEFAULT_P_SAT = 100e-6


def _sigma_for_psat(p_sat, k_eg, k_es, k_sg):
    return (k_eg + k_es) / (p_sat * (1.0 + k_es / k_sg))


@dataclass(frozen=True)
class ThreeLevelModel:
    """Rate model of the NV center.

    ``k_ge = sigma * P`` is the pump rate. ``k_sg_power`` adds an optional
    power-linear deshelving term. The default sigma puts P_sat at 100 uW.
    """

    sigma: float = _sigma_for_psat(DEFAULT_P_SAT, 1 / NV_LIFETIME, DEFAULT_K_ES, DEFAULT_K_SG)
    k_eg: float = 1.0 / NV_LIFETIME
    k_es: float = DEFAULT_K_ES
    k_sg: float = DEFAULT_K_SG
    quantum_efficiency: float = 1.0
    k_sg_power: float = 0.0

    def __post_init__(self):
        for name in ("sigma", "k_es", "k_sg", "k_sg_power"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not self.k_eg > 0:
            raise ValueError("k_eg must be > 0")
        if not 0.0 <= self.quantum_efficiency <= 1.0:
            raise ValueError("quantum_efficiency must lie in [0, 1]")
        if self.k_es > 0 and self.k_sg == 0 and self.k_sg_power == 0:
            raise ValueError("shelving without deshelving traps the emitter")

    @property
    def lifetime(self) -> float:
        return 1.0 / self.k_eg

    @property
    def two_level(self) -> bool:
        return self.k_es == 0

    def deshelving(self, power: float) -> float:
        return self.k_sg + self.k_sg_power * power

    @property
    def saturation_power(self) -> float:
        """Closed-form P_sat for power-independent deshelving."""
        if self.sigma == 0:
            return math.inf
        ratio = 0.0 if self.two_level else self.k_es / self.k_sg
        return (self.k_eg + self.k_es) / (self.sigma * (1.0 + ratio))

    def with_saturation_power(self, p_sat: float) -> "ThreeLevelModel":
        return replace(self, sigma=_sigma_for_psat(p_sat, self.k_eg, self.k_es,
                                                   self.k_sg if self.k_es else 1.0))


def _check_power(power):
    if power < 0:
        raise ValueError("power must be >= 0")


def rate_matrix(model: ThreeLevelModel, power: float) -> np.ndarray:
    """Generator Q with dp/dt = Q p; columns sum to zero."""
    _check_power(power)
    kge = model.sigma * power
    keg, kes, ksg = model.k_eg, model.k_es, model.deshelving(power)
    return np.array([[-kge, keg, ksg],
                     [kge, -(keg + kes), 0.0],
                     [0.0, kes, -ksg]])


def steady_state(model: ThreeLevelModel, power: float) -> np.ndarray:
    """Null vector of the generator, normalised to unit population."""
    Q = rate_matrix(model, power)
    if model.sigma * power == 0:
        return np.array([1.0, 0.0, 0.0])
    # replace one balance row by normalisation
    A = Q.copy()
    A[2] = 1.0
    return np.linalg.solve(A, np.array([0.0, 0.0, 1.0]))


def excited_population(model: ThreeLevelModel, power: float) -> float:
    """Closed-form steady-state p_e."""
    _check_power(power)
    kge = model.sigma * power
    if kge == 0:
        return 0.0
    shelf = 0.0 if model.two_level else model.k_es / model.deshelving(power)
    return kge / (model.k_eg + model.k_es + kge * (1.0 + shelf))


def _propagator(Q: np.ndarray):
    """Return p(t) = expm(Q t) p0 evaluators via eigen-decomposition."""
    lam, vec = np.linalg.eig(Q)
    inv = np.linalg.inv(vec)
    return lam, vec, inv


def analytic_g2(model: ThreeLevelModel, power: float, tau) -> np.ndarray:
    """g2(tau) = p_e(|tau|) / p_e(inf) starting from the ground state."""
    _check_power(power)
    if model.sigma * power == 0:
        raise ValueError("zero excited population; g2 undefined at P = 0")
    tau = np.abs(np.asarray(tau, dtype=float))
    Q = rate_matrix(model, power)
    pss = steady_state(model, power)
    lam, vec, inv = _propagator(Q)
    c = inv @ np.array([1.0, 0.0, 0.0])
    pe = np.real(np.exp(np.multiply.outer(tau, lam)) @ (vec[1] * c))
    g = pe / pss[1]
    # pe(0) = 0 exactly from the initial condition
    return np.where(tau == 0, 0.0, g)


def g2_rates(model: ThreeLevelModel, power: float) -> tuple[float, float, float]:
    """Bi-exponential parameters (tau1, tau2, a) of analytic_g2.

    ``g2 = 1 - (1 + a) exp(-t/tau1) + a exp(-t/tau2)``. For a two-level
    model tau2 is inf and a = 0.
    """
    Q = rate_matrix(model, power)
    lam = np.sort(np.real(np.linalg.eigvals(Q)))
    nz = lam[np.abs(lam) > 1e-12 * np.max(np.abs(lam))]
    if model.two_level:
        return float(-1.0 / nz[0]), math.inf, 0.0
    fast, slow = -nz[0], -nz[-1]
    t1, t2 = 1.0 / fast, 1.0 / slow
    # slope at zero fixes a: dg/dt(0) = (1 + a)/t1 - a/t2 = k_ge / p_e
    dg0 = model.sigma * power / excited_population(model, power)
    a = (dg0 - fast) / (fast - slow)
    return float(t1), float(t2), float(a)


def dip_fwhm(model: ThreeLevelModel, power: float) -> float:
    """Full width of the antibunching dip at g2 = 1/2."""
    t1, _, _ = g2_rates(model, power)
    f = lambda t: float(analytic_g2(model, power, t)) - 0.5
    hi = t1
    while f(hi) < 0:
        hi *= 2.0
    return 2.0 * optimize.brentq(f, 0.0, hi, xtol=1e-18, rtol=1e-13)


def saturation_rate(model: ThreeLevelModel, power: float,
                    collection_efficiency: float, method: str = "matrix") -> float:
    """Detected rate efficiency * q * k_eg * p_e.

    ``method="closed"`` uses R_inf P / (P + P_sat); it requires
    power-independent deshelving.
    """
    _check_power(power)
    if method == "closed":
        if model.k_sg_power:
            raise ValueError("closed form assumes power-independent deshelving")
        if power == 0:
            return 0.0
        psat = model.saturation_power
        return saturation_limit(model, collection_efficiency) * power / (power + psat)
    pe = steady_state(model, power)[1]
    return collection_efficiency * model.quantum_efficiency * model.k_eg * pe


def saturation_limit(model: ThreeLevelModel, collection_efficiency: float) -> float:
    """R_inf = efficiency * q * k_eg * p_e(P -> inf)."""
    shelf = 0.0 if model.two_level else model.k_es / model.k_sg
    return collection_efficiency * model.quantum_efficiency * model.k_eg / (1.0 + shelf)


# ----------------------------------------------------------------- background

BLEACH_REF_POWER = 30e-6
BLEACH_REF_TIME = 60.0
BLEACH_TARGET = 0.5
RECOVERY_TIME_90 = 180.0


def calibrate_bleach(fraction_at_ref: float = BLEACH_TARGET,
                     recovery_time_90: float = RECOVERY_TIME_90,
                     ref_power: float = BLEACH_REF_POWER,
                     ref_time: float = BLEACH_REF_TIME) -> tuple[float, float]:
    """Return (k_b, k_r) so that A(ref_time; ref_power) = fraction_at_ref.

    ``k_r`` follows from the 90%-recovery time at zero power.
    """
    if not 0.0 < fraction_at_ref < 1.0:
        raise ValueError("bleached fraction must lie in (0, 1)")
    k_r = math.log(10.0) / recovery_time_90

    def a_ref(kbp):
        s = k_r + kbp
        ass = k_r / s
        return ass + (1 - ass) * math.exp(-s * ref_time) - fraction_at_ref

    hi = 1.0
    while a_ref(hi) > 0:
        hi *= 10.0
        if hi > 1e12:
            raise ValueError("target bleaching unreachable with this recovery rate")
    kbp = optimize.brentq(a_ref, 0.0, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps)
    return kbp / ref_power, k_r


_KB, _KR = calibrate_bleach()


@dataclass(frozen=True)
class BackgroundModel:
    """Background sources, rates per detection channel.

    Fibre and Raman rates are quoted at unit detector efficiency and get
    scaled by each channel's efficiency; dark counts are not.

    Fibre fluorescence scales as ``fiber_rate * (P / fiber_reference_power)``
    times the active fraction A(t). The default bleach constants satisfy
    A(60 s; 30 uW) = 0.5 and a 180 s 90%-recovery time.
    """

    fiber_rate: float = 0.0
    fiber_reference_power: float = DEFAULT_P_SAT
    fiber_lifetime: float = 30e-6
    bleach_rate: float = _KB
    recovery_rate: float = _KR
    dark_rate: float = 0.0
    raman_rate: float = 0.0

    def __post_init__(self):
        if not self.fiber_lifetime > 0:
            raise ValueError("fiber_lifetime must be > 0")
        if not self.fiber_reference_power > 0:
            raise ValueError("fiber_reference_power must be > 0")
        for name in ("fiber_rate", "bleach_rate", "recovery_rate", "dark_rate", "raman_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def steady_active(self, power: float) -> float:
        s = self.recovery_rate + self.bleach_rate * power
        return 1.0 if s == 0 else self.recovery_rate / s

    def recovery_time(self, fraction: float = 0.9) -> float:
        """Time at P = 0 for the bleached deficit to shrink by ``fraction``."""
        return -math.log(1.0 - fraction) / self.recovery_rate

    def fiber_fluorescence(self, power: float, active: float = 1.0) -> float:
        return self.fiber_rate * power / self.fiber_reference_power * active


def bleach_response(background: BackgroundModel, power: float, t, initial: float = 1.0):
    """Active fraction A(t) of dA/dt = -k_b P A + k_r (1 - A)."""
    _check_power(power)
    if not 0.0 <= initial <= 1.0:
        raise ValueError("initial active fraction must lie in [0, 1]")
    t = np.asarray(t, dtype=float)
    s = background.recovery_rate + background.bleach_rate * power
    ass = background.steady_active(power)
    out = ass + (initial - ass) * np.exp(-s * t)
    return np.clip(out, min(initial, ass), max(initial, ass))


def _bleach_integral(background: BackgroundModel, power, t, initial=1.0):
    """Integral of A from 0 to t."""
    s = background.recovery_rate + background.bleach_rate * power
    ass = background.steady_active(power)
    t = np.asarray(t, dtype=float)
    if s == 0:
        return initial * t
    return ass * t + (initial - ass) * (-np.expm1(-s * t)) / s


# --------------------------------------------------------------- polarization

@dataclass(frozen=True)
class PolarizationModel:
    """Total rate S_NV + B_mean (1 + V cos 2(theta - theta0))."""

    signal: float
    background_mean: float
    visibility: float = 0.0
    theta0: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.visibility <= 1.0:
            raise ValueError("visibility must lie in [0, 1]")
        if self.signal < 0 or self.background_mean < 0:
            raise ValueError("rates must be >= 0")

    @property
    def suppression(self) -> float:
        b = self.background_mean
        return (self.signal + b * (1 + self.visibility)) / (self.signal + b * (1 - self.visibility))

    @classmethod
    def for_suppression(cls, factor: float, signal: float = 1.0, visibility: float = 1.0,
                        theta0: float = 0.0) -> "PolarizationModel":
        """Background level giving ``(S + B_max) / (S + B_min) = factor``."""
        if factor < 1:
            raise ValueError("suppression factor must be >= 1")
        # (S + B(1+V)) = f (S + B(1-V))  ->  B = S (f-1) / (V (1+f) - (f-1))
        den = visibility * (1.0 + factor) - (factor - 1.0)
        if den <= 0:
            raise ValueError("visibility too small for the requested factor")
        return cls(signal, signal * (factor - 1.0) / den, visibility, theta0)


def polarization_signal(model: PolarizationModel, theta):
    """Return ``(total, background_share)`` at analyser angle ``theta``."""
    theta = np.asarray(theta, dtype=float)
    b = model.background_mean * (1.0 + model.visibility * np.cos(2.0 * (theta - model.theta0)))
    total = model.signal + b
    share = np.divide(b, total, out=np.zeros_like(total), where=total > 0)
    return total, share


# ----------------------------------------------------------------- scene + MC

@dataclass(frozen=True)
class CW:
    power: float


@dataclass(frozen=True)
class Pulsed:
    rep_rate: float
    pulse_energy: float

    @property
    def mean_power(self) -> float:
        return self.rep_rate * self.pulse_energy


Excitation = Union[CW, Pulsed]


@dataclass(frozen=True)
class Scene:
    """Emitter, background, excitation and two-channel HBT collection.

    ``splitting`` is the fraction of collected light sent to channel 1.
    """

    emitter: ThreeLevelModel = field(default_factory=ThreeLevelModel)
    background: BackgroundModel = field(default_factory=BackgroundModel)
    excitation: Excitation = field(default_factory=lambda: CW(DEFAULT_P_SAT))
    collection_efficiency: float = 1.0
    splitting: float = 0.5
    efficiencies: tuple[float, float] = (1.0, 1.0)
    initial_active: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.splitting <= 1.0:
            raise ValueError("splitting ratio must lie in [0, 1]")
        if not 0.0 <= self.collection_efficiency <= 1.0:
            raise ValueError("collection_efficiency must lie in [0, 1]")
        if len(self.efficiencies) != 2 or not all(0 <= e <= 1 for e in self.efficiencies):
            raise ValueError("efficiencies must be two values in [0, 1]")

    @property
    def channel_fractions(self) -> tuple[float, float]:
        c = self.collection_efficiency
        return (c * self.splitting * self.efficiencies[0],
                c * (1.0 - self.splitting) * self.efficiencies[1])

    @property
    def mean_power(self) -> float:
        ex = self.excitation
        return ex.power if isinstance(ex, CW) else ex.mean_power

    def detected_rate(self) -> float:
        """Analytic CW NV rate summed over both channels."""
        if not isinstance(self.excitation, CW):
            raise ValueError("analytic detected rate defined for CW excitation")
        return saturation_rate(self.emitter, self.excitation.power, sum(self.channel_fractions))


def _cw_emitter_times(model: ThreeLevelModel, power: float, p_detect: float,
                      duration: float, rng: np.random.Generator) -> np.ndarray:
    """Arrival times of detected photons for a CW-pumped renewal process.

    Between detections the emitter makes N excitation cycles, N geometric in
    the per-decay detection probability; S of the N - 1 undetected cycles
    pass through the shelf. Summed exponentials collapse to gamma variates.
    """
    kge = model.sigma * power
    kee = model.k_eg + model.k_es
    ksg = model.deshelving(power)
    pd = model.k_eg / kee * model.quantum_efficiency * p_detect
    if kge == 0 or pd == 0:
        return np.zeros(0)
    ps = model.k_es / kee / (1.0 - pd) if pd < 1 else 0.0
    ps = min(ps, 1.0)
    # trajectory starts in the ground state
    rate = saturation_rate(model, power, p_detect)
    mean_gap = 1.0 / rate
    chunks = []
    t0 = 0.0
    while True:
        n = int(max(1024, 1.1 * (duration - t0) / mean_gap + 10 * math.sqrt(duration / mean_gap)))
        N = rng.geometric(pd, n)
        S = rng.binomial(N - 1, ps) if ps > 0 else np.zeros(n, np.int64)
        gaps = rng.gamma(N, 1.0 / kge) + rng.gamma(N, 1.0 / kee)
        if ps > 0:
            gaps += rng.gamma(S, 1.0 / ksg)
        t = t0 + np.cumsum(gaps)
        chunks.append(t)
        if t[-1] >= duration:
            break
        t0 = float(t[-1])
    times = np.concatenate(chunks)
    return times[times < duration]


@numba.njit(cache=True)
def _pulsed_kernel(rng, n_pulses, period, p_exc, kee, p_rad, p_shelf_given_nonrad,
                   ksg):
    """Exact jump trajectory with instantaneous excitation at each sync.

    State 0 = g, 1 = e, 2 = s. Exponential waits that cross a pulse boundary
    are redrawn in the next period (memorylessness).
    """
    out = np.empty(max(16, n_pulses // 4), np.float64)
    n_out = 0
    state = 0
    for i in range(n_pulses):
        t_pulse = i * period
        t_next = t_pulse + period
        if state == 0 and rng.random() < p_exc:
            state = 1
        cur = t_pulse
        while state != 0:
            if state == 1:
                dt = rng.exponential(1.0 / kee)
                if cur + dt >= t_next:
                    break
                cur += dt
                u = rng.random()
                if u < p_rad:
                    if n_out == out.size:
                        grown = np.empty(out.size * 2, np.float64)
                        grown[:n_out] = out[:n_out]
                        out = grown
                    out[n_out] = cur
                    n_out += 1
                    state = 0
                elif rng.random() < p_shelf_given_nonrad:
                    state = 2
                else:
                    state = 0
            else:
                dt = rng.exponential(1.0 / ksg)
                if cur + dt >= t_next:
                    break
                cur += dt
                state = 0
    return out[:n_out]


def _pulsed_emitter_times(model: ThreeLevelModel, ex: Pulsed, p_detect: float,
                          n_pulses: int, rng: np.random.Generator) -> np.ndarray:
    kee = model.k_eg + model.k_es
    p_exc = -math.expm1(-model.sigma * ex.pulse_energy)
    p_rad = model.k_eg / kee * model.quantum_efficiency
    nonrad = 1.0 - p_rad
    p_shelf = (model.k_es / kee) / nonrad if nonrad > 0 else 0.0
    ksg = model.deshelving(ex.mean_power)
    emitted = _pulsed_kernel(rng, n_pulses, 1.0 / ex.rep_rate, p_exc, kee, p_rad,
                             min(p_shelf, 1.0), ksg if ksg > 0 else 1.0)
    keep = rng.random(emitted.size) < p_detect
    return emitted[keep]


def _route(times: np.ndarray, fractions, rng) -> tuple[np.ndarray, np.ndarray]:
    """Assign detected photons to channel 1 or 2."""
    f1, f2 = fractions
    tot = f1 + f2
    if times.size == 0 or tot == 0:
        return np.zeros(0, np.uint8), np.zeros(0)
    ch = np.where(rng.random(times.size) < f1 / tot, 1, 2).astype(np.uint8)
    return ch, times


def _poisson_times(rate: float, duration: float, rng) -> np.ndarray:
    if rate <= 0:
        return np.zeros(0)
    n = rng.poisson(rate * duration)
    return np.sort(rng.random(n) * duration)


def _bleached_times(scene: Scene, rate0: float, duration: float, rng) -> np.ndarray:
    """Inhomogeneous Poisson with rate rate0 * A(t), by inverse-CDF sampling."""
    if rate0 <= 0:
        return np.zeros(0)
    bg, P = scene.background, scene.mean_power
    total = rate0 * float(_bleach_integral(bg, P, duration, scene.initial_active))
    n = rng.poisson(total)
    u = np.sort(rng.random(n)) * total / rate0
    # invert the monotone integral on a fine grid
    grid = np.linspace(0.0, duration, 4097)
    cum = _bleach_integral(bg, P, grid, scene.initial_active)
    return np.interp(u, cum, grid)


def simulate_stream(scene: Scene, duration: float, seed: int | None = None) -> TimeTagStream:
    """Monte-Carlo photon stream of ``scene`` over ``duration`` seconds.

    Emitter photons, fibre fluorescence, dark counts and Raman residual are
    simulated independently per channel and merged. Pulsed runs add one
    channel-0 sync per pulse and fibre fluorescence delayed by Exp(tau_f).
    """
    if not duration > 0:
        raise ValueError("duration must be > 0")
    seed = scene.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    fr = scene.channel_fractions
    p_detect = fr[0] + fr[1]
    ex = scene.excitation
    bg = scene.background
    chans, times = [], []
    if isinstance(ex, CW):
        t_nv = _cw_emitter_times(scene.emitter, ex.power, p_detect, duration, rng)
    else:
        n_pulses = int(math.floor(duration * ex.rep_rate))
        if n_pulses < 1:
            raise ValueError("duration shorter than one pulse period")
        t_nv = _pulsed_emitter_times(scene.emitter, ex, p_detect, n_pulses, rng)
        sync = np.arange(n_pulses) / ex.rep_rate
        chans.append(np.zeros(n_pulses, np.uint8))
        times.append(sync)
    c, t = _route(t_nv, fr, rng)
    chans.append(c)
    times.append(t)

    P = scene.mean_power
    for k, ch in enumerate(SIGNAL_CHANNELS):
        eff = scene.efficiencies[k]
        fl = _bleached_times(scene, eff * bg.fiber_fluorescence(P), duration, rng)
        if isinstance(ex, Pulsed) and fl.size:
            period = 1.0 / ex.rep_rate
            fl = np.floor(fl / period) * period + rng.exponential(bg.fiber_lifetime, fl.size)
            fl = fl[fl < duration]
        steady = np.concatenate([_poisson_times(bg.dark_rate, duration, rng),
                                 _poisson_times(eff * bg.raman_rate, duration, rng)])
        extra = np.concatenate([fl, steady])
        chans.append(np.full(extra.size, ch, np.uint8))
        times.append(extra)
    ch_all = np.concatenate(chans)
    t_all = np.concatenate(times)
    return TimeTagStream.from_times(ch_all, t_all, TICK_PS)


def merge_scenes(*streams: TimeTagStream) -> TimeTagStream:
    """Superimpose streams (e.g. two independent emitters)."""
    out = streams[0]
    for s in streams[1:]:
        out = merge_streams(out, s)
    return out
