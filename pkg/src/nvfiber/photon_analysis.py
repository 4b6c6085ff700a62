"""Correlation histograms, g2 normalisation and background correction, fits.

Delay bins are centred on multiples of the bin width. A delay d falls in bin
``sign(d) * floor(|d|/width + 1/2)``, so positive and negative delays are
binned symmetrically.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Literal, Sequence

import numba
import numpy as np

from .fitting import FitError, RawFit, log_errors, multistart
from .timetag_io import TimeTagStream

__all__ = [
    "CorrelationHistogram", "G2Curve", "BackgroundRecord", "DecayCurve",
    "LifetimeFit", "SaturationFit", "PolarizationFit", "G2Fit", "FitError",
    "correlate", "normalize_g2", "corrected_g2", "decay_histogram",
    "fit_lifetime", "fit_saturation", "fit_cosine", "fit_g2_three_level",
]

Mode = Literal["full", "start_stop"]


@dataclass(frozen=True)
class CorrelationHistogram:
    bin_width: float
    delays: np.ndarray
    counts: np.ndarray
    n_a: int
    n_b: int
    duration: float
    mode: Mode = "full"
    channels: tuple[int, int] = (1, 2)
    widths: np.ndarray | None = None  # exact per-bin widths on the tick grid

    def __post_init__(self):
        if np.any(self.counts < 0):
            raise ValueError("counts must be non-negative")

    @property
    def bin_widths(self) -> np.ndarray:
        if self.widths is None:
            return np.full(self.counts.shape, float(self.bin_width))
        return self.widths

    def to_csv(self, path) -> None:
        _write_columns(path, ("bin_center_s", "counts"), self.delays, self.counts)


@dataclass(frozen=True)
class G2Curve:
    tau: np.ndarray
    g2: np.ndarray
    sigma: np.ndarray | None = None

    def to_csv(self, path) -> None:
        if self.sigma is None:
            _write_columns(path, ("tau_s", "g2"), self.tau, self.g2)
        else:
            _write_columns(path, ("tau_s", "g2", "sigma"), self.tau, self.g2, self.sigma)


@dataclass(frozen=True)
class BackgroundRecord:
    """Mean signal and background rates per channel."""

    s1: float
    s2: float
    n1: float
    n2: float

    def __post_init__(self):
        if min(self.s1, self.s2, self.n1, self.n2) < 0:
            raise ValueError("background record rates must be >= 0")

    @property
    def totals(self) -> tuple[float, float]:
        return self.s1 + self.n1, self.s2 + self.n2

    @classmethod
    def from_totals(cls, t1: float, t2: float, n1: float, n2: float) -> "BackgroundRecord":
        """Signal as measured total minus measured background."""
        return cls(t1 - n1, t2 - n2, n1, n2)


@dataclass(frozen=True)
class DecayCurve:
    """Histogram of photon delays after the preceding sync (bin centres in ``t``)."""

    t: np.ndarray
    counts: np.ndarray
    bin_width: float

    def to_csv(self, path) -> None:
        _write_columns(path, ("bin_center_s", "counts"), self.t, self.counts)


def _write_columns(path, header, *cols):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*cols):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else int(v)
                        for v in row])


# --------------------------------------------------------------- correlation

@numba.njit(cache=True)
def _bin_index(d, width):
    """Nearest bin to delay ``d`` (ticks); ties round away from zero."""
    if d >= 0:
        return int(math.floor(d / width + 0.5))
    return -int(math.floor(-d / width + 0.5))


@numba.njit(cache=True)
def _full_kernel(a, b, same, max_d, width, k_max, out):
    n_b = b.size
    lo = 0
    for i in range(a.size):
        ta = a[i]
        while lo < n_b and b[lo] < ta - max_d:
            lo += 1
        j = lo
        while j < n_b and b[j] <= ta + max_d:
            if not (same and j == i):
                k = _bin_index(b[j] - ta, width)
                if -k_max <= k <= k_max:
                    out[k + k_max] += 1
            j += 1


@numba.njit(cache=True)
def _start_stop_kernel(a, b, same, max_d, width, k_max, out):
    n_b = b.size
    j = 0
    for i in range(a.size):
        ta = a[i]
        if same:
            j = i + 1
        else:
            while j < n_b and b[j] < ta:
                j += 1
        if j >= n_b:
            break
        d = b[j] - ta
        if d <= max_d:
            k = _bin_index(d, width)
            if k <= k_max:
                out[k + k_max] += 1


def correlate(stream: TimeTagStream, ch_a: int, ch_b: int, bin_width: float,
              max_delay: float, mode: Mode = "full",
              duration: float | None = None) -> CorrelationHistogram:
    """Histogram of delays t_b - t_a.

    ``full`` counts every pair with |delay| <= max_delay. ``start_stop``
    counts only the next ch_b event after each ch_a event. Bin k covers
    delays that round to k * bin_width; the outermost bins are the last ones
    fully inside max_delay. ``duration`` defaults to the time of the last tag.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    if not max_delay >= 0:
        raise ValueError("max_delay must be >= 0")
    if mode not in ("full", "start_stop"):
        raise ValueError(f"unknown mode {mode!r}")
    present = set(np.unique(stream.channels).tolist())
    for ch in (ch_a, ch_b):
        if ch not in present:
            raise ValueError(f"channel {ch} has no records in the stream")
    res = stream.resolution_ps * 1e-12
    a = stream.channel_ticks(ch_a).astype(np.float64)
    b = a if ch_a == ch_b else stream.channel_ticks(ch_b).astype(np.float64)
    width = bin_width / res
    if abs(width - round(width)) < 1e-9 * width:
        width = float(round(width))
    if width < 1.0:
        raise ValueError("bin_width is finer than the time-tag resolution")
    # only bins lying entirely inside +-max_delay, so none is partially filled
    k_max = int(math.floor(max_delay / bin_width - 0.5 + 1e-9))
    if k_max < 0:
        raise ValueError("max_delay shorter than half a bin")
    max_d = (k_max + 0.5) * width
    out = np.zeros(2 * k_max + 1, np.int64)
    kern = _full_kernel if mode == "full" else _start_stop_kernel
    kern(a, b, ch_a == ch_b, max_d, width, k_max, out)
    delays = np.arange(-k_max, k_max + 1) * bin_width
    T = stream.duration if duration is None else float(duration)
    widths = _tick_widths(width, k_max) * res
    return CorrelationHistogram(bin_width, delays, out, int(a.size), int(b.size), T,
                                mode, (ch_a, ch_b), widths)


def _tick_widths(width: float, k_max: int) -> np.ndarray:
    """Number of integer tick delays that ``_bin_index`` maps to each bin."""
    def first(k):
        # smallest non-negative integer delay landing in bin >= k
        d = max(int(math.floor((k - 0.5) * width)) - 2, 0)
        while _bin_index(float(d), width) < k:
            d += 1
        return d
    edges = np.array([first(k) for k in range(1, k_max + 2)], dtype=np.float64)
    pos = np.diff(edges)
    zero = 2.0 * edges[0] - 1.0
    return np.concatenate([pos[::-1], [zero], pos])


def normalize_g2(hist: CorrelationHistogram) -> G2Curve:
    """g2_raw = C / (r_a r_b bin_width T) with channel rates r = N / T.

    The bin width is the exact tick-grid width of each bin.
    """
    if hist.mode != "full":
        raise ValueError("start_stop histograms cannot be normalised to g2")
    if hist.duration <= 0 or hist.n_a == 0 or hist.n_b == 0:
        raise ValueError("normalisation needs duration and non-zero channel totals")
    T = hist.duration
    expected = hist.n_a * hist.n_b * hist.bin_widths / T
    g = hist.counts / expected
    sigma = np.sqrt(np.maximum(hist.counts, 1)) / expected
    return G2Curve(hist.delays.copy(), g, sigma)


def corrected_g2(curve: G2Curve, bg: BackgroundRecord) -> G2Curve:
    """Remove uncorrelated background: g2 = (g_raw T1 T2 - N1 S2 - S1 N2 - N1 N2) / (S1 S2)."""
    if bg.s1 <= 0 or bg.s2 <= 0:
        raise ValueError("pure background, correction undefined (zero signal)")
    t1, t2 = bg.totals
    den = bg.s1 * bg.s2
    # T1 T2 - (N1 S2 + S1 N2 + N1 N2) = S1 S2, so the map is 1 + (g - 1) T1 T2 / (S1 S2)
    g = 1.0 + (curve.g2 - 1.0) * (t1 * t2 / den)
    sig = None if curve.sigma is None else curve.sigma * t1 * t2 / den
    return G2Curve(curve.tau.copy(), g, sig)


def decay_histogram(stream: TimeTagStream, sync_channel: int, signal_channel: int,
                    bin_width: float, window: float) -> DecayCurve:
    """Delays of signal events after the latest sync at or before them."""
    sync = stream.channel_ticks(sync_channel)
    if sync.size == 0:
        raise ValueError(f"no sync events on channel {sync_channel}")
    sig = stream.channel_ticks(signal_channel)
    idx = np.searchsorted(sync, sig, side="right") - 1
    ok = idx >= 0
    res = stream.resolution_ps * 1e-12
    d = (sig[ok] - sync[idx[ok]]).astype(np.float64) * res
    n_bins = int(math.ceil(window / bin_width - 1e-9))
    counts = np.bincount(np.floor(d[d < window] / bin_width).astype(np.int64),
                         minlength=n_bins)[:n_bins]
    t = (np.arange(n_bins) + 0.5) * bin_width
    return DecayCurve(t, counts.astype(np.int64), bin_width)


# ---------------------------------------------------------------------- fits

def _record(obj) -> dict:
    out = {}
    for k, v in asdict(obj).items():
        if isinstance(v, float) and not math.isfinite(v):
            v = None
        out[k] = v
    return out


class _Exportable:
    def to_dict(self) -> dict:
        return _record(self)

    def to_json(self, path=None) -> str:
        s = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(s + "\n")
        return s


@dataclass(frozen=True)
class LifetimeFit(_Exportable):
    a_fast: float
    tau_fast: float
    a_slow: float
    tau_slow: float
    offset: float
    a_fast_err: float
    tau_fast_err: float
    a_slow_err: float
    tau_slow_err: float
    offset_err: float
    components: int
    slow_component: str = "NV"
    reduced_chi2: float = float("nan")

    def model(self, t):
        t = np.asarray(t, dtype=float)
        fast = 0.0 if self.components == 1 else self.a_fast * np.exp(-t / self.tau_fast)
        return fast + self.a_slow * np.exp(-t / self.tau_slow) + self.offset


@dataclass(frozen=True)
class SaturationFit(_Exportable):
    r_inf: float
    p_sat: float
    c_bg: float
    r_inf_err: float
    p_sat_err: float
    c_bg_err: float
    c_bg_at_bound: bool = False

    def model(self, p):
        p = np.asarray(p, dtype=float)
        return self.r_inf * p / (p + self.p_sat) + self.c_bg * p


@dataclass(frozen=True)
class PolarizationFit(_Exportable):
    mean: float
    amplitude: float
    theta0: float
    mean_err: float
    amplitude_err: float
    theta0_err: float
    suppression: float | None
    suppression_defined: bool

    def model(self, theta):
        return self.mean + self.amplitude * np.cos(2.0 * (np.asarray(theta) - self.theta0))


@dataclass(frozen=True)
class G2Fit(_Exportable):
    tau1: float
    tau2: float
    a: float
    tau1_err: float
    tau2_err: float
    a_err: float
    two_level: bool
    reduced_chi2: float = float("nan")

    def model(self, tau):
        return g2_model(tau, self.tau1, self.tau2, self.a)

    @property
    def g2_zero(self) -> float:
        return float(self.model(0.0))


def _bic_prefers_simple(chi2_simple, chi2_full, n, extra_params, known_sigma=True):
    """BIC comparison; without known noise the RSS form n ln(RSS/n) is used."""
    penalty = extra_params * math.log(max(n, 2))
    if known_sigma:
        return chi2_simple - chi2_full < penalty
    if chi2_full <= 0:
        return chi2_simple <= 0
    return n * math.log(max(chi2_simple, 1e-300) / chi2_full) < penalty


def _tail_slope(t, y):
    """Decay constant from a log-linear fit of the upper half of the window."""
    m = (t > t[0] + 0.3 * (t[-1] - t[0])) & (y > 0)
    if m.sum() < 3:
        m = y > 0
    if m.sum() < 2:
        return float(t[-1] - t[0]) / 3.0
    p = np.polyfit(t[m], np.log(y[m]), 1)
    return float(-1.0 / p[0]) if p[0] < 0 else float(t[-1] - t[0])


def fit_lifetime(curve: DecayCurve, t_min: float = 0.0) -> LifetimeFit:
    """Poisson-weighted fit of A_f e^(-t/tau_f) + A_s e^(-t/tau_s) + c.

    Falls back to the single-exponential branch when the second component
    is not supported by the data (BIC) or collapses.
    """
    m = curve.t >= t_min
    t, y = curve.t[m], curve.counts[m].astype(float)
    if np.count_nonzero(y) < 5:
        raise FitError("need at least 5 non-zero bins")
    w = 1.0 / np.sqrt(np.maximum(y, 1.0))
    t0 = float(t[0])
    tt = t - t0
    span = float(tt[-1]) if tt[-1] > 0 else curve.bin_width

    def single(x):
        A, tau = np.exp(x[:2])
        return (A * np.exp(-tt / tau) + x[2] - y) * w

    def double(x):
        Af, tf, As, gap = np.exp(x[:4])
        ts = tf + gap
        return (Af * np.exp(-tt / tf) + As * np.exp(-tt / ts) + x[4] - y) * w

    tail = min(max(_tail_slope(tt, y), 2 * curve.bin_width), 10 * span)
    c0 = float(np.median(y[-max(3, y.size // 20):]))
    peak = max(float(y[:3].max()) - c0, 1.0)
    s_starts = [[math.log(peak), math.log(tail * f), c0] for f in (0.5, 1.0, 2.0)]
    fit1 = multistart(single, s_starts)

    d_starts = []
    for frac in (0.05, 0.1, 0.2, 0.4):
        for ratio in (1.0, 5.0):
            As = peak / (1 + ratio)
            tf = tail * frac
            d_starts.append([math.log(As * ratio), math.log(tf), math.log(As),
                             math.log(max(tail - tf, tf)), c0])
    try:
        fit2 = multistart(double, d_starts)
    except FitError:
        fit2 = None

    n = y.size
    use_single = fit2 is None or _bic_prefers_simple(fit1.chi2, fit2.chi2, n, 2)
    if not use_single:
        Af, tf, As, gap = np.exp(fit2.x[:4])
        v = np.diag(fit2.cov)
        if not (np.all(np.isfinite(v)) and Af > 0 and As > 0):
            use_single = True
    if use_single:
        A, tau = np.exp(fit1.x[:2])
        v = np.diag(fit1.cov)
        e = log_errors(np.array([A, tau]), v[:2])
        # shift amplitudes back to t = 0
        a0 = A * math.exp(t0 / tau)
        return LifetimeFit(0.0, float("nan"), a0, tau, float(fit1.x[2]), 0.0, float("nan"),
                           float(e[0] * a0 / A), float(e[1]), float(math.sqrt(v[2])), 1,
                           reduced_chi2=fit1.reduced_chi2)
    ts = tf + gap
    cov = fit2.cov
    # var(ts) from d ts = tf d(log tf) + gap d(log gap)
    g = np.array([0.0, tf, 0.0, gap, 0.0])
    ts_err = float(math.sqrt(max(g @ cov @ g, 0.0)))
    e = log_errors(np.array([Af, tf, As]), np.diag(cov)[:3])
    return LifetimeFit(float(Af * math.exp(t0 / tf)), float(tf), float(As * math.exp(t0 / ts)),
                       float(ts), float(fit2.x[4]), float(e[0] * math.exp(t0 / tf)),
                       float(e[1]), float(e[2] * math.exp(t0 / ts)), ts_err,
                       float(math.sqrt(cov[4, 4])), 2, reduced_chi2=fit2.reduced_chi2)


def fit_saturation(power: Sequence[float], rate: Sequence[float],
                   sigma: Sequence[float] | None = None) -> SaturationFit:
    """Least squares of R_inf P / (P + P_sat) + c_bg P with c_bg >= 0."""
    P = np.asarray(power, dtype=float)
    R = np.asarray(rate, dtype=float)
    if P.size < 4 or P.shape != R.shape:
        raise FitError("need at least 4 (power, rate) points")
    w = np.ones_like(R) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    scale_r = float(np.max(np.abs(R))) or 1.0
    scale_p = float(np.max(P)) or 1.0

    c_unit = scale_r / scale_p

    def free(x):
        rinf, ps = np.exp(x[:2])
        return (rinf * P / (P + ps) + x[2] * c_unit * P - R) * w / scale_r

    def clamped(x):
        rinf, ps = np.exp(x)
        return (rinf * P / (P + ps) - R) * w / scale_r

    # initial guesses over a spread of half-saturation powers
    starts = []
    for f in (0.05, 0.1, 0.2, 0.3, 0.5, 1.0, 2.0, 5.0):
        ps = f * scale_p
        rinf = scale_r * (scale_p + ps) / scale_p
        starts.append([math.log(rinf), math.log(ps), 0.0])
    fit = multistart(free, starts, scale_by_chi2=sigma is None)
    at_bound = False
    if fit.x[2] < 0:
        fit = multistart(clamped, [s[:2] for s in starts], scale_by_chi2=sigma is None)
        at_bound = True
    rinf, ps = np.exp(fit.x[:2])
    if np.max(P) < ps:
        raise FitError("no point above the fitted P_sat")
    e = log_errors(np.array([rinf, ps]), np.diag(fit.cov)[:2])
    c = 0.0 if at_bound else float(fit.x[2] * c_unit)
    ce = 0.0 if at_bound else float(math.sqrt(fit.cov[2, 2]) * c_unit)
    return SaturationFit(float(rinf), float(ps), c, float(e[0]), float(e[1]), ce, at_bound)


def fit_cosine(theta: Sequence[float], rate: Sequence[float],
               sigma: Sequence[float] | None = None) -> PolarizationFit:
    """Linear least squares of m + a cos(2(theta - theta0))."""
    th = np.asarray(theta, dtype=float)
    y = np.asarray(rate, dtype=float)
    if np.unique(np.round(np.mod(th, math.pi), 12)).size < 4:
        raise FitError("need at least 4 distinct angles (mod pi)")
    w = np.ones_like(y) if sigma is None else 1.0 / np.asarray(sigma, dtype=float)
    X = np.column_stack([np.ones_like(th), np.cos(2 * th), np.sin(2 * th)])
    coef, *_ = np.linalg.lstsq(X * w[:, None], y * w, rcond=None)
    m, c, s = coef
    r = (X @ coef - y) * w
    dof = y.size - 3
    s2 = float(r @ r / dof) if (sigma is None and dof > 0) else 1.0
    cov = np.linalg.inv((X * w[:, None]).T @ (X * w[:, None])) * s2
    a = float(math.hypot(c, s))
    theta0 = float(0.5 * math.atan2(s, c)) % math.pi
    if a > 0:
        ga = np.array([0.0, c / a, s / a])
        gt = np.array([0.0, -s, c]) / (2 * a * a)
        a_err = float(math.sqrt(max(ga @ cov @ ga, 0.0)))
        t_err = float(math.sqrt(max(gt @ cov @ gt, 0.0)))
    else:
        a_err, t_err = float(math.sqrt(cov[1, 1])), float("inf")
    defined = m > a
    sup = float((m + a) / (m - a)) if defined else None
    return PolarizationFit(float(m), a, theta0, float(math.sqrt(cov[0, 0])), a_err, t_err,
                           sup, bool(defined))


def g2_model(tau, tau1, tau2, a):
    """1 - (1 + a) exp(-|tau|/tau1) + a exp(-|tau|/tau2)."""
    t = np.abs(np.asarray(tau, dtype=float))
    slow = 0.0 if a == 0 else a * np.exp(-t / tau2)
    return 1.0 - (1.0 + a) * np.exp(-t / tau1) + slow


def fit_g2_three_level(curve: G2Curve, use_sigma: bool = True) -> G2Fit:
    """Fit the bi-exponential three-level form; two-level branch when a ~ 0."""
    tau = np.asarray(curve.tau, dtype=float)
    g = np.asarray(curve.g2, dtype=float)
    if tau.size < 6:
        raise FitError("curve too short")
    t = np.abs(tau)
    w = (1.0 / curve.sigma) if (use_sigma and curve.sigma is not None) else np.ones_like(g)
    known = use_sigma and curve.sigma is not None

    def two(x):
        return (1.0 - np.exp(-t / math.exp(x[0])) - g) * w

    def three(x):
        t1 = math.exp(x[0])
        t2 = t1 * (1.0 + math.exp(x[1]))
        return (1.0 - (1.0 + x[2]) * np.exp(-t / t1) + x[2] * np.exp(-t / t2) - g) * w

    # dip scale from the first crossing of 1 - 1/e
    below = np.nonzero(g < 1.0 - math.exp(-1.0))[0]
    tpos = t[t > 0]
    scale = float(np.max(t[below])) if below.size else float(np.median(tpos))
    scale = max(scale, float(tpos.min()) if tpos.size else 1e-9)
    wing = float(np.max(g)) - 1.0
    fit2 = multistart(two, [[math.log(scale * f)] for f in (0.5, 1.0, 2.0)],
                      scale_by_chi2=not known)
    starts = []
    for f in (0.5, 1.0):
        for ratio in (3.0, 10.0, 30.0, 100.0):
            starts.append([math.log(scale * f), math.log(ratio - 1.0), max(wing, 0.05)])
    try:
        fit3 = multistart(three, starts, scale_by_chi2=not known)
    except FitError:
        fit3 = None
    two_level = fit3 is None
    if not two_level:
        a = float(fit3.x[2])
        a_err = math.sqrt(fit3.cov[2, 2]) if np.isfinite(fit3.cov[2, 2]) else math.inf
        two_level = (abs(a) < 1e-6 or abs(a) < 2 * a_err
                     or _bic_prefers_simple(fit2.chi2, fit3.chi2, g.size, 2, known))
    if two_level:
        t1 = math.exp(fit2.x[0])
        e1 = t1 * math.sqrt(fit2.cov[0, 0])
        return G2Fit(t1, float("nan"), 0.0, e1, float("nan"), 0.0, True, fit2.reduced_chi2)
    t1 = math.exp(fit3.x[0])
    q = math.exp(fit3.x[1])
    t2 = t1 * (1.0 + q)
    cov = fit3.cov
    g1 = np.array([t1, 0.0, 0.0])
    g2 = np.array([t2, t1 * q, 0.0])
    return G2Fit(t1, t2, float(fit3.x[2]), float(math.sqrt(max(g1 @ cov @ g1, 0.0))),
                 float(math.sqrt(max(g2 @ cov @ g2, 0.0))), float(math.sqrt(cov[2, 2])),
                 False, fit3.reduced_chi2)
