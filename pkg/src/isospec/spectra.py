"""Counting functions, smoothed counting, Weyl remainders and envelope fits.

Windows are described on the time side (a profile ``C(s)`` centred at
``center_t``) together with the closed form of their Fourier transform
``C^(w) = int C(s) exp(-i w s) ds``.  A window used as a mollifier is the
function ``rho(lam) = C^(lam) / (2 pi)``, whose time-side transform is ``C``.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.interpolate import CubicSpline
from scipy.special import ndtr

from .errors import EvaluationError, PreconditionError, TrustRegionError
from .quantize import SpectrumTable
from .symbols import (
    Symbol,
    _ray_coefficients,
    sphere_quadrature,
    surface_integral_p0,
    surface_integral_p1,
)

TWO_PI = 2.0 * math.pi
# Gaussian windows are treated as supported on [-GAUSS_SUPPORT_SIGMAS * sigma, +...]
GAUSS_SUPPORT_SIGMAS = 4.0
# Relative size a window may have at any singular time it is not meant to see
LEAK_TOL = 1e-30
TAIL_TOL = 1e-16


@dataclass(frozen=True)
class WindowSpec:
    """A time-side window with analytic Fourier transform.

    ``shape`` is ``"gaussian"`` (``width`` = standard deviation in t) or
    ``"hann_bump"`` (``width`` = half-width of the ``cos^2`` bump).
    """

    shape: str
    width: float
    center_t: float = 0.0

    def __post_init__(self):
        if self.shape not in ("gaussian", "hann_bump"):
            raise ValueError(f"unknown window shape {self.shape!r}")
        if not (self.width > 0 and math.isfinite(self.width)):
            raise ValueError("window width must be positive and finite")
        if not math.isfinite(self.center_t):
            raise ValueError("window center must be finite")

    @classmethod
    def gaussian(cls, sigma_t, center_t=0.0):
        return cls("gaussian", float(sigma_t), float(center_t))

    @classmethod
    def hann_bump(cls, half_width, center_t=0.0):
        return cls("hann_bump", float(half_width), float(center_t))

    def recentered(self, center_t):
        return WindowSpec(self.shape, self.width, float(center_t))

    @property
    def half_support(self):
        """Nominal half-length of the time support (exact for the bump)."""
        if self.shape == "gaussian":
            return GAUSS_SUPPORT_SIGMAS * self.width
        return self.width

    @property
    def lambda_width(self):
        """Scale on which the transform varies in lambda."""
        if self.shape == "gaussian":
            return 1.0 / self.width
        return TWO_PI / self.width

    @property
    def is_positive_mollifier(self):
        return self.shape == "gaussian"

    def profile(self, s):
        """Window value at time offset ``s`` from its centre."""
        s = np.asarray(s, dtype=float)
        if self.shape == "gaussian":
            return np.exp(-0.5 * (s / self.width) ** 2)
        h = self.width
        return np.where(np.abs(s) < h, np.cos(0.5 * math.pi * s / h) ** 2, 0.0)

    def transform(self, omega):
        """``int profile(s) exp(-i omega s) ds`` (real and even)."""
        w = np.asarray(omega, dtype=float)
        if self.shape == "gaussian":
            sig = self.width
            return sig * math.sqrt(TWO_PI) * np.exp(-0.5 * (sig * w) ** 2)
        h = self.width
        a = math.pi / h
        aw = np.abs(w)
        near_zero = aw < 0.5 * a
        out = np.empty_like(aw)
        # a^2 sin(wh) / (w (a^2 - w^2)) with the removable zeros cancelled:
        # sin(wh)/w = h sinc(wh/pi) near 0, and sin(wh) = sin((a - w) h) near a
        z = aw[near_zero]
        out[near_zero] = a * a * h * np.sinc(z * h / math.pi) / (a * a - z * z)
        z = aw[~near_zero]
        dlt = a - z
        out[~near_zero] = a * a * h * np.sinc(dlt * h / math.pi) / (z * (a + z))
        return out

    def tail_radius(self, rel_tol=TAIL_TOL):
        """Offset beyond which ``|transform| <= rel_tol * transform(0)``."""
        if self.shape == "gaussian":
            return math.sqrt(2.0 * math.log(1.0 / rel_tol)) / self.width
        # |C^(w)| <= a^2 / (|w| (w^2 - a^2)) <= 2 a^2 / |w|^3 for |w| >= sqrt(2) a
        h = self.width
        a = math.pi / h
        return max(math.sqrt(2.0) * a, (2.0 * a * a / (rel_tol * h)) ** (1.0 / 3.0))

    def density(self, lam):
        """Mollifier ``rho(lam) = transform(lam) / (2 pi)``."""
        return self.transform(lam) / TWO_PI

    def cumulative(self, lam):
        """``int_{-inf}^{lam} rho``; only available for positive mollifiers."""
        if self.shape != "gaussian":
            raise PreconditionError("the cos^2 bump has a sign-changing transform; not a mollifier")
        return ndtr(self.width * np.asarray(lam, dtype=float))

    def singular_leak(self):
        """Largest relative window value at a point of 2 pi Z outside the support."""
        c, h = self.center_t, self.half_support
        k = round(c / TWO_PI)
        pts = TWO_PI * np.arange(k - 2, k + 3)
        off = pts - c
        off = off[np.abs(off) > h]
        return float(np.max(self.profile(off))) if off.size else 0.0

    def check_isolating(self, max_offset=0.5 * math.pi):
        """Raise PreconditionError unless the window sees at most one point of 2 pi Z.

        Accepted: the support lies within ``max_offset`` of a singular time
        ``t0`` and the window is below ``LEAK_TOL`` (relative) at every other
        singular time; returns ``t0``.  Or the support contains no singular
        time at all; returns None.
        """
        c, h = self.center_t, self.half_support
        k = round(c / TWO_PI)
        t0 = TWO_PI * k
        tol = 1e-12 * max(1.0, abs(c))
        if abs(c - t0) + h <= max_offset + tol:
            leak = self.singular_leak()
            if leak > LEAK_TOL:
                raise PreconditionError(
                    f"window centred at t={c:.6g} has relative size {leak:.3g} at another "
                    "singular time"
                )
            return t0
        if abs(c - t0) - h <= 0.0:
            raise PreconditionError(
                f"window centred at t={c:.6g} with half-support {h:.6g} contains the singular "
                f"time {t0:.6g} but extends more than {max_offset:.6g} from it"
            )
        return None

    def to_dict(self):
        return asdict(self)


@dataclass
class FitReport:
    exponent: float
    confidence_halfwidth: float
    lambda_range: tuple
    n_points: int
    method: str = "envelope log-log least squares"
    intercept: float = 0.0
    centers: list = field(default_factory=list)
    envelope: list = field(default_factory=list)

    def __post_init__(self):
        lo, hi = self.lambda_range
        if not lo < hi:
            raise ValueError("lambda_range must be increasing")
        if self.n_points < 8:
            raise ValueError("a fit needs at least 8 points")

    def contains(self, value):
        slack = 1e-12 * max(1.0, abs(value))
        return abs(self.exponent - value) <= self.confidence_halfwidth + slack

    def to_dict(self):
        d = asdict(self)
        d["lambda_range"] = list(self.lambda_range)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# counting


def _check_trust(table: SpectrumTable, lam_max, margin=0.0):
    if lam_max > table.lambda_trust - margin:
        raise TrustRegionError(
            f"lambda={lam_max:.10g} needs the spectrum up to {lam_max + margin:.10g}, "
            f"but the table ({table.model_tag}) is complete only up to {table.lambda_trust:.10g}"
        )


def counting(table: SpectrumTable, lam):
    """Number of eigenvalues ``<= lam`` counted with multiplicity."""
    lam_arr = np.asarray(lam, dtype=float)
    _check_trust(table, float(np.max(lam_arr)) if lam_arr.size else -np.inf)
    idx = np.searchsorted(table.eigenvalues, lam_arr, side="right")
    out = table.cumulative[idx]
    return int(out) if out.ndim == 0 else out


def _chunks(n, workers):
    k = max(1, int(workers))
    bounds = np.linspace(0, n, min(n, 4 * k) + 1 if n else 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _parallel(fn, n, workers):
    parts = _chunks(n, workers)
    if workers and workers > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as ex:
            res = list(ex.map(lambda ab: fn(*ab), parts))
    else:
        res = [fn(a, b) for a, b in parts]
    return np.concatenate(res) if res else np.zeros(0)


def mollified_counting(table: SpectrumTable, rho: WindowSpec, lams, *, workers=1, abs_tol=1e-12):
    """``(N * rho)(lam) = sum_j m_j P(lam - lam_j)``, ``P`` the cumulative of ``rho``."""
    if not rho.is_positive_mollifier:
        raise PreconditionError("mollified counting needs a positive mollifier (gaussian)")
    lams = np.asarray(lams, dtype=float)
    total = max(table.total, 1)
    sig = rho.width
    # P(-x) = ndtr(-sig x) <= abs_tol / total beyond this offset
    z = -float(stats.norm.ppf(abs_tol / total))
    W = z / sig
    margin = max(10.0 * rho.lambda_width, W)
    if lams.size:
        _check_trust(table, float(lams.max()), margin)
    ev, cum, m = table.eigenvalues, table.cumulative, table.multiplicities

    def work(a, b):
        out = np.empty(b - a)
        for i in range(a, b):
            lam = lams[i]
            lo = np.searchsorted(ev, lam - W, side="right")
            hi = np.searchsorted(ev, lam + W, side="right")
            out[i - a] = cum[lo] + float(np.dot(m[lo:hi], ndtr(sig * (lam - ev[lo:hi]))))
        return out

    return _parallel(work, lams.size, workers)


def tauberian_gap(table: SpectrumTable, rho: WindowSpec, lams, d, *, workers=1):
    """``(N(lam) - (N * rho)(lam)) / lam^(d-1)``."""
    lams = np.asarray(lams, dtype=float)
    smooth = mollified_counting(table, rho, lams, workers=workers)
    return (counting(table, lams) - smooth) / lams ** (d - 1)


def gap_is_bounded(gap, growth_factor=1.5):
    """Bounded on a finite grid: finite, and the last quartile's peak does not
    exceed ``growth_factor`` times the first quartile's peak."""
    g = np.abs(np.asarray(gap, dtype=float))
    if not np.all(np.isfinite(g)) or g.size < 4:
        return False
    q = g.size // 4
    return bool(g[-q:].max() <= growth_factor * g[:q].max())


def gap_is_decaying(gap):
    """Mean of the last quartile of ``|gap|`` below the mean of the first."""
    g = np.abs(np.asarray(gap, dtype=float))
    q = g.size // 4
    if q < 1:
        return False
    return bool(g[-q:].mean() < g[:q].mean())


# ---------------------------------------------------------------------------
# envelope fits


def dyadic_windows(lambda_min, lambda_max, n_windows=10):
    """Overlapping windows ``[c / sqrt 2, c sqrt 2]`` with log-spaced centres inside the range."""
    if not 0 < lambda_min < lambda_max:
        raise ValueError("need 0 < lambda_min < lambda_max")
    r2 = math.sqrt(2.0)
    lo, hi = lambda_min * r2, lambda_max / r2
    if hi <= lo:
        raise PreconditionError("range spans less than one dyadic window")
    centers = np.geomspace(lo, hi, n_windows)
    return [(float(c), float(c / r2), float(c * r2)) for c in centers]


def fit_power_law(x, y, lambda_range, method="envelope log-log least squares", level=0.95):
    """Least-squares slope of ``log y`` on ``log x`` with a t-interval."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 8:
        raise PreconditionError(f"envelope fit needs at least 8 points, got {x.size}")
    if not np.all(y > 0) or not np.all(np.isfinite(y)):
        raise EvaluationError("degenerate envelope (zero or non-finite maxima)")
    X = np.log(x)
    Y = np.log(y)
    res = stats.linregress(X, Y)
    tq = float(stats.t.ppf(0.5 + level / 2.0, x.size - 2))
    return FitReport(
        exponent=float(res.slope),
        confidence_halfwidth=float(tq * res.stderr),
        lambda_range=(float(lambda_range[0]), float(lambda_range[1])),
        n_points=int(x.size),
        method=method,
        intercept=float(res.intercept),
        centers=[float(v) for v in x],
        envelope=[float(v) for v in y],
    )


def envelope_fit(lams, values, lambda_min, lambda_max, n_windows=10, method=None):
    """Fit the growth exponent of ``max |values|`` over dyadic windows."""
    lams = np.asarray(lams, dtype=float)
    vals = np.abs(np.asarray(values))
    xs, ys = [], []
    for c, a, b in dyadic_windows(lambda_min, lambda_max, n_windows):
        sel = (lams >= a) & (lams <= b)
        if np.any(sel):
            xs.append(c)
            ys.append(float(vals[sel].max()))
    return fit_power_law(xs, ys, (lambda_min, lambda_max),
                         method or f"max over {n_windows} dyadic windows, log-log least squares")


# ---------------------------------------------------------------------------
# Weyl law


class WeylVolumeCurve:
    """``lam -> (2 pi)^{-d} vol{p2 + p1 <= lam}`` on an interval, via a spline in sqrt(lam)."""

    def __init__(self, s: Symbol, lambda_min, lambda_max, n_nodes=1500, orders=None):
        d = s.d
        if orders is None:
            orders = (48, 32) if d <= 2 else (20, 12)
        theta, wts = sphere_quadrature(d, *orders)
        a, b = _ray_coefficients(s, theta)
        u = np.linspace(math.sqrt(max(lambda_min, 1e-6)), math.sqrt(lambda_max), n_nodes)
        norm = TWO_PI ** (-d) / (2 * d)
        vals = np.empty(n_nodes)
        step = max(1, 2_000_000 // a.size)
        for i0 in range(0, n_nodes, step):
            lam = (u[i0:i0 + step] ** 2)[:, None]
            # stable root of a r^2 + b r = lam (a > 0, lam > 0)
            r = 2.0 * lam / (b[None, :] + np.sqrt(b[None, :] ** 2 + 4.0 * a[None, :] * lam))
            vals[i0:i0 + step] = norm * (r ** (2 * d)) @ wts
        self.d = d
        self.range = (float(u[0] ** 2), float(u[-1] ** 2))
        self._spline = CubicSpline(u, vals)
        self.second_coefficient = float(surface_integral_p0(s, 1.0, orders))

    def __call__(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self._spline(np.sqrt(lam))

    def second_term(self, lam):
        """Degree-0 correction ``-(2 pi)^{-d} int_{p2=lam} p0``, scaling like lam^{d-1}."""
        return -self.second_coefficient * np.asarray(lam, dtype=float) ** (self.d - 1)


@dataclass
class WeylTwoTermReport:
    remainder_fit: FitReport
    coefficient_fitted: float
    coefficient_predicted: float
    coefficient_rel_error: float
    bound_exponent: float

    @property
    def exponent_improved(self):
        return self.remainder_fit.exponent < self.bound_exponent - 0.1

    def to_dict(self):
        d = asdict(self)
        d["remainder_fit"] = self.remainder_fit.to_dict()
        return d


def remainder_extremes(table: SpectrumTable, curve: WeylVolumeCurve, lambda_min, lambda_max):
    """Left and right limits of ``N - weyl`` at every eigenvalue in the range."""
    _check_trust(table, lambda_max)
    ev = table.eigenvalues
    lo = np.searchsorted(ev, lambda_min, side="left")
    hi = np.searchsorted(ev, lambda_max, side="right")
    lam = ev[lo:hi]
    main = curve(lam) + curve.second_term(lam)
    right = table.cumulative[lo + 1:hi + 1] - main
    left = right - table.multiplicities[lo:hi]
    return lam, left, right


def smoothed_coefficient_fit(table: SpectrumTable, s: Symbol, rho: WindowSpec, lambda_min,
                             lambda_max, step=1.0, workers=1):
    """Coefficient of ``lam^{d-1/2}`` in ``(N * rho) - (2 pi)^{-d} vol{p2 <= lam}``.

    Regressors are ``lam^{d-1/2}, lam^{d-1}, ..., lam^0`` in half-integer steps.
    """
    d = s.d
    grid = np.arange(lambda_min, lambda_max + 0.5 * step, step)
    smooth = mollified_counting(table, rho, grid, workers=workers)
    # unperturbed leading term: (2 pi)^{-d} vol of the ball of radius sqrt(2 lam)
    ball = TWO_PI ** (-d) * math.pi ** d / math.gamma(d + 1) * (2.0 * grid) ** d
    powers = np.arange(2 * d - 1, -1, -1) / 2.0
    A = grid[:, None] ** powers[None, :]
    scale = np.max(np.abs(A), axis=0)
    coef, *_ = np.linalg.lstsq(A / scale, smooth - ball, rcond=None)
    return float(coef[0] / scale[0])


def weyl_two_term_check(table: SpectrumTable, s: Symbol, lambda_min, lambda_max, *,
                        rho: WindowSpec | None = None, n_windows=10, workers=1):
    """Remainder envelope exponent and a check of the ``lam^{d-1/2}`` coefficient."""
    d = s.d
    if s.part(0) and any(float(np.max(np.abs(t.coef))) != 0.0 for t in s.part(0)):
        raise PreconditionError("the two-term check assumes no degree-0 terms")
    windows = dyadic_windows(lambda_min, lambda_max, n_windows)
    if len(windows) < 8:
        raise PreconditionError("grid too coarse: fewer than 8 dyadic windows")
    curve = WeylVolumeCurve(s, lambda_min, lambda_max)
    lam, left, right = remainder_extremes(table, curve, lambda_min, lambda_max)
    peak = np.maximum(np.abs(left), np.abs(right))
    xs, ys = [], []
    for c, a, b in windows:
        sel = (lam >= a) & (lam <= b)
        if np.any(sel):
            xs.append(c)
            ys.append(float(peak[sel].max()))
    fit = fit_power_law(xs, ys, (lambda_min, lambda_max),
                        "sup |N - weyl| over dyadic windows, log-log least squares")
    rho = rho or WindowSpec.gaussian(math.pi / 8)
    fitted = smoothed_coefficient_fit(table, s, rho, lambda_min, lambda_max, workers=workers)
    predicted = -surface_integral_p1(s, 1.0)
    rel = abs(fitted - predicted) / abs(predicted) if predicted != 0 else abs(fitted)
    return WeylTwoTermReport(fit, fitted, predicted, float(rel), float(d - 1))


def weyl_rows(table: SpectrumTable, s: Symbol, rho: WindowSpec, lams, *, workers=1):
    """Rows ``lambda, N, weyl_main, weyl_second, remainder, smoothed``."""
    lams = np.asarray(lams, dtype=float)
    curve = WeylVolumeCurve(s, float(lams.min()), float(lams.max()))
    N = counting(table, lams)
    main = curve(lams)
    second = curve.second_term(lams)
    smooth = mollified_counting(table, rho, lams, workers=workers)
    return np.column_stack([lams, N, main, second, N - main - second, smooth])


WEYL_HEADER = ["lambda", "N", "weyl_main", "weyl_second", "remainder", "smoothed"]


def write_csv(path, header, rows):
    """CSV with 17 significant digits, LF line endings."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["%.17g" % v for v in row])
    return path
