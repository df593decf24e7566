"""Windowed transforms of the Schrodinger trace and their model oracles."""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as cheb

from .errors import ConvergenceError, DomainError, PreconditionError
from .geometry import PhasePoint, xray_average
from .quantize import SpectrumTable
from .spectra import (
    TAIL_TOL,
    TWO_PI,
    FitReport,
    WindowSpec,
    _check_trust,
    _parallel,
    envelope_fit,
    fit_power_law,
)
from .symbols import HomogeneousTerm, sphere_quadrature

# ---------------------------------------------------------------------------
# trace transforms


@dataclass
class TraceTransform:
    n: int | None
    window: WindowSpec
    lambda_grid: np.ndarray
    values: np.ndarray
    model_tag: str = ""

    def __post_init__(self):
        self.lambda_grid = np.asarray(self.lambda_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trace transform values must be finite")

    @property
    def modulus(self):
        return np.abs(self.values)

    def rows(self):
        v = self.values
        return np.column_stack([self.lambda_grid, v.real, v.imag, np.abs(v)])


TRACE_HEADER = ["lambda", "re", "im", "abs"]


def trace_transform(table: SpectrumTable, window: WindowSpec, lams, n=None, *, workers=1):
    """``(1/2pi) int window(t) Tr U(t) exp(i t lam) dt`` from the spectral sum.

    With ``Tr U(t) = sum_j m_j exp(-i t lam_j)`` this equals
    ``(1/2pi) sum_j m_j exp(i c (lam - lam_j)) C^(lam - lam_j)``, ``c`` the
    window centre.  If ``n`` is given the window is recentred at ``2 pi n``.
    """
    if n is not None:
        window = window.recentered(TWO_PI * n)
    window.check_isolating()
    lams = np.asarray(lams, dtype=float)
    total = max(table.total, 1)
    R = window.tail_radius(TAIL_TOL / total)
    if lams.size:
        _check_trust(table, float(lams.max()), max(R, 10.0 * window.lambda_width))
    c = window.center_t
    ev = table.eigenvalues
    lo_all = np.searchsorted(ev, lams.min() - R, side="left") if lams.size else 0
    hi_all = np.searchsorted(ev, lams.max() + R, side="right") if lams.size else 0
    ev_s = ev[lo_all:hi_all]
    # exp(-i c lam_j) with the phase reduced exactly enough for large lam_j
    weights = table.multiplicities[lo_all:hi_all] * np.exp(-1j * np.fmod(c * ev_s, TWO_PI))

    def work(a, b):
        out = np.empty(b - a, dtype=complex)
        for i in range(a, b):
            lam = lams[i]
            lo = np.searchsorted(ev_s, lam - R, side="left")
            hi = np.searchsorted(ev_s, lam + R, side="right")
            s = np.dot(weights[lo:hi], window.transform(lam - ev_s[lo:hi]))
            out[i - a] = s * cmath.exp(1j * math.fmod(c * lam, TWO_PI)) / TWO_PI
        return out

    vals = _parallel(work, lams.size, workers)
    return TraceTransform(n, window, lams, vals, table.model_tag)


def singularity_exponent(tt: TraceTransform, lambda_min=None, lambda_max=None, n_windows=10):
    """Growth exponent of ``|I(lam)|`` from its maxima over dyadic windows."""
    lo = float(tt.lambda_grid.min()) if lambda_min is None else lambda_min
    hi = float(tt.lambda_grid.max()) if lambda_max is None else lambda_max
    return envelope_fit(tt.lambda_grid, tt.values, lo, hi, n_windows)


# ---------------------------------------------------------------------------
# free propagator


def _near(t, points, tol):
    return abs(t - points * round(t / points)) <= tol


def mehler_kernel(t, x, y):
    """Schwartz kernel of ``exp(-i t H0)`` at ``(x, y)``.

    Evaluated as ``exp(-i t d/2) prod_j (pi (1 - z^2))^{-1/2}
    exp(-((1 + z^2)(x_j^2 + y_j^2) - 4 z x_j y_j) / (2 (1 - z^2)))`` with
    ``z = exp(-i t)`` and the principal square root; ``Re(1 - z^2) >= 0``
    keeps that branch continuous in ``t`` and reproduces the sign
    ``(-1)^n`` acquired near ``t = 2 pi n``.  Complex ``t`` with negative
    imaginary part gives the damped propagator ``exp(-i t H0)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError("x and y must have the same dimension")
    tc = complex(t)
    if tc.imag > 0:
        raise DomainError("the propagator is unbounded for Im t > 0")
    if tc.imag == 0.0:
        tr = tc.real
        if _near(tr, math.pi, 1e-6):
            raise DomainError(f"t={tr!r} is within 1e-6 of pi Z, where the kernel is a distribution")
        if _near(tr - 0.5 * math.pi, math.pi, 1e-6):
            raise DomainError(f"t={tr!r} is within 1e-6 of 2 pi Z +- pi/2")
    d = x.size
    z = cmath.exp(-1j * tc)
    z2 = z * z
    den = 1.0 - z2
    expo = -((1.0 + z2) * (x @ x + y @ y) - 4.0 * z * (x @ y)) / (2.0 * den)
    return cmath.exp(-0.5j * tc * d) * cmath.sqrt(math.pi * den) ** (-d) * cmath.exp(expo)


def hermite_functions(nmax, x):
    """Normalised Hermite functions ``psi_0..psi_nmax`` at ``x`` (rows = index)."""
    x = np.asarray(x, dtype=float)
    out = np.empty((nmax + 1,) + x.shape)
    out[0] = math.pi ** -0.25 * np.exp(-0.5 * x * x)
    if nmax >= 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for n in range(1, nmax):
        out[n + 1] = math.sqrt(2.0 / (n + 1)) * x * out[n] - math.sqrt(n / (n + 1)) * out[n - 1]
    return out


def mehler_eigensum(t, x, y, nmax):
    """Truncated ``sum_alpha exp(-i t (|alpha| + d/2)) psi_alpha(x) psi_alpha(y)``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    ph = np.exp(-1j * complex(t) * (np.arange(nmax + 1) + 0.5))
    out = 1.0 + 0j
    for xj, yj in zip(x, y):
        out *= np.sum(ph * hermite_functions(nmax, xj) * hermite_functions(nmax, yj))
    return complex(out)


def mehler_abel_limit(t, x, y, nmax=None, degree=24, eps_range=None):
    """Abel-regularised eigensum at real ``t``.

    The eigensum is summed at ``t - i eps`` for Chebyshev-spaced ``eps`` and
    the interpolating polynomial is evaluated at ``eps = 0``.  Independent of
    the closed form, so it serves as an oracle for ``mehler_kernel``.  As a
    function of ``eps`` the sum is singular at distance ``dist(t, pi Z)``
    from the origin, so the default range scales with that distance and
    ``nmax`` is chosen to make ``exp(-eps n)`` negligible at the smallest eps.
    """
    if eps_range is None:
        dist = abs(t - math.pi * round(t / math.pi))
        if dist < 1e-3:
            raise DomainError("the Abel extrapolation needs t away from pi Z")
        eps_range = (0.02 * dist, 0.5 * dist)
    lo, hi = eps_range
    if nmax is None:
        nmax = int(math.ceil(40.0 / lo)) + 20
    k = np.arange(degree + 1)
    u = -np.cos(np.pi * (k + 0.5) / (degree + 1))
    eps = 0.5 * (lo + hi) + 0.5 * (hi - lo) * u
    vals = np.array([mehler_eigensum(t - 1j * e, x, y, nmax) for e in eps])
    coef = np.linalg.solve(cheb.chebvander(u, degree), vals)
    return complex(cheb.chebval(-(lo + hi) / (hi - lo), coef))


# ---------------------------------------------------------------------------
# model stationary-phase integral near t0 = 2 pi n


@dataclass(frozen=True)
class ModelPhase:
    """Phase ``t lam + psi2 + psi1`` of the localised trace integral in polar form.

    ``psi2 = r^2 A(t, q)`` with ``A = (sec t - 1) q - tan(t)/2`` and
    ``q = <x, eta>`` on the unit sphere; ``psi1 = -t r P`` with ``P = p1(theta)``
    for a flow-invariant degree-1 term ``p1`` (``None`` means ``psi1 = 0``).
    """

    d: int
    n: int = 1
    p1: HomogeneousTerm | None = None
    r0: float = math.sqrt(2.0)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be positive")
        if self.n == 0:
            raise PreconditionError("the model phase is built around t0 = 2 pi n with n != 0")
        if self.p1 is not None:
            if self.p1.degree != 1:
                raise PreconditionError("psi1 must come from a degree-1 term")
            if self.p1.dim != 2 * self.d:
                raise ValueError("p1 dimension does not match d")
            rng = np.random.default_rng(7)
            w = rng.standard_normal((16, 2 * self.d))
            w /= np.linalg.norm(w, axis=1)[:, None]
            mean = xray_average(self.p1, w, 64) / TWO_PI
            if np.max(np.abs(mean - self.p1(w))) > 1e-10 * max(1.0, np.max(np.abs(mean))):
                raise PreconditionError("psi1 = -t r p1 needs p1 invariant under the flow")

    @property
    def t0(self):
        return TWO_PI * self.n

    @staticmethod
    def A(t, q):
        return (1.0 / np.cos(t) - 1.0) * q - 0.5 * np.tan(t)

    @staticmethod
    def A_t(t, q):
        sec = 1.0 / np.cos(t)
        return sec * np.tan(t) * q - 0.5 * sec * sec

    @staticmethod
    def A_tt(t, q):
        sec = 1.0 / np.cos(t)
        tan = np.tan(t)
        return q * (sec * tan * tan + sec ** 3) - sec * sec * tan

    def psi2(self, t, r, q):
        return r * r * self.A(t, q)

    def psi1(self, t, r, P):
        return -t * r * P

    def p1_values(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.p1 is None:
            return np.zeros(theta.shape[:-1])
        return self.p1(theta)

    def q_values(self, theta):
        theta = np.asarray(theta, dtype=float)
        return np.sum(theta[..., : self.d] * theta[..., self.d:], axis=-1)

    def check_invariants(self, tol=1e-12):
        q = np.linspace(-0.5, 0.5, 11)
        if np.max(np.abs(self.psi2(self.t0, 1.3, q))) > tol:
            raise PreconditionError("psi2 does not vanish at t0")
        dt = self.r0 ** 2 * self.A_t(self.t0, q)
        if np.max(np.abs(dt + 1.0)) > tol:
            raise PreconditionError("d psi2/dt at (t0, r0) is not -1")
        return True

    # critical points of  t + psi2 + mu psi1  in (t, r)
    def _grad(self, z, q, P, mu):
        t, r = z
        return np.array([
            1.0 + r * r * self.A_t(t, q) - mu * r * P,
            2.0 * r * self.A(t, q) - mu * t * P,
        ])

    def _jac(self, z, q, P, mu):
        t, r = z
        off = 2.0 * r * self.A_t(t, q) - mu * P
        return np.array([[r * r * self.A_tt(t, q), off], [off, 2.0 * self.A(t, q)]])

    def critical_point(self, q, P=0.0, mu=0.0, tol=1e-14, max_iter=50):
        """Newton solve of the (t, r) critical-point system from (t0, r0)."""
        z = np.array([self.t0, self.r0])
        for _ in range(max_iter):
            step = np.linalg.solve(self._jac(z, q, P, mu), -self._grad(z, q, P, mu))
            z = z + step
            if np.max(np.abs(step)) <= tol * max(1.0, np.max(np.abs(z))):
                return float(z[0]), float(z[1])
        raise ConvergenceError(f"critical point not found for q={q!r}, P={P!r}, mu={mu!r}")

    def critical_point_velocity(self, q, P=0.0):
        """``d(t, r)/d mu`` at ``mu = 0`` by the implicit-function theorem."""
        z = np.array([self.t0, self.r0])
        dF = np.array([-self.r0 * P, -self.t0 * P])
        v = np.linalg.solve(self._jac(z, q, P, 0.0), -dF)
        return float(v[0]), float(v[1])


def _bump(u):
    """``exp(1 - 1/(1 - u^2))`` on ``|u| < 1``, zero outside."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < 1.0
    out = np.zeros_like(u)
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - u[inside] ** 2))
    return out


@dataclass(frozen=True)
class OracleAmplitude:
    """Compactly supported amplitude ``chi(t - t_c) a(r - r_c) b(theta)``.

    ``chi`` and ``a`` are ``exp(1 - 1/(1 - u^2))`` bumps of half-widths
    ``t_half_width`` and ``r_half_width * r0``, centred at ``(t_c, r_c)``,
    the first-order position of the (t, r) critical point at
    ``mu = lam^{-1/2}``.  Recentring keeps the amplitude at its peak on the
    critical point for every lambda.  ``angular`` is an optional vectorised
    function of unit sphere points.
    """

    t_half_width: float = 0.25
    r_half_width: float = 0.4
    angular: object = None

    def chi(self, s):
        return _bump(np.asarray(s) / self.t_half_width)

    def radial(self, rho):
        """Radial factor at offset ``rho`` (units of r0) from the critical radius."""
        return _bump(np.asarray(rho) / self.r_half_width)


def _sphere_range(p1: HomogeneousTerm, d):
    """Exact extremes of a degree-1 term on the unit sphere where the kind allows it."""
    if p1.kind in ("quadratic_over_root", "quadratic_form"):
        ev = np.linalg.eigvalsh(p1.Q)
        return float(ev[0]), float(ev[-1])
    if p1.kind == "linear_form":
        r = float(np.linalg.norm(p1.v))
        return -r, r
    theta, _ = sphere_quadrature(d, 32, 16)
    vals = p1(theta)
    return float(vals.min()), float(vals.max())


def min_set_weight(p1: HomogeneousTerm, d, order=3):
    """Angular weight ``((max - p1) / (max - min))^order`` on the unit sphere.

    It is smooth, equals 1 on the minimum set of ``p1`` and vanishes to the
    given order on the maximum set, so only one critical manifold
    contributes at leading order and the two cannot beat against each other.
    """
    vmin, vmax = _sphere_range(p1, d)
    if vmax - vmin < 1e-12:
        raise PreconditionError("p1 is constant on the sphere")

    def weight(th):
        return np.clip((vmax - p1(th)) / (vmax - vmin), 0.0, None) ** order

    return weight


def _gl_panels(a, b, width, nodes=24):
    n_pan = max(1, int(math.ceil((b - a) / width)))
    g, gw = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(a, b, n_pan + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    x = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    w = (half[:, None] * gw[None, :]).ravel()
    return x, w


def _cheb_nodes(lo, hi, n):
    u = np.cos(np.pi * (np.arange(n) + 0.5) / n)
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * u, u


@dataclass
class StationaryPhaseResult:
    lambdas: np.ndarray
    values: np.ndarray
    fit: FitReport
    expected_exponent: float
    refinement_change: float = 0.0
    notes: dict = field(default_factory=dict)


def _model_integral(mp: ModelPhase, amp: OracleAmplitude, lam, theta, wts, ang, *,
                    resolution=1.0, n_q=24, n_P=24):
    d, t0, r0 = mp.d, mp.t0, mp.r0
    sl = math.sqrt(lam)
    mu = 1.0 / sl
    P_th = mp.p1_values(theta)
    q_th = mp.q_values(theta)
    n_q = int(round(n_q * resolution))
    q_nodes, q_u = _cheb_nodes(-0.5, 0.5, n_q)
    if mp.p1 is None:
        P_nodes, P_u, Plo, Phi = np.zeros(1), np.zeros(1), 0.0, 0.0
    else:
        n_P = int(round(n_P * resolution))
        Plo, Phi = float(P_th.min()), float(P_th.max())
        if Phi - Plo < 1e-14:
            Phi = Plo + 1e-6
        P_nodes, P_u = _cheb_nodes(Plo, Phi, n_P)
    vel = np.array([[mp.critical_point_velocity(q, P) for P in P_nodes] for q in q_nodes])
    tc = t0 + mu * vel[..., 0]  # [q, P]
    rc = r0 + mu * vel[..., 1]
    hs, hr = amp.t_half_width, amp.r_half_width * r0
    # frequency bounds over every shifted box
    span_t = float(np.max(np.abs(tc - t0))) + hs
    cs = np.array([t0 - span_t, t0 + span_t, t0])[:, None, None]
    cr = np.array([rc.min() - hr, rc.max() + hr])[None, :, None]
    cq = np.array([-0.5, 0.5])[None, None, :]
    Pmax = max(abs(Plo), abs(Phi))
    r_hi = float(cr.max())
    f_t = lam * float(np.max(np.abs(1.0 + cr ** 2 * ModelPhase.A_t(cs, cq)))) + sl * r_hi * Pmax
    f_r = lam * float(np.max(np.abs(2.0 * cr * ModelPhase.A(cs, cq)))) \
        + sl * (abs(t0) + span_t) * Pmax
    # 24-node panels with at most ~6 oscillations each, and at least 8 panels
    # since the bumps are flat to all orders at their edges
    s_nodes, s_w = _gl_panels(-hs, hs, min(36.0 / f_t, hs / 4.0) / resolution)
    p_nodes, p_w = _gl_panels(-hr, hr, min(36.0 / max(f_r, 1.0), hr / 4.0) / resolution)
    keep_s = amp.chi(s_nodes) > 0
    keep_p = amp.radial(p_nodes / r0) > 0
    s_nodes, s_w = s_nodes[keep_s], s_w[keep_s] * amp.chi(s_nodes[keep_s])
    p_nodes, p_w = p_nodes[keep_p], p_w[keep_p] * amp.radial(p_nodes[keep_p] / r0)
    wgt = np.outer(s_w, p_w)[None]  # [1, s, rho]
    Jt = np.empty((n_q, P_nodes.size), dtype=complex)
    for i, q in enumerate(q_nodes):
        T = tc[i][:, None, None] + s_nodes[None, :, None]
        R = rc[i][:, None, None] + p_nodes[None, None, :]
        P = P_nodes[:, None, None]
        # fast linear-in-P phase sqrt(lam) t0 r0 P is removed and restored below
        ph = lam * ((T - t0) + R * R * ModelPhase.A(T, q)) - sl * (T * R - t0 * r0) * P
        Jt[i] = np.sum(np.exp(1j * ph) * (wgt * R ** (2 * d - 1)), axis=(1, 2))
    Vq = cheb.chebvander(q_u, n_q - 1)
    uq = 2.0 * q_th
    if mp.p1 is None:
        J = cheb.chebval(uq, np.linalg.solve(Vq, Jt[:, 0]))
    else:
        VP = cheb.chebvander(P_u, P_nodes.size - 1)
        C = np.linalg.solve(Vq, np.linalg.solve(VP, Jt.T).T)
        uP = (2.0 * P_th - (Plo + Phi)) / (Phi - Plo)
        J = np.einsum("ik,kl,il->i", cheb.chebvander(uq, n_q - 1), C,
                      cheb.chebvander(uP, P_nodes.size - 1))
        J = J * np.exp(-1j * sl * t0 * r0 * P_th)
    phase0 = cmath.exp(1j * math.fmod(lam * t0, TWO_PI))
    return complex(lam ** d * phase0 * np.sum(wts * ang * J))


def stationary_phase_oracle(mp: ModelPhase, lambdas, amplitude: OracleAmplitude | None = None,
                            *, sphere_orders=None, refine_tol=1e-6, n_q=24, n_P=24):
    """Direct quadrature of the localised model trace integral, with an exponent fit.

    ``I(lam) = lam^d int_S int int exp(i lam (t + psi2) + i sqrt(lam) psi1)
    chi a b r^{2d-1} dr dt dsigma`` after the substitution ``r -> sqrt(lam) r``.
    The (t, r) integral is done on Gauss-Legendre panels for Chebyshev nodes in
    ``q`` and ``P`` and interpolated to the sphere nodes.  Each value is
    recomputed at 1.5x resolution at the smallest and largest lambda (the
    least and most oscillatory cases); a relative change above ``refine_tol``
    raises ConvergenceError.
    """
    mp.check_invariants()
    amp = amplitude or OracleAmplitude()
    d = mp.d
    if sphere_orders is None:
        sphere_orders = {1: (1, 256), 2: (48, 32), 3: (20, 16)}.get(d, (12, 8))
    theta, wts = sphere_quadrature(d, *sphere_orders)
    ang = np.ones(len(wts)) if amp.angular is None else np.asarray(amp.angular(theta), float)
    lambdas = np.asarray(lambdas, dtype=float)
    vals = np.empty(lambdas.size, dtype=complex)
    worst = 0.0
    check = {int(np.argmin(lambdas)), int(np.argmax(lambdas))} if lambdas.size else set()
    for i, lam in enumerate(lambdas):
        v = _model_integral(mp, amp, lam, theta, wts, ang, n_q=n_q, n_P=n_P)
        if i in check:
            v2 = _model_integral(mp, amp, lam, theta, wts, ang, resolution=1.5,
                                 n_q=n_q, n_P=n_P)
            change = abs(v2 - v) / max(abs(v2), 1e-300)
            worst = max(worst, change)
            if change > refine_tol:
                raise ConvergenceError(
                    f"model integral at lam={lam:.6g} changed by {change:.3g} under refinement"
                )
        vals[i] = v
    k = 0 if mp.p1 is None else 2
    expected = d - 1 - k / 4.0
    fit = fit_power_law(lambdas, np.abs(vals), (float(lambdas.min()), float(lambdas.max())),
                        "log-log least squares of |I(lam)|")
    return StationaryPhaseResult(lambdas, vals, fit, expected, worst)


# ---------------------------------------------------------------------------
# wavefront shift of a wavepacket after whole periods


@dataclass
class ShiftReport:
    n: int
    measured: np.ndarray
    predicted: np.ndarray
    relative_deviation: float
    lost_mass: float

    def to_dict(self):
        return {
            "n": self.n,
            "measured": [float(v) for v in self.measured],
            "predicted": [float(v) for v in self.predicted],
            "relative_deviation": self.relative_deviation,
            "lost_mass": self.lost_mass,
        }


def packet_coefficients(x0, xi0, width, nmax):
    """Hermite coefficients of ``(pi w^2)^{-1/4} exp(-(x-x0)^2/(2 w^2) + i xi0 x)``."""
    L = 12.0 * width
    npts = int(math.ceil(2 * L / min(0.02, 0.2 / max(abs(xi0), 1.0), 0.5 / math.sqrt(2 * nmax + 1))))
    x = np.linspace(x0 - L, x0 + L, npts + 1)
    h = x[1] - x[0]
    psi = (math.pi * width * width) ** -0.25 * np.exp(-0.5 * ((x - x0) / width) ** 2 + 1j * xi0 * x)
    return h * (hermite_functions(nmax, x) @ psi)


def _packet_size(x0, xi0, width):
    spread = 10.0 * max(width, 1.0 / width)
    return int(0.5 * (math.hypot(x0, xi0) + spread) ** 2) + 40


def wavepacket_shift(c, n, xi0, width=1.0, x0=None, *, loss_tol=1e-6, fd_step=1e-4):
    """Centroid displacement of a Gaussian packet after ``U(2 pi n)`` in the diagonal model.

    The packet is a product of one-dimensional Gaussians with carrier
    ``xi0`` centred at ``x0`` (default 0).  Evolution is exact in the
    eigenbasis; the prediction is ``n`` times the xi-gradient of the
    period integral of ``hopf_pullback(c)`` at ``(x0, xi0)``.
    """
    from .geometry import hopf_pullback

    c = np.atleast_1d(np.asarray(c, dtype=float))
    d = c.size
    if d > 3:
        raise PreconditionError("wavepacket evolution is implemented for d <= 3")
    if np.max(np.abs(c)) >= 1.0:
        raise PreconditionError("diagonal model needs max |c_j| < 1")
    xi0 = np.atleast_1d(np.asarray(xi0, dtype=float))
    x0 = np.zeros(d) if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    if xi0.size != d or x0.size != d:
        raise ValueError("xi0 and x0 must have length d")
    coefs = []
    lost = 0.0
    for j in range(d):
        m = _packet_size(x0[j], xi0[j], width)
        cj = packet_coefficients(x0[j], xi0[j], width, m)
        lost = max(lost, abs(1.0 - float(np.sum(np.abs(cj) ** 2))))
        coefs.append(cj)
    if lost > loss_tol:
        raise PreconditionError(f"basis truncation loses {lost:.3g} of the packet mass")
    C = coefs[0]
    for cj in coefs[1:]:
        C = np.multiply.outer(C, cj)
    grids = np.meshgrid(*[np.arange(cj.size) for cj in coefs], indexing="ij")
    level = sum(grids)
    E = level + 0.5 * d
    split = sum(c[j] * (grids[j] + 0.5) for j in range(d))
    lam = E + split / np.sqrt(E)
    # exp(-2 pi i n lam); the integer part of n * lam drops out
    frac = np.fmod(n * lam, 1.0)
    Ct = C * np.exp(-2j * math.pi * frac)

    def centroid(A):
        out = np.empty(d)
        for j in range(d):
            k = A.shape[j]
            up = [slice(None)] * d
            lo = [slice(None)] * d
            up[j] = slice(1, k)
            lo[j] = slice(0, k - 1)
            amp = np.sqrt(np.arange(1, k) / 2.0).reshape([-1 if i == j else 1 for i in range(d)])
            out[j] = 2.0 * float(np.real(np.sum(np.conj(A[tuple(up)]) * amp * A[tuple(lo)])))
        return out

    measured = centroid(Ct) - centroid(C)
    p1 = hopf_pullback(c)
    w0 = np.concatenate([x0, xi0])
    grad = np.empty(d)
    for j in range(d):
        e = np.zeros(2 * d)
        e[d + j] = fd_step
        hi = xray_average(p1, PhasePoint.from_w(w0 + e))
        lo = xray_average(p1, PhasePoint.from_w(w0 - e))
        grad[j] = (float(hi) - float(lo)) / (2.0 * fd_step)
    predicted = n * grad
    scale = float(np.linalg.norm(predicted))
    dev = float(np.linalg.norm(measured - predicted) / scale) if scale > 0 else float(
        np.linalg.norm(measured))
    return ShiftReport(int(n), measured, predicted, dev, lost)
