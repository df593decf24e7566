"""Harmonic flow, the period average X, and critical sets on S^{2d-1}.

The flow of p2 rotates each (x_j, xi_j) plane by the same angle; under
``x + i xi`` it is ``z -> e^{-it} z``.  Functions invariant under it, such as
``X f``, are always degenerate along the flow direction, so every critical
set below is a union of flow circles and the flow direction is removed from
the tangent frame before Hessians are ranked.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm as _normal, qmc

from .errors import DomainError, EvaluationError
from .symbols import HomogeneousTerm, quadratic_over_root

DEFAULT_XRAY_NODES = 256
FD_STEP = 1e-5


@dataclass
class PhasePoint:
    x: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        if self.x.shape != self.xi.shape or self.x.ndim != 1 or self.x.size < 1:
            raise ValueError("x and xi must be vectors of the same length d >= 1")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.xi))):
            raise ValueError("phase point has non-finite entries")

    @property
    def d(self):
        return self.x.size

    @property
    def w(self):
        return np.concatenate([self.x, self.xi])

    @classmethod
    def from_w(cls, w):
        w = np.asarray(w, dtype=float)
        d = w.size // 2
        return cls(w[:d], w[d:])


def _as_w(point):
    return point.w if isinstance(point, PhasePoint) else np.asarray(point, dtype=float)


def flow_w(w, t):
    """Flow applied to array(s) of phase-space points ``w`` (last axis 2d)."""
    w = np.asarray(w, dtype=float)
    d = w.shape[-1] // 2
    x, xi = w[..., :d], w[..., d:]
    c, s = math.cos(t), math.sin(t)
    return np.concatenate([c * x + s * xi, c * xi - s * x], axis=-1)


def flow(point: PhasePoint, t) -> PhasePoint:
    """exp(t H0) applied to a phase point: rotation by angle t in each plane."""
    return PhasePoint.from_w(flow_w(point.w, t))


def flow_direction(w):
    """Hamilton vector field of p2 at ``w``: (xi, -x)."""
    w = np.asarray(w, dtype=float)
    d = w.shape[-1] // 2
    return np.concatenate([w[..., d:], -w[..., :d]], axis=-1)


def xray_average(f, point, quadrature_order=DEFAULT_XRAY_NODES):
    """Integral of ``f`` over one period of the flow through ``point``.

    Periodic trapezoid rule with ``quadrature_order`` nodes.  ``point`` may
    be a PhasePoint or an array of points with last axis 2d; ``f`` must be
    vectorised over leading axes.
    """
    if quadrature_order < 4:
        raise ValueError("quadrature_order must be >= 4")
    w = _as_w(point)
    d = w.shape[-1] // 2
    t = 2.0 * math.pi * np.arange(quadrature_order) / quadrature_order
    c = np.cos(t).reshape((-1,) + (1,) * (w.ndim - 1) + (1,))
    s = np.sin(t).reshape(c.shape)
    x, xi = w[..., :d], w[..., d:]
    orbit = np.concatenate([c * x + s * xi, c * xi - s * x], axis=-1)
    vals = np.asarray(f(orbit), dtype=float)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        k = int(np.argwhere(bad)[0][0])
        raise EvaluationError(f"non-finite value of f on the orbit at t = {t[k]!r}")
    return (2.0 * math.pi / quadrature_order) * np.sum(vals, axis=0)


def hopf_pullback(c) -> HomogeneousTerm:
    """Degree-1 term ``sum_j c_j (x_j^2 + xi_j^2)/2 / sqrt(p2)``.

    On the sphere this is the pullback of the moment-map function
    ``[z] -> sum c_j |z_j|^2`` on CP^{d-1}; it is invariant under the flow.
    """
    c = np.asarray(c, dtype=float).ravel()
    Q = np.diag(np.concatenate([c, c])) / math.sqrt(2.0)
    return quadratic_over_root(Q)


# ---------------------------------------------------------------------------
# calculus on the round sphere


def tangent_frame(w, drop_flow=False):
    """Orthonormal basis (rows) of the tangent space of S^{2d-1} at ``w``.

    With ``drop_flow`` the flow direction is removed as well.
    """
    w = np.asarray(w, dtype=float)
    n = w.size
    cols = [w / np.linalg.norm(w)]
    if drop_flow:
        v = flow_direction(w)
        cols.append(v / np.linalg.norm(v))
    A = np.column_stack(cols + [np.eye(n)])
    q, _ = np.linalg.qr(A)
    return q[:, len(cols):n].T


def _check_unit(w):
    r = float(np.linalg.norm(w))
    if abs(r - 1.0) > 1e-12:
        raise DomainError(f"point is not on the unit sphere (|w| = {r!r})")


def sphere_grad_hess(f, point, h=FD_STEP, frame=None):
    """Intrinsic gradient and Hessian of ``f`` restricted to the unit sphere.

    Central differences of ``f`` pulled back through the retraction
    ``u -> (w + u)/|w + u|`` in an orthonormal tangent frame.  Returns
    ``(grad, hess, frame)`` with ``grad``/``hess`` expressed in ``frame``.
    """
    w = _as_w(point)
    _check_unit(w)
    E = tangent_frame(w) if frame is None else frame
    m = E.shape[0]
    if m == 0:
        return np.zeros(0), np.zeros((0, 0)), E
    # evaluation stencil
    steps = [np.zeros(m)]
    for i in range(m):
        for si in (1, -1):
            e = np.zeros(m)
            e[i] = si * h
            steps.append(e)
    for i in range(m):
        for j in range(i + 1, m):
            for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                e = np.zeros(m)
                e[i] = si * h
                e[j] = sj * h
                steps.append(e)
    U = np.array(steps) @ E
    P = w + U
    P /= np.linalg.norm(P, axis=1)[:, None]
    F = np.asarray(f(P), dtype=float)
    if not np.all(np.isfinite(F)):
        raise EvaluationError("non-finite value in finite-difference stencil")
    f0 = F[0]
    fp = F[1 : 1 + 2 * m : 2]
    fm = F[2 : 2 + 2 * m : 2]
    grad = (fp - fm) / (2 * h)
    hess = np.diag((fp - 2 * f0 + fm) / h**2)
    k = 1 + 2 * m
    for i in range(m):
        for j in range(i + 1, m):
            fpp, fpm, fmp, fmm = F[k : k + 4]
            k += 4
            hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4 * h * h)
    return grad, hess, E


def sphere_grad(f, point, h=FD_STEP, frame=None):
    """Gradient part of :func:`sphere_grad_hess` (2m evaluations only)."""
    w = _as_w(point)
    _check_unit(w)
    E = tangent_frame(w) if frame is None else frame
    U = np.concatenate([h * E, -h * E])
    P = w + U
    P /= np.linalg.norm(P, axis=1)[:, None]
    F = np.asarray(f(P), dtype=float)
    m = E.shape[0]
    return (F[:m] - F[m:]) / (2 * h)


# ---------------------------------------------------------------------------
# Morse-Bott classification


@dataclass
class CriticalManifold:
    representative_points: list
    dimension: int
    hessian_rank: int
    value: float


@dataclass
class MorseBottReport:
    manifolds: list = field(default_factory=list)
    k_min: int = 0
    is_morse_bott: bool = False
    flat_set_detected: bool = False
    flat_fraction: float = 0.0
    n_starts: int = 0
    n_converged: int = 0
    diagnostic: str = ""


def _sphere_starts(dim, samples, seed):
    sob = qmc.Sobol(dim, scramble=True, seed=seed)
    u = sob.random(samples)
    g = _normal.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1)[:, None]


def _newton_to_critical(F, w, *, tol, max_iter=60, rank_rtol=1e-4):
    """Damped Gauss-Newton on |grad F|^2, tangent frame without flow direction."""
    gnorm = np.inf
    for _ in range(max_iter):
        g, H, E = sphere_grad_hess(F, w, frame=tangent_frame(w, drop_flow=True))
        gnorm = float(np.linalg.norm(g))
        if gnorm < tol:
            return w, True
        evals, vecs = np.linalg.eigh(H)
        cut = rank_rtol * max(1.0, float(np.max(np.abs(evals))))
        inv = np.where(np.abs(evals) > cut, 1.0 / np.where(evals == 0, 1.0, evals), 0.0)
        step = -vecs @ (inv * (vecs.T @ g))
        if np.linalg.norm(step) == 0:
            step = -g
        if np.linalg.norm(step) > 0.5:
            step *= 0.5 / np.linalg.norm(step)
        alpha = 1.0
        accepted = False
        for _ in range(40):
            trial = w + alpha * step @ E
            trial /= np.linalg.norm(trial)
            gt = sphere_grad(F, trial, frame=tangent_frame(trial, drop_flow=True))
            if np.linalg.norm(gt) < gnorm:
                w = trial
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return w, gnorm < tol
    return w, gnorm < tol


def classify_morse_bott(f, d, samples=64, seed=0, *, quadrature_order=DEFAULT_XRAY_NODES,
                        grad_tol=1e-8, flat_tol=1e-9, flat_fraction_min=1e-3,
                        flat_samples=1024, rank_rtol=1e-4, value_tol=1e-7, workers=1):
    """Locate and classify the critical manifolds of ``X f`` on S^{2d-1}.

    ``f`` is a degree-1 homogeneous term (any callable on arrays of points).
    Quasi-random starts are driven to critical points by damped Newton steps
    on the tangent space transverse to the flow; converged points are grouped
    by critical value and each group's transverse Hessian rank is reported.
    """
    F = lambda P: xray_average(f, P, quadrature_order)  # noqa: E731
    n = 2 * d
    report = MorseBottReport()

    probes = _sphere_starts(n, flat_samples, seed)
    if d == 1:
        # the sphere is a single flow orbit; X f is constant on it
        report.flat_set_detected = True
        report.flat_fraction = 1.0
        report.diagnostic = "d = 1: S^1 is one flow orbit"
        return report
    gn = np.array([
        np.linalg.norm(sphere_grad(F, p, frame=tangent_frame(p, drop_flow=True)))
        for p in probes
    ])
    report.flat_fraction = float(np.mean(gn < flat_tol))
    report.flat_set_detected = report.flat_fraction > flat_fraction_min
    if report.flat_fraction == 1.0:
        report.manifolds = [CriticalManifold([probes[0]], n - 1, 0, float(F(probes[0])))]
        report.k_min = 0
        report.diagnostic = "gradient vanishes at every probe: X f is constant"
        return report

    starts = _sphere_starts(n, samples, seed + 1)
    run = lambda w: _newton_to_critical(F, w, tol=grad_tol, rank_rtol=rank_rtol)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, starts))
    else:
        results = [run(w) for w in starts]
    report.n_starts = len(results)
    conv = [w for w, ok in results if ok]
    report.n_converged = len(conv)

    pts = []
    for w in conv:
        _, H, _ = sphere_grad_hess(F, w, frame=tangent_frame(w, drop_flow=True))
        pts.append((float(F(w)), w, np.linalg.eigvalsh(H)))
    scale = max([1.0] + [float(np.max(np.abs(e))) for _, _, e in pts])
    pts.sort(key=lambda p: p[0])
    groups = []
    for val, w, ev in pts:
        if groups and abs(val - groups[-1][0][0]) <= value_tol * max(1.0, abs(val)):
            groups[-1].append((val, w, ev))
        else:
            groups.append([(val, w, ev)])
    for grp in groups:
        ranks = [int(np.sum(np.abs(ev) > rank_rtol * scale)) for _, _, ev in grp]
        rank = int(np.median(ranks))
        report.manifolds.append(CriticalManifold(
            representative_points=[w for _, w, _ in grp],
            dimension=n - 1 - rank,
            hessian_rank=rank,
            value=float(np.mean([v for v, _, _ in grp])),
        ))
    failed = report.n_starts - report.n_converged
    report.k_min = min((m.hessian_rank for m in report.manifolds), default=0)
    if failed > 0.01 * report.n_starts:
        report.diagnostic = f"{failed} of {report.n_starts} starts did not converge"
        report.is_morse_bott = False
        return report
    report.is_morse_bott = bool(report.manifolds) and report.k_min > 0 and not report.flat_set_detected
    return report
