"""Classical isotropic symbols ``p ~ p2 + p1 + p0`` on phase space R^{2d}.

Phase-space points are stored as arrays whose last axis has length ``2d``
and holds ``(x_1, ..., x_d, xi_1, ..., xi_d)``.  Every symbol is a finite sum
of homogeneous terms drawn from a closed grammar of five kinds, so scaling
laws, gradients and sphere integrals are all available in closed form.

Volumes and surface integrals use the normalisation of the Weyl law, i.e.
they carry the factor ``(2 pi)^{-d}``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import roots_legendre

from .errors import DomainError, PreconditionError

KINDS = ("quadratic_form", "linear_form", "radial_power", "quadratic_over_root", "constant")

_ALLOWED_DEGREES = {
    "quadratic_form": {2},
    "linear_form": {1},
    "radial_power": {0, 1, 2},
    "quadratic_over_root": {1},
    "constant": {0},
}


def p2(w):
    """The oscillator symbol (|x|^2 + |xi|^2)/2."""
    w = np.asarray(w, dtype=float)
    return 0.5 * np.sum(w * w, axis=-1)


def smooth_step(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        f0 = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        v = 1.0 - u
        f1 = np.where(v > 0, np.exp(-1.0 / np.where(v > 0, v, 1.0)), 0.0)
    return f0 / (f0 + f1)


def cutoff(w):
    """Radial cutoff: 0 on |w| <= 1, 1 on |w| >= 2, smooth in between."""
    r = np.linalg.norm(np.asarray(w, dtype=float), axis=-1)
    return smooth_step(r - 1.0)


@dataclass
class HomogeneousTerm:
    """One homogeneous term of a symbol.

    ``quadratic_form``      w^T Q w
    ``linear_form``         v . w
    ``radial_power``        coef * p2^{degree/2}
    ``quadratic_over_root`` w^T Q w / sqrt(2 p2)
    ``constant``            coef
    """

    kind: str
    degree: int
    Q: np.ndarray | None = None
    v: np.ndarray | None = None
    coef: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown term kind {self.kind!r}")
        if self.degree not in _ALLOWED_DEGREES[self.kind]:
            raise ValueError(f"kind {self.kind} cannot have degree {self.degree}")
        if self.kind in ("quadratic_form", "quadratic_over_root"):
            if self.Q is None:
                raise ValueError(f"{self.kind} needs a matrix Q")
            Q = np.array(self.Q, dtype=float)
            if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] % 2:
                raise ValueError("Q must be a square matrix of even size 2d")
            scale = max(1.0, float(np.max(np.abs(Q))))
            if np.max(np.abs(Q - Q.T)) > 1e-14 * scale:
                raise ValueError("Q must be symmetric")
            self.Q = Q
        elif self.kind == "linear_form":
            if self.v is None:
                raise ValueError("linear_form needs a vector v")
            v = np.array(self.v, dtype=float)
            if v.ndim != 1 or v.size % 2:
                raise ValueError("v must be a vector of even length 2d")
            self.v = v
        self.coef = float(self.coef)

    @property
    def dim(self):
        """Phase-space dimension 2d, or None for kinds without a shape."""
        if self.Q is not None:
            return self.Q.shape[0]
        if self.v is not None:
            return self.v.size
        return None

    @property
    def singular_at_origin(self):
        return self.kind == "quadratic_over_root" or (
            self.kind == "radial_power" and self.degree == 1
        )

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        if self.singular_at_origin:
            r = np.linalg.norm(w, axis=-1)
            if np.any(r == 0.0):
                raise DomainError(f"{self.kind} term is singular at the origin")
        k = self.kind
        if k == "quadratic_form":
            return np.einsum("...i,ij,...j->...", w, self.Q, w)
        if k == "linear_form":
            return w @ self.v
        if k == "radial_power":
            if self.degree == 0:
                return np.full(w.shape[:-1], self.coef)
            return self.coef * p2(w) ** (0.5 * self.degree)
        if k == "quadratic_over_root":
            return np.einsum("...i,ij,...j->...", w, self.Q, w) / np.linalg.norm(w, axis=-1)
        return np.full(w.shape[:-1], self.coef)

    def grad(self, w):
        """Euclidean gradient in R^{2d}."""
        w = np.asarray(w, dtype=float)
        k = self.kind
        if k == "quadratic_form":
            return 2.0 * w @ self.Q
        if k == "linear_form":
            return np.broadcast_to(self.v, w.shape).copy()
        if k in ("constant",) or (k == "radial_power" and self.degree == 0):
            return np.zeros_like(w)
        r = np.linalg.norm(w, axis=-1)[..., None]
        if np.any(r == 0.0):
            raise DomainError(f"{self.kind} term is singular at the origin")
        if k == "radial_power":
            half = 0.5 * self.degree
            return self.coef * half * p2(w)[..., None] ** (half - 1.0) * w
        quad = np.einsum("...i,ij,...j->...", w, self.Q, w)[..., None]
        return 2.0 * (w @ self.Q) / r - quad * w / r**3

    def to_dict(self):
        out = {"degree": self.degree, "kind": self.kind}
        if self.Q is not None:
            out["Q"] = self.Q.tolist()
        if self.v is not None:
            out["v"] = self.v.tolist()
        if self.kind in ("radial_power", "constant"):
            out["coef"] = self.coef
        return out

    @classmethod
    def from_dict(cls, doc):
        unknown = set(doc) - {"degree", "kind", "Q", "v", "coef"}
        if unknown:
            raise ValueError(f"unknown term keys: {sorted(unknown)}")
        return cls(
            kind=doc["kind"],
            degree=int(doc["degree"]),
            Q=None if "Q" not in doc else np.array(doc["Q"], dtype=float),
            v=None if "v" not in doc else np.array(doc["v"], dtype=float),
            coef=doc.get("coef", 0.0),
        )


def quadratic_form(Q):
    return HomogeneousTerm("quadratic_form", 2, Q=Q)


def linear_form(v):
    return HomogeneousTerm("linear_form", 1, v=v)


def radial_power(coef, degree):
    return HomogeneousTerm("radial_power", degree, coef=coef)


def quadratic_over_root(Q):
    return HomogeneousTerm("quadratic_over_root", 1, Q=Q)


def constant(coef):
    return HomogeneousTerm("constant", 0, coef=coef)


@dataclass
class Symbol:
    """A real classical symbol given as a list of homogeneous terms."""

    d: int
    terms: list[HomogeneousTerm] = field(default_factory=list)

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        for t in self.terms:
            if t.dim is not None and t.dim != 2 * self.d:
                raise ValueError(f"term of size {t.dim} does not match 2d = {2 * self.d}")

    @classmethod
    def oscillator(cls, d, perturbation: Sequence[HomogeneousTerm] = ()):
        """p2 plus the given lower-order terms."""
        return cls(d, [quadratic_form(0.5 * np.eye(2 * d)), *perturbation])

    def part(self, degree):
        return [t for t in self.terms if t.degree == degree]

    def quadratic_matrix(self):
        """Matrix M with (degree-2 part)(w) = w^T M w."""
        M = np.zeros((2 * self.d, 2 * self.d))
        for t in self.part(2):
            if t.kind == "quadratic_form":
                M += t.Q
            else:
                M += 0.5 * t.coef * np.eye(2 * self.d)
        return M

    @property
    def principal_is_oscillator(self):
        return bool(np.array_equal(self.quadratic_matrix(), 0.5 * np.eye(2 * self.d)))

    def evaluate_degree(self, degree, w):
        w = np.asarray(w, dtype=float)
        out = np.zeros(w.shape[:-1])
        for t in self.part(degree):
            out = out + t(w)
        return out

    def __call__(self, w):
        return evaluate(self, w)

    def to_json(self):
        return json.dumps({"d": self.d, "terms": [t.to_dict() for t in self.terms]})

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text) if isinstance(text, str) else text
        unknown = set(doc) - {"d", "terms"}
        if unknown:
            raise ValueError(f"unknown symbol keys: {sorted(unknown)}")
        return cls(int(doc["d"]), [HomogeneousTerm.from_dict(t) for t in doc["terms"]])


def evaluate(s: Symbol, w):
    """Sum of all term values at the phase-space point(s) ``w``."""
    w = np.asarray(w, dtype=float)
    if w.shape[-1] != 2 * s.d:
        raise DomainError(f"point has {w.shape[-1]} coordinates, expected {2 * s.d}")
    out = np.zeros(w.shape[:-1])
    for t in s.terms:
        out = out + t(w)
    return out


# ---------------------------------------------------------------------------
# sphere quadrature


def sphere_area(n):
    """Area of the unit sphere S^{n-1} in R^n."""
    return 2.0 * math.pi ** (n / 2) / math.gamma(n / 2)


def sphere_quadrature(d, n_angle=48, n_phi=32):
    """Product rule on S^{2d-1} in action-angle coordinates.

    Writes ``x_j + i xi_j = rho_j e^{i phi_j}`` with ``rho`` on the positive
    orthant of S^{d-1} (hyperspherical angles in [0, pi/2], Gauss-Legendre)
    and ``phi`` on the torus (periodic trapezoid).  The surface measure is
    ``prod(rho_j) dsigma(rho) dphi``.  Returns ``(nodes, weights)`` with nodes
    of shape (M, 2d).
    """
    xg, wg = roots_legendre(n_angle)
    a = 0.25 * math.pi * (xg + 1.0)
    wa = 0.25 * math.pi * wg
    # rho on S^{d-1}_+ with its measure
    rho = np.ones((1, 1))
    w_rho = np.ones(1)
    for level in range(d - 1):
        # append one angle: rho -> (rho * cos a, ..., last * sin a) with Jacobian sin^{k} a
        k = d - 2 - level
        new_rho = []
        new_w = []
        for ai, wi in zip(a, wa):
            r = rho.copy()
            last = r[:, -1].copy()
            r[:, -1] = last * math.cos(ai)
            r = np.column_stack([r, last * math.sin(ai)])
            new_rho.append(r)
            new_w.append(w_rho * wi * math.sin(ai) ** k * np.ones(len(w_rho)))
        # the Jacobian power belongs to the coordinate being split
        rho = np.vstack(new_rho)
        w_rho = np.concatenate(new_w)
    # hyperspherical Jacobian: with the construction above the first split
    # angle carries sin^{d-2}, which is what the loop assigns.
    phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
    wphi = 2.0 * math.pi / n_phi
    grids = np.meshgrid(*([phi] * d), indexing="ij")
    phis = np.stack([g.ravel() for g in grids], axis=-1)  # (P, d)
    n_rho, n_tor = rho.shape[0], phis.shape[0]
    R = np.repeat(rho, n_tor, axis=0)
    Ph = np.tile(phis, (n_rho, 1))
    nodes = np.concatenate([R * np.cos(Ph), R * np.sin(Ph)], axis=1)
    weights = np.repeat(w_rho * np.prod(rho, axis=1), n_tor) * wphi**d
    return nodes, weights


# ---------------------------------------------------------------------------
# Weyl-law integrals


@dataclass
class VolumeEstimate:
    value: float
    error: float
    method: str


def _ray_coefficients(s: Symbol, theta):
    a = np.einsum("...i,ij,...j->...", theta, s.quadratic_matrix(), theta)
    b = s.evaluate_degree(1, theta)
    return a, b


def _degree1_bound(s: Symbol):
    """Upper bound for |p1| on the unit sphere."""
    B = 0.0
    for t in s.part(1):
        if t.kind == "linear_form":
            B += float(np.linalg.norm(t.v))
        elif t.kind == "quadratic_over_root":
            B += float(np.max(np.abs(np.linalg.eigvalsh(t.Q))))
        else:
            B += abs(t.coef) / math.sqrt(2.0)
    return B


def boundary_radius(a, b, lam, rtol=1e-13):
    """Largest r with a r^2 + b r <= lam, by vectorised bisection (a > 0)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    hi = (np.abs(b) + np.sqrt(b * b + 4.0 * a * lam)) / (2.0 * a) + 1.0
    lo = np.zeros_like(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        inside = a * mid * mid + b * mid <= lam
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
        if np.all(hi - lo <= rtol * hi):
            break
    return 0.5 * (lo + hi)


def weyl_volume(s: Symbol, lam, method="radial_quadrature", *, orders=None, n=10**6,
                seed=0, chunk=10**6):
    """``(2 pi)^{-d} vol{p2 + p1 <= lam}`` (degree-0 terms are ignored).

    ``method="radial_quadrature"`` integrates ``r*(theta)^{2d}/(2d)`` over the
    sphere, ``r*`` being the boundary radius along each ray;
    ``method="montecarlo"`` samples a bounding ball and reports mean and
    standard error.
    """
    d = s.d
    M = s.quadratic_matrix()
    a_min = float(np.min(np.linalg.eigvalsh(M)))
    if a_min <= 0:
        raise PreconditionError("degree-2 part is not positive definite; sublevel set unbounded")
    if lam <= 0:
        raise PreconditionError("lam must be positive")
    norm = (2.0 * math.pi) ** (-d)
    if method == "radial_quadrature":
        if orders is None:
            orders = (48, 32) if d <= 2 else (20, 12)
        theta, wts = sphere_quadrature(d, *orders)
        a, b = _ray_coefficients(s, theta)
        r = boundary_radius(a, b, lam)
        value = norm * float(np.sum(wts * r ** (2 * d))) / (2 * d)
        # crude error indicator: change under a coarser rule
        theta2, wts2 = sphere_quadrature(d, max(4, orders[0] // 2), max(4, orders[1] // 2))
        a2, b2 = _ray_coefficients(s, theta2)
        v2 = norm * float(np.sum(wts2 * boundary_radius(a2, b2, lam) ** (2 * d))) / (2 * d)
        return VolumeEstimate(value, abs(value - v2), "radial_quadrature")
    if method == "montecarlo":
        B = _degree1_bound(s)
        R = (B + math.sqrt(B * B + 4.0 * a_min * lam)) / (2.0 * a_min)
        ball = R ** (2 * d) * sphere_area(2 * d) / (2 * d)
        seeds = np.random.SeedSequence(seed).spawn(max(1, -(-n // chunk)))
        hits = 0
        done = 0
        for ss in seeds:
            m = min(chunk, n - done)
            rng = np.random.default_rng(ss)
            g = rng.standard_normal((m, 2 * d))
            g /= np.linalg.norm(g, axis=1)[:, None]
            g *= R * rng.random(m)[:, None] ** (1.0 / (2 * d))
            val = g @ M
            val = np.einsum("ij,ij->i", val, g) + s.evaluate_degree(1, g)
            hits += int(np.count_nonzero(val <= lam))
            done += m
        frac = hits / n
        value = norm * ball * frac
        err = norm * ball * math.sqrt(max(frac * (1.0 - frac), 0.0) / n)
        return VolumeEstimate(value, err, "montecarlo")
    raise ValueError(f"unknown method {method!r}")


def surface_integral_p1(s: Symbol, lam=1.0, orders=None):
    """``(2 pi)^{-d} int_{p2 = lam} p1 dS/|grad p2|``.

    Homogeneity makes this ``lam^{d - 1/2}`` times its value at ``lam = 1``,
    which is the coefficient of the ``lam^{d-1/2}`` Weyl term up to sign.
    """
    d = s.d
    if orders is None:
        orders = (48, 32) if d <= 2 else (20, 12)
    theta, wts = sphere_quadrature(d, *orders)
    # on p2 = lam: radius sqrt(2 lam), dS = R^{2d-1} dsigma, |grad p2| = R
    R = math.sqrt(2.0 * lam)
    vals = s.evaluate_degree(1, theta) * R
    return (2.0 * math.pi) ** (-d) * R ** (2 * d - 2) * float(np.sum(wts * vals))


def surface_integral_p0(s: Symbol, lam, orders=None):
    """``(2 pi)^{-d} int_{p2 = lam} p0 dS/|grad p2|`` (second Weyl term, up to sign)."""
    d = s.d
    if orders is None:
        orders = (48, 32) if d <= 2 else (20, 12)
    theta, wts = sphere_quadrature(d, *orders)
    R = math.sqrt(2.0 * lam)
    vals = s.evaluate_degree(0, theta)
    return (2.0 * math.pi) ** (-d) * R ** (2 * d - 2) * float(np.sum(wts * vals))
