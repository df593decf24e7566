"""Hermite-basis quantization and exact model spectra.

Two routes are provided.  Flow-commuting perturbations are quantized by
joint functional calculus with H0, which gives exact spectra level by level
and is what makes lambda ~ 10^3 experiments cheap.  General symbols (d <= 2)
are quantized by pairing the symbol against cross-Wigner functions of
Hermite functions with tensor Gauss-Hermite quadrature; the ladder algebra
of x and D gives an exact oracle for polynomial symbols.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.special import gammaln, roots_hermite

from .errors import ConvergenceError, DomainError, PreconditionError
from .symbols import Symbol, cutoff


def multiplicity(j, d):
    """Number of ways to write j as an ordered sum of d nonnegative integers."""
    if j < 0 or d < 1:
        raise DomainError("multiplicity needs j >= 0 and d >= 1")
    return math.comb(d + j - 1, j)


# ---------------------------------------------------------------------------
# spectrum tables


@dataclass
class SpectrumTable:
    """Sorted distinct eigenvalues with multiplicities.

    Every eigenvalue ``<= lambda_trust`` is guaranteed to be present;
    ``lambda_trust = inf`` marks a complete finite spectrum.
    """

    eigenvalues: np.ndarray
    multiplicities: np.ndarray
    lambda_trust: float
    model_tag: str = ""
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        self.multiplicities = np.asarray(self.multiplicities, dtype=np.int64)
        if self.eigenvalues.shape != self.multiplicities.shape:
            raise ValueError("eigenvalues and multiplicities must be parallel")
        if self.eigenvalues.size and np.any(np.diff(self.eigenvalues) <= 0):
            raise ValueError("eigenvalues must be strictly increasing")
        if np.any(self.multiplicities < 1):
            raise ValueError("multiplicities must be positive")
        if (self.eigenvalues.size and self.lambda_trust > self.eigenvalues[-1]
                and self.lambda_trust != math.inf):
            raise ValueError("lambda_trust exceeds the largest eigenvalue")
        self.lambda_trust = float(self.lambda_trust)
        self._cum = np.concatenate([[0], np.cumsum(self.multiplicities)])

    @property
    def cumulative(self):
        """cumulative[i] = number of eigenvalues (with multiplicity) among the first i."""
        return self._cum

    @property
    def total(self):
        return int(self._cum[-1])

    def to_csv(self, path):
        path = Path(path)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("eigenvalue,multiplicity\n")
            for lam, m in zip(self.eigenvalues, self.multiplicities):
                fh.write(f"{lam:.17g},{int(m)}\n")
        meta = {
            "model_tag": self.model_tag,
            "lambda_trust": None if math.isinf(self.lambda_trust) else self.lambda_trust,
            "parameters": self.parameters,
        }
        Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        return path

    @classmethod
    def from_csv(cls, path):
        path = Path(path)
        meta = json.loads(Path(str(path) + ".meta.json").read_text())
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            np.array([float(r["eigenvalue"]) for r in rows]),
            np.array([int(r["multiplicity"]) for r in rows]),
            math.inf if meta["lambda_trust"] is None else meta["lambda_trust"],
            meta.get("model_tag", ""),
            meta.get("parameters", {}),
        )


def merge_eigenvalues(values, mults=None, rtol=1e-12):
    """Sort eigenvalues and merge those equal within ``rtol * |lambda|``."""
    values = np.asarray(values, dtype=float).ravel()
    mults = np.ones(values.size, dtype=np.int64) if mults is None else np.asarray(mults).ravel()
    order = np.argsort(values, kind="stable")
    v = values[order]
    m = mults[order]
    if v.size == 0:
        return v, m
    new = np.empty(v.size, dtype=bool)
    new[0] = True
    new[1:] = np.diff(v) > rtol * np.maximum(np.abs(v[1:]), 1.0)
    starts = np.flatnonzero(new)
    return v[starts], np.add.reduceat(m, starts)


def table_from_values(values, lambda_trust, model_tag="", parameters=None, mults=None):
    v, m = merge_eigenvalues(values, mults)
    return SpectrumTable(v, m, lambda_trust, model_tag, parameters or {})


def oscillator_spectrum(d, lambda_max):
    """Eigenvalues j + d/2 of H0 with multiplicities p(j, d)."""
    if lambda_max <= d / 2:
        raise PreconditionError("lambda_max must exceed the ground state d/2")
    jmax = int(math.floor(lambda_max - d / 2)) + 1  # one level past the window
    j = np.arange(jmax + 1)
    mult = np.array([multiplicity(int(k), d) for k in j], dtype=np.int64)
    return SpectrumTable(j + d / 2, mult, lambda_max, "oscillator", {"d": d})


def sqrt_oscillator_spectrum(d, lambda_max, a=1.0):
    """Spectrum of H0 + a sqrt(H0): j + d/2 + a sqrt(j + d/2), multiplicity p(j, d)."""
    if a <= -2.0 * math.sqrt(d / 2):
        raise PreconditionError("eigenvalue map not monotone for this a")
    vals, mults = [], []
    j = 0
    while True:
        e = j + d / 2
        lam = e + a * math.sqrt(e)
        vals.append(lam)
        mults.append(multiplicity(j, d))
        if lam > lambda_max:
            break
        j += 1
    return SpectrumTable(np.array(vals), np.array(mults), lambda_max, "sqrt",
                         {"d": d, "a": a})


def level_indices(d, N):
    """Multi-indices with |alpha| = N in lexicographic order."""
    out = [a for a in itertools.product(range(N + 1), repeat=d) if sum(a) == N]
    return np.array(out, dtype=np.int64).reshape(-1, d)


def basis_indices(d, N):
    """All multi-indices with |alpha| <= N, ordered by level, then lexicographically."""
    return np.vstack([level_indices(d, n) for n in range(N + 1)])


def _level_sums(c, N):
    """sum_j c_j (alpha_j + 1/2) over all alpha with |alpha| = N (any order)."""
    d = len(c)
    if d == 1:
        return np.array([c[0] * (N + 0.5)])
    if d == 2:
        k = np.arange(N + 1)
        return c[0] * (N - k + 0.5) + c[1] * (k + 0.5)
    parts = [c[0] * (a1 + 0.5) + _level_sums(c[1:], N - a1) for a1 in range(N + 1)]
    return np.concatenate(parts)


def diagonal_level_cutoff(cmax, d, lambda_max):
    """Smallest N whose whole level is certified above ``lambda_max``."""
    N = max(0, int(lambda_max - d / 2 - 2 * cmax * math.sqrt(max(lambda_max, 1.0))) - 2)
    while N + d / 2 - cmax * (N + d) / math.sqrt(N + d / 2) <= lambda_max:
        N += 1
    return N


def diagonal_model_spectrum(c, lambda_max):
    """Exact spectrum of Op(p2) + functional-calculus quantization of hopf_pullback(c).

    lambda_alpha = (|alpha| + d/2) + sum_j c_j (alpha_j + 1/2) / sqrt(|alpha| + d/2)
    """
    c = np.asarray(c, dtype=float).ravel()
    d = c.size
    cmax = float(np.max(np.abs(c)))
    if cmax >= 1.0:
        raise PreconditionError("diagonal model needs max |c_j| < 1")
    Nmax = diagonal_level_cutoff(cmax, d, lambda_max)
    vals = []
    for N in range(Nmax + 1):
        e = N + d / 2
        vals.append(e + _level_sums(c, N) / math.sqrt(e))
    table = table_from_values(np.concatenate(vals), lambda_max, "hopf",
                              {"c": c.tolist(), "d": d, "N_max": Nmax})
    return table


# ---------------------------------------------------------------------------
# ladder algebra (exact oracle)


def _single_mode(op, M):
    """Matrix of x, dx (= d/dx) or D (= -i d/dx) on Hermite functions 0..M."""
    n = np.arange(1, M + 1)
    low = np.zeros((M + 1, M + 1))
    low[n - 1, n] = np.sqrt(n / 2.0)  # <n-1| . |n> from the lowering part
    if op == "x":
        return low + low.T
    if op == "dx":
        return low - low.T
    if op == "D":
        return -1j * (low - low.T)
    raise ValueError(f"unknown ladder operator {op!r}")


def _parse_word(word):
    toks = word.split() if isinstance(word, str) else list(word)
    out = []
    for tok in toks:
        if tok.startswith("dx"):
            out.append(("dx", int(tok[2:] or 1) - 1))
        else:
            out.append((tok[0], int(tok[1:] or 1) - 1))
    return out


def ladder_matrix(word, N, d=1):
    """Matrix of a product of x_j, D_j (or dx_j) on the basis with |alpha| <= N.

    ``word`` is a space-separated string such as ``"x1 D1 x1"`` (1-based mode
    indices; the rightmost factor acts first).  Products are formed on a basis
    large enough that truncation does not touch the returned block.
    """
    ops = _parse_word(word)
    M = N + len(ops) + 1
    basis_small = basis_indices(d, N)
    if d == 1:
        mats = {op: _single_mode(op, M) for op in ("x", "dx", "D")}
        R = np.eye(M + 1, dtype=complex)
        for op, _ in ops:
            R = R @ mats[op]
        R = R[: N + 1, : N + 1]
    else:
        full = list(itertools.product(range(M + 1), repeat=d))
        pos = {a: i for i, a in enumerate(full)}
        R = np.eye(len(full), dtype=complex)
        for op, j in ops:
            single = _single_mode(op, M)
            factors = [np.eye(M + 1)] * d
            factors = list(factors)
            factors[j] = single
            K = factors[0]
            for F in factors[1:]:
                K = np.kron(K, F)
            R = R @ K
        idx = [pos[tuple(a)] for a in basis_small]
        R = R[np.ix_(idx, idx)]
    if np.max(np.abs(R.imag)) == 0.0:
        return R.real
    return R


def weyl_monomial_matrix(px, pxi, N):
    """Exact Op_W(x^px xi^pxi), d = 1, via the symmetric ordering
    2^{-px} sum_k binom(px, k) x^k D^pxi x^{px-k}."""
    M = N + px + pxi + 1
    X = _single_mode("x", M).astype(complex)
    D = _single_mode("D", M)
    Dp = np.linalg.matrix_power(D, pxi)
    R = np.zeros_like(X)
    for k in range(px + 1):
        R += math.comb(px, k) * np.linalg.matrix_power(X, k) @ Dp @ np.linalg.matrix_power(X, px - k)
    R = R[: N + 1, : N + 1] / 2**px
    return R.real if np.max(np.abs(R.imag)) < 1e-15 * max(1.0, np.max(np.abs(R))) else R


# ---------------------------------------------------------------------------
# Weyl quantization by phase-space quadrature


def cross_wigner(nmax, x, xi):
    """W(psi_b, psi_a)(x, xi) for all 0 <= a, b <= nmax.

    Returns an array of shape (nmax+1, nmax+1, len(x)) indexed [a, b, node]
    such that <psi_a, Op_W(f) psi_b> = int f W(psi_b, psi_a).  Uses the
    closed form in normalised Laguerre functions, generated by their
    three-term recurrence in the lower index.
    """
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    u = 2.0 * (x * x + xi * xi)
    phase = np.exp(-1j * np.arctan2(xi, x))  # (x - i xi)/r
    logu = np.log(np.where(u > 0, u, 1.0))
    out = np.zeros((nmax + 1, nmax + 1, x.size), dtype=complex)
    for k in range(nmax + 1):
        # l_m = sqrt(m!/(m+k)!) u^{k/2} e^{-u/2} L_m^k(u)
        prev = np.zeros_like(u)
        cur = np.exp(0.5 * k * logu - 0.5 * u - 0.5 * gammaln(k + 1))
        if k > 0:
            cur = np.where(u > 0, cur, 0.0)
        ph = phase**k / math.pi
        for m in range(nmax + 1 - k):
            w = (-1) ** m * cur * ph
            out[m, m + k] = w
            if k:
                out[m + k, m] = np.conj(w)
            nxt = ((2 * m + 1 + k - u) * cur - math.sqrt(m * (m + k)) * prev) / math.sqrt(
                (m + 1) * (m + 1 + k)
            )
            prev, cur = cur, nxt
    return out


def regularized_evaluate(s: Symbol, w):
    """Symbol value with singular degree-1 terms multiplied by the cutoff."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1])
    r = np.linalg.norm(w, axis=-1)
    zeta = None
    for t in s.terms:
        if t.singular_at_origin:
            if zeta is None:
                zeta = cutoff(w)
            mask = r > 0
            vals = np.zeros_like(out)
            vals[mask] = t(w[mask])
            out = out + zeta * vals
        else:
            out = out + t(w)
    return out


@dataclass
class WeylMatrix:
    matrix: np.ndarray
    basis: np.ndarray
    tail_error_estimate: float
    quadrature_order: int


@lru_cache(maxsize=4)
def _wigner_table(N, nq):
    xg, wg = roots_hermite(nq)
    wg = wg * np.exp(xg * xg)  # the Gaussian factor lives in the Wigner functions
    X, XI = np.meshgrid(xg, xg, indexing="ij")
    W2 = np.outer(wg, wg).ravel()
    T = cross_wigner(N, X.ravel(), XI.ravel())  # [a, b, node]
    return X, XI, W2, T


def _laguerre_functions(N, u):
    """l[k, m] = sqrt(m!/(m+k)!) u^{k/2} e^{-u/2} L_m^k(u) for m + k <= N."""
    logu = np.log(np.where(u > 0, u, 1.0))
    out = np.zeros((N + 1, N + 1, u.size))
    for k in range(N + 1):
        prev = np.zeros_like(u)
        cur = np.exp(0.5 * k * logu - 0.5 * u - 0.5 * gammaln(k + 1))
        if k > 0:
            cur = np.where(u > 0, cur, 0.0)
        for m in range(N + 1 - k):
            out[k, m] = cur
            nxt = ((2 * m + 1 + k - u) * cur - math.sqrt(m * (m + k)) * prev) / math.sqrt(
                (m + 1) * (m + 1 + k)
            )
            prev, cur = cur, nxt
    return out


@lru_cache(maxsize=4)
def _polar_table(N, nq):
    # Gauss-Legendre panels of width 1/2 in r, out to where every Wigner
    # function of level <= N is negligible
    R = math.ceil(2.0 * (math.sqrt(2.0 * N + 1.0) + 7.0)) / 2.0
    g, gw = np.polynomial.legendre.leggauss(nq)
    edges = np.arange(0.0, R + 0.25, 0.5)
    r = (0.5 * (edges[:-1, None] + edges[1:, None]) + 0.25 * g[None, :]).ravel()
    rw = np.broadcast_to(0.25 * gw, (edges.size - 1, nq)).ravel() * r
    return r, rw, _laguerre_functions(N, 2.0 * r * r)


def _weyl_matrix_polar(f, N, nq):
    """d = 1 matrix via angular FFT and radial panels (cross-Wigner in polar form)."""
    r, rw, lag = _polar_table(N, max(8, nq // 4))
    ntheta = 2 * N + 2 * nq
    theta = 2.0 * math.pi * np.arange(ntheta) / ntheta
    pts = np.stack(
        [r[:, None] * np.cos(theta)[None, :], r[:, None] * np.sin(theta)[None, :]], axis=-1
    )
    F = np.fft.fft(f(pts), axis=1) * (2.0 * math.pi / ntheta)  # [r, mode]
    M = np.zeros((N + 1, N + 1), dtype=complex)
    for k in range(N + 1):
        m = np.arange(N + 1 - k)
        sign = (-1.0) ** m / math.pi
        rad = lag[k, : N + 1 - k] * rw[None, :]
        M[m, m + k] = sign * (rad @ F[:, k])
        if k:
            M[m + k, m] = sign * (rad @ F[:, (-k) % ntheta])
    return M


def _weyl_matrix_once(f, d, N, nq):
    if d == 1:
        return _weyl_matrix_polar(f, N, nq)
    X, XI, W2, T = _wigner_table(N, nq)
    n1 = N + 1
    # d = 2: nodes are (x1, xi1) x (x2, xi2); w = (x1, x2, xi1, xi2)
    P = X.size
    A1 = np.repeat(np.stack([X.ravel(), XI.ravel()], -1), P, axis=0)
    A2 = np.tile(np.stack([X.ravel(), XI.ravel()], -1), (P, 1))
    wpts = np.stack([A1[:, 0], A2[:, 0], A1[:, 1], A2[:, 1]], axis=-1)
    vals = f(wpts).reshape(P, P) * np.outer(W2, W2)
    Tm = T.reshape(n1 * n1, P)
    G = vals @ Tm.T  # [node1, (a2, b2)]
    full = Tm @ G  # [(a1, b1), (a2, b2)]
    full = full.reshape(n1, n1, n1, n1)
    basis = basis_indices(2, N)
    a1, a2 = basis[:, 0], basis[:, 1]
    return full[a1[:, None], a1[None, :], a2[:, None], a2[None, :]]


def weyl_matrix(s, N_max, d=None, quadrature_order=None, check_convergence=True,
                conv_tol=1e-7):
    """Matrix of Op_W(s) on Hermite functions with |alpha| <= N_max (d <= 2).

    ``s`` is a Symbol (singular terms are cut off near the origin) or a
    vectorised callable on points with last axis 2d (then ``d`` is required).
    The matrix is Hermitian; it is real symmetric for symbols even in xi.
    """
    if isinstance(s, Symbol):
        d = s.d
        f = lambda w: regularized_evaluate(s, w)  # noqa: E731
    else:
        if d is None:
            raise ValueError("d is required for callable symbols")
        f = s
    if d not in (1, 2):
        raise PreconditionError("general-symbol quantization supports d <= 2 only")
    if N_max < 0:
        raise ValueError("N_max must be nonnegative")
    nq = quadrature_order or (N_max + 8)
    M = _weyl_matrix_once(f, d, N_max, nq)
    if check_convergence:
        M2 = _weyl_matrix_once(f, d, N_max, 2 * nq)
        diff = np.abs(M2 - M)
        if np.max(diff) > conv_tol:
            i, j = np.unravel_index(int(np.argmax(diff)), diff.shape)
            raise ConvergenceError(
                f"Weyl quadrature not converged at entry ({i}, {j}): change {diff[i, j]:.3e}"
            )
        M, nq = M2, 2 * nq
    M = 0.5 * (M + M.conj().T)
    if np.max(np.abs(M.imag)) <= 1e-14 * max(1.0, float(np.max(np.abs(M)))):
        M = M.real.copy()
    basis = basis_indices(d, N_max) if d == 2 else np.arange(N_max + 1)[:, None]
    levels = basis.sum(axis=1)
    half = N_max // 2
    low, high = levels <= half, levels > half
    C = M[np.ix_(low, high)]
    gap = max(1.0, (N_max - half) / 2.0)
    tail = float(np.linalg.norm(C, 2) ** 2 / gap) if C.size else 0.0
    return WeylMatrix(M, basis, tail, nq)


# ---------------------------------------------------------------------------
# block spectra for flow-commuting perturbations


@dataclass
class LevelBlock:
    level: int
    dim: int
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix)
        if self.matrix.shape != (self.dim, self.dim):
            raise ValueError("block shape does not match dim")


def hermitian_form_blocks(A, N_max):
    """Level blocks of Op_W of the flow-invariant form (1/2) Re(z^* A z), z = x + i xi.

    On level N this operator is sum_jk A_jk a_j^+ a_k + tr(A)/2 restricted to
    the span of psi_alpha, |alpha| = N (lexicographic order).
    """
    A = np.asarray(A, dtype=float)
    d = A.shape[0]
    blocks = []
    for N in range(N_max + 1):
        idx = level_indices(d, N)
        pos = {tuple(a): i for i, a in enumerate(idx)}
        B = np.zeros((len(idx), len(idx)))
        for col, beta in enumerate(idx):
            for j in range(d):
                for k in range(d):
                    if A[j, k] == 0 or beta[k] == 0:
                        continue
                    alpha = beta.copy()
                    alpha[k] -= 1
                    alpha[j] += 1
                    amp = math.sqrt(beta[k]) * math.sqrt(alpha[j])
                    B[pos[tuple(alpha)], col] += A[j, k] * amp
        B += 0.5 * np.trace(A) * np.eye(len(idx))
        blocks.append(LevelBlock(N, len(idx), B))
    return blocks


def block_spectrum(blocks, d, lambda_max, norm_bound, model_tag="block"):
    """Spectrum of H0 + Q/sqrt(H0) where Q commutes with H0 and has the given level blocks.

    A block eigenvalue mu on level N contributes N + d/2 + mu / sqrt(N + d/2).
    ``norm_bound`` is a constant m with ||block_N|| <= m (N + d/2) for every
    level, used to certify the trust threshold when blocks stop at some level.
    """
    vals = []
    top = -1
    for b in blocks:
        M = np.asarray(b.matrix)
        if M.size and np.max(np.abs(M - M.conj().T)) > 1e-12 * max(1.0, float(np.max(np.abs(M)))):
            raise PreconditionError(f"block at level {b.level} is not symmetric")
        e = b.level + d / 2
        mu = np.linalg.eigvalsh(M) if M.size else np.zeros(0)
        vals.append(e + mu / math.sqrt(e))
        top = max(top, b.level)
    nxt = top + 1 + d / 2
    floor_next = nxt - norm_bound * math.sqrt(nxt)
    if norm_bound >= 1.0:
        raise PreconditionError("norm_bound must be < 1 for a certified trust threshold")
    values = np.concatenate(vals) if vals else np.zeros(0)
    trust = min(lambda_max, floor_next, float(np.max(values)) if values.size else -np.inf)
    return table_from_values(values, trust, model_tag, {"d": d, "top_level": top})
