import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import comb

from isospec.errors import ConvergenceError, PreconditionError
from isospec.quantize import (LevelBlock, SpectrumTable, basis_indices, block_spectrum,
                              cross_wigner, diagonal_model_spectrum, hermitian_form_blocks,
                              ladder_matrix, level_indices, merge_eigenvalues, multiplicity,
                              oscillator_spectrum, sqrt_oscillator_spectrum, table_from_values,
                              weyl_matrix, weyl_monomial_matrix)
from isospec.symbols import Symbol, quadratic_over_root


@pytest.mark.parametrize("j, d, expected", [(0, 1, 1), (0, 4, 1), (3, 2, 4), (2, 3, 6)])
def test_multiplicity_examples(j, d, expected):
    assert multiplicity(j, d) == expected


def test_multiplicity_matches_enumeration():
    for d in (1, 2, 3):
        for j in range(8):
            assert multiplicity(j, d) == len(level_indices(d, j))


def test_multiplicity_growth_bounded_below():
    for d in (2, 3, 4):
        j = np.unique(np.geomspace(10, 10**4, 30).astype(int))
        ratio = np.array([multiplicity(int(k), d) for k in j]) / j.astype(float) ** (d - 1)
        assert ratio.min() >= 1.0 / math.factorial(d - 1) - 1e-12


def test_oscillator_d1():
    t = oscillator_spectrum(1, 5.0)
    below = t.eigenvalues <= 5.0
    np.testing.assert_array_equal(t.eigenvalues[below], [0.5, 1.5, 2.5, 3.5, 4.5])
    assert np.all(t.multiplicities == 1)
    assert t.cumulative[int(np.sum(below))] == 5


def test_oscillator_d2_counting():
    t = oscillator_spectrum(2, 10.5)
    assert int(np.sum(t.multiplicities[t.eigenvalues <= 10.5])) == 55


def test_oscillator_d3_multiplicities():
    t = oscillator_spectrum(3, 4.0)
    assert t.multiplicities[0] == 1 and t.eigenvalues[0] == 1.5
    assert t.multiplicities[1] == 3 and t.eigenvalues[1] == 2.5


def test_oscillator_precondition():
    with pytest.raises(PreconditionError):
        oscillator_spectrum(2, 0.5)


def test_sqrt_model_examples():
    t1 = sqrt_oscillator_spectrum(1, 3.0)
    assert t1.eigenvalues[0] == pytest.approx(0.5 + math.sqrt(0.5), 1e-15)
    assert t1.multiplicities[0] == 1
    t2 = sqrt_oscillator_spectrum(2, 10.0)
    assert t2.eigenvalues[2] == pytest.approx(3 + math.sqrt(3), 1e-15)
    assert t2.multiplicities[2] == 3


def test_sqrt_model_cluster_spacing():
    t = sqrt_oscillator_spectrum(2, 2000.0)
    gaps = np.diff(t.eigenvalues)
    e = t.eigenvalues[:-1]
    # sqrt(e + 1) - sqrt(e) = 1 / (2 sqrt(e)) + O(e^{-3/2})
    np.testing.assert_allclose(gaps - 1, 1 / (2 * np.sqrt(e)), atol=2 * np.max(e ** -1.5))


def test_diagonal_model_example():
    t = diagonal_model_spectrum([0.3, 0.7], 10.0)
    assert np.any(np.isclose(t.eigenvalues, 5.1, rtol=1e-15, atol=0))


def test_diagonal_model_equal_entries_match_sqrt_model():
    a = 0.4
    t = diagonal_model_spectrum([a, a], 200.0)
    s = sqrt_oscillator_spectrum(2, 200.0, a)
    k = np.searchsorted(t.eigenvalues, 200.0, side="right")
    np.testing.assert_allclose(t.eigenvalues[:k], s.eigenvalues[:k], rtol=1e-14)
    np.testing.assert_array_equal(t.multiplicities[:k], s.multiplicities[:k])


def test_diagonal_model_cluster_width():
    """Level N spans (c2 - c1) N / sqrt(N + 1); both ends are eigenvalues."""
    c = np.array([0.3, 0.7])
    t = diagonal_model_spectrum(c, 2000.0)
    for N in (100, 400, 1600):
        e = N + 1.0
        lo = e + (c[0] * (N + 0.5) + 0.5 * c[1]) / math.sqrt(e)
        hi = e + (0.5 * c[0] + c[1] * (N + 0.5)) / math.sqrt(e)
        assert hi - lo == pytest.approx((c[1] - c[0]) * N / math.sqrt(e), rel=1e-12)
        for v in (lo, hi):
            assert np.min(np.abs(t.eigenvalues - v)) <= 1e-12 * v


def test_diagonal_model_rejects_large_c():
    with pytest.raises(PreconditionError):
        diagonal_model_spectrum([1.0, 0.2], 10.0)


@pytest.mark.parametrize("c", [[0.3, 0.7], [0.5, 0.5], [-0.4, 0.9], [0.2, 0.5, 0.8]])
def test_trust_counting_consistency(c):
    """Independent enumeration of alpha with lambda_alpha <= trust."""
    lam = 30.0
    t = diagonal_model_spectrum(c, lam)
    d = len(c)
    count = 0
    for N in range(int(3 * lam)):
        e = N + d / 2
        for alpha in itertools.product(range(N + 1), repeat=d):
            if sum(alpha) != N:
                continue
            if e + sum(cj * (aj + 0.5) for cj, aj in zip(c, alpha)) / math.sqrt(e) <= t.lambda_trust:
                count += 1
    assert t.cumulative[np.searchsorted(t.eigenvalues, t.lambda_trust, side="right")] == count


def test_variational_sanity():
    c = [0.3, 0.7]
    lam = 300.0
    t = diagonal_model_spectrum(c, lam)
    o = oscillator_spectrum(2, lam + 30)
    a = np.repeat(t.eigenvalues, t.multiplicities)
    b = np.repeat(o.eigenvalues, o.multiplicities)[: a.size]
    sel = a <= lam
    eps = max(abs(x) for x in c)
    assert np.all(np.abs(a[sel] - b[sel]) <= eps * np.sqrt(b[sel]) * (1 + 1e-12))


def test_table_validation():
    with pytest.raises(ValueError):
        SpectrumTable(np.array([1.0, 0.5]), np.array([1, 1]), 0.5)
    with pytest.raises(ValueError):
        SpectrumTable(np.array([1.0]), np.array([0]), 0.5)
    with pytest.raises(ValueError):
        SpectrumTable(np.array([1.0]), np.array([1]), 2.0)


def test_merge_eigenvalues():
    v, m = merge_eigenvalues([2.0, 1.0, 2.0 * (1 + 1e-14), 3.0], [1, 2, 3, 1])
    np.testing.assert_array_equal(v, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(m, [2, 4, 1])


values = st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=40, unique=True)


@given(values)
def test_table_csv_round_trip(tmp_path_factory, vals):
    t = table_from_values(vals, min(vals), "synthetic", {"seed": 1})
    path = tmp_path_factory.mktemp("t") / "spectrum.csv"
    t.to_csv(path)
    u = SpectrumTable.from_csv(path)
    np.testing.assert_array_equal(u.eigenvalues, t.eigenvalues)
    np.testing.assert_array_equal(u.multiplicities, t.multiplicities)
    assert u.lambda_trust == t.lambda_trust and u.model_tag == "synthetic"
    assert u.parameters == {"seed": 1}


def test_csv_layout(tmp_path):
    oscillator_spectrum(2, 3.0).to_csv(tmp_path / "s.csv")
    raw = (tmp_path / "s.csv").read_bytes()
    assert raw.startswith(b"eigenvalue,multiplicity\n1,1\n2,2\n")
    assert b"\r" not in raw


# ladder algebra


def test_ladder_identities():
    X = ladder_matrix("x1", 5)
    assert X[1, 0] == pytest.approx(1 / math.sqrt(2), 1e-15)
    assert ladder_matrix("x1 x1", 5)[0, 0] == pytest.approx(0.5, 1e-15)
    H = 0.5 * (ladder_matrix("x1 x1", 6) + ladder_matrix("D1 D1", 6))
    np.testing.assert_allclose(H, np.diag(np.arange(7) + 0.5), atol=1e-14)


def test_ladder_canonical_commutator():
    XD = ladder_matrix("x1 D1", 8)
    DX = ladder_matrix("D1 x1", 8)
    np.testing.assert_allclose(XD - DX, 1j * np.eye(9), atol=1e-13)


def test_ladder_d2_mode_independence():
    A = ladder_matrix("x1 D2", 4, d=2)
    B = ladder_matrix("D2 x1", 4, d=2)
    np.testing.assert_allclose(A, B, atol=1e-14)
    assert A.shape == (len(basis_indices(2, 4)),) * 2


def test_weyl_monomial_symmetric_ordering():
    # Op_W(x xi) = (x D + D x) / 2
    M = weyl_monomial_matrix(1, 1, 6)
    ref = 0.5 * (ladder_matrix("x1 D1", 6) + ladder_matrix("D1 x1", 6))
    np.testing.assert_allclose(M, ref, atol=1e-14)


def test_cross_wigner_marginal():
    """Integrating W(psi_n, psi_n) over xi gives |psi_n(x)|^2."""
    xi, w = np.polynomial.hermite.hermgauss(80)
    x0 = 0.37
    W = cross_wigner(4, np.full(xi.size, x0), xi)
    marg = np.sum(w * np.exp(xi * xi) * W[3, 3].real)
    from isospec.trace import hermite_functions
    assert marg == pytest.approx(hermite_functions(4, x0)[3] ** 2, 1e-10)


# Weyl quadrature


def test_weyl_matrix_of_x():
    M = weyl_matrix(lambda w: w[..., 0], 20, d=1).matrix
    np.testing.assert_allclose(M, ladder_matrix("x1", 20), atol=1e-10)


def test_weyl_matrix_of_oscillator():
    M = weyl_matrix(Symbol.oscillator(1), 20).matrix
    np.testing.assert_allclose(M, np.diag(np.arange(21) + 0.5), atol=1e-10)


@pytest.mark.parametrize("px, pxi", [(a, b) for a in range(5) for b in range(5) if a + b <= 4])
def test_weyl_matrix_monomials_d1(px, pxi):
    f = lambda w: w[..., 0] ** px * w[..., 1] ** pxi  # noqa: E731
    M = weyl_matrix(f, 24, d=1).matrix
    np.testing.assert_allclose(M, weyl_monomial_matrix(px, pxi, 24), atol=1e-9)


@pytest.mark.parametrize("word, f", [
    ("x1 D2", lambda w: w[..., 0] * w[..., 3]),
    ("x2 x2", lambda w: w[..., 1] ** 2),
    ("x1 x2", lambda w: w[..., 0] * w[..., 1]),
])
def test_weyl_matrix_d2(word, f):
    M = weyl_matrix(f, 8, d=2).matrix
    np.testing.assert_allclose(M, ladder_matrix(word, 8, d=2), atol=1e-10)


def test_weyl_matrix_regularized_degree_one_stable():
    s = Symbol.oscillator(1, [quadratic_over_root(np.diag([1.0, 0.0]))])
    m60 = weyl_matrix(s, 60).matrix
    m80 = weyl_matrix(s, 80).matrix
    assert np.allclose(m60, m60.T)
    e60 = np.linalg.eigvalsh(m60)[:12]
    e80 = np.linalg.eigvalsh(m80)[:12]
    np.testing.assert_allclose(e60, e80, atol=1e-6)


def test_weyl_matrix_convergence_failure_is_reported():
    rough = lambda w: np.sign(w[..., 0]) * np.abs(w[..., 0]) ** 0.5  # noqa: E731
    with pytest.raises(ConvergenceError, match="entry"):
        weyl_matrix(rough, 10, d=1, quadrature_order=8, conv_tol=1e-14)


def test_weyl_matrix_dimension_limit():
    with pytest.raises(PreconditionError):
        weyl_matrix(Symbol.oscillator(3), 2)


# block spectra


def test_zero_blocks_give_oscillator():
    blocks = [LevelBlock(N, N + 1, np.zeros((N + 1, N + 1))) for N in range(30)]
    t = block_spectrum(blocks, 2, 20.0, 0.0)
    o = oscillator_spectrum(2, 20.0)
    k = np.searchsorted(t.eigenvalues, 20.0, side="right")
    np.testing.assert_array_equal(t.eigenvalues[:k], o.eigenvalues[:k])
    np.testing.assert_array_equal(t.multiplicities[:k], o.multiplicities[:k])


def test_diagonal_blocks_reproduce_diagonal_model():
    c = [0.3, 0.7]
    t = block_spectrum(hermitian_form_blocks(np.diag(c), 60), 2, 40.0, 0.7)
    ref = diagonal_model_spectrum(c, 40.0)
    k = np.searchsorted(ref.eigenvalues, t.lambda_trust, side="right")
    np.testing.assert_allclose(t.eigenvalues[:k], ref.eigenvalues[:k], rtol=1e-14)
    np.testing.assert_array_equal(t.multiplicities[:k], ref.multiplicities[:k])


def test_level_one_block_is_coefficient_matrix():
    A = np.array([[0.3, 0.2], [0.2, 0.7]])
    blocks = hermitian_form_blocks(A, 2)
    np.testing.assert_allclose(np.linalg.eigvalsh(blocks[1].matrix),
                               np.linalg.eigvalsh(A) + 0.5 * np.trace(A), atol=1e-15)


def test_block_spectrum_rejects_asymmetric():
    with pytest.raises(PreconditionError):
        block_spectrum([LevelBlock(1, 2, np.array([[0.0, 1.0], [0.0, 0.0]]))], 2, 2.0, 0.5)


def test_binomial_oracle_small():
    for d in range(1, 6):
        for j in range(0, 60):
            assert multiplicity(j, d) == int(comb(d + j - 1, j, exact=True))
