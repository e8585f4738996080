import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from rdpc.linalg import (BlockLayout, finsler_preconditions, null_space_basis, pseudo_inverse,
                         schur_equivalence_check, smat, spectral_radius, svec, svec_dim)


def _sym(rng, n):
    a = rng.standard_normal((n, n))
    return a + a.T


# -- svec ------------------------------------------------------------------

def test_svec_identity_and_zero():
    np.testing.assert_array_equal(svec(np.eye(2)), [1.0, 0.0, 1.0])
    np.testing.assert_array_equal(svec(np.zeros((3, 3))), np.zeros(6))


def test_svec_preserves_inner_products(rng):
    a, b = _sym(rng, 5), _sym(rng, 5)
    assert svec(a) @ svec(b) == pytest.approx(np.trace(a @ b), rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 4), elements=st.floats(-1e3, 1e3)))
def test_smat_inverts_svec(a):
    s = a + a.T
    out = smat(svec(s))
    np.testing.assert_allclose(out, s, rtol=1e-15, atol=1e-12)
    assert svec(s).size == svec_dim(4)


def test_smat_rejects_bad_length():
    with pytest.raises(ValueError):
        smat(np.zeros(4))


# -- null space / pseudo-inverse -------------------------------------------

def test_null_space_examples():
    assert null_space_basis(np.eye(2)).shape == (2, 0)
    b = null_space_basis(np.array([[1.0, 1.0]]))
    assert b.shape == (2, 1)
    np.testing.assert_allclose(np.abs(b[:, 0]), [1 / np.sqrt(2)] * 2, atol=1e-14)
    assert b[0, 0] * b[1, 0] < 0


def test_null_space_of_rank4_matrix(rng):
    m = rng.standard_normal((4, 7))
    # rank by an independent singular-value count
    expected = 7 - int(np.sum(np.linalg.svd(m, compute_uv=False) > 1e-12))
    b = null_space_basis(m)
    assert b.shape[1] == expected == 3
    assert np.linalg.norm(m @ b) <= 1e-10 * np.linalg.norm(m)
    np.testing.assert_allclose(b.T @ b, np.eye(3), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 6), st.integers(0, 2**32 - 1))
def test_null_space_properties(rows, cols, rank, seed):
    rng = np.random.default_rng(seed)
    rank = min(rank, rows, cols)
    m = rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))
    b = null_space_basis(m)
    assert np.linalg.norm(m @ b) <= 1e-10 * max(np.linalg.norm(m), 1e-300) + 1e-300
    np.testing.assert_allclose(b.T @ b, np.eye(b.shape[1]), atol=1e-10)
    assert b.shape[1] == cols - rank


def test_pseudo_inverse_examples():
    np.testing.assert_array_equal(pseudo_inverse(np.eye(3)), np.eye(3))
    np.testing.assert_array_equal(pseudo_inverse(np.zeros((2, 3))), np.zeros((3, 2)))
    np.testing.assert_allclose(pseudo_inverse(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_penrose_identities(rows, cols, seed):
    rng = np.random.default_rng(seed)
    rank = max(1, min(rows, cols) - 1)
    a = rng.standard_normal((rows, rank)) @ rng.standard_normal((rank, cols))
    g = pseudo_inverse(a)
    scale = np.linalg.norm(a) * np.linalg.norm(g)
    assert np.linalg.norm(a @ g @ a - a) <= 1e-9 * np.linalg.norm(a) * scale
    assert np.linalg.norm(g @ a @ g - g) <= 1e-9 * np.linalg.norm(g) * scale
    assert np.linalg.norm((a @ g).T - a @ g) <= 1e-9 * scale
    assert np.linalg.norm((g @ a).T - g @ a) <= 1e-9 * scale


# -- spectral radius ---------------------------------------------------------

def _bisect(f, lo, hi):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.sign(f(mid)) == np.sign(f(lo)):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_spectral_radius_examples():
    assert spectral_radius(np.eye(3)) == 1.0
    assert spectral_radius(np.diag([0.5, -0.9])) == pytest.approx(0.9)
    golden = _bisect(lambda z: z * z - z - 1, 1.0, 2.0)
    assert spectral_radius(np.array([[1.0, 1.0], [1.0, 0.0]])) == pytest.approx(golden, abs=1e-9)


# -- Schur complement utility ----------------------------------------------

def test_schur_trivial_cases():
    assert schur_equivalence_check([[-1.0]], [[0.0]], [[-1.0]]) == (True, True, True)
    assert schur_equivalence_check([[1.0]], [[0.0]], [[-1.0]]) == (False, False, False)


def test_schur_agreement_on_random_triples(rng):
    disagreements = 0
    for _ in range(1000):
        n, m = rng.integers(1, 4, size=2)
        q = -_sym(rng, n) - rng.uniform(-1, 4) * np.eye(n)
        p = -_sym(rng, m) - rng.uniform(-1, 4) * np.eye(m)
        r = rng.standard_normal((n, m)) * rng.uniform(0, 1.5)
        a, b, c = schur_equivalence_check(q, r, p)
        full = np.block([[q, r], [r.T, p]])
        oracle = np.linalg.eigvalsh(full)[-1] < -1e-10 * max(1, np.linalg.norm(full))
        disagreements += not (a == b == c == oracle)
    assert disagreements == 0


# -- Finsler preconditions --------------------------------------------------

def test_finsler_gram_passes(rng):
    bottom = rng.standard_normal((3, 8))
    h = np.vstack([rng.standard_normal((2, 3)) @ bottom, bottom])
    rep = finsler_preconditions(h @ h.T, 2, 3)
    assert rep.passed, rep.checks


def test_finsler_identity_fails_schur_check():
    rep = finsler_preconditions(np.eye(2), 1, 1)
    assert not rep.checks["schur_complement_zero"]
    assert rep.schur_residual == pytest.approx(1.0)
    assert rep.checks["n22_psd"] and rep.checks["kernel_inclusion"]


def test_finsler_kernel_check_detects_leak():
    n = np.array([[1.0, 1.0], [1.0, 0.0]])
    rep = finsler_preconditions(n, 1, 1)
    assert not rep.checks["kernel_inclusion"]


def test_finsler_dimension_mismatch():
    with pytest.raises(ValueError):
        finsler_preconditions(np.eye(3), 1, 1)


# -- block layout ----------------------------------------------------------

def test_block_layout_offsets_and_placement():
    lay = BlockLayout([2, 1, 3])
    np.testing.assert_array_equal(lay.offsets, [0, 2, 3, 6])
    out = lay.zeros()
    blk = np.arange(6.0).reshape(3, 2)
    lay.place(out, 2, 0, blk)
    np.testing.assert_array_equal(out[3:, :2], blk)
    np.testing.assert_array_equal(out[:2, 3:], blk.T)
    lay.place(out, 1, 1, 5.0)
    assert out[2, 2] == 5.0
    with pytest.raises(IndexError):
        lay.place(out, 3, 0, 1.0)
    with pytest.raises(ValueError):
        lay.place(out, 0, 0, np.ones((3, 3)))
