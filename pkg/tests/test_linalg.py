import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pcgaug import linalg as la
from pcgaug.errors import NotSymmetric, RankDeficient, SingularTriangular


def test_qr_full_identity_columns():
    A = np.eye(3)[:, :2]
    qr = la.qr_full(A)
    assert np.allclose(np.abs(qr.qr_basis), A)
    assert np.allclose(np.abs(qr.r_factor), np.eye(2))
    assert np.allclose(np.abs(qr.null_basis[:, 0]), [0, 0, 1])


def test_qr_full_reconstruction():
    A = la.seeded_gaussian(6, 2, seed=3)
    qr = la.qr_full(A)
    assert np.abs(qr.q.T @ qr.q - np.eye(6)).max() <= 1e-12
    assert np.linalg.norm(qr.qr_basis @ qr.r_factor - A) <= 1e-12 * np.linalg.norm(A)
    assert np.abs(qr.null_basis.T @ A).max() <= 1e-12 * np.abs(A).max()


def test_qr_full_ones_column():
    qr = la.qr_full(np.ones((4, 1)))
    assert abs(abs(qr.r_factor[0, 0]) - 2.0) <= 1e-14
    assert np.allclose(np.abs(qr.qr_basis[:, 0]), 0.5)


def test_qr_full_rejects_wide():
    with pytest.raises(ValueError):
        la.qr_full(np.ones((2, 3)))


def test_qr_thin_norms_of_scaled_identity():
    A = np.vstack([np.diag([2.0, 3.0]), np.zeros((2, 2))])
    q, r = la.qr_thin(A)
    assert np.allclose(np.abs(np.diag(r)), [2.0, 3.0])
    assert np.allclose(q @ r, A)


def test_qr_thin_stacked_update_identity():
    rng = la.make_rng(5)
    R0 = np.triu(rng.standard_normal((4, 4))) + 3 * np.eye(4)
    C = np.eye(4)[[0, 2]]
    _, r = la.qr_thin(np.vstack([R0, C]))
    assert np.abs(r.T @ r - (R0.T @ R0 + C.T @ C)).max() <= 1e-12 * np.abs(R0.T @ R0).max()


def test_qr_thin_repeated_column():
    A = la.seeded_gaussian(5, 2, seed=1)
    with pytest.raises(RankDeficient):
        la.qr_thin(np.column_stack([A, A[:, 0]]))


def test_tri_solve_identity_and_hand_case():
    B = la.seeded_gaussian(3, 2, seed=2)
    assert np.array_equal(la.tri_solve(np.eye(3), B), B)
    x = la.tri_solve(np.array([[2.0, 1.0], [0.0, 3.0]]), np.array([5.0, 6.0]))
    assert np.allclose(x, [1.5, 2.0], atol=1e-15)


def test_tri_solve_singular():
    with pytest.raises(SingularTriangular):
        la.tri_solve(np.array([[1.0, 2.0], [0.0, 0.0]]), np.ones(2))


@pytest.mark.parametrize("side", ["left", "right"])
@pytest.mark.parametrize("transpose", [False, True])
def test_tri_solve_multiply_back(side, transpose):
    rng = la.make_rng(11)
    U, _ = np.linalg.qr(rng.standard_normal((6, 6)))
    R = np.diag(np.logspace(0, -5, 6)) @ np.triu(np.eye(6) + 0.1 * np.triu(rng.standard_normal((6, 6)), 1))
    assert np.linalg.cond(R) <= 1e6
    B = rng.standard_normal((6, 3)) if side == "left" else rng.standard_normal((3, 6))
    X = la.tri_solve(R, B, side=side, transpose=transpose)
    opR = R.T if transpose else R
    back = opR @ X if side == "left" else X @ opR
    assert np.linalg.norm(back - B) <= 1e-12 * np.linalg.norm(B)


def test_tri_solve_bad_side():
    with pytest.raises(ValueError):
        la.tri_solve(np.eye(2), np.ones(2), side="up")


def test_sym_eig_cases():
    assert np.allclose(la.sym_eig(np.diag([3.0, 1.0, 2.0])).eigenvalues, [1, 2, 3])
    assert np.array_equal(la.sym_eig(np.zeros((3, 3))).eigenvalues, np.zeros(3))
    Q = la.random_orthogonal(4, la.make_rng(8))
    S = (Q * [0.5, 1.0, 1.5, 2.0]) @ Q.T
    assert np.abs(la.sym_eig(0.5 * (S + S.T)).eigenvalues - [0.5, 1.0, 1.5, 2.0]).max() <= 1e-10


def test_sym_eig_rejects_asymmetric():
    with pytest.raises(NotSymmetric):
        la.sym_eig(np.array([[1.0, 2.0], [0.0, 1.0]]))


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_sym_eig_2x2_matches_characteristic_roots(vals):
    a, b, c = vals
    S = np.array([[a, b], [b, c]])
    tr, det = a + c, a * c - b * b
    disc = np.sqrt(max(tr * tr / 4 - det, 0.0))
    roots = np.array([tr / 2 - disc, tr / 2 + disc])
    assert np.allclose(la.sym_eig(S).eigenvalues, roots, atol=1e-9 * (1 + abs(tr) + disc))


def test_sym_eig_3x3_hand_case():
    # eigenvalues of the second-difference matrix: 2 - sqrt(2), 2, 2 + sqrt(2)
    S = np.array([[2.0, -1, 0], [-1, 2, -1], [0, -1, 2]])
    expect = [2 - np.sqrt(2), 2, 2 + np.sqrt(2)]
    assert np.allclose(la.sym_eig(S).eigenvalues, expect, atol=1e-14)


def test_seeded_gaussian_contract():
    assert np.array_equal(la.seeded_gaussian(3, 2, mean=1.5, stddev=0.0, seed=1), np.full((3, 2), 1.5))
    a = la.seeded_gaussian(4, 4, seed=9)
    assert np.array_equal(a, la.seeded_gaussian(4, 4, seed=9))
    big = la.seeded_gaussian(100_000, 1, seed=4)
    assert abs(big.mean()) <= 4 / np.sqrt(1e5)
    with pytest.raises(ValueError):
        la.seeded_gaussian(2, 2, stddev=-1.0)


def test_make_rng_substreams_differ():
    a = la.make_rng(1, 2).standard_normal(5)
    b = la.make_rng(1, 3).standard_normal(5)
    assert not np.allclose(a, b)
    assert np.array_equal(a, la.make_rng(1, 2).standard_normal(5))


def test_vec_unvec_layout():
    U = np.arange(6.0).reshape(3, 2)
    v = la.vec(U)
    assert np.array_equal(v, [0, 2, 4, 1, 3, 5])
    assert np.array_equal(la.unvec(v, 3), U)


def test_cholesky_rejects_indefinite():
    from pcgaug.errors import SingularCovariance

    with pytest.raises(SingularCovariance):
        la.cholesky(np.diag([1.0, -1.0]))


def test_matrix_csv_roundtrip(tmp_path):
    A = la.seeded_gaussian(4, 3, seed=6)
    la.write_matrix_csv(tmp_path / "a.csv", A)
    assert np.array_equal(la.read_matrix_csv(tmp_path / "a.csv"), A)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 10_000))
def test_qr_full_properties(m, n, seed):
    n = min(n, m)
    A = la.seeded_gaussian(m, n, seed=seed)
    qr = la.qr_full(A)
    assert np.abs(qr.q.T @ qr.q - np.eye(m)).max() <= 1e-12
    if m > n:
        assert np.abs(qr.null_basis.T @ A).max() <= 1e-12 * max(np.abs(A).max(), 1.0)
