import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lpvfbs.errors import RankDeficient, SingularKKT
from lpvfbs.flops import FlopLedger, pinv_flops_closed_form, qr_flops_closed_form
from lpvfbs.solvers import (back_substitute, constrained_lsq_kkt, constrained_lsq_nullspace, lsq_pinv, lsq_qr,
                            lu_factor_pp, lu_solve_pp, mgs_qr)


def random_instance(rng, L, n):
    A = rng.normal(size=(L, n))
    return A, rng.normal(size=L)


def test_pinv_identity_and_mean():
    b = np.array([1.0, -2.0, 3.0])
    assert np.allclose(lsq_pinv(np.eye(3), b), b)
    assert np.allclose(lsq_pinv(np.array([[1.0], [1.0]]), np.array([0.0, 2.0])), [1.0])


def test_pinv_normal_equation_residual(rng):
    A, b = random_instance(rng, 200, 44)
    x = lsq_pinv(A, b)
    assert np.linalg.norm(A.T @ (A @ x - b)) < 1e-8 * np.linalg.norm(b)


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
@pytest.mark.parametrize("solver", [lsq_pinv, lsq_qr])
def test_rank_deficient(solver, rng):
    A = rng.normal(size=(30, 4))
    A[:, 3] = A[:, 1]
    with pytest.raises(RankDeficient):
        solver(A, rng.normal(size=30))


def test_qr_matches_pinv_and_lstsq():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(1, 61))
        L = int(rng.integers(n + 1, 401))
        A, b = random_instance(rng, L, n)
        xq = lsq_qr(A, b, block=int(rng.integers(1, 9)))
        xp = lsq_pinv(A, b)
        ref = np.linalg.lstsq(A, b, rcond=None)[0]
        assert np.linalg.norm(xq - xp) <= 1e-8 * np.linalg.norm(xp)
        assert np.linalg.norm(xq - ref) <= 1e-8 * np.linalg.norm(ref)


@pytest.mark.parametrize("block", [None, 1, 2, 7])
def test_mgs_factor_properties(block, rng):
    A = rng.normal(size=(120, 33))
    Q, R = mgs_qr(A, block=block)
    assert np.abs(Q.T @ Q - np.eye(33)).max() < 1e-10
    assert np.allclose(np.tril(R, -1), 0.0)
    assert np.abs(Q @ R - A).max() < 1e-12 * np.abs(A).max() * 33


def test_back_substitute(rng):
    R = np.triu(rng.normal(size=(8, 8))) + 5 * np.eye(8)
    y = rng.normal(size=8)
    assert np.allclose(R @ back_substitute(R, y), y)


def test_flops_default_window_size():
    rng = np.random.default_rng(0)
    L, n = 196, 44
    A, b = random_instance(rng, L, n)
    lp, lq = FlopLedger(), FlopLedger()
    lsq_pinv(A, b, lp)
    lsq_qr(A, b, lq)
    cp, cq = pinv_flops_closed_form(L, n), qr_flops_closed_form(L, n)
    assert 0.5 <= lp.total() / cp <= 2.0
    assert 0.5 <= lq.total() / cq <= 2.0
    assert lq.total() < lp.total() and cq < cp


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 40), extra=st.integers(0, 200))
def test_qr_ledger_below_pinv(n, extra):
    L = n + extra
    A = np.random.default_rng(n * 1000 + extra).normal(size=(L, n)) + np.eye(L, n) * 3
    lp, lq = FlopLedger(), FlopLedger()
    lsq_pinv(A, np.ones(L), lp)
    lsq_qr(A, np.ones(L), lq)
    assert lq.total() < lp.total()
    assert qr_flops_closed_form(L, n) < pinv_flops_closed_form(L, n)


def test_kkt_unconstrained_limit(rng):
    A, b = random_instance(rng, 50, 6)
    x, lam = constrained_lsq_kkt(A, b, np.zeros((0, 6)), np.zeros(0))
    assert lam.size == 0
    assert np.allclose(x, lsq_pinv(A, b))


def test_kkt_pinned_coordinate():
    x, _ = constrained_lsq_kkt(np.eye(5), np.zeros(5), np.eye(1, 5), np.array([5.0]))
    assert np.allclose(x, [5.0, 0, 0, 0, 0])


def test_kkt_random_feasible_vs_nullspace():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(3, 40))
        c = int(rng.integers(1, min(n, 5)))
        L = int(rng.integers(n, 300))
        A, b = random_instance(rng, L, n)
        C, d = rng.normal(size=(c, n)), rng.normal(size=c)
        x, lam = constrained_lsq_kkt(A, b, C, d)
        assert np.abs(C @ x - d).max() < 1e-10 * max(1.0, np.abs(C).max() * np.abs(x).max())
        grad = A.T @ A @ x + C.T @ lam - A.T @ b
        assert np.linalg.norm(grad) < 1e-8 * max(1.0, np.linalg.norm(A.T @ b))
        ref = constrained_lsq_nullspace(A, b, C, d)
        assert np.linalg.norm(x - ref) <= 1e-8 * max(1.0, np.linalg.norm(ref))
        free = np.linalg.lstsq(A, b, rcond=None)[0]
        assert np.sum((A @ x - b) ** 2) >= np.sum((A @ free - b) ** 2) - 1e-9


def test_kkt_singular(rng):
    A = rng.normal(size=(20, 4))
    C = np.array([[1.0, 0, 0, 0], [2.0, 0, 0, 0]])
    with pytest.raises(SingularKKT):
        constrained_lsq_kkt(A, rng.normal(size=20), C, np.array([1.0, 2.0]))


def test_kkt_ridge_shrinks_free_directions():
    # a column the objective cannot see stays at zero with the ridge on
    A = np.zeros((6, 3))
    A[:, 0] = 1.0
    C = np.array([[1.0, 1.0, 0.0]])
    x, _ = constrained_lsq_kkt(A, np.zeros(6), C, np.array([1.0]), ridge=1e-10)
    assert abs(x[2]) < 1e-12 and abs(x.sum() - 1.0) < 1e-12


@pytest.mark.parametrize("block", [1, 4, 32])
def test_lu_partial_pivoting(block, rng):
    K = rng.normal(size=(45, 45))
    LU, perm = lu_factor_pp(K, block=block)
    Lm = np.tril(LU, -1) + np.eye(45)
    U = np.triu(LU)
    assert np.allclose(Lm @ U, K[perm], atol=1e-11)
    assert np.all(np.abs(np.tril(LU, -1)) <= 1.0 + 1e-12)
    rhs = rng.normal(size=45)
    assert np.allclose(K @ lu_solve_pp(LU, perm, rhs), rhs, atol=1e-9)


def test_ledger_merge_and_dict():
    a, b = FlopLedger(), FlopLedger()
    a.add("x", 10)
    b.add("x", 5, calls=2)
    b.add("y", 1)
    a.merge(b)
    assert a.total() == 16 and a.total("x") == 15
    assert a.as_dict()["x"] == {"flops": 15, "calls": 3}


def staircase(rng, L=150, n=30):
    starts = np.sort(rng.integers(0, L - 40, n))
    A = rng.normal(size=(L, n))
    A[np.arange(L)[:, None] < starts[None, :]] = 0.0
    return A, starts


def test_staircase_qr_matches_dense(rng):
    for _ in range(20):
        A, starts = staircase(rng)
        b = rng.normal(size=len(A))
        ref = np.linalg.lstsq(A, b, rcond=None)[0]
        dense, sparse = FlopLedger(), FlopLedger()
        assert np.allclose(lsq_qr(A, b, dense, block=4), ref, rtol=1e-10, atol=1e-12)
        x = lsq_qr(A, b, sparse, block=4, starts=starts)
        assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)
        assert sparse.total("qr_mgs") < dense.total("qr_mgs")


def test_staircase_factor_keeps_pattern(rng):
    A, starts = staircase(rng)
    Ar, sr = A[:, ::-1], starts[::-1]
    Q, R = mgs_qr(Ar, starts=sr, block=3)
    assert np.abs(Q.T @ Q - np.eye(A.shape[1])).max() < 1e-10
    assert np.allclose(Q @ R, Ar, atol=1e-12)
    for j, s in enumerate(sr):
        assert np.all(Q[:s, j] == 0.0)


def test_staircase_rejects_bad_starts(rng):
    A, starts = staircase(rng)
    with pytest.raises(ValueError):
        lsq_qr(A, np.ones(len(A)), starts=starts[::-1] if starts[0] != starts[-1] else starts[:-1])


def test_compiled_kernels_match_numpy(rng):
    solvers = pytest.importorskip("lpvfbs.solvers")
    if solvers._jit is None:
        pytest.skip("numba not available")
    A = np.asfortranarray(rng.normal(size=(80, 12)))
    starts = np.zeros(12, dtype=np.int64)
    out = []
    for fn in (solvers._mgs_columns_py, solvers._jit["mgs"]):
        Q, R = A.copy(order="F"), np.zeros((12, 12))
        assert fn(Q, R, 0, 12, starts, 0.0) == -1
        out.append((Q, R))
    assert np.allclose(out[0][0], out[1][0], atol=1e-13) and np.allclose(out[0][1], out[1][1], atol=1e-12)
    R = np.triu(rng.normal(size=(9, 9))) + 4 * np.eye(9)
    y1, y2 = rng.normal(size=9), None
    y2 = y1.copy()
    solvers._back_substitute_py(R, y1)
    solvers._jit["backsub"](R, y2)
    assert np.allclose(y1, y2, atol=1e-13)
    K = rng.normal(size=(10, 10))
    res = []
    for fn in (solvers._lu_panel_py, solvers._jit["lu_panel"]):
        LU, perm = K.copy(), np.arange(10)
        assert fn(LU, perm, 0, 10, 0.0) == -1
        res.append((LU, perm))
    assert np.array_equal(res[0][1], res[1][1]) and np.allclose(res[0][0], res[1][0], atol=1e-12)
