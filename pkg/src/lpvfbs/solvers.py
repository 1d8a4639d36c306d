"""Least-squares kernels with flop accounting.

* ``lsq_pinv``: normal-equation pseudoinverse.
* ``lsq_qr``: modified Gram-Schmidt QR followed by back substitution.
* ``constrained_lsq_kkt``: equality-constrained least squares through the
  KKT system, factored by LU with partial pivoting.

Flops count one multiply-add as 2.
"""

import numpy as np
import scipy.linalg

from .errors import RankDeficient, SingularKKT
from .flops import FlopLedger

RANK_TOL = 1e-12


def _ledger(ledger):
    return FlopLedger() if ledger is None else ledger


def pinv_matrix(A, ledger=None):
    """``(A^T A)^{-1} A^T``; raises RankDeficient on a tiny Gram pivot."""
    ledger = _ledger(ledger)
    A = np.asarray(A, dtype=float)
    L, n = A.shape
    G = A.T @ A
    ledger.add("pinv_gram", 2 * L * n * n)
    lu, piv = scipy.linalg.lu_factor(G, check_finite=False)
    d = np.abs(np.diag(lu))
    if d.min() <= RANK_TOL * d.max():
        raise RankDeficient("Gram matrix is numerically singular")
    Ginv = scipy.linalg.lu_solve((lu, piv), np.eye(n), check_finite=False)
    ledger.add("pinv_inverse", 2 * n**3)
    P = Ginv @ A.T
    ledger.add("pinv_product", 2 * L * n * n)
    return P


def lsq_pinv(A, b, ledger=None):
    """``x = (A^T A)^{-1} A^T b`` via the normal equations."""
    ledger = _ledger(ledger)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    L, n = A.shape
    if b.shape[0] != L:
        raise ValueError("row count of A and b differ")
    G = A.T @ A
    ledger.add("pinv_gram", 2 * L * n * n)
    lu, piv = scipy.linalg.lu_factor(G, check_finite=False)
    d = np.abs(np.diag(lu))
    if n and d.min() <= RANK_TOL * d.max():
        raise RankDeficient("Gram matrix is numerically singular")
    Ginv = scipy.linalg.lu_solve((lu, piv), np.eye(n), check_finite=False)
    ledger.add("pinv_inverse", 2 * n**3)
    k = 1 if b.ndim == 1 else b.shape[1]
    Atb = A.T @ b
    ledger.add("pinv_rhs", 2 * L * n * k)
    x = Ginv @ Atb
    ledger.add("pinv_apply", 2 * n * n * k)
    return x


def _mgs_columns_py(Q, R, lo, hi, starts, thresh):
    for k in range(lo, hi):
        s = starts[k]
        qk = Q[s:, k]
        rkk = np.sqrt(qk @ qk)
        if rkk <= thresh:
            return k
        R[k, k] = rkk
        qk /= rkk
        if k + 1 < hi:
            r = qk @ Q[s:, k + 1:hi]
            R[k, k + 1:hi] = r
            Q[s:, k + 1:hi] -= np.outer(qk, r)
    return -1


def _mgs_columns_loops(Q, R, lo, hi, starts, thresh):
    L = Q.shape[0]
    for k in range(lo, hi):
        s = starts[k]
        acc = 0.0
        for r in range(s, L):
            acc += Q[r, k] * Q[r, k]
        rkk = np.sqrt(acc)
        if rkk <= thresh:
            return k
        R[k, k] = rkk
        inv = 1.0 / rkk
        for r in range(s, L):
            Q[r, k] *= inv
        for j in range(k + 1, hi):
            d = 0.0
            for r in range(s, L):
                d += Q[r, k] * Q[r, j]
            R[k, j] = d
            for r in range(s, L):
                Q[r, j] -= d * Q[r, k]
    return -1


def _mgs_columns(Q, R, lo, hi, starts, thresh):
    fn = _jit["mgs"] if _jit is not None and Q.flags.f_contiguous else _mgs_columns_py
    k = fn(Q, R, lo, hi, starts, thresh)
    if k >= 0:
        raise RankDeficient(f"column {k} is numerically dependent")


def _mgs_recursive(Q, R, lo, hi, leaf, starts, thresh):
    if hi - lo <= leaf:
        _mgs_columns(Q, R, lo, hi, starts, thresh)
        return
    mid = (lo + hi) // 2
    _mgs_recursive(Q, R, lo, mid, leaf, starts, thresh)
    s = starts[mid - 1]  # widest support in the left half
    Rp = Q[s:, lo:mid].T @ Q[s:, mid:hi]
    R[lo:mid, mid:hi] = Rp
    Q[s:, mid:hi] -= Q[s:, lo:mid] @ Rp
    _mgs_recursive(Q, R, mid, hi, leaf, starts, thresh)


def mgs_flops(L, starts):
    """Modified Gram-Schmidt flops when column ``k`` lives on rows ``starts[k]..L-1``."""
    n = len(starts)
    rows = L - np.asarray(starts, dtype=np.int64)
    return int(np.sum(2 * rows * (1 + 2 * (n - 1 - np.arange(n)))))


def mgs_qr(A, ledger=None, block=None, starts=None, copy=True):
    """Thin QR by modified Gram-Schmidt.

    With ``block`` set, the column range is split recursively down to
    leaves of at most ``block`` columns; the left half is projected out of
    the right half in one matrix product. The arithmetic count is unchanged.

    ``starts`` (non-increasing) declares that column ``k`` is zero above row
    ``starts[k]``. Every ``Q`` column then keeps the support of its own
    column, and all products skip the zero rows.
    """
    ledger = _ledger(ledger)
    Q = np.array(A, dtype=float, order="F", copy=copy)
    L, n = Q.shape
    if starts is None:
        starts = np.zeros(n, dtype=np.int64)
    else:
        starts = np.asarray(starts, dtype=np.int64)
        if starts.shape != (n,) or np.any(np.diff(starts) > 0) or (n and (starts[0] >= L or starts[-1] < 0)):
            raise ValueError("starts must be non-increasing row offsets, one per column")
    R = np.zeros((n, n))
    scale = np.max(np.linalg.norm(Q, axis=0)) if n else 0.0
    thresh = RANK_TOL * scale
    if block is None or block >= n:
        _mgs_columns(Q, R, 0, n, starts, thresh)
    else:
        _mgs_recursive(Q, R, 0, n, max(1, int(block)), starts, thresh)
    ledger.add("qr_mgs", mgs_flops(L, starts))
    return Q, R


def _back_substitute_py(R, x):
    n = R.shape[0]
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            x[i] -= R[i, i + 1:] @ x[i + 1:]
        x[i] /= R[i, i]


def _back_substitute_loops(R, x):
    n = R.shape[0]
    for i in range(n - 1, -1, -1):
        acc = x[i]
        for j in range(i + 1, n):
            acc -= R[i, j] * x[j]
        x[i] = acc / R[i, i]


def back_substitute(R, y, ledger=None):
    """Solve ``R x = y`` for upper-triangular ``R``."""
    ledger = _ledger(ledger)
    x = np.array(y, dtype=float, copy=True)
    if x.ndim == 1 and _jit is not None:
        _jit["backsub"](np.ascontiguousarray(R, dtype=float), x)
    else:
        _back_substitute_py(R, x)
    n = R.shape[0]
    k = 1 if x.ndim == 1 else x.shape[1]
    ledger.add("qr_backsub", n * n * k)
    return x


def lsq_qr(A, b, ledger=None, block=None, starts=None):
    """Least squares through ``A = QR``, ``R x = Q^T b``.

    ``starts`` (non-decreasing) marks a staircase: column ``k`` is zero above
    row ``starts[k]``. Entries there are treated as exact zeros, and the
    columns are factored last-to-first so the factorization keeps the pattern.
    """
    ledger = _ledger(ledger)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != A.shape[0]:
        raise ValueError("row count of A and b differ")
    L, n = A.shape
    k = 1 if b.ndim == 1 else b.shape[1]
    if starts is None:
        Q, R = mgs_qr(A, ledger, block)
        y = Q.T @ b
        ledger.add("qr_rhs", 2 * L * n * k)
        return back_substitute(R, y, ledger)
    starts = np.asarray(starts, dtype=np.int64)
    if starts.shape != (n,) or np.any(np.diff(starts) < 0):
        raise ValueError("starts must be non-decreasing row offsets, one per column")
    Ar = np.asfortranarray(A[:, ::-1])
    sr = starts[::-1].copy()
    for j, s0 in enumerate(sr):
        Ar[:s0, j] = 0.0
    Q, R = mgs_qr(Ar, ledger, block, sr, copy=False)
    y = Q.T @ b  # Q is exactly zero above each start
    ledger.add("qr_rhs", int(2 * np.sum(L - sr)) * k)
    return back_substitute(R, y, ledger)[::-1]


def _lu_panel_py(LU, perm, k0, k1, thresh):
    for k in range(k0, k1):
        p = k + int(np.argmax(np.abs(LU[k:, k])))
        if abs(LU[p, k]) <= thresh:
            return k
        if p != k:
            LU[[k, p]] = LU[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        LU[k + 1:, k] /= LU[k, k]
        LU[k + 1:, k + 1:k1] -= np.outer(LU[k + 1:, k], LU[k, k + 1:k1])
    return -1


def _lu_panel_loops(LU, perm, k0, k1, thresh):
    N, M = LU.shape
    for k in range(k0, k1):
        p = k
        best = abs(LU[k, k])
        for i in range(k + 1, N):
            if abs(LU[i, k]) > best:
                best = abs(LU[i, k])
                p = i
        if best <= thresh:
            return k
        if p != k:
            for j in range(M):
                t = LU[k, j]
                LU[k, j] = LU[p, j]
                LU[p, j] = t
            t2 = perm[k]
            perm[k] = perm[p]
            perm[p] = t2
        piv = LU[k, k]
        for i in range(k + 1, N):
            LU[i, k] /= piv
            f = LU[i, k]
            for j in range(k + 1, k1):
                LU[i, j] -= f * LU[k, j]
    return -1


try:
    import numba

    # small loops where interpreter overhead would dominate the arithmetic
    _jit = {name: numba.njit(cache=True)(fn) for name, fn in
            (("mgs", _mgs_columns_loops), ("backsub", _back_substitute_loops), ("lu_panel", _lu_panel_loops))}
except ImportError:  # pragma: no cover
    _jit = None


def lu_factor_pp(K, ledger=None, block=32):
    """LU with partial pivoting: returns (LU packed, permutation).

    Right-looking and blocked: each panel of ``block`` columns is factored
    column by column, then the trailing matrix gets one Schur update.
    """
    ledger = _ledger(ledger)
    LU = np.array(K, dtype=float, copy=True)
    N = LU.shape[0]
    perm = np.arange(N)
    scale = np.max(np.abs(LU)) if N else 0.0
    block = max(1, int(block))
    panel = _jit["lu_panel"] if _jit is not None else _lu_panel_py
    for k0 in range(0, N, block):
        k1 = min(N, k0 + block)
        bad = panel(LU, perm, k0, k1, RANK_TOL * scale)
        if bad >= 0:
            raise SingularKKT(f"zero pivot at step {bad}")
        if k1 < N:
            L11 = LU[k0:k1, k0:k1]
            LU[k0:k1, k1:] = scipy.linalg.solve_triangular(L11, LU[k0:k1, k1:], lower=True,
                                                           unit_diagonal=True, check_finite=False)
            LU[k1:, k1:] -= LU[k1:, k0:k1] @ LU[k0:k1, k1:]
    ledger.add("kkt_lu", (2 * N**3) // 3)
    return LU, perm


def lu_solve_pp(LU, perm, rhs, ledger=None):
    ledger = _ledger(ledger)
    N = LU.shape[0]
    y = np.array(rhs, dtype=float, copy=True)[perm]
    for i in range(1, N):
        y[i] -= LU[i, :i] @ y[:i]
    y = back_substitute(np.triu(LU), y)
    ledger.add("kkt_solve", 2 * N * N)
    return y


def constrained_lsq_kkt(A, b, C, d, ledger=None, ridge=0.0):
    """Minimize ``||A x - b||^2 + ridge ||x||^2`` subject to ``C x = d``; returns ``(x, lam)``."""
    ledger = _ledger(ledger)
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    L, n = A.shape
    C = np.asarray(C, dtype=float).reshape(-1, n)
    d = np.asarray(d, dtype=float).reshape(-1)
    c = C.shape[0]
    if d.shape[0] != c:
        raise ValueError("constraint rows and targets differ in length")
    K = np.zeros((n + c, n + c))
    K[:n, :n] = A.T @ A
    ledger.add("kkt_gram", 2 * L * n * n)
    if ridge:
        K[:n, :n] += ridge * np.eye(n)
    K[:n, n:] = C.T
    K[n:, :n] = C
    rhs = np.concatenate([A.T @ b, d])
    ledger.add("kkt_rhs", 2 * L * n)
    LU, perm = lu_factor_pp(K, ledger)
    sol = lu_solve_pp(LU, perm, rhs, ledger)
    return sol[:n], sol[n:]


def constrained_lsq_nullspace(A, b, C, d):
    """Reference solver: parameterize ``C x = d`` by its null space (numpy QR)."""
    A = np.asarray(A, dtype=float)
    n = A.shape[1]
    C = np.asarray(C, dtype=float).reshape(-1, n)
    c = C.shape[0]
    if c == 0:
        return np.linalg.lstsq(A, b, rcond=None)[0]
    Qc, Rc = np.linalg.qr(C.T, mode="complete")
    Y, Z = Qc[:, :c], Qc[:, c:]
    xp = Y @ np.linalg.solve(Rc[:c].T, d)
    y = np.linalg.lstsq(A @ Z, b - A @ xp, rcond=None)[0]
    return xp + Z @ y
