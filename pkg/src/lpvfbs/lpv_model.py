"""Continuous-time LPV carriage model of the delta printer.

The carriage outputs obey::

    q = G_qd q_d + G_Fq F,     F = M(X) W(s) J(X) q

where ``M`` stacks the rows ``J_i^T P_i``. Solving for ``q`` gives
``G(s) = G_J^{-1}(s) G_qd(s)`` with ``G_J = I - G_Fq M W J``.

Writing ``beta_k = G_Fq * w_k`` (k = x, y, z), the coupling term is the sum of
three rank-one matrices ``beta_k m_k j_k^T``. Determinant and adjugate of
``G_J`` are therefore multilinear in ``(beta_x, beta_y, beta_z)``: after
clearing denominators every numerator and the shared denominator is a
combination of eight fixed s-polynomials ``Pi_S`` (one per subset ``S`` of
axes) weighted by scalar functions of the configuration. The polynomials are
built once; evaluating at a configuration only computes the eight weights.
"""

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from numpy.polynomial import polynomial as P

from .errors import SingularAtDC
from .flops import FlopLedger
from .kinematics import jacobian_array


@dataclass(frozen=True)
class RationalTF:
    """SISO transfer function, coefficients in ascending powers of ``s``."""

    num: np.ndarray
    den: np.ndarray
    check_stable: bool = field(default=True, compare=False)

    def __post_init__(self):
        num = np.trim_zeros(np.atleast_1d(np.asarray(self.num, dtype=float)), "b")
        den = np.trim_zeros(np.atleast_1d(np.asarray(self.den, dtype=float)), "b")
        if den.size == 0:
            raise ValueError("denominator must be nonzero")
        if num.size == 0:
            num = np.zeros(1)
        if num.size > den.size:
            raise ValueError("transfer function must be proper")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)
        if self.check_stable and not self.is_stable():
            raise ValueError(f"unstable transfer function, poles {self.poles()}")

    @property
    def order(self):
        return self.den.size - 1

    def poles(self):
        return P.polyroots(self.den) if self.order else np.array([])

    def is_stable(self):
        return bool(np.all(self.poles().real < 0))

    def __call__(self, s):
        return P.polyval(s, self.num) / P.polyval(s, self.den)

    def dc_gain(self):
        return self.num[0] / self.den[0]

    def __mul__(self, other):
        return RationalTF(P.polymul(self.num, other.num), P.polymul(self.den, other.den),
                          check_stable=self.check_stable and other.check_stable)


def second_order(wn, zeta, gain=1.0, zeros=()):
    """``gain * wn^2 * prod(s - z) / (s^2 + 2 zeta wn s + wn^2)``, unity DC when ``zeros`` empty."""
    num = np.array([gain * wn**2])
    for z in zeros:
        num = P.polymul(num, [-z, 1.0])
    return RationalTF(num, [wn**2, 2.0 * zeta * wn, 1.0])


def inertial_flex(mass, wn, zeta):
    """``-mass * s^2 * h(s)`` with ``h`` a unity-DC second-order flexibility.

    Reaction force (N) on the carriages per mm of effector motion; ``mass``
    in kg. The sign makes the force oppose the acceleration.
    """
    return RationalTF([0.0, 0.0, -1e-3 * mass * wn**2], [wn**2, 2.0 * zeta * wn, 1.0])


@dataclass(frozen=True)
class InertialDistribution:
    """Per-carriage 3x3 distribution of task-space inertial force."""

    P_A: np.ndarray = field(default_factory=lambda: np.eye(3) / 3.0)
    P_B: np.ndarray = field(default_factory=lambda: np.eye(3) / 3.0)
    P_C: np.ndarray = field(default_factory=lambda: np.eye(3) / 3.0)

    def __post_init__(self):
        for name in ("P_A", "P_B", "P_C"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (3, 3) or not np.all(np.isfinite(m)):
                raise ValueError(f"{name} must be a finite 3x3 matrix")
            object.__setattr__(self, name, m)

    def stacked(self):
        return np.stack([self.P_A, self.P_B, self.P_C])


@dataclass(frozen=True)
class ModelBlocks:
    """LTI building blocks of the carriage model."""

    g_qd: RationalTF
    g_fq: RationalTF
    w: tuple  # (w_x, w_y, w_z)
    p: InertialDistribution = field(default_factory=InertialDistribution)

    def without_coupling(self):
        """Same blocks with a rigid (zero) effector inertia: W = 0."""
        zero = RationalTF([0.0], [1.0])
        return ModelBlocks(self.g_qd, self.g_fq, (zero, zero, zero), self.p)


TWO_PI = 2.0 * np.pi


def default_blocks(compliance=0.012, zeta=0.3):
    """Synthetic printer model.

    Carriage resonance at 40 Hz, 0.3 kg effector with 35 Hz horizontal and
    50 Hz vertical flexibility, all with damping ratio ``zeta``.
    ``compliance`` (mm/N) is the static gain of the force-to-carriage path.
    """
    wq = TWO_PI * 40.0
    return ModelBlocks(
        g_qd=second_order(wq, zeta),
        g_fq=second_order(wq, zeta, gain=compliance),
        w=(
            inertial_flex(0.3, TWO_PI * 35.0, zeta),
            inertial_flex(0.3, TWO_PI * 35.0, zeta),
            inertial_flex(0.3, TWO_PI * 50.0, zeta),
        ),
    )


def coupling_matrix(J, Pd):
    """Rows ``J_i^T P_i`` for stacked Jacobians ``J`` (..., 3, 3)."""
    # M[..., i, :] = J[..., :, i] @ P_i
    return np.einsum("...ki,ikl->...il", J, Pd)


def gj_numeric(blocks, J, s):
    """Complex ``G_J(s)`` for one Jacobian at frequencies ``s``; shape (len(s), 3, 3)."""
    s = np.atleast_1d(s)
    M = coupling_matrix(J, blocks.p.stacked())
    gf = blocks.g_fq(s)
    W = np.stack([w(s) for w in blocks.w], axis=-1)
    H = gf[:, None, None] * np.einsum("ik,fk,kj->fij", M, W, J)
    return np.eye(3) - H


def _subsets():
    out = []
    for r in range(4):
        out.extend(combinations(range(3), r))
    return out


SUBSETS = _subsets()


def _mobius_matrix():
    """Inverse of the zeta transform on subsets of {0, 1, 2}."""
    n = len(SUBSETS)
    mu = np.zeros((n, n))
    for i, S in enumerate(SUBSETS):
        for j, T in enumerate(SUBSETS):
            if set(T) <= set(S):
                mu[i, j] = (-1) ** (len(S) - len(T))
    return mu


def det3(A):
    return (
        A[..., 0, 0] * (A[..., 1, 1] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 1])
        - A[..., 0, 1] * (A[..., 1, 0] * A[..., 2, 2] - A[..., 1, 2] * A[..., 2, 0])
        + A[..., 0, 2] * (A[..., 1, 0] * A[..., 2, 1] - A[..., 1, 1] * A[..., 2, 0])
    )


def adj3(A):
    """Adjugate of stacked 3x3 matrices (transpose of the cofactor matrix)."""
    C = np.empty_like(A)
    for i in range(3):
        i1, i2 = [r for r in range(3) if r != i]
        for j in range(3):
            j1, j2 = [c for c in range(3) if c != j]
            minor = A[..., i1, j1] * A[..., i2, j2] - A[..., i1, j2] * A[..., i2, j1]
            C[..., j, i] = (-1) ** (i + j) * minor
    return C


@dataclass(frozen=True)
class GJInverse:
    """Rational ``G_J^{-1}`` at one or more configurations.

    ``a`` has shape (..., u+1); ``b`` has shape (..., 3, 3, u+1). Entry
    ``(i, j)`` is ``b[..., i, j, :] / a``; all nine share ``a``.
    """

    a: np.ndarray
    b: np.ndarray

    def entry(self, i, j):
        return RationalTF(self.b[..., i, j, :], self.a, check_stable=False)

    def __call__(self, s):
        s = np.atleast_1d(s)
        av = P.polyval(s, np.moveaxis(self.a, -1, 0))
        bv = P.polyval(s, np.moveaxis(self.b, -1, 0))
        return np.moveaxis(bv / av[..., None, None, :], -1, 0)

    def __getitem__(self, idx):
        return GJInverse(self.a[idx], self.b[idx])


def _basis_polynomials(blocks):
    """``Pi_S = prod_{k in S} nf*nw_k * prod_{k not in S} df*dw_k``."""
    nf, df = blocks.g_fq.num, blocks.g_fq.den
    pis = []
    for S in SUBSETS:
        poly = np.ones(1)
        for k in range(3):
            if k in S:
                poly = P.polymul(poly, P.polymul(nf, blocks.w[k].num))
            else:
                poly = P.polymul(poly, P.polymul(df, blocks.w[k].den))
        pis.append(poly)
    width = max(len(p) for p in pis)
    return np.array([np.pad(p, (0, width - len(p))) for p in pis])


@dataclass(frozen=True)
class ParameterizedGJ:
    """Offline parameterization of ``G_J^{-1}`` over the configuration space.

    ``basis`` rows are the eight s-polynomials ``Pi_S``. At run time
    :meth:`coefficients` turns a configuration into the weights multiplying
    them, for the shared denominator and for each of the nine numerators.
    """

    geometry: object
    blocks: ModelBlocks
    basis: np.ndarray
    mobius: np.ndarray

    @property
    def order(self):
        return self.basis.shape[1] - 1

    @property
    def eval_flops(self):
        """Flop count of one :meth:`evaluate` call; depends only on the model order."""
        n_terms, width = self.basis.shape
        jac = 45 + 2 * 27  # 3x3 solve and J^T P rows
        corners = n_terms * (54 + 9 + 54 + 14)  # scaled product, identity, adjugate, det
        mobius = 10 * n_terms * n_terms * 2
        combine = 10 * n_terms * width * 2
        return jac + corners + mobius + combine

    def weights(self, X, q, J=None):
        """Subset weights: ``alpha`` (..., 8) and ``gamma`` (..., 3, 3, 8)."""
        X = np.asarray(X, dtype=float)
        if J is None:
            J = jacobian_array(self.geometry, X, q)
        M = coupling_matrix(J, self.blocks.p.stacked())
        corner = np.array([[1.0 if k in S else 0.0 for k in range(3)] for S in SUBSETS])
        # G_J with beta fixed at a 0/1 corner: I - M diag(c) J
        G = np.eye(3) - np.einsum("...ik,ck,...kj->...cij", M, corner, J)
        f_det = det3(G)
        f_adj = adj3(G)
        alpha = f_det @ self.mobius.T
        gamma = np.einsum("...cij,sc->...ijs", f_adj, self.mobius)
        return alpha, gamma

    def coefficients(self, X, q, J=None):
        alpha, gamma = self.weights(X, q, J)
        return alpha @ self.basis, gamma @ self.basis

    def evaluate(self, X, q, J=None, ledger=None):
        """``G_J^{-1}`` at configuration(s); vectorized over leading dims."""
        a, b = self.coefficients(X, q, J)
        if ledger is not None:
            count = int(np.prod(np.shape(X)[:-1], dtype=int))
            ledger.add("gj_eval", self.eval_flops * count, calls=count)
        return GJInverse(a, b)

    def evaluate_config(self, c):
        return self.evaluate(c.X, c.q)


def parameterize_gj(blocks, geometry):
    """Build the offline parameterization of ``G_J^{-1}`` for ``blocks``."""
    return ParameterizedGJ(geometry, blocks, _basis_polynomials(blocks), _mobius_matrix())


def _freq_scale(den):
    den = np.trim_zeros(np.asarray(den, dtype=float), "b")
    n = den.size - 1
    if n == 0 or den[0] == 0:
        return 1.0
    return float(abs(den[0] / den[-1]) ** (1.0 / n))


def matrix_form_gj(blocks, J, n_nodes=None, ledger=None):
    """``G_J^{-1}`` at one Jacobian by numeric matrix inversion in the frequency domain.

    Uses the denominator-free form ``E(s) = diag(d_k) - K diag(n_k)`` with
    ``K = J M``: ``a = det E`` and ``a G_J^{-1} = a I + M diag(n) adj(E) J``.
    Both are polynomials, sampled on a circle and recovered by FFT.
    """
    M = coupling_matrix(J, blocks.p.stacked())
    K = J @ M
    nk = [P.polymul(blocks.g_fq.num, w.num) for w in blocks.w]
    dk = [P.polymul(blocks.g_fq.den, w.den) for w in blocks.w]
    deg = sum(max(len(n), len(d)) - 1 for n, d in zip(nk, dk))
    if n_nodes is None:
        n_nodes = 1 << int(np.ceil(np.log2(deg + 1)))
    w0 = _freq_scale(blocks.g_fq.den)
    s = w0 * np.exp(2j * np.pi * (np.arange(n_nodes) + 0.5) / n_nodes)
    nv = np.stack([P.polyval(s, n) for n in nk], axis=-1)
    dv = np.stack([P.polyval(s, d) for d in dk], axis=-1)
    E = dv[:, :, None] * np.eye(3) - K[None] * nv[:, None, :]
    a_val = np.linalg.det(E)
    adjE = adj3(E)
    b_val = a_val[:, None, None] * np.eye(3) + np.einsum("ik,fk,fkl,lj->fij", M, nv, adjE, J)
    # values at w0*exp(i*th_p) with th_p offset by half a node -> coefficients
    k = np.arange(n_nodes)
    shift = np.exp(-1j * np.pi * k / n_nodes)
    scale = w0 ** -k.astype(float)
    a = (np.fft.fft(a_val) / n_nodes * shift * scale).real[: deg + 1]
    b = (np.fft.fft(b_val, axis=0) / n_nodes * (shift * scale)[:, None, None]).real[: deg + 1]
    if ledger is not None:
        ledger.add("gj_matrix_form", n_nodes * (27 * 4 + 40 + 120) + 10 * n_nodes * int(np.log2(n_nodes)) * 5)
    if np.allclose(a, 0.0):
        raise SingularAtDC("determinant of the coupled model is identically zero")
    return GJInverse(a, np.moveaxis(b, 0, -1))


def assemble_full_model(blocks, J_bar):
    """Nine entries of ``G(s) = G_J^{-1}(s) G_qd(s)`` at a Jacobian."""
    J = J_bar.J_bar if hasattr(J_bar, "J_bar") else np.asarray(J_bar, dtype=float)
    gj = matrix_form_gj(blocks, J)
    gq = blocks.g_qd
    return [[RationalTF(P.polymul(gj.b[i, j], gq.num), P.polymul(gj.a, gq.den), check_stable=False)
             for j in range(3)] for i in range(3)]


@dataclass(frozen=True)
class ValidationReport:
    max_rel_error: float
    worst_position: np.ndarray
    eval_flops: int
    eval_seconds: float
    exact_identity: bool
    n_positions: int
    n_freqs: int


def validate_parameterization(pgj, positions, freqs_hz=None):
    """Compare ``pgj`` against numeric inversion of ``G_J`` at ``positions``.

    The error at a position is the largest Frobenius-norm relative error
    over the test frequencies. ``exact_identity`` is set when the model has
    no coupling and every numerator equals the shared denominator (diagonal)
    or zero (off-diagonal) bit for bit.
    """
    import time

    from .kinematics import inverse_kinematics

    if freqs_hz is None:
        freqs_hz = np.geomspace(0.5, 500.0, 25)
    s = 1j * TWO_PI * np.asarray(freqs_hz, dtype=float)
    X = np.atleast_2d(np.asarray(positions, dtype=float))
    q = inverse_kinematics(pgj.geometry, X)
    J = jacobian_array(pgj.geometry, X, q)
    t0 = time.perf_counter()
    gj = pgj.evaluate(X, q, J)
    per_eval = (time.perf_counter() - t0) / len(X)
    G = gj(s)  # (F, N, 3, 3)
    worst, where = 0.0, 0
    for k in range(len(X)):
        ref = np.linalg.inv(gj_numeric(pgj.blocks, J[k], s))
        err = np.linalg.norm(G[:, k] - ref, axis=(1, 2)) / np.linalg.norm(ref, axis=(1, 2))
        e = float(np.max(err)) if np.all(np.isfinite(err)) else np.inf
        if not e <= worst:
            worst, where = e, k
    uncoupled = all(not np.any(w.num) for w in pgj.blocks.w)
    # identity means b_ij = delta_ij * a exactly, before any frequency evaluation
    exact = uncoupled and bool(np.all(gj.b == np.eye(3)[:, :, None] * gj.a[..., None, None, :]))
    return ValidationReport(worst, X[where], pgj.eval_flops, per_eval, exact, len(X), len(s))
