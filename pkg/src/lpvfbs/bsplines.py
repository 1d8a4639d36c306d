"""B-spline basis functions (Cox-de Boor), derivatives and window basis matrices."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DomainError


def num_coefficients(window_len):
    """Coefficient count n for a window of ``window_len`` samples (n=44 at 196)."""
    return int(window_len // 4.5) + 1


def default_update(n):
    return max(1, n // 2)


def clamped_knots(degree, n_coeffs, t0, t1):
    """Open (clamped) knot vector with uniform interior spacing on ``[t0, t1]``."""
    if n_coeffs < degree + 1:
        raise ValueError("need at least degree+1 coefficients")
    spans = n_coeffs - degree
    interior = np.linspace(t0, t1, spans + 1)
    return np.concatenate([np.full(degree, t0), interior, np.full(degree, t1)])


def uniform_knots(degree, spacing, first, count, origin=0.0):
    """Knots ``u_j = origin + (j - degree) * spacing`` for basis indices first..first+count-1."""
    j = np.arange(first, first + count + degree + 1)
    return origin + (j - degree) * spacing


def bspline_basis(knots, degree, t, deriv=0, right_closed=None):
    """Values (or ``deriv``-th derivatives) of all basis functions at ``t``.

    Returns an array of shape ``(len(t), len(knots) - degree - 1)``; functions
    are zero outside their support. Degree-0 pieces are half-open
    ``[u_j, u_{j+1})``; ``right_closed`` (default: last knot) is included in
    the last non-empty span so clamped bases reach the domain end.
    """
    knots = np.asarray(knots, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    nk = len(knots)
    if nk < degree + 2:
        raise ValueError("knot vector too short for the degree")
    if np.any(np.diff(knots) < 0):
        raise ValueError("knots must be non-decreasing")
    if right_closed is None:
        right_closed = knots[-1]
    # degree 0
    lo, hi = knots[:-1], knots[1:]
    B = ((t[:, None] >= lo) & (t[:, None] < hi)).astype(float)
    at_end = t == right_closed
    if np.any(at_end):
        nz = np.nonzero(hi > lo)[0]
        last = nz[hi[nz] == right_closed]
        if last.size:
            B[at_end, :] = 0.0
            B[at_end, last[-1]] = 1.0
    for k in range(1, degree + 1):
        derive = k > degree - deriv
        nb = nk - k - 1
        d1 = knots[k: k + nb] - knots[:nb]
        d2 = knots[k + 1: k + 1 + nb] - knots[1: 1 + nb]
        s1 = np.divide(1.0, d1, out=np.zeros_like(d1), where=d1 > 0)
        s2 = np.divide(1.0, d2, out=np.zeros_like(d2), where=d2 > 0)
        left, right = B[:, :nb], B[:, 1: nb + 1]
        if derive:
            B = k * (left * s1 - right * s2)
        else:
            B = (t[:, None] - knots[:nb]) * s1 * left + (knots[k + 1: k + 1 + nb] - t[:, None]) * s2 * right
    return B


def greville(knots, degree):
    """Greville abscissae (knot averages)."""
    knots = np.asarray(knots, dtype=float)
    nb = len(knots) - degree - 1
    if degree == 0:
        return 0.5 * (knots[:-1] + knots[1:])
    return np.array([knots[j + 1: j + degree + 1].mean() for j in range(nb)])


@dataclass(frozen=True)
class BSplineBasis:
    """Degree ``m`` basis with ``n + 1`` coefficients sampled at ``times``."""

    degree: int
    knots: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError("degree must be non-negative")
        if self.n_coeffs < self.degree + 1:
            raise ValueError("need n + 1 >= m + 1 coefficients")

    @property
    def n_coeffs(self):
        return len(self.knots) - self.degree - 1

    @property
    def domain(self):
        return self.knots[self.degree], self.knots[self.n_coeffs]

    @classmethod
    def clamped(cls, degree, n_coeffs, times, t0=None, t1=None):
        times = np.asarray(times, dtype=float)
        t0 = times[0] if t0 is None else t0
        t1 = times[-1] if t1 is None else t1
        return cls(degree, clamped_knots(degree, n_coeffs, t0, t1), times)

    @classmethod
    def for_window(cls, window_len, dt=1.0, degree=5, n=None):
        """Clamped basis over ``window_len + 1`` samples with n+1 coefficients."""
        n = num_coefficients(window_len) if n is None else n
        times = np.arange(window_len + 1) * dt
        return cls.clamped(degree, n + 1, times)


@dataclass(frozen=True)
class WindowBasis:
    """Sampled basis ``Phi`` and its time derivative ``dPhi``."""

    Phi: np.ndarray
    dPhi: np.ndarray

    @property
    def N_C(self):
        """Three-carriage block diagonal of ``Phi``."""
        return block_diag3(self.Phi)

    @property
    def bandwidth(self):
        nz = self.Phi != 0
        return int(nz.sum(axis=1).max())


def block_diag3(M):
    r, c = M.shape
    out = np.zeros((3 * r, 3 * c), dtype=M.dtype)
    for i in range(3):
        out[i * r:(i + 1) * r, i * c:(i + 1) * c] = M
    return out


def basis_matrix(basis, deriv_order=1):
    """Window basis matrices by Cox-de Boor; raises DomainError outside the knots."""
    lo, hi = basis.domain
    t = basis.times
    span = hi - lo
    tol = 1e-12 * max(1.0, abs(span))
    if np.any(t < lo - tol) or np.any(t > hi + tol):
        raise DomainError(f"sample times must lie in [{lo}, {hi}]")
    t = np.clip(t, lo, hi)
    Phi = bspline_basis(basis.knots, basis.degree, t, right_closed=hi)
    dPhi = bspline_basis(basis.knots, basis.degree, t, deriv=deriv_order, right_closed=hi)
    return WindowBasis(Phi, dPhi)


def eval_curve(Phi, p):
    """Sampled curve ``Phi @ p``."""
    Phi = np.asarray(Phi)
    p = np.asarray(p)
    if Phi.shape[-1] != p.shape[0]:
        raise DimensionMismatch(f"basis has {Phi.shape[-1]} columns but {p.shape[0]} control points given")
    return Phi @ p


@dataclass(frozen=True)
class UniformSpline:
    """Open-ended uniform B-spline over the whole trajectory.

    Basis ``j`` has knots ``(j - m + i) * spacing`` for ``i = 0..m+1`` (times in
    samples), so every sample ``t >= 0`` is covered only by indices ``>= 0``.
    """

    degree: int
    spacing: float

    def active(self, t):
        """Lowest and highest index with support containing ``t``."""
        k = int(np.floor(t / self.spacing))
        return k, k + self.degree

    def basis(self, samples, first, count, deriv=0):
        knots = uniform_knots(self.degree, self.spacing, first, count)
        return bspline_basis(knots, self.degree, np.asarray(samples, float), deriv=deriv,
                             right_closed=np.inf)

    def n_needed(self, n_samples):
        """Coefficients needed to cover samples ``0..n_samples-1``."""
        return self.active(n_samples - 1)[1] + 1

    def evaluate(self, p, n_samples, deriv=0, chunk=4096):
        """Curve values at integer samples ``0..n_samples-1``; ``p`` is (J,) or (J, k)."""
        p = np.asarray(p, dtype=float)
        out = np.zeros((n_samples,) + p.shape[1:])
        for lo in range(0, n_samples, chunk):
            s = np.arange(lo, min(n_samples, lo + chunk))
            j0 = max(0, self.active(s[0])[0])
            j1 = min(len(p) - 1, self.active(s[-1])[1])
            B = self.basis(s, j0, j1 - j0 + 1, deriv)
            out[s] = B @ p[j0: j1 + 1]
        return out
