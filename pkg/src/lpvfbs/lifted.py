"""Discretization, truncated impulse responses and lifted (convolution) matrices."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NotSettled, Singular, Unreachable
from .kinematics import inverse_kinematics, jacobian_array

DEFAULT_SETTLE_TOL = 1e-4
DEFAULT_SETTLE_CAP = 20000


@dataclass(frozen=True)
class DiscreteFilter:
    """Single-input discrete state-space filter with ``p`` outputs.

    ``h[0] = D`` and ``h[k] = C A^(k-1) B`` for ``k >= 1``.
    """

    A: np.ndarray  # (n, n)
    B: np.ndarray  # (n,)
    C: np.ndarray  # (p, n)
    D: np.ndarray  # (p,)
    dt: float

    @property
    def order(self):
        return self.A.shape[0]

    def poles(self):
        return np.linalg.eigvals(self.A) if self.order else np.array([])

    def spectral_radius(self):
        return float(np.max(np.abs(self.poles()))) if self.order else 0.0

    def dc_gain(self):
        if not self.order:
            return self.D.copy()
        return self.D + self.C @ np.linalg.solve(np.eye(self.order) - self.A, self.B)

    def tf(self, output=0):
        """``(b, a)`` in powers of ``z^-1``; ``a[0] == 1``."""
        n = self.order
        a = np.real(np.poly(self.poles())) if n else np.ones(1)
        h = impulse_samples(self, n + 1)[output]
        b = np.convolve(a, h)[: n + 1]
        return b, a

    def series(self, first):
        """Filter ``first`` followed by ``self`` (``first`` must be SISO)."""
        n1, n2 = first.order, self.order
        A = np.zeros((n1 + n2, n1 + n2))
        A[:n1, :n1] = first.A
        A[n1:, :n1] = np.outer(self.B, first.C[0])
        A[n1:, n1:] = self.A
        B = np.concatenate([first.B, self.B * first.D[0]])
        C = np.concatenate([self.D[:, None] * first.C[0][None, :], self.C], axis=1)
        return DiscreteFilter(A, B, C, self.D * first.D[0], self.dt)


def _companion_batch(den, nums, w0):
    """Frequency-scaled controllable canonical form for stacked rational functions."""
    n = den.shape[-1] - 1
    k = np.arange(n + 1, dtype=float)
    sc = w0[:, None] ** k
    ah = den * sc
    bh = nums * sc[:, None, :]
    lead = ah[:, n].copy()
    ah = ah / lead[:, None]
    bh = bh / lead[:, None, None]
    D = bh[..., n]
    C = bh[..., :n] - D[..., None] * ah[:, None, :n]
    N = den.shape[0]
    A = np.zeros((N, n, n))
    if n:
        A[:, np.arange(n - 1), np.arange(1, n)] = 1.0
        A[:, n - 1, :] = -ah[:, :n]
    B = np.zeros((N, n))
    if n:
        B[:, n - 1] = 1.0
    return A, B, C, D


def frequency_scale(den):
    """Geometric-mean pole magnitude of stacked ascending polynomials, (N,)."""
    den = np.atleast_2d(den)
    n = den.shape[-1] - 1
    if n == 0:
        return np.ones(den.shape[0])
    c0, cn = np.abs(den[:, 0]), np.abs(den[:, n])
    w0 = np.where(c0 > 0, (c0 / np.where(cn > 0, cn, 1.0)) ** (1.0 / n), 1.0)
    return w0


def discretize_batch(den, nums, dt, method="zoh"):
    """Discretize stacked transfer functions sharing a denominator per row.

    ``den`` is (N, n+1) and ``nums`` (N, p, <=n+1), ascending powers of ``s``.
    Returns ``(A, B, C, D)`` with shapes (N,n,n), (N,n), (N,p,n), (N,p).
    """
    den = np.atleast_2d(np.asarray(den, dtype=float))
    nums = np.asarray(nums, dtype=float)
    if nums.ndim == 2:
        nums = nums[:, None, :]
    n = den.shape[-1] - 1
    if nums.shape[-1] < n + 1:
        nums = np.concatenate([nums, np.zeros(nums.shape[:-1] + (n + 1 - nums.shape[-1],))], axis=-1)
    w0 = frequency_scale(den)
    A, B, C, D = _companion_batch(den, nums, w0)
    if n == 0:
        return A, B, C, D
    Th = dt * w0
    if method == "zoh":
        Mx = np.zeros((den.shape[0], n + 1, n + 1))
        Mx[:, :n, :n] = A * Th[:, None, None]
        Mx[:, :n, n] = B * Th[:, None]
        E = scipy.linalg.expm(Mx)
        return E[:, :n, :n], E[:, :n, n], C, D
    if method == "tustin":
        I = np.eye(n)
        ima = I - 0.5 * Th[:, None, None] * A
        Ad = np.linalg.solve(ima, I + 0.5 * Th[:, None, None] * A)
        Bd = np.linalg.solve(ima, (B * Th[:, None])[..., None])[..., 0]
        Cd = np.swapaxes(np.linalg.solve(np.swapaxes(ima, -1, -2), np.swapaxes(C, -1, -2)), -1, -2)
        Dd = D + 0.5 * np.einsum("npi,ni->np", C, Bd)
        return Ad, Bd, Cd, Dd
    raise ValueError(f"unknown discretization method {method!r}")


def discretize(tf, dt, method="zoh"):
    """Discrete equivalent of a :class:`RationalTF` (zero-order hold by default)."""
    if dt <= 0:
        raise ValueError("sampling time must be positive")
    A, B, C, D = discretize_batch(tf.den[None, :], tf.num[None, None, :], dt, method)
    return DiscreteFilter(A[0], B[0], C[0], D[0], dt)


def discretize_rational(den, nums, dt, method="zoh"):
    """Shared-denominator discretization of one rational vector; returns a filter."""
    A, B, C, D = discretize_batch(np.asarray(den)[None], np.asarray(nums)[None], dt, method)
    return DiscreteFilter(A[0], B[0], C[0], D[0], dt)


def impulse_samples(filt, length):
    """First ``length`` impulse-response samples, shape (p, length)."""
    p = filt.D.shape[0]
    h = np.zeros((p, length))
    if length == 0:
        return h
    h[:, 0] = filt.D
    if filt.order == 0:
        return h
    x = filt.B.copy()
    for k in range(1, length):
        h[:, k] = filt.C @ x
        x = filt.A @ x
    return h


def impulse_batch(A, B, C, D, length):
    """Stacked impulse responses, shape (N, p, length)."""
    N, p = D.shape
    n = A.shape[-1]
    h = np.zeros((N, p, length))
    h[:, :, 0] = D
    if n == 0 or length < 2:
        return h
    # states A^k B by doubling: [X; X A_p^T] with A_p = A^(2^j)
    X = B[:, None, :]
    Ap = A
    while X.shape[1] < length - 1:
        X = np.concatenate([X, X @ np.swapaxes(Ap, 1, 2)], axis=1)
        Ap = Ap @ Ap
    h[:, :, 1:] = np.einsum("npi,nki->npk", C, X[:, : length - 1])
    return h


def settle_length(h, settle_tol=DEFAULT_SETTLE_TOL):
    """Number of leading samples after which ``|h|`` stays below ``tol * peak``.

    ``h`` may be stacked; the last axis is time and the result has the
    leading shape.
    """
    h = np.asarray(h)
    mag = np.abs(h)
    peak = mag.max(axis=-1, keepdims=True)
    above = mag >= settle_tol * peak
    above &= peak > 0
    rev = above[..., ::-1]
    last = h.shape[-1] - np.argmax(rev, axis=-1)
    return np.where(rev.any(axis=-1), last, 1)


def impulse_response(filt, settle_tol=DEFAULT_SETTLE_TOL, cap=DEFAULT_SETTLE_CAP, quiet=256):
    """Truncated impulse response and its settle length.

    Samples are generated until a run of ``quiet`` samples stays below
    ``settle_tol`` times the peak. Returns ``(h, settle)`` where ``h`` has
    ``settle`` samples (shape (p, settle), or (settle,) for SISO).
    """
    siso = filt.D.shape[0] == 1
    if filt.order and filt.spectral_radius() >= 1.0:
        raise NotSettled(f"filter is not stable (spectral radius {filt.spectral_radius():.6f})")
    length = max(2 * quiet, 64)
    while True:
        h = impulse_samples(filt, length)
        settle = int(np.max(settle_length(h, settle_tol)))
        if settle + quiet <= length:
            break
        if length >= cap:
            raise NotSettled(f"impulse response did not settle within {cap} samples")
        length = min(2 * length, cap)
    h = h[:, :settle]
    return (h[0] if siso else h), settle


@dataclass(frozen=True)
class LiftedMatrix:
    """Convolution matrix of a (possibly point-varying) discrete filter.

    Column ``k`` holds the impulse response of the filter active at step ``k``
    shifted down to start at row ``k + start``.
    """

    entries: np.ndarray
    truncation: int
    start: int = 0

    def __matmul__(self, other):
        return self.entries @ other

    @property
    def shape(self):
        return self.entries.shape

    def is_toeplitz(self, atol=0.0):
        E = self.entries
        for d in range(-E.shape[0] + 1, E.shape[1]):
            diag = np.diagonal(E, d)
            if diag.size and np.any(np.abs(diag - diag[0]) > atol):
                return False
        return True

    def is_causal(self):
        return not np.any(np.triu(self.entries, 1) != 0)


def build_lifted(impulses, window_len, start=0):
    """Lifted matrix over ``window_len`` steps.

    ``impulses`` is either one tap sequence (LTI) or an array whose row ``k``
    is the tap sequence of the filter active at step ``k``. Tap ``j`` of a
    sequence acts with lag ``start + j``; ``start < 0`` gives non-causal taps.
    Works with object arrays (e.g. symbolic taps).
    """
    imp = np.asarray(impulses)
    if window_len < 1:
        raise ValueError("window_len must be at least 1")
    lti = imp.ndim == 1
    T = imp.shape[-1]
    r = np.arange(window_len)[:, None]
    c = np.arange(window_len)[None, :]
    lag = r - c - start
    mask = (lag >= 0) & (lag < T)
    out = np.zeros((window_len, window_len), dtype=imp.dtype)
    rr, cc = np.nonzero(mask)
    ll = lag[rr, cc]
    out[rr, cc] = imp[ll] if lti else imp[cc, ll]
    return LiftedMatrix(out, T, start)


def lifted_rows(impulses, rows, cols):
    """Rows ``rows`` and columns ``cols`` of a causal point-varying lifted matrix.

    ``impulses[k]`` is the response of the filter at absolute step ``cols[k]``.
    Cheaper than building the full square matrix when only a slice is needed.
    """
    rows = np.asarray(rows)[:, None]
    cols = np.asarray(cols)[None, :]
    lag = rows - cols
    T = impulses.shape[-1]
    ok = (lag >= 0) & (lag < T)
    out = np.zeros(lag.shape)
    rr, cc = np.nonzero(ok)
    out[rr, cc] = impulses[cc, lag[rr, cc]]
    return out


def apply_point_varying(h, u):
    """Causal point-varying filtering ``y = LSR(h) u`` without forming the matrix.

    ``h`` is (T, L): row ``k`` is the truncated response to an impulse at step
    ``k``. ``u`` is (T,) or (T, m).
    """
    T, L = h.shape
    u = np.asarray(u, dtype=float)
    y = np.zeros_like(u)
    hh = h if u.ndim == 1 else h[:, :, None]
    for lag in range(min(L, T)):
        y[lag:] += hh[: T - lag, lag] * u[: T - lag]
    return y


@dataclass(frozen=True)
class SettleReport:
    recommended: int
    settle: np.ndarray  # per grid point, max over the nine entries
    positions: np.ndarray
    worst_position: np.ndarray
    grid_pitch: float


def workspace_grid(geometry, grid_pitch, z=0.0, radius=None):
    """Reachable, non-singular positions on a square grid at height ``z``."""
    if grid_pitch <= 0:
        raise ValueError("grid_pitch must be positive")
    if radius is None:
        (x0, x1), (y0, y1), _ = geometry.build_volume
        radius = 0.5 * min(x1 - x0, y1 - y0)
    ticks = np.arange(-np.floor(radius / grid_pitch), np.floor(radius / grid_pitch) + 1) * grid_pitch
    xx, yy = np.meshgrid(ticks, ticks, indexing="ij")
    keep = xx**2 + yy**2 <= radius**2 + 1e-9
    pts = np.stack([xx[keep], yy[keep], np.full(keep.sum(), float(z))], axis=1)
    good = []
    for p in pts:
        try:
            q = inverse_kinematics(geometry, p)
            jacobian_array(geometry, p, q)
        except (Unreachable, Singular):
            continue
        good.append(p)
    return np.array(good).reshape(-1, 3)


def gj_filters_batch(pgj, X, dt, method="zoh", q=None, J=None):
    """Discrete ``G_J^{-1}`` at stacked positions via the parameterization."""
    if q is None:
        q = inverse_kinematics(pgj.geometry, X)
    a, b = pgj.coefficients(X, q, J)
    return discretize_batch(a, b.reshape(a.shape[0], 9, -1), dt, method)


def worst_case_settle(geometry, blocks, grid_pitch=5.0, dt=1e-3, settle_tol=DEFAULT_SETTLE_TOL,
                      z=0.0, radius=None, cap=DEFAULT_SETTLE_CAP, positions=None, chunk=256,
                      method="zoh"):
    """Worst settle length of the nine entries of ``G`` over a workspace grid.

    ``G`` is realized as the discrete cascade of ``G_qd`` and ``G_J^{-1}``,
    the same structure used for plant simulation.
    """
    from .lpv_model import parameterize_gj

    if positions is None:
        positions = workspace_grid(geometry, grid_pitch, z, radius)
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    pgj = parameterize_gj(blocks, geometry)
    gqd = discretize(blocks.g_qd, dt, method)
    rho = gqd.spectral_radius()
    h_qd_full = None
    settle = np.zeros(len(positions), dtype=int)
    for lo in range(0, len(positions), chunk):
        X = positions[lo: lo + chunk]
        A, B, C, D = gj_filters_batch(pgj, X, dt, method)
        rad = np.max(np.abs(np.linalg.eigvals(A)), axis=-1) if A.shape[-1] else np.zeros(len(X))
        r = max(float(rad.max()), rho)
        if r >= 1.0:
            raise NotSettled("model is unstable somewhere on the grid")
        # decay far enough below tolerance that the tail cannot re-cross it
        length = int(np.ceil(np.log(settle_tol * 1e-3) / np.log(r))) + 64 if r > 0 else 64
        if length > cap:
            raise NotSettled(f"settle estimate {length} exceeds cap {cap}")
        if h_qd_full is None or h_qd_full.shape[-1] < length:
            h_qd_full = impulse_samples(gqd, length)[0]
        h_gj = impulse_batch(A, B, C, D, length)
        nfft = 1 << int(np.ceil(np.log2(2 * length)))
        h_g = np.fft.irfft(np.fft.rfft(h_gj, nfft) * np.fft.rfft(h_qd_full[:length], nfft), nfft)[..., :length]
        settle[lo: lo + len(X)] = settle_length(h_g, settle_tol).max(axis=-1)
    worst = int(np.argmax(settle))
    return SettleReport(int(settle[worst]), settle, positions, positions[worst], float(grid_pitch))
