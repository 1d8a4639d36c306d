"""Windowed LPV filtered-B-splines feedforward controller.

The command for each carriage is one open-ended uniform B-spline over the
whole (padded) trajectory with knot spacing ``(L + 1) / (n + 1)`` samples.
Window ``w`` solves for coefficients ``j_w .. j_w + n`` (``j_w = w * n_up``)
so that the predicted carriage positions on the ``L + 1`` samples starting
where coefficient ``j_w`` begins to act match the desired ones. Coefficients
before ``j_w`` are already committed, and together with the current ones they
span every row of the window. At the first row the command still depends
only on committed coefficients.

The plant seen by the controller is ``G = G_J^{-1} G_qd``: an LTI prefilter
``G_qd`` followed by the configuration-dependent ``G_J^{-1}``, both truncated
to ``L`` samples. ``G_J^{-1}`` is point-varying (variants a, b) or frozen at one
representative configuration per window (baseline, c, d, e).
"""

import functools
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft
import scipy.signal

from .bsplines import UniformSpline, default_update, num_coefficients
from .errors import LPVFBSError, WindowError
from .flops import FlopLedger
from .kinematics import inverse_kinematics, jacobian_array
from .lifted import discretize, discretize_batch, impulse_batch, impulse_samples
from .lpv_model import matrix_form_gj, parameterize_gj
from .solvers import constrained_lsq_kkt, lsq_pinv, lsq_qr, pinv_matrix


@dataclass(frozen=True)
class VariantSpec:
    model: str  # "lti", "matrix", "param", "single"
    solver: str = "pinv"
    switching: bool = False


VARIANTS = {
    "baseline": VariantSpec("lti", "pinv", False),
    "a": VariantSpec("matrix", "pinv", False),
    "b": VariantSpec("param", "pinv", False),
    "c": VariantSpec("single", "pinv", False),
    "d": VariantSpec("single", "pinv", True),
    "e": VariantSpec("single", "qr", True),
}

SELECTORS = ("median", "mean", "mindist", "perpoint")
CONSTRAINT_ORDERS = {"position": 0, "velocity": 1, "acceleration": 2, "jerk": 3}


@dataclass(frozen=True)
class ControllerParams:
    window: int = 196
    degree: int = 5
    n: int = None
    n_up: int = None
    selector: str = "median"
    constraints: tuple = ("position", "velocity")
    compensated: int = None
    qr_block: int = 16

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be at least 2 samples")
        if self.selector not in SELECTORS:
            raise ValueError(f"selector must be one of {SELECTORS}")
        for c in self.constraints:
            if c not in CONSTRAINT_ORDERS:
                raise ValueError(f"unknown switching constraint {c!r}")
        if self.n_coeffs < self.degree + 1:
            raise ValueError("window too short for the spline degree")
        if not 1 <= self.update <= self.n_coeffs:
            raise ValueError("n_up must lie in [1, n+1]")

    @property
    def n_coeffs(self):
        """``n + 1``."""
        return (num_coefficients(self.window) if self.n is None else self.n) + 1

    @property
    def update(self):
        return default_update(self.n_coeffs - 1) if self.n_up is None else self.n_up

    @property
    def n_compensated(self):
        """Past coefficients per carriage re-estimated by switching compensation.

        Default ``m + 1``: the past coefficients whose support reaches the
        window's first sample, i.e. those that shape the boundary value.
        """
        return self.degree + 1 if self.compensated is None else self.compensated

    @property
    def spacing(self):
        return (self.window + 1) / self.n_coeffs


class MachineModel:
    """Discretized plant blocks shared by controller and simulator."""

    def __init__(self, geometry, blocks, dt=1e-3, truncation=196, method="zoh"):
        self.geometry = geometry
        self.blocks = blocks
        self.dt = dt
        self.truncation = int(truncation)
        self.method = method
        self.pgj = parameterize_gj(blocks, geometry)
        self.gqd = discretize(blocks.g_qd, dt, method)
        self.h_qd = impulse_samples(self.gqd, self.truncation)[0]

    def gj_impulses(self, X, q=None, ledger=None, chunk=512):
        """``G_J^{-1}`` impulse responses at stacked positions, (N, 3, 3, L)."""
        X = np.atleast_2d(X)
        q = inverse_kinematics(self.geometry, X) if q is None else np.atleast_2d(q)
        L = self.truncation
        out = np.empty((len(X), 3, 3, L))
        for lo in range(0, len(X), chunk):
            sl = slice(lo, lo + chunk)
            gj = self.pgj.evaluate(X[sl], q[sl], ledger=ledger)
            N = len(gj.a)
            A, B, C, D = discretize_batch(gj.a, gj.b.reshape(N, 9, -1), self.dt, self.method)
            out[sl] = impulse_batch(A, B, C, D, L).reshape(N, 3, 3, L)
            if ledger is not None:
                _count_discrete(ledger, N, A.shape[-1], L)
        return out

    def gj_impulses_matrix(self, X, q=None, ledger=None):
        """Same as :meth:`gj_impulses` but one point at a time via numeric matrix inversion."""
        X = np.atleast_2d(X)
        q = inverse_kinematics(self.geometry, X) if q is None else np.atleast_2d(q)
        L = self.truncation
        out = np.empty((len(X), 3, 3, L))
        for k in range(len(X)):
            J = jacobian_array(self.geometry, X[k], q[k])
            gj = matrix_form_gj(self.blocks, J, ledger=ledger)
            A, B, C, D = discretize_batch(gj.a[None], gj.b.reshape(1, 9, -1), self.dt, self.method)
            out[k] = impulse_batch(A, B, C, D, L)[0].reshape(3, 3, L)
            if ledger is not None:
                _count_discrete(ledger, 1, A.shape[-1], L)
        return out


def _count_discrete(ledger, N, order, L):
    ledger.add("discretize", N * 30 * (order + 1) ** 3, calls=N)
    ledger.add("impulse", N * L * (2 * order * order + 18 * order), calls=N)


@dataclass(frozen=True)
class LocalBasis:
    """Prefiltered basis of one window layout (a given knot phase).

    ``V`` holds ``G_qd``-filtered basis columns on the ``2L`` model-grid samples
    ``r0 - L + 1 .. r0 + L``; column ``c`` is coefficient ``j_w + col_lo + c``.
    """

    col_lo: int
    V: np.ndarray
    dV: tuple  # higher derivatives of the same, indexed by order - 1
    Vf: np.ndarray = None  # spectrum of V on the plan's FFT grid

    @property
    def n_cols(self):
        return self.V.shape[1]


@dataclass
class WindowRecord:
    index: int
    r0: int
    j_w: int
    rep_index: int = -1
    model_evals: int = 0
    jump_pos: float = 0.0
    jump_vel: float = 0.0
    jump_pos_comp: float = 0.0
    jump_vel_comp: float = 0.0


@dataclass
class ControllerReport:
    variant: str
    wall_time: float
    flops: FlopLedger
    windows: list = field(default_factory=list)
    window: int = 0
    n: int = 0
    n_up: int = 0
    spacing: float = 0.0

    @property
    def model_evals(self):
        return [w.model_evals for w in self.windows]

    def max_jump(self, kind="pos", compensated=True):
        vals = [getattr(w, f"jump_{kind}_comp" if compensated else f"jump_{kind}") for w in self.windows[1:]]
        return max(vals) if vals else 0.0


@dataclass
class ControllerResult:
    command: np.ndarray  # (K, 3) absolute carriage commands on the padded timeline
    coefficients: np.ndarray  # (J, 3) deviation coefficients
    report: ControllerReport


class WindowPlan:
    """Window geometry and offline prefiltering for one (params, model) pair."""

    def __init__(self, params, model):
        self.params = params
        self.model = model
        self.L = params.window
        self.m = params.degree
        self.nc = params.n_coeffs
        self.n_up = params.update
        self.spacing = params.spacing
        self.spline = UniformSpline(self.m, self.spacing)
        self.orders = sorted({CONSTRAINT_ORDERS[c] for c in params.constraints} - {0})
        self._cache = {}
        L = self.L
        # index pattern of the point-varying lifted block (rows r0..r0+L, inputs on model grid)
        r = np.arange(L + 1)[:, None]
        c = np.arange(2 * L)[None, :]
        lag = r + L - 1 - c
        ok = (lag >= 0) & (lag < L)
        self.pv_rows, self.pv_cols = np.nonzero(ok)
        self.pv_lags = lag[self.pv_rows, self.pv_cols]
        # rows L-1..2L-1 of a circular convolution are alias-free for nfft >= 2L
        self.nfft = scipy.fft.next_fast_len(2 * L, real=True)

    def r0(self, w):
        return int(math.ceil((w * self.n_up - self.m) * self.spacing - 1e-9))

    def windows_for(self, n_samples):
        """Window count so the last window's rows reach sample ``n_samples - 1``."""
        w = 0
        while self.r0(w) + self.L < n_samples - 1:
            w += 1
        return w + 1

    def local_basis(self, w):
        j_w = w * self.n_up
        r0 = self.r0(w)
        L = self.L
        c0 = r0 - 2 * (L - 1)
        j_lo = max(0, int(math.floor(c0 / self.spacing)))
        key = (round(r0 - (j_w - self.m) * self.spacing, 9), j_lo - j_w, min(c0, 0))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        samples = c0 + np.arange(3 * L - 1)
        count = j_w + self.nc - j_lo
        h = self.model.h_qd

        def pre(deriv):
            B = self.spline.basis(samples, j_lo, count, deriv)
            B[samples < 0] = 0.0
            out = scipy.signal.fftconvolve(B, h[:, None], axes=0)
            return out[L - 1: 3 * L - 1]

        V = pre(0)
        lb = LocalBasis(j_lo - j_w, V, tuple(pre(k) for k in self.orders),
                        scipy.fft.rfft(V, self.nfft, axis=0))
        self._cache[key] = lb
        return lb

    def first_rows(self, w):
        """First window row each current coefficient reaches (its left knot, clipped)."""
        knots = (w * self.n_up + np.arange(self.nc) - self.m) * self.spacing - self.r0(w)
        return np.clip(np.ceil(knots - 1e-9), 0, self.L).astype(np.int64)

    def prepare(self, n_windows):
        for w in range(n_windows):
            self.local_basis(w)

    # -- filtering through G_J^{-1} -------------------------------------------------

    def _fft_flops(self, cols):
        nlog = self.nfft * math.log2(self.nfft)
        return int(2.5 * nlog * (9 + 9 * cols) + 8 * (self.nfft // 2 + 1) * 9 * cols)

    def filter_lti(self, h, V=None, ledger=None, Vf=None):
        """Rows ``r0..r0+L`` of ``h_ij * V`` for a frozen model: (3, 3, L+1, cols).

        ``Vf`` (the spectrum of ``V``) may be passed instead of ``V``.
        """
        L = self.L
        if Vf is None:
            Vf = scipy.fft.rfft(V, self.nfft, axis=0)
        Hf = scipy.fft.rfft(h, self.nfft, axis=-1)
        Y = scipy.fft.irfft(Hf[:, :, :, None] * Vf[None, None], self.nfft, axis=2)[:, :, L - 1: 2 * L]
        if ledger is not None:
            ledger.add("filter_fft", self._fft_flops(Vf.shape[1]))
        return Y

    def filter_lti_sum(self, h, Vf, ledger=None):
        """Rows ``r0..r0+L`` of ``sum_j h_ij * v_j`` for one column per input: (3, L+1)."""
        L = self.L
        Hf = scipy.fft.rfft(h, self.nfft, axis=-1)
        Y = scipy.fft.irfft(np.einsum("ijf,fj->if", Hf, Vf), self.nfft, axis=1)[:, L - 1: 2 * L]
        if ledger is not None:
            F = self.nfft // 2 + 1
            ledger.add("filter_fft_sum", int(2.5 * self.nfft * math.log2(self.nfft) * 3) + 8 * F * 9)
        return Y

    def row0_lti(self, h, V):
        """Row ``r0`` only: (3, 3, cols)."""
        L = self.L
        return np.einsum("ijl,lc->ijc", h, V[L - 1::-1][:L])

    def filter_pv(self, H, V, ledger=None):
        """Point-varying filtering with ``H`` (2L, 3, 3, L) on the model grid."""
        L = self.L
        P = np.zeros((9, L + 1, 2 * L))
        P[:, self.pv_rows, self.pv_cols] = H.reshape(2 * L, 9, L)[self.pv_cols, :, self.pv_lags].T
        Y = P @ V
        if ledger is not None:
            ledger.add("filter_pv", 2 * 9 * len(self.pv_rows) * V.shape[1])
        return Y.reshape(3, 3, L + 1, V.shape[1])


def _stack(Y, cols):
    """(3, 3, R, C) blocks -> (3R, 3|cols|) stacked carriage-major matrix."""
    Ys = Y[..., cols]
    return np.concatenate([np.concatenate(list(Ys[i]), axis=1) for i in range(3)], axis=0)


def _stack_rows(Y0, cols):
    """(3, 3, C) row blocks -> (3, 3|cols|)."""
    return np.concatenate(list(np.moveaxis(Y0[..., cols], 1, 0)), axis=1)


def select_representative(X, q, strategy="median", geometry=None):
    """Index (or re-projected configuration) representing a window.

    Returns ``(X_rep, q_rep, index)``; ``index`` is -1 for ``mean``.
    """
    X = np.atleast_2d(X)
    q = np.atleast_2d(q)
    if len(X) == 0:
        raise ValueError("empty window")
    if strategy == "median":
        k = len(X) // 2
    elif strategy == "mindist":
        d = np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)).sum(1)
        k = int(np.argmin(d))
    elif strategy == "mean":
        Xm = X.mean(axis=0)
        qm = inverse_kinematics(geometry, Xm) if geometry is not None else q.mean(axis=0)
        return Xm, qm, -1
    else:
        raise ValueError(f"no single representative for strategy {strategy!r}")
    return X[k], q[k], k


SWITCH_RIDGE = 1e-10


def _col_scale(A, ledger):
    # the last current coefficient barely reaches the window; equilibrate columns
    s = np.linalg.norm(A, axis=0)
    s[s == 0] = 1.0
    ledger.add("equilibrate", 3 * A.size)
    return A / s, s


@functools.lru_cache(maxsize=8)
def _interleave(n_rows, nc):
    """Time-major row order and coefficient-major column order of a stacked window."""
    rows = np.arange(3 * n_rows).reshape(3, n_rows).T.reshape(-1)
    cols = np.arange(3 * nc).reshape(3, nc).T.reshape(-1)
    return rows, cols


def solve_window(NC, rhs, solver="pinv", ledger=None, block=None, first_rows=None):
    """Unconstrained window solve with column equilibration.

    ``NC`` is carriage-major: three row blocks of ``R`` samples and three
    column blocks of ``nc`` coefficients. ``first_rows[c]`` (optional, QR only)
    is the first window row coefficient ``c`` can reach; the plant is causal,
    so rows before it are zero in every block. Interleaving rows by time and
    columns by coefficient turns that into a staircase the QR solver skips.
    """
    ledger = FlopLedger() if ledger is None else ledger
    A, s = _col_scale(NC, ledger)
    if solver == "qr" and first_rows is not None:
        nc = len(first_rows)
        rows, cols = _interleave(A.shape[0] // 3, nc)
        starts = np.repeat(3 * np.asarray(first_rows), 3)
        x = np.empty(3 * nc)
        x[cols] = lsq_qr(A[rows][:, cols], rhs[rows], ledger, block=block, starts=starts)
    elif solver == "qr":
        x = lsq_qr(A, rhs, ledger, block=block)
    else:
        x = lsq_pinv(A, rhs, ledger)
    return x / s


def switching_compensation(A, C, d, p_bar, ledger=None):
    """Approximate past coefficients ``p_hat`` keeping the boundary values continuous.

    Minimizes ``||A (p_hat - p_bar)||`` (plus a tiny ridge on the change)
    subject to ``C p_hat = d``.
    """
    ledger = FlopLedger() if ledger is None else ledger
    s = np.linalg.norm(A, axis=0)
    live = s > 1e-10 * s.max() if s.size and s.max() > 0 else np.zeros(s.shape, bool)
    x = np.array(p_bar, dtype=float, copy=True)
    if not live.any():
        return x
    # columns that never reach the window stay at p_bar
    d = d - C[:, ~live] @ p_bar[~live]
    As, Cs = A[:, live] / s[live], C[:, live] / s[live]
    # solve for the change; the ridge pins directions the window cannot see
    z0 = p_bar[live] * s[live]
    dz, _ = constrained_lsq_kkt(As, np.zeros(len(As)), Cs, d - Cs @ z0, ledger, ridge=SWITCH_RIDGE)
    x[live] = (z0 + dz) / s[live]
    return x


def run_controller(qd, Xd, model, variant="e", params=None, selector=None, switching=None, solver=None):
    """Run one controller variant on a padded desired trajectory.

    ``qd`` and ``Xd`` are (K, 3) desired carriage and effector positions on a
    timeline that starts and ends at rest (see :func:`pad_trajectory`).
    """
    params = params or ControllerParams(window=model.truncation)
    if params.window != model.truncation:
        raise ValueError("controller window must equal the model truncation length")
    spec = VARIANTS[variant]
    if solver is not None:
        spec = replace(spec, solver=solver)
    if switching is not None:
        spec = replace(spec, switching=bool(switching))
    sel = selector or params.selector
    if spec.model == "single" and sel == "perpoint":
        spec = replace(spec, model="param", switching=False)
    plan = WindowPlan(params, model)
    L, nc, n_up = plan.L, plan.nc, plan.n_up
    K = len(qd)
    n_win = plan.windows_for(K)
    J_total = (n_win - 1) * n_up + nc
    ext = plan.r0(n_win - 1) + L + 1
    off = 2 * L  # padded-data index of sample 0
    idx = np.clip(np.arange(-off, ext), 0, K - 1)
    q0 = qd[0]
    dev = qd[idx] - q0
    Xg, qg = Xd[idx], qd[idx]

    # offline work (untimed): prefiltered bases, baseline model and pseudoinverses
    plan.prepare(n_win)
    lti_cache = {}
    h_fixed = None
    if spec.model == "lti":
        X0 = np.array([0.0, 0.0, Xd[0, 2]])
        h_fixed = model.gj_impulses(X0[None])[0]

    ledger = FlopLedger()
    coeffs = np.zeros((J_total, 3))
    report = ControllerReport(variant, 0.0, ledger, window=L, n=nc - 1, n_up=n_up, spacing=plan.spacing)
    h_prev = None
    t_total = 0.0
    for w in range(n_win):
        rec = WindowRecord(w, plan.r0(w), w * n_up)
        lb = plan.local_basis(w)
        r0, j_w = rec.r0, rec.j_w
        j_lo = j_w + lb.col_lo
        cur = np.arange(lb.n_cols - nc, lb.n_cols)
        past = np.arange(0, lb.n_cols - nc)
        ncmp = params.n_compensated
        comp = past[past >= lb.n_cols - nc - ncmp]
        old = past[past < lb.n_cols - nc - ncmp]
        p_past = coeffs[j_lo:j_w]  # (|past|, 3)
        target = dev[off + r0: off + r0 + L + 1].T.reshape(-1)
        try:
            t0 = time.perf_counter()
            if spec.model == "lti":
                key = (lb.col_lo, lb.n_cols, id(lb))
                if key not in lti_cache:
                    # offline inversion, cached per layout
                    Y = plan.filter_lti(h_fixed, lb.V)
                    NC = _stack(Y, cur)
                    A, sc = _col_scale(NC, FlopLedger())
                    lti_cache[key] = (pinv_matrix(A) / sc[:, None], _stack(Y, past))
                    t0 = time.perf_counter()
                Pinv, NP = lti_cache[key]
                rhs = target - NP @ p_past.T.reshape(-1)
                pC = Pinv @ rhs
                ledger.add("lti_apply", 2 * NP.size + 2 * Pinv.size)
            else:
                g0 = off + r0 - L + 1  # model grid r0-L+1 .. r0+L
                if spec.model in ("param", "matrix"):
                    Xw, qw = Xg[g0: g0 + 2 * L], qg[g0: g0 + 2 * L]
                    if spec.model == "param":
                        H = model.gj_impulses(Xw, qw, ledger)
                    else:
                        H = model.gj_impulses_matrix(Xw, qw, ledger)
                    rec.model_evals = 2 * L
                    # committed coefficients enter only through one column per carriage
                    Vagg = lb.V[:, past] @ p_past
                    ledger.add("aggregate", 2 * Vagg.size * len(past))
                    Y = plan.filter_pv(H, np.concatenate([lb.V[:, cur], Vagg], axis=1), ledger)
                    NC = _stack(Y, np.arange(nc))
                    offset = np.einsum("ijrj->ir", Y[..., nc:]).reshape(-1)
                    rhs = target - offset
                else:
                    # candidates: first L points of the 2L model grid
                    rows = slice(g0, g0 + L)
                    Xr, qr_, k = select_representative(Xg[rows], qg[rows], sel, model.geometry)
                    rec.rep_index = r0 - L + 1 + k if k >= 0 else -1
                    h = model.gj_impulses(Xr[None], qr_[None], ledger)[0]
                    rec.model_evals = 1
                    nx = len(comp)
                    Y = plan.filter_lti(h, ledger=ledger, Vf=lb.Vf[:, np.concatenate([comp, cur])])
                    NC = _stack(Y, np.arange(nx, nx + nc))
                    NPc = _stack(Y, np.arange(nx))
                    p_comp = p_past[comp].T.reshape(-1)
                    p_old = p_past[old].T.reshape(-1)
                    if len(old):
                        Vagg = lb.Vf[:, old] @ p_past[old]
                        ledger.add("aggregate", 8 * Vagg.size * len(old))
                        offset = plan.filter_lti_sum(h, Vagg, ledger).reshape(-1)
                    else:
                        offset = np.zeros(3 * (L + 1))
                    if h_prev is not None and len(past):
                        p_all = p_past.T.reshape(-1)
                        # boundary rows at r0: position and derivative rows
                        rows2 = [_stack_rows(plan.row0_lti(h, lb.V), past)]
                        rows1 = [_stack_rows(plan.row0_lti(h_prev, lb.V), past)]
                        for dv in lb.dV:
                            rows2.append(_stack_rows(plan.row0_lti(h, dv), past))
                            rows1.append(_stack_rows(plan.row0_lti(h_prev, dv), past))
                        scale = [1.0] + [model.dt ** -o for o in plan.orders]
                        jumps = [np.max(np.abs((r2 - r1) @ p_all)) * s for r2, r1, s in zip(rows2, rows1, scale)]
                        rec.jump_pos = jumps[0]
                        rec.jump_vel = jumps[1] if len(jumps) > 1 else 0.0
                        if spec.switching and len(comp):
                            sel_c = np.concatenate([i * len(past) + comp for i in range(3)])
                            sel_o = np.concatenate([i * len(past) + old for i in range(3)])
                            Cm = np.concatenate([r2[:, sel_c] for r2 in rows2], axis=0)
                            dvec = np.concatenate([r1 @ p_all - r2[:, sel_o] @ p_old for r1, r2 in zip(rows1, rows2)])
                            p_comp = switching_compensation(NPc, Cm, dvec, p_comp, ledger)
                            after = [np.max(np.abs(r2[:, sel_c] @ p_comp + r2[:, sel_o] @ p_old - r1 @ p_all)) * s
                                     for r2, r1, s in zip(rows2, rows1, scale)]
                            rec.jump_pos_comp = after[0]
                            rec.jump_vel_comp = after[1] if len(after) > 1 else 0.0
                        else:
                            rec.jump_pos_comp, rec.jump_vel_comp = rec.jump_pos, rec.jump_vel
                    rhs = target - NPc @ p_comp - offset
                    h_prev = h
                pC = solve_window(NC, rhs, spec.solver, ledger, params.qr_block, plan.first_rows(w))
            t_total += time.perf_counter() - t0
        except LPVFBSError as exc:
            raise WindowError(w, exc) from exc
        pC = pC.reshape(3, nc).T
        keep = nc if w == n_win - 1 else n_up
        coeffs[j_w: j_w + keep] = pC[:keep]
        report.windows.append(rec)
    report.wall_time = t_total
    command = q0 + plan.spline.evaluate(coeffs, K)
    return ControllerResult(command, coeffs, report)


def pad_trajectory(q, X, window):
    """Prepend and append ``window`` rest samples at the start and end poses."""
    q = np.asarray(q, dtype=float)
    X = np.asarray(X, dtype=float)
    pad = lambda a: np.concatenate([np.repeat(a[:1], window, 0), a, np.repeat(a[-1:], window, 0)])
    return pad(q), pad(X)
