"""Test trajectories, plant simulation, contour error and variant comparison."""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleLimits, OutOfWorkspace, Unreachable
from .kinematics import forward_kinematics, inverse_kinematics

BUTTERFLY_SPAN = ((-83.0, 83.0), (-77.0, 23.0))


@dataclass(frozen=True)
class Limits:
    v_max: float = 150.0  # mm/s
    a_max: float = 20000.0  # mm/s^2
    dt: float = 1e-3

    def __post_init__(self):
        if not (self.v_max > 0 and self.a_max > 0 and self.dt > 0):
            raise InfeasibleLimits("v_max, a_max and dt must be positive")


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    X: np.ndarray  # (K, 3) mm
    q: np.ndarray  # (K, 3) mm
    limits: Limits = field(default_factory=Limits)
    name: str = ""

    def __len__(self):
        return len(self.t)

    def velocity(self):
        return np.diff(self.X, axis=0) / self.limits.dt

    def acceleration(self):
        return np.diff(self.X, 2, axis=0) / self.limits.dt**2


BUTTERFLY_DEPTH = 1.3


def butterfly_path(n=20001, lobes=4, span=BUTTERFLY_SPAN, depth=BUTTERFLY_DEPTH):
    """Polar butterfly curve ``r = exp(cos t) - depth cos(lobes t) - sin(t/12)^5``,
    one turn, scaled to ``span`` with the wings pointing toward -y.

    The classic curve has ``depth = 2``; 1.3 shortens the wing folds so the
    path takes about 5 s at 150 mm/s.
    """
    t = np.linspace(0.0, 2 * np.pi, n)
    r = np.exp(np.cos(t)) - depth * np.cos(lobes * t) - np.sin(t / 12.0) ** 5
    x, y = np.sin(t) * r, -np.cos(t) * r
    (x0, x1), (y0, y1) = span
    x = x0 + (x - x.min()) * (x1 - x0) / (x.max() - x.min())
    y = y0 + (y - y.min()) * (y1 - y0) / (y.max() - y.min())
    return np.stack([x, y], axis=1)


def square_path(side=40.0, center=(0.0, 0.0)):
    cx, cy = center
    h = side / 2
    return np.array([[cx - h, cy - h], [cx + h, cy - h], [cx + h, cy + h], [cx - h, cy + h], [cx - h, cy - h]])


def _resample_arclength(P, ds):
    seg = np.linalg.norm(np.diff(P, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 1e-12])
    P = P[keep]
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(P, axis=0), axis=1))])
    if s[-1] == 0:
        return P[:1], s[:1]
    m = max(2, int(np.ceil(s[-1] / ds)) + 1)
    su = np.linspace(0.0, s[-1], m)
    return np.stack([np.interp(su, s, P[:, k]) for k in range(P.shape[1])], axis=1), su


def _feed_profile(P, s, limits, corner_stop):
    """Forward/backward pass on the arc-length grid; returns speed at each node."""
    ds = s[1] - s[0]
    d = np.diff(P, axis=0)
    heading = d / np.linalg.norm(d, axis=1, keepdims=True)
    turn = np.zeros(len(P))
    cosang = np.clip(np.sum(heading[1:] * heading[:-1], axis=1), -1.0, 1.0)
    turn[1:-1] = np.arccos(cosang)
    kappa = turn / ds
    a_n = 0.6 * limits.a_max
    a_t = 0.6 * limits.a_max
    vlim = np.minimum(limits.v_max, np.sqrt(a_n / np.maximum(kappa, 1e-12)))
    vlim[turn > corner_stop] = 0.0
    vlim[0] = vlim[-1] = 0.0
    v = vlim.copy()
    for i in range(1, len(v)):
        v[i] = min(v[i], np.sqrt(v[i - 1] ** 2 + 2 * a_t * ds))
    for i in range(len(v) - 2, -1, -1):
        v[i] = min(v[i], np.sqrt(v[i + 1] ** 2 + 2 * a_t * ds))
    return v


def _time_parameterize(P, s, v, dt, smooth, a_max):
    vm = 0.5 * (v[1:] + v[:-1])
    ds = np.diff(s)
    # a stop-to-stop segment takes at least the time to cover ds from rest
    dtau = np.maximum(ds / np.maximum(vm, 1e-300), 0.0)
    dtau = np.minimum(dtau, 2.0 * np.sqrt(ds / a_max))
    tau = np.concatenate([[0.0], np.cumsum(dtau)])
    T = tau[-1]
    k = int(np.ceil(T / dt)) + 1
    tk = np.minimum(np.arange(k) * dt, T)
    sk = np.interp(tk, tau, s)
    if smooth > 1 and len(sk) > 1:
        # moving average of s(t) softens acceleration steps (jerk limiting)
        # edge padding keeps the first and last samples exactly at the path ends
        pad = np.concatenate([np.full(smooth - 1, sk[0]), sk, np.full(smooth - 1, sk[-1])])
        sk = np.convolve(pad, np.ones(smooth) / smooth, mode="valid")
    return np.stack([np.interp(sk, s, P[:, j]) for j in range(P.shape[1])], axis=1)


def _audit(Xk, limits):
    if len(Xk) < 3:
        return 0.0, 0.0
    v = np.linalg.norm(np.diff(Xk, axis=0), axis=1) / limits.dt
    a = np.linalg.norm(np.diff(Xk, 2, axis=0), axis=1) / limits.dt**2
    return v.max(), a.max()


def plan_path(path_xy, limits, geometry, z=0.0, ds=0.02, smooth=9, corner_stop=0.2, name=""):
    """Time-parameterize a planar path at height ``z`` under speed/acceleration limits."""
    P = np.asarray(path_xy, dtype=float)
    if P.ndim != 2 or P.shape[1] != 2:
        raise ValueError("path must be an (N, 2) array")
    Pr, s = _resample_arclength(P, ds)
    if len(Pr) == 1:
        X = np.array([[Pr[0, 0], Pr[0, 1], z]])
    else:
        v = _feed_profile(Pr, s, limits, corner_stop)
        # smoothing can overshoot the limits slightly; slow the whole profile until it fits
        stretch = 1.0
        for _ in range(20):
            X2 = _time_parameterize(Pr, s, v / stretch, limits.dt, smooth, 0.6 * limits.a_max / stretch**2)
            vmax, amax = _audit(X2, limits)
            if vmax <= 1.01 * limits.v_max and amax <= 1.01 * limits.a_max:
                break
            stretch *= max(1.02, np.sqrt(amax / limits.a_max), vmax / limits.v_max)
        else:
            raise InfeasibleLimits("could not satisfy the limits on this path")
        X = np.concatenate([X2, np.full((len(X2), 1), float(z))], axis=1)
    if not np.all(geometry.in_build_volume(X)):
        raise OutOfWorkspace("trajectory leaves the build volume")
    try:
        q = inverse_kinematics(geometry, X)
    except Unreachable as exc:
        raise OutOfWorkspace(str(exc)) from exc
    t = np.arange(len(X)) * limits.dt
    return Trajectory(t, X, q, limits, name)


def gen_trajectory(shape, geometry, limits=None, scale=1.0, offset=(0.0, 0.0), z=0.0,
                   waypoints=None, side=40.0, lobes=4):
    """Generate ``butterfly``, ``square`` or ``waypoints`` trajectories."""
    limits = limits or Limits()
    off = np.asarray(offset, dtype=float)
    if shape == "butterfly":
        P = butterfly_path(lobes=lobes)
    elif shape == "square":
        P = square_path(side)
    elif shape in ("waypoints", "custom"):
        if waypoints is None:
            raise ValueError("waypoints required for a custom path")
        P = np.asarray(waypoints, dtype=float)[:, :2]
    else:
        raise ValueError(f"unknown trajectory shape {shape!r}")
    P = P * scale + off
    return plan_path(P, limits, geometry, z=z, name=shape)


def load_trajectory_csv(path, geometry, dt=1e-3):
    """Read ``t, x, y, z`` rows (header optional)."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                rows.append([float(v) for v in row[:4]])
            except ValueError:
                continue
    A = np.array(rows)
    X = A[:, 1:4]
    q = inverse_kinematics(geometry, X)
    return Trajectory(A[:, 0], X, q, Limits(dt=dt), "csv")


def simulate_plant(model, q_cmd, Xd, qd=None, chunk=512):
    """Per-point LPV plant response to carriage commands ``q_cmd`` (K, 3).

    The model at each sample is evaluated at the desired configuration. The
    response is computed around the initial command, assumed to be at rest.
    Returns ``(q, X)``.
    """
    q_cmd = np.asarray(q_cmd, dtype=float)
    Xd = np.asarray(Xd, dtype=float)
    K = len(q_cmd)
    if len(Xd) != K:
        raise ValueError("commands and desired positions differ in length")
    qd = inverse_kinematics(model.geometry, Xd) if qd is None else qd
    L = model.truncation
    u = q_cmd - q_cmd[0]
    v = np.stack([np.convolve(u[:, j], model.h_qd)[:K] for j in range(3)], axis=1)
    y = np.zeros((K + L, 3))
    for lo in range(0, K, chunk):
        hi = min(K, lo + chunk)
        H = model.gj_impulses(Xd[lo:hi], qd[lo:hi])  # (c, 3, 3, L)
        contrib = np.einsum("kijl,kj->lki", H, v[lo:hi])  # (L, c, 3)
        for lag in range(L):
            y[lo + lag: hi + lag] += contrib[lag]
    q = y[:K] + q_cmd[0]
    return q, forward_kinematics(model.geometry, q)


def simulate_lti(h, u):
    """Reference: causal convolution of one channel."""
    return np.convolve(u, h)[: len(u)]


@dataclass(frozen=True)
class ContourErrorSeries:
    error: np.ndarray  # micrometres

    @property
    def rms(self):
        return float(np.sqrt(np.mean(self.error**2)))

    @property
    def max(self):
        return float(np.max(self.error))

    def improvement(self, reference):
        return 100.0 * (reference.rms - self.rms) / reference.rms


def _point_segment_dist(X, A, B):
    d = B - A
    dd = np.sum(d * d, axis=-1)
    t = np.where(dd > 0, np.sum((X - A) * d, axis=-1) / np.where(dd > 0, dd, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return np.linalg.norm(X - (A + t[..., None] * d), axis=-1)


def contour_error(path, X, window=500, brute=False, chunk=256):
    """Distance (µm) from each actual point to the desired polyline ``path`` (mm)."""
    path = np.asarray(path, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if len(X) == 0:
        raise ValueError("empty series")
    if len(path) == 1:
        return ContourErrorSeries(1e3 * np.linalg.norm(X - path[0], axis=1))
    A, B = path[:-1], path[1:]
    nseg = len(A)
    out = np.empty(len(X))
    for lo in range(0, len(X), chunk):
        hi = min(len(X), lo + chunk)
        if brute:
            seg = np.arange(nseg)[None, :]
        else:
            base = np.clip(np.arange(lo, hi), 0, nseg - 1)[:, None]
            seg = np.clip(base + np.arange(-window, window + 1)[None, :], 0, nseg - 1)
        d = _point_segment_dist(X[lo:hi, None, :], A[seg], B[seg])
        out[lo:hi] = d.min(axis=1)
    return ContourErrorSeries(1e3 * out)


@dataclass
class VariantRun:
    variant: str
    command: np.ndarray
    q: np.ndarray
    X: np.ndarray
    error: ContourErrorSeries
    report: object


def run_comparison(traj, model, variants, params=None, repeats=1, **overrides):
    """Run each variant through controller and plant; returns (rows, runs).

    With ``repeats > 1`` each variant is run that many times and the fastest
    wall time is reported; the commands of the repeats are identical.
    """
    from .controller import ControllerParams, pad_trajectory, run_controller

    params = params or ControllerParams(window=model.truncation)
    qd, Xd = pad_trajectory(traj.q, traj.X, params.window)
    runs = {}
    for v in variants:
        res = run_controller(qd, Xd, model, v, params, **overrides)
        for _ in range(int(repeats) - 1):
            again = run_controller(qd, Xd, model, v, params, **overrides)
            if not np.array_equal(again.command, res.command):
                raise RuntimeError(f"variant {v} is not deterministic")
            res.report.wall_time = min(res.report.wall_time, again.report.wall_time)
        q, X = simulate_plant(model, res.command, Xd, qd)
        runs[v] = VariantRun(v, res.command, q, X, contour_error(Xd, X), res.report)
    ref = runs.get("baseline")
    rows = []
    for v, r in runs.items():
        rows.append({
            "variant": v,
            "wall_time_s": r.report.wall_time,
            "flops": r.report.flops.total(),
            "rms_um": r.error.rms,
            "max_um": r.error.max,
            "improvement_pct": (r.error.improvement(ref.error) if ref is not None and v != "baseline" else None),
            "max_jump_pos_mm": r.report.max_jump("pos"),
            "max_jump_vel_mm_s": r.report.max_jump("vel"),
            "windows": len(r.report.windows),
            "model_evals_per_window": (max(r.report.model_evals) if r.report.windows else 0),
        })
    return rows, runs
