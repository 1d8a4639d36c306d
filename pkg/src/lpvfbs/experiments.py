"""Reproducible comparison runs shared by the scripts and the acceptance suite."""

import time
from dataclasses import dataclass

import numpy as np

from .controller import ControllerParams, MachineModel, pad_trajectory, run_controller
from .lifted import worst_case_settle
from .lpv_model import default_blocks
from .kinematics import DeltaGeometry
from .sim import contour_error, gen_trajectory, run_comparison, simulate_plant

# butterfly samples near carriage A's far-side line of action (x = 0, y < 0)
SPIKE_BAND = dict(x_abs=10.0, y_max=-20.0)


@dataclass
class Setup:
    geometry: DeltaGeometry
    blocks: object
    window: int
    settle: object
    model: MachineModel


def default_setup(grid_pitch=5.0, dt=1e-3, window=None):
    """Default machine with ``L_C`` from the worst-case settle scan (unless given)."""
    g, blocks = DeltaGeometry(), default_blocks()
    settle = None
    if window is None:
        settle = worst_case_settle(g, blocks, grid_pitch, dt)
        window = settle.recommended
    return Setup(g, blocks, window, settle, MachineModel(g, blocks, dt, truncation=window))


def butterfly_comparison(setup, variants=("baseline", "a", "b", "c", "d", "e"), repeats=5, slow=("a",)):
    """Table of all variants on the butterfly; variants in ``slow`` are timed once."""
    traj = gen_trajectory("butterfly", setup.geometry)
    params = ControllerParams(window=setup.window)
    rows, runs = [], {}
    for v in variants:
        r, rn = run_comparison(traj, setup.model, [v], params, repeats=1 if v in slow else repeats)
        rows += r
        runs.update(rn)
    base = runs.get("baseline")
    for row in rows:
        if base is not None and row["variant"] != "baseline":
            row["improvement_pct"] = runs[row["variant"]].error.improvement(base.error)
    return traj, rows, runs


def band_mask(X, x_abs=SPIKE_BAND["x_abs"], y_max=SPIKE_BAND["y_max"]):
    return (np.abs(X[:, 0]) < x_abs) & (X[:, 1] < y_max)


def spike_ratio(error_um, mask):
    """max/RMS of the contour error over the masked samples."""
    e = np.asarray(error_um)[mask]
    return float(e.max() / np.sqrt(np.mean(e**2)))


def line_crossing(setup, start=(0.0, 20.0), end=(0.0, -75.0), variants=("c", "d", "e")):
    """Short path along carriage A's line of action, through the centre to the far side.

    The representative configuration moves along the direction that changes
    the model most, so every window switch sees a different model.
    """
    traj = gen_trajectory("waypoints", setup.geometry, waypoints=[start, end])
    params = ControllerParams(window=setup.window)
    qd, Xd = pad_trajectory(traj.q, traj.X, setup.window)
    out = {}
    for v in variants:
        t0 = time.perf_counter()
        res = run_controller(qd, Xd, setup.model, v, params)
        _, X = simulate_plant(setup.model, res.command, Xd, qd)
        out[v] = dict(report=res.report, error=contour_error(Xd, X), seconds=time.perf_counter() - t0)
    return traj, out


def reference_offset_response(model, Xd, qd=None, offset=10.0, chunk=512):
    """Spurious output (µm) of the point-varying plant to a constant input ``offset`` (mm).

    Each tap comes from the configuration at its input time, so a constant
    input held while the configuration moves does not come out unchanged even
    though every frozen model has unit DC gain. The history before sample 0
    is taken at the first configuration. Returns (K, 3).
    """
    Xd = np.asarray(Xd, dtype=float)
    K, L = len(Xd), model.truncation
    v = offset * np.sum(model.h_qd)  # prefilter output for a held input
    y = np.zeros((K + L, 3))
    H0 = model.gj_impulses(Xd[:1], None if qd is None else qd[:1])[0]
    for lag in range(L):
        # inputs from before sample 0 sit at the first configuration
        y[:min(lag, K)] += (H0[:, :, lag] @ np.full(3, v))[None, :]
    for lo in range(0, K, chunk):
        hi = min(K, lo + chunk)
        H = model.gj_impulses(Xd[lo:hi], None if qd is None else qd[lo:hi])
        contrib = np.einsum("kijl,j->lki", H, np.full(3, v))
        for lag in range(L):
            y[lo + lag: hi + lag] += contrib[lag]
    return 1e3 * (y[:K] - v)
