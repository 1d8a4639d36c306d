"""Kinematics of the prismatic-joint (linear) delta.

Each carriage slides on a vertical rail. After subtracting the effector
attachment offset, arm ``i`` is a rod of length ``L`` between the point
``(a_i, q_i)`` on a virtual tower and the effector center ``X``::

    (x - a_ix)**2 + (y - a_iy)**2 + (q_i - z)**2 = L**2

Everything here works on single points or on stacks of points (leading
dimensions are broadcast).
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NoIntersection, Singular, Unreachable

CARRIAGES = ("A", "B", "C")

# rail A on +y, so the far side of A (toward -y) is where the butterfly wings reach
DEFAULT_ANGLES = tuple(np.deg2rad([90.0, 210.0, 330.0]))


@dataclass(frozen=True)
class DeltaGeometry:
    """Machine geometry in millimetres and radians."""

    arm_length: float = 300.0
    carriage_radius: float = 140.0
    effector_radius: float = 40.0
    carriage_angles: tuple = DEFAULT_ANGLES
    build_volume: tuple = ((-135.0, 135.0), (-135.0, 135.0), (0.0, 300.0))

    def __post_init__(self):
        if not self.arm_length > 0:
            raise ValueError("arm_length must be positive")
        if not self.carriage_radius > self.effector_radius >= 0:
            raise ValueError("need carriage_radius > effector_radius >= 0")
        if len(self.carriage_angles) != 3:
            raise ValueError("exactly three carriage angles are required")
        wrapped = np.mod(np.asarray(self.carriage_angles, dtype=float), 2 * np.pi)
        for i in range(3):
            for j in range(i + 1, 3):
                d = abs(wrapped[i] - wrapped[j])
                if min(d, 2 * np.pi - d) < 1e-9:
                    raise ValueError("carriage angles must be distinct modulo 2*pi")

    @property
    def towers(self):
        """(3, 2) horizontal positions of the virtual towers."""
        ang = np.asarray(self.carriage_angles, dtype=float)
        rad = self.carriage_radius - self.effector_radius
        return np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)

    def line_of_action(self, i):
        """Unit horizontal vector from the machine axis toward rail ``i``."""
        ang = self.carriage_angles[i]
        return np.array([np.cos(ang), np.sin(ang), 0.0])

    def in_build_volume(self, X):
        X = np.asarray(X, dtype=float)
        ok = np.ones(X.shape[:-1], dtype=bool)
        for k, (lo, hi) in enumerate(self.build_volume):
            ok &= (X[..., k] >= lo) & (X[..., k] <= hi)
        return ok


@dataclass(frozen=True)
class Configuration:
    """Task-space position ``X`` and carriage heights ``q`` at one instant."""

    X: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @classmethod
    def from_position(cls, geometry, X):
        X = np.asarray(X, dtype=float)
        return cls(X=X, q=inverse_kinematics(geometry, X))

    def as_vector(self):
        """``[x, y, z, q_A, q_B, q_C]``."""
        return np.concatenate([self.X, self.q])


@dataclass(frozen=True)
class LinearizedJacobian:
    """Joint-to-task velocity map ``dX/dt = J_bar @ dq/dt``."""

    J_bar: np.ndarray

    def column(self, i):
        """3-vector for carriage ``i`` (index or letter)."""
        if isinstance(i, str):
            i = CARRIAGES.index(i)
        return self.J_bar[:, i]

    @property
    def condition_number(self):
        return float(np.linalg.cond(self.J_bar))


def _radicand(geometry, X):
    X = np.asarray(X, dtype=float)
    d = X[..., None, :2] - geometry.towers
    return geometry.arm_length**2 - np.sum(d * d, axis=-1)


def inverse_kinematics(geometry, X):
    """Carriage heights for effector position(s) ``X`` (elbow-up branch)."""
    X = np.asarray(X, dtype=float)
    rad = _radicand(geometry, X)
    bad = rad <= 0
    if np.any(bad):
        arm = int(np.argwhere(bad)[0][-1])
        raise Unreachable(
            f"arm {CARRIAGES[arm]} cannot reach X={X.tolist() if X.ndim == 1 else '...'}",
            arm=CARRIAGES[arm],
        )
    return X[..., 2:3] + np.sqrt(rad)


def forward_kinematics(geometry, q):
    """Effector position(s) for carriage heights ``q``.

    Three-sphere intersection; of the two solutions the lower one (effector
    below the carriages) is returned.
    """
    q = np.asarray(q, dtype=float)
    a = geometry.towers
    L = geometry.arm_length
    D = np.array([a[1] - a[0], a[2] - a[0]])
    Dinv = np.linalg.inv(D)
    a2 = np.sum(a * a, axis=1)

    q0 = q[..., 0]
    e = 0.5 * np.stack(
        [a2[1] - a2[0] + q[..., 1] ** 2 - q0**2, a2[2] - a2[0] + q[..., 2] ** 2 - q0**2],
        axis=-1,
    )
    f = np.stack([q[..., 1] - q0, q[..., 2] - q0], axis=-1)
    # horizontal position is affine in z: h = h0 + z * h1
    h0 = e @ Dinv.T
    h1 = -(f @ Dinv.T)
    u = h0 - a[0]
    qa = np.sum(h1 * h1, axis=-1) + 1.0
    qb = 2.0 * (np.sum(u * h1, axis=-1) - q0)
    qc = np.sum(u * u, axis=-1) + q0**2 - L**2
    disc = qb * qb - 4.0 * qa * qc
    if np.any(disc < 0):
        raise NoIntersection("arm spheres do not intersect for the given carriage heights")
    z = (-qb - np.sqrt(disc)) / (2.0 * qa)
    h = h0 + z[..., None] * h1
    return np.concatenate([h, z[..., None]], axis=-1)


def jacobian_array(geometry, X, q, check=True):
    """Analytic ``J_bar`` for stacked configurations, shape ``(..., 3, 3)``.

    Differentiating the arm constraints gives ``A dX = -diag(q - z) dq``.
    """
    X = np.asarray(X, dtype=float)
    q = np.asarray(q, dtype=float)
    a = geometry.towers
    dz = q - X[..., 2:3]
    A = np.empty(X.shape[:-1] + (3, 3))
    A[..., 0] = X[..., None, 0] - a[:, 0]
    A[..., 1] = X[..., None, 1] - a[:, 1]
    A[..., 2] = -dz
    detA = np.linalg.det(A)
    detJ = -np.prod(dz, axis=-1) / np.where(detA == 0, np.inf, detA)
    if check and np.any((np.abs(detJ) < 1e-12) | (detA == 0)):
        raise Singular("linearized Jacobian is singular (workspace boundary)")
    return -np.linalg.solve(A, np.eye(3) * dz[..., None, :])


def jacobian(geometry, c):
    """Linearized Jacobian at a single :class:`Configuration`."""
    return LinearizedJacobian(J_bar=jacobian_array(geometry, c.X, c.q))
