"""Spatial (6D) vector algebra.

Spatial vectors are plain ``numpy`` arrays of length 6 with the angular
part in components 0-2 and the linear part in 3-5.  Transforms keep their
(rotation, translation) structure so that sparsity reasoning can look at
the 3x3 sub-blocks; a dense 6x6 expansion is available for oracles.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: tolerance used when validating rotation matrices
ORTHONORMAL_TOL = 1e-12
#: default relative tolerance for numeric comparisons
REL_TOL = 1e-9


def skew(w):
    """3x3 matrix ``w×`` such that ``skew(w) @ u == np.cross(w, u)``."""
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def spatial_vec(angular=(0.0, 0.0, 0.0), linear=(0.0, 0.0, 0.0)):
    return np.concatenate([np.asarray(angular, dtype=float), np.asarray(linear, dtype=float)])


def cross_motion(v):
    """Motion cross operator ``v×`` as a 6x6 matrix."""
    m = np.zeros((6, 6))
    w = skew(v[:3])
    m[:3, :3] = w
    m[3:, 3:] = w
    m[3:, :3] = skew(v[3:])
    return m


def cross_force(v):
    """Force cross operator ``v×*``; equals ``-cross_motion(v).T``."""
    return -cross_motion(v).T


def rotation_about(axis, angle):
    """Active rotation matrix by ``angle`` about the unit vector ``axis``."""
    k = np.asarray(axis, dtype=float)
    k = k / np.linalg.norm(k)
    K = skew(k)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def rpy_matrix(rpy):
    """Fixed-axis roll/pitch/yaw rotation ``Rz(y) @ Ry(p) @ Rx(r)``."""
    r, p, y = rpy
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
    return rz @ ry @ rx


@dataclass(frozen=True)
class SpatialTransform:
    """Coordinate transform ``^B X_A`` from frame A to frame B.

    ``rotation`` maps A coordinates to B coordinates and ``translation`` is
    the position of B's origin expressed in A, so that as a motion
    transform ``X = [[E, 0], [-E r×, E]]``.
    """

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        E = np.array(self.rotation, dtype=float).reshape(3, 3)
        r = np.array(self.translation, dtype=float).reshape(3)
        if np.abs(E @ E.T - np.eye(3)).max() > ORTHONORMAL_TOL * 10 or np.linalg.det(E) < 0:
            raise ValueError("rotation is not a proper orthonormal matrix")
        E.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "rotation", E)
        object.__setattr__(self, "translation", r)

    @classmethod
    def identity(cls):
        return cls()

    def matrix(self):
        """Dense 6x6 motion transform."""
        E, r = self.rotation, self.translation
        X = np.zeros((6, 6))
        X[:3, :3] = E
        X[3:, 3:] = E
        X[3:, :3] = -E @ skew(r)
        return X

    def force_matrix(self):
        """Dense 6x6 force transform ``X* = X^{-T}``."""
        E, r = self.rotation, self.translation
        X = np.zeros((6, 6))
        X[:3, :3] = E
        X[3:, 3:] = E
        X[:3, 3:] = -E @ skew(r)
        return X

    def apply_motion(self, v):
        E, r = self.rotation, self.translation
        w = v[:3]
        return np.concatenate([E @ w, E @ (v[3:] - np.cross(r, w))])

    def apply_force(self, f):
        E, r = self.rotation, self.translation
        lin = f[3:]
        return np.concatenate([E @ (f[:3] - np.cross(r, lin)), E @ lin])

    def apply_transpose(self, f):
        """``X^T f``: maps a force from B back to A coordinates (``^A X*_B f``)."""
        E, r = self.rotation, self.translation
        n = E.T @ f[:3]
        lin = E.T @ f[3:]
        return np.concatenate([n + np.cross(r, lin), lin])

    def apply_inverse_motion(self, v):
        E, r = self.rotation, self.translation
        w = E.T @ v[:3]
        return np.concatenate([w, E.T @ v[3:] + np.cross(r, w)])

    def inverse(self):
        return SpatialTransform(self.rotation.T, -self.rotation @ self.translation)

    def __matmul__(self, other):
        return compose(self, other)


def compose(X2, X1):
    """``X2 · X1`` (apply ``X1`` first)."""
    return SpatialTransform(X2.rotation @ X1.rotation,
                            X1.translation + X1.rotation.T @ X2.translation)


def invert(X):
    return X.inverse()


def transform_motion(X, v):
    return X.apply_motion(np.asarray(v, dtype=float))


def transform_force(X, f):
    return X.apply_force(np.asarray(f, dtype=float))


@dataclass(frozen=True)
class SpatialInertia:
    """Rigid-body inertia in the link frame.

    ``com_moment`` is ``m c`` and ``rotational`` the rotational inertia about
    the link-frame origin, ``I_C + m c× c×^T``.
    """

    mass: float
    com_moment: np.ndarray
    rotational: np.ndarray

    def __post_init__(self):
        h = np.array(self.com_moment, dtype=float).reshape(3)
        Ib = np.array(self.rotational, dtype=float).reshape(3, 3)
        if not np.array_equal(Ib, Ib.T):
            Ib = 0.5 * (Ib + Ib.T)
        h.setflags(write=False)
        Ib.setflags(write=False)
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "com_moment", h)
        object.__setattr__(self, "rotational", Ib)

    @classmethod
    def from_com(cls, mass, com, inertia_com):
        c = np.asarray(com, dtype=float)
        cx = skew(c)
        return cls(mass, mass * c, np.asarray(inertia_com, dtype=float) + mass * cx @ cx.T)

    @property
    def com(self):
        return self.com_moment / self.mass if self.mass else np.zeros(3)

    def matrix(self):
        hx = skew(self.com_moment)
        M = np.zeros((6, 6))
        M[:3, :3] = self.rotational
        M[:3, 3:] = hx
        M[3:, :3] = hx.T
        M[3:, 3:] = self.mass * np.eye(3)
        return M
