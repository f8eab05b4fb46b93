"""Quaternion helpers and the gravity wrench of the sensing side.

Conventions: quaternions are (w, x, y, z) and map device-frame vectors into
the world frame. The device +z axis points along the probing direction, so a
vertically held probe has its +z axis along world -z. World +z points up.
"""

from __future__ import annotations

import numpy as np

GRAVITY_M_S2 = 9.80665


def quat_normalize(q: np.ndarray) -> tuple[np.ndarray, float]:
    """Normalize quaternions (..., 4); returns (unit quats, max norm deviation)."""
    q = np.asarray(q, dtype=float)
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero-norm quaternion")
    deviation = float(np.max(np.abs(norms - 1.0)))
    return q / norms, deviation


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v (..., 3) by unit quaternions q (..., 4)."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w, xyz = q[..., :1], q[..., 1:]
    t = 2.0 * np.cross(xyz, v)
    return v + w * t + np.cross(xyz, t)


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def probe_orientation(tilt_rad: float, azimuth_rad: float) -> np.ndarray:
    """Orientation of a probe tilted ``tilt_rad`` from vertical toward ``azimuth_rad``.

    At zero tilt the device +z (probing) axis maps to world -z.
    """
    # vertical reference: rotate pi about world x so device z points down
    q0 = quat_from_axis_angle([1.0, 0.0, 0.0], np.pi)
    if tilt_rad == 0.0:
        return q0
    tilt_axis = np.array([-np.sin(azimuth_rad), np.cos(azimuth_rad), 0.0])
    return quat_multiply(quat_from_axis_angle(tilt_axis, tilt_rad), q0)


def probing_axis_world(q: np.ndarray) -> np.ndarray:
    """World-frame probing direction(s) for orientation quaternion(s)."""
    z_dev = np.zeros(q.shape[:-1] + (3,))
    z_dev[..., 2] = 1.0
    return quat_rotate(q, z_dev)


def gravity_wrench(quats: np.ndarray, mass_kg: float, com_offset_m: float) -> np.ndarray:
    """Gravity contribution of the sensing side, columns (fz, mx, my), shape (T, 3).

    The axial term is m*g*cos(tilt); the lateral weight component acting at
    the center of mass produces the torques, magnitude m*g*sin(tilt)*offset.
    """
    quats, _ = quat_normalize(quats)
    down_world = np.array([0.0, 0.0, -1.0])
    u = quat_rotate(quat_conj(quats), np.broadcast_to(down_world, quats.shape[:-1] + (3,)))
    mg = mass_kg * GRAVITY_M_S2
    fz = mg * u[..., 2]
    mx = -mg * com_offset_m * u[..., 1]
    my = mg * com_offset_m * u[..., 0]
    return np.stack([fz, mx, my], axis=-1)
