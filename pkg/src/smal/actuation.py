"""Rotating-magnet actuation geometry and the adaptive actuating-angle controller.

Two coordinate conventions appear here:

* the capsule frame {C}: x along the heading, z in the vertical plane through
  the heading, y = z x x;
* an *analysis frame*, which is {C} frozen at a design point with the capsule
  at the origin heading along +x. The locomotion analysis (propulsive force
  curves, zero and critical points) is carried out in this frame with the
  actuator at ``(d sin(alpha), 0, d cos(alpha))`` and its moment given in
  closed form.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .magnetics import KM, SingularPointError, dipole_field_vec
from .numerics import Root, cross3, periodic_trapezoid, scan_root

MAX_ALPHA = np.radians(35.0)
WORLD_UP = np.array([0.0, 0.0, 1.0])
GAMMA_CRITICAL = np.pi / 4


class DegenerateGeometryError(ValueError):
    pass


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def _check_alpha(alpha):
    if not (-1e-12 <= alpha <= MAX_ALPHA + 1e-12):
        raise ValueError(f"actuating angle {np.degrees(alpha):.3f} deg outside [0, 35] deg")


# --- frames and closed-form actuator geometry --------------------------------


@dataclass(frozen=True)
class CapsuleFrame:
    origin: np.ndarray
    x_axis: np.ndarray
    y_axis: np.ndarray
    z_axis: np.ndarray

    @property
    def rotation(self) -> np.ndarray:
        """Columns are the frame axes in world coordinates."""
        return np.column_stack([self.x_axis, self.y_axis, self.z_axis])

    def to_world(self, v) -> np.ndarray:
        return self.rotation @ np.asarray(v, dtype=float)

    def point_to_world(self, v) -> np.ndarray:
        return self.origin + self.to_world(v)


def capsule_frame(p_c, heading) -> CapsuleFrame:
    x = _unit(heading)
    z = WORLD_UP - (WORLD_UP @ x) * x
    n = np.linalg.norm(z)
    if n < 1e-6:
        raise DegenerateGeometryError("heading is vertical; the capsule frame is undefined")
    z = z / n
    y = cross3(z, x)
    return CapsuleFrame(np.asarray(p_c, dtype=float), x, y, z)


def offset_dir_c(alpha: float) -> np.ndarray:
    """Unit vector from actuator to capsule in {C}: Rot_y(alpha) (0, 0, -1)."""
    return np.array([-np.sin(alpha), 0.0, -np.cos(alpha)])


def actuator_axis_world(r_hat, heading) -> np.ndarray:
    """Actuator spin axis that makes the field rotate about ``heading`` at the capsule."""
    r_hat = _unit(r_hat)
    w = np.asarray(heading, dtype=float)
    v = 3.0 * r_hat * (r_hat @ w) - w
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise DegenerateGeometryError("rotation axis vanishes")
    return v / n


def _a_coeff(alpha):
    s, c = np.sin(alpha), np.cos(alpha)
    root = np.sqrt(3.0 * s * s + 1.0)
    return 3.0 * c * s / root, (1.0 - 3.0 * s * s) / root


def actuator_axis_frame_c(alpha: float) -> np.ndarray:
    _check_alpha(alpha)
    s, c = np.sin(alpha), np.cos(alpha)
    root = np.sqrt(3.0 * s * s + 1.0)
    return np.array([(3.0 * s * s - 1.0) / root, 0.0, 3.0 * c * s / root])


def actuator_moment(alpha: float, theta) -> np.ndarray:
    """Actuator unit moment in {C} after spinning by ``theta`` from its reference.

    Vectorised over ``theta``; returns shape (..., 3).
    """
    _check_alpha(alpha)
    a, b = _a_coeff(alpha)
    theta = np.asarray(theta, dtype=float)
    ct, st = np.cos(theta), np.sin(theta)
    return np.stack([a * ct, st, b * ct], axis=-1)


# --- commands -----------------------------------------------------------------


@dataclass(frozen=True)
class ActuatorCommand:
    """Commanded actuator pose.

    The actuator spins about ``rotation_axis``; its moment at phase ``theta``
    is ``cos(theta) * moment_ref + sin(theta) * (rotation_axis x moment_ref)``.
    ``spin_phase`` is the phase at ``issued_at``.
    """

    position: np.ndarray
    rotation_axis: np.ndarray
    moment_ref: np.ndarray
    spin_phase: float
    spin_rate: float
    actuating_angle: float
    standoff: float
    issued_at: float = 0.0
    heading: np.ndarray | None = None

    def __post_init__(self):
        _check_alpha(self.actuating_angle)
        if not self.standoff > 0:
            raise ValueError("standoff must be positive")
        if abs(np.linalg.norm(self.rotation_axis) - 1.0) > 1e-9:
            raise ValueError("rotation_axis must be unit norm")

    def phase_at(self, t: float) -> float:
        return self.spin_phase + self.spin_rate * (t - self.issued_at)

    def moment_dir(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        side = cross3(self.rotation_axis, self.moment_ref)
        return np.cos(theta)[..., None] * self.moment_ref + np.sin(theta)[..., None] * side


def command_for(
    p_c,
    heading,
    alpha: float,
    standoff: float,
    spin_rate: float = 0.0,
    spin_phase: float = 0.0,
    issued_at: float = 0.0,
) -> ActuatorCommand:
    """Place the actuator for a capsule at ``p_c`` heading along ``heading``."""
    _check_alpha(alpha)
    frame = capsule_frame(p_c, heading)
    r = standoff * frame.to_world(offset_dir_c(alpha))
    a, b = _a_coeff(alpha)
    axis = frame.to_world(actuator_axis_frame_c(alpha))
    ref = frame.to_world([a, 0.0, b])
    return ActuatorCommand(
        position=frame.origin - r,
        rotation_axis=axis / np.linalg.norm(axis),
        moment_ref=ref / np.linalg.norm(ref),
        spin_phase=float(spin_phase),
        spin_rate=float(spin_rate),
        actuating_angle=float(alpha),
        standoff=float(standoff),
        issued_at=float(issued_at),
        heading=frame.x_axis,
    )


def command_field_axis(cmd: ActuatorCommand, point, phase0: float = 0.0) -> np.ndarray:
    """Cross product of the fields at ``point`` for phases ``phase0`` and ``phase0 + 90 deg``."""
    r = np.asarray(point, dtype=float) - cmd.position
    b0 = dipole_field_vec(cmd.moment_dir(phase0), r)
    b1 = dipole_field_vec(cmd.moment_dir(phase0 + np.pi / 2), r)
    return cross3(b0, b1)


def command_gamma(cmd: ActuatorCommand, point, heading) -> float:
    axis = command_field_axis(cmd, point)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise DegenerateGeometryError("field rotation axis vanishes")
    return float(np.arccos(np.clip(axis @ _unit(heading) / n, -1.0, 1.0)))


def command_mean_force(cmd: ActuatorCommand, point, tangent, mags, n_theta: int = 32) -> np.ndarray:
    """Revolution-averaged force (N, world frame) on a synchronously spinning capsule.

    The capsule moment follows the wall-constrained field at every phase.
    """
    frame = capsule_frame(cmd.position, cmd.heading)
    rot = frame.rotation
    r = rot.T @ (np.asarray(point, dtype=float) - cmd.position)
    t = rot.T @ _unit(tangent)
    thetas = 2.0 * np.pi * np.arange(n_theta) / n_theta
    f = _forces_over_theta(r, t, cmd.actuating_angle, mags, thetas)
    return rot @ np.mean(f, axis=0)


# --- analysis frame ------------------------------------------------------------


def design_actuator_position(alpha: float, d: float) -> np.ndarray:
    """Actuator position in the analysis frame (capsule design point at the origin)."""
    return np.array([d * np.sin(alpha), 0.0, d * np.cos(alpha)])


def field_rotation_axis(p_a, alpha: float, p_c, phase0: float = 0.0) -> np.ndarray:
    """Unnormalised rotation axis of the field at ``p_c`` (analysis frame)."""
    r = np.asarray(p_c, dtype=float) - np.asarray(p_a, dtype=float)
    b0 = dipole_field_vec(actuator_moment(alpha, phase0), r)
    b1 = dipole_field_vec(actuator_moment(alpha, phase0 + np.pi / 2), r)
    return cross3(b0, b1)


def gamma(p_a, alpha: float, p_c, heading) -> float:
    """Angle between the capsule heading and the field rotation axis (rad)."""
    axis = field_rotation_axis(p_a, alpha, p_c)
    n = np.linalg.norm(axis)
    if n < 1e-300:
        raise DegenerateGeometryError("field rotation axis vanishes")
    return float(np.arccos(np.clip(axis @ _unit(heading) / n, -1.0, 1.0)))


def _forces_over_theta(r, heading, alpha, mags, thetas):
    """Force on the wall-constrained capsule for each actuator phase; (N, 3)."""
    r = np.asarray(r, dtype=float)
    rn = np.linalg.norm(r)
    if not rn > 1e-6:
        raise SingularPointError("capsule on top of the actuator")
    w = _unit(heading)
    ma = actuator_moment(alpha, thetas)  # (N, 3)
    rr = r @ r
    ra = ma @ r
    b = KM / rn**5 * (3.0 * np.outer(ra, r) - rr * ma)
    proj = b - np.outer(b @ w, w)
    pn = np.linalg.norm(proj, axis=1)
    if np.any(pn < 1e-15 * max(np.max(np.linalg.norm(b, axis=1)), 1e-300)):
        raise DegenerateGeometryError("field parallel to the heading; capsule moment undefined")
    mc = proj / pn[:, None]
    rc = mc @ r
    scalar = np.einsum("ij,ij->i", mc, rr * ma - 5.0 * np.outer(ra, r))
    f = 3.0 * KM * mags[0] * mags[1] / rn**7 * (
        mc * (ra * rr)[:, None] + ma * (rc * rr)[:, None] + scalar[:, None] * r
    )
    return f


def force_components(r, heading, alpha, mags, n_theta: int = 64, phase_offset: float = 0.0):
    """Revolution-averaged propulsive, lateral and levitation force (N) in {C} axes."""
    thetas = phase_offset + 2.0 * np.pi * np.arange(n_theta) / n_theta
    f = _forces_over_theta(r, heading, alpha, mags, thetas)
    frame = capsule_frame(np.zeros(3), heading)
    return tuple(periodic_trapezoid(f @ ax) for ax in (frame.x_axis, frame.y_axis, frame.z_axis))


def mean_propulsive_force(
    r_cur, heading, alpha: float, mags: Sequence[float], n_theta: int = 64, phase_offset: float = 0.0
) -> float:
    """Propulsive force averaged over one actuator revolution (N).

    ``r_cur`` points from the actuator to the capsule in the analysis frame;
    the capsule moment at each phase is the field projected onto the plane
    normal to ``heading``.
    """
    _check_alpha(alpha)
    thetas = phase_offset + 2.0 * np.pi * np.arange(n_theta) / n_theta
    f = _forces_over_theta(r_cur, heading, alpha, mags, thetas)
    return periodic_trapezoid(f @ _unit(heading))


# straight lumen: capsule at (m, 0, 0) heading +x


def straight_r(m: float, alpha: float, d: float) -> np.ndarray:
    return np.array([m - d * np.sin(alpha), 0.0, -d * np.cos(alpha)])


_X = np.array([1.0, 0.0, 0.0])


def straight_fp(m, alpha, d, mags, n_theta=64):
    return mean_propulsive_force(straight_r(m, alpha, d), _X, alpha, mags, n_theta)


def straight_gamma(m, alpha, d):
    pa = design_actuator_position(alpha, d)
    return gamma(pa, alpha, [m, 0.0, 0.0], _X)


def _check_analysis_alpha(alpha):
    if not (np.radians(5.0) - 1e-12 <= alpha <= MAX_ALPHA + 1e-12):
        raise ValueError("analysis requires alpha in [5, 35] deg")


def zero_point_straight(alpha: float, d: float, mags, n_theta: int = 64) -> Root:
    """Travel ``m`` at which the averaged propulsive force vanishes."""
    _check_analysis_alpha(alpha)
    return scan_root(lambda m: straight_fp(m, alpha, d, mags, n_theta), 0.0, d * np.sin(alpha))


def critical_point_straight(alpha: float, d: float, mags=None) -> Root:
    """Travel ``m`` at which the heading / field-axis angle reaches 45 deg."""
    _check_analysis_alpha(alpha)
    return scan_root(lambda m: straight_gamma(m, alpha, d) - GAMMA_CRITICAL, 0.0, d * np.sin(alpha))


# 180 degree bend of radius R: the capsule starts at the design point
# p_c(0) = (0, -R, 0) and follows p_c(beta) = (R sin b, -R cos b, 0).


def bend_position(beta, R):
    return np.array([R * np.sin(beta), -R * np.cos(beta), 0.0])


def bend_heading(beta):
    return np.array([np.cos(beta), np.sin(beta), 0.0])


def bend_actuator_position(alpha, d, R):
    return bend_position(0.0, R) + design_actuator_position(alpha, d)


def bend_r(beta: float, alpha: float, d: float, R: float) -> np.ndarray:
    return np.array([R * np.sin(beta) - d * np.sin(alpha), R - R * np.cos(beta), -d * np.cos(alpha)])


def bend_fp(beta, alpha, d, R, mags, n_theta=64):
    return mean_propulsive_force(bend_r(beta, alpha, d, R), bend_heading(beta), alpha, mags, n_theta)


def bend_gamma(beta, alpha, d, R):
    return gamma(bend_actuator_position(alpha, d, R), alpha, bend_position(beta, R), bend_heading(beta))


def zero_point_bend(alpha: float, d: float, R: float, mags, n_theta: int = 64) -> Root:
    """First bend angle beta (from the design point) where the averaged force vanishes."""
    _check_analysis_alpha(alpha)
    return scan_root(lambda b: bend_fp(b, alpha, d, R, mags, n_theta), 0.0, np.pi)


def critical_point_bend(alpha: float, d: float, R: float, mags=None) -> Root:
    _check_analysis_alpha(alpha)
    return scan_root(lambda b: bend_gamma(b, alpha, d, R) - GAMMA_CRITICAL, 0.0, np.pi)


def intersection_alpha(d: float, R: float, mags, n_theta: int = 64, n_scan: int = 31) -> Root:
    """Actuating angle where the bend zero point meets the bend critical point."""

    def diff(alpha):
        return zero_point_bend(alpha, d, R, mags, n_theta).x - critical_point_bend(alpha, d, R).x

    return scan_root(diff, np.radians(5.0), MAX_ALPHA, n_scan=n_scan, rtol=1e-9)


# --- adaptive controller -------------------------------------------------------


@dataclass(frozen=True)
class ControlParams:
    alpha_high: float = np.radians(15.0)
    alpha_low: float = np.radians(7.5)
    v_threshold: float = 5.7e-3
    delta_t: float = 0.2
    standoff: float = 0.15
    spin_rate: float = 4.0 * np.pi

    def __post_init__(self):
        if not (0 < self.alpha_low <= self.alpha_high <= MAX_ALPHA + 1e-12):
            raise ValueError("need 0 < alpha_low <= alpha_high <= 35 deg")
        if not (self.v_threshold > 0 and self.delta_t > 0 and self.standoff > 0):
            raise ValueError("v_threshold, delta_t and standoff must be positive")


@dataclass
class VelocityWindow:
    """Last four capsule positions sampled ``delta_t`` apart."""

    delta_t: float
    samples: deque = field(default_factory=lambda: deque(maxlen=4))

    def push(self, t: float, position):
        if self.samples:
            gap = t - self.samples[-1][0]
            if abs(gap - self.delta_t) > 1e-9:
                raise ValueError(f"sample spacing {gap} differs from delta_t {self.delta_t}")
        self.samples.append((float(t), np.asarray(position, dtype=float).copy()))

    @property
    def full(self) -> bool:
        return len(self.samples) == 4


def sma_velocity(window: VelocityWindow) -> float:
    """Simple moving average of the three most recent chord speeds (m/s)."""
    if not window.full:
        raise ValueError("velocity window needs four samples")
    p = [s[1] for s in window.samples]
    speeds = [np.linalg.norm(p[k + 1] - p[k]) / window.delta_t for k in range(3)]
    return float(np.mean(speeds))


def adaptive_alpha(v: float, params: ControlParams) -> float:
    return params.alpha_high if v > params.v_threshold else params.alpha_low


def actuation_step(
    pose,
    window: VelocityWindow,
    params: ControlParams,
    t: float = 0.0,
    spin_phase: float = 0.0,
) -> ActuatorCommand:
    """One pass of the adaptive actuation loop: speed -> alpha -> actuator pose."""
    v = sma_velocity(window)
    alpha = adaptive_alpha(v, params)
    return command_for(pose.position, pose.heading, alpha, params.standoff, params.spin_rate, spin_phase, t)
