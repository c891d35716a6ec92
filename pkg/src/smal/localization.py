"""Two-dipole pose estimation (MOT), normal-vector heading fit and the tracker loop."""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .magnetics import KM, MIN_SEPARATION
from .numerics import cross3
from .sensor_array import FieldSample, SensorGrid, activate, select_subarray_center

# residuals are formed in microtesla to keep J^T J well scaled
_SCALE = 1e6


class DegenerateSpreadError(ValueError):
    """The buffered moments do not resolve a unique rotation plane."""


class DegenerateGeometryWarning(RuntimeWarning):
    pass


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class Pose5D:
    position: np.ndarray
    moment_dir: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "moment_dir", _unit(self.moment_dir).reshape(3))


@dataclass(frozen=True)
class Pose6D:
    position: np.ndarray
    moment_dir: np.ndarray
    heading: np.ndarray

    def __post_init__(self):
        h = _unit(self.heading).reshape(3)
        m = _unit(self.moment_dir).reshape(3)
        if abs(m @ h) > 1e-6:
            raise ValueError("moment_dir must be perpendicular to heading")
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float).reshape(3))
        object.__setattr__(self, "moment_dir", m)
        object.__setattr__(self, "heading", h)


@dataclass(frozen=True)
class MotEstimate:
    actuator: Pose5D
    capsule: Pose5D
    residual_norm: float = 0.0
    converged: bool = True
    iterations: int = 0


def orthogonalize(moment_dir, heading) -> np.ndarray:
    """Project ``moment_dir`` onto the plane normal to ``heading`` and renormalise."""
    h = _unit(heading)
    m = np.asarray(moment_dir, dtype=float)
    m = m - (m @ h) * h
    n = np.linalg.norm(m)
    if n < 1e-12:
        # moment along the heading: any perpendicular will do
        m = cross3(h, [1.0, 0.0, 0.0])
        if np.linalg.norm(m) < 1e-6:
            m = cross3(h, [0.0, 1.0, 0.0])
        n = np.linalg.norm(m)
    return m / n


# --- MOT solver -------------------------------------------------------------


def _frame_for(u):
    """Orthonormal basis whose first column is ``u``; spherical poles sit 90 deg away."""
    u = _unit(u)
    helper = np.array([1.0, 0.0, 0.0]) if abs(u[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e3 = cross3(u, helper)
    e3 /= np.linalg.norm(e3)
    e2 = cross3(e3, u)
    return np.column_stack([u, e2, e3])


def _sph(theta, phi):
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    u = np.array([st * cp, st * sp, ct])
    du_dt = np.array([ct * cp, ct * sp, -st])
    du_dp = np.array([-st * sp, st * cp, 0.0])
    return u, du_dt, du_dp


def _dipole_and_jac(points, p, u, mag):
    """Field of one dipole at ``points`` and its derivatives.

    Returns B (S,3), dB/dp (S,3,3), dB/du (S,3,3).
    """
    r = points - p
    r2 = np.einsum("sj,sj->s", r, r)
    if np.any(r2 <= MIN_SEPARATION**2):
        raise FloatingPointError("dipole estimate on top of a sensor")
    rn = np.sqrt(r2)
    inv3 = 1.0 / (r2 * rn)
    inv5 = inv3 / r2
    inv7 = inv5 / r2
    ru = r @ u
    k = KM * mag
    b = k * (3.0 * r * (ru * inv5)[:, None] - u[None, :] * inv3[:, None])
    eye = np.eye(3)
    rr = np.einsum("si,sj->sij", r, r)
    dbdr = k * (
        3.0 * inv5[:, None, None]
        * (ru[:, None, None] * eye + np.einsum("si,j->sij", r, u) + np.einsum("i,sj->sij", u, r))
        - 15.0 * (ru * inv7)[:, None, None] * rr
    )
    dbdu = k * (3.0 * inv5[:, None, None] * rr - inv3[:, None, None] * eye)
    return b, -dbdr, dbdu


class _MotProblem:
    def __init__(self, points, measured, mags, init: MotEstimate):
        self.points = np.asarray(points, dtype=float)
        self.measured = np.asarray(measured, dtype=float)
        self.mags = mags
        self.qa = _frame_for(init.actuator.moment_dir)
        self.qc = _frame_for(init.capsule.moment_dir)

    def x0(self, init: MotEstimate):
        h = np.pi / 2
        return np.concatenate([init.actuator.position, [h, 0.0], init.capsule.position, [h, 0.0]])

    def unpack(self, x):
        ua, _, _ = _sph(x[3], x[4])
        uc, _, _ = _sph(x[8], x[9])
        return x[0:3], self.qa @ ua, x[5:8], self.qc @ uc

    def residual_jac(self, x, want_jac=True):
        S = len(self.points)
        cols = []
        btot = np.zeros((S, 3))
        for off, q, mag in ((0, self.qa, self.mags[0]), (5, self.qc, self.mags[1])):
            u_loc, du_t, du_p = _sph(x[off + 3], x[off + 4])
            b, dbdp, dbdu = _dipole_and_jac(self.points, x[off:off + 3], q @ u_loc, mag)
            btot += b
            if want_jac:
                cols.append(dbdp)
                cols.append(np.einsum("sij,j->si", dbdu, q @ du_t)[:, :, None])
                cols.append(np.einsum("sij,j->si", dbdu, q @ du_p)[:, :, None])
        e = ((btot - self.measured) * _SCALE).reshape(-1)
        if not want_jac:
            return e, None
        jac = np.concatenate(cols, axis=2).reshape(S * 3, 10) * _SCALE
        return e, jac


def solve_mot(
    samples: Sequence[FieldSample],
    mags: tuple[float, float],
    init: MotEstimate,
    max_iter: int = 100,
    gtol: float = 1e-10,
    xtol: float = 1e-12,
    max_range: float = 1.0,
) -> MotEstimate:
    """Fit actuator and capsule 5-D poses to tri-axial field samples.

    Levenberg-Marquardt on the stacked field residuals with both moment
    directions held on the unit sphere by an angle parametrisation. The
    returned ``residual_norm`` is the sum of per-sensor residual norms (T).

    Convergence is declared when the scaled gradient (largest cosine between
    a Jacobian column and the residual) drops below ``gtol``, when the step
    drops below ``xtol`` relative to the parameter norm, or when the residual
    is at rounding level. Otherwise the best iterate is returned with
    ``converged=False``. A dipole that runs off further than ``max_range``
    (m) from the sensor centroid contributes nothing measurable; such fits
    are also reported as not converged.
    """
    if len(samples) < 8:
        raise ValueError("at least 8 tri-axial samples are required")
    points = np.array([s.position for s in samples])
    measured = np.array([s.field for s in samples])
    prob = _MotProblem(points, measured, mags, init)
    x = prob.x0(init)

    def objective(e):
        return float(np.linalg.norm(e.reshape(-1, 3), axis=1).sum()) / _SCALE

    try:
        e, jac = prob.residual_jac(x)
    except FloatingPointError:
        return replace(init, converged=False, residual_norm=np.inf, iterations=0)
    cost = e @ e
    floor = (1e-13 * np.abs(measured).max() * _SCALE) ** 2 * len(e)
    converged = cost <= floor
    lam = 1e-3
    nu = 2.0
    it = 0
    while not converged and it < max_iter:
        it += 1
        g = jac.T @ e
        colnorm = np.linalg.norm(jac, axis=0)
        en = np.sqrt(cost)
        if en > 0 and np.max(np.abs(g) / np.where(colnorm > 0, colnorm, 1.0)) / en <= gtol:
            converged = True
            break
        jtj = jac.T @ jac
        diag = np.maximum(np.diag(jtj), 1e-30)
        while True:
            try:
                step = np.linalg.solve(jtj + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                step = None
            if step is not None:
                xn = x + step
                try:
                    en_vec, _ = prob.residual_jac(xn, want_jac=False)
                    cn = en_vec @ en_vec
                except FloatingPointError:
                    cn = np.inf
                pred = step @ (lam * diag * step - g)
                rho = (cost - cn) / pred if pred > 0 else -1.0
            else:
                rho = -1.0
            if rho > 0:
                x = xn
                lam *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
                nu = 2.0
                small_step = np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol)
                e, jac = prob.residual_jac(x)
                cost = e @ e
                if small_step or cost <= floor:
                    converged = True
                break
            lam *= nu
            nu *= 2.0
            if lam > 1e16:
                # no descent direction left at this precision
                converged = bool(np.linalg.norm(step) <= xtol * (np.linalg.norm(x) + xtol)) if step is not None else False
                break
        if lam > 1e16:
            break

    pa, ua, pc, uc = prob.unpack(x)
    centroid = points.mean(axis=0)
    if max(np.linalg.norm(pa - centroid), np.linalg.norm(pc - centroid)) > max_range:
        converged = False
    if np.linalg.norm(pa - pc) < 1e-3:
        warnings.warn("actuator and capsule estimates within 1 mm", DegenerateGeometryWarning, stacklevel=2)
    return MotEstimate(Pose5D(pa, ua), Pose5D(pc, uc), objective(e), bool(converged), it)


# --- heading from a moment sequence ------------------------------------------


@dataclass
class MomentBuffer:
    """Ring buffer of recent capsule 5-D poses."""

    capacity: int = 12
    entries: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 2:
            raise ValueError("buffer capacity must be at least 2")
        self.entries = deque(self.entries, maxlen=self.capacity)

    def push(self, t: float, pose: Pose5D):
        if self.entries and t <= self.entries[-1][0]:
            raise ValueError("buffer entries must be time ordered")
        self.entries.append((t, pose))

    @property
    def full(self) -> bool:
        return len(self.entries) == self.capacity

    def matrix(self) -> np.ndarray:
        """3 x n matrix of buffered unit moments, oldest first."""
        return np.column_stack([p.moment_dir for _, p in self.entries])

    def sweep(self) -> float:
        """Angle between the oldest and newest buffered moments (rad)."""
        a = self.entries[0][1].moment_dir
        b = self.entries[-1][1].moment_dir
        return float(np.arccos(np.clip(a @ b, -1.0, 1.0)))

    def clear(self):
        self.entries.clear()


def nvf_heading(buffer: MomentBuffer, prev_heading) -> np.ndarray:
    """Unit normal best orthogonal to every buffered moment.

    Smallest-eigenvalue eigenvector of ``M M^T``, signed to agree with
    ``prev_heading``.
    """
    if not buffer.full:
        raise ValueError("moment buffer is not full")
    m = buffer.matrix()
    w, v = np.linalg.eigh(m @ m.T)
    if w[1] - w[0] < 1e-12:
        raise DegenerateSpreadError("rotation plane is not resolved by the buffered moments")
    n = v[:, 0]
    if n @ np.asarray(prev_heading, dtype=float) < 0:
        n = -n
    return n / np.linalg.norm(n)


# --- tracker loop -------------------------------------------------------------


def rotate_about(v, axis, angle):
    """Rodrigues rotation of ``v`` about unit ``axis``."""
    k = _unit(axis)
    v = np.asarray(v, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    return v * c + cross3(k, v) * s + k * (k @ v) * (1.0 - c)


@dataclass
class StepRecord:
    time: float
    pose: Pose6D
    mot: MotEstimate
    center: tuple
    heading_updated: bool
    converged: bool


class Tracker:
    """Adaptive sub-array localisation loop.

    Each call to :meth:`step` selects and activates the window under the last
    capsule estimate, fits both dipoles warm-started from the previous fit,
    and refreshes the heading by normal-vector fitting once the buffered
    moments have swept at least ``theta_min``.

    Parameters
    ----------
    grid : SensorGrid
    mags : (actuator, capsule) moment magnitudes, A*m^2
    initial : starting 6-D capsule pose
    initial_actuator : starting actuator 5-D pose guess
    buffer_len, theta_min : NVF buffer length and minimum sweep (rad)
    spin_rate : commanded spin rate (rad/s) used to predict the capsule
        moment between frames; 0 disables prediction
    """

    def __init__(
        self,
        grid: SensorGrid,
        mags: tuple[float, float],
        initial: Pose6D,
        initial_actuator: Pose5D,
        buffer_len: int = 12,
        theta_min: float = np.radians(30.0),
        spin_rate: float = 0.0,
    ):
        self.grid = grid
        self.mags = mags
        self.pose = initial
        self.actuator = initial_actuator
        self.buffer = MomentBuffer(buffer_len)
        self.theta_min = theta_min
        self.spin_rate = spin_rate
        self.last_time: float | None = None
        self.last_mot: MotEstimate | None = None
        self.failures = 0

    def _seed(self, t, actuator_prior):
        m = self.pose.moment_dir
        if self.spin_rate and self.last_time is not None:
            m = rotate_about(m, self.pose.heading, self.spin_rate * (t - self.last_time))
        act = actuator_prior if actuator_prior is not None else self.actuator
        return MotEstimate(act, Pose5D(self.pose.position, m))

    def step(
        self,
        t: float,
        measure: Callable[[np.ndarray], Sequence[FieldSample]],
        actuator_prior: Pose5D | None = None,
    ) -> StepRecord:
        """Run one localisation update.

        ``measure`` maps the (8, 3) array of active sensor positions to field
        samples; ``actuator_prior`` optionally replaces the warm start for the
        actuator (e.g. the commanded pose).
        """
        center = select_subarray_center(self.pose.position[:2], self.grid)
        active = activate(center, self.grid)
        samples = measure(active.positions)
        init = self._seed(t, actuator_prior)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateGeometryWarning)
            est = solve_mot(samples, self.mags, init)
        self.last_mot = est
        if not est.converged or not np.isfinite(est.residual_norm):
            self.failures += 1
            self.last_time = t
            return StepRecord(t, self.pose, est, center, False, False)

        self.actuator = est.actuator
        self.buffer.push(t, est.capsule)
        heading = self.pose.heading
        updated = False
        if self.buffer.full and self.buffer.sweep() >= self.theta_min:
            try:
                heading = nvf_heading(self.buffer, heading)
                updated = True
            except DegenerateSpreadError:
                pass
        moment = orthogonalize(est.capsule.moment_dir, heading)
        self.pose = Pose6D(est.capsule.position, moment, heading)
        self.last_time = t
        return StepRecord(t, self.pose, est, center, updated, True)


def localize_step(tracker: Tracker, t: float, measure, actuator_prior=None) -> Pose6D:
    """Functional wrapper around :meth:`Tracker.step`."""
    return tracker.step(t, measure, actuator_prior).pose
