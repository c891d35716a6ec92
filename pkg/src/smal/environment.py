"""Tube centre-line geometry and the quasi-static capsule motion model."""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass, replace
from typing import Sequence, Union

import numpy as np

from .actuation import GAMMA_CRITICAL, ActuatorCommand, capsule_frame
from .localization import rotate_about
from .magnetics import dipole_field_vec
from .numerics import cross3


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@dataclass(frozen=True)
class Straight:
    length: float

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError("straight length must be positive")

    kind = "straight"


@dataclass(frozen=True)
class Arc:
    radius: float
    sweep: float
    turn_axis: tuple = (0.0, 0.0, 1.0)

    def __post_init__(self):
        if not (self.radius > 0 and self.sweep > 0):
            raise ValueError("arc radius and sweep must be positive")
        object.__setattr__(self, "turn_axis", tuple(_unit(self.turn_axis)))

    kind = "bend"

    @property
    def length(self) -> float:
        return self.radius * self.sweep


Segment = Union[Straight, Arc]


class TubePath:
    """Piecewise straight / circular-arc centre line, parametrised by arclength.

    Arcs turn the tangent positively about their ``turn_axis``, which must be
    perpendicular to the incoming tangent.
    """

    def __init__(self, segments: Sequence[Segment], start_position, start_tangent, tube_inner_diameter: float = 0.018):
        if not segments:
            raise ValueError("path needs at least one segment")
        self.segments = tuple(segments)
        self.tube_inner_diameter = float(tube_inner_diameter)
        self.start_position = np.asarray(start_position, dtype=float)
        self.start_tangent = _unit(start_tangent)
        self._starts = []  # (s0, position, tangent)
        s, p, t = 0.0, self.start_position.copy(), self.start_tangent.copy()
        for seg in self.segments:
            if isinstance(seg, Arc) and abs(np.asarray(seg.turn_axis) @ t) > 1e-9:
                raise ValueError("arc turn axis must be perpendicular to the incoming tangent")
            self._starts.append((s, p, t))
            p, t, _ = self._local(seg, p, t, seg.length)
            s += seg.length
        self.total_length = s
        self._breaks = [st[0] for st in self._starts]

    @staticmethod
    def _local(seg, p0, t0, u):
        if isinstance(seg, Straight):
            return p0 + u * t0, t0.copy(), 0.0
        axis = np.asarray(seg.turn_axis)
        n = cross3(axis, t0)
        centre = p0 + seg.radius * n
        phi = u / seg.radius
        p = centre + rotate_about(p0 - centre, axis, phi)
        t = rotate_about(t0, axis, phi)
        return p, t / np.linalg.norm(t), 1.0 / seg.radius

    def segment_index(self, s: float) -> int:
        if not (-1e-12 <= s <= self.total_length + 1e-12):
            raise ValueError(f"arclength {s} outside [0, {self.total_length}]")
        return max(0, min(bisect.bisect_right(self._breaks, s) - 1, len(self.segments) - 1))

    def segment_start(self, k: int) -> float:
        return self._breaks[k]

    def pose_at(self, s: float):
        """(position, unit tangent, curvature) at arclength ``s``."""
        k = self.segment_index(s)
        s0, p0, t0 = self._starts[k]
        return self._local(self.segments[k], p0, t0, min(max(s - s0, 0.0), self.segments[k].length))

    def to_dict(self) -> dict:
        segs = []
        for seg in self.segments:
            if isinstance(seg, Straight):
                segs.append({"type": "straight", "length": seg.length})
            else:
                segs.append({"type": "arc", "radius": seg.radius, "sweep_deg": float(np.degrees(seg.sweep)),
                             "turn_axis": list(seg.turn_axis)})
        return {
            "start_position": self.start_position.tolist(),
            "start_tangent": self.start_tangent.tolist(),
            "tube_inner_diameter": self.tube_inner_diameter,
            "segments": segs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TubePath":
        allowed = {"start_position", "start_tangent", "tube_inner_diameter", "segments"}
        unknown = set(d) - allowed
        if unknown:
            raise ValueError(f"unknown path keys: {sorted(unknown)}")
        segs = []
        for k, sd in enumerate(d["segments"]):
            kind = sd.get("type")
            if kind == "straight":
                extra = set(sd) - {"type", "length"}
                if extra:
                    raise ValueError(f"segments[{k}]: unknown keys {sorted(extra)}")
                segs.append(Straight(float(sd["length"])))
            elif kind == "arc":
                extra = set(sd) - {"type", "radius", "sweep_deg", "turn_axis"}
                if extra:
                    raise ValueError(f"segments[{k}]: unknown keys {sorted(extra)}")
                segs.append(Arc(float(sd["radius"]), np.radians(float(sd["sweep_deg"])),
                                tuple(sd.get("turn_axis", (0.0, 0.0, 1.0)))))
            else:
                raise ValueError(f"segments[{k}]: unknown segment type {kind!r}")
        return cls(segs, d["start_position"], d["start_tangent"], d.get("tube_inner_diameter", 0.018))

    @classmethod
    def from_json(cls, text: str) -> "TubePath":
        return cls.from_dict(json.loads(text))


def u_path(straight: float, radius: float, start=(0.0, 0.0, 0.0), tangent=(1.0, 0.0, 0.0), diameter=0.018) -> TubePath:
    """Straight, 180 degree left turn, straight back."""
    return TubePath([Straight(straight), Arc(radius, np.pi), Straight(straight)], start, tangent, diameter)


@dataclass(frozen=True)
class ResistanceModel:
    """Threshold-viscous resistance: static threshold grows with curvature.

    Defaults (N, N*m, N*s/m) put the U-tube bend speed at alpha = 15 deg near
    half the straight-lumen speed.
    """

    static_threshold: float = 5e-5
    curvature_gain: float = 6e-5
    viscous_coeff: float = 0.5

    def __post_init__(self):
        if self.static_threshold < 0 or self.curvature_gain < 0:
            raise ValueError("resistance terms must be non-negative")
        if not self.viscous_coeff > 0:
            raise ValueError("viscous_coeff must be positive")

    def threshold(self, curvature: float) -> float:
        return self.static_threshold + self.curvature_gain * curvature


@dataclass(frozen=True)
class CapsuleState:
    s: float = 0.0
    v: float = 0.0
    spin_phase: float = 0.0
    synchronous: bool = True


def advance(
    state: CapsuleState,
    f_p: float,
    model: ResistanceModel,
    curvature: float,
    dt: float,
    total_length: float = np.inf,
    spin_rate: float = 0.0,
) -> CapsuleState:
    """Step the capsule along the tube under propulsive force ``f_p`` (N)."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    f_r = model.threshold(curvature)
    if abs(f_p) <= f_r:
        v = 0.0
    else:
        v = np.sign(f_p) * (abs(f_p) - f_r) / model.viscous_coeff
    s = min(max(state.s + v * dt, 0.0), total_length)
    phase = state.spin_phase + spin_rate * dt if state.synchronous else state.spin_phase
    return replace(state, s=s, v=v, spin_phase=phase)


def sync_state(gamma: float) -> bool:
    """Synchronous rotation holds while the field axis is within 45 deg of the heading."""
    return gamma <= GAMMA_CRITICAL


def moment_from_phase(tangent, phase: float) -> np.ndarray:
    """Radial moment at ``phase`` measured in the capsule frame (from z towards y)."""
    fr = capsule_frame(np.zeros(3), tangent)
    return np.cos(phase) * fr.z_axis + np.sin(phase) * fr.y_axis


def phase_of(tangent, moment) -> float:
    fr = capsule_frame(np.zeros(3), tangent)
    return float(np.arctan2(moment @ fr.y_axis, moment @ fr.z_axis))


def constrained_moment(field, tangent) -> np.ndarray:
    """Unit projection of ``field`` onto the plane normal to ``tangent``."""
    t = _unit(tangent)
    m = np.asarray(field, dtype=float) - (field @ t) * t
    n = np.linalg.norm(m)
    if n < 1e-15 * max(np.linalg.norm(field), 1e-300):
        raise ValueError("field parallel to the tube axis; capsule moment undefined")
    return m / n


def true_capsule_moment(state: CapsuleState, path: TubePath, command: ActuatorCommand, t: float) -> np.ndarray:
    """Ground-truth capsule moment.

    While synchronous the ring follows the wall-constrained field; once
    desynchronised it keeps the moment it had at ``state.spin_phase``.
    """
    p, tan, _ = path.pose_at(state.s)
    if not state.synchronous:
        return moment_from_phase(tan, state.spin_phase)
    m_a = command.moment_dir(command.phase_at(t))
    b = dipole_field_vec(m_a, p - command.position)
    return constrained_moment(b, tan)
