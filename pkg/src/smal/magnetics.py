"""Point-dipole field and dipole-dipole force.

All quantities are SI: positions in metres, moments in A*m^2, fields in
tesla, forces in newtons.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

MU0 = 4e-7 * np.pi
#: mu0 / 4pi, exactly 1e-7 T*m/A
KM = 1e-7

MIN_SEPARATION = 1e-6

# Datasheet remanences for the two NdFeB grades used on the rig.
REMANENCE_N42 = 1.32
REMANENCE_N38SH = 1.26


class SingularPointError(ValueError):
    """Raised when a field or force is requested at (or next to) a dipole."""


def _unit(v, name="vector"):
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise ValueError(f"{name} must be a non-zero finite 3-vector")
    return v / n


@dataclass(frozen=True)
class DipoleSource:
    """A magnet modelled as a point dipole.

    ``moment_dir`` is normalised on construction so the unit-norm invariant
    holds to rounding.
    """

    position: np.ndarray
    moment_dir: np.ndarray
    moment_mag: float

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(3)
        if not np.all(np.isfinite(pos)):
            raise ValueError("position must be finite")
        if not self.moment_mag > 0:
            raise ValueError("moment_mag must be positive")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "moment_dir", _unit(self.moment_dir, "moment_dir").reshape(3))
        object.__setattr__(self, "moment_mag", float(self.moment_mag))

    @property
    def moment(self) -> np.ndarray:
        return self.moment_mag * self.moment_dir


@dataclass(frozen=True)
class Sphere:
    diameter: float

    def __post_init__(self):
        if not self.diameter > 0:
            raise ValueError("sphere diameter must be positive")

    @property
    def volume(self) -> float:
        return np.pi * self.diameter**3 / 6.0


@dataclass(frozen=True)
class Ring:
    outer_d: float
    inner_d: float
    length: float

    def __post_init__(self):
        if not (self.outer_d > 0 and self.inner_d > 0 and self.length > 0):
            raise ValueError("ring dimensions must be positive")
        if not self.inner_d < self.outer_d:
            raise ValueError("ring inner diameter must be smaller than outer diameter")

    @property
    def volume(self) -> float:
        return np.pi / 4.0 * (self.outer_d**2 - self.inner_d**2) * self.length


@dataclass(frozen=True)
class MagnetSpec:
    shape: Union[Sphere, Ring]
    remanence: float

    def __post_init__(self):
        if self.remanence < 0:
            raise ValueError("remanence must be non-negative")


def actuator_spec() -> MagnetSpec:
    """50 mm N42 sphere carried by the arm."""
    return MagnetSpec(Sphere(0.050), REMANENCE_N42)


def capsule_spec() -> MagnetSpec:
    """12.8/9 x 15 mm N38SH ring inside the capsule shell."""
    return MagnetSpec(Ring(0.0128, 0.009, 0.015), REMANENCE_N38SH)


def moment_magnitude(spec: MagnetSpec) -> float:
    """Dipole moment of a uniformly magnetised magnet, ``Br * V / mu0``."""
    return spec.remanence * spec.shape.volume / MU0


def _check_r(r: np.ndarray) -> float:
    rn = float(np.linalg.norm(r))
    if not rn > MIN_SEPARATION:
        raise SingularPointError(f"separation {rn:.3e} m is below {MIN_SEPARATION:g} m")
    return rn


def dipole_field_vec(moment: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Field of a dipole with moment vector ``moment`` at offset ``r`` from it."""
    rn = _check_r(r)
    return KM / rn**5 * (3.0 * r * (r @ moment) - (r @ r) * moment)


def dipole_field(source: DipoleSource, point) -> np.ndarray:
    r = np.asarray(point, dtype=float) - source.position
    return dipole_field_vec(source.moment, r)


def superposed_field(sources: Iterable[DipoleSource], point) -> np.ndarray:
    b = np.zeros(3)
    for src in sources:
        b = b + dipole_field(src, point)
    return b


def dipole_force_vec(m_a: np.ndarray, m_c: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Force on dipole ``m_c`` produced by dipole ``m_a``; ``r`` points from a to c.

    Moments are full vectors (magnitude included).
    """
    rn = _check_r(r)
    rr = r @ r
    scalar = m_c @ (rr * m_a - 5.0 * r * (r @ m_a))
    return 3.0 * KM / rn**7 * (m_c * (m_a @ r) * rr + m_a * (m_c @ r) * rr + scalar * r)


def dipole_force(actuator: DipoleSource, capsule: DipoleSource) -> np.ndarray:
    r = capsule.position - actuator.position
    return dipole_force_vec(actuator.moment, capsule.moment, r)


def field_at_points(moments: np.ndarray, positions: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Vectorised field of several dipoles at several points.

    Parameters
    ----------
    moments : (K, 3) moment vectors
    positions : (K, 3) dipole positions
    points : (S, 3) evaluation points

    Returns
    -------
    (S, 3) superposed field
    """
    moments = np.atleast_2d(moments)
    positions = np.atleast_2d(positions)
    points = np.atleast_2d(points)
    r = points[:, None, :] - positions[None, :, :]  # (S, K, 3)
    r2 = np.einsum("skj,skj->sk", r, r)
    if np.any(r2 <= MIN_SEPARATION**2):
        raise SingularPointError("evaluation point coincides with a dipole")
    rm = np.einsum("skj,kj->sk", r, moments)
    inv5 = r2**-2.5
    b = KM * inv5[..., None] * (3.0 * r * rm[..., None] - r2[..., None] * moments[None, :, :])
    return b.sum(axis=1)


def as_sources(
    positions: Sequence, moment_dirs: Sequence, mags: Sequence[float]
) -> list[DipoleSource]:
    return [DipoleSource(p, m, g) for p, m, g in zip(positions, moment_dirs, mags)]
