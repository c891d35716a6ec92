"""Planar magnetometer grid, symmetric sub-array layouts and measurement synthesis."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .magnetics import DipoleSource, field_at_points

FOUR_BY_FOUR = "four_by_four"
FIVE_BY_FIVE = "five_by_five"
_GRID_SIZE = {FOUR_BY_FOUR: 4, FIVE_BY_FIVE: 5}


@dataclass(frozen=True)
class SensorGrid:
    """Full ``nx`` x ``ny`` array; sensor (i, j) sits at ``origin + (i*D, j*D, 0)``."""

    nx: int = 8
    ny: int = 10
    spacing: float = 0.06
    origin: tuple = (0.0, 0.0, 0.0)
    noise_sigma: float = 0.6e-6

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3:
            raise ValueError("grid needs at least 3x3 sensors")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    def position(self, i: int, j: int) -> np.ndarray:
        return np.asarray(self.origin) + np.array([i * self.spacing, j * self.spacing, 0.0])

    @property
    def extent(self) -> tuple[float, float]:
        return ((self.nx - 1) * self.spacing, (self.ny - 1) * self.spacing)


@dataclass(frozen=True)
class SubArrayLayout:
    """A 4-fold symmetric choice of cells in a 4x4 or 5x5 candidate grid."""

    grid_kind: str
    offsets: frozenset
    sensor_count: int
    layout_id: str = ""

    def __post_init__(self):
        if self.grid_kind not in _GRID_SIZE:
            raise ValueError(f"unknown grid kind {self.grid_kind!r}")
        offs = frozenset((int(r), int(c)) for r, c in self.offsets)
        object.__setattr__(self, "offsets", offs)
        n = _GRID_SIZE[self.grid_kind]
        if len(offs) != self.sensor_count or self.sensor_count not in (8, 9):
            raise ValueError("sensor_count must be 8 or 9 and match the offsets")
        if any(not (0 <= r < n and 0 <= c < n) for r, c in offs):
            raise ValueError("offset outside the candidate grid")
        if {_rotate(o, n) for o in offs} != offs:
            raise ValueError("layout is not closed under 90 degree rotation")
        centre = (n // 2, n // 2)
        if self.sensor_count == 9 and (n % 2 == 0 or centre not in offs):
            raise ValueError("a 9-sensor layout must include the centre of a 5x5 grid")

    @property
    def grid_size(self) -> int:
        return _GRID_SIZE[self.grid_kind]

    def positions(self, centre_xy, pitch: float, z: float = 0.0) -> np.ndarray:
        """World positions with the candidate grid centred on ``centre_xy``."""
        half = (self.grid_size - 1) / 2.0
        cells = np.array(sorted(self.offsets), dtype=float)
        xy = (cells - half) * pitch + np.asarray(centre_xy, dtype=float)[:2]
        return np.column_stack([xy, np.full(len(cells), z)])

    def footprint(self, pitch: float) -> float:
        """Side length of the candidate grid at the given pitch."""
        return (self.grid_size - 1) * pitch

    def to_dict(self) -> dict:
        return {
            "layout_id": self.layout_id,
            "grid_kind": self.grid_kind,
            "offsets": [list(o) for o in sorted(self.offsets)],
            "sensor_count": self.sensor_count,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SubArrayLayout":
        return cls(d["grid_kind"], frozenset(map(tuple, d["offsets"])), d["sensor_count"], d.get("layout_id", ""))


def _rotate(cell, n):
    # 90 degree rotation about the grid centre
    r, c = cell
    return (c, n - 1 - r)


def rotation_orbits(n: int) -> list[frozenset]:
    """Partition the n x n cells into orbits under 90 degree rotation.

    The centre cell (odd n) is a fixed point and is excluded.
    """
    seen = set()
    orbits = []
    for cell in itertools.product(range(n), range(n)):
        if cell in seen:
            continue
        orbit = {cell}
        nxt = _rotate(cell, n)
        while nxt not in orbit:
            orbit.add(nxt)
            nxt = _rotate(nxt, n)
        seen |= orbit
        if len(orbit) == 4:
            orbits.append(frozenset(orbit))
    return orbits


def enumerate_layouts() -> list[SubArrayLayout]:
    """All 36 candidate layouts: 6 + 15 with 8 sensors, 15 with 9 sensors."""
    layouts = []
    for kind in (FOUR_BY_FOUR, FIVE_BY_FIVE):
        n = _GRID_SIZE[kind]
        for k, (a, b) in enumerate(itertools.combinations(rotation_orbits(n), 2)):
            layouts.append(SubArrayLayout(kind, a | b, 8, f"{n}x{n}-8-{k:02d}"))
    centre = frozenset({(2, 2)})
    for k, (a, b) in enumerate(itertools.combinations(rotation_orbits(5), 2)):
        layouts.append(SubArrayLayout(FIVE_BY_FIVE, a | b | centre, 9, f"5x5-9-{k:02d}"))
    return layouts


def window_layout() -> SubArrayLayout:
    """The runtime 3x3-minus-centre window expressed as a 5x5 candidate layout.

    At a candidate pitch of D/2 this is geometrically the window activated at
    run time (corners plus edge midpoints of the 5x5 grid).
    """
    offs = {(0, 0), (0, 2), (0, 4), (2, 0), (2, 4), (4, 0), (4, 2), (4, 4)}
    for lay in enumerate_layouts():
        if lay.offsets == offs:
            return lay
    raise AssertionError("window layout missing from the enumeration")


def layouts_to_json(layouts: Iterable[SubArrayLayout]) -> str:
    return json.dumps([lay.to_dict() for lay in layouts], indent=2) + "\n"


def select_subarray_center(capsule_xy, grid: SensorGrid) -> tuple[int, int]:
    """Centre index of the active window, clamped so the 3x3 window fits."""
    rel = np.asarray(capsule_xy, dtype=float)[:2] - np.asarray(grid.origin)[:2]
    out = []
    for p, n in zip(rel, (grid.nx, grid.ny)):
        # np.round is banker's rounding; the window choice wants half-up
        k = int(np.floor(p / grid.spacing + 0.5))
        out.append(min(max(k, 1), n - 2))
    return out[0], out[1]


@dataclass(frozen=True)
class ActiveSubArray:
    center_index: tuple
    sensor_indices: tuple
    positions: np.ndarray = field(repr=False)


def activate(center, grid: SensorGrid) -> ActiveSubArray:
    cx, cy = (int(v) for v in center)
    if not (1 <= cx <= grid.nx - 2 and 1 <= cy <= grid.ny - 2):
        raise IndexError(f"centre {(cx, cy)} leaves the 3x3 window outside the grid")
    idx = tuple(
        (cx + di, cy + dj)
        for di in (-1, 0, 1)
        for dj in (-1, 0, 1)
        if (di, dj) != (0, 0)
    )
    pos = np.array([grid.position(i, j) for i, j in idx])
    return ActiveSubArray((cx, cy), idx, pos)


@dataclass(frozen=True)
class FieldSample:
    position: np.ndarray
    field: np.ndarray


def synthesize(
    positions: np.ndarray,
    sources: Sequence[DipoleSource],
    noise_sigma: float,
    rng: np.random.Generator | None,
) -> np.ndarray:
    """Noisy superposed field at ``positions``; returns an (S, 3) array."""
    positions = np.atleast_2d(positions)
    if sources:
        moments = np.array([s.moment for s in sources])
        centres = np.array([s.position for s in sources])
        b = field_at_points(moments, centres, positions)
    else:
        b = np.zeros_like(positions)
    if noise_sigma > 0:
        b = b + rng.normal(0.0, noise_sigma, size=b.shape)
    return b


def measure(
    active: ActiveSubArray,
    sources: Sequence[DipoleSource],
    rng: np.random.Generator,
    noise_sigma: float,
) -> list[FieldSample]:
    b = synthesize(active.positions, sources, noise_sigma, rng)
    return [FieldSample(p.copy(), v) for p, v in zip(active.positions, b)]
