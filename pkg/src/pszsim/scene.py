"""Experiment geometry: loudspeaker ring, sound zones, microphone grids, masks.

The layout mirrors the evaluation setup this package targets: a circular
loudspeaker array centered in a rectangular room, a bright and a dark zone
placed symmetrically about the room center along x, a coarse control grid and
a denser monitor grid per zone, and virtual sources drawn from an annulus
around the array center.  All geometry lives in one horizontal plane.

Flat grid indexing is row-major over (ix, iy): ``flat = ix * ny + iy``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np
import yaml

from .room import FrequencyGrid, Point3, RoomSpec, default_max_order


class GeometryError(ValueError):
    """Scene configuration produces geometry outside the room or zones."""


# Masking patterns as (points per side, spacing in control-grid cells).
# Each pattern selects the Cartesian product side x side on the control grid,
# centered via offset = floor((n - 1 - span) / 2) with span = (count-1)*interval.
MASK_PATTERNS: dict[str, tuple[int, int]] = {
    "Grid-12": (12, 1),
    "Grid-6": (6, 2),
    "Grid-4": (4, 3),
    "Grid-3#1": (3, 4),
    "Grid-3#2": (3, 3),
    "Grid-3#3": (3, 2),
    "Grid-2#1": (2, 6),
    "Grid-2#2": (2, 4),
    "Grid-2#3": (2, 1),
    "Grid-1": (1, 1),
}
MASK_NAMES: tuple[str, ...] = tuple(MASK_PATTERNS)


@dataclass(frozen=True)
class MaskPattern:
    """A named subset of control-grid side indices, applied to both axes."""

    name: str
    side_indices: tuple[int, ...]
    grid_size: int = 12

    def __post_init__(self) -> None:
        idx = self.side_indices
        if len(idx) == 0:
            raise ValueError("mask must select at least one index")
        if any(i < 0 or i >= self.grid_size for i in idx):
            raise ValueError(f"mask indices out of range 0..{self.grid_size - 1}: {idx}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"mask indices must be strictly ascending: {idx}")

    @property
    def num_points(self) -> int:
        return len(self.side_indices) ** 2

    def flat_indices(self) -> np.ndarray:
        """Selected flat indices on the row-major grid, ascending."""
        side = np.asarray(self.side_indices, dtype=np.int64)
        return (side[:, None] * self.grid_size + side[None, :]).ravel()


def mask_indices(pattern_name: str, grid_size: int = 12) -> MaskPattern:
    """Resolve a pattern name to its side indices on the control grid."""
    if pattern_name not in MASK_PATTERNS:
        raise ValueError(
            f"unknown mask pattern {pattern_name!r}; valid names: {', '.join(MASK_NAMES)}"
        )
    count, interval = MASK_PATTERNS[pattern_name]
    span = (count - 1) * interval
    offset = (grid_size - 1 - span) // 2
    side = tuple(offset + interval * i for i in range(count))
    return MaskPattern(name=pattern_name, side_indices=side, grid_size=grid_size)


def apply_mask(tensor: np.ndarray, pattern: MaskPattern) -> np.ndarray:
    """Zero out control-grid cells not selected by ``pattern``.

    ``tensor`` must have the two spatial grid axes last, e.g. (K, 12, 12).
    Unselected cells become exactly +0.0; selected cells are bit-identical
    copies of the input.
    """
    arr = np.asarray(tensor)
    n = pattern.grid_size
    if arr.ndim < 2 or arr.shape[-2:] != (n, n):
        raise ValueError(
            f"expected trailing spatial dims ({n}, {n}), got shape {arr.shape}"
        )
    out = np.zeros_like(arr)
    sel = np.asarray(pattern.side_indices, dtype=np.int64)
    out[..., sel[:, None], sel[None, :]] = arr[..., sel[:, None], sel[None, :]]
    return out


@dataclass(frozen=True)
class ZoneSpec:
    """A rectangular zone in the horizontal plane at ``center.z``."""

    center: Point3
    width: float = 0.4
    height: float = 0.4

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("zone width and height must be positive")


@dataclass(frozen=True)
class PointGrid:
    """Uniform nx x ny planar grid of points, row-major over (ix, iy)."""

    points: tuple[Point3, ...]
    nx: int
    ny: int
    spacing: float

    def __post_init__(self) -> None:
        if len(self.points) != self.nx * self.ny:
            raise ValueError("point count does not match nx * ny")

    def as_array(self) -> np.ndarray:
        return np.array([[p.x, p.y, p.z] for p in self.points], dtype=float)


@dataclass(frozen=True)
class LoudspeakerArray:
    """Circular loudspeaker layout with equal angular spacing."""

    positions: tuple[Point3, ...]
    center: Point3
    radius: float

    def __post_init__(self) -> None:
        for p in self.positions:
            r = math.hypot(p.x - self.center.x, p.y - self.center.y)
            if abs(r - self.radius) > 1e-12:
                raise ValueError(f"loudspeaker {p} is off the circle by {r - self.radius}")
        n = len(self.positions)
        angles = [
            math.atan2(p.y - self.center.y, p.x - self.center.x) for p in self.positions
        ]
        step = 2.0 * math.pi / n
        for i, a in enumerate(angles):
            expected = math.remainder(i * step, 2.0 * math.pi)
            if abs(math.remainder(a - expected, 2.0 * math.pi)) > 1e-9:
                raise ValueError("loudspeakers are not evenly spaced on the circle")

    def __len__(self) -> int:
        return len(self.positions)

    def as_array(self) -> np.ndarray:
        return np.array([[p.x, p.y, p.z] for p in self.positions], dtype=float)


@dataclass(frozen=True)
class SceneConfig:
    """Resolved scene parameters; the unit every experiment artifact embeds."""

    room_dims: tuple[float, float, float] = (8.0, 8.0, 3.0)
    rt60: float = 0.25
    speed_of_sound: float = 343.0
    num_loudspeakers: int = 30
    array_radius: float = 1.68
    zone_width: float = 0.4
    zone_height: float = 0.4
    zone_gap: float = 1.0
    control_n: int = 12
    monitor_n: int = 17
    plane_height: float = 1.5
    num_freqs: int = 128
    f_max: float = 2000.0
    vsrc_r_min: float = 1.7
    vsrc_r_max: float = 3.5
    ism_max_order: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "room_dims", tuple(float(d) for d in self.room_dims))
        for name in (
            "num_loudspeakers",
            "array_radius",
            "zone_width",
            "zone_height",
            "zone_gap",
            "control_n",
            "monitor_n",
            "num_freqs",
            "f_max",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"scene config field {name} must be positive")
        if self.vsrc_r_min <= 0 or self.vsrc_r_max <= self.vsrc_r_min:
            raise ValueError("virtual source radii must satisfy 0 < r_min < r_max")
        if self.ism_max_order is not None and self.ism_max_order < 0:
            raise ValueError("ism_max_order must be >= 0")

    @classmethod
    def from_dict(cls, raw: dict) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown scene config keys: {sorted(unknown)}")
        return cls(**raw)

    @classmethod
    def from_yaml(cls, path) -> "SceneConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ValueError(f"scene config {path} must be a key-value mapping")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _make_grid(center: Point3, width: float, height: float, n: int) -> PointGrid:
    if width != height:
        raise GeometryError("microphone grids require square zones")
    spacing = width / (n - 1) if n > 1 else 0.0
    x0 = center.x - width / 2
    y0 = center.y - height / 2
    points = tuple(
        Point3(x0 + ix * spacing, y0 + iy * spacing, center.z)
        for ix in range(n)
        for iy in range(n)
    )
    return PointGrid(points=points, nx=n, ny=n, spacing=spacing)


@dataclass(frozen=True)
class Scene:
    """A fully constructed experiment scene."""

    config: SceneConfig
    room: RoomSpec
    array: LoudspeakerArray
    zone_bright: ZoneSpec
    zone_dark: ZoneSpec
    control_bright: PointGrid
    control_dark: PointGrid
    monitor_bright: PointGrid
    monitor_dark: PointGrid
    freq_grid: FrequencyGrid

    @property
    def max_order(self) -> int:
        if self.config.ism_max_order is not None:
            return self.config.ism_max_order
        return default_max_order(self.room)

    def control_points(self) -> list[Point3]:
        """All control points, bright zone first then dark zone."""
        return list(self.control_bright.points) + list(self.control_dark.points)

    def monitor_points(self) -> list[Point3]:
        """All monitor points, bright zone first then dark zone."""
        return list(self.monitor_bright.points) + list(self.monitor_dark.points)

    def nearest_speaker_index(self, point: Point3) -> int:
        dists = [point.distance_to(p) for p in self.array.positions]
        return int(np.argmin(dists))

    def reference_speaker_index(self) -> int:
        """Reference loudspeaker for effort metrics: nearest to the BZ center."""
        return self.nearest_speaker_index(self.zone_bright.center)

    def sample_virtual_source(self, rng: np.random.Generator) -> Point3:
        return sample_virtual_source(
            rng,
            center=self.array.center,
            r_min=self.config.vsrc_r_min,
            r_max=self.config.vsrc_r_max,
            room=self.room,
        )


def make_scene(config: SceneConfig) -> Scene:
    """Build the full scene geometry from a resolved configuration.

    Zone centers sit symmetrically about the room center along x with an
    edge-to-edge gap of ``zone_gap`` (bright zone on the -x side).  Control
    and monitor grids span exactly the zone footprint.  Raises
    :class:`GeometryError` if anything falls outside the room.
    """
    room = RoomSpec(
        dims=config.room_dims, rt60=config.rt60, speed_of_sound=config.speed_of_sound
    )
    cx, cy = room.dims[0] / 2, room.dims[1] / 2
    z = config.plane_height
    if not 0 < z < room.dims[2]:
        raise GeometryError(f"plane height {z} outside the room height {room.dims[2]}")
    array_center = Point3(cx, cy, z)

    n_spk = config.num_loudspeakers
    speaker_positions = tuple(
        Point3(
            cx + config.array_radius * math.cos(2.0 * math.pi * l / n_spk),
            cy + config.array_radius * math.sin(2.0 * math.pi * l / n_spk),
            z,
        )
        for l in range(n_spk)
    )
    array = LoudspeakerArray(
        positions=speaker_positions, center=array_center, radius=config.array_radius
    )

    half_offset = config.zone_gap / 2 + config.zone_width / 2
    zone_b = ZoneSpec(
        center=Point3(cx - half_offset, cy, z),
        width=config.zone_width,
        height=config.zone_height,
    )
    zone_d = ZoneSpec(
        center=Point3(cx + half_offset, cy, z),
        width=config.zone_width,
        height=config.zone_height,
    )

    grids = {
        "control_bright": _make_grid(zone_b.center, zone_b.width, zone_b.height, config.control_n),
        "control_dark": _make_grid(zone_d.center, zone_d.width, zone_d.height, config.control_n),
        "monitor_bright": _make_grid(zone_b.center, zone_b.width, zone_b.height, config.monitor_n),
        "monitor_dark": _make_grid(zone_d.center, zone_d.width, zone_d.height, config.monitor_n),
    }

    for p in speaker_positions:
        if not room.contains(p):
            raise GeometryError(f"loudspeaker {p} lies outside the room")
    for name, grid in grids.items():
        for p in grid.points:
            if not room.contains(p):
                raise GeometryError(f"{name} point {p} lies outside the room")
    vr = config.vsrc_r_max
    for dx, dy in ((vr, 0.0), (-vr, 0.0), (0.0, vr), (0.0, -vr)):
        if not room.contains(Point3(cx + dx, cy + dy, z)):
            raise GeometryError(
                f"virtual source annulus (r_max={vr}) does not fit inside the room"
            )

    freq_grid = FrequencyGrid.uniform(num=config.num_freqs, f_max=config.f_max)
    return Scene(
        config=config,
        room=room,
        array=array,
        zone_bright=zone_b,
        zone_dark=zone_d,
        freq_grid=freq_grid,
        **grids,
    )


def sample_virtual_source(
    rng: np.random.Generator,
    center: Point3,
    r_min: float = 1.7,
    r_max: float = 3.5,
    room: RoomSpec | None = None,
) -> Point3:
    """Draw a virtual source uniformly over an annulus around ``center``.

    The angle is uniform on [0, 2pi) and the radius has density proportional
    to r, i.e. the point is uniform over the annulus area.  The draw order
    (angle, then radius) is fixed so sequences are reproducible per seed.
    """
    theta = rng.uniform(0.0, 2.0 * math.pi)
    r = math.sqrt(rng.uniform(r_min * r_min, r_max * r_max))
    p = Point3(center.x + r * math.cos(theta), center.y + r * math.sin(theta), center.z)
    if room is not None and not room.contains(p):
        raise GeometryError(f"sampled virtual source {p} lies outside the room")
    return p
