"""Frequency-domain room acoustics for rectangular rooms via the image source method.

Acoustic transfer functions are computed directly in the frequency domain by
summing free-field Green's functions over mirror-image sources.  No time-domain
impulse response is ever synthesized, so no sampling rate, truncation window,
or inverse transform enters the pipeline.

Conventions
-----------
* Rooms are axis-aligned boxes with one corner at the origin.
* The free-field Green's function is ``exp(-j*2*pi*f*d/c) / (4*pi*d)``.
* Wall reflections are frequency-independent with a single coefficient
  ``beta`` shared by all six walls, derived from RT60 by Sabine inversion.
* An image's amplitude is ``beta**n`` where ``n`` is its total reflection
  count; ``max_order`` caps that total count.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

SPEED_OF_SOUND = 343.0
SABINE_CONSTANT = 0.1611
MAX_FREQUENCY_HZ = 2000.0
DEFAULT_NUM_FREQUENCIES = 512

# Peak complex128 scratch per receiver batch in simulate_atf (~128 MB).
_BATCH_ELEMENT_CAP = 8_000_000


@dataclass(frozen=True)
class Point3:
    """A position in meters."""

    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    def distance_to(self, other: "Point3") -> float:
        return math.dist((self.x, self.y, self.z), (other.x, other.y, other.z))


@dataclass(frozen=True)
class RoomSpec:
    """Rectangular room geometry with a target reverberation time.

    Parameters
    ----------
    dims : (Lx, Ly, Lz) in meters, all > 0.
    rt60 : reverberation time in seconds; 0 means anechoic walls.
    speed_of_sound : m/s.
    """

    dims: tuple[float, float, float]
    rt60: float
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self) -> None:
        object.__setattr__(self, "dims", tuple(float(d) for d in self.dims))
        if len(self.dims) != 3 or not all(
            math.isfinite(d) and d > 0 for d in self.dims
        ):
            raise ValueError(f"room dims must be three positive lengths, got {self.dims}")
        if not math.isfinite(self.rt60) or self.rt60 < 0:
            raise ValueError(f"rt60 must be finite and >= 0, got {self.rt60}")
        if not math.isfinite(self.speed_of_sound) or self.speed_of_sound <= 0:
            raise ValueError(f"speed_of_sound must be positive, got {self.speed_of_sound}")
        if self.rt60 > 0:
            rt60_to_reflection(self)  # raises if the combination is unphysical

    @property
    def volume(self) -> float:
        lx, ly, lz = self.dims
        return lx * ly * lz

    @property
    def surface_area(self) -> float:
        lx, ly, lz = self.dims
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    @property
    def center(self) -> Point3:
        return Point3(self.dims[0] / 2, self.dims[1] / 2, self.dims[2] / 2)

    @cached_property
    def reflection(self) -> float:
        """Uniform wall reflection coefficient; 0 for an anechoic room."""
        if self.rt60 == 0:
            return 0.0
        return rt60_to_reflection(self)

    def contains(self, point: Point3, margin: float = 0.0) -> bool:
        """True if ``point`` lies strictly inside the room (minus ``margin``)."""
        return all(
            margin < c < d - margin
            for c, d in zip((point.x, point.y, point.z), self.dims)
        )


@dataclass(frozen=True)
class FrequencyGrid:
    """Strictly ascending frequencies in Hz, all within [0, 2000]."""

    freqs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.freqs) == 0:
            raise ValueError("frequency grid must be non-empty")
        arr = np.asarray(self.freqs, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError("frequencies must be finite")
        if np.any(np.diff(arr) <= 0):
            raise ValueError("frequencies must be strictly ascending")
        if arr[0] < 0 or arr[-1] > MAX_FREQUENCY_HZ:
            raise ValueError(
                f"frequencies must lie within [0, {MAX_FREQUENCY_HZ}] Hz, "
                f"got range [{arr[0]}, {arr[-1]}]"
            )

    @classmethod
    def uniform(
        cls,
        num: int = DEFAULT_NUM_FREQUENCIES,
        f_max: float = MAX_FREQUENCY_HZ,
    ) -> "FrequencyGrid":
        """``num`` evenly spaced bins on [0, f_max], DC included."""
        if num < 2:
            raise ValueError("uniform grid needs at least 2 bins")
        return cls(tuple(np.linspace(0.0, f_max, num).tolist()))

    @cached_property
    def values(self) -> np.ndarray:
        return np.asarray(self.freqs, dtype=float)

    @cached_property
    def is_uniform(self) -> bool:
        if len(self.freqs) < 2:
            return True
        d = np.diff(self.values)
        return bool(np.all(np.abs(d - d[0]) <= 1e-9 * max(abs(d[0]), 1.0)))

    def __len__(self) -> int:
        return len(self.freqs)


@dataclass
class ATFTensor:
    """Complex acoustic transfer functions, shape (K, M, L).

    Axis order is frequency x receiver x source.
    """

    data: np.ndarray
    freq_grid: FrequencyGrid

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.ndim != 3:
            raise ValueError(f"ATF tensor must be 3-D (K, M, L), got shape {self.data.shape}")
        if self.data.shape[0] != len(self.freq_grid):
            raise ValueError(
                f"frequency axis {self.data.shape[0]} does not match grid of "
                f"length {len(self.freq_grid)}"
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("ATF tensor contains non-finite entries")

    @property
    def num_receivers(self) -> int:
        return self.data.shape[1]

    @property
    def num_sources(self) -> int:
        return self.data.shape[2]


def rt60_to_reflection(room: RoomSpec) -> float:
    """Uniform wall reflection coefficient from RT60 by Sabine inversion.

    ``alpha = 0.1611 * V / (S * rt60)`` with V the volume and S the total wall
    area, then ``beta = sqrt(1 - alpha)``, shared by all six walls.

    Raises
    ------
    ValueError
        If ``rt60 <= 0`` or the implied absorption is >= 1 (the room cannot
        decay that fast).
    """
    if room.rt60 <= 0:
        raise ValueError("rt60 must be > 0 to derive a reflection coefficient")
    alpha = SABINE_CONSTANT * room.volume / (room.surface_area * room.rt60)
    if alpha >= 1.0:
        raise ValueError(
            f"room/RT60 combination is unphysical: Sabine absorption {alpha:.4f} >= 1"
        )
    return math.sqrt(1.0 - alpha)


def green_free_field(
    src: Point3,
    rcv: Point3,
    freq: float,
    speed_of_sound: float = SPEED_OF_SOUND,
) -> complex:
    """Free-field Green's function ``exp(-j*2*pi*f*d/c) / (4*pi*d)``."""
    d = src.distance_to(rcv)
    if d == 0:
        raise ValueError("source and receiver coincide: Green's function is singular")
    return cmath.exp(-2j * math.pi * freq * d / speed_of_sound) / (4.0 * math.pi * d)


def default_max_order(room: RoomSpec) -> int:
    """Total-reflection-count cap so the latest kept image arrives after RT60."""
    if room.rt60 == 0:
        return 0
    return math.ceil(room.speed_of_sound * room.rt60 / min(room.dims)) + 1


def _axis_images(
    length: float, coord: float, max_order: int
) -> tuple[np.ndarray, np.ndarray]:
    """Image positions and reflection counts along one axis, count ascending."""
    pos: list[float] = []
    count: list[int] = []
    r_max = max_order // 2 + 1
    for p in (0, 1):
        for r in range(-r_max, r_max + 1):
            c = abs(r + p) + abs(r)
            if c > max_order:
                continue
            pos.append((1 - 2 * p) * (coord + 2.0 * r * length))
            count.append(c)
    order = sorted(range(len(pos)), key=lambda i: (count[i], pos[i]))
    return (
        np.array([pos[i] for i in order], dtype=float),
        np.array([count[i] for i in order], dtype=np.int64),
    )


def _image_arrays(
    room: RoomSpec, src: Point3, max_order: int
) -> tuple[np.ndarray, np.ndarray]:
    """Image positions (N, 3) and amplitudes (N,) with total count <= max_order.

    Enumeration order is deterministic: ascending total reflection count, with
    ties broken by the per-axis enumeration; the direct path is always entry 0.
    """
    if max_order < 0:
        raise ValueError("max_order must be >= 0")
    if not room.contains(src):
        raise ValueError(f"source {src} is not strictly inside the room")
    beta = room.reflection
    px, cx = _axis_images(room.dims[0], src.x, max_order)
    py, cy = _axis_images(room.dims[1], src.y, max_order)
    pz, cz = _axis_images(room.dims[2], src.z, max_order)
    total = (
        cx[:, None, None] + cy[None, :, None] + cz[None, None, :]
    )
    keep = total <= max_order
    gx, gy, gz = np.broadcast_arrays(
        px[:, None, None], py[None, :, None], pz[None, None, :]
    )
    pos_arr = np.stack([gx[keep], gy[keep], gz[keep]], axis=1)
    count_arr = total[keep]
    order = np.argsort(count_arr, kind="stable")
    pos_arr = pos_arr[order]
    count_arr = count_arr[order]
    amps = np.power(beta, count_arr.astype(float))
    return pos_arr, amps


def image_sources(
    room: RoomSpec, src: Point3, max_order: int
) -> list[tuple[Point3, float]]:
    """Mirror-image expansion of ``src`` up to a total reflection count.

    Returns
    -------
    list of (Point3, amplitude)
        Amplitude is ``beta**count``; the zero-order entry is ``(src, 1.0)``.
    """
    pos, amps = _image_arrays(room, src, max_order)
    return [
        (Point3(float(p[0]), float(p[1]), float(p[2])), float(a))
        for p, a in zip(pos, amps)
    ]


def _phasor_sum(
    weights: np.ndarray,
    dists: np.ndarray,
    freqs: FrequencyGrid,
    speed_of_sound: float,
) -> np.ndarray:
    """Sum ``weights * exp(-j*2*pi*f*d/c)`` over the image axis.

    ``weights`` and ``dists`` have shape (n_img, M); the result is (M, K).
    The summation order over images is fixed, so results do not depend on how
    receivers are batched.
    """
    f = freqs.values
    k_count = len(f)
    n_img, n_rcv = dists.shape
    out = np.empty((n_rcv, k_count), dtype=complex)
    batch = max(1, _BATCH_ELEMENT_CAP // max(1, n_img * k_count))
    wavenum = 2.0 * math.pi / speed_of_sound
    for start in range(0, n_rcv, batch):
        sl = slice(start, min(start + batch, n_rcv))
        d = dists[:, sl]
        w = weights[:, sl]
        if freqs.is_uniform and k_count > 1:
            # f_k = f_0 + k*step: seed with the f_0 term, then accumulate the
            # per-step phasor along the frequency axis.
            step = f[1] - f[0]
            terms = np.empty((n_img, d.shape[1], k_count), dtype=complex)
            terms[:, :, 0] = w * np.exp(-1j * wavenum * f[0] * d)
            terms[:, :, 1:] = np.exp(-1j * wavenum * step * d)[:, :, None]
            np.multiply.accumulate(terms, axis=2, out=terms)
        else:
            terms = w[:, :, None] * np.exp(-1j * wavenum * d[:, :, None] * f)
        out[sl] = terms.sum(axis=0)
    return out


def simulate_atf(
    room: RoomSpec,
    sources: Sequence[Point3],
    receivers: Sequence[Point3],
    freqs: FrequencyGrid,
    max_order: int | None = None,
) -> ATFTensor:
    """Image-source acoustic transfer functions for all source/receiver pairs.

    Parameters
    ----------
    room : RoomSpec
    sources, receivers : points strictly inside the room.
    freqs : evaluation frequencies.
    max_order : total reflection count cap; defaults to
        :func:`default_max_order` for the room.

    Returns
    -------
    ATFTensor
        Shape (K, M, L): ``H[k, m, l]`` is the response from source ``l`` to
        receiver ``m`` at frequency ``k``.  Deterministic for fixed inputs.
    """
    if max_order is None:
        max_order = default_max_order(room)
    for p in receivers:
        if not room.contains(p):
            raise ValueError(f"receiver {p} is not strictly inside the room")
    rcv = np.array([[p.x, p.y, p.z] for p in receivers], dtype=float)
    data = np.empty((len(freqs), len(receivers), len(sources)), dtype=complex)
    for l, src in enumerate(sources):
        pos, amps = _image_arrays(room, src, max_order)  # validates src
        diff = pos[:, None, :] - rcv[None, :, :]
        dists = np.sqrt(np.einsum("imc,imc->im", diff, diff))
        if np.any(dists == 0):
            img, m = np.argwhere(dists == 0)[0]
            raise ValueError(
                f"receiver {receivers[m]} coincides with an image of source {src} "
                f"(image index {img})"
            )
        weights = amps[:, None] / (4.0 * math.pi * dists)
        data[:, :, l] = _phasor_sum(weights, dists, freqs, room.speed_of_sound).T
    return ATFTensor(data=data, freq_grid=freqs)
