"""Core gridded data model: frames, sequences, geometry, block resampling.

Conventions used throughout the toolkit:

- Arrays are row-major ``(rows, cols)``; row index grows southward on the
  source products but nothing here depends on compass orientation.
- The physical position of pixel ``(r, c)`` is ``(x, y) = (c, r) *
  pixel_size_km`` on a flat grid. Distances in km are nominal, not
  great-circle.
- Rain rates are mm/hour, finite and non-negative. Frames preserve the
  dtype they were built from (float32 matches the on-disk containers,
  float64 is the internal computation precision); every statistic is
  accumulated in float64 regardless.
- Frames and sequences are immutable after construction and safe to share
  across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .errors import (
    DimensionMismatch,
    GeometryMismatch,
    InvalidConfig,
    InvalidValue,
    NotDivisible,
    TimestampMismatch,
    TooShort,
)

#: Pixels at or above this rate (mm/hour) count as wet unless overridden.
DEFAULT_WET_THRESHOLD = 0.1


@dataclass(frozen=True)
class GridGeometry:
    """Shape and nominal scale of one grid."""

    rows: int
    cols: int
    pixel_size_km: float
    timestep_hours: float = 1.0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise InvalidConfig(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if not self.pixel_size_km > 0:
            raise InvalidConfig(f"pixel_size_km must be positive, got {self.pixel_size_km}")
        if not self.timestep_hours > 0:
            raise InvalidConfig(f"timestep_hours must be positive, got {self.timestep_hours}")

    @property
    def n_pixels(self) -> int:
        return self.rows * self.cols

    @property
    def pixel_area_km2(self) -> float:
        return self.pixel_size_km * self.pixel_size_km


#: Native geometry of the source dataset's high-resolution product (~4 km).
HR_GEOMETRY = GridGeometry(rows=624, cols=999, pixel_size_km=4.0)
#: Native geometry of the low-resolution product (~12 km); HR is exactly 3x.
LR_GEOMETRY = GridGeometry(rows=208, cols=333, pixel_size_km=12.0)


def _validated_values(geometry: GridGeometry, values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    if arr.ndim == 1:
        if arr.size != geometry.n_pixels:
            raise DimensionMismatch(
                f"expected {geometry.n_pixels} values for {geometry.rows}x{geometry.cols}, got {arr.size}"
            )
        arr = arr.reshape(geometry.rows, geometry.cols)
    elif arr.shape != (geometry.rows, geometry.cols):
        raise DimensionMismatch(
            f"expected shape {(geometry.rows, geometry.cols)}, got {arr.shape}"
        )
    bad = ~(np.isfinite(arr) & (arr >= 0))
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise InvalidValue(idx, float(arr.flat[idx]))
    # Share read-only buffers, copy anything else so callers can't mutate us.
    if not (arr.flags.c_contiguous and not arr.flags.writeable):
        arr = np.ascontiguousarray(arr).copy()
        arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class PrecipFrame:
    """One hourly rain-rate grid (mm/hour) with its geometry."""

    geometry: GridGeometry
    values: np.ndarray
    timestamp: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", _validated_values(self.geometry, self.values))
        object.__setattr__(self, "timestamp", int(self.timestamp))

    def values64(self) -> np.ndarray:
        """Values as float64 (no copy when already float64)."""
        return np.asarray(self.values, dtype=np.float64)


def frame_new(geometry: GridGeometry, values, timestamp: int = 0) -> PrecipFrame:
    """Validate and wrap raw values into a frame.

    ``values`` may be flat (length rows*cols) or already 2-D. Negative or
    non-finite entries are rejected, never clamped.
    """
    return PrecipFrame(geometry, values, timestamp)


@dataclass(frozen=True)
class FrameStats:
    min: float
    max: float
    mean: float
    wet_fraction: float


def frame_stats(frame: PrecipFrame, wet_threshold: float = DEFAULT_WET_THRESHOLD) -> FrameStats:
    """Min/max/mean plus the fraction of pixels at or above ``wet_threshold``."""
    v = frame.values64()
    return FrameStats(
        min=float(v.min()),
        max=float(v.max()),
        mean=float(v.mean()),
        wet_fraction=float(np.count_nonzero(v >= wet_threshold) / v.size),
    )


def block_mean_downsample(frame: PrecipFrame, factor: int) -> PrecipFrame:
    """Average each ``factor x factor`` block into one output pixel.

    Mass (sum times pixel area) is conserved up to rounding. The output
    keeps the input dtype; the averaging itself runs in float64.
    """
    factor = int(factor)
    if factor < 1:
        raise NotDivisible(f"factor must be >= 1, got {factor}")
    g = frame.geometry
    if g.rows % factor or g.cols % factor:
        raise NotDivisible(
            f"{g.rows}x{g.cols} grid is not divisible by factor {factor}"
        )
    out_geom = GridGeometry(
        rows=g.rows // factor,
        cols=g.cols // factor,
        pixel_size_km=g.pixel_size_km * factor,
        timestep_hours=g.timestep_hours,
    )
    v = frame.values64().reshape(out_geom.rows, factor, out_geom.cols, factor)
    out = v.mean(axis=(1, 3)).astype(frame.values.dtype)
    out.flags.writeable = False
    return PrecipFrame(out_geom, out, frame.timestamp)


@dataclass(frozen=True)
class PrecipSequence:
    """Time-ordered frames sharing one geometry; the unit of evaluation.

    Timestamps must increase by exactly ``geometry.timestep_hours`` per
    frame (hourly by default).
    """

    frames: tuple[PrecipFrame, ...] = field(default_factory=tuple)

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise TooShort("a sequence needs at least one frame")
        geom = frames[0].geometry
        for f in frames[1:]:
            if f.geometry != geom:
                raise GeometryMismatch(
                    f"all frames must share geometry {geom}, got {f.geometry}"
                )
        stamps = [f.timestamp for f in frames]
        dt = geom.timestep_hours
        for a, b in zip(stamps, stamps[1:]):
            if not (b > a and float(b - a) == dt):
                raise TimestampMismatch(
                    f"timestamps must increase by {dt} hours, got {a} -> {b}"
                )
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __iter__(self) -> Iterator[PrecipFrame]:
        return iter(self.frames)

    def __getitem__(self, i: int) -> PrecipFrame:
        return self.frames[i]

    @property
    def geometry(self) -> GridGeometry:
        return self.frames[0].geometry

    @property
    def timestamps(self) -> tuple[int, ...]:
        return tuple(f.timestamp for f in self.frames)

    @classmethod
    def from_array(
        cls, geometry: GridGeometry, values, t0: int = 0
    ) -> "PrecipSequence":
        """Build a sequence from a (T, rows, cols) stack.

        The stack is made read-only once and frames share its memory.
        """
        arr = np.asarray(values)
        if arr.ndim != 3 or arr.shape[1:] != (geometry.rows, geometry.cols):
            raise DimensionMismatch(
                f"expected (T, {geometry.rows}, {geometry.cols}), got {arr.shape}"
            )
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        step = int(geometry.timestep_hours)
        if float(step) != geometry.timestep_hours:
            step = 1
        return cls(
            tuple(
                PrecipFrame(geometry, arr[i], t0 + i * step)
                for i in range(arr.shape[0])
            )
        )

    def map_frames(self, fn) -> "PrecipSequence":
        """New sequence with ``fn`` applied to every frame."""
        return PrecipSequence(tuple(fn(f) for f in self.frames))


def check_aligned(pred: PrecipSequence, obs: PrecipSequence) -> None:
    """Raise unless both sequences share geometry and timestamps."""
    if pred.geometry != obs.geometry:
        raise GeometryMismatch(
            f"prediction geometry {pred.geometry} != observation geometry {obs.geometry}"
        )
    if pred.timestamps != obs.timestamps:
        raise TimestampMismatch("prediction and observation timestamps differ")


def sequence_from_frames(frames: Iterable[PrecipFrame]) -> PrecipSequence:
    return PrecipSequence(tuple(frames))
