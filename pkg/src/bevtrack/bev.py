"""BEV grid, feature containers, vertical reduction, temporal history.

Grid convention: cell (i, j) indexes (row, column); rows advance along
world y, columns along world x.  Cell (0, 0) has its corner at the grid
origin and its center half a cell further.  Points exactly on a cell
boundary belong to the cell with the larger index (floor convention).

Feature layout: dense float32, row-major, channel first — (C, H, W) for
planar maps and (C, Z, H, W) for voxel volumes.  The binary serialization
is three little-endian u32 (C, H, W) followed by the raw little-endian
float32 data, which makes golden-file tests bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import OutOfGridError, ShapeMismatch
from .geometry import WorldPoint


class OutOfGrid:
    """Marker value: a world point lies outside the grid extent."""

    __slots__ = ()

    def __repr__(self) -> str:
        return "OutOfGrid"


OUT_OF_GRID = OutOfGrid()


@dataclass(frozen=True)
class BevGrid:
    origin: tuple[float, float]  # world (x, y) of the corner of cell (0, 0)
    cell_size: float             # meters per cell
    width: int                   # columns (x direction)
    height: int                  # rows (y direction)
    z_min: float = 0.0
    z_max: float = 2.0
    z_bins: int = 1

    def __post_init__(self):
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        if self.cell_size <= 0:
            raise ValueError(f"cell_size must be > 0, got {self.cell_size}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"grid must be >= 1x1, got {self.height}x{self.width}")
        if self.z_max <= self.z_min:
            raise ValueError(f"need z_max > z_min, got [{self.z_min}, {self.z_max}]")
        if self.z_bins < 1:
            raise ValueError(f"z_bins must be >= 1, got {self.z_bins}")

    @property
    def z_step(self) -> float:
        return (self.z_max - self.z_min) / self.z_bins

    def x_centers(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.width) + 0.5) * self.cell_size

    def y_centers(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.height) + 0.5) * self.cell_size

    def z_centers(self) -> np.ndarray:
        return self.z_min + (np.arange(self.z_bins) + 0.5) * self.z_step

    def extent(self) -> tuple[float, float, float, float]:
        """(x_min, x_max, y_min, y_max) of the covered world area."""
        ox, oy = self.origin
        return ox, ox + self.width * self.cell_size, oy, oy + self.height * self.cell_size


def wildtrack_grid(z_min: float = 0.0, z_max: float = 2.0, z_bins: int = 4) -> BevGrid:
    """480x1440 grid of 2.5 cm cells covering a 12x36 m area."""
    return BevGrid(origin=(0.0, 0.0), cell_size=0.025, width=1440, height=480,
                   z_min=z_min, z_max=z_max, z_bins=z_bins)


def multiviewx_grid(z_min: float = 0.0, z_max: float = 2.0, z_bins: int = 4) -> BevGrid:
    """640x1000 grid of 2.5 cm cells covering a 16x25 m area."""
    return BevGrid(origin=(0.0, 0.0), cell_size=0.025, width=1000, height=640,
                   z_min=z_min, z_max=z_max, z_bins=z_bins)


def cell_to_world(grid: BevGrid, i: int, j: int) -> WorldPoint:
    """Center of cell (i, j) on the ground plane."""
    if not (0 <= i < grid.height and 0 <= j < grid.width):
        raise OutOfGridError(f"cell ({i}, {j}) outside {grid.height}x{grid.width} grid")
    x = grid.origin[0] + (j + 0.5) * grid.cell_size
    y = grid.origin[1] + (i + 0.5) * grid.cell_size
    return WorldPoint(x, y, 0.0)


def world_to_cell(grid: BevGrid, p) -> tuple[int, int] | OutOfGrid:
    """Cell containing a world point, or OUT_OF_GRID (a value, not an error)."""
    i = int(np.floor((float(p[1]) - grid.origin[1]) / grid.cell_size))
    j = int(np.floor((float(p[0]) - grid.origin[0]) / grid.cell_size))
    if not (0 <= i < grid.height and 0 <= j < grid.width):
        return OUT_OF_GRID
    return i, j


def world_to_cell_arrays(grid: BevGrid, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized world_to_cell: (N, 2) points -> ((N, 2) int cells, (N,) inside)."""
    pts = np.asarray(xy, dtype=np.float64)
    j = np.floor((pts[:, 0] - grid.origin[0]) / grid.cell_size).astype(np.int64)
    i = np.floor((pts[:, 1] - grid.origin[1]) / grid.cell_size).astype(np.int64)
    inside = (i >= 0) & (i < grid.height) & (j >= 0) & (j < grid.width)
    return np.stack([i, j], axis=1), inside


def _as_feature_data(data: np.ndarray, ndim: int, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != ndim:
        raise ShapeMismatch(f"{what} must have {ndim} dims, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{what} contains non-finite values")
    arr = arr.copy() if not arr.flags.owndata else arr
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FeatureMap:
    """Dense (C, H, W) float32 feature grid, image-space or BEV-space."""

    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "data", _as_feature_data(self.data, 3, "FeatureMap"))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "FeatureMap":
        return cls(np.zeros((channels, height, width), dtype=np.float32))


@dataclass(frozen=True)
class VoxelVolume:
    """Dense (C, Z, H, W) float32 voxel features tied to a BevGrid."""

    data: np.ndarray
    grid: BevGrid

    def __post_init__(self):
        object.__setattr__(self, "data", _as_feature_data(self.data, 4, "VoxelVolume"))
        z, h, w = self.data.shape[1:]
        if (z, h, w) != (self.grid.z_bins, self.grid.height, self.grid.width):
            raise ShapeMismatch(
                f"volume {self.data.shape} does not match grid "
                f"({self.grid.z_bins}, {self.grid.height}, {self.grid.width})"
            )

    @property
    def channels(self) -> int:
        return self.data.shape[0]


class TemporalBuffer:
    """Ordered history of decoded BEV maps, advanced once per frame.

    `history_channels` fixes the zero-fill width used before the first frame
    has been pushed; when None it defaults to the current map's channels.
    """

    def __init__(self, capacity: int = 1, history_channels: int | None = None):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.history_channels = history_channels
        self._slots: list[tuple[int, FeatureMap]] = []

    def __len__(self) -> int:
        return len(self._slots)

    def push(self, frame: int, fm: FeatureMap) -> None:
        if self._slots and frame <= self._slots[-1][0]:
            raise ValueError(
                f"frame indices must strictly increase, got {frame} after {self._slots[-1][0]}"
            )
        self._slots.append((frame, fm))
        if len(self._slots) > self.capacity:
            self._slots.pop(0)

    def latest(self) -> FeatureMap | None:
        return self._slots[-1][1] if self._slots else None


def reduce_vertical(volume: VoxelVolume, mode: str = "mean") -> FeatureMap:
    """Collapse the vertical axis per channel and cell; mode 'mean' or 'max'."""
    if mode == "mean":
        data = volume.data.mean(axis=1, dtype=np.float64).astype(np.float32)
    elif mode == "max":
        data = volume.data.max(axis=1)
    else:
        raise ValueError(f"unknown reduction mode {mode!r}")
    return FeatureMap(data)


def concat_history(current: FeatureMap, buffer: TemporalBuffer) -> FeatureMap:
    """Channel-concatenate [current | previous]; zero history on the first frame."""
    prev = buffer.latest()
    if prev is None:
        channels = buffer.history_channels or current.channels
        prev_data = np.zeros((channels, current.height, current.width), dtype=np.float32)
    else:
        if (prev.height, prev.width) != (current.height, current.width):
            raise ShapeMismatch(
                f"history {prev.height}x{prev.width} does not match "
                f"current {current.height}x{current.width}"
            )
        prev_data = prev.data
    return FeatureMap(np.concatenate([current.data, prev_data], axis=0))


def write_feature_map(fm: FeatureMap, path: str | Path) -> None:
    """Serialize as <u32 C><u32 H><u32 W> + row-major little-endian float32."""
    header = struct.pack("<III", fm.channels, fm.height, fm.width)
    data = np.ascontiguousarray(fm.data, dtype="<f4").tobytes()
    Path(path).write_bytes(header + data)


def read_feature_map(path: str | Path) -> FeatureMap:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise ShapeMismatch(f"{path}: truncated feature map header")
    c, h, w = struct.unpack("<III", raw[:12])
    expected = 12 + 4 * c * h * w
    if len(raw) != expected:
        raise ShapeMismatch(f"{path}: expected {expected} bytes for {c}x{h}x{w}, got {len(raw)}")
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(c, h, w)
    return FeatureMap(data.astype(np.float32))
