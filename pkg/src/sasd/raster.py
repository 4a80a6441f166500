"""Image containers, box arithmetic, window grids and cropping.

Boxes are integer pixel rectangles, half-open on the max edges, so a box
``(0, 0, 128, 128)`` covers pixel columns 0..127.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from sasd.errors import EmptyCropError, GeometryError


class GridClipWarning(UserWarning):
    """Raised (as a warning) when the image is smaller than the grid window."""


@dataclass(frozen=True, order=True)
class BBox:
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise GeometryError(f"box coordinate {name} must be an integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise GeometryError(f"degenerate box {self.to_list()}")

    @classmethod
    def from_list(cls, values) -> "BBox":
        if len(values) != 4:
            raise GeometryError(f"box needs 4 coordinates, got {len(values)}")
        return cls(*(int(v) for v in values))

    @property
    def width(self) -> int:
        return self.x_max - self.x_min

    @property
    def height(self) -> int:
        return self.y_max - self.y_min

    @property
    def area(self) -> int:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def intersect(self, other: "BBox") -> "BBox | None":
        x0, y0 = max(self.x_min, other.x_min), max(self.y_min, other.y_min)
        x1, y1 = min(self.x_max, other.x_max), min(self.y_max, other.y_max)
        if x0 >= x1 or y0 >= y1:
            return None
        return BBox(x0, y0, x1, y1)

    def union(self, other: "BBox") -> "BBox":
        return BBox(
            min(self.x_min, other.x_min),
            min(self.y_min, other.y_min),
            max(self.x_max, other.x_max),
            max(self.y_max, other.y_max),
        )

    def contains(self, other: "BBox") -> bool:
        return (
            self.x_min <= other.x_min
            and self.y_min <= other.y_min
            and self.x_max >= other.x_max
            and self.y_max >= other.y_max
        )

    def contains_point(self, x: float, y: float) -> bool:
        return self.x_min <= x < self.x_max and self.y_min <= y < self.y_max

    def translate(self, dx: int, dy: int) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def expand(self, margin: int) -> "BBox":
        return BBox(self.x_min - margin, self.y_min - margin, self.x_max + margin, self.y_max + margin)

    def clip(self, width: int, height: int) -> "BBox | None":
        return self.intersect(BBox(0, 0, width, height))

    def to_list(self) -> list[int]:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


def iou(a: BBox, b: BBox) -> float:
    inter = a.intersect(b)
    if inter is None:
        return 0.0
    inter_area = inter.area
    return inter_area / (a.area + b.area - inter_area)


@dataclass(frozen=True)
class GridSpec:
    window: int
    stride: int

    def __post_init__(self):
        if self.window < 1:
            raise GeometryError(f"window must be >= 1, got {self.window}")
        if not 1 <= self.stride <= self.window:
            raise GeometryError(f"stride must be in [1, window], got {self.stride} for window {self.window}")

    @classmethod
    def halved(cls, window: int) -> "GridSpec":
        return cls(window, max(1, window // 2))


def _axis_starts(extent: int, window: int, stride: int) -> list[int]:
    starts = list(range(0, extent - window + 1, stride))
    if starts[-1] + window < extent:
        # edge-snap: one extra window flush with the far edge
        starts.append(extent - window)
    return starts


def window_grid(width: int, height: int, spec: GridSpec) -> list[BBox]:
    """Row-major square windows covering a ``width`` x ``height`` image.

    An axis shorter than the window gets a single window clipped to that
    axis, and a :class:`GridClipWarning` is emitted.
    """
    if width < 1 or height < 1:
        raise GeometryError(f"invalid image size {width}x{height}")
    clipped = False
    if width < spec.window:
        xs, wx = [0], width
        clipped = True
    else:
        xs, wx = _axis_starts(width, spec.window, spec.stride), spec.window
    if height < spec.window:
        ys, wy = [0], height
        clipped = True
    else:
        ys, wy = _axis_starts(height, spec.window, spec.stride), spec.window
    if clipped:
        warnings.warn(
            f"image {width}x{height} smaller than window {spec.window}; using a clipped window",
            GridClipWarning,
            stacklevel=2,
        )
    return [BBox(x, y, x + wx, y + wy) for y in ys for x in xs]


class Raster:
    """Immutable 8-bit image, stored as an ``(height, width, channels)`` array."""

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.asarray(data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise GeometryError(f"raster array must be 2-D or 3-D, got shape {arr.shape}")
        if arr.shape[2] not in (1, 3, 4):
            raise GeometryError(f"channels must be 1, 3 or 4, got {arr.shape[2]}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise GeometryError(f"raster must be at least 1x1, got {arr.shape[1]}x{arr.shape[0]}")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise GeometryError("pixel values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = np.array(arr, dtype=np.uint8, copy=True, order="C")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def from_buffer(cls, width: int, height: int, channels: int, pixels) -> "Raster":
        buf = np.frombuffer(bytes(pixels), dtype=np.uint8) if isinstance(pixels, (bytes, bytearray)) else np.asarray(pixels)
        if buf.size != width * height * channels:
            raise GeometryError(
                f"pixel buffer has {buf.size} values, expected {width}x{height}x{channels}"
            )
        return cls(buf.reshape(height, width, channels))

    @classmethod
    def filled(cls, width: int, height: int, color) -> "Raster":
        color = np.atleast_1d(np.asarray(color, dtype=np.uint8))
        return cls(np.broadcast_to(color, (height, width, color.size)))

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def width(self) -> int:
        return self._data.shape[1]

    @property
    def height(self) -> int:
        return self._data.shape[0]

    @property
    def channels(self) -> int:
        return self._data.shape[2]

    @property
    def pixels(self) -> bytes:
        return self._data.tobytes()

    @property
    def bounds(self) -> BBox:
        return BBox(0, 0, self.width, self.height)

    def rgb(self) -> np.ndarray:
        """Pixel array as 3 channels (grey is replicated, alpha dropped)."""
        if self.channels == 3:
            return self._data
        if self.channels == 1:
            return np.repeat(self._data, 3, axis=2)
        return self._data[:, :, :3]

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return self._data.shape == other._data.shape and np.array_equal(self._data, other._data)

    def __hash__(self):
        return hash((self._data.shape, self._data.tobytes()))

    def __repr__(self):
        return f"Raster({self.width}x{self.height}x{self.channels})"


def crop(r: Raster, b: BBox) -> Raster:
    clipped = b.clip(r.width, r.height)
    if clipped is None:
        raise EmptyCropError()
    return Raster(r.data[clipped.y_min:clipped.y_max, clipped.x_min:clipped.x_max])


_MODES = {1: "L", 3: "RGB", 4: "RGBA"}


def read_image(path) -> Raster:
    """Load a PNG, PPM or PGM file."""
    with Image.open(Path(path)) as im:
        im.load()
        if im.mode not in ("L", "RGB", "RGBA"):
            im = im.convert("RGBA" if "A" in im.getbands() else "RGB")
        return Raster(np.asarray(im))


def write_png(r: Raster, path) -> None:
    data = r.data[:, :, 0] if r.channels == 1 else r.data
    Image.fromarray(data, mode=_MODES[r.channels]).save(Path(path), format="PNG", optimize=False)


def draw_rectangle(r: Raster, b: BBox, color=(255, 255, 0), thickness: int = 2) -> Raster:
    """Return a copy of ``r`` with the outline of ``b`` burned in."""
    out = np.array(r.rgb(), copy=True)
    box = b.clip(r.width, r.height)
    if box is None:
        return Raster(out)
    t = max(1, min(thickness, math.ceil(min(box.width, box.height) / 2)))
    c = np.asarray(color, dtype=np.uint8)
    out[box.y_min:box.y_min + t, box.x_min:box.x_max] = c
    out[box.y_max - t:box.y_max, box.x_min:box.x_max] = c
    out[box.y_min:box.y_max, box.x_min:box.x_min + t] = c
    out[box.y_min:box.y_max, box.x_max - t:box.x_max] = c
    return Raster(out)
