"""Volumetric scans: loading, cropping, threshold segmentation, surface points.

Scans are scalar 3D images with gray values in [0, 255], anisotropic voxel
spacing in mm and a world-space origin at the center of voxel (0, 0, 0).
File format is the RVH/RVD pair: a UTF-8 ``key=value`` header next to a raw
little-endian data file in x-fastest order.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import accel

logger = logging.getLogger(__name__)

_AXES = {"sagittal": 0, "coronal": 1, "axial": 2}

_HEADER_KEYS = (
    "dim_x", "dim_y", "dim_z",
    "spacing_x", "spacing_y", "spacing_z",
    "origin_x", "origin_y", "origin_z",
    "dtype",
)


@dataclass(frozen=True)
class Volume:
    """3D scalar image. ``voxels[x, y, z]`` is uint8; spacing/origin in mm."""

    dims: tuple
    spacing: tuple
    origin: tuple
    voxels: np.ndarray

    def __post_init__(self):
        if any(d < 1 for d in self.dims):
            raise ValueError("all dims must be >= 1")
        if any(s <= 0 for s in self.spacing):
            raise ValueError("all spacing components must be > 0")
        if self.voxels.shape != tuple(self.dims):
            raise ValueError("voxel array shape does not match dims")
        if self.voxels.dtype != np.uint8:
            raise ValueError("voxels must be uint8 in [0, 255]")

    def voxel_center(self, index):
        """World position (mm) of a voxel center: origin + index * spacing."""
        return np.asarray(self.origin) + np.asarray(index) * np.asarray(self.spacing)

    def world_bounds(self):
        lo = np.asarray(self.origin, dtype=float)
        hi = lo + (np.asarray(self.dims) - 1) * np.asarray(self.spacing)
        return lo, hi


@dataclass(frozen=True)
class TissueMask:
    dims: tuple
    bits: np.ndarray
    threshold_used: float

    def __post_init__(self):
        if self.bits.shape != tuple(self.dims):
            raise ValueError("mask shape does not match dims")


@dataclass(frozen=True)
class PointCloud:
    """Unordered 3D points in world millimeters."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(pts).all():
            raise ValueError("point cloud contains NaN or inf coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class CropBox:
    """Inclusive voxel-index bounds of a region of interest."""

    min_voxel: tuple
    max_voxel: tuple

    def __post_init__(self):
        if any(a > b for a, b in zip(self.min_voxel, self.max_voxel)):
            raise ValueError("crop box min must be <= max componentwise")
        if any(a < 0 for a in self.min_voxel):
            raise ValueError("crop box indices must be non-negative")


@dataclass(frozen=True)
class SliceImage:
    """One plane of a volume plus the mapping from pixels back to world mm.

    ``pixels[i, j]`` indexes the two in-plane world axes in ``axes`` order;
    pixel scale per axis is ``spacing[axes[0]]`` and ``spacing[axes[1]]``.
    """

    pixels: np.ndarray
    axis: str
    index: int
    axes: tuple
    spacing: tuple
    origin: tuple

    def pixel_to_world(self, i, j):
        idx = np.zeros(3)
        idx[_AXES[self.axis]] = self.index
        idx[self.axes[0]] = i
        idx[self.axes[1]] = j
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)


def _parse_header(path):
    values = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path.name}:{lineno}: malformed header line {line!r}")
        key, _, val = line.partition("=")
        values[key.strip()] = val.strip()
    missing = [k for k in _HEADER_KEYS if k not in values]
    if missing:
        raise ValueError(f"{path.name}: missing header keys: {', '.join(missing)}")
    return values


def load_volume(path):
    """Load an RVH/RVD pair. ``path`` names the header file.

    i16le data is clamped to [0, 255]; the number of clamped voxels is
    reported through the module logger.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"volume header not found: {path}")
    header = _parse_header(path)
    dims = tuple(int(header[f"dim_{a}"]) for a in "xyz")
    spacing = tuple(float(header[f"spacing_{a}"]) for a in "xyz")
    origin = tuple(float(header[f"origin_{a}"]) for a in "xyz")
    if any(d < 1 for d in dims):
        raise ValueError(f"{path.name}: non-positive dims {dims}")
    if any(s <= 0 for s in spacing):
        raise ValueError(f"{path.name}: non-positive spacing {spacing}")
    dtype = header["dtype"]
    if dtype == "u8":
        np_dtype, item = np.uint8, 1
    elif dtype == "i16le":
        np_dtype, item = np.dtype("<i2"), 2
    else:
        raise ValueError(f"{path.name}: unknown dtype {dtype!r}")

    data_path = path.with_suffix(".rvd")
    if not data_path.exists():
        raise FileNotFoundError(f"volume data not found: {data_path}")
    raw = data_path.read_bytes()
    count = dims[0] * dims[1] * dims[2]
    if len(raw) != count * item:
        raise ValueError(
            f"{data_path.name}: data length mismatch "
            f"(expected {count * item} bytes, got {len(raw)})"
        )
    flat = np.frombuffer(raw, dtype=np_dtype)
    if dtype == "i16le":
        clamped = int(((flat < 0) | (flat > 255)).sum())
        if clamped:
            logger.warning("%s: clamped %d voxels to [0, 255]", data_path.name, clamped)
        flat = np.clip(flat, 0, 255).astype(np.uint8)
    # file order is x-fastest: index = x + nx*(y + ny*z)
    voxels = flat.reshape((dims[2], dims[1], dims[0])).transpose(2, 1, 0).copy()
    return Volume(dims=dims, spacing=spacing, origin=origin, voxels=voxels)


def save_volume(v, path):
    """Write a Volume as an RVH/RVD pair (u8 data); returns the header path."""
    path = Path(path)
    if path.suffix != ".rvh":
        path = path.with_suffix(".rvh")
    lines = []
    for axis, d in zip("xyz", v.dims):
        lines.append(f"dim_{axis}={d}")
    for axis, s in zip("xyz", v.spacing):
        lines.append(f"spacing_{axis}={float(s)!r}")
    for axis, o in zip("xyz", v.origin):
        lines.append(f"origin_{axis}={float(o)!r}")
    lines.append("dtype=u8")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    path.with_suffix(".rvd").write_bytes(
        np.ascontiguousarray(v.voxels.transpose(2, 1, 0)).tobytes()
    )
    return path


def crop(v, box):
    """Restrict a volume to an inclusive voxel box; origin shifts accordingly."""
    lo = np.asarray(box.min_voxel, dtype=int)
    hi = np.asarray(box.max_voxel, dtype=int)
    if (hi >= np.asarray(v.dims)).any():
        raise ValueError(f"crop box {box.min_voxel}..{box.max_voxel} outside volume dims {v.dims}")
    voxels = v.voxels[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1].copy()
    origin = tuple(np.asarray(v.origin) + lo * np.asarray(v.spacing))
    return Volume(dims=voxels.shape, spacing=v.spacing, origin=origin, voxels=voxels)


def segment_tissue(v, threshold, largest_component=False):
    """Classify voxels strictly brighter than ``threshold`` as tissue.

    ``largest_component=True`` keeps only the largest 6-connected tissue
    component (off by default; plain thresholding is the reference behavior).
    """
    threshold = float(threshold)
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    bits = v.voxels > threshold
    if largest_component and bits.any():
        structure = ndimage.generate_binary_structure(3, 1)  # 6-connectivity
        labels, n = ndimage.label(bits, structure=structure)
        if n > 1:
            counts = np.bincount(labels.ravel())
            counts[0] = 0
            bits = labels == counts.argmax()
    return TissueMask(dims=v.dims, bits=bits, threshold_used=threshold)


def extract_surface_points(mask, geom):
    """Point cloud of tissue voxels exposed on at least one of six faces.

    A voxel is a surface voxel when some 6-connected neighbor is non-tissue
    or lies outside the volume. Points are voxel centers in world mm.
    """
    if tuple(mask.dims) != tuple(geom.dims):
        raise ValueError(f"mask dims {mask.dims} do not match volume dims {geom.dims}")
    surface = mask.bits & ~accel.interior_mask(mask.bits)
    idx = np.argwhere(surface)
    points = np.asarray(geom.origin) + idx * np.asarray(geom.spacing)
    return PointCloud(points=points.reshape(-1, 3))


def slice_image(v, axis, index):
    """2D restriction of the volume to one sagittal/coronal/axial plane."""
    if axis not in _AXES:
        raise ValueError(f"unknown slice axis {axis!r}")
    ax = _AXES[axis]
    index = int(index)
    if not (0 <= index < v.dims[ax]):
        raise IndexError(f"{axis} index {index} out of range [0, {v.dims[ax]})")
    plane_axes = tuple(a for a in range(3) if a != ax)
    pixels = np.take(v.voxels, index, axis=ax).copy()
    return SliceImage(
        pixels=pixels,
        axis=axis,
        index=index,
        axes=plane_axes,
        spacing=v.spacing,
        origin=v.origin,
    )
