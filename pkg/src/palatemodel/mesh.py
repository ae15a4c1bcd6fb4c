"""Triangle meshes, landmark sets, file I/O, and closest-point queries.

Geometry travels as Wavefront OBJ; the seven named landmark vertices live in
a ``<stem>.lmk`` sidecar because OBJ has no landmark concept. Colored meshes
for error heat maps are written as binary little-endian PLY with per-vertex
uchar RGB.
"""

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import accel

logger = logging.getLogger(__name__)

LANDMARK_NAMES = (
    "incisor",
    "midline_boundary",
    "midline_apex",
    "left_boundary",
    "right_boundary",
    "left_apex",
    "right_apex",
)


@dataclass(frozen=True)
class Mesh:
    """Shared-topology triangle mesh; landmark_indices maps name -> vertex."""

    vertices: np.ndarray
    faces: np.ndarray
    landmark_indices: dict | None = None

    def __post_init__(self):
        verts = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(faces) and (faces.min() < 0 or faces.max() >= len(verts)):
            raise ValueError("face references vertex outside the vertex list")
        if len(faces):
            degenerate = (
                (faces[:, 0] == faces[:, 1])
                | (faces[:, 1] == faces[:, 2])
                | (faces[:, 0] == faces[:, 2])
            )
            if degenerate.any():
                raise ValueError(f"degenerate face at index {int(np.argmax(degenerate))}")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "faces", faces)
        if self.landmark_indices is not None:
            lm = dict(self.landmark_indices)
            for name, idx in lm.items():
                if not (0 <= idx < len(verts)):
                    raise ValueError(f"landmark {name!r} index {idx} out of range")
            object.__setattr__(self, "landmark_indices", lm)

    def with_vertices(self, vertices):
        return Mesh(vertices=vertices, faces=self.faces, landmark_indices=self.landmark_indices)

    def triangle_array(self):
        return self.vertices[self.faces]

    def mean_edge_length(self):
        tri = self.triangle_array()
        e = np.concatenate(
            [tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 1], tri[:, 0] - tri[:, 2]]
        )
        return float(np.linalg.norm(e, axis=1).mean())


@dataclass(frozen=True)
class LandmarkSet:
    """The seven named palate landmarks, in canonical order."""

    positions: np.ndarray

    names = LANDMARK_NAMES

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.shape != (7, 3):
            raise ValueError("landmark set requires exactly 7 positions")
        object.__setattr__(self, "positions", pos)

    @classmethod
    def from_pairs(cls, pairs):
        entries = dict(pairs)
        missing = [n for n in LANDMARK_NAMES if n not in entries]
        if missing:
            raise ValueError(f"missing landmark(s): {', '.join(missing)}")
        extra = [n for n in entries if n not in LANDMARK_NAMES]
        if extra:
            raise ValueError(f"unknown landmark name(s): {', '.join(extra)}")
        return cls(positions=np.array([entries[n] for n in LANDMARK_NAMES], dtype=np.float64))

    def position(self, name):
        return self.positions[LANDMARK_NAMES.index(name)]

    def items(self):
        return list(zip(LANDMARK_NAMES, self.positions))


def landmark_positions(m):
    """LandmarkSet read from a mesh's named landmark vertices."""
    if m.landmark_indices is None:
        raise ValueError("mesh carries no landmark indices")
    missing = [n for n in LANDMARK_NAMES if n not in m.landmark_indices]
    if missing:
        raise ValueError(f"missing landmark(s): {', '.join(missing)}")
    return LandmarkSet(
        positions=np.array([m.vertices[m.landmark_indices[n]] for n in LANDMARK_NAMES])
    )


# ---------------------------------------------------------------------------
# OBJ + landmark sidecar
# ---------------------------------------------------------------------------


def _face_vertex(token, n_vertices, path, lineno):
    idx = token.split("/")[0]
    try:
        i = int(idx)
    except ValueError:
        raise ValueError(f"{path.name}:{lineno}: malformed face index {token!r}") from None
    if i < 0:
        i = n_vertices + i + 1
    if not (1 <= i <= n_vertices):
        raise ValueError(f"{path.name}:{lineno}: face references vertex {i} of {n_vertices}")
    return i - 1


def load_mesh(path):
    """Load a triangle OBJ; quads are fan-triangulated (and logged).

    A ``<stem>.lmk`` sidecar with ``name index`` lines is picked up
    automatically when present.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh not found: {path}")
    vertices = []
    faces = []
    quads = 0
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "v":
            if len(parts) < 4:
                raise ValueError(f"{path.name}:{lineno}: malformed vertex line")
            try:
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError:
                raise ValueError(f"{path.name}:{lineno}: malformed vertex line") from None
        elif parts[0] == "f":
            ids = [_face_vertex(t, len(vertices), path, lineno) for t in parts[1:]]
            if len(ids) == 3:
                faces.append(ids)
            elif len(ids) == 4:
                faces.append([ids[0], ids[1], ids[2]])
                faces.append([ids[0], ids[2], ids[3]])
                quads += 1
            else:
                raise ValueError(f"{path.name}:{lineno}: non-triangular face with {len(ids)} vertices")
        # other record types (vn, vt, o, g, s, usemtl, ...) are ignored
    if quads:
        logger.info("%s: fan-triangulated %d quad(s)", path.name, quads)
    landmarks = None
    sidecar = path.with_suffix(".lmk")
    if sidecar.exists():
        landmarks = load_landmark_indices(sidecar)
    return Mesh(vertices=np.array(vertices, dtype=np.float64).reshape(-1, 3),
                faces=np.array(faces, dtype=np.int64).reshape(-1, 3),
                landmark_indices=landmarks)


def save_mesh(m, path):
    """Write OBJ (and an index sidecar when the mesh has landmarks)."""
    path = Path(path)
    lines = [f"v {x:.9f} {y:.9f} {z:.9f}" for x, y, z in m.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in m.faces]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if m.landmark_indices is not None:
        save_landmark_indices(m.landmark_indices, path.with_suffix(".lmk"))
    return path


def load_landmark_indices(path):
    """Read a ``name index`` sidecar into a dict."""
    path = Path(path)
    entries = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"{path.name}:{lineno}: expected 'name index'")
        entries[parts[0]] = int(parts[1])
    missing = [n for n in LANDMARK_NAMES if n not in entries]
    if missing:
        raise ValueError(f"{path.name}: missing landmark(s): {', '.join(missing)}")
    return entries


def save_landmark_indices(landmarks, path):
    lines = [f"{name} {landmarks[name]}" for name in LANDMARK_NAMES]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_landmark_set(path):
    """Read a world-coordinate ``name x y z`` landmark file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"landmarks: not found: {path}")
    pairs = []
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise ValueError(f"{path.name}:{lineno}: expected 'name x y z'")
        pairs.append((parts[0], [float(parts[1]), float(parts[2]), float(parts[3])]))
    return LandmarkSet.from_pairs(pairs)


def save_landmark_set(landmarks, path):
    lines = [
        f"{name} {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}"
        for name, p in landmarks.items()
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_colored_ply(m, colors, path):
    """Binary little-endian PLY with per-vertex uchar RGB."""
    colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
    if len(colors) != len(m.vertices):
        raise ValueError("one RGB triple per vertex required")
    header = "\n".join(
        [
            "ply",
            "format binary_little_endian 1.0",
            f"element vertex {len(m.vertices)}",
            "property float x",
            "property float y",
            "property float z",
            "property uchar red",
            "property uchar green",
            "property uchar blue",
            f"element face {len(m.faces)}",
            "property list uchar int vertex_indices",
            "end_header",
        ]
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        for (x, y, z), (r, g, b) in zip(m.vertices, colors):
            fh.write(struct.pack("<fffBBB", x, y, z, r, g, b))
        for a, b3, c in m.faces:
            fh.write(struct.pack("<Biii", 3, a, b3, c))
    return Path(path)


# ---------------------------------------------------------------------------
# closest-point queries
# ---------------------------------------------------------------------------


def closest_points_on_mesh(points, m):
    """Closest surface points and distances for a batch of query points.

    Equivalent to a brute-force scan over every triangle; ties go to the
    lowest triangle index.
    """
    if len(m.faces) == 0:
        raise ValueError("mesh has no faces")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    feet, sq, _ = accel.closest_points_on_triangles(m.triangle_array(), pts)
    return feet, np.sqrt(sq)


def closest_point_on_mesh(p, m):
    """(closest point, distance) from a single query point to the mesh surface."""
    feet, dist = closest_points_on_mesh(np.asarray(p, dtype=np.float64).reshape(1, 3), m)
    return feet[0], float(dist[0])
