"""Synthetic palate-like ground truth for exercising the whole pipeline.

A phantom is a dome-shaped height field z = h * f(u, v) over a width x
length footprint, triangulated row-major on an (nu, nv) grid, with the seven
landmark vertices assigned deterministically. Populations perturb the dome
parameters with seeded Gaussian noise. ``rasterize`` turns a phantom into a
scan-like volume by marking every voxel on or below the sheet as tissue,
mimicking bright palate tissue above the airway.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import accel
from .mesh import Mesh, landmark_positions
from .volume import Volume

DEFAULT_SPACING = (1.1875, 1.1875, 1.2)  # mm, scan-like voxel size


@dataclass(frozen=True)
class PhantomParams:
    grid: tuple = (32, 16)      # (nu across width, nv along length)
    width: float = 44.0         # mm
    length: float = 40.0        # mm
    dome_height: float = 12.0   # mm
    asymmetry: float = 0.0
    concavity: float = 0.5
    seed: int = 0

    def __post_init__(self):
        nu, nv = self.grid
        if nu < 4 or nv < 4:
            raise ValueError("grid must be at least 4 x 4")
        if self.width <= 0 or self.length <= 0:
            raise ValueError("width and length must be positive")


# world-space offset of the grid corner; keeps phantom coordinates away from
# the volume border so rasterized tissue never touches it sideways
_BASE = np.array([6.0, 6.0, 6.0])


def _height(s, t, params):
    # s in [-1, 1] across the width, t in [0, 1] front (incisor) to back
    s_eff = np.clip(s + params.asymmetry * (1.0 - s ** 2), -1.0, 1.0)
    cross = (1.0 - s_eff ** 2) ** (1.0 + params.concavity)
    return params.dome_height * cross * np.sin(np.pi * t)


def synth_palate(params=PhantomParams()):
    """Parametric dome mesh plus the landmark set read from its vertices.

    Vertex (i, j) has index j * nu + i; triangulation is row-major with two
    triangles per grid cell. Landmarks: incisor and midline_boundary at the
    midline column's front/back rows, midline_apex at the midline vertex of
    largest profile curvature (ties break to the lowest index), laterals at
    roughly +-width/3 on the boundary and apex rows.
    """
    nu, nv = params.grid
    u = np.linspace(0.0, 1.0, nu)
    v = np.linspace(0.0, 1.0, nv)
    s = 2.0 * u - 1.0
    ss, tt = np.meshgrid(s, v, indexing="ij")
    zz = _height(ss, tt, params)  # (nu, nv)

    verts = np.column_stack(
        [
            np.tile(_BASE[0] + u * params.width, nv),
            np.repeat(_BASE[1] + v * params.length, nu),
            _BASE[2] + zz.T.reshape(-1),
        ]
    )

    faces = []
    for j in range(nv - 1):
        for i in range(nu - 1):
            a = j * nu + i
            b = j * nu + i + 1
            c = (j + 1) * nu + i
            d = (j + 1) * nu + i + 1
            faces.append([a, b, d])
            faces.append([a, d, c])

    i_mid = nu // 2
    profile = zz[i_mid, :]
    curvature = np.abs(profile[:-2] - 2.0 * profile[1:-1] + profile[2:])
    j_apex = int(curvature.argmax()) + 1
    i_left = int(round((nu - 1) * (0.5 - 1.0 / 3.0)))
    i_right = int(round((nu - 1) * (0.5 + 1.0 / 3.0)))

    landmarks = {
        "incisor": 0 * nu + i_mid,
        "midline_boundary": (nv - 1) * nu + i_mid,
        "midline_apex": j_apex * nu + i_mid,
        "left_boundary": (nv - 1) * nu + i_left,
        "right_boundary": (nv - 1) * nu + i_right,
        "left_apex": j_apex * nu + i_left,
        "right_apex": j_apex * nu + i_right,
    }
    m = Mesh(vertices=verts, faces=np.array(faces), landmark_indices=landmarks)
    return m, landmark_positions(m)


def synth_population(base=PhantomParams(), n=12, spread=0.2, seed=0):
    """n phantom meshes with perturbed dome height, concavity, and asymmetry.

    Shared topology and landmark indices across the population; fully
    reproducible from the seed.
    """
    if n < 2:
        raise ValueError("population needs n >= 2")
    rng = np.random.default_rng(seed)
    meshes = []
    for _ in range(n):
        g = rng.standard_normal(3)
        p = replace(
            base,
            dome_height=base.dome_height * (1.0 + spread * g[0]),
            concavity=base.concavity + spread * g[1],
            asymmetry=base.asymmetry + spread * g[2],
        )
        meshes.append(synth_palate(p)[0])
    return meshes


def geometry_for_mesh(m, spacing=DEFAULT_SPACING, margin=4.0):
    """(dims, spacing, origin) of a volume that encloses the mesh plus margin."""
    lo = m.vertices.min(axis=0) - margin
    hi = m.vertices.max(axis=0) + margin
    spacing = np.asarray(spacing, dtype=float)
    dims = tuple(int(np.ceil((hi[a] - lo[a]) / spacing[a])) + 1 for a in range(3))
    return dims, tuple(spacing), tuple(lo)


def rasterize(m, geom, tissue_value=200, background=0):
    """Scan-like volume of a height-field mesh.

    ``geom`` is a (dims, spacing, origin) triple as produced by
    ``geometry_for_mesh``. Voxels whose centers lie on or below the sheet
    become ``tissue_value``, the rest ``background``. Segmenting at any
    threshold strictly between the two recovers the tissue set exactly, and
    the extracted surface cloud covers the sheet to within a voxel diagonal.
    """
    if not 0 <= background < tissue_value <= 255:
        raise ValueError("need 0 <= background < tissue_value <= 255")
    dims, spacing, origin = geom
    dims = tuple(int(d) for d in dims)
    spacing = tuple(float(s) for s in spacing)
    origin = tuple(float(o) for o in origin)
    lo = np.asarray(origin)
    hi = lo + (np.asarray(dims) - 1) * np.asarray(spacing)
    vmin = m.vertices.min(axis=0)
    vmax = m.vertices.max(axis=0)
    if (vmin < lo).any() or (vmax > hi).any():
        raise ValueError("mesh exceeds the volume geometry bounds")

    tri = m.triangle_array()
    heights = accel.column_heights(
        tri[:, 0], tri[:, 1], tri[:, 2],
        origin[0], origin[1], spacing[0], spacing[1], dims[0], dims[1],
    )
    z = origin[2] + np.arange(dims[2]) * spacing[2]
    below = z[None, None, :] <= heights[:, :, None]
    voxels = np.where(below, np.uint8(tissue_value), np.uint8(background))
    return Volume(dims=dims, spacing=spacing, origin=origin, voxels=voxels.astype(np.uint8))
