"""Rigid/similarity alignment, ICP refinement, generalized Procrustes analysis.

Landmark alignment uses the closed-form least-squares similarity solution
(SVD of the cross-covariance, reflection guard forcing det(R) = +1). ICP is
point-to-point with distance trimming and a frozen scale. GPA iterates
center / normalize / rotate-onto-consensus; inputs are first rotated into
their own principal-axes frames so the result does not depend on input order
or on similarity transforms applied to the inputs.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import accel
from .mesh import LandmarkSet
from .volume import PointCloud


@dataclass(frozen=True)
class SimilarityTransform:
    """p -> scale * rotation @ p + translation, with det(rotation) = +1."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        s = float(self.scale)
        if s <= 0:
            raise ValueError("scale must be positive")
        if np.abs(R.T @ R - np.eye(3)).max() >= 1e-9:
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(R) <= 0:
            raise ValueError("rotation must be proper (det +1)")
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls):
        return cls(scale=1.0, rotation=np.eye(3), translation=np.zeros(3))

    def apply(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return self.scale * pts @ self.rotation.T + self.translation

    def inverse(self):
        Rt = self.rotation.T
        return SimilarityTransform(
            scale=1.0 / self.scale,
            rotation=Rt,
            translation=-(Rt @ self.translation) / self.scale,
        )


def save_transform(tf, path):
    """13 reals: rotation row-major, translation, scale. One per line."""
    vals = list(tf.rotation.reshape(-1)) + list(tf.translation) + [tf.scale]
    Path(path).write_text("\n".join(repr(float(v)) for v in vals) + "\n", encoding="utf-8")


def load_transform(path):
    vals = [float(tok) for tok in Path(path).read_text(encoding="utf-8").split()]
    if len(vals) != 13:
        raise ValueError(f"transform file must hold 13 reals, got {len(vals)}")
    return SimilarityTransform(
        scale=vals[12],
        rotation=np.array(vals[:9]).reshape(3, 3),
        translation=np.array(vals[9:12]),
    )


def similarity_from_landmarks(src, dst, allow_scale=True):
    """Least-squares similarity (or rigid) mapping src landmarks onto dst.

    Matched by canonical name. Raises on collinear landmark configurations,
    where the rotation is underdetermined.
    """
    x = src.positions
    y = dst.positions
    mx = x.mean(axis=0)
    my = y.mean(axis=0)
    xc = x - mx
    yc = y - my
    cov = yc.T @ xc / len(x)
    U, S, Vt = np.linalg.svd(cov)
    if S[1] <= 1e-12 * max(S[0], 1e-300):
        raise ValueError("degenerate landmark configuration (collinear points)")
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d])
    R = U @ D @ Vt
    if allow_scale:
        var_x = (xc ** 2).sum() / len(x)
        s = float((S * np.diag(D)).sum() / var_x)
    else:
        s = 1.0
    t = my - s * R @ mx
    return SimilarityTransform(scale=s, rotation=R, translation=t)


def _kabsch(src, dst):
    """Rotation + translation minimizing ||R src + t - dst||^2 (unit scale)."""
    mx = src.mean(axis=0)
    my = dst.mean(axis=0)
    cov = (dst - my).T @ (src - mx)
    U, _, Vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(U @ Vt))
    R = U @ np.diag([1.0, 1.0, d]) @ Vt
    t = my - R @ mx
    return R, t


def icp_refine(moving, target, init, max_iter=50, tol=1e-9, trim_fraction=0.1, history=None):
    """Point-to-point ICP of mesh vertices onto a point cloud.

    Refines rotation and translation only; scale stays frozen at
    ``init.scale``. The trimmed mean squared correspondence distance is
    non-increasing across iterations (verified every iteration) and the loop
    stops at ``max_iter`` or when its relative change drops below ``tol``.
    ``history``, when a list, collects the per-iteration energies.
    """
    if len(target) == 0:
        raise ValueError("empty target point cloud")
    verts = moving.vertices
    n = len(verts)
    n_keep = max(1, n - int(trim_fraction * n))
    current = init
    prev_energy = None
    for _ in range(max_iter):
        moved = current.apply(verts)
        idx, sq = accel.nearest_points(target.points, moved)
        order = np.argsort(sq, kind="stable")[:n_keep]
        energy = float(sq[order].mean())
        if history is not None:
            history.append(energy)
        if prev_energy is not None and energy > prev_energy * (1 + 1e-12) + 1e-300:
            raise RuntimeError("ICP energy increased between iterations")
        if prev_energy is not None and abs(prev_energy - energy) <= tol * max(prev_energy, 1e-300):
            prev_energy = energy
            break
        prev_energy = energy
        src = init.scale * verts[order]
        dst = target.points[idx[order]]
        R, t = _kabsch(src, dst)
        current = SimilarityTransform(scale=init.scale, rotation=R, translation=t)
        if energy < 1e-30:
            break
    return current


# ---------------------------------------------------------------------------
# generalized Procrustes analysis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GpaResult:
    aligned: list          # one (n, 3) vertex array per input mesh
    consensus: np.ndarray  # (n, 3) mean shape, unit centroid size
    iterations: int
    final_change: float


def _center_normalize(verts):
    centered = verts - verts.mean(axis=0)
    size = np.sqrt((centered ** 2).sum())
    if size < 1e-300:
        raise ValueError("degenerate shape with zero centroid size")
    return centered / size


def _canonical_rotation(verts):
    """Map a centered shape into its principal-axes frame, deterministically.

    Axis signs follow the largest-magnitude vertex projection; the third
    axis is the cross product of the first two, so det is always +1.
    """
    cov = verts.T @ verts
    _, vecs = np.linalg.eigh(cov)
    axes = vecs[:, ::-1].copy()  # descending variance
    for j in range(2):
        proj = verts @ axes[:, j]
        if proj[np.abs(proj).argmax()] < 0:
            axes[:, j] = -axes[:, j]
    axes[:, 2] = np.cross(axes[:, 0], axes[:, 1])
    return axes


def gpa(meshes, max_iter=100, tol=1e-9):
    """Align training meshes in location, orientation, and centroid size.

    Every aligned vertex set has centroid 0 and centroid size 1 (within
    1e-9). The consensus and aligned sets are rotated into the consensus's
    principal-axes frame, which makes the result independent of input order
    and of similarity transforms applied to the inputs.
    """
    if len(meshes) < 2:
        raise ValueError("GPA needs at least two meshes")
    counts = {len(m.vertices) for m in meshes}
    if len(counts) != 1:
        raise ValueError(f"mismatched vertex counts: {sorted(counts)}")
    faces0 = meshes[0].faces
    for m in meshes[1:]:
        if not np.array_equal(m.faces, faces0):
            raise ValueError("meshes do not share one face set")

    shapes = []
    for m in meshes:
        s = _center_normalize(m.vertices)
        shapes.append(s @ _canonical_rotation(s))

    consensus = _center_normalize(np.mean(shapes, axis=0))
    aligned = shapes
    change = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        aligned = []
        for s in shapes:
            R, _ = _kabsch(s, consensus)
            aligned.append(s @ R.T)
        new_consensus = _center_normalize(np.mean(aligned, axis=0))
        change = float(np.sqrt(((new_consensus - consensus) ** 2).sum() / len(consensus)))
        consensus = new_consensus
        if change < tol:
            break

    Rc = _canonical_rotation(consensus)
    consensus = consensus @ Rc
    aligned = [a @ Rc for a in aligned]
    return GpaResult(aligned=aligned, consensus=consensus, iterations=iterations, final_change=change)
