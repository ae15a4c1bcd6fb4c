"""Deform the template mesh onto a segmented surface point cloud.

This is a deliberately simple stand-in for heavier nonrigid registration
machinery: after rigid posing (landmark similarity + ICP), it alternates
nearest-point correspondences with a linear solve that trades squared
point-to-target distance against smoothness of the deformation, measured by
the uniform graph Laplacian of the template connectivity applied to the
displacement from the posed template. Output meshes keep the template's face
set and landmark indices, which is what puts training meshes in vertexwise
correspondence.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from . import accel
from .align import icp_refine, similarity_from_landmarks
from .mesh import Mesh, landmark_positions


@dataclass(frozen=True)
class TemplateFitParams:
    smoothness_weight: float = 1.0
    max_outer_iter: int = 20
    correspondence_cutoff: float = 5.0  # mm
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.smoothness_weight < 0:
            raise ValueError("smoothness_weight must be >= 0")
        if self.correspondence_cutoff <= 0:
            raise ValueError("correspondence_cutoff must be > 0")


def template_laplacian(m):
    """Uniform (umbrella) graph Laplacian: v_j minus the mean of its neighbors."""
    n = len(m.vertices)
    pairs = set()
    for a, b, c in m.faces:
        pairs.update({(a, b), (b, a), (b, c), (c, b), (a, c), (c, a)})
    rows = np.fromiter((p[0] for p in pairs), dtype=np.int64, count=len(pairs))
    cols = np.fromiter((p[1] for p in pairs), dtype=np.int64, count=len(pairs))
    adj = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).reshape(-1)
    if (deg == 0).any():
        raise ValueError("template has isolated vertices")
    inv_deg = sparse.diags(1.0 / deg)
    return sparse.identity(n, format="csr") - inv_deg @ adj


def _energy(verts, posed, lap, weight, rows, targets):
    data = float(((verts[rows] - targets) ** 2).sum())
    lap_disp = lap @ (verts - posed)
    return data + weight * float((lap_disp ** 2).sum()), data


def fit_template(template, cloud, user_landmarks, params=TemplateFitParams(), history=None):
    """Pose the template rigidly, then relax it onto the cloud.

    Raises when the cloud is empty or when no vertex finds a cloud point
    within the correspondence cutoff on the first pass. ``history`` (a list,
    optional) collects the total energy after each outer solve.
    """
    if len(cloud) == 0:
        raise ValueError("empty point cloud")
    if template.landmark_indices is None:
        raise ValueError("template carries no landmark indices")

    pose = similarity_from_landmarks(landmark_positions(template), user_landmarks, allow_scale=True)
    pose = icp_refine(template, cloud, pose)
    posed = pose.apply(template.vertices)

    lap = template_laplacian(template)
    reg = (params.smoothness_weight * (lap.T @ lap)).tocsc()
    cutoff_sq = params.correspondence_cutoff ** 2

    verts = posed.copy()
    prev_energy = None
    prev_data = None
    for _ in range(params.max_outer_iter):
        idx, sq = accel.nearest_points(cloud.points, verts)
        keep = sq <= cutoff_sq
        if not keep.any():
            if prev_energy is None:
                raise ValueError("no correspondences within cutoff")
            break
        rows = np.nonzero(keep)[0]
        targets = cloud.points[idx[rows]]

        energy_pre, data_pre = _energy(verts, posed, lap, params.smoothness_weight, rows, targets)
        if prev_data is not None:
            # re-matching may only add new pairs, each bounded by the cutoff
            added = max(0, len(rows) - prev_data[1])
            if data_pre > prev_data[0] + added * cutoff_sq + 1e-9 * (1 + prev_data[0]):
                raise RuntimeError("re-correspondence raised the data term beyond cutoff slack")

        w_diag = np.zeros(len(verts))
        w_diag[rows] = 1.0
        system = (sparse.diags(w_diag) + reg).tocsc()
        rhs = np.zeros((len(verts), 3))
        rhs[rows] = targets - posed[rows]
        disp = splu(system).solve(rhs)
        verts = posed + disp

        energy_post, data_post = _energy(verts, posed, lap, params.smoothness_weight, rows, targets)
        if energy_post > energy_pre * (1 + 1e-9) + 1e-300:
            raise RuntimeError("outer iteration increased the fit energy")
        if history is not None:
            history.append(energy_post)
        prev_data = (data_post, len(rows))
        if prev_energy is not None and abs(prev_energy - energy_post) <= params.convergence_tol * max(prev_energy, 1e-300):
            prev_energy = energy_post
            break
        prev_energy = energy_post

    return Mesh(vertices=verts, faces=template.faces, landmark_indices=template.landmark_indices)
