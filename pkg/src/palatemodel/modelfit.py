"""Fit the shape space to point clouds or sparse landmarks.

Fitting is two-stage, mirroring the registration pipeline: a similarity pose
from the seven landmarks (refined by ICP when a dense cloud is available),
then bounded limited-memory quasi-Newton minimization of the squared
vertex-to-target energy over the coefficients, with every coefficient
confined to [-sqrt(variance), +sqrt(variance)] of its mode. The pose stays
frozen while coefficients are optimized; all fitting runs in the
pose-normalized model frame with the cloud mapped through the inverse pose.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import accel
from .align import SimilarityTransform, icp_refine, similarity_from_landmarks
from .mesh import LANDMARK_NAMES, landmark_positions
from .shapespace import generate, log_density


@dataclass(frozen=True)
class FitParams:
    max_iter: int = 50                      # total inner quasi-Newton iterations
    grad_tol: float = 1e-9                  # projected-gradient infinity norm
    correspondence_cutoff: float = 5.0      # mm, in the data frame
    refresh_correspondences_every: int = 5  # inner iterations between refreshes

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be > 0")


@dataclass(frozen=True)
class FitResult:
    transform: SimilarityTransform
    coefficients: np.ndarray
    final_energy: float  # mm^2, in the data frame
    iterations: int
    log_density: float

    def fitted_vertices(self, model):
        return self.transform.apply(generate(model, self.coefficients).vertices)


def fitting_energy(model, c, targets):
    """Squared-distance energy and its analytic coefficient gradient.

    ``targets`` is a sequence of (vertex index, target point) pairs. The
    gradient of sum ||v_j(c) - q_j||^2 follows from v_j being affine in c.
    """
    targets = list(targets)
    if not targets:
        raise ValueError("empty target list")
    rows = np.array([t[0] for t in targets], dtype=np.int64)
    if rows.min() < 0 or rows.max() >= model.n_vertices:
        raise ValueError("target vertex index out of range")
    points = np.array([t[1] for t in targets], dtype=np.float64).reshape(-1, 3)
    value, grad = _energy_arrays(model, np.asarray(c, dtype=np.float64), rows, points)
    return value, grad


def _selection(model, rows):
    flat = (3 * rows[:, None] + np.arange(3)).reshape(-1)
    b_sel = model.basis[flat]
    base = model.mean[flat] + b_sel @ model.coeff_means
    return b_sel, base


def _energy_arrays(model, c, rows, points):
    b_sel, base = _selection(model, rows)
    r = base + b_sel @ c - points.reshape(-1)
    return float(r @ r), 2.0 * (b_sel.T @ r)


def _minimize_box(model, c0, rows, points, bounds, maxiter, grad_tol):
    b_sel, base = _selection(model, rows)
    q = points.reshape(-1)

    def fun(c):
        r = base + b_sel @ c - q
        return float(r @ r), 2.0 * (b_sel.T @ r)

    state = {"prev": fun(c0)[0]}

    def check_monotone(ck):
        f = fun(ck)[0]
        if f > state["prev"] * (1 + 1e-12) + 1e-300:
            raise RuntimeError("optimizer energy increased between iterations")
        state["prev"] = f

    res = minimize(
        fun,
        c0,
        jac=True,
        method="L-BFGS-B",
        bounds=list(zip(-bounds, bounds)),
        callback=check_monotone,
        options={"maxiter": int(maxiter), "gtol": grad_tol, "ftol": 1e-16, "maxfun": 100 * int(maxiter) + 100},
    )
    # the box must hold exactly: project once, which never moves a compliant value
    c = np.clip(res.x, -bounds, bounds)
    converged = res.status == 0
    return c, int(res.nit), converged


def _pose(model, user_landmarks, cloud=None):
    mean_mesh = generate(model, np.zeros(model.n_modes))
    tf = similarity_from_landmarks(landmark_positions(mean_mesh), user_landmarks, allow_scale=True)
    if cloud is not None:
        tf = icp_refine(mean_mesh, cloud, tf, max_iter=100, tol=1e-12)
    return tf


def fit_to_cloud(model, cloud, user_landmarks, params=FitParams()):
    """Register the model to a surface point cloud.

    Alternates nearest-cloud-point correspondences for every model vertex
    (dropped beyond the cutoff) with bounded quasi-Newton steps, refreshing
    correspondences every ``refresh_correspondences_every`` inner iterations
    until the ``max_iter`` budget is spent, the projected gradient falls
    under ``grad_tol``, or the correspondences stop changing.
    """
    if len(cloud) == 0:
        raise ValueError("empty point cloud")
    tf = _pose(model, user_landmarks, cloud)
    cloud_model = tf.inverse().apply(cloud.points)
    cutoff_sq = (params.correspondence_cutoff / tf.scale) ** 2
    bounds = model.coefficient_bounds()

    c = np.zeros(model.n_modes)
    remaining = params.max_iter
    total_iters = 0
    prev_rows = None
    converged = False
    rows = points = None
    while remaining > 0:
        verts = generate(model, c).vertices
        idx, sq = accel.nearest_points(cloud_model, verts)
        keep = sq <= cutoff_sq
        if not keep.any():
            if prev_rows is None:
                raise ValueError("no correspondences within cutoff")
            break
        rows = np.nonzero(keep)[0]
        points = cloud_model[idx[rows]]
        if converged and prev_rows is not None and np.array_equal(rows, prev_rows) \
                and np.array_equal(idx[rows], prev_idx):
            break
        step = min(params.refresh_correspondences_every, remaining)
        c, nit, converged = _minimize_box(model, c, rows, points, bounds, step, params.grad_tol)
        total_iters += nit
        remaining -= step
        prev_rows = rows
        prev_idx = idx[rows]

    energy_model, _ = _energy_arrays(model, c, rows, points)
    return FitResult(
        transform=tf,
        coefficients=c,
        final_energy=energy_model * tf.scale ** 2,
        iterations=total_iters,
        log_density=log_density(model, c),
    )


def fit_to_landmarks(model, data_landmarks, params=FitParams()):
    """Register the model to the seven named landmark points alone.

    Correspondences are fixed (model landmark vertices to the named data
    points) so there is nothing to refresh; the pose comes from the landmark
    similarity step only, since no dense cloud exists to drive ICP.
    """
    tf = _pose(model, data_landmarks, cloud=None)
    targets_model = tf.inverse().apply(data_landmarks.positions)
    rows = np.array([model.landmark_indices[n] for n in LANDMARK_NAMES], dtype=np.int64)
    bounds = model.coefficient_bounds()

    c, nit, _ = _minimize_box(
        model, np.zeros(model.n_modes), rows, targets_model, bounds,
        params.max_iter, params.grad_tol,
    )
    energy_model, _ = _energy_arrays(model, c, rows, targets_model)
    return FitResult(
        transform=tf,
        coefficients=c,
        final_energy=energy_model * tf.scale ** 2,
        iterations=nit,
        log_density=log_density(model, c),
    )


# ---------------------------------------------------------------------------
# result file (plain text)
# ---------------------------------------------------------------------------


def save_fit_result(result, path):
    tf = result.transform
    lines = ["rotation " + " ".join(repr(float(v)) for v in tf.rotation.reshape(-1))]
    lines.append("translation " + " ".join(repr(float(v)) for v in tf.translation))
    lines.append(f"scale {float(tf.scale)!r}")
    lines.append("coefficients " + " ".join(repr(float(v)) for v in result.coefficients))
    lines.append(f"final_energy {float(result.final_energy)!r}")
    lines.append(f"iterations {result.iterations}")
    lines.append(f"log_density {float(result.log_density)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)


def load_fit_result(path):
    fields = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        key, _, rest = line.partition(" ")
        fields[key] = rest.split()
    required = {"rotation", "translation", "scale", "coefficients", "final_energy", "iterations", "log_density"}
    missing = required - fields.keys()
    if missing:
        raise ValueError(f"fit result file missing: {', '.join(sorted(missing))}")
    tf = SimilarityTransform(
        scale=float(fields["scale"][0]),
        rotation=np.array([float(v) for v in fields["rotation"]]).reshape(3, 3),
        translation=np.array([float(v) for v in fields["translation"]]),
    )
    return FitResult(
        transform=tf,
        coefficients=np.array([float(v) for v in fields["coefficients"]]),
        final_energy=float(fields["final_energy"][0]),
        iterations=int(fields["iterations"][0]),
        log_density=float(fields["log_density"][0]),
    )
