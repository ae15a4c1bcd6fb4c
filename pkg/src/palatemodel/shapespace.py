"""PCA shape space over vertexwise-corresponding meshes.

Feature vectors stack vertex coordinates consecutively (x1, y1, z1, x2, ...).
Principal directions come from an SVD of the centered data matrix (stable for
k >> n); eigenvalues use the n-1 covariance divisor. Coefficients follow a
diagonal Gaussian with per-mode variances; coefficient means are zero by
construction and stored explicitly.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import LANDMARK_NAMES, Mesh

_MAGIC = b"PSM1"


@dataclass(frozen=True)
class ShapeSpaceModel:
    mean: np.ndarray          # (k,)
    basis: np.ndarray         # (k, d), orthonormal columns
    coeff_means: np.ndarray   # (d,)
    variances: np.ndarray     # (d,), non-increasing
    faces: np.ndarray         # (f, 3)
    landmark_indices: dict    # 7 template landmarks
    n_train: int
    covariance_divisor: int = 1  # 1 encodes the n-1 divisor

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "basis", np.asarray(self.basis, dtype=np.float64))
        object.__setattr__(self, "coeff_means", np.asarray(self.coeff_means, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))
        k = len(self.mean)
        d = self.basis.shape[1] if self.basis.ndim == 2 else 0
        if self.basis.shape != (k, d):
            raise ValueError("basis shape does not match mean length")
        if len(self.coeff_means) != d or len(self.variances) != d:
            raise ValueError("coefficient statistics do not match basis width")
        gram = self.basis.T @ self.basis
        if np.abs(gram - np.eye(d)).max() >= 1e-10:
            raise ValueError("basis columns are not orthonormal")
        if d and (np.diff(self.variances) > 1e-12 * max(self.variances[0], 1e-300)).any():
            raise ValueError("variances must be non-increasing")
        if d and (self.variances < 0).any():
            raise ValueError("variances must be non-negative")
        if d > max(self.n_train - 1, 0):
            raise ValueError("more modes than training meshes allow (d > n - 1)")
        if k % 3 != 0:
            raise ValueError("mean length must be 3 * |V|")
        if len(self.faces) and self.faces.max() >= k // 3:
            raise ValueError("face set references vertices beyond the model")

    @property
    def n_vertices(self):
        return len(self.mean) // 3

    @property
    def n_modes(self):
        return self.basis.shape[1]

    def coefficient_bounds(self):
        """Per-mode half-width of the plausible box: sqrt(variance)."""
        return np.sqrt(self.variances)

    def mean_mesh(self):
        return Mesh(
            vertices=self.mean.reshape(-1, 3),
            faces=self.faces,
            landmark_indices=self.landmark_indices,
        )


def train(meshes, variance_keep=1.0):
    """Fit the shape space to GPA-aligned meshes sharing one topology.

    Keeps the smallest number of leading modes whose variance sum reaches
    ``variance_keep`` of the total; modes with numerically zero variance are
    never kept. Basis signs are fixed so each direction's largest-magnitude
    entry is positive, making training deterministic across platforms.
    """
    if len(meshes) < 2:
        raise ValueError("training requires at least two meshes")
    if not 0 < variance_keep <= 1:
        raise ValueError("variance_keep must be in (0, 1]")
    faces0 = meshes[0].faces
    nv = len(meshes[0].vertices)
    for m in meshes[1:]:
        if len(m.vertices) != nv or not np.array_equal(m.faces, faces0):
            raise ValueError("mismatched mesh topologies")

    X = np.stack([m.vertices.reshape(-1) for m in meshes])  # (n, k)
    n = len(X)
    mean = X.mean(axis=0)
    Xc = X - mean
    U, S, Vt = np.linalg.svd(Xc, full_matrices=False)
    if S[0] <= 1e-12 * max(1.0, np.abs(X).max()):
        raise ValueError("zero variance, nothing to train")
    nonzero = S > 1e-10 * S[0]
    S = S[nonzero]
    Vt = Vt[nonzero]
    variances = S ** 2 / (n - 1)
    total = variances.sum()
    target = variance_keep * total
    cum = np.cumsum(variances)
    d = int(np.searchsorted(cum, target - 1e-12 * total) + 1)
    d = min(d, len(variances))

    basis = Vt[:d].T.copy()
    for j in range(d):
        col = basis[:, j]
        if col[np.abs(col).argmax()] < 0:
            basis[:, j] = -col

    landmarks = meshes[0].landmark_indices
    if landmarks is None:
        raise ValueError("training meshes carry no landmark indices")
    missing = [nm for nm in LANDMARK_NAMES if nm not in landmarks]
    if missing:
        raise ValueError(f"missing landmark(s): {', '.join(missing)}")

    return ShapeSpaceModel(
        mean=mean,
        basis=basis,
        # zero by construction: projections of centered data sum to zero
        coeff_means=np.zeros(d),
        variances=variances[:d],
        faces=faces0.copy(),
        landmark_indices=dict(landmarks),
        n_train=n,
    )


def generate(model, c):
    """Mesh for coefficient offsets c: x = mean + basis @ (coeff_means + c)."""
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    if len(c) != model.n_modes:
        raise ValueError(f"expected {model.n_modes} coefficients, got {len(c)}")
    x = model.mean + model.basis @ (model.coeff_means + c)
    return Mesh(
        vertices=x.reshape(-1, 3),
        faces=model.faces,
        landmark_indices=model.landmark_indices,
    )


def project(model, m):
    """Coefficient offsets of a mesh: c_i = e_i . (x - mean) - m_i."""
    if len(m.vertices) != model.n_vertices or not np.array_equal(m.faces, model.faces):
        raise ValueError("mesh topology does not match the model")
    x = m.vertices.reshape(-1)
    return model.basis.T @ (x - model.mean) - model.coeff_means


def log_density(model, c):
    """Log of the diagonal Gaussian density over coefficient offsets."""
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    if len(c) != model.n_modes:
        raise ValueError(f"expected {model.n_modes} coefficients, got {len(c)}")
    lam = model.variances
    if (lam <= 0).any():
        raise ValueError("zero-variance component retained; density undefined")
    return float(-0.5 * (c ** 2 / lam + np.log(2.0 * np.pi * lam)).sum())


# ---------------------------------------------------------------------------
# model file ("PSM1", little-endian)
# ---------------------------------------------------------------------------
#
# u32 k | u32 d | u32 n_train | u32 face_count
# f64 mean[k] | f64 basis[k*d] column-major | f64 coeff_means[d]
# f64 variances[d] | u32 faces[3*face_count]
# 7 x (u32 name_len, name utf-8, u32 vertex_index)
# u8 covariance-divisor tag (1 = divisor n-1)


def save_model(model, path):
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        k = len(model.mean)
        d = model.n_modes
        fh.write(struct.pack("<IIII", k, d, model.n_train, len(model.faces)))
        fh.write(model.mean.astype("<f8").tobytes())
        fh.write(np.asfortranarray(model.basis.astype("<f8")).tobytes(order="F"))
        fh.write(model.coeff_means.astype("<f8").tobytes())
        fh.write(model.variances.astype("<f8").tobytes())
        fh.write(model.faces.astype("<u4").tobytes())
        for name in LANDMARK_NAMES:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<I", model.landmark_indices[name]))
        fh.write(struct.pack("<B", model.covariance_divisor))
    return path


class _Reader:
    def __init__(self, data, name):
        self.data = data
        self.name = name
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise ValueError(f"{self.name}: truncated model file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def f64(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").copy()


def load_model(path):
    """Read a model file; structural invariants are rechecked on load."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"model not found: {path}")
    r = _Reader(path.read_bytes(), path.name)
    if r.take(4) != _MAGIC:
        raise ValueError(f"{path.name}: bad magic, not a shape model file")
    k = r.u32()
    d = r.u32()
    n_train = r.u32()
    face_count = r.u32()
    mean = r.f64(k)
    basis = r.f64(k * d).reshape((k, d), order="F")
    coeff_means = r.f64(d)
    variances = r.f64(d)
    faces = np.frombuffer(r.take(4 * 3 * face_count), dtype="<u4").astype(np.int64).reshape(-1, 3)
    landmarks = {}
    for _ in range(7):
        ln = r.u32()
        name = r.take(ln).decode("utf-8")
        landmarks[name] = r.u32()
    divisor = struct.unpack("<B", r.take(1))[0]
    return ShapeSpaceModel(
        mean=mean,
        basis=basis,
        coeff_means=coeff_means,
        variances=variances,
        faces=faces,
        landmark_indices=landmarks,
        n_train=n_train,
        covariance_divisor=divisor,
    )
