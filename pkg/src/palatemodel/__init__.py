"""Statistical shape space of the palate surface.

Pipeline: segment volumetric scans and extract surface point clouds, deform a
template mesh onto each speaker's cloud, Procrustes-align the training
meshes, train a PCA shape space with Gaussian coefficient statistics, fit the
model to new clouds or sparse landmarks under per-mode box constraints, and
evaluate fits with point-to-surface error distributions.
"""

from .align import GpaResult, SimilarityTransform, gpa, icp_refine, similarity_from_landmarks
from .evalreport import (
    ErrorReport,
    cumulative_error,
    fraction_below,
    heatmap_mesh,
    per_vertex_errors,
    rigid_align_for_eval,
)
from .mesh import (
    LANDMARK_NAMES,
    LandmarkSet,
    Mesh,
    closest_point_on_mesh,
    closest_points_on_mesh,
    landmark_positions,
    load_mesh,
    save_mesh,
)
from .modelfit import FitParams, FitResult, fit_to_cloud, fit_to_landmarks, fitting_energy
from .phantom import PhantomParams, geometry_for_mesh, rasterize, synth_palate, synth_population
from .shapespace import ShapeSpaceModel, generate, load_model, log_density, project, save_model, train
from .templatefit import TemplateFitParams, fit_template
from .volume import (
    CropBox,
    PointCloud,
    TissueMask,
    Volume,
    crop,
    extract_surface_points,
    load_volume,
    save_volume,
    segment_tissue,
    slice_image,
)

__version__ = "0.1.0"
