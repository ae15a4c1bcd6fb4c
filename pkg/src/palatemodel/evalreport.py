"""Evaluate a fitted mesh against a reference surface.

Per-vertex error is the distance to the closest point on the reference mesh;
the summary artifacts are the empirical cumulative error function (CSV and a
self-contained SVG plot) and a colored heat-map mesh (blue at zero error,
red at the saturation distance). Callers align rigidly first, without
scaling, so the shape itself is what gets measured; ``rigid_align_for_eval``
implements that protocol with landmarks plus ICP.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .align import icp_refine, similarity_from_landmarks
from .mesh import closest_points_on_mesh, landmark_positions
from .volume import PointCloud


@dataclass(frozen=True)
class ErrorReport:
    per_vertex_mm: np.ndarray
    mesh_id: str = "mesh"
    reference_id: str = "reference"
    sorted_mm: np.ndarray = field(init=False)

    def __post_init__(self):
        errs = np.asarray(self.per_vertex_mm, dtype=np.float64).reshape(-1)
        if not np.isfinite(errs).all() or (errs < 0).any():
            raise ValueError("errors must be finite and non-negative")
        object.__setattr__(self, "per_vertex_mm", errs)
        object.__setattr__(self, "sorted_mm", np.sort(errs))

    def __len__(self):
        return len(self.per_vertex_mm)


def per_vertex_errors(m, reference, mesh_id="mesh", reference_id="reference"):
    """Distance from each vertex of ``m`` to the closest reference surface point."""
    if len(reference.faces) == 0:
        raise ValueError("reference mesh has no faces")
    _, dist = closest_points_on_mesh(m.vertices, reference)
    return ErrorReport(per_vertex_mm=dist, mesh_id=mesh_id, reference_id=reference_id)


def rigid_align_for_eval(m, reference, trim_fraction=0.1):
    """Landmark + ICP rigid alignment of ``m`` onto ``reference``, no scaling."""
    tf = similarity_from_landmarks(
        landmark_positions(m), landmark_positions(reference), allow_scale=False
    )
    tf = icp_refine(m, PointCloud(points=reference.vertices), tf,
                    max_iter=100, tol=1e-12, trim_fraction=trim_fraction)
    return m.with_vertices(tf.apply(m.vertices))


def cumulative_error(report, n_bins=256):
    """Empirical CDF sampled at uniform thresholds from 0 to the max error.

    Returns an (n_bins, 2) array of (distance_mm, fraction); the fraction
    column is monotone non-decreasing and ends at 1.
    """
    if len(report) == 0:
        raise ValueError("empty error report")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    top = float(report.sorted_mm[-1])
    thresholds = np.linspace(0.0, top, n_bins)
    counts = np.searchsorted(report.sorted_mm, thresholds, side="right")
    return np.column_stack([thresholds, counts / len(report)])


def fraction_below(report, threshold):
    """Fraction of errors strictly below the threshold."""
    if len(report) == 0:
        raise ValueError("empty error report")
    return float(np.searchsorted(report.sorted_mm, threshold, side="left") / len(report))


def heatmap_colors(report, d_max):
    """Per-vertex RGB for a two-stop linear map: 0 -> blue, >= d_max -> red."""
    if d_max <= 0:
        raise ValueError("d_max must be > 0")
    t = np.clip(report.per_vertex_mm / d_max, 0.0, 1.0)
    colors = np.zeros((len(report), 3), dtype=np.uint8)
    colors[:, 0] = np.rint(255 * t).astype(np.uint8)
    colors[:, 2] = np.rint(255 * (1.0 - t)).astype(np.uint8)
    return colors


def heatmap_mesh(m, report, d_max):
    """(mesh, per-vertex uint8 RGB) pair ready for colored PLY export."""
    if len(report) != len(m.vertices):
        raise ValueError("one error per mesh vertex required")
    return m, heatmap_colors(report, d_max)


def write_cdf_csv(table, path):
    lines = ["distance_mm,fraction"]
    lines += [f"{d:.10g},{f:.10g}" for d, f in table]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(path)


def write_cdf_svg(table, path):
    """Self-contained SVG line plot of the cumulative error function."""
    width, height = 640, 480
    ml, mr, mt, mb = 60, 20, 20, 50
    px = width - ml - mr
    py = height - mt - mb
    dmax = max(float(table[-1][0]), 1e-12)

    def sx(d):
        return ml + px * d / dmax

    def sy(f):
        return mt + py * (1.0 - f)

    pts = " ".join(f"{sx(d):.2f},{sy(f):.2f}" for d, f in table)
    ticks = []
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = sy(frac)
        ticks.append(f'<line x1="{ml}" y1="{y:.2f}" x2="{ml - 5}" y2="{y:.2f}" stroke="black"/>')
        ticks.append(f'<text x="{ml - 8}" y="{y + 4:.2f}" font-size="12" text-anchor="end">{frac:g}</text>')
        x = sx(frac * dmax)
        ticks.append(f'<line x1="{x:.2f}" y1="{mt + py}" x2="{x:.2f}" y2="{mt + py + 5}" stroke="black"/>')
        ticks.append(
            f'<text x="{x:.2f}" y="{mt + py + 18}" font-size="12" text-anchor="middle">{frac * dmax:.3g}</text>'
        )
    svg = "\n".join(
        [
            f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width} {height}">',
            f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
            f'<rect x="{ml}" y="{mt}" width="{px}" height="{py}" fill="none" stroke="black"/>',
            *ticks,
            f'<polyline points="{pts}" fill="none" stroke="#1f77b4" stroke-width="2"/>',
            f'<text x="{ml + px / 2}" y="{height - 12}" font-size="14" text-anchor="middle">distance (mm)</text>',
            f'<text x="16" y="{mt + py / 2}" font-size="14" text-anchor="middle" '
            f'transform="rotate(-90 16 {mt + py / 2})">cumulative fraction</text>',
            "</svg>",
        ]
    )
    Path(path).write_text(svg + "\n", encoding="utf-8")
    return Path(path)
