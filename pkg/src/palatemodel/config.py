"""Pipeline configuration: INI-style text with documented keys.

Sections and keys (all optional; defaults shown):

    [pipeline]
    threshold = 25.0            segmentation threshold
    crop_min = <empty>          "x y z" inclusive voxel bounds; both or neither
    crop_max = <empty>
    largest_component = false   keep only the largest tissue component

    [templatefit]
    smoothness_weight = 1.0
    max_outer_iter = 20
    correspondence_cutoff = 5.0
    convergence_tol = 1e-6

    [fit]
    max_iter = 50
    grad_tol = 1e-9
    correspondence_cutoff = 5.0
    refresh_correspondences_every = 5

    [gpa]
    max_iter = 100
    tol = 1e-9

    [icp]
    max_iter = 50
    tol = 1e-9
    trim_fraction = 0.1
"""

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .modelfit import FitParams
from .templatefit import TemplateFitParams
from .volume import CropBox


@dataclass
class PipelineConfig:
    threshold: float = 25.0
    crop: CropBox | None = None
    largest_component: bool = False
    templatefit: TemplateFitParams = field(default_factory=TemplateFitParams)
    fit: FitParams = field(default_factory=FitParams)
    gpa_max_iter: int = 100
    gpa_tol: float = 1e-9
    icp_max_iter: int = 50
    icp_tol: float = 1e-9
    icp_trim_fraction: float = 0.1

    def resolved_text(self):
        lines = ["[pipeline]", f"threshold = {self.threshold:g}"]
        if self.crop is not None:
            lines.append("crop_min = " + " ".join(str(v) for v in self.crop.min_voxel))
            lines.append("crop_max = " + " ".join(str(v) for v in self.crop.max_voxel))
        lines.append(f"largest_component = {str(self.largest_component).lower()}")
        tf = self.templatefit
        lines += [
            "[templatefit]",
            f"smoothness_weight = {tf.smoothness_weight:g}",
            f"max_outer_iter = {tf.max_outer_iter}",
            f"correspondence_cutoff = {tf.correspondence_cutoff:g}",
            f"convergence_tol = {tf.convergence_tol:g}",
        ]
        ft = self.fit
        lines += [
            "[fit]",
            f"max_iter = {ft.max_iter}",
            f"grad_tol = {ft.grad_tol:g}",
            f"correspondence_cutoff = {ft.correspondence_cutoff:g}",
            f"refresh_correspondences_every = {ft.refresh_correspondences_every}",
        ]
        lines += [
            "[gpa]",
            f"max_iter = {self.gpa_max_iter}",
            f"tol = {self.gpa_tol:g}",
            "[icp]",
            f"max_iter = {self.icp_max_iter}",
            f"tol = {self.icp_tol:g}",
            f"trim_fraction = {self.icp_trim_fraction:g}",
        ]
        return "\n".join(lines)


def load_config(path=None):
    """Parse a config file; a missing path yields pure defaults."""
    cfg = PipelineConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config: not found: {path}")
    parser = configparser.ConfigParser()
    parser.read_string(path.read_text(encoding="utf-8"))

    if parser.has_section("pipeline"):
        p = parser["pipeline"]
        cfg.threshold = p.getfloat("threshold", cfg.threshold)
        cfg.largest_component = p.getboolean("largest_component", cfg.largest_component)
        cmin, cmax = p.get("crop_min", "").split(), p.get("crop_max", "").split()
        if bool(cmin) != bool(cmax):
            raise ValueError("config: crop_min and crop_max must be given together")
        if cmin:
            cfg.crop = CropBox(
                min_voxel=tuple(int(v) for v in cmin),
                max_voxel=tuple(int(v) for v in cmax),
            )
    if parser.has_section("templatefit"):
        t = parser["templatefit"]
        cfg.templatefit = TemplateFitParams(
            smoothness_weight=t.getfloat("smoothness_weight", cfg.templatefit.smoothness_weight),
            max_outer_iter=t.getint("max_outer_iter", cfg.templatefit.max_outer_iter),
            correspondence_cutoff=t.getfloat("correspondence_cutoff", cfg.templatefit.correspondence_cutoff),
            convergence_tol=t.getfloat("convergence_tol", cfg.templatefit.convergence_tol),
        )
    if parser.has_section("fit"):
        f = parser["fit"]
        cfg.fit = FitParams(
            max_iter=f.getint("max_iter", cfg.fit.max_iter),
            grad_tol=f.getfloat("grad_tol", cfg.fit.grad_tol),
            correspondence_cutoff=f.getfloat("correspondence_cutoff", cfg.fit.correspondence_cutoff),
            refresh_correspondences_every=f.getint(
                "refresh_correspondences_every", cfg.fit.refresh_correspondences_every
            ),
        )
    if parser.has_section("gpa"):
        g = parser["gpa"]
        cfg.gpa_max_iter = g.getint("max_iter", cfg.gpa_max_iter)
        cfg.gpa_tol = g.getfloat("tol", cfg.gpa_tol)
    if parser.has_section("icp"):
        i = parser["icp"]
        cfg.icp_max_iter = i.getint("max_iter", cfg.icp_max_iter)
        cfg.icp_tol = i.getfloat("tol", cfg.icp_tol)
        cfg.icp_trim_fraction = i.getfloat("trim_fraction", cfg.icp_trim_fraction)
    return cfg
