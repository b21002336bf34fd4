"""Gaussian-mixture shape representation: fitting, meshing, pose and level of detail."""

__version__ = "0.1.0"

from .camera import (Camera, GaussianMixture2, SilhouetteImage, icosphere_viewpoints, paraperspective_project,
                     rasterize_mesh_silhouette, soft_silhouette)
from .fitter import FitConfig, FitTrace, em_fit, fit
from .ingest import (ShapeTarget, load_mesh, make_view_set, sample_volume_points, voxelize_solid)
from .losses import LossConfig, LossReport, loss_3d, loss_dist, loss_silhouette, total_loss
from .metrics import EvalReport, chamfer, emd, iou, silhouette_mse
from .mixture import (GaussianComponent, GaussianMixture3, MixtureParams, constrain, density, expected_density,
                      log_density, mixture_moments, sample, unconstrain)
from .shape_ops import RigidTransform, align, reduce
from .surface import TriangleMesh, VoxelGrid, extract_mesh, iso_threshold, marching_cubes, voxelize_density
