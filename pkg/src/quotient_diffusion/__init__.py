"""Diffusion and flow models on point clouds modulo rotations, via horizontal lifting."""

__version__ = "0.1.0"

from .denoiser import GaussianDenoiser, MLPDenoiser
from .estimator import CenterOfMassRemover, KabschAligner, QuotientDiffusion, ShapeDescriptor
from .geometry import (
    DegenerateConfigurationError,
    SO2Space,
    SO3Space,
    horizontal_project,
    make_space,
    mean_curvature,
    vertical_basis,
)
from .objectives import TrainConfig, kabsch_align, train
from .samplers import SamplerConfig, sample
from .schedule import GeneralBridge, LinearOneSided, make_schedule

__all__ = [
    "CenterOfMassRemover",
    "DegenerateConfigurationError",
    "GaussianDenoiser",
    "GeneralBridge",
    "KabschAligner",
    "LinearOneSided",
    "MLPDenoiser",
    "QuotientDiffusion",
    "SO2Space",
    "SO3Space",
    "SamplerConfig",
    "ShapeDescriptor",
    "TrainConfig",
    "horizontal_project",
    "kabsch_align",
    "make_schedule",
    "make_space",
    "mean_curvature",
    "sample",
    "train",
    "vertical_basis",
]
