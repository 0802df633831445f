"""Restoration of image sequences degraded by atmospheric turbulence.

Frames are fused temporally, registered onto the fused reference with a
diffeomorphic (LDDMM) flow, and sharpened by blind TV deconvolution.
"""

__version__ = "0.1.0"

from .core import BoundaryRule, KernelSizeError, ShapeMismatchError
from .deconv import DeconvConfig, DeconvResult, blind_deconvolve
from .metrics import MetricReport, kernel_correlation, mean_endpoint_error, psnr
from .pipelines import PipelineConfig, PipelineReport, dfr_restore, frd_restore, refine_reference
from .registration import CauchyNavierParams, RegistrationConfig, RegistrationResult, register
from .simulate import GroundTruth, SimConfig, simulate, test_card
from .temporal import temporal_filter, temporal_mean, temporal_median

__all__ = [
    "BoundaryRule", "KernelSizeError", "ShapeMismatchError",
    "DeconvConfig", "DeconvResult", "blind_deconvolve",
    "MetricReport", "kernel_correlation", "mean_endpoint_error", "psnr",
    "PipelineConfig", "PipelineReport", "dfr_restore", "frd_restore", "refine_reference",
    "CauchyNavierParams", "RegistrationConfig", "RegistrationResult", "register",
    "GroundTruth", "SimConfig", "simulate", "test_card",
    "temporal_filter", "temporal_mean", "temporal_median",
]
