"""Reduced-complexity Kalman filtering by sketching, censoring and update selection."""

from .errors import ConfigurationError, ContractError, NumericalError, SketchKFError
from .kalman import correct_batch, correct_sequential, rmse
from .sketch_ac import CensorConfig, ac_kf_step, ac_lms_sketch, block_censor, entry_censor
from .sketch_rp import SketchedBatch, fwht, rp_kf_step, rp_sketch
from .smoother import FilterArchive, SmoothedTrajectory, bud_ks, rts_smooth
from .statespace import GaussianBelief, LinearDynamicalSystem, MeasurementBatch, Trajectory, predict, simulate
from .uskf import EigenBasis, UsKfConfig, us_kf_correct

__all__ = [
    "CensorConfig", "ConfigurationError", "ContractError", "EigenBasis", "FilterArchive", "GaussianBelief",
    "LinearDynamicalSystem", "MeasurementBatch", "NumericalError", "SketchKFError", "SketchedBatch",
    "SmoothedTrajectory", "Trajectory", "UsKfConfig", "ac_kf_step", "ac_lms_sketch", "block_censor",
    "bud_ks", "correct_batch", "correct_sequential", "entry_censor", "fwht", "predict", "rmse",
    "rp_kf_step", "rp_sketch", "rts_smooth", "simulate", "us_kf_correct",
]
