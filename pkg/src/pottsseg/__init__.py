"""Colour image segmentation with a Potts prior and loopy belief propagation."""

from .cme import CmeConfig, EstimateReport, run_cme
from .estimators import MarginalLikelihoodSegmenter, PottsSegmenter
from .grid import Graph, Grid, build_grid
from .observation import GaussianParams
from .potts_prior import (ConvergenceError, solve_alpha, solve_alpha_for_u,
                          solve_prior_fixed_point, transition_point)

__all__ = [
    "CmeConfig",
    "ConvergenceError",
    "EstimateReport",
    "GaussianParams",
    "Graph",
    "Grid",
    "MarginalLikelihoodSegmenter",
    "PottsSegmenter",
    "build_grid",
    "run_cme",
    "solve_alpha",
    "solve_alpha_for_u",
    "solve_prior_fixed_point",
    "transition_point",
]

__version__ = "0.1.0"
