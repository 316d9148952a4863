"""Human-aware model-predictive coverage control for multi-robot teams."""

from .baseline import BaselineConfig, BaselineController, RepulsionParams
from .density import GaussianComponent, GaussianMixture, random_gmm
from .dynamics import AffineStep, make_model
from .geometry import (CellMoments, Environment, Obstacle, VoronoiCell, cell_moments,
                       limited_voronoi_cell, unlimited_voronoi_partition)
from .metrics import aggregate, coverage_E, coverage_H, coverage_Hr
from .mpc import (AvoidanceCircle, CoverageQuadratic, HmpccController, MpcConfig,
                  MpcSolution, chance_constraint_rhs, mahalanobis_sq, solve)
from .prediction import (HumanPrediction, HumanTrack, PredictorConfig,
                         estimate_heading, estimate_velocity, predict)
from .sim import HumanSpec, Outcome, RobotSpec, RobotView, Scenario, SimLog, run

__version__ = "0.1.0"
