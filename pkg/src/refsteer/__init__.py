"""Data-driven reference steering for model-based controllers.

A Hankel-matrix predictor learned from closed-loop data reshapes the
reference handed to an unchanged inner controller so the real plant tracks
the intended trajectory despite model error.
"""

from .behavior import AERIAL, GROUND, HankelSet, IOTrajectory, LTISystem, partition
from .errors import (FillFailureError, InvalidInputError, NotObservableError, ParseError,
                     PlantFault, RefsteerError)
from .kernels import BACKEND
from .predictor import Predictor, SteeringConfig, build_predictor, load_predictor, \
    save_predictor

__version__ = "0.1.0"
