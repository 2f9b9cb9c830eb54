"""Forgery boundary detection and localization with a shallow CNN on chroma channels."""

from .errors import (DataError, ForensicsError, FormatError, ParameterError, ShapeError,
                     SpaceError, StateError, TensorShapeError)
from .estimators import ForgeryLocalizer, ScnnClassifier
from .model import ScnnParams, TrainConfig, init_params, load_params, save_params

__version__ = "0.1.0"
