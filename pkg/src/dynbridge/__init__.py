"""Dynamic Markov bridges and the insider-trading equilibrium they produce."""

__version__ = "0.1.0"

from ._core import BACKEND  # noqa: E402
from .errors import *  # noqa: E402,F401,F403
from .kernels import TransitionKernel, build_G, build_pricing  # noqa: E402
from .model import (ModelSpec, load_scenario, make_model, model_from_dict,  # noqa: E402
                    validate)
from .simulate import (PathEnsemble, TimeGrid, simulate_bridge,  # noqa: E402
                       simulate_ou_bridge, simulate_signal)
from .transform import SpaceTransform  # noqa: E402

__all__ = ["BACKEND", "TransitionKernel", "build_G", "build_pricing", "ModelSpec",
           "load_scenario", "make_model", "model_from_dict", "validate", "PathEnsemble",
           "TimeGrid", "simulate_bridge", "simulate_ou_bridge", "simulate_signal",
           "SpaceTransform", "__version__"]
