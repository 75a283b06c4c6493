"""Multi-scale sampling-and-aggregation network for multi-exposure HDR imaging.

Everything runs on numpy: a small reverse-mode autodiff engine
(:mod:`msanet.tensor`, :mod:`msanet.ops`), the network blocks built on it,
and the training, evaluation and file-format tooling around them.
"""
from .errors import MSANetError
from .model import ModelConfig, forward, init_weights
from .nn import count_parameters
from .preprocess import ExposureStack, build_input, tone_map
from .tensor import Tape, Tensor, backward

__all__ = [
    "MSANetError",
    "ModelConfig",
    "forward",
    "init_weights",
    "count_parameters",
    "ExposureStack",
    "build_input",
    "tone_map",
    "Tape",
    "Tensor",
    "backward",
]
__version__ = "0.1.0"
