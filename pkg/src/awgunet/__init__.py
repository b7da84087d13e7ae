"""Wavelet-guided attention U-Net for nuclei segmentation, on bare numpy.

The package is a self-contained library: a reverse-mode autodiff engine
over numpy arrays (:mod:`awgunet.autodiff`, :mod:`awgunet.ops`), a Haar
wavelet layer (:mod:`awgunet.wavelet`), the wavelet-guided channel
attention gate (:mod:`awgunet.attention`), the anti-aliased decoder
(:mod:`awgunet.decoder`), full model assembly with ablation variants
(:mod:`awgunet.model`), losses and metrics, dataset handling, a training
loop, and a command-line interface (``awgunet train/eval/predict/inspect/
selftest``).
"""

from .autodiff import DEFAULT_DTYPE, GradientTape, Tensor
from .exceptions import CheckpointError, ConfigError, NumericalAbort, ShapeError

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_DTYPE",
    "GradientTape",
    "Tensor",
    "CheckpointError",
    "ConfigError",
    "NumericalAbort",
    "ShapeError",
    "__version__",
]
