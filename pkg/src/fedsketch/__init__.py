"""Uplink-efficient federated averaging at desk scale.

Structured updates (low-rank factor training, random-mask training) and
sketched updates (subsampling, probabilistic quantization, randomized
Hadamard rotation) around a synchronous federated-averaging loop, with a
bit-exact wire format so accuracy can be plotted against bytes actually
uploaded.
"""

from .hadamard import backend, derotate, fwht, padded_dim, rotate, rotation_spec
from .sketch import SketchConfig, quantization_mse, sketch_decode, sketch_encode
from .simulation import RoundConfig, run_experiment
from .tensorops import (
    DTYPE,
    Layer,
    ModelParams,
    inverse_reshape_kernel,
    mark_compressible,
    reshape_kernel,
    rng_stream,
)
from .wire import CompressionConfig, deserialize, payload_compression_factor, serialize

__version__ = "0.1.0"
