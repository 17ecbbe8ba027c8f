"""Export residual-stream activation traces from torch decoder models.

Captures the embedding output plus each layer's post-attention and post-MLP
residual states (2L+1 boundaries) during calibration forward passes and
writes them as ETRC v1 files. The ETRC byte format is the only coupling to
the analysis toolkit that consumes these traces.
"""

__version__ = "0.1.0"

from .capture import BoundaryCountError, HookSpec, capture_boundaries, export_trace
from .tiny import TinyDecoder, TinyDecoderConfig, load_tiny, save_tiny
from .writer import write_etrc

__all__ = [
    "BoundaryCountError",
    "HookSpec",
    "TinyDecoder",
    "TinyDecoderConfig",
    "capture_boundaries",
    "export_trace",
    "load_tiny",
    "save_tiny",
    "write_etrc",
]
