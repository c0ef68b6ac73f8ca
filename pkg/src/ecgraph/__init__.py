"""ecgraph: ECG chart digitization and a numpy CRT-Net classifier.

Subpackages and modules:
    raster, connectivity, leadtrace: images, binarization and lead extraction.
    render: synthetic chart pages with pixel-exact ground truth.
    crtnet: the CRT-Net model, autograd engine, gradient checks and training.
    metrics, datasets: evaluation and data shaping.
"""

from .errors import EcgraphError, ShapeMismatch
from .records import LEADS, SignalRecord, read_signal, write_signal

__version__ = "0.1.0"

__all__ = ["EcgraphError", "LEADS", "ShapeMismatch", "SignalRecord", "read_signal",
           "write_signal", "__version__"]
