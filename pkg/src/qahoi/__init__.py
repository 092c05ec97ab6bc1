"""Query-based-anchor HOI detection with multi-scale deformable attention."""

from .config import Config
from .model import QAHOI, ModelOutput

__all__ = ["Config", "QAHOI", "ModelOutput"]
__version__ = "0.1.0"
