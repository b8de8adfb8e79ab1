"""Multimodal change detection by coupled dictionary learning."""

from .estimator import CoupledDictionaryChangeDetector
from .palm import SolverConfig
from .raster import BinaryChangeMask, Modality, Raster

__all__ = ["CoupledDictionaryChangeDetector", "SolverConfig", "Raster", "BinaryChangeMask", "Modality"]
__version__ = "0.1.0"
