"""Windowed per-layer speech feature extraction into GSPF files."""

from .extract import ExtractionJob, ExtractionResult, JobError, extract, write_gspf
from .model import FilterbankModel, ModelLoadError, PretrainedSpeechModel, build_model

__version__ = "0.1.0"

__all__ = [
    "ExtractionJob",
    "ExtractionResult",
    "JobError",
    "extract",
    "write_gspf",
    "FilterbankModel",
    "ModelLoadError",
    "PretrainedSpeechModel",
    "build_model",
    "__version__",
]
