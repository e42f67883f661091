"""Extraction bridge: real videos and text into the LGQE1/NDJSON formats."""

from .adapter import ExtractionJob, run_job

__all__ = ["ExtractionJob", "run_job"]
__version__ = "0.1.0"
