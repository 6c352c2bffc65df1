"""Turn an image/caption manifest into a binary embedding dataset directory.

The encoders are frozen and deterministic, the output directory follows the
"TRSTEMB1" embedding format, and a standalone validator re-checks written
directories byte by byte.
"""
from .errors import EncoderError, ExtractError, ManifestError
from .extract import extract
from .manifest import SampleManifest, load_manifest
from .validate import validate_directory

__all__ = [
    "EncoderError",
    "ExtractError",
    "ManifestError",
    "SampleManifest",
    "extract",
    "load_manifest",
    "validate_directory",
]
