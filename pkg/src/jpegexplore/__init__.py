"""Explorable JPEG decoding: edit images inside the set that re-compresses
to the same code."""

from .codec import CompressedImage, QuantizedPlane, decode_standard, encode_pipeline
from .consistency import (ConsistencyReport, ConsistentImage, LatentField,
                          chroma_energy_ratio, chroma_pipeline_compare,
                          project_to_consistent, reconstruct, residual_from_latent,
                          verify_consistency)
from .errors import (DimensionMismatchError, InvalidParameterError, JpegExploreError,
                     ParseError, UnsupportedFormatError)
from .jfif import parse_jfif, serialize_jfif

__version__ = "0.1.0"

__all__ = [
    "CompressedImage", "QuantizedPlane", "encode_pipeline", "decode_standard",
    "LatentField", "ConsistentImage", "ConsistencyReport",
    "reconstruct", "residual_from_latent", "verify_consistency",
    "project_to_consistent", "chroma_pipeline_compare", "chroma_energy_ratio",
    "parse_jfif", "serialize_jfif",
    "JpegExploreError", "InvalidParameterError", "DimensionMismatchError",
    "ParseError", "UnsupportedFormatError",
]
