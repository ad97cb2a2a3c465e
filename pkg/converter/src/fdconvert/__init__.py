"""Weight export tooling: torch AlexNet conv1-5 checkpoints to DFW."""

from .convert import (
    ConversionError,
    ConversionReport,
    convert,
    emit_reference,
    load_source,
    reference_conv5,
    reference_image,
)

__all__ = [
    "ConversionError",
    "ConversionReport",
    "convert",
    "emit_reference",
    "load_source",
    "reference_conv5",
    "reference_image",
]

__version__ = "0.1.0"
