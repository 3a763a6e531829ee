"""Synthetic task streams and their on-disk manifest format."""

from .generator import (
    StreamConfigError,
    class_space,
    generate_stream,
    make_domain_transform,
    reorder_stream,
)
from .manifest import ManifestError, load_manifest, write_manifest

__all__ = [
    "StreamConfigError",
    "ManifestError",
    "generate_stream",
    "class_space",
    "make_domain_transform",
    "reorder_stream",
    "write_manifest",
    "load_manifest",
]
